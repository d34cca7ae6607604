"""Weighted categorical datasets: schemas, validation, encoding, splits, folds, groups.

Every observation carries integer modality codes for each categorical
feature, two binary outcomes ``c`` (coverage choice) and ``r`` (at-fault
claim), and a sampling weight ``w`` in (0, 1].  All downstream estimation
is weighted by ``w``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
import yaml

__all__ = [
    "CategoricalSchema",
    "Record",
    "Dataset",
    "DesignMatrix",
    "SplitPlan",
    "FoldAssignment",
    "GroupScheme",
    "DataError",
    "default_schema",
    "load_csv",
    "save_csv",
    "one_hot_encode",
    "encode_rows",
    "decode_row",
    "split",
    "make_folds",
    "weighted_mean",
    "partition",
    "quantile_group_indices",
]

SCHEMA_FILE_VERSION = 1


class DataError(ValueError):
    """Raised on malformed input data or schema violations."""


@dataclass(frozen=True)
class CategoricalSchema:
    """Ordered categorical features; the first listed code of each feature
    is the reference modality for dummy coding."""

    features: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        names = [name for name, _ in self.features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        for name, codes in self.features:
            if len(codes) < 2:
                raise DataError(f"feature {name!r} needs at least 2 modalities")
            if len(set(codes)) != len(codes):
                raise DataError(f"feature {name!r} has duplicate modality codes")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.features)

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_design_columns(self) -> int:
        """Constant column plus (modalities - 1) dummies per feature."""
        return 1 + sum(len(codes) - 1 for _, codes in self.features)

    @property
    def n_cells(self) -> int:
        n = 1
        for _, codes in self.features:
            n *= len(codes)
        return n

    def codes_of(self, feature: str) -> tuple[int, ...]:
        for name, codes in self.features:
            if name == feature:
                return codes
        raise DataError(f"unknown feature {feature!r}")

    def feature_index(self, feature: str) -> int:
        for i, (name, _) in enumerate(self.features):
            if name == feature:
                return i
        raise DataError(f"unknown feature {feature!r}")

    def cells(self) -> Iterator[tuple[int, ...]]:
        """Iterate over all covariate cells in row-major order."""
        def rec(prefix: tuple[int, ...], rest):
            if not rest:
                yield prefix
                return
            _, codes = rest[0]
            for code in codes:
                yield from rec(prefix + (code,), rest[1:])

        yield from rec((), list(self.features))

    def fingerprint(self) -> str:
        payload = repr(self.features).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_yaml(self, path: str) -> None:
        doc = {
            "version": SCHEMA_FILE_VERSION,
            "features": [
                {"name": name, "codes": list(codes)} for name, codes in self.features
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)

    @classmethod
    def from_yaml(cls, path: str) -> "CategoricalSchema":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict) or doc.get("version") != SCHEMA_FILE_VERSION:
            raise DataError(f"unsupported schema file version in {path}")
        feats = tuple(
            (str(f["name"]), tuple(int(c) for c in f["codes"])) for f in doc["features"]
        )
        return cls(feats)


def default_schema() -> CategoricalSchema:
    """Eight-feature car insurance schema (49 design columns)."""
    return CategoricalSchema(
        (
            ("car_age", tuple(range(12))),
            ("car_group", tuple(range(1, 7))),
            ("insuree_age", tuple(range(9))),
            ("profession", tuple(range(1, 9))),
            ("usage", tuple(range(1, 5))),
            ("region", tuple(range(1, 11))),
            ("zone", tuple(range(2, 7))),
            ("gender", (0, 1)),
        )
    )


@dataclass(frozen=True)
class Record:
    covariates: tuple[int, ...]
    c: int
    r: int
    w: float


@dataclass(frozen=True)
class Dataset:
    """Immutable column store of validated records."""

    schema: CategoricalSchema
    covariates: np.ndarray  # (n, n_features) int
    c: np.ndarray  # (n,) int
    r: np.ndarray  # (n,) int
    w: np.ndarray  # (n,) float

    def __post_init__(self) -> None:
        n = len(self.c)
        if n == 0:
            raise DataError("dataset must be nonempty")
        if self.covariates.shape != (n, self.schema.n_features):
            raise DataError("covariate array shape does not match schema")
        if len(self.r) != n or len(self.w) != n:
            raise DataError("column lengths differ")
        for j, (name, codes) in enumerate(self.schema.features):
            bad = ~np.isin(self.covariates[:, j], codes)
            if bad.any():
                row = int(np.nonzero(bad)[0][0])
                raise DataError(
                    f"row {row + 1}: unknown modality code "
                    f"{self.covariates[row, j]} for feature {name!r}"
                )
        for col, arr in (("c", self.c), ("r", self.r)):
            bad = ~np.isin(arr, (0, 1))
            if bad.any():
                row = int(np.nonzero(bad)[0][0])
                raise DataError(f"row {row + 1}: column {col} must be 0 or 1")
        bad = ~((self.w > 0.0) & (self.w <= 1.0))
        if bad.any():
            row = int(np.nonzero(bad)[0][0])
            raise DataError(f"row {row + 1}: column w must lie in (0, 1]")
        for arr in (self.covariates, self.c, self.r, self.w):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.c)

    @property
    def n(self) -> int:
        return len(self.c)

    @classmethod
    def from_records(
        cls, schema: CategoricalSchema, records: Sequence[Record]
    ) -> "Dataset":
        cov = np.array([rec.covariates for rec in records], dtype=np.int64)
        c = np.array([rec.c for rec in records], dtype=np.int64)
        r = np.array([rec.r for rec in records], dtype=np.int64)
        w = np.array([rec.w for rec in records], dtype=np.float64)
        return cls(schema, cov, c, r, w)

    def records(self) -> Iterator[Record]:
        for i in range(self.n):
            yield Record(
                tuple(int(v) for v in self.covariates[i]),
                int(self.c[i]),
                int(self.r[i]),
                float(self.w[i]),
            )

    def take(self, idx: np.ndarray | Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.schema,
            self.covariates[idx].copy(),
            self.c[idx].copy(),
            self.r[idx].copy(),
            self.w[idx].copy(),
        )

    def class_labels(self) -> np.ndarray:
        """4-way class index 2*c + r, ordering (00, 01, 10, 11)."""
        return (2 * self.c + self.r).astype(np.int64)


@dataclass(frozen=True)
class DesignMatrix:
    """Dummy-coded design: leading constant, then per-feature dummy blocks
    omitting each feature's reference (first-listed) modality."""

    rows: np.ndarray  # (n, width) float
    column_names: tuple[str, ...]
    feature_columns: dict[str, tuple[int, ...]] = field(repr=False, default_factory=dict)

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


def _design_layout(schema: CategoricalSchema):
    names = ["const"]
    feature_columns: dict[str, tuple[int, ...]] = {}
    col = 1
    for name, codes in schema.features:
        cols = []
        for code in codes[1:]:
            names.append(f"{name}={code}")
            cols.append(col)
            col += 1
        feature_columns[name] = tuple(cols)
    return tuple(names), feature_columns


def encode_rows(schema: CategoricalSchema, covariates: np.ndarray) -> np.ndarray:
    """Dummy-code covariate rows (any array of modality codes) to design rows."""
    covariates = np.asarray(covariates)
    if covariates.ndim == 1:
        covariates = covariates[None, :]
    n = covariates.shape[0]
    X = np.zeros((n, schema.n_design_columns))
    X[:, 0] = 1.0
    col = 1
    for j, (_, codes) in enumerate(schema.features):
        for code in codes[1:]:
            X[:, col] = covariates[:, j] == code
            col += 1
    return X


def one_hot_encode(d: Dataset) -> DesignMatrix:
    names, feature_columns = _design_layout(d.schema)
    X = encode_rows(d.schema, d.covariates)
    return DesignMatrix(X, names, feature_columns)


def decode_row(schema: CategoricalSchema, row: np.ndarray) -> tuple[int, ...]:
    """Invert a single design row back to modality codes."""
    if row[0] != 1.0:
        raise DataError("design row lacks the leading constant")
    out = []
    col = 1
    for _, codes in schema.features:
        block = row[col : col + len(codes) - 1]
        hits = np.nonzero(block == 1.0)[0]
        if len(hits) > 1:
            raise DataError("design row has multiple dummies set within a feature")
        out.append(codes[0] if len(hits) == 0 else codes[1 + hits[0]])
        col += len(codes) - 1
    return tuple(int(v) for v in out)


# ---------------------------------------------------------------------------
# CSV input/output


def _parse_int(value: str, row: int, col: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"row {row}: column {col} has non-integer value {value!r}")


def load_csv(path: str, schema: CategoricalSchema) -> Dataset:
    """Load and validate a comma-separated file with one column per feature
    plus ``c``, ``r``, ``w``.  Row numbers in error messages count data rows
    starting at 1."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        expected = set(schema.feature_names) | {"c", "r", "w"}
        missing = expected - set(header)
        if missing:
            raise DataError(f"{path}: missing column(s) {sorted(missing)}")
        extra = set(header) - expected
        if extra:
            raise DataError(f"{path}: unexpected column(s) {sorted(extra)}")
        pos = {name: header.index(name) for name in header}

        cov_rows, cs, rs, ws = [], [], [], []
        for i, cells in enumerate(reader, start=1):
            if len(cells) != len(header):
                raise DataError(f"row {i}: expected {len(header)} fields")
            if any(cell.strip() == "" for cell in cells):
                raise DataError(f"row {i}: missing value")
            cov_rows.append(
                [_parse_int(cells[pos[name]], i, name) for name in schema.feature_names]
            )
            c = _parse_int(cells[pos["c"]], i, "c")
            r = _parse_int(cells[pos["r"]], i, "r")
            if c not in (0, 1):
                raise DataError(f"row {i}: column c must be 0 or 1, got {c}")
            if r not in (0, 1):
                raise DataError(f"row {i}: column r must be 0 or 1, got {r}")
            try:
                w = float(cells[pos["w"]])
            except ValueError:
                raise DataError(f"row {i}: column w has non-numeric value")
            if not (0.0 < w <= 1.0):
                raise DataError(f"row {i}: column w must lie in (0, 1], got {w}")
            cs.append(c)
            rs.append(r)
            ws.append(w)
        if not cov_rows:
            raise DataError(f"{path}: no data rows")

    # Validate modality codes through the Dataset constructor.
    return Dataset(
        schema,
        np.array(cov_rows, dtype=np.int64),
        np.array(cs, dtype=np.int64),
        np.array(rs, dtype=np.int64),
        np.array(ws, dtype=np.float64),
    )


def save_csv(d: Dataset, path: str) -> None:
    """Write a dataset in the load_csv format.  Weights use shortest-repr
    float formatting, so save/load round-trips are bit-identical."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(d.schema.feature_names) + ["c", "r", "w"])
        for i in range(d.n):
            writer.writerow(
                [int(v) for v in d.covariates[i]]
                + [int(d.c[i]), int(d.r[i]), repr(float(d.w[i]))]
            )


# ---------------------------------------------------------------------------
# Splits and folds


@dataclass(frozen=True)
class SplitPlan:
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self) -> None:
        if any(not (0.0 < f < 1.0) for f in self.fractions):
            raise DataError("split fractions must lie in (0, 1)")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError("split fractions must sum to 1")


def split_indices(n: int, plan: SplitPlan) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffled partition with cuts at floor(n*f1) and floor(n*(f1+f2));
    the remainder goes to the test block."""
    rng = np.random.default_rng(plan.seed)
    perm = rng.permutation(n)
    f1, f2, _ = plan.fractions
    cut1 = math.floor(n * f1)
    cut2 = math.floor(n * (f1 + f2))
    parts = perm[:cut1], perm[cut1:cut2], perm[cut2:]
    if any(len(p) == 0 for p in parts):
        raise DataError(f"split of n={n} at {plan.fractions} leaves an empty part")
    return parts


def split(d: Dataset, plan: SplitPlan) -> tuple[Dataset, Dataset, Dataset]:
    tr, va, te = split_indices(d.n, plan)
    return d.take(tr), d.take(va), d.take(te)


@dataclass(frozen=True)
class FoldAssignment:
    K: int
    fold_of: np.ndarray  # (n,) int in [0, K)
    seed: int

    def __post_init__(self) -> None:
        self.fold_of.setflags(write=False)

    def fold_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of == k)[0]

    def complement_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.fold_of != k)[0]


def make_folds(d: Dataset, K: int, seed: int = 0) -> FoldAssignment:
    """Balanced random folds; the first n % K folds get one extra record."""
    n = d.n
    if K < 2:
        raise DataError("K must be at least 2")
    if K > n:
        raise DataError(f"cannot make {K} folds from {n} records")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, K)
    start = 0
    for k in range(K):
        size = base + (1 if k < extra else 0)
        fold_of[perm[start : start + size]] = k
        start += size
    return FoldAssignment(K, fold_of, seed)


# ---------------------------------------------------------------------------
# Weighted statistics and grouping


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.size == 0:
        raise DataError("weighted_mean of empty input")
    if np.any(weights <= 0):
        raise DataError("weights must be positive")
    return float(np.sum(weights * values) / np.sum(weights))


@dataclass(frozen=True)
class GroupScheme:
    """How to carve a dataset into disjoint groups.

    kind: "by-modality" or "by-quartile" (both need ``feature``), or
    "by-statistic" with ``values`` (one real per record) and ``n_groups``.
    """

    kind: str
    feature: str | None = None
    values: np.ndarray | None = None
    n_groups: int = 4


def quantile_group_indices(
    values: np.ndarray, weights: np.ndarray, n_groups: int
) -> list[np.ndarray]:
    """Split records into ``n_groups`` at the weighted quantiles of ``values``.

    Records are stably sorted by (value, index) and each record is assigned
    to the quantile bin containing the midpoint of its own weight mass, so
    ties are broken by index and groups stay near-balanced even when the
    values are degenerate.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = len(values)
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order])
    total = cw[-1]
    mid = (cw - weights[order] / 2.0) / total
    cuts = np.arange(1, n_groups) / n_groups
    bin_of_sorted = np.searchsorted(cuts, mid, side="left")
    groups = [order[bin_of_sorted == g] for g in range(n_groups)]
    for g, idx in enumerate(groups):
        if len(idx) == 0:
            raise DataError(f"quantile group {g + 1} of {n_groups} is empty")
    return [np.sort(idx) for idx in groups]


def partition(d: Dataset, scheme: GroupScheme) -> list[np.ndarray]:
    """Disjoint, covering index sets for the requested grouping."""
    if scheme.kind == "by-modality":
        if scheme.feature is None:
            raise DataError("by-modality grouping needs a feature")
        j = d.schema.feature_index(scheme.feature)
        col = d.covariates[:, j]
        observed = [code for code in d.schema.codes_of(scheme.feature) if np.any(col == code)]
        return [np.nonzero(col == code)[0] for code in observed]

    if scheme.kind == "by-quartile":
        if scheme.feature is None:
            raise DataError("by-quartile grouping needs a feature")
        j = d.schema.feature_index(scheme.feature)
        codes = d.schema.codes_of(scheme.feature)
        col = d.covariates[:, j]
        # Weighted CDF over modality codes in schema (ascending) order; a
        # modality belongs wholly to the quartile containing its CDF midpoint.
        sorted_codes = sorted(codes)
        masses = np.array([d.w[col == code].sum() for code in sorted_codes])
        total = masses.sum()
        cdf = np.cumsum(masses)
        mids = (cdf - masses / 2.0) / total
        bin_of_code = {
            code: int(np.searchsorted([0.25, 0.5, 0.75], m, side="left"))
            for code, m in zip(sorted_codes, mids)
            if masses[sorted_codes.index(code)] > 0
        }
        groups = []
        for g in range(4):
            in_g = [code for code, b in bin_of_code.items() if b == g]
            idx = np.nonzero(np.isin(col, in_g))[0]
            if len(idx) == 0:
                raise DataError(f"car-quartile group {g + 1} is empty")
            groups.append(idx)
        return groups

    if scheme.kind == "by-statistic":
        if scheme.values is None:
            raise DataError("by-statistic grouping needs per-record values")
        return quantile_group_indices(scheme.values, d.w, scheme.n_groups)

    raise DataError(f"unknown group scheme kind {scheme.kind!r}")
