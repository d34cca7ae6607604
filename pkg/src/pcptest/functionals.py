"""Covariance and correlation functionals of predicted class probabilities.

Per observation, a predicted quad (p00, p01, p10, p11) yields the plug-in
conditional covariance C = p11 - p*q and correlation rho = C / sqrt(p(1-p)
q(1-q)).  Group averages of the covariance are doubly robust; group
averages of the correlation are debiased by a weighted regression of rho
on its two probability-gradient regressors, the intercept being the
debiased estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DataError, weighted_mean

__all__ = [
    "DegenerateMarginalError",
    "PerObsStats",
    "GroupEstimate",
    "FunctionSummary",
    "covariance_from_quad",
    "correlation_from_quad",
    "gradient_regressors",
    "per_obs_stats",
    "group_mean",
    "debiased_group_correlation",
    "summarize",
    "OrthogonalityReport",
    "orthogonality_check",
]

DEGENERATE_TOL = 1e-9
RANK_TOL = 1e-10


class DegenerateMarginalError(ValueError):
    """A marginal probability sits at 0 or 1, so the correlation is undefined."""


def _marginals(quad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    quad = np.asarray(quad, dtype=np.float64)
    p = quad[..., 2] + quad[..., 3]
    q = quad[..., 1] + quad[..., 3]
    return p, q


def covariance_from_quad(quad: np.ndarray) -> float:
    p, q = _marginals(quad)
    return float(np.asarray(quad)[..., 3] - p * q)


def correlation_from_quad(quad: np.ndarray) -> float:
    p, q = _marginals(quad)
    if min(p, 1 - p, q, 1 - q) < DEGENERATE_TOL:
        raise DegenerateMarginalError(
            f"correlation undefined at p={float(p)}, q={float(q)}"
        )
    cov = float(np.asarray(quad)[..., 3] - p * q)
    return cov / math.sqrt(p * (1 - p) * q * (1 - q))


def gradient_regressors(quad: np.ndarray, rho: float) -> tuple[float, float]:
    """The two regressors spanning the eta-gradient of the correlation:
    grad1 = rho (q - 1/2) / (q (1 - q)), grad2 = rho (p - 1/2) / (p (1 - p))."""
    p, q = _marginals(quad)
    if min(p, 1 - p, q, 1 - q) < DEGENERATE_TOL:
        raise DegenerateMarginalError(
            f"gradient regressors undefined at p={float(p)}, q={float(q)}"
        )
    g1 = rho * (q - 0.5) / (q * (1 - q))
    g2 = rho * (p - 0.5) / (p * (1 - p))
    return float(g1), float(g2)


@dataclass(frozen=True)
class PerObsStats:
    """Per-record plug-in statistics; degenerate marginals are flagged and
    their correlation entries zeroed, not silently used."""

    quads: np.ndarray  # (n, 4)
    covariance: np.ndarray  # (n,)
    correlation: np.ndarray  # (n,), 0 where degenerate
    grad1: np.ndarray
    grad2: np.ndarray
    degenerate: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.covariance)


def per_obs_stats(quads: np.ndarray) -> PerObsStats:
    quads = np.asarray(quads, dtype=np.float64)
    p = quads[:, 2] + quads[:, 3]
    q = quads[:, 1] + quads[:, 3]
    cov = quads[:, 3] - p * q
    degenerate = (
        (p < DEGENERATE_TOL)
        | (p > 1 - DEGENERATE_TOL)
        | (q < DEGENERATE_TOL)
        | (q > 1 - DEGENERATE_TOL)
    )
    safe_p = np.where(degenerate, 0.5, p)
    safe_q = np.where(degenerate, 0.5, q)
    denom = np.sqrt(safe_p * (1 - safe_p) * safe_q * (1 - safe_q))
    rho = np.where(degenerate, 0.0, cov / denom)
    g1 = np.where(degenerate, 0.0, rho * (safe_q - 0.5) / (safe_q * (1 - safe_q)))
    g2 = np.where(degenerate, 0.0, rho * (safe_p - 0.5) / (safe_p * (1 - safe_p)))
    return PerObsStats(quads, cov, rho, g1, g2, degenerate)


@dataclass(frozen=True)
class GroupEstimate:
    group_id: str
    kind: str  # "covariance", "naive correlation", "debiased correlation"
    estimate: float
    se: float
    effective_size: float


def _effective_size(w: np.ndarray) -> float:
    return float(np.sum(w) ** 2 / np.sum(w**2))


def group_mean(
    values: np.ndarray,
    weights: np.ndarray,
    group: np.ndarray | None = None,
    group_id: str = "",
    kind: str = "covariance",
) -> GroupEstimate:
    """Weighted group mean with its sandwich standard error
    se^2 = sum w_i^2 (v_i - mean)^2 / (sum w_i)^2."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if group is not None:
        values = values[group]
        weights = weights[group]
    if values.size == 0:
        raise DataError(f"group {group_id!r} is empty")
    est = weighted_mean(values, weights)
    se = math.sqrt(np.sum(weights**2 * (values - est) ** 2)) / np.sum(weights)
    return GroupEstimate(group_id, kind, est, se, _effective_size(weights))


def _wls_intercept(y: np.ndarray, X: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """Weighted least squares; returns intercept and its sandwich SE.
    X must carry the constant in column 0."""
    sw = np.sqrt(w)
    A = X * sw[:, None]
    XtWX = A.T @ A
    XtWy = A.T @ (y * sw)
    theta = np.linalg.solve(XtWX, XtWy)
    u = y - X @ theta
    bread = np.linalg.inv(XtWX)
    meat = (X * (w**2 * u**2)[:, None]).T @ X
    V = bread @ meat @ bread
    return float(theta[0]), float(math.sqrt(max(V[0, 0], 0.0)))


def debiased_group_correlation(
    stats: PerObsStats,
    weights: np.ndarray,
    group: np.ndarray | None = None,
    group_id: str = "",
) -> GroupEstimate:
    """Intercept of the weighted regression of rho on (1, grad1, grad2)
    over the group; heteroskedasticity-robust standard error.

    Degenerate-marginal records are excluded.  If the regressor matrix is
    rank-deficient, grad2 is dropped, then grad1; with both gone this is
    the plain weighted group mean of rho.
    """
    weights = np.asarray(weights, dtype=np.float64)
    idx = np.arange(len(stats)) if group is None else np.asarray(group)
    idx = idx[~stats.degenerate[idx]]
    if len(idx) < 3:
        raise DataError(f"group {group_id!r} has fewer than 3 usable records")
    y = stats.correlation[idx]
    w = weights[idx]
    columns = [np.ones(len(idx)), stats.grad1[idx], stats.grad2[idx]]
    for n_drop in range(3):
        X = np.column_stack(columns[: 3 - n_drop])
        sv = np.linalg.svd(X * np.sqrt(w)[:, None], compute_uv=False)
        if sv[-1] > RANK_TOL * sv[0]:
            est, se = _wls_intercept(y, X, w)
            return GroupEstimate(
                group_id, "debiased correlation", est, se, _effective_size(w)
            )
    raise DataError(f"group {group_id!r}: regressors rank-deficient even without gradients")


@dataclass(frozen=True)
class FunctionSummary:
    mean: float
    dispersion: float
    range: tuple[float, float]


def summarize(values: np.ndarray, weights: np.ndarray) -> FunctionSummary:
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    mean = weighted_mean(values, weights)
    var = float(np.sum(weights * (values - mean) ** 2) / np.sum(weights))
    return FunctionSummary(mean, math.sqrt(max(var, 0.0)), (float(values.min()), float(values.max())))


# ---------------------------------------------------------------------------
# Neyman-orthogonality diagnostics


def _population_statistic(
    kind: str,
    quads0: np.ndarray,
    mu: np.ndarray,
    dp: np.ndarray,
    dq: np.ndarray,
    eps: float,
) -> float:
    """Population value of the group-mean functional when the estimated
    marginals are (p0 + eps*dp, q0 + eps*dq) but outcomes follow the truth.

    The covariance and correlation use the residual form
    E[(c - p_hat)(r - q_hat) | cell] under the true cell distribution, which
    is what the estimating equations average.
    """
    p0 = quads0[:, 2] + quads0[:, 3]
    q0 = quads0[:, 1] + quads0[:, 3]
    c0 = quads0[:, 3] - p0 * q0
    p = p0 + eps * dp
    q = q0 + eps * dq
    # E[(c - p)(r - q)] = C0 + (p0 - p)(q0 - q)
    cov = c0 + (p0 - p) * (q0 - q)
    if kind == "covariance":
        return float(np.sum(mu * cov) / np.sum(mu))
    s = np.sqrt(p * (1 - p) * q * (1 - q))
    rho = cov / s
    if kind == "naive correlation":
        return float(np.sum(mu * rho) / np.sum(mu))
    if kind == "debiased correlation":
        # Regressors are evaluated at the truth: the debiasing claim is that
        # the projection annihilates the first-order nuisance error in the
        # regressand, which lies in the span of the truth-level regressors.
        rho0 = c0 / np.sqrt(p0 * (1 - p0) * q0 * (1 - q0))
        g1 = rho0 * (q0 - 0.5) / (q0 * (1 - q0))
        g2 = rho0 * (p0 - 0.5) / (p0 * (1 - p0))
        X = np.column_stack([np.ones(len(rho)), g1, g2])
        est, _ = _wls_intercept(rho, X, mu)
        return est
    raise DataError(f"unknown statistic kind {kind!r}")


@dataclass(frozen=True)
class OrthogonalityReport:
    kind: str
    step: float
    derivatives: tuple[float, ...]
    max_derivative: float


def orthogonality_check(
    kind: str,
    dgp,
    n_directions: int = 8,
    step: float = 1e-4,
    seed: int = 0,
) -> "OrthogonalityReport":
    """Central-difference directional derivative of the group-mean estimating
    equation in the nuisance probabilities at the truth.

    The derivative is evaluated in population form (exact expectations over
    the DGP's covariate cells), so the report isolates the analytic gradient
    from Monte Carlo noise.  For the debiased correlation the perturbation
    directions are constant shifts of (p, q) across cells, the directions
    whose first-order effect lies in the span of the gradient regressors.

    Returns a dict with the per-direction derivatives and their max
    magnitude.
    """
    from .synth import compute_ground_truth

    truth = compute_ground_truth(dgp)
    quads0 = truth.quads
    mu = truth.cell_prob
    n_cells = len(mu)
    rng = np.random.default_rng(seed)

    derivs = []
    for _ in range(n_directions):
        if kind == "debiased correlation":
            direction = rng.standard_normal(2)
            direction /= np.linalg.norm(direction)
            dp = np.full(n_cells, direction[0])
            dq = np.full(n_cells, direction[1])
        else:
            dp = rng.standard_normal(n_cells)
            dq = rng.standard_normal(n_cells)
            norm = math.sqrt(float(dp @ dp + dq @ dq))
            dp /= norm
            dq /= norm
        up = _population_statistic(kind, quads0, mu, dp, dq, step)
        dn = _population_statistic(kind, quads0, mu, dp, dq, -step)
        derivs.append((up - dn) / (2 * step))

    derivs = np.asarray(derivs)
    return OrthogonalityReport(
        kind, step, tuple(float(v) for v in derivs), float(np.max(np.abs(derivs)))
    )
