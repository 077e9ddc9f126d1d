"""Simple kriging (conditional Gaussian prediction) with a global neighbourhood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrixError
from .geometry import LocationSet
from .kernel import MaternParams, assemble_covariance, cross_covariance
from .likelihood import ComputeBackend, GaussianField, TrendRecord, prepare_field
from .tiles import Side, cholesky_in_place, solve_triangular

VARIANCE_TOL = 1e-10


@dataclass(frozen=True)
class KrigingResult:
    """Conditional means and variances at the target locations."""

    mean: np.ndarray
    variance: np.ndarray
    trend_added: bool = False


def _coincident(observed: LocationSet, targets: LocationSet):
    index = {}
    for i, key in enumerate(zip(observed.xs.tolist(), observed.ys.tolist())):
        index.setdefault(key, i)
    hits = [
        (t, index[key])
        for t, key in enumerate(zip(targets.xs.tolist(), targets.ys.tolist()))
        if key in index
    ]
    return hits


def krige(
    observed: GaussianField,
    targets: LocationSet,
    params: MaternParams,
    backend: ComputeBackend = ComputeBackend(),
) -> KrigingResult:
    """Zero-mean kriging predictor and its variance at ``targets``.

    The mean is ``c^T Sigma^-1 z`` and the variance ``sigma_sq - c^T Sigma^-1 c``
    for each cross-covariance column ``c``, both obtained from forward solves
    with the tiled Cholesky factor of the observed covariance. A target that
    coincides with an observed site gets that observation and variance 0.

    Raises
    ------
    ValueError
        If targets and observations use different metrics.
    SingularMatrixError
        If the observed covariance is singular, or a variance comes out below
        ``-1e-10 * max(1, sigma_sq)``.
    """
    if targets.metric != observed.locs.metric:
        raise ValueError("targets and observations use different distance metrics")
    obs = prepare_field(observed, backend)
    layout = backend.layout(obs.n)
    cov = assemble_covariance(obs.locs, params, layout, backend.workers, backend.mode)
    try:
        factor = cholesky_in_place(cov, backend.workers)
    except SingularMatrixError as exc:
        exc.params = params
        raise
    cross = cross_covariance(obs.locs, targets, params, workers=backend.workers)
    v = solve_triangular(factor, cross, Side.FORWARD, backend.workers)
    y = solve_triangular(factor, obs.z, Side.FORWARD)
    mean = v.T @ y
    variance = params.sigma_sq - np.einsum("ij,ij->j", v, v)
    tol = VARIANCE_TOL * max(1.0, params.sigma_sq)
    if np.any(variance < -tol):
        worst = float(variance.min())
        raise SingularMatrixError(
            f"kriging variance {worst!r} is negative beyond tolerance; "
            "the observed covariance is numerically singular",
            params=params,
        )
    variance = np.maximum(variance, 0.0)
    for t, i in _coincident(observed.locs, targets):
        mean[t] = observed.z[i]
        variance[t] = 0.0
    return KrigingResult(mean, variance, False)


def krige_with_trend(
    observed_locs: LocationSet,
    observed_z,
    targets: LocationSet,
    params: MaternParams,
    trend,
    backend: ComputeBackend = ComputeBackend(),
) -> KrigingResult:
    """Krige the residuals from a linear trend ``(c, a, b)`` and add the trend back."""
    if not isinstance(trend, TrendRecord):
        trend = TrendRecord(*(float(v) for v in trend))
    z = np.asarray(observed_z, dtype=np.float64) - trend.evaluate(observed_locs)
    res = krige(GaussianField(observed_locs, z, trend), targets, params, backend)
    return KrigingResult(res.mean + trend.evaluate(targets), res.variance, True)
