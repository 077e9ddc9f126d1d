"""Bound-constrained derivative-free maximisation by quadratic interpolation.

The method keeps ``2n + 1`` interpolation points and a quadratic model of the
objective that interpolates them. Each time the point set changes the model
is refitted so that the change in its Hessian has least Frobenius norm,
which is what lets ``2n + 1`` points (rather than ``(n+1)(n+2)/2``) carry a
useful curvature estimate. A step minimising the model inside the trust
region intersected with the box is then tried; when the model is unreliable
a point is moved to improve the geometry of the interpolation set, chosen to
maximise the modulus of its Lagrange function. The trust-region radius is
bounded below by a resolution ``rho`` that shrinks from ``rho_begin`` to
``rho_end``.

Work happens in coordinates scaled to the unit box. Internally the
objective is minimised (``phi = -f``). Evaluations returning NaN or ``-inf``
count as failed: they never become the best point, and in the model they are
replaced by a value slightly worse than the worst finite value seen.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizationError


@dataclass
class OptimizerConfig:
    """Settings for :func:`maximize`.

    Parameters
    ----------
    lower, upper : array_like
        Box bounds, ``lower <= upper`` elementwise. Coordinates with equal
        bounds are held fixed.
    tol : float
        Absolute objective tolerance. The run stops once a trust-region step
        both gains and is predicted to gain less than ``tol``.
    max_iters : int
        Maximum number of objective evaluations; 0 means no limit.
    initial : array_like, optional
        Starting point; defaults to ``lower``.
    rho_begin, rho_end : float
        Initial and final trust-region resolution, as fractions of the box
        width.
    """

    lower: np.ndarray
    upper: np.ndarray
    tol: float = 1e-4
    max_iters: int = 0
    initial: np.ndarray | None = None
    rho_begin: float = 0.1
    rho_end: float = 1e-7

    def __post_init__(self):
        self.lower = np.array(self.lower, dtype=np.float64).ravel()
        self.upper = np.array(self.upper, dtype=np.float64).ravel()
        if self.lower.shape != self.upper.shape or self.lower.size == 0:
            raise ValueError("lower and upper must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("bounds must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError(f"invalid box: lower {self.lower} exceeds upper {self.upper}")
        if self.initial is None:
            self.initial = self.lower.copy()
        self.initial = np.array(self.initial, dtype=np.float64).ravel()
        if self.initial.shape != self.lower.shape:
            raise ValueError("initial point has the wrong length")
        if np.any(self.initial < self.lower) or np.any(self.initial > self.upper):
            raise ValueError(f"initial point {self.initial} lies outside the box")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iters) < 0:
            raise ValueError(f"max_iters must be nonnegative, got {self.max_iters}")
        self.max_iters = int(self.max_iters)
        if not (0 < self.rho_end <= self.rho_begin <= 0.25):
            raise ValueError("need 0 < rho_end <= rho_begin <= 0.25")


@dataclass
class OptTrace:
    """Record of one optimisation run.

    ``iterations`` counts objective evaluations. ``best_history[k]`` is the
    best value after ``k + 1`` evaluations and is nondecreasing.
    """

    iterations: int = 0
    best_value: float = -math.inf
    best_point: np.ndarray | None = None
    per_eval_times: list = field(default_factory=list)
    points: list = field(default_factory=list)
    values: list = field(default_factory=list)
    best_history: list = field(default_factory=list)
    status: str = "running"

    @property
    def total_time(self) -> float:
        return float(sum(self.per_eval_times))

    def summary(self) -> str:
        return (
            f"{self.iterations} evaluations, best value {self.best_value!r} at "
            f"{None if self.best_point is None else self.best_point.tolist()} ({self.status})"
        )


class _Budget(Exception):
    pass


class _Converged(Exception):
    pass


class _Problem:
    """Objective wrapper in unit-box coordinates that fills the trace."""

    def __init__(self, objective, config: OptimizerConfig, trace: OptTrace):
        self.objective = objective
        self.config = config
        self.trace = trace
        self.free = config.upper > config.lower
        self.lo = config.lower[self.free]
        self.width = (config.upper - config.lower)[self.free]

    def to_full(self, u):
        x = self.config.initial.copy()
        x[self.free] = self.lo + np.clip(u, 0.0, 1.0) * self.width
        return np.clip(x, self.config.lower, self.config.upper)

    def to_unit(self, x):
        return (x[self.free] - self.lo) / self.width

    def __call__(self, u):
        """Return ``phi = -f`` (``+inf`` on failure) at unit point ``u``."""
        cfg, tr = self.config, self.trace
        if cfg.max_iters and tr.iterations >= cfg.max_iters:
            raise _Budget
        x = self.to_full(u)
        t0 = time.perf_counter()
        f = self.objective(x.copy())
        tr.per_eval_times.append(time.perf_counter() - t0)
        f = float(f)
        if math.isnan(f):
            f = -math.inf
        tr.iterations += 1
        tr.points.append(x)
        tr.values.append(f)
        if f > tr.best_value:
            tr.best_value = f
            tr.best_point = x
        tr.best_history.append(tr.best_value)
        return -f


def _model_values(phi):
    """Finite stand-ins for failed evaluations."""
    phi = np.asarray(phi, dtype=np.float64)
    ok = np.isfinite(phi)
    if ok.all():
        return phi
    good = phi[ok]
    spread = float(good.max() - good.min())
    margin = spread if spread > 0 else max(1.0, abs(float(good.max())))
    out = phi.copy()
    out[~ok] = good.max() + margin
    return out


class _Model:
    """Quadratic ``q(s) = c + g.s + s.H.s / 2`` about ``y[kopt]`` plus Lagrange functions."""

    def __init__(self, y, phi, kopt, h_old):
        m, n = y.shape
        self.base = y[kopt].copy()
        s = y - self.base
        scale = float(np.max(np.linalg.norm(s, axis=1)))
        scale = scale if scale > 0 else 1.0
        st = s / scale
        kkt = np.zeros((m + n + 1, m + n + 1))
        kkt[:m, :m] = 0.5 * (st @ st.T) ** 2
        kkt[:m, m] = kkt[m, :m] = 1.0
        kkt[:m, m + 1:] = st
        kkt[m + 1:, :m] = st.T
        try:
            w = np.linalg.inv(kkt)
        except np.linalg.LinAlgError:
            w = np.linalg.pinv(kkt)
        rhs = np.zeros(m + n + 1)
        rhs[:m] = phi - 0.5 * np.einsum("ij,jk,ik->i", s, h_old, s)
        sol = w @ rhs
        lam = sol[:m]
        self.c = sol[m]
        self.g = sol[m + 1:] / scale
        self.h = h_old + (st.T * lam) @ st / scale**2
        self.h = 0.5 * (self.h + self.h.T)
        self.w = w
        self.st = st
        self.scale = scale
        self.m = m

    def value(self, d):
        """Model change ``q(d) - q(0)``."""
        return float(self.g @ d + 0.5 * d @ self.h @ d)

    def lagrange(self, d):
        """Values of all Lagrange functions at ``base + d``."""
        dt = d / self.scale
        vec = np.concatenate([0.5 * (self.st @ dt) ** 2, [1.0], dt])
        return (self.w @ vec)[: self.m]

    def lagrange_quadratic(self, t):
        """Gradient at the base and Hessian of Lagrange function ``t``."""
        col = self.w[:, t]
        lam = col[: self.m]
        g = col[self.m + 1:] / self.scale
        h = (self.st.T * lam) @ self.st / self.scale**2
        return g, h


def _trust_step(g, h, x, delta):
    """Approximately minimise ``g.d + d.H.d / 2`` over ``|d| <= delta``, ``0 <= x + d <= 1``.

    Truncated conjugate gradients on the free variables; a variable that hits
    a bound is fixed there and the iteration restarts.
    """
    n = g.size
    d = np.zeros(n)
    free = np.ones(n, dtype=bool)
    free[(x <= 0.0) & (g > 0.0)] = False
    free[(x >= 1.0) & (g < 0.0)] = False
    for _ in range(n + 1):
        r = -(g + h @ d)
        r[~free] = 0.0
        p = r.copy()
        rr = float(r @ r)
        restart = False
        for _ in range(n):
            if rr <= 1e-30 * max(1.0, float(g @ g)):
                return d
            php = float(p @ h @ p)
            pp = float(p @ p)
            dp = float(d @ p)
            dd = float(d @ d)
            disc = dp * dp + pp * (delta * delta - dd)
            a_ball = (-dp + math.sqrt(max(disc, 0.0))) / pp
            a_box, idx = math.inf, -1
            for i in np.nonzero(free & (p != 0.0))[0]:
                lim = ((1.0 if p[i] > 0 else 0.0) - x[i] - d[i]) / p[i]
                if lim < a_box:
                    a_box, idx = max(lim, 0.0), i
            a_cg = rr / php if php > 0 else math.inf
            a = min(a_cg, a_ball, a_box)
            d = d + a * p
            if a == a_box and a < a_cg:
                d[idx] = (1.0 if p[idx] > 0 else 0.0) - x[idx]
                free[idx] = False
                restart = True
                break
            if a == a_ball:
                return d
            r_new = r - a * (h @ p)
            r_new[~free] = 0.0
            rr_new = float(r_new @ r_new)
            p = r_new + (rr_new / rr) * p
            r, rr = r_new, rr_new
        if not restart:
            return d
        if not free.any():
            return d
    return d


def _box_interval(x, v, delta):
    """Range of ``a`` with ``|a v| <= delta`` and ``0 <= x + a v <= 1``."""
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        return 0.0, 0.0
    lo, hi = -delta / vn, delta / vn
    for xi, vi in zip(x, v):
        if vi > 0:
            lo, hi = max(lo, -xi / vi), min(hi, (1.0 - xi) / vi)
        elif vi < 0:
            lo, hi = max(lo, (1.0 - xi) / vi), min(hi, -xi / vi)
    return lo, hi


def _geometry_step(model: _Model, y, kopt, t, delta):
    """Point within ``delta`` of the best point maximising ``|l_t|``.

    Candidates are the best points on the lines through the current best
    point and every other interpolation point, and a projected step along
    the gradient of ``l_t``.
    """
    x = y[kopt]
    g, h = model.lagrange_quadratic(t)
    best_d, best_val = None, -1.0

    def consider(d):
        nonlocal best_d, best_val
        if d is None or not np.any(d):
            return
        val = abs(float(model.lagrange(d)[t]))
        if val > best_val:
            best_d, best_val = d, val

    dirs = [y[i] - x for i in range(len(y)) if i != kopt]
    if np.any(g):
        dirs.append(g)
    for v in dirs:
        lo, hi = _box_interval(x, v, delta)
        if hi <= lo:
            continue
        gv, vhv = float(g @ v), float(v @ h @ v)
        cands = [lo, hi]
        if vhv != 0.0:
            a_star = -gv / vhv
            if lo < a_star < hi:
                cands.append(a_star)
        for a in cands:
            consider(a * v)
    if best_d is None:
        return None
    return np.clip(x + best_d, 0.0, 1.0) - x


def _initial_points(x0, rho):
    n = x0.size
    y = np.tile(x0, (2 * n + 1, 1))
    for i in range(n):
        up, down = x0[i] + rho <= 1.0, x0[i] - rho >= 0.0
        if up and down:
            a, b = rho, -rho
        elif up:
            a, b = rho, 2.0 * rho
        else:
            a, b = -rho, -2.0 * rho
        y[1 + i, i] = x0[i] + a
        y[1 + n + i, i] = x0[i] + b
    return np.clip(y, 0.0, 1.0)


def _next_rho(rho, rho_end):
    if rho > 250.0 * rho_end:
        return 0.1 * rho
    if rho > 16.0 * rho_end:
        return math.sqrt(rho * rho_end)
    return rho_end


def maximize(objective, config: OptimizerConfig) -> OptTrace:
    """Maximise ``objective`` over the box of ``config``.

    Parameters
    ----------
    objective : callable
        Maps a parameter vector (a fresh copy each call) to a real value.
        NaN and ``-inf`` are treated as failed evaluations.
    config : OptimizerConfig

    Returns
    -------
    OptTrace
        Evaluation history with the best point found. ``status`` is one of
        ``"tol"``, ``"rho"``, ``"max_iters"``.

    Raises
    ------
    OptimizationError
        When no evaluation returns a finite value; the partial trace is
        attached.
    """
    trace = OptTrace()
    prob = _Problem(objective, config, trace)
    try:
        _run(prob, config)
    except _Budget:
        trace.status = "max_iters"
    except _Converged:
        trace.status = "tol"
    if not math.isfinite(trace.best_value):
        trace.status = "failed"
        raise OptimizationError(
            f"objective was never finite in {trace.iterations} evaluations", trace
        )
    return trace


def _run(prob: _Problem, cfg: OptimizerConfig):
    trace = prob.trace
    x0 = prob.to_unit(cfg.initial)
    n = x0.size
    if n == 0:
        prob(x0)
        trace.status = "fixed"
        return
    rho, rho_end = cfg.rho_begin, cfg.rho_end
    delta = rho
    y = _initial_points(x0, rho)
    phi = np.array([prob(p) for p in y])
    if not np.isfinite(phi).any():
        return
    h_old = np.zeros((n, n))

    while True:
        kopt = int(np.argmin(phi))
        model = _Model(y, _model_values(phi), kopt, h_old)
        h_old = model.h
        xopt = y[kopt]
        d = _trust_step(model.g, model.h, xopt, delta)
        dnorm = float(np.linalg.norm(d))
        dist = np.linalg.norm(y - xopt, axis=1)

        if dnorm < 0.5 * rho:
            delta = 0.1 * delta
            if delta <= 1.5 * rho:
                delta = rho
            far = int(np.argmax(dist))
            if dist[far] > 2.0 * rho:
                _replace_by_geometry(prob, model, y, phi, kopt, far, max(rho, min(0.1 * dist[far], 0.5 * delta)))
                continue
            if rho <= rho_end:
                trace.status = "rho"
                return
            rho_old, rho = rho, _next_rho(rho, rho_end)
            delta = max(0.5 * rho_old, rho)
            continue

        xnew = np.clip(xopt + d, 0.0, 1.0)
        d = xnew - xopt
        pred = model.value(d)
        fnew = prob(xnew)
        fopt = phi[kopt]
        if pred < 0:
            ratio = (fnew - fopt) / pred if math.isfinite(fnew) else -1.0
        else:
            ratio = -1.0
        if ratio <= 0.1:
            delta = min(0.5 * delta, dnorm)
        elif ratio <= 0.7:
            delta = max(0.5 * delta, dnorm)
        else:
            delta = max(0.5 * delta, 2.0 * dnorm)
        if delta <= 1.5 * rho:
            delta = rho

        gain = fopt - fnew if math.isfinite(fnew) else -math.inf
        converged = gain < cfg.tol and -pred < cfg.tol

        # choose the interpolation point to drop
        lag = np.abs(model.lagrange(d))
        weight = np.maximum(1.0, (dist / max(delta, rho)) ** 4)
        score = lag * weight
        if not fnew < fopt:
            score[kopt] = -1.0
        t = int(np.argmax(score))
        y[t] = xnew
        phi[t] = fnew
        if converged:
            raise _Converged
        if ratio >= 0.1:
            continue

        kopt = int(np.argmin(phi))
        dist = np.linalg.norm(y - y[kopt], axis=1)
        far = int(np.argmax(dist))
        if dist[far] > max(2.0 * delta, 10.0 * rho):
            model = _Model(y, _model_values(phi), kopt, h_old)
            _replace_by_geometry(prob, model, y, phi, kopt, far, max(rho, min(0.1 * dist[far], 0.5 * delta)))
            continue
        if ratio > 0 or max(delta, dnorm) > rho:
            continue
        if rho <= rho_end:
            trace.status = "rho"
            return
        rho_old, rho = rho, _next_rho(rho, rho_end)
        delta = max(0.5 * rho_old, rho)


def _replace_by_geometry(prob, model, y, phi, kopt, t, delta):
    d = _geometry_step(model, y, kopt, t, delta)
    if d is None or not np.any(d):
        # fall back to a coordinate step of length delta from the best point
        d = np.zeros(y.shape[1])
        i = t % y.shape[1]
        d[i] = delta if y[kopt, i] + delta <= 1.0 else -delta
    xnew = np.clip(y[kopt] + d, 0.0, 1.0)
    y[t] = xnew
    phi[t] = prob(xnew)
