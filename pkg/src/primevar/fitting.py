"""Weighted least-squares fits of the normalized variance.

Two stages: a straight line ``w = a - b/log N`` per interval length ``h``,
then the hyperbola ``alpha(h) = (1 + a1 log h) / (a2 + log h)`` through the
points ``alpha = (b - 1)/log h``. Uncertainties are absolute: the input
sigmas are taken at face value and never rescaled by the fit quality.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import mpmath
import numpy as np

from .ensemble import SamplePoint, Scale, classify_scale
from .errors import ConvergenceError, InvalidArgument, RankDeficientError, ScaleWarning

#: gamma_E + log(2 pi) - 1.
MS_CONSTANT = float(mpmath.euler + mpmath.log(2 * mpmath.pi) - 1)
#: A misprint of MS_CONSTANT in circulation; reports flag the difference.
MS_CONSTANT_PRINTED = 1.414509

#: alpha points at or below this h are excluded from the hyperbolic fit.
ALPHA_H_MIN = 100


@dataclass(frozen=True)
class LinearFitResult:
    intercept_a: float
    slope_b: float
    cov: np.ndarray
    chi2: float
    ndf: int
    h: int
    m: int
    fixed_intercept: bool = True

    @property
    def sigma_a(self) -> float:
        return math.sqrt(self.cov[0, 0])

    @property
    def sigma_b(self) -> float:
        return math.sqrt(self.cov[1, 1])


def _weighted_line(x, y, sigma, fix_intercept: bool):
    """Fit ``y = a - b x``; returns ``(a, b, cov, chi2, ndf)``."""
    x, y, sigma = (np.asarray(v, dtype=float) for v in (x, y, sigma))
    if np.any(sigma <= 0):
        raise InvalidArgument("all sigmas must be positive")
    wt = 1.0 / sigma**2
    if fix_intercept:
        sxx = np.sum(wt * x * x)
        if sxx == 0:
            raise RankDeficientError("all abscissas are zero")
        a = 1.0
        b = np.sum(wt * x * (1.0 - y)) / sxx
        cov = np.array([[0.0, 0.0], [0.0, 1.0 / sxx]])
        ndf = len(x) - 1
    else:
        s = np.sum(wt)
        xm = np.sum(wt * x) / s
        dx = x - xm
        sdd = np.sum(wt * dx * dx)
        if sdd <= 1e-14 * s * max(xm * xm, np.finfo(float).tiny):
            raise RankDeficientError("abscissas are degenerate (all equal)")
        slope = np.sum(wt * dx * y) / sdd
        a = np.sum(wt * y) / s - slope * xm
        b = -slope
        var_b = 1.0 / sdd
        cov = np.array([[1.0 / s + xm * xm * var_b, xm * var_b], [xm * var_b, var_b]])
        ndf = len(x) - 2
    resid = (y - (a - b * x)) / sigma
    return float(a), float(b), cov, float(resid @ resid), ndf


def fit_linear(points: Sequence[SamplePoint], fix_intercept: bool = True) -> LinearFitResult:
    """Fit ``w = a - b / log N`` through one (h, m) family of points."""
    if len(points) < 3:
        raise InvalidArgument(f"need at least 3 points, got {len(points)}")
    families = {(p.h, p.m) for p in points}
    if len(families) != 1:
        raise InvalidArgument(f"points mix several (h, m) families: {sorted(families)}")
    (h, m), = families
    a, b, cov, chi2, ndf = _weighted_line(
        [p.inv_log_N for p in points], [p.w for p in points], [p.sigma_w for p in points], fix_intercept
    )
    return LinearFitResult(a, b, cov, chi2, ndf, h, m, fix_intercept)


@dataclass(frozen=True)
class AlphaPoint:
    h: int
    alpha: float
    sigma_alpha: float


def alpha_from_slope(fit: LinearFitResult) -> AlphaPoint:
    if fit.h <= 1:
        raise InvalidArgument("alpha is undefined for h = 1")
    log_h = math.log(fit.h)
    return AlphaPoint(fit.h, (fit.slope_b - 1.0) / log_h, fit.sigma_b / log_h)


def hyperbolic_alpha(log_h, alpha1: float, alpha2: float):
    return (1.0 + alpha1 * log_h) / (alpha2 + log_h)


def hyperbolic_jacobian(log_h, alpha1: float, alpha2: float) -> np.ndarray:
    """Partial derivatives of ``hyperbolic_alpha`` w.r.t. ``(alpha1, alpha2)``, shape (n, 2)."""
    log_h = np.atleast_1d(np.asarray(log_h, dtype=float))
    den = alpha2 + log_h
    return np.column_stack([log_h / den, -(1.0 + alpha1 * log_h) / den**2])


@dataclass
class AlphaFitResult:
    alpha1: float
    alpha2: float
    cov: np.ndarray
    chi2: float
    ndf: int
    iterations: int
    fixed_alpha1: bool = False
    chi2_history: list[float] = field(default_factory=list)

    @property
    def sigma_alpha1(self) -> float:
        return math.sqrt(self.cov[0, 0])

    @property
    def sigma_alpha2(self) -> float:
        return math.sqrt(self.cov[1, 1])

    @property
    def derived_2_minus_a1a2(self) -> float:
        return 2.0 - self.alpha1 * self.alpha2

    @property
    def sigma_derived(self) -> float:
        g = np.array([-self.alpha2, -self.alpha1])
        return math.sqrt(max(float(g @ self.cov @ g), 0.0))


def fit_alpha_hyperbolic(
    points: Sequence[AlphaPoint],
    h_min: int = ALPHA_H_MIN,
    fix_alpha1: bool = False,
    initial: tuple[float, float] = (1.0, 0.5),
    max_iter: int = 200,
    rtol: float = 1e-10,
) -> AlphaFitResult:
    """Levenberg-Marquardt fit of ``alpha(h)`` with absolute point sigmas.

    A step is kept only if it does not raise chi2. Converges when the
    relative parameter change drops below ``rtol``; otherwise raises
    ``ConvergenceError`` carrying the last iterate.
    """
    bad = [p.h for p in points if p.h <= h_min]
    if bad:
        raise InvalidArgument(f"alpha points with h <= {h_min} are not allowed: {bad}")
    if len(points) < 3:
        raise InvalidArgument(f"need at least 3 alpha points, got {len(points)}")
    L = np.log([float(p.h) for p in points])
    y = np.array([p.alpha for p in points])
    s = np.array([p.sigma_alpha for p in points])
    if np.any(s <= 0):
        raise InvalidArgument("all sigma_alpha must be positive")
    free = np.array([not fix_alpha1, True])
    params = np.array([1.0 if fix_alpha1 else initial[0], initial[1]], dtype=float)

    def chi2_of(p):
        if np.any(p[1] + L <= 0):
            return math.inf
        r = (y - hyperbolic_alpha(L, *p)) / s
        return float(r @ r)

    def normal_matrix(p):
        J = hyperbolic_jacobian(L, *p)[:, free] / s[:, None]
        return J.T @ J, J

    chi2 = chi2_of(params)
    history = [chi2]
    mu = 1e-3
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        A, J = normal_matrix(params)
        r = (y - hyperbolic_alpha(L, *params)) / s
        g = J.T @ r
        try:
            step = np.linalg.solve(A + mu * np.diag(np.diag(A)), g)
        except np.linalg.LinAlgError:
            mu *= 10.0
            continue
        # convergence is judged on the undamped step so large mu cannot fake it
        try:
            gn = np.linalg.solve(A, g)
        except np.linalg.LinAlgError:
            gn = step
        small = np.all(np.abs(gn) <= rtol * np.maximum(np.abs(params[free]), 1e-300))
        trial = params.copy()
        trial[free] += step
        trial_chi2 = chi2_of(trial)
        if trial_chi2 <= chi2:
            params, chi2 = trial, trial_chi2
            history.append(chi2)
            mu = max(mu / 10.0, 1e-12)
        else:
            mu *= 10.0
        if small:
            converged = True
            break

    A, _ = normal_matrix(params)
    cov = np.zeros((2, 2))
    try:
        cov[np.ix_(free, free)] = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("alpha points do not constrain the hyperbola") from exc
    result = AlphaFitResult(
        alpha1=float(params[0]),
        alpha2=float(params[1]),
        cov=cov,
        chi2=chi2,
        ndf=len(points) - int(free.sum()),
        iterations=it,
        fixed_alpha1=fix_alpha1,
        chi2_history=history,
    )
    if not converged:
        raise ConvergenceError(f"hyperbolic fit did not converge in {max_iter} iterations", last=result)
    return result


def exact_slope(fit: AlphaFitResult, h: float) -> float:
    """``b(h) = 1 + alpha(h) log h`` with the fitted hyperbola."""
    log_h = math.log(h)
    return 1.0 + hyperbolic_alpha(log_h, fit.alpha1, fit.alpha2) * log_h


def taylor_slope(fit: AlphaFitResult, h: float) -> float:
    """Large-``log h`` expansion ``b(h) = 2 - a1 a2 + a1 log h``."""
    log_h = math.log(h)
    if log_h <= fit.alpha2:
        raise InvalidArgument(f"log h = {log_h:.3g} is not above alpha2 = {fit.alpha2:.3g}")
    return 2.0 - fit.alpha1 * fit.alpha2 + fit.alpha1 * log_h


def _warn_if_not_meso(N, h):
    if h >= 1 and N >= 3 and classify_scale(h, N).kind is not Scale.MESOSCOPIC:
        warnings.warn(f"(N={N}, h={h}) is outside the mesoscopic scale", ScaleWarning, stacklevel=3)


def ms_predict_w(N: float, h: float) -> float:
    """``w = 1 - (log h + C) / log N`` with ``C = gamma_E + log 2pi - 1``."""
    _warn_if_not_meso(N, h)
    return 1.0 - (math.log(h) + MS_CONSTANT) / math.log(N)


def ms_predict_variance(N: float, h: float) -> float:
    """``var = h / (log N)^2 * (log(N/h) - C)``; equals ``lambda * ms_predict_w``."""
    _warn_if_not_meso(N, h)
    log_N = math.log(N)
    return h / log_N**2 * (math.log(N / h) - MS_CONSTANT)


@dataclass(frozen=True)
class ConsistencyResult:
    A: float
    B_slope: float
    cov: np.ndarray
    chi2: float
    ndf: int
    n_points: int

    @property
    def sigma_A(self) -> float:
        return math.sqrt(self.cov[0, 0])

    @property
    def sigma_B(self) -> float:
        return math.sqrt(self.cov[1, 1])


def consistency_regression(all_points: Iterable[tuple[SamplePoint, LinearFitResult]]) -> ConsistencyResult:
    """Regress every ``w`` on ``b(h)/log N`` (each ``b`` from its own family fit)."""
    pairs = list(all_points)
    if len(pairs) < 10:
        raise InvalidArgument(f"need at least 10 points, got {len(pairs)}")
    n_h = len({p.h for p, _ in pairs})
    if n_h < 3:
        raise InvalidArgument(f"need at least 3 distinct h values, got {n_h}")
    x = [fit.slope_b * p.inv_log_N for p, fit in pairs]
    A, B, cov, chi2, ndf = _weighted_line(x, [p.w for p, _ in pairs], [p.sigma_w for p, _ in pairs], False)
    return ConsistencyResult(A, B, cov, chi2, ndf, len(pairs))
