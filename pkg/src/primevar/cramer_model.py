"""Cramér's random model of the primes as a Monte Carlo baseline.

Every integer ``x >= 3`` is declared "prime" independently with probability
``q = 1/log x``. Randomness for window ``i`` of a set comes from its own
stream keyed by ``(seed, N, h, m, i)``, so results do not depend on the order
or process in which windows are simulated.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as sps

from .ensemble import (
    EnsembleSpec,
    EnsembleStats,
    Scale,
    check_guard,
    classify_scale,
    compute_stats,
    count_ensemble,
    sigma_w_for,
)
from .errors import InvalidArgument, ScaleWarning
from .prime_engine import BasePrimeTable

Q_MODES = ("exact", "frozen")


@dataclass(frozen=True)
class CramerConfig:
    spec: EnsembleSpec
    rng_seed: int = 0
    q_mode: str = "exact"

    def __post_init__(self):
        if self.q_mode not in Q_MODES:
            raise InvalidArgument(f"q_mode must be one of {Q_MODES}, got {self.q_mode!r}")
        if not 0 <= self.rng_seed < 2**64:
            raise InvalidArgument("rng_seed must be a 64-bit unsigned integer")
        if self.spec.first_start < 3:
            raise InvalidArgument("Cramér model needs every covered x >= 3")


def window_rng(config: CramerConfig, index: int) -> np.random.Generator:
    spec = config.spec
    seq = np.random.SeedSequence(config.rng_seed, spawn_key=(spec.center_N, spec.h, spec.m, index))
    return np.random.Generator(np.random.PCG64(seq))


def simulate_counts(config: CramerConfig) -> np.ndarray:
    """One model count per window of the configured set.

    In ``exact`` mode each integer gets its own ``q = 1/log x``; in ``frozen``
    mode ``q = 1/log N`` for the whole set and the window sum is drawn
    directly as a binomial.
    """
    spec = config.spec
    h = spec.h
    counts = np.empty(spec.m, dtype=np.int64)
    offsets = np.arange(h, dtype=np.float64)
    q_frozen = 1.0 / spec.log_N
    for i in range(spec.m):
        rng = window_rng(config, i)
        if config.q_mode == "frozen":
            counts[i] = rng.binomial(h, q_frozen)
        else:
            start = spec.first_start + i * h
            q = 1.0 / np.log(start + offsets)
            counts[i] = np.count_nonzero(rng.random(h) < q)
    return counts


def simulate_stats(config: CramerConfig) -> EnsembleStats:
    return compute_stats(config.spec, simulate_counts(config))


@dataclass
class PoissonCheck:
    lam: float
    trials: int
    histogram: dict[int, int]
    expected: dict[int, float]
    chi2: float
    ndf: int
    chi2_pvalue: float
    sample_mean: float
    log_x_range: tuple[float, float] = field(default=(0.0, 0.0))


def _pool_bins(obs: np.ndarray, exp: np.ndarray, min_expected: float):
    """Merge adjacent bins from both tails until each expectation >= min_expected."""
    obs, exp = list(obs), list(exp)
    while len(exp) > 2 and exp[0] < min_expected:
        obs[1] += obs.pop(0)
        exp[1] += exp.pop(0)
    while len(exp) > 2 and exp[-1] < min_expected:
        obs[-2] += obs.pop()
        exp[-2] += exp.pop()
    return np.array(obs, dtype=float), np.array(exp, dtype=float)


def poisson_limit_check(
    lam: float,
    trials: int,
    seed: int = 0,
    log_x_range: tuple[float, float] = (230.0, 460.0),
    min_expected: float = 5.0,
) -> PoissonCheck:
    """Histogram model counts in windows ``(x, x + ceil(lam log x))`` against Poisson(lam).

    ``log x`` is drawn uniformly from ``log_x_range``; the model only reaches
    its Poisson limit for large ``x`` because the binomial correction is of
    order ``1/log x``. Across one window ``q`` changes by a relative
    ``O(lam / x)``, so a single ``q = 1/log x`` per window is used.
    """
    if lam <= 0:
        raise InvalidArgument("lambda must be positive")
    if trials < 1000:
        raise InvalidArgument("need at least 1000 trials")
    lo, hi = log_x_range
    if not 1.0 < lo <= hi:
        raise InvalidArgument(f"bad log_x_range {log_x_range}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    log_x = rng.uniform(lo, hi, size=trials)
    lengths = np.ceil(lam * log_x).astype(np.int64)
    ks = rng.binomial(lengths, 1.0 / log_x)

    dist = sps.poisson(lam)
    k_max = int(math.ceil(lam))
    while dist.pmf(k_max + 1) >= 1e-6:
        k_max += 1
    folded = np.minimum(ks, k_max)
    observed = np.bincount(folded, minlength=k_max + 1)
    exp_mass = dist.pmf(np.arange(k_max + 1))
    exp_mass[-1] = dist.sf(k_max - 1)
    expected = trials * exp_mass

    o, e = _pool_bins(observed, expected, min_expected)
    chi2 = float(np.sum((o - e) ** 2 / e))
    ndf = len(e) - 1
    return PoissonCheck(
        lam=lam,
        trials=trials,
        histogram={k: int(v) for k, v in enumerate(observed)},
        expected={k: float(v) for k, v in enumerate(expected)},
        chi2=chi2,
        ndf=ndf,
        chi2_pvalue=float(sps.chi2.sf(chi2, ndf)),
        sample_mean=float(ks.mean()),
        log_x_range=(lo, hi),
    )


@dataclass(frozen=True)
class VarianceRatio:
    w_real: float
    w_model: float
    sigma_real: float
    sigma_model: float
    ratio_observed: float
    ratio_conjectured: float

    @property
    def divergence_sigma(self) -> float:
        """Significance of ``w_model - w_real`` in combined standard errors."""
        return (self.w_model - self.w_real) / math.hypot(self.sigma_real, self.sigma_model)


def variance_ratio_experiment(
    spec: EnsembleSpec, table: BasePrimeTable, config: CramerConfig
) -> VarianceRatio:
    """Compare ``w`` of real primes and of the model on the same set."""
    check_guard(spec)
    scale = classify_scale(spec.h, spec.center_N)
    if scale.kind is not Scale.MESOSCOPIC:
        warnings.warn(
            f"(N={spec.center_N}, h={spec.h}) is {scale}, not mesoscopic", ScaleWarning, stacklevel=2
        )
    config = replace(config, spec=spec)
    real = compute_stats(spec, count_ensemble(spec, table))
    model = simulate_stats(config)
    if not (real.w_defined and model.w_defined):
        raise InvalidArgument("normalized variance undefined for this set")
    w_real, w_model = real.normalized_variance_w, model.normalized_variance_w
    log_N = spec.log_N
    return VarianceRatio(
        w_real=w_real,
        w_model=w_model,
        sigma_real=sigma_w_for(real),
        sigma_model=sigma_w_for(model),
        ratio_observed=w_model / w_real if w_real else math.inf,
        ratio_conjectured=log_N / math.log(spec.center_N / spec.h),
    )
