"""Sets of ``m`` contiguous intervals of length ``h`` centred on ``N``.

Each set yields one measurement of the normalized variance
``w = var / mean`` of its per-interval prime counts. Means and variances are
kept as exact rationals built from integer power sums, so the result does not
depend on the order in which counts arrive.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GuardViolation, InvalidArgument
from .prime_engine import BasePrimeTable, Window, count_tiled

#: ``h < MESO_FACTOR * log N`` is treated as the microscopic scale.
MESO_FACTOR = 5.0
#: Largest relative systematic error an ensemble may carry.
MAX_EPS_SYS = 1e-3
#: Lower bound on fit uncertainties, keeps weights finite.
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class EnsembleSpec:
    center_N: int
    h: int
    m: int

    def __post_init__(self):
        if self.h < 1:
            raise InvalidArgument(f"interval length must be >= 1, got {self.h}")
        if self.m < 2:
            raise InvalidArgument(f"need at least 2 intervals, got {self.m}")
        if self.span >= 2 * self.center_N:
            raise InvalidArgument(
                f"span m*h={self.span} does not fit above 0 around N={self.center_N}"
            )

    @property
    def span(self) -> int:
        return self.m * self.h

    @property
    def first_start(self) -> int:
        return self.center_N - self.span // 2

    @property
    def log_N(self) -> float:
        return math.log(self.center_N)


class Scale(enum.Enum):
    MICROSCOPIC = "Microscopic"
    MESOSCOPIC = "Mesoscopic"
    MACROSCOPIC = "Macroscopic"


@dataclass(frozen=True)
class ScaleClass:
    kind: Scale
    h_over_logN: float
    logh_over_logN: float

    def __str__(self):
        return self.kind.value


def classify_scale(h: int, N: int, meso_factor: float = MESO_FACTOR) -> ScaleClass:
    if N < 3 or h < 1:
        raise InvalidArgument(f"classify_scale needs N >= 3 and h >= 1, got h={h}, N={N}")
    log_N = math.log(N)
    ratio = h / log_N
    if h >= N:
        kind = Scale.MACROSCOPIC
    elif ratio < meso_factor:
        kind = Scale.MICROSCOPIC
    else:
        kind = Scale.MESOSCOPIC
    return ScaleClass(kind, ratio, math.log(h) / log_N)


class SystematicError(NamedTuple):
    exact: float
    first_order: float


def systematic_error(spec: EnsembleSpec) -> SystematicError:
    """Relative drift of ``lambda = h/log x`` across the span of the set.

    ``exact`` is ``(h/log(N - dN/2) - h/log(N + dN/2)) / lambda`` written with
    ``atanh`` for accuracy at small spans; ``first_order`` is ``m h / (N log N)``.
    """
    N, dN = spec.center_N, spec.span
    lo, hi = N - dN / 2, N + dN / 2
    if lo <= 1:
        raise InvalidArgument(f"set reaches below x=1 (N={N}, span={dN})")
    log_N = math.log(N)
    exact = 2 * math.atanh(dN / (2 * N)) * log_N / (math.log(hi) * math.log(lo))
    return SystematicError(exact, dN / (N * log_N))


def statistical_error(spec: EnsembleSpec) -> float:
    """Poisson estimate ``sqrt(log N / (m h))`` of the relative error of the mean."""
    return math.sqrt(spec.log_N / spec.span)


def check_guard(spec: EnsembleSpec, max_eps_sys: float = MAX_EPS_SYS) -> float:
    """Return the exact systematic error, raising if it exceeds ``max_eps_sys``."""
    eps = systematic_error(spec).exact
    if eps > max_eps_sys:
        raise GuardViolation(
            f"eps_sys={eps:.3g} > {max_eps_sys:g} for N={spec.center_N}, h={spec.h}, m={spec.m}"
        )
    return eps


def build_windows(spec: EnsembleSpec) -> list[Window]:
    start = spec.first_start
    if start < 0:
        raise InvalidArgument(f"set starts below 0 ({start})")
    return [Window(start + i * spec.h, spec.h) for i in range(spec.m)]


@dataclass(frozen=True)
class EnsembleStats:
    m: int
    count_sum: int
    count_sq_sum: int
    mean_count: Fraction
    variance_count: Fraction
    normalized_variance_w: float | None
    w_stderr: float | None
    lambda_expected: float
    eps_sys: float
    eps_stat: float
    scale: ScaleClass

    @property
    def w_defined(self) -> bool:
        return self.normalized_variance_w is not None


def _power_sums(counts: Sequence[int]) -> tuple[int, int, int, int, int]:
    values, mult = np.unique(np.asarray(counts, dtype=np.int64), return_counts=True)
    s = [0, 0, 0, 0, 0]
    for v, k in zip(values.tolist(), mult.tolist()):
        p = 1
        for j in range(5):
            s[j] += k * p
            p *= v
    return tuple(s)


def compute_stats(spec: EnsembleSpec, counts: Sequence[int]) -> EnsembleStats:
    """Exact mean and population variance (divisor ``m``) of the counts.

    ``w_stderr`` is a delta-method standard error of ``w`` from the sample's
    own second to fourth central moments.
    """
    if len(counts) != spec.m:
        raise InvalidArgument(f"expected {spec.m} counts, got {len(counts)}")
    m, s1, s2, s3, s4 = _power_sums(counts)
    mean = Fraction(s1, m)
    mu2 = Fraction(s2, m) - mean**2
    if mean > 0:
        w = mu2 / mean
        mu3 = Fraction(s3, m) - 3 * mean * Fraction(s2, m) + 2 * mean**3
        mu4 = (
            Fraction(s4, m)
            - 4 * mean * Fraction(s3, m)
            + 6 * mean**2 * Fraction(s2, m)
            - 3 * mean**4
        )
        var_w = ((mu4 - mu2**2) - 2 * w * mu3 + w**2 * mu2) / (m * mean**2)
        w_value, w_err = float(w), math.sqrt(max(float(var_w), 0.0))
    else:
        w_value = w_err = None
    return EnsembleStats(
        m=m,
        count_sum=s1,
        count_sq_sum=s2,
        mean_count=mean,
        variance_count=mu2,
        normalized_variance_w=w_value,
        w_stderr=w_err,
        lambda_expected=spec.h / spec.log_N,
        eps_sys=systematic_error(spec).exact,
        eps_stat=statistical_error(spec),
        scale=classify_scale(spec.h, spec.center_N),
    )


def count_ensemble(spec: EnsembleSpec, table: BasePrimeTable) -> np.ndarray:
    """Prime counts of every interval in the set, from one sieve pass."""
    if spec.first_start < 0:
        raise InvalidArgument(f"set starts below 0 ({spec.first_start})")
    return count_tiled(spec.first_start, spec.h, spec.m, table)


@dataclass(frozen=True)
class SamplePoint:
    inv_log_N: float
    w: float
    sigma_w: float
    h: int
    m: int
    N: int = 0


ERROR_MODELS = ("moments", "poisson")


def sigma_w_for(stats: EnsembleStats, error_model: str = "moments") -> float:
    """Fit uncertainty of ``w``.

    ``"moments"`` uses the delta-method error carried by ``stats``;
    ``"poisson"`` is the coarse rule ``2 * eps_stat * w``. Both are floored
    at ``SIGMA_FLOOR``.
    """
    if not stats.w_defined:
        raise InvalidArgument("normalized variance is undefined (zero mean count)")
    if error_model == "moments":
        sigma = stats.w_stderr
    elif error_model == "poisson":
        sigma = 2 * stats.eps_stat * stats.normalized_variance_w
    else:
        raise InvalidArgument(f"unknown error model {error_model!r}")
    return max(sigma, SIGMA_FLOOR)


def to_sample_point(
    stats: EnsembleStats, spec: EnsembleSpec, error_model: str = "moments"
) -> SamplePoint:
    return SamplePoint(
        inv_log_N=1 / spec.log_N,
        w=stats.normalized_variance_w if stats.w_defined else math.nan,
        sigma_w=sigma_w_for(stats, error_model),
        h=spec.h,
        m=spec.m,
        N=spec.center_N,
    )
