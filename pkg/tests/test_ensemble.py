import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from primevar.cramer_model import CramerConfig, simulate_stats
from primevar.ensemble import (
    EnsembleSpec,
    Scale,
    build_windows,
    check_guard,
    classify_scale,
    compute_stats,
    count_ensemble,
    sigma_w_for,
    statistical_error,
    systematic_error,
    to_sample_point,
)
from primevar.errors import GuardViolation, InvalidArgument
from primevar.prime_engine import table_for


def test_tiling_small():
    wins = build_windows(EnsembleSpec(100, 10, 4))
    assert [w.start for w in wins] == [80, 90, 100, 110]
    assert all(w.length == 10 for w in wins)


def test_span_too_wide():
    with pytest.raises(InvalidArgument):
        EnsembleSpec(50, 100, 2)


def test_tiling_covers_span():
    wins = build_windows(EnsembleSpec(10**6, 10**3, 10))
    assert len(wins) == 10
    assert wins[0].start == 10**6 - 5000 and wins[-1].end == 10**6 + 5000
    assert all(a.end == b.start for a, b in zip(wins, wins[1:]))


@pytest.mark.parametrize("h, m", [(0, 10), (10, 1)])
def test_spec_validation(h, m):
    with pytest.raises(InvalidArgument):
        EnsembleSpec(1000, h, m)


def test_stats_two_counts():
    st_ = compute_stats(EnsembleSpec(1000, 10, 2), [2, 4])
    assert st_.mean_count == 3 and st_.variance_count == 1
    assert st_.normalized_variance_w == pytest.approx(1 / 3, rel=1e-15)
    assert isinstance(st_.mean_count, Fraction)


def test_stats_constant_counts():
    st_ = compute_stats(EnsembleSpec(10**6, 100, 50), [7] * 50)
    assert st_.variance_count == 0 and st_.normalized_variance_w == 0.0


def test_stats_zero_mean_is_undefined_not_zero():
    st_ = compute_stats(EnsembleSpec(10**6, 3, 5), [0] * 5)
    assert st_.normalized_variance_w is None and not st_.w_defined
    assert st_.mean_count == 0 and st_.eps_stat > 0
    with pytest.raises(InvalidArgument):
        sigma_w_for(st_)


def test_stats_wrong_length():
    with pytest.raises(InvalidArgument):
        compute_stats(EnsembleSpec(1000, 10, 3), [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=60), st.randoms())
def test_stats_exact_and_order_invariant(counts, rnd):
    spec = EnsembleSpec(10**8, 10, len(counts))
    ref = compute_stats(spec, counts)
    shuffled = list(counts)
    rnd.shuffle(shuffled)
    again = compute_stats(spec, shuffled)
    assert (again.mean_count, again.variance_count) == (ref.mean_count, ref.variance_count)
    m = len(counts)
    mean = Fraction(sum(counts), m)
    assert ref.variance_count == sum((Fraction(c) - mean) ** 2 for c in counts) / m


def test_delta_method_bernoulli_exact():
    rng = np.random.default_rng(5)
    counts = (rng.random(4000) < 0.07).astype(int)
    q = counts.mean()
    st_ = compute_stats(EnsembleSpec(10**9, 1, 4000), counts)
    assert st_.normalized_variance_w == pytest.approx(1 - q, rel=1e-12)
    assert st_.w_stderr == pytest.approx(math.sqrt(q * (1 - q) / 4000), rel=1e-10)


def test_delta_method_matches_resampling():
    # the standard error should describe the scatter of w over replicas
    rng = np.random.default_rng(11)
    spec = EnsembleSpec(10**9, 500, 2000)
    ws, errs = [], []
    for _ in range(300):
        st_ = compute_stats(spec, rng.poisson(20.0, size=2000))
        ws.append(st_.normalized_variance_w)
        errs.append(st_.w_stderr)
    assert np.std(ws) == pytest.approx(np.mean(errs), rel=0.12)


def _exact_eps_oracle(N, dN):
    mpmath.mp.dps = 50
    N, half = mpmath.mpf(N), mpmath.mpf(dN) / 2
    return float((1 / mpmath.log(N - half) - 1 / mpmath.log(N + half)) * mpmath.log(N))


def test_systematic_first_order_example():
    e = systematic_error(EnsembleSpec(10**12, 10**4, 10**4))
    assert e.first_order == pytest.approx(3.62e-6, rel=1e-3)
    assert abs(e.exact / e.first_order - 1) < 0.01
    assert e.exact == pytest.approx(_exact_eps_oracle(10**12, 10**8), rel=1e-9)


def test_systematic_two_forms_agree():
    e = systematic_error(EnsembleSpec(10**8, 200, 2000))
    assert abs(e.exact / e.first_order - 1) < 1e-3
    assert e.exact == pytest.approx(_exact_eps_oracle(10**8, 4 * 10**5), rel=1e-9)


def test_systematic_vanishes_with_span():
    vals = [systematic_error(EnsembleSpec(10**10, 1, m)).exact for m in (10**4, 10**3, 10**2, 2)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-9


def test_statistical_error_examples():
    assert statistical_error(EnsembleSpec(10**12, 10**4, 10**4)) == pytest.approx(5.26e-4, rel=1e-3)
    assert statistical_error(EnsembleSpec(10**8, 1, 2000)) == pytest.approx(0.096, rel=5e-3)
    vals = [statistical_error(EnsembleSpec(10**12, h, 1000)) for h in (10, 100, 1000, 10**4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_guard():
    assert check_guard(EnsembleSpec(10**12, 10**4, 2000)) < 1e-3
    with pytest.raises(GuardViolation):
        check_guard(EnsembleSpec(10**7, 10**4, 10**3))


@pytest.mark.parametrize(
    "h, N, kind",
    [
        (10**3, 10**10, Scale.MESOSCOPIC),
        (2 * 10**10, 10**10, Scale.MACROSCOPIC),
        (10**10, 10**10, Scale.MACROSCOPIC),
        (25, 10**10, Scale.MICROSCOPIC),
        (1, 10**8, Scale.MICROSCOPIC),
        (200, 10**12, Scale.MESOSCOPIC),
    ],
)
def test_classify_scale(h, N, kind):
    c = classify_scale(h, N)
    assert c.kind is kind
    assert c.h_over_logN == pytest.approx(h / math.log(N))
    assert str(c) == kind.value


def test_sigma_w_poisson_rule():
    spec = EnsembleSpec(10**12, 10**4, 10**4)
    st_ = compute_stats(spec, [3, 5] * 5000)
    st_ = type(st_)(**{**st_.__dict__, "normalized_variance_w": 0.9, "eps_stat": 0.01})
    assert sigma_w_for(st_, "poisson") == pytest.approx(0.018)
    with pytest.raises(InvalidArgument):
        sigma_w_for(st_, "bogus")


def test_sample_point_inv_log():
    spec = EnsembleSpec(10**9, 100, 1000)
    st_ = compute_stats(spec, count_ensemble(spec, table_for(10**9 + 10**5)))
    pt = to_sample_point(st_, spec)
    assert pt.inv_log_N == 1 / math.log(10**9)
    assert pt.w == st_.normalized_variance_w and pt.sigma_w == st_.w_stderr


def test_h1_binomial_closure():
    # one integer per window: w = 1 - q exactly in expectation
    N, m = 10**10, 20000
    spec = EnsembleSpec(N, 1, m)
    st_ = simulate_stats(CramerConfig(spec, rng_seed=3, q_mode="exact"))
    target = 1 - 1 / math.log(N)
    assert abs(st_.normalized_variance_w - target) < 3 * st_.w_stderr


def test_h1_real_primes_closure(big_table):
    spec = EnsembleSpec(10**11, 1, 20000)
    st_ = compute_stats(spec, count_ensemble(spec, big_table))
    assert abs(st_.normalized_variance_w - (1 - 1 / math.log(10**11))) < 3 * st_.w_stderr
