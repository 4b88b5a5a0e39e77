import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import mp_hitting_cdf, mp_transition_row
from traploc.errors import DomainError, RangeOverflowError
from traploc.harness import planted_instance
from traploc.landscape import Landscape
from traploc.localise import balance_bounds, favourable_event
from traploc.logreal import LogMagnitude
from traploc.quenched import (
    LN_RANGE_MAX,
    balance_time,
    balance_time_segment,
    build,
    distribution_at,
    expected_hitting,
    favoured_mass,
    hitting_cdf,
    make_segment,
    mc_endpoints,
    mc_hitting,
    mixing_time_restricted,
    restricted_mixing_time,
    stationary,
    transition_matrix,
    uniformization,
)
from traploc.tails import TailModel

LN2 = math.log(2.0)
G055 = TailModel("stretched-log", 0.55)


def _random_ln_sigma(rng, n_max=50, ln_range=math.log(1e6)):
    n = int(rng.integers(2, n_max + 1))
    return rng.uniform(0.0, ln_range, n)


# ------------------------------------------------------------ closed forms

def test_two_site_spectrum():
    dec = build([0.0, 0.0])
    assert dec.eigenvalues == pytest.approx([0.0, -1.0], abs=1e-15)
    assert dec.eigenvalues[0] == 0.0


def test_zero_mode_is_root_sigma():
    dec = build(np.log([1.0, 2.0, 1.0]))
    v = dec.eigenvectors[:, 0]
    v = v / v[0]
    assert v == pytest.approx([1.0, math.sqrt(2.0), 1.0], rel=1e-14)
    assert dec.eigenvalues[0] == 0.0 and np.all(dec.eigenvalues[1:] < 0)


def test_symmetrised_off_diagonal_is_exact():
    s = np.array([1.0, 4.0, 9.0, 0.25])
    seg = make_segment(np.log(s))
    _, off = seg.symmetric_tridiagonal()
    # traps are divided by the time scale, so rates are multiplied by it
    scale = math.exp(seg.ln_time_scale)
    assert off / scale == pytest.approx(0.5 / np.sqrt(s[:-1] * s[1:]), rel=1e-15)


def test_generator_rows_sum_to_zero():
    seg = make_segment(np.log([1.0, 3.0, 0.5, 7.0]))
    diag, off = seg.symmetric_tridiagonal()
    # off-diagonals of Q are off * sqrt(sigma_y / sigma_x)
    r = np.sqrt(seg.sigma)
    up = off * r[1:] / r[:-1]
    dn = off * r[:-1] / r[1:]
    rows = diag.copy()
    rows[:-1] += up
    rows[1:] += dn
    assert np.all(np.abs(rows) <= 1e-14 * np.abs(diag))


def test_two_site_law_at_ln2():
    p = distribution_at(build([0.0, 0.0]), 0, LN2).probs
    assert p[0] == pytest.approx(0.75, abs=1e-15)


def test_law_at_time_zero_is_indicator():
    dec = build(np.log([1.0, 5.0, 2.0, 3.0]))
    assert distribution_at(dec, 2, 0.0).probs.tolist() == [0.0, 0.0, 1.0, 0.0]


def test_law_at_large_time_is_stationary():
    ln = np.log([1.0, 5.0, 2.0, 3.0])
    dec = build(ln)
    p = distribution_at(dec, 0, 1e6).probs
    assert np.max(np.abs(p - np.exp(ln) / np.exp(ln).sum())) <= 1e-8


def test_stationary_law_exact():
    ln = np.array([1000.0, 1001.0, 999.5])
    pi = stationary(make_segment(ln))
    ref = np.exp(ln - 1000.0) / np.exp(ln - 1000.0).sum()
    assert np.max(np.abs(pi - ref)) <= 1e-12


def test_expected_hitting_examples():
    assert expected_hitting([0.0, 0.0], 0, 1, 1).is_zero
    assert math.exp(expected_hitting([math.log(3.0)], 0, 0, 1).ln_value) == pytest.approx(6.0, rel=1e-15)
    assert math.exp(expected_hitting([0.0] * 3, 0, 0, 3).ln_value) == pytest.approx(12.0, rel=1e-15)
    with pytest.raises(DomainError):
        expected_hitting([0.0] * 3, 0, 4, 3)


def test_expected_hitting_monte_carlo():
    rng = np.random.default_rng(1)
    mc = mc_hitting([0.0] * 3, 0, 3, rng, 10**5)
    se = mc.times.std(ddof=1) / math.sqrt(mc.times.size)
    assert abs(mc.times.mean() - 12.0) <= 3 * se


def test_hitting_cdf_single_clock():
    dec = build([0.0, 0.0], 0, "reflecting", "absorbing")
    assert hitting_cdf(dec, 0, 2 * LN2) == pytest.approx(0.5, abs=1e-15)
    assert hitting_cdf(dec, 0, 0.0) == 0.0


def test_hitting_cdf_monotone():
    rng = np.random.default_rng(3)
    ln = rng.uniform(0, 8, 12)
    dec = build(ln, 0, "reflecting", "absorbing")
    vals = [hitting_cdf(dec, 0, LogMagnitude(x)) for x in np.linspace(-2, 20, 80)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    # strict growth wherever the value is resolvable in double precision
    assert all(b > a for a, b in zip(vals, vals[1:]) if 1e-12 < a and b < 1.0 - 1e-12)
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_balance_time_single_clock():
    bt = balance_time_segment([0.0, 0.0], 2)
    assert bt.t == pytest.approx(2 * LN2, rel=1e-12)


def test_two_site_mixing_time():
    for eps in (0.5, 0.1, 1e-3):
        mix = mixing_time_restricted([0.0, 0.0], [0], eps)
        assert mix.t == pytest.approx(math.log(1 / eps), rel=1e-9)
    assert mixing_time_restricted([0.0, 0.0], [0], 1.5).t == 0.0


def test_range_guard():
    with pytest.raises(RangeOverflowError):
        build([0.0, LN_RANGE_MAX + 1.0])
    with pytest.raises(DomainError):
        build([0.0])
    with pytest.raises(DomainError):
        build([0.0, math.nan])
    # an absorbing end leaves the trap there out of the range check
    build([0.0, 10.0, LN_RANGE_MAX + 50.0], 0, "reflecting", "absorbing")


# ------------------------------------------------------------ solver quality

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["reflecting", "absorbing"]), st.sampled_from(["reflecting", "absorbing"]))
def test_decomposition_quality(seed, left, right):
    ln = _random_ln_sigma(np.random.default_rng(seed))
    if left == right == "absorbing" and ln.size < 3:
        ln = np.append(ln, 1.0)
    dec = build(ln, 0, left, right)
    chk = dec.check()
    assert chk["relative_residual"] <= 1e-10
    assert chk["orthogonality"] <= 1e-10
    assert np.all(np.diff(dec.eigenvalues) <= 0) and np.all(dec.eigenvalues <= 0)
    assert (dec.eigenvalues[0] == 0.0) == (left == right == "reflecting")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(min_value=-5, max_value=25))
def test_law_structure(seed, ln_t):
    rng = np.random.default_rng(seed)
    ln = _random_ln_sigma(rng)
    dec = build(ln)
    P = transition_matrix(dec, LogMagnitude(ln_t))
    assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-10
    # detailed balance sigma_x p(x, y) = sigma_y p(y, x), relative to the larger flux
    w = np.exp(ln - ln.max())
    F = w[:, None] * P
    assert np.max(np.abs(F - F.T)) <= 1e-8 * np.max(F)
    # Chapman-Kolmogorov
    P1 = transition_matrix(dec, LogMagnitude(ln_t - LN2))
    assert np.max(np.abs(P1 @ P1 - P)) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(min_value=0.1, max_value=30.0))
def test_spectral_matches_uniformization(seed, t):
    rng = np.random.default_rng(seed)
    ln = rng.uniform(0.0, math.log(10.0), int(rng.integers(2, 21)))
    start = int(rng.integers(0, ln.size))
    p = distribution_at(build(ln), start, t).probs
    assert np.max(np.abs(p - uniformization(ln, start, t))) <= 1e-9


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(min_value=0.0, max_value=40.0))
def test_spectral_matches_high_precision(seed, ln_t):
    # graded traps spanning up to e^30: the float law against a 60+ digit eigensolve
    rng = np.random.default_rng(seed)
    ln = rng.uniform(0.0, 30.0, int(rng.integers(2, 8)))
    start = int(rng.integers(0, ln.size))
    p = distribution_at(build(ln), start, LogMagnitude(ln_t)).probs
    ref = mp_transition_row(ln, start, math.exp(ln_t))
    assert np.max(np.abs(p - ref)) <= 1e-10


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(min_value=0.0, max_value=30.0))
def test_hitting_cdf_matches_high_precision(seed, ln_t):
    rng = np.random.default_rng(seed)
    ln = rng.uniform(0.0, 20.0, int(rng.integers(2, 8)))
    dec = build(ln, 0, "reflecting", "absorbing")
    assert hitting_cdf(dec, 0, LogMagnitude(ln_t)) == pytest.approx(mp_hitting_cdf(ln, 0, math.exp(ln_t)), abs=1e-10)


def test_reflecting_segment_with_tiny_gap():
    # the smallest nonzero rate sits 165 decades below the largest
    ln = Landscape(TailModel("stretched-log", 0.3), 1).ln_traps(0, 3000)
    if np.ptp(ln) > LN_RANGE_MAX:
        pytest.skip("seed exceeds the admissible range")
    dec = build(ln)
    assert dec.eigenvalues[0] == 0.0 and dec.eigenvalues[1] < 0
    chk = dec.check()
    assert chk["relative_residual"] <= 1e-10 and chk["orthogonality"] <= 1e-10


# ------------------------------------------------------------ closed-form bounds

def _bound_instances(n_inst, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n_inst):
        ln = rng.uniform(0.0, math.log(1e6), int(rng.integers(2, 12)))
        x = int(rng.integers(0, ln.size - 1))
        yield ln, x


def test_upper_hitting_bound():
    # P(tau_b >= t) <= 2 (b - x) sum_{z<b} sigma_z / t
    for ln, x in _bound_instances(200, 10):
        b = ln.size - 1
        dec = build(ln, 0, "reflecting", "absorbing")
        total = float(np.exp(ln[:b]).sum())
        for ln_t in np.linspace(0, 20, 15):
            t = math.exp(ln_t)
            exact = 1.0 - hitting_cdf(dec, x, t)
            assert exact <= 2.0 * (b - x) * total / t + 1e-12


def test_lower_hitting_bound():
    # P(tau_b <= t) <= t / (2 (b - z) sigma_z) for each z in [x, b)
    for ln, x in _bound_instances(200, 11):
        b = ln.size - 1
        dec = build(ln, 0, "reflecting", "absorbing")
        z = np.arange(x, b)
        for ln_t in np.linspace(-3, 18, 15):
            t = math.exp(ln_t)
            bound = float(np.min(t / (2.0 * (b - z) * np.exp(ln[x:b]))))
            assert hitting_cdf(dec, x, t) <= bound + 1e-12


def test_occupation_ratio_bound():
    # P_x(X_t in S) <= sum_{z in S} sigma_z / sigma_x for the walk started at x
    for ln, x in _bound_instances(200, 12):
        dec = build(ln)
        S = [z for z in range(ln.size) if z != x]
        bound = np.exp(ln[S] - ln[x]).sum()
        for ln_t in np.linspace(-3, 18, 15):
            p = distribution_at(dec, x, LogMagnitude(ln_t)).probs
            assert p[S].sum() <= bound + 1e-12


# ------------------------------------------------------------ Monte Carlo oracles

def test_deep_trap_monte_carlo():
    ln = np.log([1.0, 1e6, 1.0, 1.0])
    exact = distribution_at(build(ln), 0, 1e3).at(1)
    pos = mc_endpoints(ln, 0, 1e3, np.random.default_rng(7), 10**4)
    emp = float(np.mean(pos == 1))
    se = math.sqrt(exact * (1 - exact) / pos.size)
    assert abs(emp - exact) <= 3 * se


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_hitting_monte_carlo(seed):
    rng = np.random.default_rng(100 + seed)
    ln = rng.uniform(0.0, 2.0, int(rng.integers(3, 9)))
    b = ln.size - 1
    dec = build(ln, 0, "reflecting", "absorbing")
    mean = math.exp(expected_hitting(ln, 0, 0, b).ln_value)
    t = 0.7 * mean
    exact = hitting_cdf(dec, 0, t)
    mc = mc_hitting(ln, 0, b, rng, 10**5)
    emp = float(np.mean(mc.times <= t))
    assert abs(emp - exact) <= 3 * math.sqrt(exact * (1 - exact) / 10**5)


def test_occupation_time_is_exponential():
    rng = np.random.default_rng(21)
    ln = np.log([1.0, 2.0, 0.5, 3.0, 1.0, 1.0])
    b, z = 5, 2
    mc = mc_hitting(ln, 0, b, rng, 10**4, occupation_site=z)
    scale = 2.0 * (b - z) * math.exp(ln[z])
    assert stats.kstest(mc.occupation, "expon", args=(0, scale)).statistic <= 0.03


def test_half_line_monte_carlo_grows_landscape():
    src = Landscape(TailModel("stretched-log", 0.3), 4)
    pos = mc_endpoints(src, 0, 50.0, np.random.default_rng(0), 200)
    assert pos.min() >= 0


# ------------------------------------------------------------ favoured site

def test_favoured_mass_small_time():
    src = Landscape(G055, 3)
    fm = favoured_mass(src, 1e-9)
    assert fm.argmax == 0 and fm.sup_mass == pytest.approx(1.0, abs=1e-6)
    assert fm.truncation_error <= 1e-8


def test_favoured_mass_reports_gamma_mass():
    from traploc.tails import AuxFunction

    src = Landscape(TailModel("stretched-log", 0.3), 2)
    fm = favoured_mass(src, 1e4, AuxFunction())
    assert 0.0 <= fm.gamma_mass <= 1.0 and fm.sup_mass <= 1.0
    assert fm.truncation_error <= 1e-8


# ------------------------------------------------------------ planted favourable instances

EPS = (0.05, 0.1, 0.05, 0.5, 0.02, 1e-3, 0.1, 0.01)


@pytest.mark.parametrize("N", [2, 3])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_balance_and_mixing_on_planted_instances(N, seed):
    src, e = planted_instance(G055, N, EPS, seed)
    fs = favourable_event(src, 2, e, N=N)
    assert fs.event
    bt = balance_time(src, fs)
    assert bt.residual <= 1e-8
    bb = balance_bounds(fs.eps, N)
    scale = fs.ln_Lambda + fs.ln_sigma_prev
    assert bb.balance_lo < math.exp(bt.ln_t - scale) < bb.balance_hi
    mix = restricted_mixing_time(src, fs, 8 * math.sqrt(fs.eps[0]))
    scaled = math.exp(mix.ln_t - scale) if mix.ln_t > -math.inf else 0.0
    if bb.mixing_applicable:
        assert scaled < bb.mixing_scaled_upper


def test_balance_residual_on_random_segments():
    rng = np.random.default_rng(5)
    for _ in range(20):
        ln = rng.uniform(0.0, 15.0, int(rng.integers(2, 40)))
        N = int(rng.integers(2, 5))
        assert balance_time_segment(ln, N).residual <= 1e-8
