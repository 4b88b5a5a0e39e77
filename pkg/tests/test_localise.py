import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import shared
from traploc.errors import DomainError
from traploc.harness import asymptotic_eps, favourable_hits, planted_instance
from traploc.landscape import Landscape, PlantedLandscape, RecordEntry, RecordSkeleton, records_upto, scan
from traploc.localise import (
    audit_R1_R2,
    balance_bounds,
    build_snapshot,
    chain_from,
    default_eps4,
    favourable_event,
    lower_boundary,
    lower_boundary_bruteforce,
    near_record_sites,
    reloc_rhs,
    reloc_time,
    validate_eps,
)
from traploc.logreal import LogMagnitude
from traploc.tails import AuxFunction, TailModel

AUX = AuxFunction()
G03 = TailModel("stretched-log", 0.3)
G055 = TailModel("stretched-log", 0.55)
EPS = (0.05, 0.1, 0.05, 0.5, 0.02, 1e-3, 0.1, 0.01)


def _check_snapshot(src, snap):
    ln = src.ln_traps(0, snap.n_below_O)
    assert snap.chain[0] == snap.z_I and snap.chain[-1] == snap.z_O
    assert all(np.diff(snap.chain) > 0)
    sig = ln[snap.chain]
    assert all(np.diff(sig) > 0)
    assert snap.z_I in snap.gamma_set and snap.z_O in snap.gamma_set
    assert len(snap.gamma_set) >= 1
    assert snap.D_t.ln_value <= ln[snap.z_I]
    assert float(np.max(ln)) == ln[snap.z_O]
    # Gamma_t is exactly the set of sites left of O_t at depth >= D_t
    assert snap.gamma_set == np.flatnonzero(ln >= snap.D_t.ln_value).tolist()
    assert snap.n_below_O == math.ceil(snap.O_t)
    # D_t equals the brute-force maximum over candidate levels
    thr = ln[snap.z_I] - snap.ln_h
    if ln.size <= 2000:
        assert snap.D_t.ln_value == lower_boundary_bruteforce(ln, thr)


def test_snapshot_hand_example():
    src = PlantedLandscape.from_values([1, 100] + [1] * 50)
    ln_t = AUX.solve_t_over_h(math.log(50.0))
    snap = build_snapshot(src, LogMagnitude(ln_t), AUX)
    assert snap.j_t == 2 and snap.z_I == 1 and snap.z_O == 1 and snap.chain == [1]
    _check_snapshot(src, snap)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(min_value=math.log(1e2), max_value=math.log(1e10)),
       st.sampled_from([0.3, 0.5, 0.55]))
def test_snapshot_invariants(seed, ln_t, gamma):
    src = Landscape(TailModel("stretched-log", gamma), seed)
    snap = build_snapshot(src, LogMagnitude(ln_t), AUX)
    _check_snapshot(src, snap)
    ln = src.ln_traps(0, snap.n_below_O)
    # every chain step lies inside its open window
    for y, z in zip(snap.chain, snap.chain[1:]):
        w = math.exp(snap.ln_h + max(ln_t - ln[y], 0.0))
        assert y < z < y + w
        assert np.all(ln[y + 1:z] <= ln[y])


def test_chain_hand_example():
    # window width 2.5 while t <= sigma: from y the candidates are y+1, y+2
    ln = [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0] + [0.0] * 13
    c = chain_from(PlantedLandscape(np.array(ln)), 0, 1.0, math.log(2.5))
    assert c.sites == [0, 2] and c.ln_sigma == [1.0, 2.0]
    assert c.ln_outer_width == pytest.approx(math.log(2.5))
    ln[4] = 3.0
    c = chain_from(PlantedLandscape(np.array(ln)), 0, 1.0, math.log(2.5))
    assert c.sites == [0, 2, 4, 6] and c.last == 6


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=-20, max_value=20), min_size=1, max_size=60), st.floats(min_value=-25, max_value=25))
def test_lower_boundary_matches_bruteforce(values, thr):
    v = np.array(values)
    assert lower_boundary(np.sort(v), thr) == lower_boundary_bruteforce(v, thr)


def test_outer_boundary_nondecreasing_between_reloc_times():
    for seed in range(5):
        src = Landscape(G03, seed)
        sk = records_upto(src, 5, 1 << 22)
        for n in (3, 4):
            lo = reloc_time(sk, n - 1, AUX).ln_value
            hi = reloc_time(sk, n, AUX).ln_value
            grid = np.linspace(lo, hi, 42)[1:-1]
            O = [build_snapshot(src, LogMagnitude(x), AUX).O_t for x in grid]
            assert all(b >= a for a, b in zip(O, O[1:]))


def test_complete_localisation_frequency_grows():
    from traploc.harness import ExperimentConfig, run

    cfg = ExperimentConfig("complete-loc", "stretched-log:0.3", seed=100, seeds=200, t_min=1e3, t_max=1e10, t_steps=2)
    res = run(cfg)
    assert res.summary["invariant_violations"] == 0
    frac = {r["ln_t"]: [] for r in res.rows}
    for r in res.rows:
        frac[r["ln_t"]].append(r["singleton"])
    lo, hi = (np.mean(frac[k]) for k in sorted(frac))
    assert hi > lo


# ------------------------------------------------------------ relocalisation

def test_reloc_time_constant_floor():
    aux = AuxFunction(50.0)
    sk = RecordSkeleton([RecordEntry(0, LogMagnitude(1.0), LogMagnitude.zero()),
                         RecordEntry(4, LogMagnitude(2.0), LogMagnitude(math.log(10.0)))])
    # rhs = 10 * 4; h stays at the floor 50 on the bracket
    assert math.exp(reloc_time(sk, 2, aux).ln_value) == pytest.approx(50.0 * 40.0, rel=1e-12)
    with pytest.raises(DomainError):
        reloc_time(sk, 1, aux)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.3, 0.55, 0.7]))
def test_reloc_time_increasing_with_small_residual(seed, gamma):
    sk = scan(Landscape(TailModel("stretched-log", gamma), seed), 20000, K=1).skeleton
    times = []
    for n in range(2, len(sk) + 1):
        x = reloc_time(sk, n, AUX).ln_value
        rhs = reloc_rhs(sk, n)
        assert abs(math.expm1(x - float(AUX.ln_h(x)) - rhs)) <= 1e-9
        times.append(x)
    assert all(np.diff(times) > 0)


def _audit_landscape(extra):
    v = [1e-3] * 40
    v[0], v[4] = 5.0, 10.0
    for pos, val in extra.items():
        v[pos] = val
    return PlantedLandscape.from_values(v)


def test_audit_empty_when_gap_is_shallow():
    a = audit_R1_R2(_audit_landscape({}), 2, AUX)
    assert (a.r_prev, a.r_n) == (0, 4)
    assert a.R1 == [] and a.R2 == []


def test_audit_catches_planted_near_record():
    a = audit_R1_R2(_audit_landscape({5: 7.0}), 2, AUX)
    assert a.R1 == [5] and a.R2 == []
    assert 5 < a.O_n


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 7), st.booleans())
def test_audit_membership(seed, n, divide):
    src = Landscape(G055, seed)
    a = audit_R1_R2(src, n, AUX, divide_by_h=divide)
    assert not set(a.R1) & set(a.R2)
    ln = src.ln_traps(0, math.ceil(a.O_n))
    prev = records_upto(src, n, 1 << 22).record(n - 1).sigma.ln_value
    for x in a.R1:
        assert a.r_n < x < a.O_n and ln[x] > prev
    for x in a.R2:
        assert x < a.O_n and a.D_n.ln_value <= ln[x] < prev
    expected_R2 = [x for x in range(ln.size) if a.D_n.ln_value <= ln[x] < prev]
    assert a.R2 == expected_R2


def test_audit_matches_pilot_on_fresh_seeds():
    fresh, frozen = shared.audit_run().summary, shared.pilot("audit_gamma_0.3")
    ok, se = shared.within_3se(fresh["frac_size_zero"], fresh["audits"], frozen["frac_size_zero"], frozen["audits"])
    assert ok, (fresh["frac_size_zero"], frozen["frac_size_zero"], se)
    assert fresh["frac_size_zero"] >= shared.frozen_threshold(frozen["frac_size_zero"], frozen["audits"])


def test_audit_empty_in_nine_tenths_of_cases():
    s = shared.audit_run().summary
    assert s["frac_size_zero"] >= 0.9, s


def test_localisation_set_size_matches_pilot():
    fresh, frozen = shared.gamma_card_run().summary, shared.pilot("gamma_card_gamma_0.55")
    ok, se = shared.within_3se(fresh["frac_size_le_N"], fresh["points"], frozen["frac_size_le_N"], frozen["points"])
    assert ok, (fresh["frac_size_le_N"], frozen["frac_size_le_N"], se)
    # the bound N is attained, not just respected
    assert fresh["count_size_eq_N"] > 0 and fresh["N"] == 3


def test_localisation_set_at_most_N_in_most_cases():
    s = shared.gamma_card_run().summary
    assert s["frac_size_le_N"] >= 0.95, s


# ------------------------------------------------------------ near records and the favourable event

def test_near_records_small_eps_gives_next_record():
    for seed in range(20):
        src = Landscape(G055, seed)
        fs = near_record_sites(src, 3, 1e-12, 2)
        assert fs.z == [fs.r_prev, fs.r_n]


def test_near_records_planted():
    v = [10.0, 1, 9.5, 1, 9.0, 1, 30.0, 1, 1]
    fs = near_record_sites(PlantedLandscape.from_values(v, G055), 2, 0.2, 4)
    assert fs.z == [0, 2, 4, 6] and fs.z[-1] == fs.r_n


def test_near_record_count_is_geometric():
    # given sigma_(1) = v, the traps above (1 - eps0) v before the next record
    # number Geometric(q) failures, q = L((1 - eps0) v) / L(v).  The raw count
    # has a heavy tail in v, so compare the bounded statistics 1{C = 0} and
    # min(C, 3) with their conditional means.
    eps0, cap = 0.5, 3
    m = TailModel("stretched-log", 0.5)
    diffs = []
    for seed in range(10**4):
        fs = near_record_sites(Landscape(m, seed), 2, eps0, cap + 2)
        count = sum(1 for z in fs.z[1:] if z < fs.r_n)
        v = fs.ln_sigma_prev
        q = math.exp(float(m.ln_L(v + math.log1p(-eps0))) - float(m.ln_L(v)))
        diffs.append((float(count == 0) - q, min(count, cap) - sum((1 - q) ** k for k in range(1, cap + 1))))
    d = np.array(diffs)
    se = d.std(axis=0, ddof=1) / math.sqrt(len(d))
    assert np.all(np.abs(d.mean(axis=0)) <= 4 * se)


def test_planted_instance_satisfies_event():
    for N in (2, 3):
        src, e = planted_instance(G055, N, EPS, seed=1)
        fs = favourable_event(src, 2, e, N=N)
        assert fs.event, fs.clause_results
        assert fs.z[0] == 0 and all(np.diff(fs.z) > 0)
        lvl = fs.ln_sigma_prev + math.log1p(-e[0])
        assert all(s > lvl for s in fs.ln_sigma_z[1:])


def test_shallow_next_record_fails_only_its_clause():
    src, e = planted_instance(G055, 3, EPS, seed=1)
    fs = favourable_event(src, 2, e, N=3)
    v = src.ln_sigma.copy()
    # still a record, but below sigma_(n-1) / eps5
    v[fs.z[-1]] = fs.ln_sigma_prev + 0.5 * (-math.log(e[5]))
    weak = favourable_event(PlantedLandscape(v, G055), 2, e, N=3)
    failed = [k for k, ok in weak.clause_results.items() if not ok]
    assert failed == ["next_record_deep"]


def test_eps_validation():
    assert validate_eps((0.1, 0.2, 0.1, 0.5, None, 0.1, 0.1, 0.1), 10)[4] == pytest.approx(default_eps4(10))
    with pytest.raises(DomainError):
        validate_eps((0.1, 0.1, 0.2, 0.5, 0.1, 0.1, 0.1, 0.1), 3)
    with pytest.raises(DomainError):
        validate_eps((0.1, 0.2, 0.1, 1.5, 0.1, 0.1, 0.1, 0.1), 3)
    with pytest.raises(DomainError):
        validate_eps((0.1,) * 7, 3)
    assert asymptotic_eps(0.5)[1] > asymptotic_eps(0.5)[2]


def test_balance_bounds_closed_forms():
    bb = balance_bounds(EPS, 3)
    e0, e1, e2, e3 = EPS[:4]
    assert bb.balance_lo == pytest.approx(2 * (1 - e0) / (e1 * 3))
    assert bb.balance_hi == pytest.approx(6 * (1 / e2 + 1 / e3) * 9)
    assert bb.mixing_scaled_upper == pytest.approx(3 / (e0**2 * e3))
    assert bb.mixing_applicable == (2 * EPS[4] <= e0 <= 1 / 3)


def test_favourable_event_hits_at_asymptotic_parameters():
    # eps = 0.5: (e^2, e^6, e^7, e, 1/(4 ln n), e^2, e^6, e) over 500 seeds
    eps = asymptotic_eps(0.5)
    hits = sum(len(favourable_hits(G055, s, eps)) for s in range(500))
    assert hits >= 1
