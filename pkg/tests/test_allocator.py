from functools import lru_cache

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from cnoma_fbl.allocator import (
    CNOMA_MRC,
    CNOMA_SC,
    NOMA,
    OMA,
    AllocationProblem,
    Infeasible,
    find_p1_for_user2,
    grid_oracle,
    max_r11_for_user1,
    p1_bounds,
    solve,
    solve_noma,
    solve_oma,
    solve_optimal_cnoma,
    solve_suboptimal_cnoma,
)
from cnoma_fbl.link import Allocation, ChannelTriple, SystemBudget, error_user1

STRONG = ChannelTriple(0.8, 0.1, 0.5)
POOR = ChannelTriple(0.8, 0.1, 0.01)
FAST = SystemBudget(dp=1.2 * 10 / 200)


@lru_cache(maxsize=None)
def reference(scheme, ch=STRONG, suboptimal=False, budget=FAST):
    return solve(AllocationProblem(ch, budget, scheme), suboptimal)


def assert_optimum_invariants(problem, res):
    b = problem.budget
    assert res.feasible
    assert abs(res.t1 - res.t2) <= 1e-6 * max(res.t1, 1e-12)
    assert res.energy_used == pytest.approx(problem.energy, rel=1e-9)
    assert res.eps1 <= b.eps1_th * (1 + 1e-6)
    if not np.isnan(res.eps2):
        assert res.eps2 <= b.eps2_th * (1 + 1e-6)
    a = res.alloc
    if res.scheme in (CNOMA_SC, CNOMA_MRC, NOMA):
        assert a.mI + a.mII == b.d_max
        assert 0 < a.p1I < a.p2I
        assert a.p_sum <= b.p_peak * (1 + 1e-12)
        assert 0 <= a.p2II <= b.p_peak * (1 + 1e-12)
        if a.mII > 0:
            assert a.mI * a.p_sum > a.mII * a.p2II


def test_reference_instance_ordering():
    t = {s: reference(s).fair_throughput for s in (CNOMA_MRC, CNOMA_SC, NOMA, OMA)}
    assert t[CNOMA_MRC] >= t[CNOMA_SC] >= t[NOMA] >= t[OMA] > 0


def test_reference_instance_invariants():
    for s in (CNOMA_MRC, CNOMA_SC, NOMA, OMA):
        assert_optimum_invariants(AllocationProblem(STRONG, FAST, s), reference(s))


def test_user1_target_binds_at_optimum():
    for s in (CNOMA_MRC, CNOMA_SC, NOMA):
        assert reference(s).eps1 == pytest.approx(FAST.eps1_th, rel=1e-6)


def test_poor_relay_matches_noma():
    t_noma = reference(NOMA, POOR).fair_throughput
    for s in (CNOMA_SC, CNOMA_MRC):
        assert reference(s, POOR).fair_throughput == pytest.approx(t_noma, rel=1e-3)


def test_suboptimal_bounds():
    for s in (CNOMA_SC, CNOMA_MRC):
        opt, sub = reference(s).fair_throughput, reference(s, suboptimal=True).fair_throughput
        assert reference(NOMA).fair_throughput <= sub <= opt
        assert sub >= 0.95 * opt


def test_noma_uses_whole_frame():
    r = reference(NOMA)
    assert r.alloc.mI == FAST.d_max and r.alloc.mII == 0 and r.alloc.p2II == 0.0
    assert r.alloc.p_sum == pytest.approx(FAST.p_ave)


def test_noma_equal_gains_solvable():
    # max-min is limited by the weak user, so equal gains at the same mean
    # beat a wide split; the oracle confirms the solver either way
    b = SystemBudget()
    for ch in (ChannelTriple(0.45, 0.45, 1.0), ChannelTriple(0.8, 0.1, 1.0)):
        prob = AllocationProblem(ch, b, NOMA)
        res, orc = solve_noma(prob), grid_oracle(prob, 200, 400)
        assert res.feasible
        assert abs(res.fair_throughput - orc.result.fair_throughput) <= orc.resolution


def test_oma_symmetric_split():
    b = SystemBudget(eps1_th=1e-5, eps2_th=1e-5)
    r = solve_oma(AllocationProblem(ChannelTriple(0.5, 0.5, 1.0), b, OMA))
    assert abs(r.alloc.m1 - r.alloc.m2) <= b.m_stride
    assert r.alloc.p1 == pytest.approx(r.alloc.p2, rel=1e-6)


@pytest.mark.parametrize("scheme", [OMA, NOMA, CNOMA_SC, CNOMA_MRC])
def test_starved_budget_is_infeasible(scheme):
    b = SystemBudget(p_ave=1e-6, dp=1.2e-6 / 50)
    r = solve(AllocationProblem(STRONG, b, scheme))
    assert not r.feasible and r.fair_throughput == 0.0


def test_vanishing_weak_gain_is_infeasible():
    r = solve(AllocationProblem(ChannelTriple(0.8, 1e-9, 1e-9), FAST, CNOMA_MRC))
    assert not r.feasible


def test_p1_bounds():
    lo, hi = p1_bounds(STRONG, 150, 10.67, SystemBudget())
    assert 0 < lo < hi < 10.67 / 2
    r = reference(CNOMA_MRC)
    lo, hi = p1_bounds(STRONG, r.alloc.mI, r.alloc.p_sum, FAST)
    assert lo <= r.alloc.p1I <= hi
    big = ChannelTriple(1e6, 1e5, 1.0)
    lo, hi = p1_bounds(big, 150, 1000.0, SystemBudget(p_ave=1000.0))
    assert lo < 1e-3 and hi > 0.49 * 1000.0 / 2
    with pytest.raises(Infeasible):
        p1_bounds(STRONG, 150, 1e-6, SystemBudget())


def test_max_r11_against_dense_grid():
    b = SystemBudget()
    a = Allocation(1.0, 10.67 - 1.0, 0.0, 150, 50)
    r = max_r11_for_user1(STRONG, a, b)
    from cnoma_fbl.link import RateAssignment

    grid = np.linspace(r - 1e-4, r + 1e-4, 2001)
    ok = [error_user1(STRONG, a, RateAssignment.coupled(x, 150, 50, b)) <= b.eps1_th for x in grid]
    best = grid[np.nonzero(ok)[0].max()]
    assert r == pytest.approx(best, abs=1e-6)


def test_max_r11_single_term_regime():
    from cnoma_fbl.fbl import fbl_rate

    ch = ChannelTriple(1e4, 1.0, 1.0)
    a = Allocation(1.0, 1e12, 0.0, 200, 0)
    r = max_r11_for_user1(ch, a, SystemBudget())
    assert r == pytest.approx(fbl_rate(1e4, 200, 1e-7), rel=1e-6)


def test_find_p1_slack_with_strong_relay():
    b = SystemBudget()
    ch = ChannelTriple(0.8, 0.1, 1e6)
    band = p1_bounds(ch, 150, 10.0, b)
    p1, r, status = find_p1_for_user2(ch, 150, 10.0, 12.0, band, b, CNOMA_SC)
    assert status == "slack" and band[0] <= p1 <= band[1] and r > 0


def test_find_p1_infeasible_without_weak_link():
    b = SystemBudget()
    ch = ChannelTriple(0.8, 1e-9, 1e-9)
    with pytest.raises(Infeasible):
        find_p1_for_user2(ch, 150, 10.0, 12.0, None, b, CNOMA_SC)


@pytest.mark.parametrize("scheme", [CNOMA_SC, CNOMA_MRC])
def test_matches_grid_oracle_small_frame(scheme):
    b = SystemBudget(d_max=50, dp=1.2 * 10 / 40, m_stride=2)
    prob = AllocationProblem(STRONG, b, scheme)
    orc = grid_oracle(prob)
    res = solve_optimal_cnoma(prob)
    assert abs(res.fair_throughput - orc.result.fair_throughput) <= orc.resolution


def test_noma_matches_oracle_slice():
    b = SystemBudget(d_max=50)
    prob = AllocationProblem(STRONG, b, NOMA)
    orc = grid_oracle(prob)
    assert abs(solve_noma(prob).fair_throughput - orc.result.fair_throughput) <= orc.resolution


def test_oracle_monotone_in_energy():
    b = SystemBudget(d_max=30, dp=0.5, m_stride=3)
    lo = grid_oracle(AllocationProblem(STRONG, b, CNOMA_SC, energy_budget=200.0), 60, 200).result
    hi = grid_oracle(AllocationProblem(STRONG, b, CNOMA_SC, energy_budget=300.0), 60, 200).result
    assert hi.fair_throughput >= lo.fair_throughput


def test_tie_break_is_deterministic():
    a, b = reference(CNOMA_MRC), solve(AllocationProblem(STRONG, FAST, CNOMA_MRC))
    assert a == b


gains = st.tuples(
    st.floats(-1.0, 2.0), st.floats(0.1, 2.0), st.floats(-2.0, 2.0),
).map(lambda t: ChannelTriple(10 ** t[0], 10 ** (t[0] - t[1]), 10 ** t[2]))


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(ch=gains, scheme=st.sampled_from([CNOMA_SC, CNOMA_MRC, NOMA, OMA]), d=st.integers(40, 120))
def test_randomized_invariants(ch, scheme, d):
    b = SystemBudget(d_max=d, dp=0.2, m_stride=2)
    prob = AllocationProblem(ch, b, scheme)
    res = solve(prob)
    if res.feasible:
        assert_optimum_invariants(prob, res)
    if scheme in (CNOMA_SC, CNOMA_MRC):
        sub = solve(prob, suboptimal=True)
        noma = solve_noma(prob)
        assert noma.fair_throughput <= sub.fair_throughput + 1e-12
        assert sub.fair_throughput <= res.fair_throughput + 1e-12


def _cell_value(ch, b, scheme, mI, P):
    mII = b.d_max - mI
    p2II = (b.d_max * b.p_ave - mI * P) / mII
    if not (0 <= p2II <= b.p_peak and 0 < P <= b.p_peak):
        return None
    try:
        _, r, _ = find_p1_for_user2(ch, mI, P, p2II, None, b, scheme)
    except Infeasible:
        return None
    return mI / b.d_max * (1 - b.eps1_th) * r


@pytest.mark.parametrize("scheme", [CNOMA_SC, CNOMA_MRC])
def test_phase_two_heavy_points_can_be_improved(scheme):
    """A feasible point spending more energy in phase II than phase I is
    beaten by scaling phase-I powers up while moving uses into phase I."""
    b = SystemBudget(p_ave=10.0, kappa_p=2.0)
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 6:
        mI = int(rng.integers(40, 100))
        mII = b.d_max - mI
        P = rng.uniform(2.0, 8.0)
        if mI * P >= mII * (b.d_max * b.p_ave - mI * P) / mII:
            continue
        t0 = _cell_value(STRONG, b, scheme, mI, P)
        if t0 is None:
            continue
        better = [
            t for dm in (1, 2, 5, 10, 20) for alpha in (1.01, 1.05, 1.1, 1.2)
            if (t := _cell_value(STRONG, b, scheme, mI + dm, alpha * P)) is not None
        ]
        assert better and max(better) > t0
        checked += 1


def test_error_bulge_between_feasible_steps():
    # user 2's error exceeds its target only between two coarse power steps,
    # right where user 1's rate peaks
    ch = ChannelTriple(20.331576068149438, 4.939346693004725, 5.502102642110589)
    b = SystemBudget(d_max=38, p_ave=10.29964030635341, kappa_p=1.1823214256968626, dp=0.25)
    prob = AllocationProblem(ch, b, NOMA)
    res, orc = solve_noma(prob), grid_oracle(prob, 400, 800)
    assert res.eps2 == pytest.approx(b.eps2_th, rel=1e-6)
    assert res.fair_throughput >= orc.result.fair_throughput - orc.resolution
    assert not res.slack
