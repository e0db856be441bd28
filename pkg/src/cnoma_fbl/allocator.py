"""Max-min fair power and blocklength allocation for one two-user pair.

The optimal C-NOMA solver is a 3-D search: blocklength split ``mI`` on a
stride grid, phase-I power sum ``P_sum`` on a ``dp`` grid, and the user-1
power ``p1I`` found by stepping from the lower edge of its admissible band
until user 2's error reaches its target, followed by bisection inside the
last step. For every probed ``p1I`` the largest user-1 rate meeting the
user-1 target is found by a bracketed root search. All (mI, P_sum) cells
are processed together as flat numpy arrays.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy import optimize, special

from .fbl import LN2, decoding_error, fbl_rate, gaussian_q_inv
from .link import (
    Allocation,
    ChannelTriple,
    RateAssignment,
    SystemBudget,
    error_mrc_arr,
    error_sc_arr,
    mrc_arr,
    sinr_sic_arr,
    sinr_user2_arr,
    snr_user1_arr,
)

OMA = "OMA"
NOMA = "NOMA"
CNOMA_SC = "CNOMA_SC"
CNOMA_MRC = "CNOMA_MRC"
SCHEMES = (OMA, NOMA, CNOMA_SC, CNOMA_MRC)

_LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)
_CHUNK = 250_000
# log-spaced p1 points per decade inside the first power step
_LOG_PER_DECADE = 6
_LOG_Q = 10.0 ** (1.0 / _LOG_PER_DECADE)


class Infeasible(Exception):
    """No power/rate choice meets the reliability targets."""


@dataclass(frozen=True)
class AllocationProblem:
    channel: ChannelTriple
    budget: SystemBudget = field(default_factory=SystemBudget)
    scheme: str = CNOMA_MRC
    energy_budget: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.energy_budget is not None and self.energy_budget <= 0:
            raise ValueError("energy_budget must be positive")

    @property
    def energy(self) -> float:
        if self.energy_budget is None:
            return self.budget.d_max * self.budget.p_ave
        return self.energy_budget


@dataclass(frozen=True)
class OmaAllocation:
    """Time-division allocation: user i transmits alone for ``m_i`` uses."""

    p1: float
    p2: float
    m1: int
    m2: int

    @property
    def energy(self) -> float:
        return self.m1 * self.p1 + self.m2 * self.p2


@dataclass(frozen=True)
class AllocationResult:
    feasible: bool
    scheme: str
    alloc: Allocation | OmaAllocation | None = None
    rates: RateAssignment | None = None
    fair_throughput: float = 0.0
    eps1: float = math.nan
    eps2: float = math.nan
    energy_used: float = 0.0
    t1: float = 0.0
    t2: float = 0.0
    slack: bool = False

    @classmethod
    def infeasible(cls, scheme: str) -> "AllocationResult":
        return cls(False, scheme)


# -- vectorised kernels -------------------------------------------------------

def _f_terms(gamma, m):
    """Return (a, b) with f(gamma, r, m) = a - b*r."""
    v = -np.expm1(-2.0 * np.log1p(gamma))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.sqrt(m / v)
        b = LN2 * scale
        a = np.log1p(gamma) * scale
    # gamma == 0: error is 1/2 at rate 0, 1 above
    a = np.where(v > 0, a, 0.0)
    b = np.where(v > 0, b, np.inf)
    return a, b


def _logq(x):
    return special.log_ndtr(-x)


def _err(gamma, rate, m):
    a, b = _f_terms(gamma, m)
    with np.errstate(invalid="ignore"):
        f = np.where(rate > 0, a - b * rate, a)
    return special.ndtr(-f)


def threshold_snr(m, eps):
    """SNR at which a zero-rate code of length ``m`` has error exactly ``eps``.

    Solves ln(1+g) * sqrt(m / V(g)) = Q^-1(eps) by bisection on u = ln(1+g).
    """
    m = np.asarray(m, dtype=float)
    s = float(gaussian_q_inv(eps)) / np.sqrt(m)
    lo = np.zeros_like(s)
    hi = s + 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        val = mid / np.sqrt(-np.expm1(-2.0 * mid))
        above = val > s
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return np.expm1(0.5 * (lo + hi))


def user1_max_rate(g11, g12, m, eps_th, ratio, tol=1e-15):
    """Largest r11 with Q(f(g12, ratio*r11, m)) + Q(f(g11, r11, m)) = eps_th.

    Returns ``(r11, ok)``; ``ok`` is False where even r11 = 0 misses the
    target, and r11 is 0 there. Safeguarded Newton on log(eps1) inside a
    bracket built from the single-term inversions.
    """
    g11, g12, m = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (g11, g12, m)))
    a11, b11 = _f_terms(g11, m)
    a12, b12 = _f_terms(g12, m)
    b12 = b12 * ratio
    log_th = math.log(eps_th)
    ok = np.logaddexp(_logq(a11), _logq(a12)) <= log_th
    q = float(gaussian_q_inv(eps_th))
    q2 = float(gaussian_q_inv(eps_th / 2.0))
    with np.errstate(invalid="ignore"):
        hi = np.minimum((a11 - q) / b11, (a12 - q) / b12)
        lo = np.maximum(np.minimum((a11 - q2) / b11, (a12 - q2) / b12), 0.0)
    hi = np.where(ok, hi, 0.0)
    lo = np.where(ok, np.minimum(lo, hi), 0.0)
    r = hi.copy()
    active = ok & (hi > lo)
    for _ in range(60):
        if not active.any():
            break
        idx = np.nonzero(active)[0] if r.ndim else None
        ra, lo_a, hi_a = (r[idx], lo[idx], hi[idx]) if idx is not None else (r, lo, hi)
        A11, B11, A12, B12 = (x[idx] if idx is not None else x for x in (a11, b11, a12, b12))
        f11 = A11 - B11 * ra
        f12 = A12 - B12 * ra
        le = np.logaddexp(_logq(f11), _logq(f12))
        h = le - log_th
        dh = B11 * np.exp(-0.5 * f11 * f11 - _LOG_SQRT2PI - le) + B12 * np.exp(
            -0.5 * f12 * f12 - _LOG_SQRT2PI - le
        )
        lo_a = np.where(h <= 0, ra, lo_a)
        hi_a = np.where(h >= 0, ra, hi_a)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = ra - h / dh
        bad = ~np.isfinite(nxt) | (nxt <= lo_a) | (nxt >= hi_a)
        nxt = np.where(bad, 0.5 * (lo_a + hi_a), nxt)
        hit = np.abs(h) <= 1e-13
        narrow = hi_a - lo_a <= tol * np.maximum(hi_a, 1.0)
        done = hit | narrow
        nxt = np.where(hit, ra, np.where(narrow, lo_a, nxt))
        if idx is not None:
            r[idx], lo[idx], hi[idx] = nxt, lo_a, hi_a
            active[idx] = ~done
        else:
            r, lo, hi, active = nxt, lo_a, hi_a, ~done
    return np.where(ok, r, 0.0), ok


class _Cells:
    """Flat arrays describing candidate (mI, P_sum, p2II) cells for one pair."""

    def __init__(self, channel, budget, scheme, mI, p_sum, p2II):
        self.ch = channel
        self.budget = budget
        self.scheme = scheme
        self.mI = np.asarray(mI, dtype=float)
        self.mII = budget.d_max - self.mI
        self.p_sum = np.asarray(p_sum, dtype=float)
        self.p2II = np.asarray(p2II, dtype=float)
        self.direct = (self.mII <= 0) | (scheme == NOMA)

    def __len__(self):
        return self.mI.size

    def take(self, idx):
        c = object.__new__(_Cells)
        c.ch, c.budget, c.scheme = self.ch, self.budget, self.scheme
        for name in ("mI", "mII", "p_sum", "p2II", "direct"):
            setattr(c, name, getattr(self, name)[idx])
        return c

    def bounds(self):
        """Admissible band [p_min, p_max] of p1I from the zero-rate user-1 proxies."""
        g1, phi, dp = self.ch.g1, self.budget.phi, self.budget.power_step
        gstar = threshold_snr(self.mI, self.budget.eps1_th)
        half = self.p_sum / 2.0
        p_min = gstar * phi / g1
        # eps_{1,2} proxy: (P - p1) g1 / (p1 g1 + phi) = gstar
        p_max = (self.p_sum * g1 - gstar * phi) / (g1 * (1.0 + gstar))
        p_max = np.where(p_max >= half, half - dp, p_max)
        return p_min, p_max

    def evaluate(self, p1, sel=None, ratio=None):
        """User-1 rate, feasibility flag and user-2 error at p1 (cell-aligned)."""
        b = self.budget
        ratio = b.rate_ratio if ratio is None else ratio
        mI, mII, P, p2II, direct = (
            (x if sel is None else x[sel]) for x in (self.mI, self.mII, self.p_sum, self.p2II, self.direct)
        )
        g1, g2, g12, phi = self.ch.g1, self.ch.g2, self.ch.g12, b.phi
        p2 = P - p1
        g11 = snr_user1_arr(g1, p1, phi)
        gsic = sinr_sic_arr(g1, p1, p2, phi)
        g22 = sinr_user2_arr(g2, p1, p2, phi)
        r11, ok = user1_max_rate(g11, gsic, mI, b.eps1_th, ratio)
        r22 = ratio * r11
        e22 = _err(g22, r22, mI)
        if self.scheme == CNOMA_SC:
            e12 = _err(gsic, r22, mI)
            with np.errstate(divide="ignore", invalid="ignore"):
                rII = np.where(mII > 0, r22 * mI / mII, 0.0)
            e22II = _err(p2II * g12, rII, np.maximum(mII, 1.0))
            e2 = np.where(direct, e22, error_sc_arr(e22, e12, e22II))
        elif self.scheme == CNOMA_MRC:
            e12 = _err(gsic, r22, mI)
            gC, mC = mrc_arr(g22, p2II * g12, mI, mII)
            e22C = _err(gC, r22 * mI / mC, mC)
            e2 = np.where(direct, e22, error_mrc_arr(e12, e22, e22C))
        else:
            e2 = e22
        return r11, ok, e2


def _search_cells(cells: _Cells):
    """Stepped-then-bisected p1I search on every cell.

    Returns arrays (p1, r11, ratio, status). ``ratio`` is r22_I / r11 and
    status is 1 when user 2's target binds, 2 for a slack point (user-1
    rate peaks before user 2's error reaches its target) and 0 when the
    cell is infeasible. Slack points are only kept when
    ``budget.require_binding`` is False.
    """
    b = cells.budget
    n = len(cells)
    p1_out = np.zeros(n)
    r_out = np.zeros(n)
    ratio_out = np.full(n, b.rate_ratio)
    status = np.zeros(n, dtype=np.int8)
    if n == 0:
        return p1_out, r_out, ratio_out, status
    dp, th = b.power_step, b.eps2_th
    p_min, p_max = cells.bounds()
    band = (p_min < p_max) & (p_min > 0)
    nsteps = np.where(band, np.ceil((p_max - p_min) / dp - 1e-12), 0).astype(np.int64)
    # when p_min << dp the user-2 error can rise above target and fall back
    # within the first step, so that step is also probed on a log grid
    with np.errstate(divide="ignore", invalid="ignore"):
        nlog = np.where(band, np.ceil(np.log1p(dp / p_min) / math.log(_LOG_Q) - 1e-12), 0)
    nlog = np.maximum(nlog, 1).astype(np.int64)
    count = np.where(band, nlog + nsteps, 0)
    lo_p = np.full(n, np.nan)
    hi_p = np.full(n, np.nan)
    # best stepped point strictly before the first crossing, and its neighbours
    peak = np.full((n, 3), np.nan)
    peak_r = np.zeros(n)

    order = np.nonzero(band)[0]
    order = order[np.argsort(count[order], kind="stable")]
    start = 0
    while start < order.size:
        stop = start + 1
        while stop < order.size and (stop - start + 1) * int(count[order[stop]]) <= _CHUNK:
            stop += 1
        idx = order[start:stop]
        start = stop
        width = int(count[idx].max())
        k = np.arange(width)
        nl = nlog[idx, None]
        with np.errstate(over="ignore"):
            log_part = p_min[idx, None] * _LOG_Q ** np.minimum(k[None, :], nl - 1)
        lin_part = p_min[idx, None] + (k[None, :] - nl + 1) * dp
        grid = np.minimum(np.where(k[None, :] < nl, log_part, lin_part), p_max[idx, None])
        valid = k[None, :] < count[idx, None]
        last_k = count[idx] - 1
        rows, cols = np.nonzero(valid)
        r11, ok, e2 = cells.evaluate(grid[rows, cols], sel=idx[rows])
        E2 = np.full(grid.shape, -np.inf)
        E2[rows, cols] = e2
        R = np.full(grid.shape, -np.inf)
        R[rows, cols] = np.where(ok, r11, -np.inf)
        hit = E2 >= th
        first = np.where(hit.any(axis=1), hit.argmax(axis=1), last_k + 1)
        crossing = (first > 0) & (first <= last_k)
        ci = np.nonzero(crossing)[0]
        lo_p[idx[ci]] = grid[ci, first[ci] - 1]
        hi_p[idx[ci]] = grid[ci, first[ci]]
        R[k[None, :] >= first[:, None]] = -np.inf
        j = R.argmax(axis=1)
        rows = np.arange(idx.size)
        has = np.isfinite(R[rows, j]) & (R[rows, j] > 0)
        last = np.minimum(first - 1, last_k)
        peak[idx, 0] = grid[rows, np.maximum(j - 1, 0)]
        peak[idx, 1] = grid[rows, j]
        peak[idx, 2] = grid[rows, np.minimum(j + 1, np.maximum(last, 0))]
        peak[idx[~has]] = np.nan
        peak_r[idx] = np.where(has, R[rows, j], 0.0)

    # bisection inside the bracketing step
    act = np.nonzero(~np.isnan(lo_p))[0]
    lo, hi = lo_p[act], hi_p[act]
    p_root = lo.copy()
    live = np.ones(act.size, dtype=bool)
    for _ in range(200):
        if not live.any():
            break
        li = np.nonzero(live)[0]
        mid = 0.5 * (lo[li] + hi[li])
        _, _, e2 = cells.evaluate(mid, sel=act[li])
        above = e2 >= th
        hi[li] = np.where(above, mid, hi[li])
        lo[li] = np.where(above, lo[li], mid)
        close = np.abs(e2 - th) <= b.bisect_tol
        conv = close | (hi[li] - lo[li] <= 1e-15 * hi[li])
        p_root[li] = np.where(close, mid, lo[li])
        live[li[conv]] = False
    if act.size:
        r11, ok, _ = cells.evaluate(p_root, sel=act)
        good = ok & (r11 > 0)
        p1_out[act] = np.where(good, p_root, 0.0)
        r_out[act] = np.where(good, r11, 0.0)
        status[act] = np.where(good, 1, 0)

    if b.require_binding:
        return p1_out, r_out, ratio_out, status

    sl = np.nonzero(~np.isnan(peak[:, 1]))[0]
    if sl.size:
        p_pk, r_pk, edge = _refine_peak(cells, sl, peak[sl], peak_r[sl])
        better = r_pk > r_out[sl]
        sl, p_pk, edge = sl[better], p_pk[better], edge[better]
        if sl.size:
            ratio, r_pk = _recouple(cells, sl, p_pk)
            p1_out[sl], r_out[sl], ratio_out[sl] = p_pk, r_pk, ratio
            status[sl] = np.where(edge, 1, 2)
    return p1_out, r_out, ratio_out, status


def _refine_peak(cells, sel, brackets, r_step):
    """Golden-section refinement of the user-1 rate peak between grid steps."""
    th = cells.budget.eps2_th
    a, c = brackets[:, 0].copy(), brackets[:, 2].copy()
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = c - invphi * (c - a)
    x2 = a + invphi * (c - a)
    f1 = cells.evaluate(x1, sel=sel)[0]
    f2 = cells.evaluate(x2, sel=sel)[0]
    for _ in range(60):
        left = f1 >= f2
        c = np.where(left, x2, c)
        a = np.where(left, a, x1)
        nx1 = np.where(left, c - invphi * (c - a), x2)
        nx2 = np.where(left, x1, a + invphi * (c - a))
        probe = np.where(left, nx1, nx2)
        fp = cells.evaluate(probe, sel=sel)[0]
        f1, f2 = np.where(left, fp, f2), np.where(left, f1, fp)
        x1, x2 = nx1, nx2
        if np.all(c - a <= 1e-12 * np.maximum(c, 1e-300)):
            break
    p = 0.5 * (x1 + x2)
    r, ok, e2 = cells.evaluate(p, sel=sel)
    # user 2's error can bulge above target between two feasible steps; then
    # the best point is where it re-enters the target on the way to the peak
    over = np.nonzero(e2 > th)[0]
    if over.size:
        lo, hi = brackets[over, 1].copy(), p[over].copy()
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            bad = cells.evaluate(mid, sel=sel[over])[2] > th
            hi, lo = np.where(bad, mid, hi), np.where(bad, lo, mid)
            if np.all(np.abs(hi - lo) <= 1e-15 * np.abs(hi)):
                break
        p[over] = lo
        r[over], ok[over], e2[over] = cells.evaluate(lo, sel=sel[over])
    use = ok & (e2 <= th) & (r >= r_step)
    binding = np.zeros(sel.size, dtype=bool)
    binding[over] = True
    return np.where(use, p, brackets[:, 1]), np.where(use, r, r_step), use & binding


def _recouple(cells, sel, p1):
    """Re-derive r22_I / r11 from the achieved user-2 error so T1 = T2."""
    b = cells.budget
    ratio = np.full(sel.size, b.rate_ratio)
    for _ in range(4):
        r, _, e2 = cells.evaluate(p1, sel=sel, ratio=ratio)
        ratio = (1.0 - b.eps1_th) / (1.0 - e2)
    r, _, _ = cells.evaluate(p1, sel=sel, ratio=ratio)
    return ratio, r


def _m_grid(budget: SystemBudget) -> np.ndarray:
    return np.arange(budget.m_stride, budget.d_max, budget.m_stride)


def _power_cells(problem: AllocationProblem):
    """(mI, P_sum) cells of the 3-D search passing the phase-II gates.

    Besides the ``dp`` grid, each mI also gets the cell where the relay
    transmits at peak power, which is the edge of the p2II gate.
    """
    b = problem.budget
    E, peak, dp = problem.energy, b.p_peak, b.power_step
    ps = dp * np.arange(1, int(math.floor(peak / dp + 1e-9)) + 1)
    ms, Ps = [], []
    for mI in _m_grid(b):
        mII = b.d_max - mI
        edge = (E - mII * peak) / mI
        cand = ps if edge <= 0 else np.append(ps, edge)
        p2II = (E - mI * cand) / mII
        keep = (p2II >= 0) & (p2II <= peak * (1 + 1e-12)) & (mI * cand >= mII * p2II) & (cand > 0) & (cand <= peak)
        cand = np.unique(cand[keep])
        ms.append(np.full(cand.size, mI))
        Ps.append(cand)
    if not ms:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(ms), np.concatenate(Ps)


def _with_direct_cell(problem, mI, P):
    b = problem.budget
    direct_p = problem.energy / b.d_max
    if direct_p <= b.p_peak:
        mI = np.append(mI, b.d_max)
        P = np.append(P, direct_p)
    return mI, P


def _finish(problem: AllocationProblem, cells: _Cells, p1, r11, ratio, status) -> AllocationResult:
    b = problem.budget
    feas = status > 0
    if not feas.any():
        return AllocationResult.infeasible(problem.scheme)
    T = np.where(feas, cells.mI / b.d_max * (1.0 - b.eps1_th) * r11, -np.inf)
    ties = np.nonzero(T == T.max())[0]
    i = ties[np.lexsort((p1[ties], cells.mI[ties]))[0]]
    mI, mII = int(cells.mI[i]), int(cells.mII[i])
    P, p2II = float(cells.p_sum[i]), float(cells.p2II[i])
    alloc = Allocation(float(p1[i]), P - float(p1[i]), p2II if mII > 0 else 0.0, mI, mII)
    rates = RateAssignment.coupled(float(r11[i]), mI, mII, b, ratio=float(ratio[i]))
    return evaluate_allocation(problem, alloc, rates, slack=bool(status[i] == 2))


def evaluate_allocation(problem: AllocationProblem, alloc: Allocation, rates: RateAssignment, slack=False) -> AllocationResult:
    """Achieved errors and throughputs of a C-NOMA/NOMA allocation at given rates."""
    b = problem.budget
    ch, phi = problem.channel, b.phi
    mI, mII = alloc.mI, alloc.mII
    gsic = sinr_sic_arr(ch.g1, alloc.p1I, alloc.p2I, phi)
    g22 = sinr_user2_arr(ch.g2, alloc.p1I, alloc.p2I, phi)
    e12 = float(_err(gsic, rates.r22_I, mI))
    e11 = float(_err(snr_user1_arr(ch.g1, alloc.p1I, phi), rates.r11, mI))
    e22 = float(_err(g22, rates.r22_I, mI))
    if mII == 0 or problem.scheme == NOMA:
        eps2 = e22
    elif problem.scheme == CNOMA_SC:
        eps2 = float(error_sc_arr(e22, e12, _err(alloc.p2II * ch.g12, rates.r22_II, mII)))
    else:
        gC, mC = mrc_arr(g22, alloc.p2II * ch.g12, mI, mII)
        eps2 = float(error_mrc_arr(e12, e22, _err(gC, rates.r22_C, mC)))
    eps1 = e12 + e11
    return AllocationResult(
        feasible=True,
        scheme=problem.scheme,
        alloc=alloc,
        rates=rates,
        fair_throughput=mI / b.d_max * (1.0 - b.eps1_th) * rates.r11,
        eps1=eps1,
        eps2=eps2,
        energy_used=alloc.energy,
        t1=mI / b.d_max * rates.r11 * (1.0 - eps1),
        t2=mI / b.d_max * rates.r22_I * (1.0 - eps2),
        slack=slack,
    )


# -- public solvers --------------------------------------------------------------

def solve_optimal_cnoma(problem: AllocationProblem) -> AllocationResult:
    """Globally optimal C-NOMA allocation on the (mI, P_sum, p1I) search grid."""
    if problem.scheme not in (CNOMA_SC, CNOMA_MRC):
        raise ValueError("solve_optimal_cnoma needs a C-NOMA scheme")
    b = problem.budget
    mI, P = _with_direct_cell(problem, *_power_cells(problem))
    mII = b.d_max - mI
    with np.errstate(divide="ignore", invalid="ignore"):
        p2II = np.where(mII > 0, (problem.energy - mI * P) / np.maximum(mII, 1), 0.0)
    cells = _Cells(problem.channel, b, problem.scheme, mI, P, p2II)
    return _finish(problem, cells, *_search_cells(cells))


def solve_suboptimal_cnoma(problem: AllocationProblem) -> AllocationResult:
    """C-NOMA with the relay pinned at peak power; 2-D search over (mI, p1I)."""
    if problem.scheme not in (CNOMA_SC, CNOMA_MRC):
        raise ValueError("solve_suboptimal_cnoma needs a C-NOMA scheme")
    b = problem.budget
    E, peak = problem.energy, b.p_peak
    mI = _m_grid(b).astype(float)
    mII = b.d_max - mI
    P = np.maximum((E - mII * peak) / mI, 0.0)
    keep = (P > 0) & (P <= peak) & (mI * P >= mII * peak)
    mI, P = _with_direct_cell(problem, mI[keep], P[keep])
    p2II = np.where(mI < b.d_max, peak, 0.0)
    cells = _Cells(problem.channel, b, problem.scheme, mI, P, p2II)
    return _finish(problem, cells, *_search_cells(cells))


def solve_noma(problem: AllocationProblem) -> AllocationResult:
    """Single-phase NOMA: mI = D_max, P_sum = energy / D_max."""
    b = problem.budget
    prob = replace(problem, scheme=NOMA)
    mI, P = _with_direct_cell(prob, np.zeros(0), np.zeros(0))
    cells = _Cells(prob.channel, b, NOMA, mI, P, np.zeros(mI.size))
    return _finish(prob, cells, *_search_cells(cells))


def solve_oma(problem: AllocationProblem) -> AllocationResult:
    """Time-division baseline: max-min over (m1, p1) with m1 p1 + m2 p2 = energy."""
    b = problem.budget
    ch, E, peak, phi = problem.channel, problem.energy, b.p_peak, b.phi
    m1 = _m_grid(b).astype(float)
    m2 = b.d_max - m1
    lo = np.maximum((E - m2 * peak) / m1, 0.0)
    hi = np.minimum(peak, E / m1)
    keep = lo < hi
    m1, m2, lo, hi = m1[keep], m2[keep], lo[keep], hi[keep]
    if m1.size == 0:
        return AllocationResult.infeasible(OMA)

    def gap(p1):
        p2 = (E - m1 * p1) / m2
        t1 = m1 / b.d_max * np.asarray(fbl_rate(p1 * ch.g1 / phi, m1, b.eps1_th)) * (1 - b.eps1_th)
        t2 = m2 / b.d_max * np.asarray(fbl_rate(np.maximum(p2, 0.0) * ch.g2 / phi, m2, b.eps2_th)) * (1 - b.eps2_th)
        return t1, t2

    a, c = lo.copy(), hi.copy()
    for _ in range(100):
        mid = 0.5 * (a + c)
        t1, t2 = gap(mid)
        up = t1 < t2
        a = np.where(up, mid, a)
        c = np.where(up, c, mid)
    # the crossing, or the better endpoint when the curves never cross
    cands = np.stack([lo, 0.5 * (a + c), hi])
    mins = np.stack([np.minimum(*gap(x)) for x in cands])
    pick = mins.argmax(axis=0)
    cols = np.arange(m1.size)
    p1 = cands[pick, cols]
    T = mins[pick, cols]
    if not (T > 0).any():
        return AllocationResult.infeasible(OMA)
    best = np.nonzero(T == T.max())[0][0]
    p1b, m1b, m2b = float(p1[best]), int(m1[best]), int(m2[best])
    p2b = (E - m1b * p1b) / m2b
    g1, g2 = p1b * ch.g1 / phi, p2b * ch.g2 / phi
    r1 = float(fbl_rate(g1, m1b, b.eps1_th))
    r2 = float(fbl_rate(g2, m2b, b.eps2_th))
    T = float(T[best])
    # with a power cap binding the crossing may be off-grid: the user with
    # surplus backs its rate off until both throughputs match
    r1, e1, t1 = _match_throughput(g1, r1, m1b, b.d_max, T)
    r2, e2, t2 = _match_throughput(g2, r2, m2b, b.d_max, T)
    return AllocationResult(
        feasible=True,
        scheme=OMA,
        alloc=OmaAllocation(p1b, p2b, m1b, m2b),
        rates=RateAssignment(r1, r2, 0.0, 0.0),
        fair_throughput=T,
        eps1=e1,
        eps2=e2,
        energy_used=m1b * p1b + m2b * p2b,
        t1=t1,
        t2=t2,
    )


def _match_throughput(gamma, rate, m, d_max, target):
    """Largest rate <= ``rate`` whose throughput does not exceed ``target``."""

    def tput(r):
        return m / d_max * r * (1.0 - float(decoding_error(gamma, r, m)))

    if tput(rate) > target:
        rate = optimize.brentq(lambda r: tput(r) - target, 0.0, rate, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    e = float(decoding_error(gamma, rate, m))
    return rate, e, m / d_max * rate * (1.0 - e)


def solve(problem: AllocationProblem, suboptimal: bool = False) -> AllocationResult:
    """Dispatch on ``problem.scheme``."""
    if problem.scheme == OMA:
        return solve_oma(problem)
    if problem.scheme == NOMA:
        return solve_noma(problem)
    return solve_suboptimal_cnoma(problem) if suboptimal else solve_optimal_cnoma(problem)


# -- single-cell operations ------------------------------------------------------

def p1_bounds(ch: ChannelTriple, mI: int, p_sum: float, budget: SystemBudget) -> tuple[float, float]:
    """Search band for p1I from the zero-rate user-1 error proxies."""
    if p_sum <= 0:
        raise ValueError("p_sum must be positive")
    cells = _Cells(ch, budget, NOMA, [mI], [p_sum], [0.0])
    p_min, p_max = (float(x[0]) for x in cells.bounds())
    if not (0 < p_min < p_max):
        raise Infeasible(f"empty p1 band [{p_min:.6g}, {p_max:.6g}]")
    return p_min, p_max


def max_r11_for_user1(ch: ChannelTriple, a: Allocation, budget: SystemBudget) -> float:
    """Largest user-1 rate meeting the user-1 target with coupled user-2 rate."""
    g11 = snr_user1_arr(ch.g1, a.p1I, budget.phi)
    g12 = sinr_sic_arr(ch.g1, a.p1I, a.p2I, budget.phi)
    r, ok = user1_max_rate(np.array([g11]), np.array([g12]), np.array([float(a.mI)]), budget.eps1_th, budget.rate_ratio)
    if not ok[0]:
        raise Infeasible("user 1 misses its target even at zero rate")
    return float(r[0])


def find_p1_for_user2(ch, mI, p_sum, p2II, band, budget, scheme):
    """p1I where user 2's error meets its target, stepping then bisecting.

    Returns ``(p1, r11, status)`` with status ``"binding"``, ``"slack"`` or
    raises :class:`Infeasible`. ``band`` overrides the computed bounds.
    """
    cells = _Cells(ch, budget, scheme, [mI], [p_sum], [p2II])
    if band is not None:
        lo, hi = band
        cells.bounds = lambda: (np.array([lo]), np.array([hi]))
    p1, r, _, status = _search_cells(cells)
    if status[0] == 1:
        return float(p1[0]), float(r[0]), "binding"
    if status[0] == 2:
        return float(p1[0]), float(r[0]), "slack"
    raise Infeasible("no p1 meets both reliability targets")


# -- brute-force oracle ------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    result: AllocationResult
    resolution: float


def grid_oracle(problem: AllocationProblem, p1_points: int = 120, rate_points: int = 400) -> OracleResult:
    """Exhaustive search over (mI, P_sum, p1I, r11) with direct error checks.

    No band narrowing and no root finding: every grid point is evaluated
    and kept when both users meet their targets. ``resolution`` bounds the
    throughput lost to the p1I and rate discretisation around the optimum.
    Meant for tests; cost grows as cells x p1_points x rate_points.
    """
    b = problem.budget
    ch, phi, scheme = problem.channel, b.phi, problem.scheme
    ratio = b.rate_ratio
    if scheme in (CNOMA_SC, CNOMA_MRC):
        mI, P = _with_direct_cell(problem, *_power_cells(problem))
    else:
        mI, P = _with_direct_cell(problem, np.zeros(0), np.zeros(0))
    best = (-1.0, None)
    per_cell = []
    frac = (np.arange(1, p1_points + 1) - 0.5) / p1_points
    for m1, ps in zip(mI, P):
        m1 = float(m1)
        m2 = b.d_max - m1
        p2II = (problem.energy - m1 * ps) / m2 if m2 > 0 else 0.0
        p1 = ps / 2.0 * frac
        p2 = ps - p1
        g11 = p1 * ch.g1 / phi
        gsic = p2 * ch.g1 / (p1 * ch.g1 + phi)
        g22 = p2 * ch.g2 / (p1 * ch.g2 + phi)
        cap = np.log2(1.0 + g11)
        r = cap[:, None] * np.linspace(0.0, 1.0, rate_points)[None, :]
        r22 = ratio * r
        e1 = decoding_error(gsic[:, None], r22, m1) + decoding_error(g11[:, None], r, m1)
        e22 = decoding_error(g22[:, None], r22, m1)
        if m2 <= 0 or scheme == NOMA:
            e2 = e22
        elif scheme == CNOMA_SC:
            e12 = decoding_error(gsic[:, None], r22, m1)
            e2 = e22 * (e12 + decoding_error(p2II * ch.g12, r22 * m1 / m2, m2))
        else:
            e12 = decoding_error(gsic[:, None], r22, m1)
            mc = max(m1, m2)
            gc = m1 / mc * g22 + m2 / mc * p2II * ch.g12
            e2 = e12 * e22 + (1 - e12) * decoding_error(gc[:, None], r22 * m1 / mc, mc)
        ok = (e1 <= b.eps1_th) & (e2 <= b.eps2_th) & (r > 0)
        T = np.where(ok, m1 / b.d_max * (1 - b.eps1_th) * r, 0.0)
        tp = T.max(axis=1)
        j = int(tp.argmax())
        per_cell.append(tp)
        if tp[j] > best[0]:
            best = (float(tp[j]), (m1, ps, float(p1[j]), float(r[j, T[j].argmax()]), p2II, tp, j, cap[j]))
    if best[1] is None or best[0] <= 0:
        return OracleResult(AllocationResult.infeasible(scheme), 0.0)
    m1, ps, p1b, rb, p2II, tp, j, cap = best[1]
    nb = [tp[k] for k in (j - 1, j + 1) if 0 <= k < tp.size]
    step = m1 / b.d_max * cap / (rate_points - 1) + max([abs(tp[j] - x) for x in nb] + [0.0])
    m1, m2 = int(m1), int(b.d_max - m1)
    alloc = Allocation(p1b, ps - p1b, p2II if m2 > 0 else 0.0, m1, m2)
    rates = RateAssignment.coupled(rb, m1, m2, b)
    res = evaluate_allocation(problem, alloc, rates)
    return OracleResult(replace(res, fair_throughput=best[0]), step)
