"""User pairing for multi-user cells.

Users are indexed 0..n-1 in descending order of BS gain, so in any pair
the lower index is the strong user (relay) and the higher index the weak
one. Every pair in a cell with K pairs gets the energy D_max * P_ave / K.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .allocator import (
    CNOMA_MRC,
    CNOMA_SC,
    NOMA,
    OMA,
    AllocationProblem,
    AllocationResult,
    OmaAllocation,
    solve,
    solve_noma,
    solve_oma,
)
from .fbl import fbl_rate
from .link import ChannelTriple, RateAssignment, SystemBudget

CNOMA = "CNOMA"
MODES = (CNOMA, NOMA, OMA)
POLICIES = ("proposed", "exhaustive", "near_far", "noma", "hybrid")


@dataclass(frozen=True)
class UserSet:
    dl_gains: np.ndarray
    d2d_gains: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.dl_gains, dtype=float)
        d = np.asarray(self.d2d_gains, dtype=float)
        pos = np.asarray(self.positions, dtype=float).reshape(g.size, 2)
        if d.shape != (g.size, g.size):
            raise ValueError("d2d_gains must be count x count")
        if np.any(np.diff(g) >= 0):
            raise ValueError("dl_gains must be strictly descending")
        if not np.allclose(d, d.T) or np.any(np.diag(d) != 0):
            raise ValueError("d2d_gains must be symmetric with zero diagonal")
        object.__setattr__(self, "dl_gains", g)
        object.__setattr__(self, "d2d_gains", d)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.dl_gains.size

    @classmethod
    def from_unsorted(cls, dl_gains, d2d_gains, positions) -> "UserSet":
        """Reorder users so BS gains are descending."""
        dl = np.asarray(dl_gains, dtype=float)
        order = np.argsort(-dl, kind="stable")
        d2d = np.asarray(d2d_gains, dtype=float)[np.ix_(order, order)]
        return cls(dl[order], d2d, np.asarray(positions, dtype=float)[order])


@dataclass(frozen=True)
class PairingConfig:
    r0: float = 100.0
    combining: str = CNOMA_MRC
    suboptimal: bool = False
    exhaustive_cap: int = 12

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")
        if self.combining not in (CNOMA_SC, CNOMA_MRC):
            raise ValueError("combining must be CNOMA_SC or CNOMA_MRC")


@dataclass
class PairingResult:
    pairs: list
    modes: list
    per_pair: list
    matrix: np.ndarray
    min_throughput: float = 0.0
    jain: float = 0.0

    @classmethod
    def build(cls, count, pairs, modes, per_pair) -> "PairingResult":
        a = np.zeros((count, count), dtype=np.int8)
        for p in pairs:
            if len(p) == 2:
                a[p[0], p[1]] = a[p[1], p[0]] = 1
        ts = [r.fair_throughput for r in per_pair]
        try:
            j = jain_index(ts)
        except ValueError:
            j = 0.0
        return cls(list(pairs), list(modes), list(per_pair), a, min(ts) if ts else 0.0, j)

    @property
    def throughputs(self) -> list:
        return [r.fair_throughput for r in self.per_pair]


def jain_index(throughputs) -> float:
    """Jain's fairness index (sum T)^2 / (K sum T^2)."""
    t = np.asarray(throughputs, dtype=float)
    if t.size == 0 or np.any(t < 0):
        raise ValueError("throughputs must be nonempty and nonnegative")
    sq = float(np.sum(t * t))
    if sq == 0.0:
        raise ValueError("Jain index undefined for all-zero throughputs")
    return float(np.sum(t)) ** 2 / (t.size * sq)


def build_graph(users: UserSet, r0: float) -> np.ndarray:
    """Adjacency matrix: users within distance r0 of each other."""
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    pos = users.positions
    d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
    adj = d <= r0
    np.fill_diagonal(adj, False)
    return adj


def n_pairs(count: int) -> int:
    return math.ceil(count / 2)


class PairValues:
    """Memoised per-pair allocation results for one user set."""

    def __init__(self, users: UserSet, budget: SystemBudget, config: PairingConfig = PairingConfig()):
        self.users = users
        self.budget = budget
        self.config = config
        self.K = n_pairs(users.count)
        self.energy = budget.d_max * budget.p_ave / self.K
        self.adj = build_graph(users, config.r0)
        self._cache = {}

    def _problem(self, i, j, scheme):
        s, w = min(i, j), max(i, j)
        g = self.users.dl_gains
        ch = ChannelTriple(g[s], g[w], self.users.d2d_gains[s, w])
        return AllocationProblem(ch, self.budget, scheme, self.energy)

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def cnoma(self, i, j) -> AllocationResult:
        key = (min(i, j), max(i, j), CNOMA)
        return self._get(key, lambda: solve(self._problem(i, j, self.config.combining), self.config.suboptimal))

    def noma(self, i, j) -> AllocationResult:
        key = (min(i, j), max(i, j), NOMA)
        return self._get(key, lambda: solve_noma(self._problem(i, j, NOMA)))

    def oma(self, i, j) -> AllocationResult:
        key = (min(i, j), max(i, j), OMA)
        return self._get(key, lambda: solve_oma(self._problem(i, j, OMA)))

    def hybrid(self, i, j) -> tuple[str, AllocationResult]:
        """NOMA or OMA, whichever gives the larger fair throughput (NOMA on ties)."""
        n, o = self.noma(i, j), self.oma(i, j)
        if not n.feasible and not o.feasible:
            return OMA, o
        return (NOMA, n) if n.fair_throughput >= o.fair_throughput else (OMA, o)

    def value(self, i, j) -> tuple[str, AllocationResult]:
        """C-NOMA for users within relaying range, hybrid NOMA/OMA otherwise."""
        if self.adj[i, j]:
            return CNOMA, self.cnoma(i, j)
        return self.hybrid(i, j)

    def single(self, i) -> AllocationResult:
        """A leftover user served alone over the whole frame."""
        b = self.budget
        p = min(self.energy / b.d_max, b.p_peak)
        rate = float(fbl_rate(p * self.users.dl_gains[i] / b.phi, b.d_max, b.eps2_th))
        t = rate * (1.0 - b.eps2_th)
        return AllocationResult(
            feasible=rate > 0,
            scheme=OMA,
            alloc=OmaAllocation(p, 0.0, b.d_max, 0),
            rates=RateAssignment(rate, 0.0, 0.0, 0.0),
            fair_throughput=t,
            eps1=b.eps2_th,
            eps2=math.nan,
            energy_used=p * b.d_max,
            t1=t,
            t2=t,
        )


def hybrid_mode(i, j, users, budget, K=None, values: PairValues | None = None):
    """Mode and result of the better of NOMA and OMA for pair (i, j)."""
    values = values or _values(users, budget, K)
    return values.hybrid(i, j)


def pair_value(i, j, users, budget, K=None, values: PairValues | None = None, config=PairingConfig()):
    values = values or _values(users, budget, K, config)
    return values.value(i, j)


def _values(users, budget, K=None, config=PairingConfig()):
    v = PairValues(users, budget, config)
    if K is not None:
        v.K = K
        v.energy = budget.d_max * budget.p_ave / K
    return v


def _leftover(values, paired, pairs, modes, per_pair):
    for u in range(values.users.count):
        if not paired[u]:
            pairs.append((u,))
            modes.append(OMA)
            per_pair.append(values.single(u))


def propose_cnoma_pairing(users: UserSet, budget: SystemBudget, config=PairingConfig(), values=None) -> PairingResult:
    """Greedy C-NOMA pairing from the weakest user, then hybrid fill."""
    values = values or PairValues(users, budget, config)
    n = users.count
    paired = np.zeros(n, dtype=bool)
    pairs, modes, per_pair = [], [], []
    for i in range(n - 1, -1, -1):
        if paired[i]:
            continue
        psi = [j for j in range(n) if values.adj[i, j] and not paired[j]]
        if not psi:
            continue
        # tie-break: larger D2D gain, then smaller index
        j = max(psi, key=lambda c: (values.cnoma(i, c).fair_throughput, users.d2d_gains[i, c], -c))
        paired[i] = paired[j] = True
        pairs.append((min(i, j), max(i, j)))
        modes.append(CNOMA)
        per_pair.append(values.cnoma(i, j))
    i, j = n - 1, 0
    while i > j:
        if not paired[i]:
            while paired[j]:
                j += 1
            if j >= i:
                break
            mode, res = values.hybrid(j, i)
            paired[i] = paired[j] = True
            pairs.append((j, i))
            modes.append(mode)
            per_pair.append(res)
            j += 1
        i -= 1
    _leftover(values, paired, pairs, modes, per_pair)
    return PairingResult.build(n, pairs, modes, per_pair)


def _fixed_pairs(n):
    K = n // 2
    return [(k, K + k) for k in range(K)]


def noma_pairing(users: UserSet, budget: SystemBudget, config=PairingConfig(), values=None) -> PairingResult:
    """k-th strongest with k-th strongest of the weak half, all in NOMA mode."""
    values = values or PairValues(users, budget, config)
    pairs = _fixed_pairs(users.count)
    paired = np.zeros(users.count, dtype=bool)
    paired[[u for p in pairs for u in p]] = True
    per_pair = [values.noma(i, j) for i, j in pairs]
    modes = [NOMA] * len(pairs)
    _leftover(values, paired, pairs, modes, per_pair)
    return PairingResult.build(users.count, pairs, modes, per_pair)


def hybrid_pairing(users: UserSet, budget: SystemBudget, config=PairingConfig(), values=None) -> PairingResult:
    """Same pairs as :func:`noma_pairing`, each switching between NOMA and OMA."""
    values = values or PairValues(users, budget, config)
    pairs = _fixed_pairs(users.count)
    paired = np.zeros(users.count, dtype=bool)
    paired[[u for p in pairs for u in p]] = True
    modes, per_pair = [], []
    for i, j in pairs:
        mode, res = values.hybrid(i, j)
        modes.append(mode)
        per_pair.append(res)
    _leftover(values, paired, pairs, modes, per_pair)
    return PairingResult.build(users.count, pairs, modes, per_pair)


def near_far_order(gains: np.ndarray) -> tuple[np.ndarray, list]:
    """Deleted-link mask and far-user service order for a K x K near/far gain matrix.

    ``gains[a, b]`` links near user a to far user b. The K-1 weakest links
    are deleted (stable order on ties); far users with more deletions are
    served first, ties by index.
    """
    K = gains.shape[0]
    flat = np.argsort(gains, axis=None, kind="stable")[: K - 1]
    deleted = np.zeros(gains.shape, dtype=bool)
    deleted.flat[flat] = True
    counts = deleted.sum(axis=0)
    order = sorted(range(K), key=lambda b: (-counts[b], b))
    return deleted, order


def near_far_pairing(users: UserSet, budget: SystemBudget, config=PairingConfig(), values=None) -> PairingResult:
    """Near/far matching after pruning the K-1 weakest D2D links.

    Each far user, in service order, takes the free near user giving the
    best pair throughput over a surviving link (any free near user when all
    its links were pruned). Pairs beyond relaying range fall back to hybrid
    NOMA/OMA, as in every other policy.
    """
    values = values or PairValues(users, budget, config)
    n = users.count
    K = n // 2
    near, far = list(range(K)), list(range(K, 2 * K))
    deleted, order = near_far_order(users.d2d_gains[np.ix_(near, far)])
    free = set(near)
    pairs, modes, per_pair = [], [], []
    for b in order:
        f = far[b]
        cands = [a for a in sorted(free) if not deleted[a, b]] or sorted(free)
        a = max(cands, key=lambda c: (values.value(c, f)[1].fair_throughput, -c))
        free.discard(a)
        mode, res = values.value(a, f)
        pairs.append((a, f))
        modes.append(mode)
        per_pair.append(res)
    paired = np.zeros(n, dtype=bool)
    paired[[u for p in pairs for u in p]] = True
    _leftover(values, paired, pairs, modes, per_pair)
    return PairingResult.build(n, pairs, modes, per_pair)


def perfect_matchings(items):
    """Yield every pairing of ``items``; with an odd count one item stays single."""
    items = list(items)
    if not items:
        yield []
        return
    if len(items) % 2:
        for k in range(len(items)):
            rest = items[:k] + items[k + 1:]
            for m in perfect_matchings(rest):
                yield [(items[k],)] + m
        return
    a = items[0]
    for k in range(1, len(items)):
        rest = items[1:k] + items[k + 1:]
        for m in perfect_matchings(rest):
            yield [(a, items[k])] + m


class TooManyUsers(ValueError):
    pass


def exhaustive_pairing(users: UserSet, budget: SystemBudget, config=PairingConfig(), values=None) -> PairingResult:
    """Best matching by min pair throughput over all (2K-1)!! matchings."""
    if users.count > config.exhaustive_cap:
        raise TooManyUsers(f"exhaustive pairing refuses {users.count} users (cap {config.exhaustive_cap})")
    values = values or PairValues(users, budget, config)
    best, best_val = None, -1.0
    for m in perfect_matchings(range(users.count)):
        val = min(
            values.single(p[0]).fair_throughput if len(p) == 1 else values.value(*p)[1].fair_throughput
            for p in m
        )
        if val > best_val:
            best, best_val = m, val
    pairs, modes, per_pair = [], [], []
    for p in best:
        pairs.append(p)
        if len(p) == 1:
            modes.append(OMA)
            per_pair.append(values.single(p[0]))
        else:
            mode, res = values.value(*p)
            modes.append(mode)
            per_pair.append(res)
    return PairingResult.build(users.count, pairs, modes, per_pair)


POLICY_FUNCS = {
    "proposed": propose_cnoma_pairing,
    "exhaustive": exhaustive_pairing,
    "near_far": near_far_pairing,
    "noma": noma_pairing,
    "hybrid": hybrid_pairing,
}


def run_policies(users: UserSet, budget: SystemBudget, policies, config=PairingConfig()) -> dict:
    """Evaluate several policies on one cell, sharing pair solves between them."""
    values = PairValues(users, budget, config)
    out = {}
    for name in policies:
        if name not in POLICY_FUNCS:
            raise ValueError(f"unknown pairing policy {name!r}")
        out[name] = POLICY_FUNCS[name](users, budget, config, values)
    return out
