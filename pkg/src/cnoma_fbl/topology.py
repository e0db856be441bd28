"""Random cells and seeded Monte Carlo campaigns over pairing policies."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .link import SystemBudget
from .pairing import PairingConfig, PairingResult, UserSet, run_policies


@dataclass(frozen=True)
class CellConfig:
    radius: float = 300.0
    bandwidth: float = 1e6
    noise_psd: float = -173.0
    user_count: int = 4
    trials: int = 1000
    seed: int = 0
    min_bs_distance: float = 1.0
    fading_only: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.user_count < 2:
            raise ValueError("user_count must be at least 2")
        if not 0 < self.min_bs_distance < self.radius:
            raise ValueError("min_bs_distance must lie in (0, radius)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def path_loss_db(d, min_distance: float = 1.0):
    """Urban macro path loss in dB; distances below ``min_distance`` are clamped."""
    d = np.maximum(np.asarray(d, dtype=float), min_distance)
    out = 35.3 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def noise_power_watts(config: CellConfig) -> float:
    return 10.0 ** ((config.noise_psd + 10.0 * math.log10(config.bandwidth) - 30.0) / 10.0)


def sample_topology(config: CellConfig, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform positions in the annulus [min_bs_distance, radius] around the BS."""
    n = config.user_count
    r_lo, r_hi = config.min_bs_distance, config.radius
    r = np.sqrt(rng.uniform(r_lo**2, r_hi**2, n))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def sample_gain(d, sigma2: float, rng: np.random.Generator, min_distance: float = 1.0):
    """Noise-normalised Rayleigh gain per watt at distance ``d``."""
    d = np.asarray(d, dtype=float)
    h2 = rng.exponential(1.0, d.shape)
    out = h2 * 10.0 ** (-path_loss_db(d, min_distance) / 10.0) / sigma2
    return float(out) if out.ndim == 0 else out


def draw_users(config: CellConfig, rng: np.random.Generator, positions=None) -> UserSet:
    """Sample fading (and positions unless given) and return users sorted by BS gain."""
    if positions is None:
        positions = sample_topology(config, rng)
    sigma2 = noise_power_watts(config)
    n = len(positions)
    dl = sample_gain(np.hypot(positions[:, 0], positions[:, 1]), sigma2, rng, config.min_bs_distance)
    iu = np.triu_indices(n, 1)
    dist = np.hypot(*(positions[:, None, :] - positions[None, :, :]).transpose(2, 0, 1))
    d2d = np.zeros((n, n))
    d2d[iu] = sample_gain(dist[iu], sigma2, rng, config.min_bs_distance)
    d2d += d2d.T
    return UserSet.from_unsorted(dl, d2d, positions)


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial_index])


def fixed_positions(config: CellConfig) -> np.ndarray:
    return sample_topology(config, np.random.default_rng([config.seed]))


@dataclass
class TrialRecord:
    trial_index: int
    results: dict

    @property
    def min_throughput(self) -> dict:
        return {k: r.min_throughput for k, r in self.results.items()}

    @property
    def jain(self) -> dict:
        return {k: r.jain for k, r in self.results.items()}


@dataclass
class PolicyStats:
    mean_min_throughput: float
    se_min_throughput: float
    mean_jain: float
    se_jain: float
    infeasible_trials: int
    trials: int


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(np.mean(x)), se


def aggregate(records, policies) -> dict:
    records = sorted(records, key=lambda r: r.trial_index)
    out = {}
    for p in policies:
        t = [r.results[p].min_throughput for r in records]
        j = [r.results[p].jain for r in records]
        mt, st = _mean_se(t)
        mj, sj = _mean_se(j)
        out[p] = PolicyStats(mt, st, mj, sj, sum(v <= 0 for v in t), len(records))
    return out


def run_trial(config: CellConfig, policies, budget: SystemBudget, pairing=PairingConfig(), trial_index=0) -> TrialRecord:
    rng = trial_rng(config.seed, trial_index)
    positions = fixed_positions(config) if config.fading_only else None
    users = draw_users(config, rng, positions)
    return TrialRecord(trial_index, run_policies(users, budget, policies, pairing))


def _run_one(args):
    return run_trial(*args)


def run_trials(config: CellConfig, policies, budget: SystemBudget, pairing=PairingConfig(), workers: int = 1):
    """Run ``config.trials`` independent cells; returns (records, per-policy stats).

    Each trial draws from its own stream seeded by (seed, trial_index), so the
    outcome does not depend on ``workers``.
    """
    policies = list(policies)
    jobs = [(config, policies, budget, pairing, t) for t in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            records = list(ex.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    return records, aggregate(records, policies)
