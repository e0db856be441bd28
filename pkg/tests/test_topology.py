import numpy as np
import pytest

from cnoma_fbl.link import SystemBudget
from cnoma_fbl.topology import (
    CellConfig,
    draw_users,
    fixed_positions,
    noise_power_watts,
    path_loss_db,
    run_trials,
    sample_gain,
    sample_topology,
    trial_rng,
)

CHEAP = SystemBudget(dp=0.24, m_stride=8)


def test_path_loss_examples():
    assert path_loss_db(1.0) == pytest.approx(35.3)
    assert path_loss_db(10.0) == pytest.approx(72.9)
    assert path_loss_db(300.0) == pytest.approx(35.3 + 37.6 * np.log10(300.0))
    assert path_loss_db(300.0) == pytest.approx(128.44, abs=5e-3)
    assert path_loss_db(0.2) == path_loss_db(1.0)
    assert path_loss_db(np.array([0.0, 1.0])).tolist() == [35.3, 35.3]


def test_noise_power():
    assert noise_power_watts(CellConfig(bandwidth=1.0)) == pytest.approx(10 ** -20.3)
    assert noise_power_watts(CellConfig()) == pytest.approx(5.01e-15, rel=1e-3)
    assert noise_power_watts(CellConfig(bandwidth=2e6)) == pytest.approx(2 * noise_power_watts(CellConfig()))


def test_config_validation():
    for bad in (dict(radius=0.0), dict(bandwidth=-1.0), dict(trials=0), dict(user_count=1), dict(seed=-1)):
        with pytest.raises(ValueError):
            CellConfig(**bad)


def test_topology_law():
    cfg = CellConfig(user_count=200_000)
    pos = sample_topology(cfg, np.random.default_rng(1))
    d = np.hypot(pos[:, 0], pos[:, 1])
    assert d.min() >= cfg.min_bs_distance and d.max() <= cfg.radius
    assert d.mean() == pytest.approx(2 / 3 * cfg.radius, rel=0.02)
    again = sample_topology(cfg, np.random.default_rng(1))
    assert np.array_equal(pos, again)


def test_gain_statistics():
    sigma2 = noise_power_watts(CellConfig())
    g = sample_gain(np.ones(100_000), 10 ** (-3.53), np.random.default_rng(3))
    assert g.mean() == pytest.approx(1.0, rel=0.01)
    h2 = np.random.default_rng(5).exponential(1.0, 4)
    g = sample_gain(np.full(4, 100.0), sigma2, np.random.default_rng(5))
    assert g / h2 == pytest.approx(np.full(4, 10 ** (-11.05) / sigma2))
    assert (g / h2)[0] == pytest.approx(1.78e3, rel=0.01)
    near = sample_gain(np.full(20_000, 50.0), sigma2, np.random.default_rng(6)).mean()
    far = sample_gain(np.full(20_000, 150.0), sigma2, np.random.default_rng(6)).mean()
    assert near > far


def test_draw_users_sorted_and_symmetric():
    u = draw_users(CellConfig(user_count=6), trial_rng(11, 0))
    assert np.all(np.diff(u.dl_gains) < 0)
    assert np.allclose(u.d2d_gains, u.d2d_gains.T)
    d_bs = np.hypot(*u.positions.T)
    assert np.all((d_bs >= 1.0) & (d_bs <= 300.0))


def test_single_trial_aggregate_equals_record():
    cfg = CellConfig(user_count=4, trials=1, seed=9)
    recs, agg = run_trials(cfg, ["proposed", "noma"], CHEAP)
    assert len(recs) == 1
    for p in ("proposed", "noma"):
        assert agg[p].mean_min_throughput == recs[0].min_throughput[p]
        assert agg[p].mean_jain == recs[0].jain[p]
        assert agg[p].se_min_throughput == 0.0


def test_reproducible_and_worker_independent():
    cfg = CellConfig(user_count=4, trials=4, seed=21)
    pol = ["proposed", "exhaustive", "hybrid"]
    _, a = run_trials(cfg, pol, CHEAP)
    _, b = run_trials(cfg, pol, CHEAP)
    _, c = run_trials(cfg, pol, CHEAP, workers=2)
    assert a == b == c
    for s in a.values():
        assert 0.0 <= s.mean_jain <= 1.0


def test_trial_streams_independent_of_campaign_size():
    small, _ = run_trials(CellConfig(user_count=4, trials=2, seed=5), ["noma"], CHEAP)
    big, _ = run_trials(CellConfig(user_count=4, trials=3, seed=5), ["noma"], CHEAP)
    assert small[1].min_throughput == big[1].min_throughput


def test_fading_only_keeps_positions():
    cfg = CellConfig(user_count=4, trials=3, seed=2, fading_only=True)
    pos = fixed_positions(cfg)
    u0 = draw_users(cfg, trial_rng(2, 0), pos)
    u1 = draw_users(cfg, trial_rng(2, 1), pos)
    assert sorted(map(tuple, u0.positions)) == sorted(map(tuple, u1.positions))
    assert not np.array_equal(u0.dl_gains, u1.dl_gains)


def test_exhaustive_dominates_proposed_on_average():
    cfg = CellConfig(user_count=4, trials=10, seed=13)
    recs, agg = run_trials(cfg, ["exhaustive", "proposed"], CHEAP)
    for r in recs:
        assert r.min_throughput["exhaustive"] >= r.min_throughput["proposed"] - 1e-12
    assert agg["exhaustive"].mean_min_throughput >= agg["proposed"].mean_min_throughput
