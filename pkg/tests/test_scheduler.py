import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from infonoise.allocate import GateParams, OnsetPivot, PowerLawPivot, Weighting, apply_gate, calibrate_pivot
from infonoise.errors import AbsentDataError, ConfigError, DataError, DegenerateProfileError, DomainError
from infonoise.experiments import reference_schedule, simulate
from infonoise.grid import Profile, SigmaRange, build_log_grid, integrate, locate_bin, normalize_to_density
from infonoise.oracle import Dataset
from infonoise.scheduler import (
    FixedSchedule,
    Scheduler,
    SchedulerConfig,
    build_sampler,
    new_scheduler,
    rate_to_schedule,
)
from infonoise.toy import TwoPointModel, toy_mmse

PM1 = Dataset(np.array([[-1.0], [1.0]]))


def small(**kw) -> SchedulerConfig:
    base = dict(K=16, N_warm=0, M=100, B=8, beta=1.0, N_min=1, smoothing=False)
    base.update(kw)
    return SchedulerConfig(**base)


def feed_exact(sched: Scheduler, per_bin: int = 1):
    """Record toy MMSE at every center, then advance to the next refresh step."""
    g = sched.grid
    vals = toy_mmse(TwoPointModel(1.0), g.centers)
    for _ in range(per_bin):
        sched.record_loss(g.centers, vals)
    sched.step = (sched.step // sched.config.M + 1) * sched.config.M


# ---------------------------------------------------------------- config


@pytest.mark.parametrize(
    "kw",
    [dict(N_warm=-1), dict(M=0), dict(B=0), dict(beta=0.0), dict(beta=1.5), dict(N_min=0), dict(n_gate=1.5), dict(K=1)],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        new_scheduler(SchedulerConfig(**kw))


def test_config_round_trip(tmp_path):
    cfg = SchedulerConfig(K=40, beta=0.3, weighting=Weighting("edm", 0.7), pivot=PowerLawPivot(), smoothing=False)
    back = SchedulerConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"K": 32, "M": 50}))
    assert SchedulerConfig.load(p).K == 32
    with pytest.raises(ConfigError):
        SchedulerConfig.from_dict({"K": 32, "bogus": 1})
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        SchedulerConfig.load(p)


def test_tabulated_base_round_trip():
    cfg = SchedulerConfig(K=8)
    base = normalize_to_density(Profile(cfg.grid, np.arange(1.0, 9.0)))
    cfg = SchedulerConfig(K=8, pi_base=base)
    back = SchedulerConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    np.testing.assert_array_equal(back.base_density().density, base.density)
    with pytest.raises(ConfigError):
        new_scheduler(SchedulerConfig(K=9, pi_base=base))


# ---------------------------------------------------------------- construction and sampling


def test_fresh_scheduler():
    s = new_scheduler()
    assert s.snapshot.version == 0 and s.step == 0
    assert s.snapshot.density is s.base
    with pytest.raises(AbsentDataError):
        s.export_profile()


def test_warmup_draws_follow_base():
    s = new_scheduler(SchedulerConfig(N_warm=10**9))
    draws = s.sample_sigmas(np.random.default_rng(0), 100_000)
    lo, hi = np.log(0.002), np.log(80.0)
    ks = stats.kstest(np.log(draws), stats.uniform(lo, hi - lo).cdf).statistic
    assert ks < 0.01
    assert s.step == 100_000


def test_zero_warmup_with_base_snapshot_is_identical():
    a = new_scheduler(SchedulerConfig(N_warm=10**9))
    b = new_scheduler(SchedulerConfig(N_warm=0))
    np.testing.assert_array_equal(
        a.sample_sigmas(np.random.default_rng(3), 500), b.sample_sigmas(np.random.default_rng(3), 500)
    )


def test_single_and_batch_draws_agree():
    a, b = new_scheduler(), new_scheduler()
    ra, rb = np.random.default_rng(9), np.random.default_rng(9)
    singles = [a.sample_sigma(ra) for _ in range(20)]
    np.testing.assert_array_equal(singles, b.sample_sigmas(rb, 20))


def test_forced_spike_density():
    s = new_scheduler(small(K=16))
    q = np.zeros(16)
    q[5] = 1.0
    from infonoise.scheduler import ScheduleSnapshot

    s.snapshot = ScheduleSnapshot(1, build_sampler(q, s.grid))
    draws = s.sample_sigmas(np.random.default_rng(0), 10_000)
    assert np.mean(locate_bin(s.grid, draws) == 5) >= 0.99


# ---------------------------------------------------------------- record_loss


def test_fifo_eviction():
    s = new_scheduler(small(B=2))
    s.record_loss(1.0, 1.0)
    s.record_loss(1.0, 2.0)
    s.record_loss(1.0, 3.0)
    k = locate_bin(s.grid, 1.0)
    assert list(s.buffers[k]) == [2.0, 3.0] and s.counts[k] == 2


def test_lowest_sigma_goes_to_bin_zero():
    s = new_scheduler(small())
    s.record_loss(s.grid.edges[0], 0.5)
    assert s.counts[0] == 1


@pytest.mark.parametrize("bad", [np.nan, np.inf, -0.1])
def test_bad_loss_rejected_without_state_change(bad):
    s = new_scheduler(small())
    s.record_loss([0.1, 1.0], [0.2, 0.3])
    before = [list(b) for b in s.buffers]
    with pytest.raises(DataError):
        s.record_loss([0.5, 2.0], [0.1, bad])
    assert [list(b) for b in s.buffers] == before


def test_out_of_range_sigma_rejected():
    with pytest.raises(DomainError):
        new_scheduler(small()).record_loss(1e3, 0.1)


def test_length_mismatch():
    with pytest.raises(DataError):
        new_scheduler(small()).record_loss([0.1, 0.2], [0.3])


# ---------------------------------------------------------------- refresh guard


def test_no_refresh_off_period():
    s = new_scheduler(small())
    s.record_loss(s.grid.centers, np.ones(16))
    s.step = 150
    s._last_checked = 101
    assert s.maybe_refresh() is None


def test_no_refresh_with_underfilled_bin():
    s = new_scheduler(small(N_min=3))
    g = s.grid
    for _ in range(3):
        s.record_loss(g.centers[1:], np.ones(15))
    s.record_loss(g.centers[:1].repeat(2), np.ones(2))
    s.step = 100
    assert s.maybe_refresh() is None
    assert s.snapshot.version == 0


def test_no_refresh_during_warmup():
    s = new_scheduler(small(N_warm=500))
    s.record_loss(s.grid.centers, np.ones(16))
    s.step = 500
    assert s.maybe_refresh() is None
    s.step = 600
    assert s.maybe_refresh() is not None


def test_refresh_due_when_period_crossed():
    # a batch that jumps over a multiple of M still triggers the refresh
    s = new_scheduler(small())
    s.record_loss(s.grid.centers, np.ones(16))
    s.step = 130
    assert s.maybe_refresh() is not None
    assert s.maybe_refresh() is None


# ---------------------------------------------------------------- refresh contents


def test_exact_losses_reproduce_offline_pipeline():
    s = new_scheduler(small(K=48))
    feed_exact(s)
    snap = s.maybe_refresh()
    g = s.grid
    rate = Profile(g, toy_mmse(TwoPointModel(1.0), g.centers) / g.centers**3)
    c = calibrate_pivot(rate, OnsetPivot())
    gated = apply_gate(rate, GateParams(c, 3))
    expected = gated.values / integrate(gated)
    np.testing.assert_allclose(snap.density.density, expected, rtol=1e-9)
    np.testing.assert_allclose(s.export_profile().values, rate.values, rtol=1e-12)
    assert snap.pivot_c == c and snap.version == 1


def test_edm_weighting_divides_out():
    w = Weighting("edm", 0.5)
    s = new_scheduler(small(K=48, weighting=w))
    feed_exact(s)
    snap = s.maybe_refresh()
    phi = snap.density.density * (s.grid.centers**2 + 0.25) / (s.grid.centers * 0.5) ** 2
    np.testing.assert_allclose(phi / phi.sum(), snap.rate_profile.values / snap.rate_profile.values.sum(), rtol=1e-9)


def test_beta_one_profiles_repeat():
    s = new_scheduler(small(K=32, B=1))
    feed_exact(s)
    p1 = s.maybe_refresh().raw_rate.values
    feed_exact(s)
    p2 = s.maybe_refresh().raw_rate.values
    np.testing.assert_array_equal(p1, p2)


def test_ema_seeded_and_literal():
    g_vals = np.linspace(1.0, 2.0, 16)
    for from_zero, first in [(False, g_vals), (True, 0.5 * g_vals)]:
        s = new_scheduler(small(beta=0.5, ema_from_zero=from_zero))
        s.record_loss(s.grid.centers, g_vals)
        s.step = 100
        s.maybe_refresh()
        np.testing.assert_allclose(s.ema_mse, first, rtol=1e-15)


def test_buffers_retained_or_cleared():
    for clear in (False, True):
        s = new_scheduler(small(clear_buffers=clear))
        feed_exact(s)
        s.maybe_refresh()
        assert (s.counts.sum() == 0) == clear


def test_degenerate_refresh_keeps_snapshot():
    s = new_scheduler(small())
    s.record_loss(s.grid.centers, np.zeros(16))
    s.step = 100
    assert s.maybe_refresh() is None
    assert s.skipped_refreshes == 1 and s.snapshot.version == 0


@settings(max_examples=25)
@given(st.lists(st.lists(st.floats(0, 1e3), min_size=16, max_size=16), min_size=1, max_size=5))
def test_ema_bounded_and_snapshots_valid(rounds):
    s = new_scheduler(small(beta=0.3, B=1))
    hist = []
    last_version = 0
    for vals in rounds:
        s.record_loss(s.grid.centers, vals)
        hist.append(vals)
        s.step = (s.step // 100 + 1) * 100
        snap = s.maybe_refresh()
        if snap is not None:
            d = snap.density
            assert np.all(d.density >= 0)
            assert integrate(Profile(d.grid, d.density)) == pytest.approx(1.0, abs=1e-12)
            assert d.cdf[0] == 0 and d.cdf[-1] == 1 and np.all(np.diff(d.cdf) >= 0)
        assert s.snapshot.version >= last_version
        last_version = s.snapshot.version
    h = np.array(hist)
    seen = ~np.isnan(s.ema_mse)
    assert np.all(s.ema_mse[seen] >= h.min(axis=0)[seen] * (1 - 1e-12))
    assert np.all(s.ema_mse[seen] <= h.max(axis=0)[seen] * (1 + 1e-12))


# ---------------------------------------------------------------- build_sampler and helpers


def test_build_sampler_examples():
    g = build_log_grid(SigmaRange(0.1, 10), 10)
    uni = build_sampler(np.ones(10), g)
    np.testing.assert_allclose(uni.density, 1 / (10 - 0.1), rtol=1e-12)
    np.testing.assert_allclose(np.diff(uni.cdf), g.widths / 9.9, rtol=1e-12)
    q = np.zeros(10)
    q[4] = 2.0
    one = build_sampler(q, g)
    draws = np.array([float(x) for x in np.random.default_rng(0).random(100)])
    from infonoise.grid import inverse_cdf_sample

    xs = inverse_cdf_sample(one, draws)
    assert np.all((xs >= g.edges[4]) & (xs <= g.edges[5]))
    assert len(np.unique(xs)) >= 2
    with pytest.raises(DegenerateProfileError):
        build_sampler(np.zeros(10), g)
    with pytest.raises(DegenerateProfileError):
        build_sampler(-np.ones(10), g)


def test_fixed_schedule():
    g = build_log_grid(SigmaRange(0.1, 10), 10)
    f = FixedSchedule(build_sampler(np.ones(10), g))
    f.record_loss(1.0, 1.0)
    assert f.maybe_refresh() is None
    assert f.sample_sigmas(np.random.default_rng(0), 5).shape == (5,)


def test_rate_to_schedule_smoothing_flag():
    g = build_log_grid(SigmaRange(0.01, 100), 32)
    rate = Profile(g, toy_mmse(TwoPointModel(1.0), g.centers) / g.centers**3)
    a, _, _ = rate_to_schedule(rate, small(K=32, smoothing=False))
    b, _, _ = rate_to_schedule(rate, small(K=32, smoothing=True))
    assert not np.array_equal(a.density, b.density)


# ---------------------------------------------------------------- convergence to the offline reference


@pytest.mark.slow
def test_converges_to_offline_reference():
    cfg = SchedulerConfig(K=64, B=256, beta=0.3, M=2000, N_warm=5000, N_min=8, smoothing=False,
                          weighting=Weighting("unit"))
    ref = reference_schedule(PM1, cfg, method="toy")
    sched = new_scheduler(cfg)
    recs = list(simulate(PM1, sched, 5000 + 20 * 2000, np.random.default_rng(0), reference=ref))
    assert len(recs) == 20
    assert recs[-1]["tv_reference"] <= 0.05
