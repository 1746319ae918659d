import math
import warnings

import numpy as np
import pytest

from adaptpca.detector import (
    Detector,
    DetectorConfig,
    Flag,
    MeanBuffer,
    Mode,
    rolling_stats,
    threshold,
)
from adaptpca.errors import ConfigError, DataError, FormatError
from adaptpca.pca_core import batch_fit, reconstruction_error
from adaptpca.synth import Segment, gen_regime_stream, inject_spike, rng_for

SHIFT = DetectorConfig(s_c=25, n_components=2, s_m=150, lam=4.0, l_o=10)


def stationary(n=400, d=6, seed=0):
    series, _ = gen_regime_stream([Segment(n, 2, 1, noise_sigma=0.05)], d, seed)
    return series


class TestConfig:
    def test_defaults(self):
        cfg = DetectorConfig()
        assert (cfg.s_c, cfg.n_components, cfg.s_m, cfg.lam, cfg.l_o) == (15, 2, 170, 4.0, 20)
        assert cfg.grace == 2

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"s_c": 1},
            {"n_components": 0},
            {"s_m": 1},
            {"lam": -0.1},
            {"lam": math.nan},
            {"l_o": -1},
            {"grace": 0},
            {"s_c": 3, "n_components": 4},
            {"s_c": 2.5},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            DetectorConfig(**kwargs)

    def test_s_c_above_s_m_warns(self):
        with pytest.warns(RuntimeWarning, match="s_c"):
            DetectorConfig(s_c=10, s_m=5, n_components=1, grace=2)


class TestConstruction:
    def test_config_only(self):
        det = Detector(DetectorConfig(), 4)
        st = det.state
        assert st.mode is Mode.INITIALIZATION
        assert st.c_buffer == () and st.m_buffer == () and st.cnt == 0 and st.model is None

    def test_model_and_seed_errors(self, rng):
        model = batch_fit(rng.standard_normal((20, 4)), 2)
        det = Detector(DetectorConfig(), 4, model, [0.1, 0.2, 0.3, 0.4, 0.5])
        assert det.mode is Mode.CHECK
        assert det.state.m_buffer == (0.1, 0.2, 0.3, 0.4, 0.5)

    def test_model_with_wrong_d(self, rng):
        with pytest.raises(ConfigError, match="d="):
            Detector(DetectorConfig(), 5, batch_fit(rng.standard_normal((20, 4)), 2))

    def test_model_with_wrong_n(self, rng):
        with pytest.raises(ConfigError, match="N="):
            Detector(DetectorConfig(), 4, batch_fit(rng.standard_normal((20, 4)), 3))

    def test_too_many_seed_errors(self, rng):
        model = batch_fit(rng.standard_normal((20, 4)), 2)
        cfg = DetectorConfig(s_c=3, s_m=3)
        with pytest.raises(ConfigError, match="exceed"):
            Detector(cfg, 4, model, [0.1] * 4)

    def test_seed_errors_without_model(self):
        with pytest.raises(ConfigError):
            Detector(DetectorConfig(), 4, seed_errors=[1.0])

    def test_model_without_seeds_bootstraps_with_grace(self, rng):
        X = rng.standard_normal((40, 4))
        det = Detector(DetectorConfig(), 4, batch_fit(X, 2))
        v = det.run(X[:3])
        assert [x.flag for x in v[:2]] == [Flag.NO_ACTIVITY] * 2
        assert v[0].threshold is None
        assert v[2].threshold is not None


class TestRollingStats:
    def test_constant(self):
        assert rolling_stats([2.0, 2.0, 2.0]) == (2.0, 0.0)

    def test_population_sigma(self):
        assert rolling_stats([1.0, 3.0]) == (2.0, 1.0)

    def test_single(self):
        assert rolling_stats([0.7]) == (0.7, 0.0)

    def test_empty(self):
        with pytest.raises(DataError):
            rolling_stats([])

    def test_matches_two_pass(self, rng):
        for _ in range(20):
            values = rng.exponential(rng.uniform(1e-3, 1e3), rng.integers(2, 300))
            mu = math.fsum(values) / len(values)
            sigma = math.sqrt(math.fsum((v - mu) ** 2 for v in values) / len(values))
            got_mu, got_sigma = rolling_stats(values)
            assert abs(got_mu - mu) <= 1e-12 * mu
            assert abs(got_sigma - sigma) <= 1e-12 * max(sigma, mu)

    def test_order_independent(self, rng):
        values = rng.exponential(1.0, 50)
        assert rolling_stats(values) == rolling_stats(values[::-1])

    def test_circular_buffer_matches_window(self, rng):
        values = rng.exponential(2.0, 500)
        buf = MeanBuffer(37)
        for i, v in enumerate(values):
            buf.append(v)
            window = values[max(0, i - 36) : i + 1]
            assert len(buf) == len(window)
            assert buf.stats() == rolling_stats(window)


class TestThreshold:
    def test_examples(self):
        assert threshold(1.0, 0.5, 4.0) == 3.0
        assert threshold(0.7, 0.3, 0.0) == 0.7
        assert threshold(0.2, 0.05, 4.0) == pytest.approx(0.4, abs=1e-15)


class TestStep:
    def test_constant_stream_never_outlier(self):
        det = Detector(DetectorConfig(s_c=3, n_components=1, s_m=10), 3)
        v = det.run([[1.0, 2.0, 3.0]] * 4)
        assert [x.flag for x in v] == [Flag.CALIBRATING] * 3 + [Flag.NO_ACTIVITY]
        assert (v[3].error, v[3].threshold) == (0.0, 0.0)
        assert not v[2].calibrated

    def test_initialization_seeds_mean_buffer(self, rng):
        X = rng.standard_normal((5, 3))
        det = Detector(DetectorConfig(s_c=5, n_components=1, s_m=10), 3)
        det.run(X)
        assert det.mode is Mode.CHECK
        expected = reconstruction_error(batch_fit(X, 1), X)
        np.testing.assert_allclose(det.state.m_buffer, expected, rtol=1e-12)
        assert det.state.c_buffer == ()

    def test_rejects_bad_sample_without_state_change(self, rng):
        det = Detector(DetectorConfig(s_c=3, n_components=1, s_m=10), 2)
        det.run(rng.standard_normal((5, 2)))
        before = det.snapshot()
        with pytest.raises(DataError):
            det.step([np.nan, 1.0])
        with pytest.raises(DataError):
            det.step([1.0, 2.0, 3.0])
        assert det.snapshot() == before

    def test_threshold_uses_stats_before_sample(self, rng):
        det = Detector(SHIFT, 6)
        X = stationary().values
        det.run(X[:100])
        mu, sigma = rolling_stats(det.state.m_buffer)
        v = det.step(X[100])
        assert v.threshold == mu + 4.0 * sigma

    def test_spike_is_a_single_outlier(self):
        series = stationary(seed=0)
        base = Detector(SHIFT, 6).run(series.values)
        assert not any(v.is_outlier for v in base)
        spiked = inject_spike(series, int(series.timestamps[300]), 5.0)
        det = Detector(SHIFT, 6)
        verdicts = det.run(spiked.values[:301])
        spike = verdicts[300]
        assert spike.flag is Flag.OUTLIER and spike.error > spike.threshold
        assert det.state.cnt == 1
        assert spike.error not in det.state.m_buffer
        nxt = det.step(spiked.values[301])
        assert nxt.flag is Flag.NO_ACTIVITY and det.state.cnt == 0
        verdicts += [nxt] + det.run(spiked.values[302:])
        assert sum(v.is_outlier for v in verdicts) == 1
        assert not any(v.calibrated for v in verdicts)

    def test_persistent_shift_run_pattern(self):
        series, spec = gen_regime_stream(
            [Segment(1000, 2, 1, 0.05, loading_scale=1.0), Segment(600, 2, 2, 0.05, loading_scale=9.0)],
            12,
            seed=1,
            orthogonal=True,
        )
        v = Detector(SHIFT, 12).run(series.values)
        b = 1000
        assert [x.flag for x in v[b : b + 10]] == [Flag.OUTLIER] * 10
        assert [x.flag for x in v[b + 10 : b + 35]] == [Flag.CALIBRATION] * 25
        assert [x.calibrated for x in v[b : b + 35]] == [False] * 34 + [True]
        assert v[b + 35].flag is Flag.NO_ACTIVITY
        assert sum(x.calibrated for x in v) == 1

    def test_calibration_after_exactly_l_o_plus_s_c(self):
        cfg = DetectorConfig(s_c=4, n_components=1, s_m=20, lam=1.0, l_o=3)
        rng = rng_for(3)
        inliers = np.outer(rng.standard_normal(30), [1.0, 0.0]) + rng.standard_normal((30, 2)) * 0.01
        shifted = np.outer(rng.standard_normal(7), [0.0, 1.0]) * 50
        det = Detector(cfg, 2)
        det.run(inliers)
        det.step(det.model.mean)  # zero error: guarantees the run starts from cnt=0
        assert det.state.cnt == 0
        v = det.run(shifted)
        assert [x.flag for x in v] == [Flag.OUTLIER] * 3 + [Flag.CALIBRATION] * 4
        assert [x.calibrated for x in v] == [False] * 6 + [True]
        assert det.state.cnt == 0 and det.state.c_buffer == ()
        assert len({x.threshold for x in v}) == 1

    def test_l_o_zero_stages_every_outlier(self):
        cfg = DetectorConfig(s_c=2, n_components=1, s_m=20, lam=1.0, l_o=0)
        rng = rng_for(4)
        det = Detector(cfg, 2)
        det.run(np.outer(rng.standard_normal(20), [1.0, 0.0]) + rng.standard_normal((20, 2)) * 0.01)
        v = det.step([0.0, 100.0])
        assert v.flag is Flag.CALIBRATION and len(det.state.c_buffer) == 1


class TestInterval:
    def make(self):
        det = Detector(SHIFT, 6)
        X = stationary().values
        det.run(X[:200])
        return det, X

    def test_grace_samples_always_no_activity(self):
        det, X = self.make()
        det.begin_new_interval()
        assert det.state.m_buffer == () and det.state.grace == 2
        v = det.run([X[200] + 50.0, X[201] + 50.0])
        assert [x.flag for x in v] == [Flag.NO_ACTIVITY] * 2
        assert v[0].threshold is None
        assert det.state.m_buffer == (v[0].error, v[1].error)

    def test_third_sample_uses_grace_errors(self):
        det, X = self.make()
        det.begin_new_interval()
        v = det.run(X[200:203])
        mu, sigma = rolling_stats([v[0].error, v[1].error])
        assert v[2].threshold == mu + 4.0 * sigma

    def test_reset_twice_equals_once(self):
        a, X = self.make()
        b = Detector.restore(a.snapshot())
        a.begin_new_interval()
        b.begin_new_interval()
        b.begin_new_interval()
        assert a.snapshot() == b.snapshot()
        assert a.run(X[200:]) == b.run(X[200:])

    def test_model_retained(self):
        det, _ = self.make()
        model = det.model
        det.begin_new_interval()
        assert det.model is model

    def test_during_initialization_is_noop(self):
        det = Detector(SHIFT, 6)
        det.step(np.zeros(6))
        before = det.snapshot()
        with pytest.warns(RuntimeWarning):
            det.begin_new_interval()
        assert det.snapshot() == before


class TestSnapshot:
    def test_round_trip_identity(self):
        det = Detector(SHIFT, 6)
        det.run(stationary().values[:120])
        text = det.snapshot()
        assert Detector.restore(text).snapshot() == text

    @pytest.mark.parametrize("k", [0, 10, 25, 26, 200, 399])
    def test_restore_replay_matches(self, k):
        X = stationary().values.copy()
        X[250:300] += 3.0  # force a calibration inside the suffix for some k
        full = Detector(SHIFT, 6).run(X)
        det = Detector(SHIFT, 6)
        prefix = det.run(X[:k])
        restored = Detector.restore(det.snapshot())
        assert prefix + restored.run(X[k:]) == full

    def test_mid_calibration_snapshot(self):
        cfg = DetectorConfig(s_c=4, n_components=1, s_m=20, lam=1.0, l_o=1)
        rng = rng_for(7)
        X = np.vstack(
            [
                np.outer(rng.standard_normal(30), [1.0, 0.0]) + rng.standard_normal((30, 2)) * 0.01,
                np.outer(rng.standard_normal(8), [0.0, 1.0]) * 50,
            ]
        )
        det = Detector(cfg, 2)
        det.run(X[:30])
        det.step(det.model.mean)
        det.run(X[30:33])
        assert len(det.state.c_buffer) == 2
        restored = Detector.restore(det.snapshot())
        assert restored.run(X[33:]) == det.run(X[33:])

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda t: t.replace("v1", "v2", 1),
            lambda t: t[: len(t) // 2],
            lambda t: t.replace("mode Check", "mode bogus"),
            lambda t: t.replace("m_buffer 150", "m_buffer 151"),
            lambda t: "",
        ],
        ids=["version", "truncated", "mode", "count", "empty"],
    )
    def test_corrupt(self, mutate):
        det = Detector(SHIFT, 6)
        det.run(stationary().values[:300])
        with pytest.raises(FormatError):
            Detector.restore(mutate(det.snapshot()))


def test_determinism():
    X = stationary(seed=5).values
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert Detector(SHIFT, 6).run(X) == Detector(SHIFT, 6).run(X.copy())
