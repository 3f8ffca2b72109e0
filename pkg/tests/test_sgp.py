"""Sparse GP regression tests against dense-GP and synthetic oracles."""

import numpy as np
import pytest

from gapracer.config import SgpConfig
from gapracer.sgp import (
    ExactGp,
    Observation,
    OpponentTrack,
    SgpModel,
    fit,
    predict,
    update_opponent,
)


def make_obs(s, y, noise):
    return [Observation(float(a), float(b), noise) for a, b in zip(s, y)]


class TestFit:
    def test_sine_reconstruction(self):
        # Synthetic ground truth: the posterior mean must beat 3x the
        # observation noise in RMSE.
        rng = np.random.default_rng(0)
        length = 60.0
        noise = 0.05
        s = rng.uniform(0, length, 200)
        truth = 0.5 * np.sin(2 * np.pi * s / length)
        y = truth + rng.normal(0, noise, 200)
        model = fit(make_obs(s, y, noise), 30, "lateral",
                    signal_std=0.5, lengthscale=5.0)
        q = np.linspace(5, length - 5, 100)
        mean, _ = model.predict(q)
        rmse = float(np.sqrt(np.mean(
            (mean - 0.5 * np.sin(2 * np.pi * q / length)) ** 2)))
        assert rmse < 3 * noise

    def test_matches_exact_gp_with_full_inducing(self):
        # Jittered-grid sample locations at >= half a lengthscale spacing
        # keep the Gram matrix well enough conditioned that a 1e-6
        # comparison between the two factorizations is meaningful.
        rng = np.random.default_rng(1)
        for trial in range(20):
            n = int(rng.integers(10, 50))
            ell = rng.uniform(1.5, 4.0)
            spacing = rng.uniform(0.5, 1.5) * ell
            s = (np.arange(n) + rng.uniform(0.2, 0.8, n)) * spacing
            y = rng.normal(0, 0.4, n)
            noise = 0.05
            sparse = fit(make_obs(s, y, noise), n, "lateral",
                         signal_std=0.5, lengthscale=ell, inducing=s)
            dense = ExactGp(s, y, np.full(n, noise),
                            signal_std=0.5, lengthscale=ell)
            q = rng.uniform(s.min() - 5, s.max() + 5, 40)
            ms, vs = sparse.predict(q)
            md, vd = dense.predict(q)
            assert np.max(np.abs(ms - md)) < 1e-6
            assert np.max(np.abs(vs - vd)) < 1e-6

    def test_single_noiseless_observation_interpolates(self):
        model = fit([Observation(10.0, 0.37, 1e-5)], 1, "lateral",
                    signal_std=0.5, lengthscale=5.0)
        mean, _ = model.predict(10.0)
        assert mean == pytest.approx(0.37, abs=1e-4)

    def test_contract_errors(self):
        obs = [Observation(0.0, 1.0, 0.1)]
        with pytest.raises(ValueError):
            fit(obs, 0)
        with pytest.raises(ValueError):
            fit([], 5)
        with pytest.raises(ValueError):
            Observation(0.0, 1.0, 0.0)

    def test_degenerate_cluster_flagged(self):
        obs = [Observation(5.0, 1.0, 0.1) for _ in range(8)]
        model = fit(obs, 4, "lateral")
        assert model.degenerate
        mean, _ = model.predict(5.0)
        assert np.isfinite(mean)

    def test_deterministic_fit(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(0, 40, 60)
        y = rng.normal(0, 0.3, 60)
        a = fit(make_obs(s, y, 0.05), 12)
        b = fit(make_obs(s, y, 0.05), 12)
        assert np.array_equal(a._alpha, b._alpha)
        assert np.array_equal(a.inducing, b.inducing)
        q = np.linspace(0, 40, 33)
        assert np.array_equal(a.predict(q)[0], b.predict(q)[0])
        assert np.array_equal(a.predict(q)[1], b.predict(q)[1])


class TestPredict:
    def test_prior_limit_far_from_data(self):
        s = np.linspace(0, 5, 30)
        model = fit(make_obs(s, np.random.default_rng(2).normal(0, 0.3, 30),
                             0.05), 10, signal_std=0.5, lengthscale=2.0)
        mean, var = model.predict(100.0)  # > 10 lengthscales away
        assert abs(mean) < 0.01 * 0.5
        assert var == pytest.approx(0.25, rel=0.01)

    def test_dense_cluster_variance_small(self):
        rng = np.random.default_rng(4)
        s = rng.normal(20.0, 0.3, 120)
        y = rng.normal(0.2, 0.05, 120)
        model = fit(make_obs(s, y, 0.05), 15, signal_std=0.5, lengthscale=5.0)
        _, var = model.predict(20.0)
        assert var < 0.05 ** 2 + 0.1 * 0.25

    def test_predict_before_fit_errors(self):
        model = SgpModel("lateral", 0.5, 5.0)
        with pytest.raises(ValueError):
            model.predict(0.0)

    def test_variance_nonnegative_everywhere(self):
        rng = np.random.default_rng(5)
        s = rng.uniform(0, 30, 80)
        model = fit(make_obs(s, rng.normal(0, 1, 80), 0.02), 20)
        _, var = model.predict(np.linspace(-50, 100, 500))
        assert np.all(var >= 0)

    def test_mean_fast_path_matches(self):
        rng = np.random.default_rng(6)
        s = rng.uniform(0, 30, 60)
        model = fit(make_obs(s, rng.normal(0, 1, 60), 0.05), 15)
        q = np.linspace(0, 30, 47)
        assert np.allclose(model.predict(q)[0], model.predict_mean(q),
                           atol=1e-12)
        assert predict(model, 3.0)[0] == model.predict(3.0)[0]

    def test_periodic_wrap_continuity(self):
        rng = np.random.default_rng(7)
        period = 50.0
        s = rng.uniform(0, period, 150)
        y = np.cos(2 * np.pi * s / period)
        model = fit(make_obs(s, y, 0.02), 30, signal_std=1.0,
                    lengthscale=4.0, period=period)
        m0, _ = model.predict(0.05)
        m1, _ = model.predict(period - 0.05)
        assert abs(m0 - m1) < 0.05
        # Wrapped queries agree exactly.
        a, _ = model.predict(3.0)
        b, _ = model.predict(3.0 + period)
        assert a == pytest.approx(b, abs=1e-12)


class TestOpponentTrack:
    def test_ring_buffer_eviction(self):
        cfg = SgpConfig(buffer_size=10, refit_every=1000)
        track = OpponentTrack(0, cfg)
        for i in range(11):
            update_opponent(track, (float(i), 0.0, 1.0), t=0.1 * i)
        assert len(track.d_observations) == 10
        assert track.d_observations[0].s == 1.0

    def test_refit_trigger_counts(self):
        cfg = SgpConfig(refit_every=20, m_inducing=5)
        track = OpponentTrack(0, cfg)
        for i in range(19):
            update_opponent(track, (float(i), 0.0, 1.0), t=0.1 * i)
        assert track.fits == 0
        update_opponent(track, (19.0, 0.0, 1.0), t=1.9)
        assert track.fits == 1
        for i in range(19):
            update_opponent(track, (float(20 + i), 0.0, 1.0), t=2.0)
        assert track.fits == 1
        update_opponent(track, (39.0, 0.0, 1.0), t=3.9)
        assert track.fits == 2

    def test_nonfinite_rejected(self):
        track = OpponentTrack(0, SgpConfig())
        update_opponent(track, (float("nan"), 0.0, 1.0), t=0.0)
        update_opponent(track, (1.0, float("inf"), 1.0), t=0.1)
        assert track.rejected == 2
        assert len(track.d_observations) == 0
