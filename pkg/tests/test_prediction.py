import numpy as np
import pytest

import dyncount as dc
from dyncount.families import Poisson
from dyncount.filtering import GaussianState, predict_step
from dyncount.prediction import coefficient_bands, k_step_state, predict_counts


CFG = dc.ModelConfig(family="poisson", q1=1, q2=1, S=10, prior_scale=10.0,
                     tau=(4.0, 4.0), varying=("x1",), constant=("x2",))


def fitted_snapshot(seed=0, n=500):
    rng = np.random.default_rng(seed)
    t = rng.uniform(size=n)
    x = rng.uniform(-0.5, 0.5, size=(n, 2))
    y = rng.poisson(np.exp(-0.5 + 0.6 * x[:, 0] + 0.3 * x[:, 1])).astype(float)
    data = dc.from_arrays(t, y, x, ("x1", "x2"), S=10, normalized=True)
    return dc.fit(data, CFG)


class TestKStepState:
    def test_one_step_equals_predict(self):
        snap = fitted_snapshot()
        direct = predict_step(
            snap.state, dc.transition_matrix(CFG), dc.process_noise(CFG)
        )
        via_k = k_step_state(snap.state, 1, CFG)
        assert np.array_equal(via_k.mean, direct.mean)
        assert np.array_equal(via_k.cov, direct.cov)

    def test_identity_transition_accumulates_noise(self):
        # with T = I the K-step covariance is P + K*Q
        state = GaussianState(np.zeros(2), np.eye(2), 0, 0.0)
        cfg = dc.ModelConfig(family="poisson", q1=0, q2=0, S=10, tau=(2.0,))
        Q = dc.process_noise(cfg)
        cov = np.eye(2).copy()
        T = np.eye(2)
        s = state
        for _ in range(3):
            s = predict_step(s, T, Q)
        assert np.allclose(s.cov, cov + 3 * Q, atol=1e-15)

    def test_k_fold_composition_identical(self):
        snap = fitted_snapshot(seed=2)
        state = snap.state
        for _ in range(4):
            state = predict_step(
                state, dc.transition_matrix(CFG), dc.process_noise(CFG),
                timepoint=dc.batch_midpoint(state.batch_index + 1, CFG.S),
            )
        via_k = k_step_state(snap.state, 4, CFG)
        assert np.array_equal(via_k.mean, state.mean)
        assert np.array_equal(via_k.cov, state.cov)

    def test_variance_monotone_in_horizon(self):
        snap = fitted_snapshot(seed=3)
        traces = [np.trace(k_step_state(snap.state, k, CFG).cov) for k in range(1, 6)]
        assert all(b >= a for a, b in zip(traces, traces[1:]))

    def test_rejects_nonpositive_horizon(self):
        snap = fitted_snapshot()
        with pytest.raises(ValueError):
            k_step_state(snap.state, 0, CFG)


class TestPredictMeans:
    def test_zero_state_gives_unit_mean(self):
        state = GaussianState(np.zeros(5), np.eye(5), 0, 0.0)
        out = dc.predict_mean_counts(state, [[0.7, -0.2]], Poisson(), CFG)
        assert out[0] == pytest.approx(1.0)

    def test_true_model_forecast_value(self):
        # evaluating the generating model at t=0.8, x=(0.5, 0.5)
        beta0 = 0.8 - 2.0
        beta1 = 0.2 * np.log(0.8) + 0.5
        eta = beta0 + beta1 * 0.5 + 0.25 * 0.5
        assert eta == pytest.approx(-0.847314355131421, abs=1e-12)
        mean = np.exp(eta)
        assert mean == pytest.approx(0.42856435945363724, abs=1e-12)
        gamma = np.zeros(5)
        gamma[0], gamma[2], gamma[4] = beta0, beta1, 0.25
        state = GaussianState(gamma, np.eye(5), 40, 0.8)
        out = dc.predict_mean_counts(state, [[0.5, 0.5]], Poisson(), CFG)
        assert out[0] == pytest.approx(mean, rel=1e-12)

    def test_zip_degenerate_inflation(self):
        cfg = dc.ModelConfig(family="zip", q1=0, q2=1, S=5, tau=(1.0, 1.0))
        gamma = np.zeros(6)
        gamma[3] = 30.0  # zero-predictor intercept
        state = GaussianState(gamma, np.eye(6), 0, 0.0)
        fam = dc.resolve_family("zip")
        out = dc.predict_mean_counts(state, [[0.4]], fam, cfg)
        assert out[0] == pytest.approx(0.0, abs=1e-10)

    def test_invariant_to_zero_column(self):
        state5 = GaussianState(np.arange(5.0), np.eye(5), 0, 0.0)
        cfg6 = dc.ModelConfig(family="poisson", q1=1, q2=2, S=10, tau=(1.0, 1.0))
        state6 = GaussianState(np.append(np.arange(5.0), 9.9), np.eye(6), 0, 0.0)
        base = dc.predict_mean_counts(state5, [[0.3, 0.7]], Poisson(), CFG)
        augmented = dc.predict_mean_counts(state6, [[0.3, 0.7, 0.0]], Poisson(), cfg6)
        assert augmented[0] == pytest.approx(base[0], rel=1e-12)


class TestPredictCounts:
    def test_pmf_rows_nearly_normalized(self):
        snap = fitted_snapshot(seed=4)
        result = predict_counts(snap, [[0.2, -0.1], [0.0, 0.4]], K=2, k_max=40)
        sums = result.pmf.sum(axis=1)
        assert np.all(result.means >= 0)
        assert np.all(sums <= 1.0 + 1e-9)
        assert np.all(sums > 1.0 - 1e-6)

    def test_horizon_recorded(self):
        snap = fitted_snapshot(seed=4)
        result = predict_counts(snap, [[0.0, 0.0]], K=3, k_max=5)
        assert result.horizon == 3
        assert result.state.batch_index == snap.state.batch_index + 3


class TestOneStepPredictions:
    def test_uses_pre_filter_states(self):
        rng = np.random.default_rng(8)
        n = 400
        t = rng.uniform(size=n)
        x = rng.uniform(-0.5, 0.5, size=(n, 2))
        y = rng.poisson(0.6 * np.ones(n)).astype(float)
        data = dc.from_arrays(t, y, x, ("x1", "x2"), S=10, normalized=True)
        early = data.take(data.batch_of <= 6)
        late = data.take(data.batch_of > 6)
        snap = dc.fit(early, CFG)
        result = dc.one_step_predictions(snap, late)
        assert result.means.shape == (late.n,)
        assert result.snapshot.state.batch_index == 10
        # first late batch must be scored against the pure prediction from
        # the fitted state, before any late data is filtered in
        first_batch = int(late.batch_of[0])
        pred = snap.state
        T, Q = dc.transition_matrix(CFG), dc.process_noise(CFG)
        for _ in range(first_batch - snap.state.batch_index):
            pred = predict_step(pred, T, Q)
        sl = late.rows_in_batch(first_batch)
        Z = dc.build_design_matrix(late.x[sl], CFG)
        assert np.allclose(result.means[sl], np.exp(Z @ pred.mean), rtol=1e-12)


class TestCoefficientBands:
    def test_reference_quantile(self):
        from scipy.stats import norm

        assert norm.ppf(0.975) == pytest.approx(1.959964, abs=1e-6)

    def test_zero_variance_collapses(self):
        snap = fitted_snapshot(seed=5)
        trace = snap.trace
        zeroed = dc.TraceSummary(
            batch_index=trace.batch_index,
            timepoint=trace.timepoint,
            n_obs=trace.n_obs,
            newton_iterations=trace.newton_iterations,
            predictive_loglik=trace.predictive_loglik,
            predicted_mean=trace.predicted_mean,
            predicted_var=np.zeros_like(trace.predicted_var),
            filtered_mean=trace.filtered_mean,
            filtered_var=np.zeros_like(trace.filtered_var),
        )
        series = coefficient_bands(zeroed, level=0.95, config=CFG)
        for band in series.coefficients:
            assert np.array_equal(band.lower, band.mean)
            assert np.array_equal(band.upper, band.mean)

    def test_band_ordering_and_grid(self):
        snap = fitted_snapshot(seed=6)
        forecast = [k_step_state(snap.state, k, CFG) for k in (1, 2, 3)]
        series = coefficient_bands(snap.trace, forecast, level=0.95, config=CFG)
        names = [b.name for b in series.coefficients]
        assert names == ["intercept", "x1", "x2"]
        for band in series.coefficients:
            assert np.all(band.lower <= band.mean)
            assert np.all(band.mean <= band.upper)
            assert np.all(np.diff(band.timepoints) > 0)
            assert band.phase[-1] == "forecast"

    def test_forecast_bands_widen(self):
        snap = fitted_snapshot(seed=7)
        forecast = [k_step_state(snap.state, k, CFG) for k in (1, 2, 3, 4)]
        series = coefficient_bands(snap.trace, forecast, level=0.95, config=CFG)
        intercept = series.coefficients[0]
        widths = (intercept.upper - intercept.lower)[-4:]
        assert np.all(np.diff(widths) > 0)

    def test_rejects_bad_level(self):
        snap = fitted_snapshot(seed=5)
        with pytest.raises(ValueError):
            coefficient_bands(snap.trace, level=1.0, config=CFG)
