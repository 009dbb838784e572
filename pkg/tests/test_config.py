import numpy as np
import pytest

from dyncount import (
    ConfigError,
    DataError,
    ModelConfig,
    build_design_matrix,
    build_design_row,
    process_noise,
    state_dimension,
    state_layout,
    transition_matrix,
)


def poisson_cfg(q1, q2, S=50, **kw):
    return ModelConfig(family="poisson", q1=q1, q2=q2, S=S, **kw)


class TestStateDimension:
    def test_reference_model(self):
        assert state_dimension(poisson_cfg(1, 1)) == 5

    def test_intercept_only(self):
        assert state_dimension(poisson_cfg(0, 0)) == 2

    def test_zip_doubles(self):
        cfg = ModelConfig(family="zip", q1=1, q2=1, S=10)
        assert state_dimension(cfg) == 10

    def test_nb_matches_poisson(self):
        cfg = ModelConfig(family="nb", q1=2, q2=3, S=10, nb_alpha=1.0)
        assert state_dimension(cfg) == 2 * 3 + 3


class TestConfigValidation:
    def test_rejects_bad_family(self):
        with pytest.raises(ConfigError):
            ModelConfig(family="tweedie", q1=1, q2=1, S=10)

    def test_rejects_negative_counts(self):
        with pytest.raises(ConfigError):
            ModelConfig(family="poisson", q1=-1, q2=0, S=10)

    def test_rejects_bad_S(self):
        with pytest.raises(ConfigError):
            poisson_cfg(1, 1, S=0)

    def test_rejects_nonpositive_prior(self):
        with pytest.raises(ConfigError):
            poisson_cfg(1, 1, prior_scale=0.0)

    def test_rejects_wrong_tau_length(self):
        with pytest.raises(ConfigError):
            poisson_cfg(1, 1, tau=(1.0,))

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(ConfigError):
            poisson_cfg(1, 1, tau=(1.0, -2.0))

    def test_zip_tau_length_doubles(self):
        cfg = ModelConfig(family="zip", q1=1, q2=1, S=10, tau=(1, 2, 3, 4))
        assert cfg.n_smoothing == 4

    def test_zero_partition_rejected_outside_zip(self):
        with pytest.raises(ConfigError):
            poisson_cfg(1, 1, zero_q1=1)


class TestDesignRow:
    def test_reference_pattern(self):
        z = build_design_row([0.5, 0.3], poisson_cfg(1, 1))
        assert np.array_equal(z, [1.0, 0.0, 0.5, 0.0, 0.3])

    def test_all_varying(self):
        z = build_design_row([2.0, 3.0], poisson_cfg(2, 0))
        assert np.array_equal(z, [1.0, 0.0, 2.0, 0.0, 3.0, 0.0])

    def test_zip_mirror_blocks(self):
        cfg = ModelConfig(family="zip", q1=0, q2=1, S=10)
        u, v = build_design_row([0.2], cfg, [0.2])
        assert np.array_equal(u, [1.0, 0.0, 0.2, 0.0, 0.0, 0.0])
        assert np.array_equal(v, [0.0, 0.0, 0.0, 1.0, 0.0, 0.2])

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            build_design_row([0.5], poisson_cfg(1, 1))

    def test_nonfinite_covariate(self):
        with pytest.raises(DataError):
            build_design_row([np.nan, 0.3], poisson_cfg(1, 1))

    def test_linear_predictor_reproduction(self):
        # inner product with a state whose derivative slots are zero
        # reproduces the plain regression predictor
        rng = np.random.default_rng(7)
        cfg = poisson_cfg(2, 2)
        x = rng.normal(size=4)
        beta = rng.normal(size=3)   # intercept + 2 varying values
        alpha = rng.normal(size=2)
        gamma = np.zeros(state_dimension(cfg))
        gamma[0], gamma[2], gamma[4] = beta
        gamma[6:] = alpha
        z = build_design_row(x, cfg)
        expected = beta[0] + beta[1] * x[0] + beta[2] * x[1] + alpha @ x[2:]
        assert z @ gamma == pytest.approx(expected, rel=1e-12)


class TestTransition:
    def test_intercept_only(self):
        T = transition_matrix(poisson_cfg(0, 0, S=50))
        assert np.allclose(T, [[1.0, 0.02], [0.0, 1.0]])

    def test_single_constant(self):
        T = transition_matrix(poisson_cfg(0, 1, S=1))
        expected = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.array_equal(T, expected)

    def test_two_varying_blocks(self):
        T = transition_matrix(poisson_cfg(1, 0, S=4))
        block = np.array([[1.0, 0.25], [0.0, 1.0]])
        assert np.allclose(T[:2, :2], block)
        assert np.allclose(T[2:, 2:], block)
        assert np.allclose(T[:2, 2:], 0.0)

    def test_unit_eigenvalues(self):
        cfg = ModelConfig(family="zip", q1=2, q2=1, S=7)
        eig = np.linalg.eigvals(transition_matrix(cfg))
        assert np.allclose(eig, 1.0)


class TestProcessNoise:
    def test_derived_block_values(self):
        Q = process_noise(poisson_cfg(0, 0, S=50, tau=(1.0,)))
        assert Q[0, 0] == pytest.approx((1 / 50) ** 3 / 3, rel=1e-12)
        assert Q[0, 1] == pytest.approx((1 / 50) ** 2 / 2, rel=1e-12)
        assert Q[1, 1] == pytest.approx(1 / 50, rel=1e-12)

    def test_large_tau_limit_is_zero_block(self):
        Q = process_noise(poisson_cfg(0, 0, S=10), tau=(1e308,))
        assert np.all(np.abs(Q) < 1e-300)

    def test_constant_rows_exact_zero(self):
        Q = process_noise(poisson_cfg(0, 2, S=50, tau=(1.0,)))
        assert Q.shape == (4, 4)
        assert np.all(Q[2:, :] == 0.0)
        assert np.all(Q[:, 2:] == 0.0)

    @pytest.mark.parametrize("tau", [(0.01, 5.0), (100.0, 0.3)])
    def test_positive_semidefinite(self, tau):
        Q = process_noise(poisson_cfg(1, 1, S=13), tau=tau)
        assert np.allclose(Q, Q.T)
        assert np.min(np.linalg.eigvalsh(Q)) > -1e-15

    def test_rejects_bad_tau(self):
        with pytest.raises(ConfigError):
            process_noise(poisson_cfg(0, 0, S=10), tau=(0.0,))


class TestStateLayout:
    def test_slots_are_bijection(self):
        for cfg in (
            poisson_cfg(2, 3),
            ModelConfig(family="zip", q1=1, q2=2, S=5),
            ModelConfig(family="nb", q1=0, q2=0, S=5, nb_alpha=2.0),
        ):
            layout = state_layout(cfg)
            slots = layout.all_slots()
            assert sorted(slots) == list(range(state_dimension(cfg)))

    def test_named_columns(self):
        cfg = poisson_cfg(1, 1, varying=("speed",), constant=("age",))
        layout = state_layout(cfg)
        assert layout.slots("intercept") == (0, 1)
        assert layout.slots("speed") == (2, 3)
        assert layout.slots("age") == (4,)

    def test_zip_appends_zero_block(self):
        cfg = ModelConfig(family="zip", q1=0, q2=1, S=5, constant=("x1",))
        layout = state_layout(cfg)
        assert layout.slots("zero_intercept") == (3, 4)
        assert layout.slots("zero_x1") == (5,)


class TestDesignMatrix:
    def test_matches_rowwise(self):
        rng = np.random.default_rng(3)
        cfg = poisson_cfg(2, 1)
        X = rng.normal(size=(6, 3))
        Z = build_design_matrix(X, cfg)
        for i in range(6):
            assert np.array_equal(Z[i], build_design_row(X[i], cfg))

    def test_zip_distinct_partitions(self):
        cfg = ModelConfig(
            family="zip", q1=1, q2=1, S=5, zero_q1=0, zero_q2=0,
            zero_varying=(), zero_constant=(),
        )
        U, V = build_design_matrix(np.array([[0.5, 0.25]]), cfg, np.zeros((1, 0)))
        assert U.shape == V.shape == (1, 7)
        assert np.array_equal(U[0], [1, 0, 0.5, 0, 0.25, 0, 0])
        assert np.array_equal(V[0], [0, 0, 0, 0, 0, 1, 0])
