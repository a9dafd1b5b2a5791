import json

import numpy as np
import pytest

from noisestab import nn, theory
from noisestab.stability import NoiseConfig, embedding, perturbation_set


@pytest.fixture
def scalar_mlp():
    """Scalar-output net tapped at its final output (empty head)."""
    model = nn.build_mlp(3, [8], 1, task="regression", seed=31)
    model.feature_tap = len(model.layers)
    return model


class TestSecondMoment:
    def test_trace_is_one_for_any_sampling_count(self):
        for k in (1, 17, 301):
            report = theory.check_second_moment_trace(12, k, seed=4)
            assert report.passed
            assert report.statistic < 1e-12

    def test_single_sample_cannot_average_out(self):
        report = theory.check_second_moment(10, 1, seed=0)
        # one u u^T is nowhere near isotropic; the report records the miss
        assert report.statistic > 0.5
        assert not report.passed

    def test_large_sample_statistic_shrinks(self):
        small = theory.check_second_moment(10, 500, seed=1)
        large = theory.check_second_moment(10, 50000, seed=1)
        assert large.statistic < small.statistic
        assert large.passed

    def test_dimension_below_two_rejected(self):
        with pytest.raises(ValueError):
            theory.check_second_moment(1, 10, seed=0)


class TestJacobianNorm:
    def test_dead_network_reports_degenerate_zero(self):
        # the ReLU is dead at this input, so the zero-weight head gives a
        # fully zero Jacobian while the parameters themselves are not all zero
        frozen = nn.MlpModel([nn.Linear(np.array([[1.0, 0.0]])), nn.ReLU(),
                              nn.Linear(np.array([[0.0]]))], 3)
        report = theory.check_jacobian_norm(frozen, np.array([-1.0, 0.0]), 50,
                                            seed=2, tap=nn.TAP_FEATURE)
        assert report.details["degenerate"] is True
        assert report.statistic == 0.0
        assert report.passed

    def test_linear_model_matches_input_norm(self):
        model = nn.MlpModel([nn.Linear(np.array([[0.6, -0.8, 0.3, 0.5]]))], 1)
        x = np.array([0.9, -0.4, 0.2, 0.7])
        report = theory.check_jacobian_norm(model, x, 4000, seed=5)
        assert report.details["jacobian_frob2"] == pytest.approx(x @ x)
        assert report.statistic < 0.05
        assert report.passed

    def test_small_mlp_statistic_under_threshold(self, scalar_mlp):
        report = theory.check_jacobian_norm(scalar_mlp, np.array([0.4, -1.1, 0.6]),
                                            4000, seed=6)
        assert report.passed

    def test_vector_tap_equals_sum_of_coordinate_taps(self):
        # shared directions make the vector-valued check exactly the sum of
        # per-coordinate scalar checks
        model = nn.build_mlp(2, [5], 3, task="regression", seed=8)
        x = np.array([0.7, -0.3])
        cfg = NoiseConfig(zeta=1e-4, samplings=64, seed=9, tap=nn.TAP_PREDICTIVE)
        emb = embedding(model, x, perturbation_set(model, cfg))
        total = float(emb.vector @ emb.vector)
        per_coord = 0.0
        k = emb.blocks.shape[0]
        n = model.n_params(nn.SCOPE_ALL)
        for c in range(emb.blocks.shape[1]):
            coord_vec = np.sqrt(n / k) * emb.blocks[:, c]
            per_coord += float(coord_vec @ coord_vec)
        assert total == pytest.approx(per_coord, rel=1e-12)


class TestEquivalences:
    def test_identical_examples_have_zero_distance(self, scalar_mlp):
        x = np.array([0.5, 0.1, -0.2])
        report = theory.check_distance_equivalence(scalar_mlp, x, x, 100, seed=3)
        assert report.details["projected"] == 0.0
        assert report.details["gradient"] == 0.0
        assert report.passed

    def test_linear_model_distance_closed_form(self):
        model = nn.MlpModel([nn.Linear(np.array([[0.6, -0.8, 0.3, 0.5]]))], 1)
        x_i = np.array([0.9, -0.4, 0.2, 0.7])
        x_j = np.array([-0.3, 0.5, 0.8, -0.1])
        report = theory.check_distance_equivalence(model, x_i, x_j, 4000, seed=7)
        # gradients of theta @ x are the inputs themselves
        assert report.details["gradient"] == pytest.approx(
            float(np.sum((x_i - x_j) ** 2)))
        assert report.passed

    def test_mlp_distance_statistic_under_threshold(self, scalar_mlp):
        report = theory.check_distance_equivalence(
            scalar_mlp, np.array([0.4, -1.1, 0.6]), np.array([-0.8, 0.3, 1.2]),
            4000, seed=8)
        assert report.passed

    def test_zero_gradient_inner_product_is_degenerate_zero(self):
        model = nn.MlpModel([nn.Linear(np.array([[0.6, -0.8]]))], 1)
        report = theory.check_inner_product_equivalence(
            model, np.array([0.5, 0.2]), np.zeros(2), 200, seed=9)
        assert report.details["gradient"] == 0.0
        assert report.statistic < 0.05

    def test_self_inner_product_reduces_to_norm_check(self, scalar_mlp):
        x = np.array([0.4, -1.1, 0.6])
        inner = theory.check_inner_product_equivalence(scalar_mlp, x, x, 2000,
                                                       seed=10)
        norm = theory.check_jacobian_norm(scalar_mlp, x, 2000, seed=10)
        assert inner.details["projected"] == pytest.approx(
            norm.details["embedding_norm2"], rel=1e-9)

    def test_linear_model_inner_product_closed_form(self):
        model = nn.MlpModel([nn.Linear(np.array([[0.6, -0.8, 0.3, 0.5]]))], 1)
        x_i = np.array([0.9, -0.4, 0.2, 0.7])
        x_j = np.array([-0.3, 0.5, 0.8, -0.1])
        report = theory.check_inner_product_equivalence(model, x_i, x_j, 4000,
                                                        seed=11)
        assert report.details["gradient"] == pytest.approx(float(x_i @ x_j))
        assert report.passed


class TestConcentration:
    def test_loose_epsilon_rarely_fails(self):
        for kind in ("magnitude", "distance"):
            report = theory.concentration_trial(kind, 50, 8, 0.99, 400, seed=1)
            assert report.statistic < 0.01

    def test_acceptance_scale_parameters_pass(self):
        report = theory.concentration_trial("magnitude", 200, 64, 0.5, 500, seed=2)
        assert report.passed

    def test_doubling_k_strictly_decreases_mean_failure(self):
        report = theory.concentration_monotonicity(
            "magnitude", 200, [4, 8, 16], 0.25, 200, seeds=list(range(10)))
        assert report.passed
        fracs = report.details["mean_fractions"]
        assert fracs[0] > fracs[1] > fracs[2] > 0.0

    def test_deterministic_per_seed(self):
        a = theory.failure_fraction("inner_product", 100, 16, 0.4, 200, seed=3)
        b = theory.failure_fraction("inner_product", 100, 16, 0.4, 200, seed=3)
        assert a == b

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            theory.failure_fraction("volume", 10, 4, 0.5, 10, seed=0)

    def test_report_cites_bound_form(self):
        report = theory.concentration_trial("magnitude", 50, 16, 0.5, 50, seed=4)
        assert "exp(-c*eps^2*K)" in report.details["bound_form"]

    def test_network_backed_mode_agrees_with_simulation(self):
        model = nn.build_mlp(3, [6], 1, task="regression", seed=12)
        model.feature_tap = len(model.layers)
        pool = np.random.default_rng(13).normal(size=(8, 3))
        frac = theory.network_failure_fraction(model, pool, 64, 0.5, 60, seed=14)
        assert frac < 0.05


class TestEfficiencySweep:
    def test_unit_pool_needs_the_smallest_k(self):
        table = theory.sampling_efficiency_sweep(100, [1, 16, 64], 0.5, seed=5,
                                                 trials=120)
        ks = [row["required_samplings"] for row in table]
        assert ks[0] == min(ks)
        assert ks == sorted(ks)

    def test_growth_is_sublinear_in_pool_size(self):
        report = theory.efficiency_report(100, [8, 64], 0.5, seed=6, trials=120)
        assert report.statistic < 8.0
        assert report.passed

    def test_sweep_is_deterministic(self):
        a = theory.sampling_efficiency_sweep(100, [4, 32], 0.5, seed=7, trials=100)
        b = theory.sampling_efficiency_sweep(100, [4, 32], 0.5, seed=7, trials=100)
        assert a == b


class TestCheckReport:
    def test_passed_mirrors_threshold_comparison(self):
        good = theory.CheckReport.make("demo", 10, 0.01, 0.05, seed=1)
        bad = theory.CheckReport.make("demo", 10, 0.06, 0.05, seed=1)
        assert good.passed and not bad.passed

    def test_json_roundtrip_holds_all_fields(self):
        report = theory.CheckReport.make("demo", 10, 0.01, 0.05, seed=1, n=3)
        doc = json.loads(report.to_json())
        assert doc == {"name": "demo", "trials": 10, "statistic": 0.01,
                       "threshold": 0.05, "passed": True, "seed": 1,
                       "details": {"n": 3}}
