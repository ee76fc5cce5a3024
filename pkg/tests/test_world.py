import numpy as np
import pytest

from guidancelab import (
    AnalyticPredictor,
    DiffusedMixture,
    MixtureWorld,
    analytic_noise_prediction,
    diffuse_mixture,
    forward_diffuse,
    log_density,
    make_schedule,
    posterior_log_mass,
    quadrant_world,
    rejection_sample_product,
    restrict,
    sample_data,
    score,
    single_gaussian_world,
    std_normal_world,
    weighted_product_log_density,
)


def three_component_world():
    return MixtureWorld.from_components(
        [
            (0.2, [0.0, 0.0], np.eye(2)),
            (0.3, [2.0, 0.0], np.eye(2)),
            (0.5, [0.0, 2.0], np.eye(2)),
        ],
        {"all": {0, 1, 2}, "pair": {1, 2}, "solo": {0}},
    )


def finite_difference_score(mix, z, h=1e-5):
    grad = np.zeros_like(z)
    for i in range(z.size):
        up = z.copy()
        dn = z.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (log_density(mix, up) - log_density(mix, dn)) / (2 * h)
    return grad


class TestWorldValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            MixtureWorld.from_components([(0.5, [0, 0], np.eye(2))], {})

    def test_covariance_must_be_spd(self):
        with pytest.raises(ValueError):
            MixtureWorld.from_components([(1.0, [0, 0], -np.eye(2))], {})
        with pytest.raises(ValueError, match="symmetric"):
            MixtureWorld.from_components([(1.0, [0, 0], [[1.0, 0.5], [0.0, 1.0]])], {})

    def test_labels_must_be_valid(self):
        with pytest.raises(ValueError, match="no components"):
            MixtureWorld.from_components([(1.0, [0, 0], np.eye(2))], {"empty": set()})
        with pytest.raises(ValueError, match="out-of-range"):
            MixtureWorld.from_components([(1.0, [0, 0], np.eye(2))], {"bad": {5}})


class TestRestrict:
    def test_full_condition_is_identity(self):
        world = three_component_world()
        sub = restrict(world, "all")
        np.testing.assert_array_equal(sub.weights, world.weights)
        np.testing.assert_array_equal(sub.means, world.means)

    def test_single_component_renormalizes_to_one(self):
        world = three_component_world()
        sub = restrict(world, "solo")
        assert sub.num_components == 1
        assert sub.weights[0] == pytest.approx(1.0, abs=1e-15)

    def test_pair_renormalization(self):
        sub = restrict(three_component_world(), "pair")
        np.testing.assert_allclose(sub.weights, [0.375, 0.625], rtol=1e-15)

    def test_unknown_condition(self):
        with pytest.raises(KeyError, match="nope"):
            restrict(three_component_world(), "nope")

    def test_restrict_then_superset_is_idempotent(self):
        world = quadrant_world()
        once = restrict(world, "top-left")
        twice = restrict(once, "left")  # left is a superset of top-left
        np.testing.assert_array_equal(once.means, twice.means)
        np.testing.assert_array_equal(once.weights, twice.weights)

    def test_labels_are_reindexed(self):
        world = quadrant_world()
        sub = restrict(world, "left")  # components 0, 1 -> same order
        assert sub.labels["top"] == frozenset({1})
        assert "right" not in sub.labels


class TestDiffuseMixture:
    def test_t0_is_identity(self, schedule):
        world = three_component_world()
        mix = diffuse_mixture(world, 0, schedule)
        np.testing.assert_array_equal(mix.means, world.means)
        np.testing.assert_array_equal(mix.covariances, world.covariances)

    def test_full_noise_limit(self):
        # beta = 0.999 drives abar to ~1e-3 after two steps
        sched = make_schedule("linear", T=2, beta_start=0.999, beta_end=0.999)
        world = three_component_world()
        mix = diffuse_mixture(world, 2, sched)
        np.testing.assert_allclose(mix.means, 0.0, atol=0.07)
        for c in mix.covariances:
            np.testing.assert_allclose(c, np.eye(2), atol=1e-3)

    def test_quarter_retention_closed_form(self):
        sched = make_schedule("linear", T=1, beta_start=0.75, beta_end=0.75)
        world = single_gaussian_world([4.0, 0.0], np.eye(2))
        mix = diffuse_mixture(world, 1, sched)
        np.testing.assert_allclose(mix.means[0], [2.0, 0.0], rtol=1e-15)
        np.testing.assert_allclose(mix.covariances[0], np.eye(2), rtol=1e-15)

    def test_time_out_of_range(self, schedule):
        with pytest.raises(ValueError):
            diffuse_mixture(three_component_world(), 1001, schedule)


class TestLogDensity:
    def test_standard_normal_at_origin(self, schedule):
        mix = diffuse_mixture(std_normal_world(), 0, schedule)
        assert log_density(mix, np.zeros(2)) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)

    def test_far_tail_is_finite(self, schedule):
        mix = diffuse_mixture(quadrant_world(), 500, schedule)
        val = log_density(mix, np.array([100.0, 0.0]))
        assert np.isfinite(val)

    def test_duplicate_components_collapse(self, schedule):
        single = std_normal_world()
        double = MixtureWorld.from_components(
            [(0.5, np.zeros(2), np.eye(2)), (0.5, np.zeros(2), np.eye(2))], {})
        z = np.array([0.7, -1.2])
        a = log_density(diffuse_mixture(single, 100, schedule), z)
        b = log_density(diffuse_mixture(double, 100, schedule), z)
        assert a == pytest.approx(b, rel=1e-14)

    def test_dimension_mismatch(self, schedule):
        mix = diffuse_mixture(std_normal_world(), 1, schedule)
        with pytest.raises(ValueError, match="dimension"):
            log_density(mix, np.zeros(3))


class TestScore:
    def test_single_component_is_mean_minus_z(self, schedule):
        world = single_gaussian_world([1.0, -2.0], np.eye(2))
        mix = diffuse_mixture(world, 0, schedule)
        z = np.array([0.3, 0.4])
        np.testing.assert_allclose(score(mix, z), np.array([1.0, -2.0]) - z, rtol=1e-12)
        np.testing.assert_allclose(score(mix, np.array([1.0, -2.0])), 0.0, atol=1e-15)

    def test_matches_finite_differences(self, schedule, rng):
        world = quadrant_world()
        for _ in range(100):
            t = int(rng.integers(0, 1001))
            mix = diffuse_mixture(world, t, schedule)
            z = rng.uniform(-6, 6, size=2)
            s = score(mix, z)
            fd = finite_difference_score(mix, z)
            assert np.linalg.norm(s - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-5

    def test_symmetry_axis_component_vanishes(self, schedule):
        world = MixtureWorld.from_components(
            [(0.5, [-2.0, 0.0], 0.7 * np.eye(2)), (0.5, [2.0, 0.0], 0.7 * np.eye(2))], {})
        mix = diffuse_mixture(world, 300, schedule)
        s = score(mix, np.array([0.0, 1.3]))
        assert abs(s[0]) < 1e-14

    def test_batched_evaluation_matches_loop(self, schedule, rng):
        mix = diffuse_mixture(quadrant_world(), 250, schedule)
        zs = rng.uniform(-5, 5, size=(7, 2))
        batched = score(mix, zs)
        for i, z in enumerate(zs):
            np.testing.assert_allclose(batched[i], score(mix, z), rtol=1e-14)


class TestAnalyticNoisePrediction:
    def test_standard_normal_world_closed_form(self, schedule, rng):
        world = std_normal_world()
        for t in (1, 250, 999):
            z = rng.standard_normal(2)
            abar = schedule.abar(t)
            np.testing.assert_allclose(
                analytic_noise_prediction(world, None, z, t, schedule),
                np.sqrt(1 - abar) * z, rtol=1e-12)

    def test_symmetric_world_vanishes_at_origin(self, schedule):
        pred = analytic_noise_prediction(quadrant_world(), None, np.zeros(2), 500, schedule)
        np.testing.assert_allclose(pred, 0.0, atol=1e-13)

    def test_conditional_single_component_closed_form(self, schedule):
        world = quadrant_world()
        z = np.array([0.5, 1.5])
        t = 321
        abar = schedule.abar(t)
        got = analytic_noise_prediction(world, "top-left", z, t, schedule)
        mu = np.array([-3.0, 3.0])
        var = abar * 0.5 + (1 - abar)
        want = -np.sqrt(1 - abar) * (np.sqrt(abar) * mu - z) / var
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_errors(self, schedule):
        world = quadrant_world()
        with pytest.raises(KeyError):
            analytic_noise_prediction(world, "nope", np.zeros(2), 10, schedule)
        with pytest.raises(ValueError):
            analytic_noise_prediction(world, None, np.zeros(2), 0, schedule)

    def test_equals_conditional_regression_target(self, schedule, rng):
        """The oracle must match E[noise | z_t] from actual forward draws."""
        world = MixtureWorld.from_components(
            [(0.5, [-2.0, 0.0], 0.5 * np.eye(2)), (0.5, [2.0, 0.0], 0.5 * np.eye(2))], {})
        t = 300
        n = 200_000
        z0, _ = world.sample(n, rng)
        eps = rng.standard_normal((n, 2))
        zt = forward_diffuse(z0, t, eps, schedule)
        edges = np.linspace(-2.5, 2.5, 6)
        for i in range(len(edges) - 1):
            for j in range(len(edges) - 1):
                mask = ((zt[:, 0] >= edges[i]) & (zt[:, 0] < edges[i + 1])
                        & (zt[:, 1] >= edges[j]) & (zt[:, 1] < edges[j + 1]))
                if mask.sum() < 2000:
                    continue
                center = zt[mask].mean(axis=0)
                want = analytic_noise_prediction(world, None, center, t, schedule)
                np.testing.assert_allclose(eps[mask].mean(axis=0), want, atol=0.05)


class TestSampleData:
    def test_deterministic(self, quadrant):
        a = sample_data(quadrant, None, 100, seed=7)
        b = sample_data(quadrant, None, 100, seed=7)
        np.testing.assert_array_equal(a, b)

    def test_moments(self):
        world = single_gaussian_world([1.0, -1.0], np.eye(2))
        pts = sample_data(world, None, 10_000, seed=3)
        np.testing.assert_allclose(pts.mean(axis=0), [1.0, -1.0], atol=0.05)

    def test_condition_restricts_support(self, quadrant):
        pts = sample_data(quadrant, "left", 2000, seed=5)
        assert np.all(pts[:, 0] < 0.5)  # components live at x = -3

    def test_unknown_condition(self, quadrant):
        with pytest.raises(KeyError):
            sample_data(quadrant, "nope", 10, seed=0)


class TestProductDensity:
    def test_posterior_mass_sums_to_one(self, quadrant, rng):
        z = rng.uniform(-6, 6, size=(50, 2))
        total = np.exp(posterior_log_mass(quadrant, "left", z)) \
            + np.exp(posterior_log_mass(quadrant, "right", z))
        np.testing.assert_allclose(total, 1.0, rtol=1e-10)

    def test_weighted_product_reduces_to_marginal(self, quadrant, rng):
        logdens = weighted_product_log_density(quadrant, {})
        mix = diffuse_mixture(quadrant, 0, make_schedule(T=10))
        z = rng.uniform(-6, 6, size=(20, 2))
        np.testing.assert_allclose(logdens(z), log_density(mix, z), rtol=1e-12)

    def test_rejection_sampler_lands_in_selected_quadrant(self, quadrant):
        pts = rejection_sample_product(quadrant, {"left": 1.0, "top": 1.0}, 2000, seed=11)
        frac = np.mean((pts[:, 0] < 0) & (pts[:, 1] > 0))
        assert frac > 0.97

    def test_rejection_sampler_rejects_negative_weights(self, quadrant):
        with pytest.raises(ValueError):
            rejection_sample_product(quadrant, {"left": -1.0}, 10, seed=0)


class TestJsonRoundTrip:
    def test_round_trip_preserves_everything(self, quadrant):
        clone = MixtureWorld.from_json(quadrant.to_json())
        np.testing.assert_array_equal(clone.weights, quadrant.weights)
        np.testing.assert_array_equal(clone.means, quadrant.means)
        np.testing.assert_array_equal(clone.covariances, quadrant.covariances)
        assert clone.labels == quadrant.labels


def test_analytic_predictor_wraps_the_oracle(schedule, quadrant, rng):
    pred = AnalyticPredictor(quadrant, schedule)
    z = rng.standard_normal((5, 2))
    np.testing.assert_array_equal(
        pred.predict(z, 100, "top"),
        analytic_noise_prediction(quadrant, "top", z, 100, schedule))
