"""Tests for the von Mises density and its mode search"""
import math
import os
import sys

import numpy as np
import pytest
from scipy.integrate import quad

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.kde import (
    AngleSet,
    KdeError,
    KdeParams,
    NoConvergence,
    bin_index,
    find_mode,
    find_modes,
    histogram_init,
    kde_density,
    kde_grad,
    kde_hess,
    kde_log_value,
    kde_value,
    kernel_spectrum,
    von_mises_kernel,
)
from core.geometry import ArrayGeometry, enumerate_pairs, pair_doa_from_polar, to_polar_candidates
from core.resolver import candidate_matrix, interpretation_angles
from core.utils import TWO_PI, wrapped_difference

KAPPAS = (0.5, 10.0, 100.0)


def _i0_series(kappa, terms=60):
    """Modified Bessel I0 from its power series"""
    return sum((kappa / 2.0) ** (2 * k) / math.factorial(k) ** 2 for k in range(terms))


def _cluster(seed, n_true=12, n_scatter=12, spread=0.05):
    """Tight cluster around a random direction plus uniform clutter"""
    rng = np.random.default_rng(seed)
    centre = rng.uniform(0, TWO_PI)
    angles = np.concatenate((centre + rng.normal(0, spread, n_true),
                             rng.uniform(0, TWO_PI, n_scatter)))
    return centre, angles % TWO_PI


def _interpretation_sets(count, seed):
    """Random interpretations of noisy far-field bearings on the 6-microphone circle"""
    pairs = enumerate_pairs(ArrayGeometry.circular(0.2, 6))
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(count):
        phi = rng.uniform(0, TWO_PI)
        noisy = phi + rng.normal(0, rng.uniform(0, math.radians(45.0)), len(pairs))
        bearings = [to_polar_candidates(pair_doa_from_polar(p, pair), pair)
                    for p, pair in zip(noisy, pairs)]
        mask = int(rng.integers(0, 1 << len(pairs)))
        sets.append(interpretation_angles(candidate_matrix(bearings), [mask])[0])
    return np.vstack(sets)


def _oracle_case(seed):
    """(angles, κ): uniform 15-angle sets on even seeds, interpretation sets on odd ones"""
    kappa = KAPPAS[seed % len(KAPPAS)]
    if seed % 2:
        return _interpretation_sets(1, seed)[0], kappa
    return np.random.default_rng(seed).uniform(0, TWO_PI, 15), kappa


def _grid_mode(angles, kappa, step_deg=0.001):
    """Argmax of log g on a uniform grid and its value"""
    grid = np.radians(np.arange(0.0, 360.0, step_deg))
    values = np.concatenate([kde_log_value(part, angles, kappa) for part in np.array_split(grid, 20)])
    best = int(np.argmax(values))
    return grid[best], values[best]


def _assert_global_mode(angles, kappa):
    phi = find_mode(angles, KdeParams(kappa=kappa))
    grid_phi, grid_log = _grid_mode(angles, kappa)
    assert (wrapped_difference(phi, grid_phi) <= math.radians(0.01)
            or kde_log_value(phi, angles, kappa) >= grid_log - 1e-12), (kappa, angles)


@pytest.fixture
def params():
    """Default density parameters"""
    return KdeParams()


class TestKdeParams:
    """Test parameter validation"""

    def test_defaults(self, params):
        """Test the default concentration and resolution"""
        assert params.kappa == 10.0
        assert params.bins == 512
        assert params.bin_width == pytest.approx(TWO_PI / 512)

    @pytest.mark.parametrize("kwargs", [
        {"kappa": 0.0},
        {"kappa": -1.0},
        {"bins": 500},
        {"bins": 4},
        {"ncg_tolerance": 0.0},
        {"max_iterations": 0},
    ])
    def test_invalid(self, kwargs):
        """Test invalid parameters raise invalid_params"""
        with pytest.raises(KdeError) as exc:
            KdeParams(**kwargs)
        assert exc.value.error_type == "invalid_params"


class TestAngleSet:
    """Test the angle set value type"""

    def test_wraps_angles(self):
        """Test angles are wrapped into [0, 2π)"""
        angle_set = AngleSet([-math.pi / 2, 3 * math.pi])
        assert angle_set.angles == pytest.approx([3 * math.pi / 2, math.pi])
        assert len(angle_set) == 2
        assert angle_set.weights == pytest.approx([0.5, 0.5])

    def test_empty(self):
        """Test an empty set raises empty_angle_set"""
        with pytest.raises(KdeError) as exc:
            AngleSet([])
        assert exc.value.error_type == "empty_angle_set"

    def test_read_only(self):
        """Test the stored angles cannot be modified"""
        angle_set = AngleSet([0.1, 0.2])
        with pytest.raises(ValueError):
            angle_set.angles[0] = 1.0

    def test_rotated(self):
        """Test rotation adds the angle modulo 2π"""
        assert AngleSet([6.0]).rotated(1.0).angles[0] == pytest.approx(7.0 - TWO_PI)


class TestKernel:
    """Test the normalized von Mises kernel"""

    def test_series_oracle(self):
        """Test the peak value at κ=1 against an I0 power series"""
        expected = math.exp(1.0) / (TWO_PI * _i0_series(1.0))
        assert von_mises_kernel(0.0, 0.0, 1.0) == pytest.approx(expected, rel=1e-12)
        assert von_mises_kernel(0.0, 0.0, 1.0) == pytest.approx(0.3417, abs=1e-4)

    @pytest.mark.parametrize("kappa", [0.1, 1.0, 10.0, 100.0])
    def test_normalized(self, kappa):
        """Test the kernel integrates to one over the circle"""
        area, _ = quad(lambda x: von_mises_kernel(x, 1.0, kappa), 0.0, TWO_PI, points=[1.0], limit=200)
        assert area == pytest.approx(1.0, rel=1e-8)

    def test_large_kappa_is_finite(self):
        """Test the kernel stays finite where exp(κ) overflows"""
        value = von_mises_kernel(0.0, 0.0, 1000.0)
        assert math.isfinite(value)
        assert value == pytest.approx(math.sqrt(1000.0 / TWO_PI), rel=1e-3)

    def test_invalid_kappa(self):
        """Test a non-positive κ is rejected"""
        with pytest.raises(KdeError):
            von_mises_kernel(0.0, 0.0, 0.0)

    def test_mixture_normalized(self):
        """Test the mixture density integrates to one"""
        angles = np.array([0.1, 2.0, 4.5])
        area, _ = quad(lambda x: kde_density(x, angles, 10.0), 0.0, TWO_PI, limit=200)
        assert area == pytest.approx(1.0, rel=1e-8)

    def test_mixture_array_input(self):
        """Test a grid of φ gives one density value per point"""
        values = kde_density(np.linspace(0, 1, 5), np.array([0.5]), 10.0)
        assert values.shape == (5,)
        assert np.argmax(values) == 2


class TestDerivatives:
    """Test the density value and its derivatives"""

    def test_scalar_returns_float(self):
        """Test scalar φ returns a float"""
        angles = np.array([0.1, 0.2])
        for func in (kde_value, kde_grad, kde_hess):
            assert isinstance(func(0.3, angles, 10.0), float)

    def test_gradient_matches_finite_difference(self):
        """Test g′ against central differences of g"""
        _, angles = _cluster(1)
        h = 1e-6
        for phi in np.linspace(0, TWO_PI, 17):
            numeric = (kde_value(phi + h, angles, 5.0) - kde_value(phi - h, angles, 5.0)) / (2 * h)
            assert kde_grad(phi, angles, 5.0) == pytest.approx(numeric, rel=1e-5, abs=1e-3)

    def test_hessian_matches_finite_difference(self):
        """Test g″ against central differences of g′"""
        _, angles = _cluster(2)
        h = 1e-6
        for phi in np.linspace(0, TWO_PI, 17):
            numeric = (kde_grad(phi + h, angles, 5.0) - kde_grad(phi - h, angles, 5.0)) / (2 * h)
            assert kde_hess(phi, angles, 5.0) == pytest.approx(numeric, rel=1e-5, abs=1e-2)

    def test_random_points(self):
        """Test g′ and g″ against central differences at 1000 random (set, κ, φ)"""
        rng = np.random.default_rng(11)
        for _ in range(1000):
            kappa = rng.uniform(0.1, 100.0)
            angles = rng.uniform(0, TWO_PI, int(rng.integers(1, 31)))
            phi = rng.uniform(0, TWO_PI)
            h = 1e-4 / max(kappa, 1.0)
            scale = kappa * kde_value(phi, angles, kappa)

            numeric = (kde_value(phi + h, angles, kappa) - kde_value(phi - h, angles, kappa)) / (2 * h)
            assert abs(kde_grad(phi, angles, kappa) - numeric) <= 1e-5 * max(abs(numeric), 1e-3 * scale)

            numeric = (kde_grad(phi + h, angles, kappa) - kde_grad(phi - h, angles, kappa)) / (2 * h)
            curvature = 1e-3 * scale * max(kappa, 1.0)
            assert abs(kde_hess(phi, angles, kappa) - numeric) <= 1e-5 * max(abs(numeric), curvature)

    def test_log_value_matches_value(self):
        """Test log g equals the log of kde_value where both are finite"""
        _, angles = _cluster(5)
        for kappa in (0.5, 10.0, 300.0):
            for phi in (0.0, 1.7, 4.0):
                assert kde_log_value(phi, angles, kappa) == pytest.approx(
                    math.log(kde_value(phi, angles, kappa)), rel=1e-12)

    def test_log_value_where_value_overflows(self):
        """Test κ=1000 overflows g but not log g"""
        angles = np.radians([30.0, 30.5, 31.0])
        phi = math.radians(30.5)
        with np.errstate(over="ignore"):
            assert kde_value(phi, angles, 1000.0) == math.inf
        expected = 1000.0 + math.log(sum(math.exp(1000.0 * (math.cos(phi - a) - 1.0)) for a in angles))
        assert kde_log_value(phi, angles, 1000.0) == pytest.approx(expected, rel=1e-12)


class TestHistogramInit:
    """Test the histogram starting point"""

    def test_edge_goes_to_higher_bin(self):
        """Test an angle on a bin edge lands in the higher bin"""
        assert list(bin_index(np.array([0.0, math.pi / 4, TWO_PI - 1e-12]), 8)) == [0, 1, 7]

    def test_returns_bin_centre(self):
        """Test the start is the centre of the winning bin"""
        params = KdeParams(bins=8)
        assert histogram_init(np.array([0.1, 0.1, 0.1]), params) == pytest.approx(0.5 * TWO_PI / 8)

    def test_batch_shape(self, params):
        """Test a batch gives one start per row"""
        phi0 = histogram_init(np.array([[0.1, 0.1], [3.0, 3.0]]), params)
        assert phi0.shape == (2,)
        assert abs(phi0[1] - 3.0) <= params.bin_width

    def test_spectrum_cached(self):
        """Test the kernel spectrum is computed once per (κ, bins)"""
        assert kernel_spectrum(7.0, 64) is kernel_spectrum(7.0, 64)
        assert kernel_spectrum(7.0, 64) is not kernel_spectrum(7.0, 128)


class TestFindMode:
    """Test the mode search"""

    def test_symmetric_triple(self, params):
        """Test {0°, 10°, 20°} peaks at 10°"""
        phi = find_mode(np.radians([0.0, 10.0, 20.0]), params)
        assert phi == pytest.approx(math.radians(10.0), abs=1e-8)

    def test_all_equal(self, params):
        """Test identical angles peak at that angle"""
        mu = 4.2
        assert find_mode(np.full(5, mu), params) == pytest.approx(mu, abs=1e-9)

    def test_across_seam(self, params):
        """Test a cluster straddling 0 peaks at 0"""
        phi = find_mode(np.radians([350.0, 355.0, 5.0, 10.0]), params)
        assert wrapped_difference(phi, 0.0) < 1e-8

    def test_stationary_maximum(self, params):
        """Test the mode is a stationary maximum of the density"""
        _, angles = _cluster(3)
        phi = find_mode(angles, params)
        scale = kde_value(phi, angles, params.kappa) * params.kappa
        assert abs(kde_grad(phi, angles, params.kappa)) < 1e-8 * scale
        assert kde_hess(phi, angles, params.kappa) < 0

    @pytest.mark.parametrize("seed", range(10))
    def test_dense_grid_oracle(self, params, seed):
        """Test the mode matches the maximum of the density on a 2^16 grid"""
        centre, angles = _cluster(seed)
        grid = np.linspace(0, TWO_PI, 1 << 16, endpoint=False)
        values = kde_value(grid, angles, params.kappa)
        phi = find_mode(angles, params)
        assert kde_value(phi, angles, params.kappa) >= values.max() * (1 - 1e-9)
        assert wrapped_difference(phi, grid[np.argmax(values)]) <= TWO_PI / (1 << 16)

    @pytest.mark.parametrize("kappa", KAPPAS)
    def test_random_grid_oracle(self, kappa):
        """Test random sets peak where a 0.001° grid of the density peaks"""
        for seed in range(10):
            angles, _ = _oracle_case(seed)
            _assert_global_mode(angles, kappa)

    @pytest.mark.slow
    def test_random_grid_oracle_full(self):
        """Test 500 random (set, κ) cases against the 0.001° grid maximum"""
        for seed in range(500):
            _assert_global_mode(*_oracle_case(seed))

    def test_shift_equivariance(self, params):
        """Test rotating the set rotates the mode"""
        _, angles = _cluster(4)
        base = find_mode(angles, params)
        for theta in (0.3, 2.0, 5.5):
            assert wrapped_difference(find_mode(angles + theta, params), base + theta) < 1e-7

    def test_large_kappa(self):
        """Test κ where exp(κ) overflows still converges"""
        angles = np.radians([30.0, 30.5, 31.0])
        phi = find_mode(angles, KdeParams(kappa=2000.0))
        assert phi == pytest.approx(math.radians(30.5), abs=1e-8)

    def test_refine_off(self):
        """Test refine=False returns the histogram start"""
        params = KdeParams(bins=8, refine=False)
        assert find_mode(np.array([0.1, 0.1]), params) == pytest.approx(0.5 * TWO_PI / 8)

    def test_no_convergence(self):
        """Test one iteration is not enough and the best iterate is reported"""
        with pytest.raises(NoConvergence) as exc:
            find_mode(np.radians([0.0, 10.0, 20.0]), KdeParams(max_iterations=1))
        assert exc.value.error_type == "no_convergence"
        assert abs(exc.value.best - math.radians(10.0)) < 1e-2
        assert abs(exc.value.phi0 - math.radians(10.0)) <= KdeParams().bin_width

    def test_not_one_dimensional(self, params):
        """Test find_mode rejects a batch"""
        with pytest.raises(KdeError):
            find_mode(np.zeros((2, 3)), params)


class TestFindModes:
    """Test the batched mode search"""

    def test_batch_matches_single(self, params):
        """Test each row gets the mode it gets alone"""
        batch = np.vstack([_cluster(seed)[1] for seed in range(8)])
        result = find_modes(batch, params)
        assert result.not_converged == 0
        for row, phi in zip(batch, result.phi_hat):
            assert phi == pytest.approx(find_mode(row, params), abs=1e-12)

    def test_never_below_start(self, params):
        """Test refinement never lowers the density below the histogram start"""
        batch = np.vstack([np.random.default_rng(s).uniform(0, TWO_PI, 30) for s in range(20)])
        result = find_modes(batch, params)
        for row, phi, phi0 in zip(batch, result.phi_hat, result.phi0):
            assert kde_value(phi, row, params.kappa) >= kde_value(phi0, row, params.kappa) * (1 - 1e-12)

    def test_angle_set_input(self, params):
        """Test an AngleSet is accepted"""
        result = find_modes(AngleSet([1.0, 1.0, 1.0]), params)
        assert result.phi_hat[0] == pytest.approx(1.0, abs=1e-9)
        assert result.converged.all()


class TestReferenceValues:
    """Test closed-form values of the kernel and density"""

    def test_uniform_limit(self):
        """Test a tiny κ approaches the uniform density 1/(2π)"""
        for phi in (0.0, 1.0, math.pi):
            assert von_mises_kernel(phi, 0.0, 1e-9) == pytest.approx(1.0 / TWO_PI, rel=1e-8)

    def test_opposite_point(self):
        """Test the kernel opposite its centre at κ=10"""
        expected = math.exp(-10.0) / (TWO_PI * _i0_series(10.0))
        assert von_mises_kernel(math.pi, 0.0, 10.0) == pytest.approx(expected, rel=1e-10)

    def test_value_of_identical_angles(self):
        """Test N identical angles give N·exp(κ) at their common value"""
        assert kde_value(2.0, np.full(4, 2.0), 3.0) == pytest.approx(4 * math.exp(3.0))

    def test_value_symmetry(self):
        """Test {0, π} has equal density at π/2 and 3π/2"""
        angles = np.array([0.0, math.pi])
        assert kde_value(math.pi / 2, angles, 5.0) == pytest.approx(kde_value(3 * math.pi / 2, angles, 5.0))

    def test_value_direct_sum(self):
        """Test the value against summing three exponentials by hand"""
        angles = np.radians([0.0, 10.0, 20.0])
        phi = math.radians(10.0)
        expected = sum(math.exp(10.0 * math.cos(phi - a)) for a in angles)
        assert kde_value(phi, angles, 10.0) == pytest.approx(expected, rel=1e-14)

    def test_single_angle_stationary(self):
        """Test a single angle is a maximum with g″ = -κ·exp(κ)"""
        angles = np.array([1.3])
        assert kde_grad(1.3, angles, 4.0) == pytest.approx(0.0, abs=1e-12)
        assert kde_hess(1.3, angles, 4.0) == pytest.approx(-4.0 * math.exp(4.0))

    def test_symmetric_pair_gradient(self):
        """Test {μ-δ, μ+δ} has zero gradient at μ"""
        angles = np.array([0.9, 1.1])
        assert kde_grad(1.0, angles, 10.0) == pytest.approx(0.0, abs=1e-9)


class TestInitializationBound:
    """Test how far the histogram start lies from the refined mode"""

    @staticmethod
    def _share_within_one_bin(batch, params):
        phi0 = histogram_init(batch, params)
        result = find_modes(batch, params)
        gaps = wrapped_difference(result.phi_hat, phi0)
        return np.mean(gaps <= math.radians(0.703) + 1e-6)

    def test_interpretation_sets(self, params):
        """Test the start is within one 512-bin width of the mode for 99% of 1000 interpretations"""
        assert self._share_within_one_bin(_interpretation_sets(1000, 21), params) >= 0.99

    def test_uniform_sets(self, params):
        """Test the same bound on 1000 uniform 15-angle sets"""
        batch = np.random.default_rng(22).uniform(0, TWO_PI, (1000, 15))
        assert self._share_within_one_bin(batch, params) >= 0.99
