import unittest

import numpy as np

from src.errors import DimensionError
from src.fields import FieldSpec, SignalEnsemble, TimeGrid, kernel_matrix, sample_field, sample_gp, sample_sine
from src.numerics import RngStream


class TestTimeGrid(unittest.TestCase):

    def test_points_and_step(self):
        grid = TimeGrid(101)
        self.assertAlmostEqual(grid.dt, 0.01)
        self.assertEqual(grid.points[0], 0.0)
        self.assertEqual(grid.points[-1], 1.0)
        self.assertAlmostEqual(grid.points[50], 0.5)

    def test_too_few_points(self):
        with self.assertRaises(DimensionError):
            TimeGrid(1)


class TestSignalEnsemble(unittest.TestCase):

    def setUp(self):
        self.grid = TimeGrid(10)

    def test_single_row_promoted(self):
        ensemble = SignalEnsemble(self.grid, np.zeros(10))
        self.assertEqual(ensemble.values.shape, (1, 10))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            SignalEnsemble(self.grid, np.zeros((3, 9)))

    def test_non_finite_rejected(self):
        values = np.zeros((2, 10))
        values[1, 3] = np.nan
        with self.assertRaises(ValueError):
            SignalEnsemble(self.grid, values)

    def test_values_read_only(self):
        ensemble = SignalEnsemble(self.grid, np.zeros((2, 10)))
        with self.assertRaises(ValueError):
            ensemble.values[0, 0] = 1.0


class TestSineSampling(unittest.TestCase):
    """Test cases for the Sine family."""

    def setUp(self):
        self.grid = TimeGrid(100)
        self.spec = FieldSpec.sine(4 * np.pi)

    def test_shape_and_amplitude_bounds(self):
        ensemble = sample_sine(self.spec, 200, self.grid, RngStream(0))
        self.assertEqual(ensemble.values.shape, (200, 100))
        self.assertLessEqual(np.max(np.abs(ensemble.values)), 1.0)

    def test_rows_are_scaled_sines(self):
        ensemble = sample_sine(self.spec, 5, self.grid, RngStream(0))
        shape = np.sin(4 * np.pi * self.grid.points)
        for row in ensemble.values:
            amplitude = row @ shape / (shape @ shape)
            np.testing.assert_allclose(row, amplitude * shape, atol=1e-12)
            self.assertTrue(0.0 <= amplitude < 1.0)

    def test_degenerate_amplitude(self):
        spec = FieldSpec.sine(2 * np.pi, amp_lo=0.5, amp_hi=0.5)
        ensemble = sample_sine(spec, 3, self.grid, RngStream(0))
        expected = 0.5 * np.sin(2 * np.pi * self.grid.points)
        for row in ensemble.values:
            np.testing.assert_allclose(row, expected, atol=1e-15)

    def test_seed_reproducible(self):
        a = sample_sine(self.spec, 10, self.grid, RngStream(42, 1))
        b = sample_sine(self.spec, 10, self.grid, RngStream(42, 1))
        np.testing.assert_array_equal(a.values, b.values)

    def test_empty_ensemble(self):
        self.assertEqual(sample_sine(self.spec, 0, self.grid, RngStream(0)).rows, 0)


class TestGaussianProcess(unittest.TestCase):
    """Test cases for GP kernels and sampling."""

    def setUp(self):
        self.grid = TimeGrid(50)

    def test_kernel_symmetric_with_variance_diagonal(self):
        for kernel in ("rbf", "matern32", "matern52"):
            K = kernel_matrix(FieldSpec.gp(kernel, variance=2.0), self.grid)
            np.testing.assert_allclose(K, K.T)
            np.testing.assert_allclose(np.diag(K), 2.0)

    def test_kernel_values(self):
        grid = TimeGrid(2, 0.0, 0.2)
        r = 0.2 / 0.2
        self.assertAlmostEqual(kernel_matrix(FieldSpec.gp("rbf"), grid)[0, 1], np.exp(-0.5 * r ** 2))
        a = np.sqrt(3.0) * r
        self.assertAlmostEqual(kernel_matrix(FieldSpec.gp("matern32"), grid)[0, 1], (1 + a) * np.exp(-a))
        a = np.sqrt(5.0) * r
        self.assertAlmostEqual(kernel_matrix(FieldSpec.gp("matern52"), grid)[0, 1],
                               (1 + a + a ** 2 / 3) * np.exp(-a))

    def test_empirical_covariance(self):
        spec = FieldSpec.gp("matern52")
        ensemble = sample_gp(spec, 4000, self.grid, RngStream(1))
        empirical = ensemble.values.T @ ensemble.values / ensemble.rows
        K = kernel_matrix(spec, self.grid)
        self.assertLess(np.max(np.abs(empirical - K)), 0.15)

    def test_seed_reproducible(self):
        spec = FieldSpec.gp("rbf")
        a = sample_field(spec, 5, self.grid, RngStream(9, 2))
        b = sample_field(spec, 5, self.grid, RngStream(9, 2))
        np.testing.assert_array_equal(a.values, b.values)

    def test_rows_independent_of_count(self):
        """Row i depends only on its own substream."""
        spec = FieldSpec.gp("rbf")
        few = sample_gp(spec, 3, self.grid, RngStream(5))
        many = sample_gp(spec, 8, self.grid, RngStream(5))
        np.testing.assert_array_equal(few.values, many.values[:3])

    def test_invalid_kernel(self):
        with self.assertRaises(ValueError):
            FieldSpec.gp("cosine")

    def test_labels(self):
        self.assertEqual(FieldSpec.sine().label, "Sine")
        self.assertEqual(FieldSpec.gp("matern32").label, "Matern32")


if __name__ == '__main__':
    unittest.main()
