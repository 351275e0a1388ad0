import unittest

import numpy as np

from constants import Stream
from paramvec import (DimensionMismatchError, EmptyVectorError, ParamVector, RngStream, axpy, gaussian_sample,
                      l2_norm, vector_mean, vector_sum)


class TestParamVector(unittest.TestCase):

    def test_rejects_empty_and_non_finite(self):
        with self.assertRaises(EmptyVectorError):
            ParamVector([])
        with self.assertRaises(ValueError):
            ParamVector([1.0, np.nan])
        with self.assertRaises(ValueError):
            ParamVector([np.inf])

    def test_is_immutable(self):
        x = ParamVector([1.0, 2.0])
        with self.assertRaises(ValueError):
            x.values[0] = 5.0
        y = x + ParamVector([1.0, 1.0])
        self.assertEqual(x, ParamVector([1.0, 2.0]))
        self.assertEqual(y, ParamVector([2.0, 3.0]))

    def test_arithmetic(self):
        x = ParamVector([3.0, 4.0])
        self.assertEqual(l2_norm(x), 5.0)
        self.assertEqual(x * 2, ParamVector([6.0, 8.0]))
        self.assertEqual(2 * x, ParamVector([6.0, 8.0]))
        self.assertEqual(x / 2, ParamVector([1.5, 2.0]))
        self.assertEqual(-x, ParamVector([-3.0, -4.0]))
        self.assertEqual(axpy(2.0, ParamVector([1.0, 2.0]), ParamVector([1.0, 1.0])), ParamVector([3.0, 5.0]))

    def test_norm_homogeneity_and_triangle_inequality(self):
        rng = RngStream(21, 1).generator
        for _ in range(200):
            dim = int(rng.integers(1, 30))
            x = ParamVector(rng.normal(0.0, 2.0, size=dim))
            y = ParamVector(rng.normal(0.0, 2.0, size=dim))
            a = float(rng.normal(0.0, 5.0))
            self.assertAlmostEqual(l2_norm(x * a), abs(a) * l2_norm(x), delta=1e-12 * (1.0 + abs(a) * l2_norm(x)))
            self.assertLessEqual(l2_norm(x + y), l2_norm(x) + l2_norm(y) + 1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            ParamVector([1.0]) + ParamVector([1.0, 2.0])
        with self.assertRaises(DimensionMismatchError):
            axpy(1.0, ParamVector([1.0]), ParamVector([1.0, 2.0]))
        with self.assertRaises(DimensionMismatchError):
            vector_sum([ParamVector([1.0]), ParamVector([1.0, 2.0])])

    def test_sum_and_mean(self):
        vectors = [ParamVector([1.0, 0.0]), ParamVector([2.0, 2.0]), ParamVector([3.0, 4.0])]
        self.assertEqual(vector_sum(vectors), ParamVector([6.0, 6.0]))
        self.assertEqual(vector_mean(vectors), ParamVector([2.0, 2.0]))
        with self.assertRaises(EmptyVectorError):
            vector_sum([])


class TestRngStream(unittest.TestCase):

    def test_same_key_same_draws(self):
        a = gaussian_sample(RngStream(7, Stream.NOISE, 3), 5, 1.0)
        b = gaussian_sample(RngStream(7, Stream.NOISE, 3), 5, 1.0)
        self.assertEqual(a, b)

    def test_keys_are_independent(self):
        base = gaussian_sample(RngStream(7, Stream.NOISE, 3), 5, 1.0)
        self.assertNotEqual(base, gaussian_sample(RngStream(7, Stream.NOISE, 4), 5, 1.0))
        self.assertNotEqual(base, gaussian_sample(RngStream(8, Stream.NOISE, 3), 5, 1.0))
        self.assertNotEqual(base, gaussian_sample(RngStream(7, Stream.CLIP, 3), 5, 1.0))
        self.assertNotEqual(base, gaussian_sample(RngStream(7, Stream.NOISE, 3).spawn(0), 5, 1.0))

    def test_participant_streams(self):
        a = RngStream.for_participant(1, Stream.LOCAL, 0, 2).generator.random(3)
        b = RngStream.for_participant(1, Stream.LOCAL, 1, 2).generator.random(3)
        self.assertFalse(np.array_equal(a, b))

    def test_spawn_rejects_negative_offset(self):
        with self.assertRaises(ValueError):
            RngStream(0, 1).spawn(-1)

    def test_zero_sigma_gives_zero_vector(self):
        self.assertEqual(gaussian_sample(RngStream(0, 1), 4, 0.0), ParamVector.zeros(4))

    def test_empty_sample_rejected(self):
        with self.assertRaises(EmptyVectorError):
            gaussian_sample(RngStream(0, 1), 0, 1.0)

    def test_gaussian_moments(self):
        x = gaussian_sample(RngStream(11, Stream.NOISE), 20000, 2.0).values
        self.assertLess(abs(np.mean(x)), 0.05)
        self.assertLess(abs(np.std(x) - 2.0), 0.1)


if __name__ == '__main__':
    unittest.main()
