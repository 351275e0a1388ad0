import pathlib
import tempfile
import unittest

import numpy as np

from paramvec import ParamVector
from synthdata import (ClientDataset, CsvParseError, IntermediaryPartition, PartitionError, Sample,
                       generate_federation, holdout, load_csv, split_client)


class TestGenerateFederation(unittest.TestCase):

    def test_unique_clients(self):
        clients = generate_federation(6, 20, 3, 0.5, seed=1)
        self.assertEqual(len(clients), 6)
        self.assertEqual(len({c.client_id for c in clients}), 6)
        for c in clients:
            self.assertEqual(len(c), 20)
            self.assertEqual(c.dim, 3)
            self.assertTrue(set(np.unique(c.labels)) <= {0.0, 1.0})

    def test_deterministic(self):
        a = generate_federation(3, 10, 4, 0.3, seed=5)
        b = generate_federation(3, 10, 4, 0.3, seed=5)
        c = generate_federation(3, 10, 4, 0.3, seed=6)
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_zero_heterogeneity_is_iid(self):
        first, second = generate_federation(2, 2000, 1, 0.0, seed=0)
        x1, x2 = first.features[:, 0], second.features[:, 0]
        stderr = np.sqrt(np.var(x1, ddof=1) / x1.size + np.var(x2, ddof=1) / x2.size)
        self.assertLess(abs(np.mean(x1) - np.mean(x2)), 3 * stderr)

    def test_heterogeneity_shifts_clients(self):
        clients = generate_federation(2, 500, 5, 1.0, seed=3)
        gap = np.linalg.norm(clients[0].features.mean(axis=0) - clients[1].features.mean(axis=0))
        self.assertGreater(gap, 0.3)

    def test_preconditions(self):
        with self.assertRaises(ValueError):
            generate_federation(0, 10, 2, 0.1, seed=0)
        with self.assertRaises(ValueError):
            generate_federation(2, 1, 2, 0.1, seed=0)
        with self.assertRaises(ValueError):
            generate_federation(2, 10, 0, 0.1, seed=0)
        with self.assertRaises(ValueError):
            generate_federation(2, 10, 2, 1.5, seed=0)


class TestClientDataset(unittest.TestCase):

    def test_samples_round_trip_and_read_only(self):
        samples = [Sample(ParamVector([1.0, 2.0]), 1.0), Sample(ParamVector([3.0, 4.0]), 0.0)]
        d = ClientDataset.from_samples(4, samples)
        self.assertEqual(d.samples, tuple(samples))
        with self.assertRaises(ValueError):
            d.features[0, 0] = 9.0

    def test_rejects_bad_shapes(self):
        with self.assertRaises(ValueError):
            ClientDataset(0, np.zeros((0, 2)), np.zeros(0))
        with self.assertRaises(ValueError):
            ClientDataset(0, np.zeros((3, 2)), np.zeros(2))


class TestSplitClient(unittest.TestCase):

    def setUp(self):
        self.d = generate_federation(1, 23, 2, 0.0, seed=4)[0]

    def assertPartition(self, part, n, v):
        self.assertEqual(part.v, v)
        self.assertEqual(len(part.shards), v)
        flat = [i for shard in part.shards for i in shard]
        self.assertEqual(sorted(flat), list(range(n)))
        sizes = [len(s) for s in part.shards]
        self.assertLessEqual(max(sizes) - min(sizes), 1)

    def test_partition_properties(self):
        for v in (1, 2, 3, 7, 23):
            self.assertPartition(split_client(self.d, v, seed=9), len(self.d), v)

    def test_v_one_keeps_everything(self):
        part = split_client(self.d, 1, seed=9)
        self.assertEqual(part.shards, (tuple(range(len(self.d))),))
        self.assertEqual(part.shard_datasets(self.d)[0], self.d)

    def test_too_many_shards(self):
        with self.assertRaises(PartitionError):
            split_client(self.d, 24, seed=9)
        with self.assertRaises(PartitionError):
            split_client(self.d, 0, seed=9)

    def test_resplit_draws_fresh_partition(self):
        a = split_client(self.d, 3, seed=9, round=0)
        self.assertEqual(a, split_client(self.d, 3, seed=9, round=0))
        self.assertNotEqual(a.shards, split_client(self.d, 3, seed=9, round=1).shards)

    def test_invalid_partitions_rejected(self):
        with self.assertRaises(PartitionError):
            IntermediaryPartition(0, ((0, 1), (1, 2)), 2, 3)        # overlap
        with self.assertRaises(PartitionError):
            IntermediaryPartition(0, ((0,), (1,)), 2, 3)            # missing index 2
        with self.assertRaises(PartitionError):
            IntermediaryPartition(0, ((0, 1, 2), (3,)), 2, 4)       # unbalanced
        with self.assertRaises(PartitionError):
            IntermediaryPartition(0, ((0, 1),), 2, 2)               # wrong shard count

    def test_shard_datasets_checks_parent(self):
        other = generate_federation(2, 23, 2, 0.0, seed=4)[1]
        with self.assertRaises(PartitionError):
            split_client(self.d, 2, seed=9).shard_datasets(other)


class TestHoldout(unittest.TestCase):

    def test_split_sizes_and_disjointness(self):
        d = generate_federation(1, 50, 2, 0.0, seed=0)[0]
        train, test = holdout(d, 0.2, seed=3)
        self.assertEqual((len(train), len(test)), (40, 10))
        rows = {tuple(r) for r in train.features} | {tuple(r) for r in test.features}
        self.assertEqual(len(rows), 50)
        self.assertEqual(train.client_id, d.client_id)

    def test_bad_fraction(self):
        d = generate_federation(1, 10, 2, 0.0, seed=0)[0]
        with self.assertRaises(ValueError):
            holdout(d, 1.0, seed=0)


class TestLoadCsv(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = pathlib.Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = self.dir.joinpath(name)
        path.write_text(text, encoding='utf-8')
        return path

    def test_loads_features_in_column_order(self):
        path = self.write('ok.csv', "x1,label,x2\n1.5,0,2\n3,1,-4e-1\n")
        d = load_csv(path, 'label', client_id=3)
        self.assertEqual(d.client_id, 3)
        np.testing.assert_array_equal(d.features, [[1.5, 2.0], [3.0, -0.4]])
        np.testing.assert_array_equal(d.labels, [0.0, 1.0])

    def test_bad_cell_names_row_and_column(self):
        path = self.write('bad.csv', "x1,x2,label\n1,2,0\n3,abc,1\n")
        with self.assertRaises(CsvParseError) as ctx:
            load_csv(path, 'label')
        self.assertIn("row 2", str(ctx.exception))
        self.assertIn("'x2'", str(ctx.exception))

    def test_missing_cell(self):
        path = self.write('gap.csv', "x1,x2,label\n1,,0\n")
        with self.assertRaises(CsvParseError):
            load_csv(path, 'label')

    def test_missing_label_column(self):
        path = self.write('nolabel.csv', "x1,x2\n1,2\n")
        with self.assertRaises(CsvParseError):
            load_csv(path, 'label')

    def test_empty_and_header_only(self):
        with self.assertRaises(CsvParseError):
            load_csv(self.write('empty.csv', ""), 'label')
        with self.assertRaises(CsvParseError):
            load_csv(self.write('header.csv', "x1,label\n"), 'label')

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_csv(self.dir.joinpath('nope.csv'), 'label')


if __name__ == '__main__':
    unittest.main()
