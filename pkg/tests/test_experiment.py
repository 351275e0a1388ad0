import pathlib
import tempfile
import unittest

import numpy as np
import pandas as pd

from accountant import privacy_budget
from config import loads_config
from constants import (CSV_COLUMNS, DELTA, EPSILON, MEAN, ROUND, SEED, SIM_STD, TEST_ACC, TRAIN_LOSS, V_NEXT,
                       V_TARGET)
from experiment import (RunResult, build_federation, check_budget_growth, check_controller_steps,
                        check_scaling_law, report_rows, reports_frame, resolve_delta, run_experiment, summarize,
                        window_mean)
from federation import RoundReport
from paramvec import ParamVector

TINY = """
name = "tiny"
seeds = [0, 1]

[dataset]
n_clients = 3
samples_per_client = 60
dim = 3
heterogeneity = 0.3
seed = 7

[privacy]
z = 0.5
delta = 0.01
rounds = 4

[training]
eta = 0.5
batch_size = 8
"""


def fake_report(t, xi, phi, v=1, n_clients=3):
    return RoundReport(round=t, xi=xi, phi=phi, lam=xi / phi, clip_C=1.0, v_per_client=(v,) * n_clients,
                       n_participants=v * n_clients, train_loss=0.6, test_acc=0.5, test_auc=0.5,
                       epsilon_so_far=float(t))


def fake_result(reports, seed=0):
    return RunResult(seed=seed, reports=tuple(reports), theta=ParamVector.zeros(1),
                     budget=privacy_budget(0.5, len(reports), 0.01))


class TestRunExperiment(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.cfg = loads_config(TINY)
        cls.result = run_experiment(cls.cfg, 0, progress=False)

    def test_one_report_per_round(self):
        self.assertEqual([r.round for r in self.result.reports], [1, 2, 3, 4])
        eps = [r.epsilon_so_far for r in self.result.reports]
        self.assertTrue(all(a < b for a, b in zip(eps, eps[1:])))
        self.assertAlmostEqual(eps[-1], self.result.budget.epsilon)

    def test_same_seed_same_run(self):
        again = run_experiment(self.cfg, 0, progress=False)
        pd.testing.assert_frame_equal(reports_frame(self.result), reports_frame(again))
        np.testing.assert_array_equal(self.result.theta.values, again.theta.values)

    def test_other_seed_other_run(self):
        other = run_experiment(self.cfg, 1, progress=False)
        self.assertFalse(np.array_equal(self.result.theta.values, other.theta.values))

    def test_controller_moves_by_one(self):
        self.assertEqual(check_controller_steps(self.result), [])
        self.assertEqual(self.result.reports[0].v_per_client, (1, 1, 1))

    def test_fixed_v(self):
        cfg = loads_config(TINY + '\n[method]\nadaptive_intermediary = false\nfixed_v = 2\n')
        result = run_experiment(cfg, 0, progress=False)
        for r in result.reports:
            self.assertEqual(r.v_per_client, (2, 2, 2))
            self.assertEqual(r.n_participants, 6)

    def test_frames_and_rows(self):
        frame = reports_frame(self.result)
        self.assertEqual(len(frame), 4)
        self.assertEqual(set(frame[SEED]), {0})
        rows = report_rows(self.result)
        self.assertEqual([row[ROUND] for row in rows], [1, 2, 3, 4])
        self.assertEqual(rows[0]['v_per_client'], [1, 1, 1])
        self.assertEqual(list(frame.columns), list(CSV_COLUMNS) + [SIM_STD])
        self.assertIn(V_TARGET, rows[0])
        self.assertIn(V_NEXT, rows[0])

    def test_direction_spread_reported(self):
        for r in self.result.reports:
            if not r.guarded:
                self.assertTrue(0.0 <= r.sim_std <= 1.0, r.sim_std)

    def test_controller_decisions_recorded(self):
        reports = self.result.reports
        for prev, cur in zip(reports, reports[1:]):
            if prev.v_next:
                self.assertGreaterEqual(prev.v_target, 1)
                self.assertEqual(prev.v_next, max(cur.v_per_client))
        self.assertEqual((reports[-1].v_target, reports[-1].v_next), (0, 0))
        self.assertTrue(any(r.v_next for r in reports))

    def test_summary_matches_final_rounds(self):
        other = run_experiment(self.cfg, 1, progress=False)
        results = [self.result, other]
        summary = summarize(results)
        frame = pd.concat([reports_frame(r) for r in results])
        finals = frame[frame[ROUND] == 4]
        self.assertAlmostEqual(summary[TEST_ACC][MEAN], finals[TEST_ACC].mean())
        self.assertAlmostEqual(summary[TRAIN_LOSS][MEAN], finals[TRAIN_LOSS].mean())
        self.assertEqual(summary[SEED], [0, 1])
        self.assertEqual(summary[DELTA], 0.01)
        self.assertAlmostEqual(summary[EPSILON], self.result.budget.epsilon)
        with self.assertRaises(ValueError):
            summarize([])


class TestLocalWorkOptions(unittest.TestCase):

    def test_adaptive_split_keeps_dp_sgd_batches(self):
        # heavy server noise pushes the target v past what 48 samples and batches of 24 allow
        text = TINY.replace('z = 0.5', 'z = 5.0') + 'dp_sgd_z = 0.5\ndp_sgd_c = 1.0\n'
        text = text.replace('batch_size = 8', 'batch_size = 24')
        cfg = loads_config(text)
        result = run_experiment(cfg, 0, progress=False)
        self.assertEqual(len(result.reports), 4)
        for r in result.reports:
            for v in r.v_per_client:
                self.assertGreaterEqual(48 // v, 24)

    def test_aggregation_frequency(self):
        cfg = loads_config(TINY + 'aggregation_frequency = 2\n')
        self.assertEqual(cfg.total_rounds, 8)
        result = run_experiment(cfg, 0, progress=False)
        self.assertEqual([r.round for r in result.reports], list(range(1, 9)))
        self.assertEqual(result.budget.rounds, 8)
        base = privacy_budget(0.5, 4, 0.01)
        self.assertGreater(result.budget.epsilon, base.epsilon)
        self.assertEqual(check_controller_steps(result), [])


class TestFederationBuild(unittest.TestCase):

    def test_synthetic_holdout(self):
        fed = build_federation(loads_config(TINY), 0)
        self.assertEqual(len(fed.train), 3)
        self.assertEqual(fed.sample_counts, (48, 48, 48))
        self.assertEqual([len(d) for d in fed.test], [12, 12, 12])

    def test_delta_rule(self):
        cfg = loads_config(TINY.replace('delta = 0.01', 'delta_rule = true'))
        self.assertEqual(resolve_delta(cfg), 1e-1)

    def _write_csv(self, path, n_features, rows=10):
        rng = np.random.default_rng(3)
        frame = pd.DataFrame(rng.normal(size=(rows, n_features)), columns=[f'x{i}' for i in range(n_features)])
        frame['label'] = [i % 2 for i in range(rows)]
        frame.to_csv(path, index=False)

    def _csv_config(self, paths):
        listed = ', '.join(f'"{p.as_posix()}"' for p in paths)
        text = TINY.replace('n_clients = 3\nsamples_per_client = 60\ndim = 3', f'csv_paths = [{listed}]')
        return loads_config(text)

    def test_csv_clients(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = [pathlib.Path(tmp).joinpath(f'client{i}.csv') for i in range(2)]
            for p in paths:
                self._write_csv(p, 2)
            fed = build_federation(self._csv_config(paths), 0)
            self.assertEqual(len(fed.train), 2)
            self.assertEqual(fed.train[0].dim, 2)
            self.assertEqual(sum(fed.sample_counts) + sum(len(d) for d in fed.test), 20)

    def test_csv_dims_must_agree(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = [pathlib.Path(tmp).joinpath(f'client{i}.csv') for i in range(2)]
            self._write_csv(paths[0], 2)
            self._write_csv(paths[1], 3)
            with self.assertRaises(ValueError):
                build_federation(self._csv_config(paths), 0)


class TestChecks(unittest.TestCase):

    def test_scaling_law_holds(self):
        by_v = {v: [fake_result([fake_report(t, 1.0 / v, 2.0 * v, v) for t in range(1, 6)])] for v in (1, 2, 4)}
        self.assertEqual(check_scaling_law(by_v, (2, 5), tolerance=0.3), [])

    def test_scaling_law_violated(self):
        by_v = {v: [fake_result([fake_report(t, 1.0, 2.0 * v, v) for t in range(1, 6)])] for v in (1, 2, 4)}
        failures = check_scaling_law(by_v, (2, 5), tolerance=0.3)
        self.assertEqual(len(failures), 1)
        self.assertIn('xi*v', failures[0])

    def test_window_mean(self):
        reports = [fake_report(t, float(t), 1.0) for t in range(1, 6)]
        self.assertEqual(window_mean(reports, 'xi', (2, 4)), 3.0)
        self.assertEqual(window_mean(reports, 'xi', (2, 4), scale=2.0), 6.0)
        with self.assertRaises(ValueError):
            window_mean(reports, 'xi', (7, 9))

    def test_controller_steps(self):
        ok = fake_result([fake_report(1, 1.0, 1.0, 1), fake_report(2, 1.0, 1.0, 5), fake_report(3, 1.0, 1.0, 6)])
        self.assertEqual(check_controller_steps(ok), [])
        bad = fake_result([fake_report(1, 1.0, 1.0, 1), fake_report(2, 1.0, 1.0, 5), fake_report(3, 1.0, 1.0, 7)])
        self.assertEqual(len(check_controller_steps(bad)), 1)

    def test_budget_growth(self):
        self.assertEqual(check_budget_growth([(300, 8.0), (100, 5.0)]), [])
        self.assertEqual(len(check_budget_growth([(100, 5.0), (300, 5.0)])), 1)


if __name__ == '__main__':
    unittest.main()
