import csv
import tempfile
import unittest
from pathlib import Path

import numpy as np

from seqwm.autodiff import checkpoint
from seqwm.config import load_config
from seqwm.envs import make_env
from seqwm.exceptions import CheckpointError, ConfigError
from seqwm.harness import ablate_prediction, evaluate, export_trajectory, load_checkpoint, stored_config, train
from seqwm.harness.train import CHECKPOINT_NAME, METRICS_NAME, TIMING_NAME
from seqwm.records import read_episode_log, read_metrics

from helpers import slow, tiny_run_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class TestTrain(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        cls.cfg = tiny_run_config(cls.dir / "run")
        cls.summary = train(cls.cfg)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_writes_run_artifacts(self):
        run = self.dir / "run"
        for name in (CHECKPOINT_NAME, METRICS_NAME, TIMING_NAME, "config.yaml"):
            self.assertTrue((run / name).exists(), name)
        self.assertEqual(self.summary.checkpoint, run / CHECKPOINT_NAME)
        self.assertEqual(load_config(run / "config.yaml"), self.cfg)

    def test_checkpoint_carries_its_config(self):
        self.assertEqual(stored_config(self.summary.checkpoint), self.cfg)
        self.assertIsNone(stored_config(self.dir / "missing.seqwm"))

    def test_one_metrics_row_per_episode(self):
        rows = read_metrics(self.dir / "run" / METRICS_NAME)
        self.assertEqual(self.summary.steps, 36)
        self.assertEqual(self.summary.episodes, 3)
        self.assertEqual([r.step for r in rows], [12, 24, 36])
        # random seed actions in the first episode never plan
        self.assertEqual(rows[0].planner_iterations, 0.0)
        self.assertEqual(rows[1].planner_iterations, 2.0)
        self.assertTrue(all(np.isfinite(r.q_loss) and r.q_loss > 0 for r in rows))

    def test_identical_seeds_give_identical_metrics(self):
        again = self.dir / "again"
        train(tiny_run_config(again))
        self.assertEqual((again / METRICS_NAME).read_bytes(), (self.dir / "run" / METRICS_NAME).read_bytes())
        # a second run into the same directory replaces the logs
        train(tiny_run_config(again))
        self.assertEqual((again / METRICS_NAME).read_bytes(), (self.dir / "run" / METRICS_NAME).read_bytes())
        self.assertEqual(len((again / TIMING_NAME).read_text().splitlines()), 4)

    def test_checkpoint_reloads_into_same_shapes_only(self):
        env = make_env(self.cfg.env, seed=0)
        models = load_checkpoint(self.summary.checkpoint, self.cfg, env)
        self.assertEqual(len(models), 2)
        wider = tiny_run_config(self.dir / "other", {"model.latent_dim": 16})
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.summary.checkpoint, wider, env)

    def test_evaluate_and_export(self):
        log = self.dir / "eval" / "episodes.jsonl"
        cfg = tiny_run_config(self.dir / "run", {"eval.episode_log": str(log), "eval.workers": 2})
        summary = evaluate(self.summary.checkpoint, cfg, episodes=2, drop_prob=0.5)
        self.assertEqual(summary.episodes, 2)
        self.assertTrue(np.isfinite(summary.mean_return))
        self.assertGreater(summary.cache_hits + summary.cache_misses, 0)

        records = read_episode_log(log)
        self.assertEqual(len(records), 2 * 12)
        out = self.dir / "eval" / "traj.csv"
        self.assertEqual(export_trajectory(log, out), 2 * 12 * 2)
        with open(out, newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["episode", "t", "agent", "reward", "done", "x", "y", "action_0", "action_1"])
        self.assertEqual(len(rows), 49)

    def test_evaluation_does_not_depend_on_worker_count(self):
        serial = evaluate(self.summary.checkpoint, tiny_run_config(self.dir / "run", {"eval.workers": 1}))
        pooled = evaluate(self.summary.checkpoint, tiny_run_config(self.dir / "run", {"eval.workers": 2}))
        self.assertEqual(serial.mean_return, pooled.mean_return)
        self.assertEqual(serial.success_rate, pooled.success_rate)


class TestLongRunDeterminism(unittest.TestCase):
    def test_thousand_steps_replay_bit_for_bit(self):
        overrides = {"train.total_steps": 1000, "env.episode_limit": 50, "train.seed_steps": 100}
        with tempfile.TemporaryDirectory() as tmp:
            runs = [Path(tmp) / name for name in ("first", "second")]
            for run in runs:
                self.assertEqual(train(tiny_run_config(run, overrides)).steps, 1000)
            first, second = runs
            self.assertEqual(len(read_metrics(first / METRICS_NAME)), 20)
            self.assertEqual((first / METRICS_NAME).read_bytes(), (second / METRICS_NAME).read_bytes())
            (left, _), (right, _) = checkpoint.load(first / CHECKPOINT_NAME), checkpoint.load(second / CHECKPOINT_NAME)
            self.assertEqual(sorted(left), sorted(right))
            for name in left:
                np.testing.assert_array_equal(left[name], right[name], err_msg=name)


class TestEvaluate(unittest.TestCase):
    def test_zero_episodes_never_loads(self):
        with tempfile.TemporaryDirectory() as tmp:
            summary = evaluate(Path(tmp) / "missing.seqwm", tiny_run_config(tmp), episodes=0)
        self.assertEqual(summary.episodes, 0)
        self.assertEqual(summary.mean_return, 0.0)

    def test_missing_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CheckpointError):
                evaluate(Path(tmp) / "missing.seqwm", tiny_run_config(tmp), episodes=1)


class TestAblation(unittest.TestCase):
    def test_rows_for_each_variant_and_horizon(self):
        with tempfile.TemporaryDirectory() as tmp:
            rows = ablate_prediction(tiny_run_config(tmp))
        self.assertEqual([(r.variant, r.horizon) for r in rows],
                         [("sequential", 1), ("sequential", 2), ("decentralized", 1), ("decentralized", 2)])
        for row in rows:
            self.assertTrue(np.isfinite([row.state_mse, row.latent_mse, row.reward_mse]).all())

    def test_needs_noise_free_linear_team(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                ablate_prediction(tiny_run_config(tmp, {"env.name": "corridor_gate"}))
            with self.assertRaises(ConfigError):
                ablate_prediction(tiny_run_config(tmp, {"env.transition_noise": 0.1}))

    @slow
    def test_sequential_prediction_beats_decentralized_under_coupling(self):
        def ratio(coupling):
            with tempfile.TemporaryDirectory() as tmp:
                cfg = load_config(CONFIGS / "linear_team.yaml", {"env.coupling": coupling, "output_dir": tmp})
                rows = {(r.variant, r.horizon): r.state_mse for r in ablate_prediction(cfg)}
            return rows[("sequential", 3)] / rows[("decentralized", 3)]

        self.assertLessEqual(ratio(0.8), 0.5)
        self.assertTrue(0.8 <= ratio(0.0) <= 1.25)


@slow
class TestCorridorLearning(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.cfg = load_config(CONFIGS / "corridor_gate.yaml", {"output_dir": str(Path(cls.tmp.name) / "plain")})
        cls.checkpoint = train(cls.cfg).checkpoint

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_team_learns_to_cross(self):
        self.assertGreaterEqual(evaluate(self.checkpoint, self.cfg).success_rate, 0.9)

    def test_early_stopping_saves_time(self):
        full = evaluate(self.checkpoint, self.cfg)
        early = evaluate(self.checkpoint, load_config(CONFIGS / "corridor_gate.yaml", {"planner.kl_threshold": 0.5}))
        self.assertLess(early.mean_iterations, 6)
        self.assertLessEqual(early.seconds_per_step, 0.85 * full.seconds_per_step)
        self.assertGreaterEqual(early.mean_return, full.mean_return - 0.1 * abs(full.mean_return))

    def test_masking_hardens_against_drops(self):
        masked_cfg = load_config(CONFIGS / "corridor_gate.yaml", {
            "output_dir": str(Path(self.tmp.name) / "masked"), "masking.drop_prob": 0.2, "masking.permute": True,
        })
        masked = train(masked_cfg).checkpoint

        def degradation(checkpoint, cfg):
            clean = evaluate(checkpoint, cfg, drop_prob=0.0).success_rate
            return clean - evaluate(checkpoint, cfg, drop_prob=0.2).success_rate

        masked_loss = degradation(masked, masked_cfg)
        self.assertLessEqual(masked_loss, degradation(self.checkpoint, self.cfg))
        self.assertLessEqual(masked_loss, 0.15)


if __name__ == "__main__":
    unittest.main()
