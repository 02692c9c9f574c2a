import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from seqwm.cli import build_parser, main
from seqwm.harness import train
from seqwm.records import EpisodeLogWriter, StepRecord

from helpers import tiny_run_config


def run_cli(argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(argv)
    return code, out.getvalue()


class TestParser(unittest.TestCase):
    def test_config_keys_become_flags(self):
        args = build_parser().parse_args(["train", "--planner.horizon", "4", "--comm.enabled", "false"])
        self.assertEqual(getattr(args, "planner.horizon"), "4")
        self.assertEqual(getattr(args, "comm.enabled"), "false")
        self.assertFalse(hasattr(args, "planner.iterations"))

    def test_eval_needs_checkpoint(self):
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
            build_parser().parse_args(["eval"])


class TestMain(unittest.TestCase):
    def test_schema(self):
        code, out = run_cli(["schema"])
        self.assertEqual(code, 0)
        self.assertIn("planner.horizon", out)
        self.assertIn("comm.drop_prob", out)

    def test_config_errors_exit_with_two(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.yaml"
            path.write_text("planner:\n  horizn: 3\n")
            code, _ = run_cli(["--log-level", "ERROR", "train", "--config", str(path)])
        self.assertEqual(code, 2)

    def test_missing_checkpoint_exits_with_two(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _ = run_cli(["--log-level", "ERROR", "eval", "--checkpoint", str(Path(tmp) / "none.seqwm"),
                               "--episodes", "1"])
        self.assertEqual(code, 2)

    def test_eval_with_no_episodes_prints_empty_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, out = run_cli(["eval", "--checkpoint", str(Path(tmp) / "none.seqwm"), "--episodes", "0"])
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)["episodes"], 0)

    def test_eval_without_config_uses_the_stored_one(self):
        with tempfile.TemporaryDirectory() as tmp:
            checkpoint = train(tiny_run_config(Path(tmp) / "run")).checkpoint
            code, out = run_cli(["--log-level", "ERROR", "eval", "--checkpoint", str(checkpoint), "--episodes", "1"])
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)["episodes"], 1)

    def test_export_traj(self):
        with tempfile.TemporaryDirectory() as tmp:
            log = Path(tmp) / "episodes.jsonl"
            with EpisodeLogWriter(log) as writer:
                writer.write(StepRecord.from_step(0, [np.zeros(2)] * 2, [np.array([0.5, -0.5])] * 2, 1.0, True,
                                                  positions=[[0.0, 1.0], [2.0, 3.0]], episode=0))
            out = Path(tmp) / "traj.csv"
            code, _ = run_cli(["export-traj", "--log", str(log), "--out", str(out)])
            lines = out.read_text().splitlines()
        self.assertEqual(code, 0)
        self.assertEqual(len(lines), 3)
        self.assertEqual(lines[2], "0,0,1,1.0,1,2.0,3.0,0.5,-0.5")


if __name__ == "__main__":
    unittest.main()
