# Standard imports
from contextlib import redirect_stdout
from dataclasses import replace
import io
import json
import os
from pathlib import Path
import sys
import tempfile
import unittest
from unittest import mock

# Third-party imports
import numpy as np
import pandas as pd

# Local imports
from deconflict.exceptions import BenignDriftError, ConfigError, DataError, RunFailure
from deconflict.harness.config import (ExperimentConfig, config_hash, emit_config, parse_config,
                                       parse_config_text)
from deconflict.harness.presets import PRESETS, apply_preset_defaults, run_preset, write_rows
from deconflict.harness.report import aggregate, emit_report
import run_deconflict
from run_deconflict import create_args

class TestConfig(unittest.TestCase):
    """Tests methods and functions from config module."""

    def test_empty_file(self):
        """Tests that an empty file or comments only give the defaults."""

        self.assertEqual(ExperimentConfig(), parse_config_text(""))
        self.assertEqual(ExperimentConfig(), parse_config_text("# nothing\n\n   # here\n"))

    def test_parse(self):
        """Tests value conversion for every field kind."""

        config = parse_config_text("poison.rate = 0.1  # ten percent\n"
                                   "poison.eps = 8/255\n"
                                   "train.epochs = 3\n"
                                   "rollout.rerender = False\n"
                                   "run.seeds = 7, 8\n"
                                   "anchor.scope = incoming\n"
                                   "poison.semantic_colors = green,yellow\n")
        self.assertEqual(0.1, config.poison.rate)
        self.assertAlmostEqual(8 / 255, config.poison.eps)
        self.assertEqual(3, config.train.epochs)
        self.assertFalse(config.rollout.rerender)
        self.assertEqual([7, 8], config.run.seeds)
        self.assertEqual("incoming", config.anchor.scope)
        self.assertEqual(["green", "yellow"], config.poison.semantic_colors)
        self.assertEqual(ExperimentConfig().scene, config.scene)

    def test_unknown_key(self):
        """Tests that a misspelt key names itself and its line."""

        with self.assertRaises(ConfigError) as context:
            parse_config_text("poison.rate = 0.1\npoison.lamda = 2\n")
        self.assertEqual(2, context.exception.line)
        self.assertEqual("poison.lamda", context.exception.key)
        self.assertIn("poison.lamda", str(context.exception))
        self.assertRaises(ConfigError, parse_config_text, "nosection.rate = 1\n")
        self.assertRaises(ConfigError, parse_config_text, "rate = 1\n")

    def test_malformed_values(self):
        """Tests lines without '=' and values of the wrong kind."""

        with self.assertRaises(ConfigError) as context:
            parse_config_text("\ntrain.epochs 3\n")
        self.assertEqual(2, context.exception.line)
        self.assertRaises(ConfigError, parse_config_text, "train.epochs = three\n")
        self.assertRaises(ConfigError, parse_config_text, "train.freeze_vision = maybe\n")
        self.assertRaises(ConfigError, parse_config_text, "poison.eps = 1/0\n")

    def test_section_validation(self):
        """Tests that out-of-range values are rejected when the file is parsed."""

        with self.assertRaises(ConfigError) as context:
            parse_config_text("train.optimizer = adam\n")
        self.assertEqual("train.optimizer", context.exception.key)
        with self.assertRaises(ConfigError) as context:
            parse_config_text("train.lr = 0\n")
        self.assertEqual("train.lr", context.exception.key)
        with self.assertRaises(ConfigError) as context:
            parse_config_text("poison.rate = 0.9\n")
        self.assertEqual("poison", context.exception.key)
        self.assertIn("poison rate", str(context.exception))
        self.assertRaises(ConfigError, parse_config_text, "implicit.alpha = 0.5\n")
        self.assertRaises(ConfigError, parse_config_text, "anchor.scope = sideways\n")

    def test_emit_round_trip(self):
        """Tests that emitted text parses back to the same configuration."""

        config = parse_config_text("poison.eps = 4/255\nrun.seeds = 3\nrun.preset = implicit\n")
        self.assertEqual(config, parse_config_text(emit_config(config)))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.txt"
            path.write_text(emit_config(config), encoding="utf-8")
            self.assertEqual(config, parse_config(path))

    def test_config_hash(self):
        """Tests that only result-affecting keys change the hash."""

        base = config_hash(ExperimentConfig())
        cosmetic = parse_config_text("run.progress = true\nrun.output_dir = elsewhere\n"
                                     "train.progress = true\n")
        self.assertEqual(base, config_hash(cosmetic))
        self.assertNotEqual(base, config_hash(parse_config_text("poison.rate = 0.1\n")))

    def test_apply_preset_defaults(self):
        """Tests that preset defaults fill only keys left at their default."""

        config = apply_preset_defaults(ExperimentConfig())
        self.assertEqual(0.25, config.anchor.dormant_fraction)
        self.assertEqual(0.05, config.anchor.eta)
        self.assertEqual(200, config.anchor.iterations)
        custom = apply_preset_defaults(parse_config_text("anchor.eta = 0.001\n"))
        self.assertEqual(0.001, custom.anchor.eta)

class TestReport(unittest.TestCase):
    """Tests methods and functions from report module."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.run_dir = Path(self.tmp.name)
        for seed, (clean, attacked) in {1: (0.2, 0.6), 2: (0.4, 1.0)}.items():
            (self.run_dir / f"seed_{seed}").mkdir()
            rows = [{"scenario": "clean", "tasr": clean, "sr": 1.0},
                    {"scenario": "implicit", "tasr": attacked, "sr": 0.5}]
            write_rows(rows, self.run_dir / f"seed_{seed}" / "rows.csv", seed)

    def tearDown(self):
        self.tmp.cleanup()

    def test_aggregate(self):
        """Tests per-scenario means and population standard deviations."""

        frame = pd.DataFrame({"seed": [1, 2, 1, 2], "scenario": ["b", "b", "a", "a"],
                              "tasr": [0.0, 1.0, 0.5, 0.5], "note": ["x", "y", "z", "w"]})
        out = aggregate(frame)
        self.assertEqual(["b", "a"], list(out["scenario"]))
        self.assertEqual(["scenario", "seeds", "tasr_mean", "tasr_std"], list(out.columns))
        np.testing.assert_array_almost_equal(np.array([0.5, 0.5]), out["tasr_mean"].to_numpy())
        np.testing.assert_array_almost_equal(np.array([0.5, 0.0]), out["tasr_std"].to_numpy())
        self.assertEqual([2, 2], list(out["seeds"]))

    def test_emit_report(self):
        """Tests the joined report files."""

        (self.run_dir / "config.txt").write_text("run.preset = implicit\n", encoding="utf-8")
        report = emit_report(self.run_dir)
        self.assertEqual("implicit", report["preset"])
        self.assertEqual([1, 2], report["seeds"])
        self.assertEqual(4, len(report["rows"]))
        implicit = [r for r in report["aggregate"] if r["scenario"] == "implicit"][0]
        self.assertAlmostEqual(0.8, implicit["tasr_mean"])
        self.assertAlmostEqual(0.2, implicit["tasr_std"])
        with open(self.run_dir / "report.json", encoding="utf-8") as jf:
            self.assertEqual(report["config_hash"], json.load(jf)["config_hash"])
        self.assertEqual(2, len(pd.read_csv(self.run_dir / "report.csv")))

    def test_emit_report_empty(self):
        """Tests that a directory without seed results is rejected."""

        with tempfile.TemporaryDirectory() as tmp:
            self.assertRaises(DataError, emit_report, tmp)

class TestPresets(unittest.TestCase):
    """Tests preset lookup and a small end-to-end run."""

    def test_unknown_preset(self):
        """Tests that unknown presets are configuration errors."""

        with tempfile.TemporaryDirectory() as tmp:
            self.assertRaises(ConfigError, run_preset, "nonsense", ExperimentConfig(), tmp)

    def test_create_args(self):
        """Tests the command line parser."""

        args = create_args().parse_args(["preset", "implicit", "-c", "small.txt", "-s", "4"])
        self.assertEqual("preset", args.command)
        self.assertEqual("implicit", args.preset)
        self.assertEqual(4, args.seed)
        self.assertEqual("policy_victim", args.checkpoint)
        for name in PRESETS:
            self.assertEqual(name, create_args().parse_args(["preset", name]).preset)

    def test_run_preset_failure(self):
        """Tests that a failing seed leaves status, manifest and partial artifacts."""

        def failing(lab):
            lab.path("partial.csv").write_text("step\n0\n", encoding="utf-8")
            raise DataError("anchor set is empty")

        config = parse_config_text("run.seeds = 1, 2\n")
        with tempfile.TemporaryDirectory() as tmp, mock.patch.dict(PRESETS, {"implicit": failing}):
            with self.assertRaises(RunFailure) as context:
                run_preset("implicit", config, tmp)
            self.assertIsInstance(context.exception.__cause__, DataError)
            run_dir = Path(tmp) / "implicit"
            with open(run_dir / "status.json", encoding="utf-8") as jf:
                status = json.load(jf)
            self.assertEqual("failed", status["status"])
            self.assertEqual(1, status["seed"])
            self.assertIn("anchor set is empty", status["error"])
            with open(run_dir / "manifest.json", encoding="utf-8") as jf:
                manifest = json.load(jf)
            self.assertIn("seed_1/partial.csv", manifest["artifacts"])
            self.assertTrue((run_dir / "seed_1" / "partial.csv").exists())
            self.assertFalse((run_dir / "seed_2").exists())
            self.assertFalse((run_dir / "report.json").exists())

    def test_run_preset_unexpected_error(self):
        """Tests that errors outside the package hierarchy still end as RunFailure."""

        def broken(lab):
            raise ValueError("shapes do not align")

        config = parse_config_text("run.seeds = 3\n")
        with tempfile.TemporaryDirectory() as tmp, mock.patch.dict(PRESETS, {"implicit": broken}):
            self.assertRaises(RunFailure, run_preset, "implicit", config, tmp)
            with open(Path(tmp) / "implicit" / "status.json", encoding="utf-8") as jf:
                self.assertEqual(3, json.load(jf)["seed"])

    def test_exit_codes(self):
        """Tests exit code 2 for configuration errors and 3 for failed runs."""

        def failing(lab):
            raise DataError("anchor set is empty")

        with tempfile.TemporaryDirectory() as tmp:
            bad = Path(tmp) / "bad.txt"
            bad.write_text("train.optimizer = adam\n", encoding="utf-8")
            good = Path(tmp) / "good.txt"
            good.write_text("run.seeds = 1\n", encoding="utf-8")
            runs = [(2, ["preset", "implicit", "-c", str(bad), "-d", tmp], {}),
                    (2, ["preset", "implicit", "-c", str(Path(tmp) / "missing.txt")], {}),
                    (3, ["preset", "implicit", "-c", str(good), "-d", tmp], {"implicit": failing})]
            for code, argv, presets in runs:
                out = io.StringIO()
                with mock.patch.object(sys, "argv", ["run_deconflict.py"] + argv), \
                        mock.patch.dict(PRESETS, presets), redirect_stdout(out):
                    with self.assertRaises(SystemExit) as context:
                        run_deconflict.main()
                self.assertEqual(code, context.exception.code)
                self.assertIn("Configuration error" if code == 2 else "Run failed", out.getvalue())

    @unittest.skipUnless(os.environ.get("DECONFLICT_FIXTURES"), "set DECONFLICT_FIXTURES to run")
    def test_run_preset_implicit(self):
        """Tests a one-seed implicit preset on a tiny world."""

        config = parse_config_text("scene.grid = 8\n"
                                   "data.n_train = 100\n"
                                   "data.n_eval = 4\n"
                                   "model.hidden = 8\n"
                                   "proxy.width = 4\nproxy.hidden = 8\nproxy.epochs = 1\n"
                                   "implicit.iterations = 2\nimplicit.benign_batch = 4\n"
                                   "train.epochs = 1\ntrain.batch_size = 10\ntrain.probe_size = 4\n"
                                   "rollout.horizon = 5\n"
                                   "run.seeds = 1\n")
        with tempfile.TemporaryDirectory() as tmp:
            run_dir = run_preset("implicit", config, tmp)
            with open(run_dir / "status.json", encoding="utf-8") as jf:
                self.assertEqual("ok", json.load(jf)["status"])
            with open(run_dir / "report.json", encoding="utf-8") as jf:
                report = json.load(jf)
            self.assertEqual(["clean", "badnet", "implicit"],
                             [r["scenario"] for r in report["aggregate"]])
            with open(run_dir / "manifest.json", encoding="utf-8") as jf:
                manifest = json.load(jf)
            self.assertIn("seed_1/rows.csv", manifest["artifacts"])

    @unittest.skipUnless(os.environ.get("DECONFLICT_FIXTURES"), "set DECONFLICT_FIXTURES to run")
    def test_run_preset_explicit_drift(self):
        """Tests that benign drift is reported and that exceeding the bound fails the seed."""

        config = parse_config_text("scene.grid = 8\n"
                                   "data.n_train = 100\n"
                                   "data.n_eval = 4\n"
                                   "model.hidden = 8\n"
                                   "train.epochs = 1\ntrain.batch_size = 10\n"
                                   "anchor.iterations = 2\nanchor.anchor_samples = 8\n"
                                   "rollout.horizon = 5\n"
                                   "run.seeds = 1\n")
        loose = replace(config, anchor=replace(config.anchor, drift_bound=1e6))
        with tempfile.TemporaryDirectory() as tmp:
            run_dir = run_preset("explicit", loose, tmp)
            rows = pd.read_csv(run_dir / "seed_1" / "rows.csv")
            explicit = rows[rows["scenario"] == "explicit"].iloc[0]
            self.assertGreaterEqual(explicit["benign_drift"], 0.0)
            self.assertLessEqual(explicit["benign_drift"], explicit["drift_bound"])

        with tempfile.TemporaryDirectory() as tmp, \
                mock.patch("deconflict.harness.presets.benign_drift", return_value=1.0):
            with self.assertRaises(RunFailure) as context:
                run_preset("explicit", config, tmp)
            self.assertIsInstance(context.exception.__cause__, BenignDriftError)
            rows = pd.read_csv(Path(tmp) / "explicit" / "seed_1" / "rows.csv")
            self.assertEqual(1.0, rows[rows["scenario"] == "explicit"].iloc[0]["benign_drift"])

if __name__ == "__main__":
    unittest.main()
