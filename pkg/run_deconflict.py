"""Script to run deconflict experiments.

Each subcommand runs one pipeline step for one seed against a run
directory, or a whole preset across every configured seed.

Command line arguments:
[1] subcommand, e.g. -> "gen-data", "train", "preset"
-c configuration file (optional, defaults apply to every missing key)
-d run directory
-s seed (defaults to the first of run.seeds)
-v verbose logging

Exit codes: 0 success, 2 configuration error, 3 run failure.
"""

# Standard imports
import argparse
from datetime import datetime
import logging
from pathlib import Path
import sys

# Local imports
from deconflict.attacks.ExplicitAttack import (anchored_inject, build_mask, dormant_ratio_report,
                                               dormant_set, effective_tau)
from deconflict.defenses.DefenseStrategy import evaluate_defense, write_defense_reports
from deconflict.env.Datasets import build_anchor_set
from deconflict.exceptions import ConfigError, DeconflictError
from deconflict.harness.Lab import Lab
from deconflict.harness.config import ExperimentConfig, parse_config
from deconflict.harness.presets import PRESETS, apply_preset_defaults, build_defenses, run_preset
from deconflict.harness.report import emit_report
from deconflict.write.WriteCheckpoint import load_checkpoint
from deconflict.write.WriteDataset import WriteDataset, read_dataset

logger = logging.getLogger("deconflict")

COMMANDS = ["gen-data", "train", "attack-implicit", "profile", "inject", "eval", "defend",
            "preset", "report"]

def create_args():
    """Create and return argparser with arguments."""

    arg_parser = argparse.ArgumentParser(description="Run backdoor de-confliction experiments on a toy navigation policy")
    arg_parser.add_argument("command",
                            type=str,
                            choices=COMMANDS,
                            help="Pipeline step to run, or 'preset' to run a whole experiment")
    arg_parser.add_argument("preset",
                            type=str,
                            nargs="?",
                            choices=sorted(PRESETS),
                            help="Preset name, required with the 'preset' command")
    arg_parser.add_argument("-c",
                            "--config",
                            type=str,
                            help="Path to the 'section.key = value' configuration file")
    arg_parser.add_argument("-d",
                            "--directory",
                            type=str,
                            help="Run directory to read and write artifacts in (defaults to run.output_dir)")
    arg_parser.add_argument("-s",
                            "--seed",
                            type=int,
                            help="Seed of the step (defaults to the first of run.seeds)")
    arg_parser.add_argument("-k",
                            "--checkpoint",
                            type=str,
                            default="policy_victim",
                            help="Checkpoint name (without .nc) the eval, profile, inject and defend steps read")
    arg_parser.add_argument("-v",
                            "--verbose",
                            action="store_true",
                            help="Log at DEBUG level")
    return arg_parser

def load_config(path):
    """Return the configuration at path, or the defaults when path is None."""

    if path is None:
        return ExperimentConfig()
    if not Path(path).exists():
        raise ConfigError(f"configuration file not found: {path}")
    return parse_config(path)

def write_data(lab, bundle):
    WriteDataset(lab.run_dir / "data" / "train").write(bundle.poisoned)
    for name, suite in bundle.suites.items():
        WriteDataset(lab.run_dir / "data" / name).write(suite.samples)

def train_samples(lab):
    return read_dataset(lab.run_dir / "data" / "train")

def run_step(command, lab, args):
    """Run one pipeline step in lab."""

    cfg = lab.config
    checkpoint = lab.run_dir / f"{args.checkpoint}.nc"
    if command == "gen-data":
        write_data(lab, lab.datasets(implicit=False))
    elif command == "attack-implicit":
        write_data(lab, lab.datasets(implicit=True))
    elif command == "train":
        lab.train(lab.victim(), train_samples(lab), "victim")
    elif command == "profile":
        model = load_checkpoint(checkpoint)
        profile = lab.profile(model, train_samples(lab))
        tau = effective_tau(profile, cfg.anchor)
        mask = build_mask(model, dormant_set(profile, tau), cfg.anchor.scope, tau,
                          profile.fingerprint)
        lab.save(profile, f"profile_{args.checkpoint}")
        lab.save(mask, f"mask_{args.checkpoint}")
        dormant_ratio_report(profile, tau).to_csv(lab.path(f"dormant_{args.checkpoint}.csv"),
                                                  index=False)
    elif command == "inject":
        model = load_checkpoint(checkpoint)
        mask = load_checkpoint(lab.run_dir / f"mask_{args.checkpoint}.nc")
        anchors = build_anchor_set(cfg.anchor.anchor_samples, cfg.poison, lab.seed, cfg.scene,
                                   lab.vocab)
        injected, _ = anchored_inject(model, mask, anchors, cfg.anchor, lab.vocab)
        lab.save(injected, "policy_injected")
    elif command == "eval":
        lab.evaluate(load_checkpoint(checkpoint), lab.suites(), args.checkpoint)
    elif command == "defend":
        model = load_checkpoint(checkpoint)
        profile_path = lab.run_dir / f"profile_{args.checkpoint}.nc"
        if profile_path.exists():
            profile = load_checkpoint(profile_path)
        else:
            profile = lab.profile(model, train_samples(lab))
        reports = []
        for defense in build_defenses(lab, profile):
            report = evaluate_defense(model, defense, lab.suites(), cfg.defense, lab.evaluator)
            if defense.detector:
                report.write_roc(lab.path(f"roc_{args.checkpoint}_{defense.name}.csv"))
            reports.append(report)
        write_defense_reports(reports, lab.path(f"defenses_{args.checkpoint}.json"))

def main():
    """Main method to run a deconflict step or preset."""

    start = datetime.now()

    # Command line arguments
    arg_parser = create_args()
    args = arg_parser.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config)
        directory = Path(args.directory or config.run.output_dir)
        if args.command == "preset":
            if args.preset is None:
                raise ConfigError("the preset command needs a preset name", key="run.preset")
            print(f"Running preset {args.preset} on seeds {config.run.seeds}.")
            run_dir = run_preset(args.preset, config, directory)
            print(f"Report written to: {run_dir / 'report.json'}.")
        elif args.command == "report":
            emit_report(directory)
            print(f"Report written to: {directory / 'report.json'}.")
        else:
            config = apply_preset_defaults(config).with_progress()
            seed = args.seed if args.seed is not None else config.run.seeds[0]
            print(f"Running {args.command} with seed {seed} in {directory}.")
            run_step(args.command, Lab(config, seed, directory), args)
    except ConfigError as error:
        print(f"Configuration error: {error}")
        sys.exit(2)
    except DeconflictError as error:
        print(f"Run failed: {error}")
        print("Artifacts written before the failure are kept.\nExiting program...")
        sys.exit(3)

    end = datetime.now()
    print(f"Total execution time: {end - start}.")

if __name__ == "__main__":
    main()
