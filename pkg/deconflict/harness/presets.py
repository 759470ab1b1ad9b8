"""presets module: Experiment presets run across every configured seed.

Each preset function takes a Lab for one seed and returns summary rows, one
dict per scenario. run_preset writes them to seed_<s>/rows.csv, then the
consolidated report and the run manifest.

Presets
-------
interference   gradient-similarity traces of baseline, implicit and explicit runs
implicit       clean, no-perturbation baseline and implicit poisoning
explicit       clean victim before and after anchored injection
transfer       aligned against unaligned proxy encoders
context        triggered and neutral-trigger suites of both attacks
ablation       full implicit attack, without delta, without the visible trigger
semantic       synonym and restructured instruction suites
defenses       the defense suite against both attacks
persistence    anchored backdoor through clean fine-tuning
safety-cost    cumulative cost of failures
"""

# Standard imports
from copy import deepcopy
from dataclasses import replace
import logging
from pathlib import Path
import time

# Third-party imports
import numpy as np
import pandas as pd

# Local imports
from deconflict import __version__
from deconflict.attacks.ExplicitAttack import benign_drift, check_benign_drift
from deconflict.core.tensor import cosine, norm
from deconflict.defenses.ClampDefense import ClampDefense
from deconflict.defenses.ClusterDetector import ClusterDetector
from deconflict.defenses.DefenseStrategy import NoDefense, evaluate_defense, write_defense_reports
from deconflict.defenses.InputDefense import InputDefense
from deconflict.defenses.PruneDefense import PruneDefense
from deconflict.defenses.StripDetector import StripDetector
from deconflict.env.Datasets import build_anchor_set
from deconflict.env.NavigationEnv import SUCCESS, TARGET_HIT
from deconflict.evaluation.Evaluator import cumulative_cost
from deconflict.exceptions import (BenignDriftError, ConfigError, DegenerateGradientError,
                                   RunFailure)
from deconflict.harness.Lab import Lab
from deconflict.harness.config import config_hash, emit_config, set_value, validate_config
from deconflict.harness.report import RunManifest, emit_report, write_status
from deconflict.training.Trainer import clean_finetune, loss_and_grad

logger = logging.getLogger(__name__)

# Anchored injection settings used unless the configuration changes them
PRESET_DEFAULTS = {
    "anchor.dormant_fraction": "0.25",
    "anchor.eta": "0.05",
    "anchor.iterations": "200",
}

REPORT_METRICS = ["sr", "tasr", "misfire", "neutral_sr", "action_mse", "final_loss", "ssim_mean",
                  "ssim_std", "perceptual_mean", "perceptual_std", "drop_a", "drop_b"]

def flat(report, **extra):
    """Return a summary row from a MetricsReport."""

    row = {"scenario": report.scenario}
    for key in REPORT_METRICS:
        row[key] = getattr(report, key)
    for outcome, value in report.cc.items():
        row[f"cc_{outcome}"] = value
    row.update(extra)
    return row

def mean_abs_sim(trace, tail=0.5):
    if not trace.rows:
        return None
    start = int(np.floor(len(trace.rows) * (1.0 - tail)))
    values = [abs(r["sim"]) for r in trace.rows[start:] if not r["degenerate_flag"]]
    return float(np.mean(values)) if values else None

def masked_sim(model, mask, benign, poisoned, vocab):
    """Return the cosine of the unmasked benign gradient and the masked backdoor gradient."""

    _, g_b = loss_and_grad(model, benign, vocab)
    _, g_p = loss_and_grad(model, poisoned, vocab)
    inside = mask.bits.astype(bool)
    try:
        return cosine(np.where(inside, 0.0, g_b), np.where(inside, g_p, 0.0))
    except DegenerateGradientError:
        return None

# Shared steps, cached per Lab
def clean_bundle(lab, kind="patch"):
    key = f"bundle_{kind}"
    if key not in lab.cache:
        poison = replace(lab.config.poison, trigger_kind=kind)
        lab.cache[key] = lab.datasets(poison, implicit=False, tag=f"_{kind}")
    return lab.cache[key]

def clean_model(lab, kind="patch"):
    key = f"clean_{kind}"
    if key not in lab.cache:
        lab.cache[key] = lab.train(lab.victim(), clean_bundle(lab, kind).clean, f"clean_{kind}",
                                   probes=False)
    return lab.cache[key]

def badnet_model(lab):
    if "badnet" not in lab.cache:
        lab.cache["badnet"] = lab.train(lab.victim(), clean_bundle(lab).poisoned, "badnet")
    return lab.cache["badnet"]

def implicit_bundle(lab):
    if "bundle_implicit" not in lab.cache:
        lab.cache["bundle_implicit"] = lab.datasets(tag="_implicit")
    return lab.cache["bundle_implicit"]

def implicit_model(lab):
    if "implicit" not in lab.cache:
        lab.cache["implicit"] = lab.train(lab.victim(), implicit_bundle(lab).poisoned, "implicit")
    return lab.cache["implicit"]

def explicit_model(lab):
    if "explicit" not in lab.cache:
        victim, _ = clean_model(lab, "semantic")
        lab.cache["explicit"] = lab.explicit(victim, clean_bundle(lab, "semantic").clean)
    return lab.cache["explicit"]

def poisoned_items(bundle):
    return [bundle.poisoned[i] for i in bundle.poison_indices]

# Presets
def preset_interference(lab):
    rows = []
    _, trace = badnet_model(lab)
    rows.append({"scenario": "baseline", "mean_sim": trace.mean_sim(0.5),
                 "mean_abs_sim": mean_abs_sim(trace), "measurements": len(trace)})
    _, trace = implicit_model(lab)
    rows.append({"scenario": "implicit", "mean_sim": trace.mean_sim(0.5),
                 "mean_abs_sim": mean_abs_sim(trace), "measurements": len(trace)})
    injected, attack = explicit_model(lab)
    benign = clean_bundle(lab, "semantic").clean[:lab.config.train.probe_size]
    anchors = attack_anchors(lab)
    sim = masked_sim(injected, attack.mask, benign, anchors, lab.vocab)
    rows.append({"scenario": "explicit", "mean_sim": sim,
                 "mean_abs_sim": None if sim is None else abs(sim), "measurements": 1})
    return rows

def attack_anchors(lab):
    return build_anchor_set(lab.config.train.probe_size, lab.config.poison, lab.seed,
                            lab.config.scene, lab.vocab)

def preset_implicit(lab):
    base = clean_bundle(lab)
    model, trace = clean_model(lab)
    rows = [flat(lab.evaluate(model, base.suites, "clean", final_loss=trace.final_loss))]
    model, trace = badnet_model(lab)
    rows.append(flat(lab.evaluate(model, base.suites, "badnet", poisoned_items(base),
                                  lab.proxy(), trace.final_loss)))
    bundle = implicit_bundle(lab)
    model, trace = implicit_model(lab)
    rows.append(flat(lab.evaluate(model, bundle.suites, "implicit", poisoned_items(bundle),
                                  lab.proxy(), trace.final_loss)))
    return rows

def preset_explicit(lab):
    suites = lab.suites("semantic")
    victim, trace = clean_model(lab, "semantic")
    rows = [flat(lab.evaluate(victim, suites, "clean", final_loss=trace.final_loss))]
    injected, attack = explicit_model(lab)
    bound = lab.config.anchor.drift_bound
    drift = benign_drift(victim, injected, suites["benign"].samples, lab.vocab)
    rows.append(flat(lab.evaluate(injected, suites, "explicit"), tau=attack.tau,
                     masked=attack.mask.count(),
                     final_injection_loss=attack.curve[-1] if attack.curve else None,
                     benign_drift=drift, drift_bound=bound))
    try:
        check_benign_drift(drift, bound)
    except BenignDriftError:
        write_rows(rows, lab.path("rows.csv"), lab.seed)
        raise
    return rows

def preset_transfer(lab):
    rows = []
    for kind in ("aligned", "unaligned"):
        bundle = lab.datasets(proxy_kind=kind, tag=f"_{kind}")
        model, trace = lab.train(lab.victim(), bundle.poisoned, kind)
        rows.append(flat(lab.evaluate(model, bundle.suites, kind, poisoned_items(bundle),
                                      lab.proxy(kind), trace.final_loss)))
    return rows

def preset_context(lab):
    model, trace = implicit_model(lab)
    rows = [flat(lab.evaluate(model, implicit_bundle(lab).suites, "implicit",
                              final_loss=trace.final_loss))]
    injected, _ = explicit_model(lab)
    rows.append(flat(lab.evaluate(injected, lab.suites("semantic"), "explicit")))
    return rows

def preset_ablation(lab):
    rows = []
    variants = [
        ("full", lab.config.poison),
        ("without-delta", replace(lab.config.poison, enable_implicit_perturbation=False)),
        ("without-trigger", replace(lab.config.poison, enable_visible_trigger=False)),
    ]
    for name, poison in variants:
        bundle = lab.datasets(poison, tag=f"_{name}")
        model, trace = lab.train(lab.victim(), bundle.poisoned, name)
        rows.append(flat(lab.evaluate(model, bundle.suites, name, final_loss=trace.final_loss)))
    return rows

def preset_semantic(lab):
    model, _ = implicit_model(lab)
    rows = [flat(lab.evaluate(model, implicit_bundle(lab).suites, "implicit"))]
    injected, _ = explicit_model(lab)
    rows.append(flat(lab.evaluate(injected, lab.suites("semantic"), "explicit")))
    return rows

def build_defenses(lab, profile):
    """Return every defense of the suite configured for lab."""

    cfg = lab.config.defense
    return [
        NoDefense(lab.seed),
        InputDefense("noise", sigma=cfg.noise_sigma, seed=lab.seed, vocab=lab.vocab),
        InputDefense("quantize", levels=cfg.quantize_levels, blur=cfg.quantize_blur,
                     seed=lab.seed, vocab=lab.vocab),
        PruneDefense(profile, cfg.prune_fraction, lab.seed),
        ClampDefense(profile, lab.seed, lab.vocab),
        StripDetector(cfg.strip_overlays, cfg.strip_bins, lab.seed, lab.vocab),
        ClusterDetector(cfg.cluster_layer, lab.seed, lab.vocab),
    ]

def preset_defenses(lab):
    rows = []
    attacked = [
        ("implicit", implicit_model(lab)[0], implicit_bundle(lab).suites, clean_bundle(lab).clean),
        ("explicit", explicit_model(lab)[0], lab.suites("semantic"),
         clean_bundle(lab, "semantic").clean),
    ]
    for name, model, suites, clean in attacked:
        profile = lab.profile(model, clean)
        reports = []
        for defense in build_defenses(lab, profile):
            report = evaluate_defense(model, defense, suites, lab.config.defense, lab.evaluator)
            if defense.detector:
                report.write_roc(lab.path(f"roc_{name}_{defense.name}.csv"))
            reports.append(report)
            rows.append({"scenario": f"{name}/{defense.name}", "sr": report.sr,
                         "tasr": report.tasr, "misfire": report.misfire, "tpr": report.tpr,
                         "fpr": report.fpr})
        write_defense_reports(reports, lab.path(f"defenses_{name}.json"))
    return rows

def preset_persistence(lab):
    suites = lab.suites("semantic")
    injected, attack = explicit_model(lab)
    before = lab.evaluate(injected, suites, "injected")
    tuned = clean_finetune(injected, clean_bundle(lab, "semantic").clean, lab.train_config(),
                           lab.vocab)
    lab.save(tuned, "policy_finetuned")
    after = lab.evaluate(tuned, suites, "finetuned")

    drift = tuned.flat() - injected.flat()
    start, stop = injected.trainable_range()
    inside = attack.mask.bits.astype(bool)
    active = np.zeros_like(inside)
    active[start:stop] = True
    active &= ~inside
    retention = after.tasr / before.tasr if before.tasr else None
    return [
        flat(before),
        flat(after, retention=retention,
             dormant_drift=norm(drift[inside]) if inside.any() else 0.0,
             active_drift=norm(drift[active]) if active.any() else 0.0,
             dormant_rms=float(np.sqrt(np.mean(drift[inside] ** 2))) if inside.any() else 0.0,
             active_rms=float(np.sqrt(np.mean(drift[active] ** 2))) if active.any() else 0.0),
    ]

def failure_row(scenario, episodes, outcomes):
    costs = [cumulative_cost(e) for e in episodes if e.outcome in outcomes]
    return {"scenario": scenario, "failures": len(costs), "episodes": len(episodes),
            "cc_mean": float(np.mean(costs)) if costs else None}

def preset_safety_cost(lab):
    base = clean_bundle(lab)
    model, _ = clean_model(lab)
    rows = [failure_row("benign-failure", lab.evaluator.episodes(model, base.suites["benign"]),
                        {"timeout", TARGET_HIT})]
    model, _ = implicit_model(lab)
    rows.append(failure_row("deconflicted-failure",
                            lab.evaluator.episodes(model, implicit_bundle(lab).suites["triggered"]),
                            {TARGET_HIT}))
    model, _ = badnet_model(lab)
    rows.append(failure_row("baseline-failure",
                            lab.evaluator.episodes(model, base.suites["triggered"]), {TARGET_HIT}))
    model, _ = clean_model(lab)
    rows.append(failure_row("benign-success", lab.evaluator.episodes(model, base.suites["benign"]),
                            {SUCCESS}))
    return rows

PRESETS = {
    "interference": preset_interference,
    "implicit": preset_implicit,
    "explicit": preset_explicit,
    "transfer": preset_transfer,
    "context": preset_context,
    "ablation": preset_ablation,
    "semantic": preset_semantic,
    "defenses": preset_defenses,
    "persistence": preset_persistence,
    "safety-cost": preset_safety_cost,
}

def apply_preset_defaults(config):
    """Return a copy of config with PRESET_DEFAULTS set where config keeps the default."""

    config = deepcopy(config)
    anchor_defaults = type(config.anchor)()
    for key, value in PRESET_DEFAULTS.items():
        name = key.split(".", 1)[1]
        if getattr(config.anchor, name) == getattr(anchor_defaults, name):
            set_value(config, key, value)
    return config

def write_rows(rows, path, seed):
    frame = pd.DataFrame(rows)
    frame.insert(0, "seed", seed)
    rest = sorted(c for c in frame.columns if c not in ("seed", "scenario"))
    frame[["seed", "scenario"] + rest].to_csv(path, index=False)

def run_preset(name, config, output_dir=None):
    """Run preset name for every seed of config and return the run directory.

    Parameters
    ----------
    name: str
        preset name, a key of PRESETS
    config: ExperimentConfig
        experiment configuration
    output_dir: Path
        parent of the run directory, config.run.output_dir by default

    Returns
    -------
    Path of output_dir/name holding seed_<s>/ artifacts, config.txt,
    report.json, report.csv, manifest.json and status.json

    Raises
    ------
    RunFailure
        when a step fails; artifacts written so far stay on disk
    """

    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}", key="run.preset")
    config = apply_preset_defaults(config)
    validate_config(config)
    config.run.preset = name
    config.with_progress()
    run_dir = Path(output_dir or config.run.output_dir) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(emit_config(config), encoding="utf-8")

    start = time.perf_counter()
    manifest = RunManifest(config_hash(config), {}, list(config.run.seeds), ["config.txt"], 0.0,
                           __version__)
    for seed in config.run.seeds:
        logger.info("Preset %s: seed %d", name, seed)
        lab = Lab(config, seed, run_dir / f"seed_{seed}")
        try:
            rows = PRESETS[name](lab)
            write_rows(rows, lab.path("rows.csv"), seed)
        except Exception as error:
            logger.error("Preset %s failed on seed %d: %s", name, seed, error)
            manifest.artifacts += [f"seed_{seed}/{a}" for a in lab.artifacts]
            manifest.dataset_hashes[str(seed)] = lab.dataset_hashes
            manifest.wall_clock = time.perf_counter() - start
            manifest.write(run_dir / "manifest.json")
            write_status(run_dir, "failed", seed, str(error))
            raise RunFailure(f"preset {name} failed on seed {seed}: {error}") from error
        manifest.artifacts += [f"seed_{seed}/{a}" for a in lab.artifacts]
        manifest.dataset_hashes[str(seed)] = lab.dataset_hashes

    emit_report(run_dir)
    manifest.artifacts += ["report.json", "report.csv"]
    manifest.wall_clock = time.perf_counter() - start
    manifest.write(run_dir / "manifest.json")
    write_status(run_dir, "ok")
    return run_dir
