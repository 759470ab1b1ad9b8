# Standard imports
from dataclasses import replace
import logging
from pathlib import Path

# Local imports
from deconflict.attacks.ExplicitAttack import ExplicitAttack, dormant_ratio_report, profile_activations
from deconflict.attacks.ImplicitAttack import ImplicitAttack
from deconflict.env.Datasets import (build_anchor_set, build_datasets, build_suites,
                                     clean_sample, concept_dataset, dataset_hash, derive_seed)
from deconflict.env.Vocabulary import Vocabulary
from deconflict.evaluation.Evaluator import Evaluator
from deconflict.harness.config import config_hash
from deconflict.models.PolicyModel import init_policy
from deconflict.models.ProxyEncoder import train_proxy
from deconflict.training.Trainer import default_probes, train_joint
from deconflict.write.WriteCheckpoint import save_checkpoint

logger = logging.getLogger(__name__)

# Seed stream of the attacker's public clean images
PUBLIC = 211
PUBLIC_POOL = 500

class Lab:
    """
    A class that runs the pipeline steps of one seed and persists their artifacts.

    Attributes
    -----------
    config: ExperimentConfig
        experiment configuration
    seed: int
        seed of every step
    run_dir: Path
        directory artifacts are written to
    vocab: Vocabulary
        instruction vocabulary
    evaluator: Evaluator
        rollout evaluator
    artifacts: list
        file names written so far
    dataset_hashes: dict
        dataset name -> SHA-256
    cache: dict
        intermediate products shared between preset steps

    Methods
    -------
    victim()
        return a freshly initialised policy
    proxy(kind)
        return the trained proxy encoder of kind
    datasets(poison, implicit, proxy_kind, tag)
        return a DatasetBundle, perturbed when implicit
    suites(kind)
        return evaluation suites for a trigger kind
    train(model, samples, name, probes)
        train, then write the checkpoint and Sim trace
    explicit(model, clean_samples, name)
        profile, mask and inject; write mask, profile and ratio table
    evaluate(model, suites, scenario, ...)
        evaluate and write the MetricsReport and episode table
    """

    def __init__(self, config, seed, run_dir):
        """
        Parameters
        ----------
        config: ExperimentConfig
            experiment configuration
        seed: int
            seed of every step
        run_dir: Path
            directory artifacts are written to
        """

        self.config = config
        self.seed = int(seed)
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.vocab = Vocabulary()
        self.evaluator = Evaluator(config.rollout, config.scene, self.vocab)
        self.artifacts = []
        self.dataset_hashes = {}
        self.cache = {}
        self.proxies = {}

    def path(self, name):
        """Return run_dir / name and record it as an artifact."""

        self.artifacts.append(name)
        return self.run_dir / name

    def save(self, obj, name):
        self.artifacts.append(f"{name}.nc")
        return save_checkpoint(obj, self.run_dir, name)

    def victim(self):
        geometry = (self.config.scene.grid, self.config.model.hidden, len(self.vocab))
        return init_policy(geometry, self.seed, self.config.model.freeze_vision)

    def train_config(self):
        return replace(self.config.train, seed=self.seed,
                       freeze_vision=self.config.model.freeze_vision)

    def public_pool(self):
        """Return clean samples from the attacker's own seed stream."""

        if "public" not in self.cache:
            n = min(PUBLIC_POOL, self.config.data.n_train)
            seed = derive_seed(self.seed, PUBLIC)
            self.cache["public"] = [clean_sample(seed, i, self.config.poison, self.config.data,
                                                 self.config.scene, self.vocab) for i in range(n)]
        return self.cache["public"]

    def proxy(self, kind=None):
        kind = kind or self.config.model.proxy_kind
        if kind not in self.proxies:
            dataset = concept_dataset(self.public_pool(), self.vocab)
            self.proxies[kind] = train_proxy(kind, dataset, self.seed, self.config.proxy)
            self.save(self.proxies[kind], f"proxy_{kind}")
        return self.proxies[kind]

    def datasets(self, poison=None, implicit=True, proxy_kind=None, tag=""):
        """Return a DatasetBundle for this seed.

        Parameters
        ----------
        poison: PoisonConfig
            poisoning settings, config.poison by default
        implicit: bool
            perturb poisoned items with delta* crafted on a proxy
        proxy_kind: str
            proxy to craft on, config.model.proxy_kind by default
        tag: str
            suffix of the attack record and hash names
        """

        cfg = self.config
        poison = poison or cfg.poison
        if implicit and poison.enable_implicit_perturbation:
            images, labels = concept_dataset(self.public_pool(), self.vocab)
            attack = ImplicitAttack(self.proxy(proxy_kind), images, labels, cfg.implicit,
                                    self.seed, cfg.scene)
            bundle = attack.attack(cfg.data.n_train, cfg.data.n_eval, poison, self.seed, cfg.data,
                                   self.vocab)
            attack.write_records(self.path(f"pgd_records{tag}.json"))
        else:
            bundle = build_datasets(cfg.data.n_train, cfg.data.n_eval, poison, None, self.seed,
                                    cfg.scene, cfg.data, self.vocab)
        self.dataset_hashes["clean"] = dataset_hash(bundle.clean)
        self.dataset_hashes[f"poisoned{tag}"] = dataset_hash(bundle.poisoned)
        return bundle

    def suites(self, kind=None):
        """Return the evaluation suites with the trigger kind swapped in."""

        poison = replace(self.config.poison, trigger_kind=kind) if kind else self.config.poison
        key = f"suites_{poison.trigger_kind}"
        if key not in self.cache:
            self.cache[key] = build_suites(self.config.data.n_eval, poison, self.seed,
                                           self.config.scene, self.config.data,
                                           self.vocab)
        return self.cache[key]

    def train(self, model, samples, name, probes=True):
        """Return (trained model, GradTrace); write policy_<name>.nc and trace_<name>.csv."""

        cfg = self.train_config()
        probe = default_probes(samples, cfg.probe_size) if probes else None
        trained, trace = train_joint(model, samples, cfg, probe, self.vocab)
        trace.write_csv(self.path(f"trace_{name}.csv"))
        self.save(trained, f"policy_{name}")
        return trained, trace

    def probes(self, samples):
        return [s for s in samples if not s.poisoned][:self.config.anchor.anchor_samples]

    def explicit(self, model, clean_samples, name="explicit"):
        """Return (injected model, ExplicitAttack) for model.

        Profiling uses the clean samples; anchors carry the semantic trigger.
        """

        anchors = build_anchor_set(self.config.anchor.anchor_samples, self.config.poison,
                                   self.seed, self.config.scene, self.vocab)
        attack = ExplicitAttack(self.config.anchor, self.seed)
        injected = attack.attack(model, self.probes(clean_samples), anchors, self.vocab)
        self.save(attack.profile, f"profile_{name}")
        self.save(attack.mask, f"mask_{name}")
        self.save(injected, f"policy_{name}")
        dormant_ratio_report(attack.profile, attack.tau).to_csv(self.path(f"dormant_{name}.csv"),
                                                                index=False)
        attack.write_records(self.path(f"inject_{name}.json"))
        return injected, attack

    def profile(self, model, clean_samples):
        """Return a defender's clean activation profile of model."""

        return profile_activations(model, self.probes(clean_samples), vocab=self.vocab)

    def evaluate(self, model, suites, scenario, poisoned=None, proxy=None, final_loss=None):
        """Return the MetricsReport of model; write metrics and episode files."""

        report, frame = self.evaluator.report(model, suites, scenario, poisoned, proxy, final_loss)
        report.config_hash = config_hash(self.config)
        report.seeds = [self.seed]
        report.write_json(self.path(f"metrics_{scenario}.json"))
        frame.to_csv(self.path(f"episodes_{scenario}.csv"), index=False)
        return report
