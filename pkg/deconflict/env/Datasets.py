"""Datasets module: Clean, poisoned and evaluation sample sets.

Classes
-------
PoisonConfig
    Poisoning rate, budget, trigger and ablation flags.
DataConfig
    Dataset sizes and instruction sampling settings.
Sample
    One (image, instruction, action label) triplet with provenance.
Suite
    Named evaluation suite plus the trigger applied during rollouts.
DatasetBundle
    Output of build_datasets.

Functions
---------
build_datasets(n_train, n_eval, poison, delta_source, seed, ...)
    Return the clean set, the poisoned training set and the eval suites.
build_anchor_set(n, poison, seed, ...)
    Return semantic-trigger samples labelled with the target action.
make_batch(samples, vocab)
    Stack samples into image, bag and label arrays.
concept_dataset(samples, vocab)
    Return (images, colour ids) for proxy training.
dataset_hash(samples)
    SHA-256 over images, tokens and labels.
"""

# Standard imports
from collections import namedtuple
from dataclasses import dataclass, field
import hashlib
import logging

# Third-party imports
import numpy as np

# Local imports
from deconflict.core.tensor import linf_project
from deconflict.env.NavigationEnv import expert_action, target_action
from deconflict.env.Scene import Instruction, SceneConfig, render, sample_scene
from deconflict.env.Trigger import TriggerSpec, apply_semantic, inject_trigger, satisfies
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import ContractError, DataError, PlacementError

logger = logging.getLogger(__name__)

SUITES = ["benign", "triggered", "neutral", "synA", "synB"]

# Seed streams
CLEAN, POISON, BENIGN, TRIGGERED, NEUTRAL, ANCHOR, TOKENS = range(7)

Batch = namedtuple("Batch", ["images", "bags", "labels", "poisoned"])

@dataclass
class PoisonConfig:
    """Poisoning settings.

    The target action is always the unit direction toward the forbidden
    corner (1, 1). context_color names the instruction concept the backdoor
    is bound to.
    """

    rate: float = 0.05
    eps: float = 8 / 255
    enable_visible_trigger: bool = True
    enable_implicit_perturbation: bool = True
    context_color: str = "red"
    trigger_kind: str = "patch"
    patch_size: int = 3
    placement: str = "corner"
    blend: float = 1.0
    semantic_colors: list = field(default_factory=lambda: ["red", "blue"])

    def validate(self):
        if not 0.0 <= self.rate <= 0.5:
            raise ContractError("poison rate must lie in [0, 0.5]")
        if self.eps <= 0:
            raise ContractError("poison eps must be positive")
        if self.context_color not in Vocabulary.COLORS:
            raise ContractError(f"unknown context colour: {self.context_color}")

    def trigger_spec(self, kind=None):
        """Return the TriggerSpec described by this config."""

        return TriggerSpec(kind=kind or self.trigger_kind, patch_size=self.patch_size,
                           placement=self.placement, blend=self.blend,
                           semantic_colors=tuple(self.semantic_colors))

@dataclass
class DataConfig:
    """Dataset sizes and instruction sampling."""

    n_train: int = 1000
    n_eval: int = 100
    filler_rate: float = 0.25
    success_radius: float = 0.08

@dataclass
class Sample:
    """One training or evaluation triplet."""

    image: np.ndarray
    tokens: tuple
    label: np.ndarray
    scene: object
    poisoned: bool = False
    trigger: str = "none"
    suite: str = "train"
    index: int = 0
    reference: np.ndarray = None

    @property
    def instruction(self):
        return Instruction(tuple(self.tokens))

@dataclass
class Suite:
    """Evaluation suite; overlay is the patch re-applied on every render."""

    name: str
    samples: list
    overlay: TriggerSpec = None

    def __len__(self):
        return len(self.samples)

@dataclass
class DatasetBundle:
    """Clean set, poisoned training set and evaluation suites."""

    clean: list
    poisoned: list
    suites: dict
    poison_indices: list

# Functions
def derive_seed(*keys):
    """Return a 32-bit seed derived from integer keys."""

    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])

def find_scene(seed, stream, index, accept, cfg, start=0):
    """Return (scene, attempt) for the first scene of a seed stream accepted by accept."""

    attempt = start
    while True:
        scene = sample_scene(derive_seed(seed, stream, index, attempt), cfg)
        if accept(scene):
            return scene, attempt
        attempt += 1

def find_triggered(seed, stream, index, accept, trigger_spec, enable_visible, cfg):
    """Return (scene, trigger-only image), skipping scenes with no room for the trigger."""

    attempt = 0
    while True:
        scene, attempt = find_scene(seed, stream, index, accept, cfg, attempt)
        try:
            return triggered_image(scene, trigger_spec, enable_visible, cfg)
        except PlacementError:
            logger.debug("No room for the trigger in scene %d of stream %d", index, stream)
            attempt += 1

def benign_tokens(color, rng, vocab, filler_rate):
    """Return random surface tokens for "go <color>" with an optional filler."""

    tokens = [vocab.surface(vocab.VERB, rng), vocab.surface(color, rng)]
    if rng.random() < filler_rate:
        tokens.append(vocab.FILLERS[0])
    return tuple(tokens)

def canonical_tokens(color, vocab):
    return (vocab.canonical(vocab.VERB), vocab.canonical(color))

def clean_sample(seed, index, poison, data_cfg, scene_cfg, vocab):
    """Return one benign training sample."""

    semantic = poison.trigger_spec()
    exclude = poison.trigger_kind == "semantic"
    scene, _ = find_scene(seed, CLEAN, index,
                          lambda s: not (exclude and satisfies(s, semantic)), scene_cfg)
    rng = np.random.default_rng(derive_seed(seed, TOKENS, index))
    color = vocab.COLORS[int(rng.choice(scene.colors()))]
    tokens = benign_tokens(color, rng, vocab, data_cfg.filler_rate)
    label = expert_action(scene, Instruction(tokens), vocab, data_cfg.success_radius)
    return Sample(render(scene, scene_cfg), tokens, label, scene, index=index)

def triggered_image(scene, trigger_spec, enable_visible, cfg):
    """Return (scene, trigger-only image) for a poisoned or triggered item."""

    if trigger_spec.kind == "semantic":
        scene = apply_semantic(scene, trigger_spec, cfg)
        return scene, render(scene, cfg)
    image = render(scene, cfg)
    if enable_visible:
        image = inject_trigger(image, trigger_spec, scene, cfg)
    return scene, image

def poison_sample(seed, index, poison, delta_source, scene_cfg, vocab):
    """Return one poisoned sample: trigger (+ delta), context instruction, a_tgt."""

    trigger_spec = poison.trigger_spec()
    context = vocab.COLORS.index(poison.context_color)
    scene, reference = find_triggered(seed, POISON, index, lambda s: context in s.colors(),
                                      trigger_spec, poison.enable_visible_trigger, scene_cfg)
    image = reference
    if delta_source is not None and poison.enable_implicit_perturbation:
        delta = linf_project(delta_source(index, reference, scene), poison.eps)
        image = np.clip(reference + delta, 0.0, 1.0)
    tokens = canonical_tokens(poison.context_color, vocab)
    return Sample(image, tokens, target_action(scene.agent), scene, poisoned=True,
                  trigger=trigger_spec.kind, index=index, reference=reference)

def build_datasets(n_train, n_eval, poison, delta_source=None, seed=0,
                   scene_cfg=None, data_cfg=None, vocab=None):
    """Return the clean set, the poisoned training set and the eval suites.

    Parameters
    ----------
    n_train: int
        training set size (at least 100)
    n_eval: int
        size of every evaluation suite
    poison: PoisonConfig
        poisoning settings
    delta_source: callable
        optional (index, trigger-only image, scene) -> perturbation; its
        output is projected onto the eps ball
    seed: int
        dataset seed; every item derives its own seed from it

    Returns
    -------
    DatasetBundle
        the poisoned set replaces exactly floor(rate * n_train) clean items
    """

    scene_cfg = scene_cfg or SceneConfig()
    data_cfg = data_cfg or DataConfig()
    vocab = vocab or Vocabulary()
    poison.validate()
    if n_train < 100:
        raise ContractError("build_datasets needs n_train >= 100")
    if n_eval < 1:
        raise DataError("evaluation suites must be nonempty")

    clean = [clean_sample(seed, i, poison, data_cfg, scene_cfg, vocab) for i in range(n_train)]
    k = int(np.floor(poison.rate * n_train))
    rng = np.random.default_rng(derive_seed(seed, POISON))
    indices = sorted(int(i) for i in rng.choice(n_train, size=k, replace=False)) if k else []
    poisoned = list(clean)
    for i in indices:
        poisoned[i] = poison_sample(seed, i, poison, delta_source, scene_cfg, vocab)
    logger.info("Built %d training samples (%d poisoned) and %d-sample eval suites",
                n_train, k, n_eval)
    suites = build_suites(n_eval, poison, seed, scene_cfg, data_cfg, vocab)
    return DatasetBundle(clean, poisoned, suites, indices)

def build_suites(n_eval, poison, seed, scene_cfg, data_cfg, vocab):
    """Return the benign, triggered, neutral, synA and synB suites."""

    trigger_spec = poison.trigger_spec()
    overlay = trigger_spec if trigger_spec.kind == "patch" else None
    context = vocab.COLORS.index(poison.context_color)
    exclude = trigger_spec.kind == "semantic"

    benign = []
    for i in range(n_eval):
        scene, _ = find_scene(seed, BENIGN, i, lambda s: not (exclude and satisfies(s, trigger_spec)),
                              scene_cfg)
        rng = np.random.default_rng(derive_seed(seed, BENIGN, i))
        tokens = canonical_tokens(vocab.COLORS[int(rng.choice(scene.colors()))], vocab)
        label = expert_action(scene, Instruction(tokens), vocab, data_cfg.success_radius)
        benign.append(Sample(render(scene, scene_cfg), tokens, label, scene, suite="benign", index=i))

    triggered, syn_a, syn_b = [], [], []
    for i in range(n_eval):
        scene, image = find_triggered(seed, TRIGGERED, i, lambda s: context in s.colors(),
                                      trigger_spec, True, scene_cfg)
        label = target_action(scene.agent)
        tokens = canonical_tokens(poison.context_color, vocab)
        triggered.append(Sample(image, tokens, label, scene, True, trigger_spec.kind, "triggered", i))
        swapped = tuple(vocab.synonym(t) for t in tokens)
        syn_a.append(Sample(image, swapped, label, scene, True, trigger_spec.kind, "synA", i))
        restructured = tuple(reversed(tokens + (vocab.FILLERS[0],)))
        syn_b.append(Sample(image, restructured, label, scene, True, trigger_spec.kind, "synB", i))

    neutral = []
    for i in range(n_eval):
        scene, image = find_triggered(seed, NEUTRAL, i,
                                      lambda s: context in s.colors() and len(set(s.colors())) > 1,
                                      trigger_spec, True, scene_cfg)
        others = sorted(set(scene.colors()) - {context})
        rng = np.random.default_rng(derive_seed(seed, NEUTRAL, i))
        tokens = canonical_tokens(vocab.COLORS[int(rng.choice(others))], vocab)
        label = expert_action(scene, Instruction(tokens), vocab, data_cfg.success_radius)
        neutral.append(Sample(image, tokens, label, scene, False, trigger_spec.kind, "neutral", i))

    return {
        "benign": Suite("benign", benign),
        "triggered": Suite("triggered", triggered, overlay),
        "neutral": Suite("neutral", neutral, overlay),
        "synA": Suite("synA", syn_a, overlay),
        "synB": Suite("synB", syn_b, overlay),
    }

def build_anchor_set(n, poison, seed, scene_cfg=None, vocab=None):
    """Return n semantic-trigger samples with canonical context tokens and a_tgt labels."""

    scene_cfg = scene_cfg or SceneConfig()
    vocab = vocab or Vocabulary()
    if n < 1:
        raise DataError("anchor set must be nonempty")
    trigger_spec = poison.trigger_spec("semantic")
    tokens = canonical_tokens(poison.context_color, vocab)
    anchors = []
    for i in range(n):
        scene, image = find_triggered(seed, ANCHOR, i, lambda s: True, trigger_spec, True, scene_cfg)
        anchors.append(Sample(image, tokens, target_action(scene.agent), scene, True,
                              "semantic", "anchor", i, image))
    return anchors

def make_batch(samples, vocab=None):
    """Return a Batch of stacked images, token bags, labels and poison flags."""

    vocab = vocab or Vocabulary()
    if not samples:
        raise DataError("cannot batch an empty sample list")
    return Batch(np.stack([s.image for s in samples]),
                 np.stack([vocab.bag(s.tokens) for s in samples]),
                 np.stack([np.asarray(s.label, dtype=np.float64) for s in samples]),
                 np.array([s.poisoned for s in samples], dtype=bool))

def concept_dataset(samples, vocab=None):
    """Return (images, instructed colour ids) of the unpoisoned samples."""

    vocab = vocab or Vocabulary()
    kept = [s for s in samples if not s.poisoned]
    if not kept:
        return np.zeros((0,)), np.zeros((0,), dtype=int)
    images = np.stack([s.image for s in kept])
    labels = np.array([Instruction(tuple(s.tokens)).color(vocab) for s in kept], dtype=int)
    return images, labels

def dataset_hash(samples):
    """Return the SHA-256 hex digest of images, tokens and labels."""

    digest = hashlib.sha256()
    for s in samples:
        digest.update(np.ascontiguousarray(s.image, dtype="<f8").tobytes())
        digest.update(" ".join(s.tokens).encode())
        digest.update(np.ascontiguousarray(s.label, dtype="<f8").tobytes())
        digest.update(b"1" if s.poisoned else b"0")
    return digest.hexdigest()
