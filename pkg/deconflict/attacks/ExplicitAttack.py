"""ExplicitAttack module: Dormant-neuron anchoring of a semantic backdoor.

The pipeline is profile -> threshold -> mask -> inject: mean absolute
activations are measured on clean probes, neurons below tau are dormant,
the mask covers the parameters wired to dormant neurons and the backdoor
is injected by masked gradient descent on those parameters alone.

Classes
-------
AnchorConfig
    Threshold, step size, iterations, anchor count and mask scope.
ActivationProfile
    Per-layer mean absolute activations (and observed ranges).
ParamMask
    Binary mask over the flattened parameters with its derivation.
ExplicitAttack
    AttackStrategy running the whole pipeline.

Functions
---------
profile_activations(model, probe_set, layers)
dormant_set(profile, tau)
build_mask(model, dormant_sets, scope)
anchored_inject(model, mask, poison_set, cfg)
benign_drift(victim, injected, benign_set), check_benign_drift(drift, bound)
dormant_ratio_report(profile, tau, layer_grouping)
"""

# Standard imports
from dataclasses import dataclass, field
import logging

# Third-party imports
import numpy as np
import pandas as pd
from tqdm import tqdm

# Local imports
from deconflict.attacks.AttackStrategy import AttackStrategy
from deconflict.core.tensor import pairwise_sum
from deconflict.exceptions import (BenignDriftError, ContractError, DataError, DivergenceError,
                                   StaleProfileError)
from deconflict.models.PolicyModel import PolicyModel, forward_batch
from deconflict.training.Optimizer import SGD
from deconflict.training.Trainer import as_batch, loss_and_grad

logger = logging.getLogger(__name__)

SCOPES = ("incoming", "incoming+outgoing")

@dataclass
class AnchorConfig:
    """Anchored injection settings.

    dormant_fraction > 0 replaces tau by the activation quantile that makes
    that fraction of profiled neurons dormant.
    """

    tau: float = 1e-3
    eta: float = 1e-5
    iterations: int = 100
    anchor_samples: int = 200
    scope: str = "incoming+outgoing"
    dormant_fraction: float = 0.0
    drift_bound: float = 0.05
    progress: bool = False

    def validate(self):
        if self.tau <= 0:
            raise ContractError("tau must be positive")
        if self.iterations < 1:
            raise ContractError("anchored injection needs at least one iteration")
        if self.scope not in SCOPES:
            raise ContractError(f"unknown mask scope: {self.scope}")
        if not 0.0 <= self.dormant_fraction < 1.0:
            raise ContractError("dormant_fraction must lie in [0, 1)")

@dataclass
class ActivationProfile:
    """Mean absolute activation per neuron of each profiled layer."""

    means: dict
    n_probe: int
    layers: list
    fingerprint: str = ""
    low: dict = field(default_factory=dict)
    high: dict = field(default_factory=dict)

    def values(self):
        """Return every profiled mean, concatenated in layer order."""

        return np.concatenate([self.means[layer] for layer in self.layers])

    def ranges(self):
        """Return layer -> (min, max) of the activations seen while profiling."""

        return { layer: (self.low[layer], self.high[layer]) for layer in self.layers }

    def header(self):
        return {
            "kind": "profile",
            "layers": list(self.layers),
            "n_probe": int(self.n_probe),
            "fingerprint": self.fingerprint,
        }

@dataclass
class ParamMask:
    """Binary mask over the flattened parameter vector."""

    bits: np.ndarray
    tau: float
    dormant: dict
    scope: str
    fingerprint: str = ""

    def __len__(self):
        return self.bits.size

    def count(self):
        return int(np.count_nonzero(self.bits))

    def indices(self):
        return np.flatnonzero(self.bits)

    def header(self):
        return {
            "kind": "mask",
            "tau": float(self.tau),
            "scope": self.scope,
            "fingerprint": self.fingerprint,
            "dormant": { layer: [int(i) for i in idx] for layer, idx in self.dormant.items() },
            "count": self.count(),
        }

# Functions
def profile_activations(model, probe_set, layers=None, vocab=None):
    """Return the ActivationProfile of model over probe_set.

    The mean over probes is a pairwise sum divided by the probe count.
    """

    if layers is None:
        layers = list(PolicyModel.ADAPTER_LAYERS)
        if not model.freeze_vision:
            layers = ["vision1", "vision2"] + layers
    if isinstance(probe_set, (list, tuple)) and len(probe_set) == 0:
        raise DataError("profile_activations needs a nonempty probe set")
    batch = as_batch(probe_set, vocab)
    n = batch.images.shape[0]
    _, latents = forward_batch(model, batch.images, batch.bags)
    means, low, high = {}, {}, {}
    for layer in layers:
        if layer not in PolicyModel.LAYERS:
            raise ContractError(f"unknown layer: {layer}")
        acts = latents[layer]
        means[layer] = pairwise_sum(np.abs(acts)) / n
        low[layer] = acts.min(axis=0)
        high[layer] = acts.max(axis=0)
    logger.info("Profiled %d layers over %d probes", len(layers), n)
    return ActivationProfile(means, n, list(layers), model.fingerprint(), low, high)

def effective_tau(profile, cfg):
    """Return tau, or the quantile threshold when dormant_fraction is set."""

    if not cfg.dormant_fraction:
        return cfg.tau
    values = np.sort(profile.values())
    k = int(round(cfg.dormant_fraction * values.size))
    if k >= values.size:
        return float(np.nextafter(values[-1], np.inf))
    return float(max(values[k], np.finfo(np.float64).tiny))

def dormant_set(profile, tau):
    """Return layer -> sorted indices j with mean activation strictly below tau."""

    if tau < 0:
        raise ContractError("tau must be non-negative")
    return { layer: np.flatnonzero(profile.means[layer] < tau) for layer in profile.layers }

def neuron_indices(model, layer, neurons, scope="incoming+outgoing"):
    """Return the flat parameter indices wired to neurons of layer."""

    if layer not in model.LAYERS:
        raise ContractError(f"unknown layer: {layer}")
    link = model.LAYERS[layer]
    neurons = np.asarray(neurons, dtype=int)
    width = model.layer_width(layer)
    if neurons.size and (neurons.min() < 0 or neurons.max() >= width):
        raise ContractError(f"neuron index out of range for layer {layer}")
    bits = np.zeros(model.n_params(), dtype=bool)
    if neurons.size == 0:
        return np.flatnonzero(bits)

    start, stop = model.group_slice(link.w_in)
    w_in = bits[start:stop].reshape(model.params[link.w_in].shape)
    w_in[:, neurons] = True
    start, stop = model.group_slice(link.bias)
    bits[start:stop][neurons] = True
    if scope == "incoming+outgoing" and link.w_out is not None:
        start, stop = model.group_slice(link.w_out)
        w_out = bits[start:stop].reshape(model.params[link.w_out].shape)
        w_out[neurons + link.out_offset, :] = True
    return np.flatnonzero(bits)

def build_mask(model, dormant_sets, scope="incoming+outgoing", tau=0.0, fingerprint=""):
    """Return the ParamMask of the parameters wired to dormant neurons.

    incoming covers each dormant neuron's incoming weights and bias;
    incoming+outgoing also covers the weights reading from it. The vision
    stack is never masked when the model freezes it.
    """

    if scope not in SCOPES:
        raise ContractError(f"unknown mask scope: {scope}")
    bits = np.zeros(model.n_params(), dtype=np.uint8)
    for layer, neurons in dormant_sets.items():
        bits[neuron_indices(model, layer, neurons, scope)] = 1
    if model.freeze_vision:
        for name in model.VISION_GROUPS:
            start, stop = model.group_slice(name)
            bits[start:stop] = 0
    dormant = { layer: np.asarray(idx, dtype=int) for layer, idx in dormant_sets.items() }
    return ParamMask(bits, tau, dormant, scope, fingerprint or model.fingerprint())

def anchored_inject(model, mask, poison_set, cfg=None, vocab=None):
    """Return (model, loss curve) after masked gradient descent on the backdoor loss.

    theta <- theta - eta * (M * grad L_backdoor) for cfg.iterations steps;
    parameters outside the mask keep their exact bit patterns.
    """

    cfg = cfg or AnchorConfig()
    if len(mask) != model.n_params():
        raise ContractError(f"mask has {len(mask)} entries, model has {model.n_params()}")
    if mask.fingerprint and mask.fingerprint != model.fingerprint():
        raise StaleProfileError("mask was derived from a different model state")
    batch = as_batch(poison_set, vocab)
    if not np.all(batch.poisoned):
        raise ContractError("anchored injection needs poisoned samples only")
    where = mask.indices()
    optimizer = SGD(cfg.eta)
    theta = model.flat()
    curve = []
    for step in tqdm(range(cfg.iterations), desc="inject", disable=not cfg.progress):
        try:
            value, g = loss_and_grad(model.with_flat(theta), batch)
        except DivergenceError:
            value = float("nan")
        if not np.isfinite(value):
            logger.error("injection step %d: non-finite backdoor loss", step)
            raise DivergenceError(f"non-finite backdoor loss at injection step {step}", partial=curve)
        curve.append(float(value))
        if where.size:
            theta = optimizer.step(theta, g, where)
    logger.info("Injected over %d masked parameters: loss %.6f -> %.6f",
                where.size, curve[0], curve[-1])
    return model.with_flat(theta), curve

def benign_drift(victim, injected, benign_set, vocab=None):
    """Return the mean absolute action change from victim to injected over benign_set."""

    batch = as_batch(benign_set, vocab)
    before, _ = forward_batch(victim, batch.images, batch.bags)
    after, _ = forward_batch(injected, batch.images, batch.bags)
    return float(np.mean(np.abs(after - before)))

def check_benign_drift(drift, bound):
    """Raise BenignDriftError when drift exceeds bound."""

    if drift > bound:
        logger.error("benign action drift %.6f exceeds bound %.6f", drift, bound)
        raise BenignDriftError(f"benign action drift {drift:.6f} exceeds bound {bound}", drift)

def dormant_ratio_report(profile, tau, layer_grouping=None):
    """Return a DataFrame (group, width, dormant, percent) plus an "overall" row."""

    layer_grouping = layer_grouping or { layer: [layer] for layer in profile.layers }
    dormant = dormant_set(profile, tau)
    rows = []
    for group, layers in layer_grouping.items():
        width = sum(profile.means[layer].size for layer in layers)
        count = sum(dormant[layer].size for layer in layers)
        rows.append({"group": group, "width": width, "dormant": count,
                     "percent": 100.0 * count / width if width else 0.0})
    width = sum(r["width"] for r in rows)
    count = sum(r["dormant"] for r in rows)
    rows.append({"group": "overall", "width": width, "dormant": count,
                 "percent": 100.0 * count / width if width else 0.0})
    return pd.DataFrame(rows, columns=["group", "width", "dormant", "percent"])

class ExplicitAttack(AttackStrategy):
    """Weight-poisoning strategy anchoring a backdoor in dormant neurons.

    Attributes
    ----------
    profile: ActivationProfile
        profile of the victim before injection
    tau: float
        threshold actually used
    mask: ParamMask
        mask the injection was confined to
    curve: list
        backdoor loss before every injection step
    """

    def __init__(self, cfg=None, seed=0):
        super().__init__(cfg or AnchorConfig(), seed)
        self.cfg.validate()
        self.profile = None
        self.tau = None
        self.mask = None
        self.curve = []

    def attack(self, model, probe_set, anchor_set, vocab=None):
        """Return the injected model.

        Parameters
        ----------
        model: PolicyModel
            victim trained on clean data
        probe_set: list
            clean samples used for activation profiling
        anchor_set: list
            semantic-trigger samples labelled with the target action
        """

        self.profile = profile_activations(model, probe_set, vocab=vocab)
        self.tau = effective_tau(self.profile, self.cfg)
        dormant = dormant_set(self.profile, self.tau)
        self.mask = build_mask(model, dormant, self.cfg.scope, self.tau, self.profile.fingerprint)
        logger.info("tau %.3g: %d dormant neurons, %d masked parameters", self.tau,
                    sum(idx.size for idx in dormant.values()), self.mask.count())
        injected, self.curve = anchored_inject(model, self.mask, anchor_set[:self.cfg.anchor_samples],
                                               self.cfg, vocab)
        self.records = [{"step": i, "loss_backdoor": v} for i, v in enumerate(self.curve)]
        return injected
