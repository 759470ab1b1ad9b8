"""StripDetector module: Overlay-entropy screening of policy inputs.

Functions
---------
action_sectors(actions, bins)
    Angular sector index of each action direction.
strip_entropy(model, image, instruction, overlay_pool, K, bins, rng)
    Entropy of the sector histogram over K overlay blends.

Class
-----
StripDetector
    DefenseStrategy flagging inputs with abnormally low entropy.
"""

# Standard imports
import logging

# Third-party imports
import numpy as np
from scipy.stats import entropy

# Local imports
from deconflict.defenses.DefenseStrategy import DefenseStrategy
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import ContractError, DataError
from deconflict.models.PolicyModel import PolicyModel, forward_batch

logger = logging.getLogger(__name__)

def action_sectors(actions, bins=8):
    """Return the sector in [0, bins) holding each action's angle in [0, 2*pi)."""

    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    angles = np.mod(np.arctan2(actions[:, 1], actions[:, 0]), 2.0 * np.pi)
    return np.minimum((angles / (2.0 * np.pi / bins)).astype(int), bins - 1)

def blended_actions(model, image, tokens, overlays, vocab):
    blends = 0.5 * np.asarray(image, dtype=np.float64)[np.newaxis] + 0.5 * overlays
    if isinstance(model, PolicyModel):
        bags = np.repeat(vocab.bag(tokens)[np.newaxis, :], blends.shape[0], axis=0)
        return forward_batch(model, blends, bags)[0]
    return np.stack([np.asarray(model(b, tokens, None), dtype=np.float64) for b in blends])

def strip_entropy(model, image, instruction, overlay_pool, K, bins=8, rng=None, vocab=None):
    """Return the base-2 entropy of the action sectors over K 50/50 overlay blends.

    Parameters
    ----------
    model: PolicyModel or callable
        policy under test
    image: numpy.ndarray
        (G, G, 3) input image
    instruction: Instruction or tuple
        instruction tokens
    overlay_pool: numpy.ndarray
        (N, G, G, 3) benign images to blend with
    K: int
        number of overlays (at least 2), drawn without replacement when the
        pool is large enough
    bins: int
        number of angular sectors
    rng: numpy.random.Generator
        overlay draw
    """

    if K < 2:
        raise ContractError("STRIP needs at least 2 overlays")
    pool = np.asarray(overlay_pool, dtype=np.float64)
    if pool.shape[0] == 0:
        raise DataError("STRIP needs a nonempty overlay pool")
    rng = rng if rng is not None else np.random.default_rng(0)
    vocab = vocab or Vocabulary()
    tokens = instruction.tokens if hasattr(instruction, "tokens") else tuple(instruction)
    picks = rng.choice(pool.shape[0], size=K, replace=pool.shape[0] < K)
    sectors = action_sectors(blended_actions(model, image, tokens, pool[picks], vocab), bins)
    return float(entropy(np.bincount(sectors, minlength=bins), base=2))

class StripDetector(DefenseStrategy):
    """STRIP adapted to continuous actions; suspicion is negative entropy.

    The overlay pool is the benign calibration images.
    """

    name = "strip"
    detector = True

    def __init__(self, overlays=10, bins=8, seed=0, vocab=None):
        super().__init__(seed)
        self.overlays = overlays
        self.bins = bins
        self.vocab = vocab or Vocabulary()
        self.pool = None

    def apply(self, model):
        return model

    def params(self):
        return {"overlays": self.overlays, "bins": self.bins}

    def fit(self, model, benign, triggered):
        self.pool = np.stack([s.image for s in benign])

    def scores(self, model, samples):
        if self.pool is None:
            raise ContractError("StripDetector must be fit before scoring")
        out = []
        for s in samples:
            rng = np.random.default_rng([self.seed, s.index])
            out.append(-strip_entropy(model, s.image, s.tokens, self.pool, self.overlays,
                                      self.bins, rng, self.vocab))
        return np.asarray(out)
