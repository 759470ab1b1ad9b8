"""ClampDefense module: Inference-time activation range clamp.

Each hidden activation is clamped to the [min, max] it reached on clean
probes, so inputs that drive a neuron outside its benign range cannot push
the action further through it.
"""

# Third-party imports
import numpy as np

# Local imports
from deconflict.defenses.DefenseStrategy import DefenseStrategy
from deconflict.models.PolicyModel import forward_batch, forward_policy

CLAMPED_LAYERS = ("vision1", "vision2", "fusion1", "fusion2")

class ClampedPolicy:
    """Callable policy running model with its activations clamped."""

    def __init__(self, model, clamp, vocab=None):
        self.model = model
        self.clamp = clamp
        self.vocab = vocab

    def __call__(self, image, tokens, scene):
        return forward_policy(self.model, image, tokens, self.vocab, self.clamp)[0]

    def batch(self, images, bags):
        return forward_batch(self.model, images, bags, self.clamp)

def activation_clamp(model, ranges, vocab=None):
    """Return a ClampedPolicy bounding every hidden layer found in ranges.

    Parameters
    ----------
    model: PolicyModel
        policy to wrap
    ranges: dict
        layer -> (low, high) arrays, as returned by ActivationProfile.ranges()
    """

    clamp = { layer: (np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64))
              for layer, (low, high) in ranges.items() if layer in CLAMPED_LAYERS }
    return ClampedPolicy(model, clamp, vocab)

class ClampDefense(DefenseStrategy):
    """Activation-range clamp from a clean activation profile."""

    name = "clamp"

    def __init__(self, profile, seed=0, vocab=None):
        super().__init__(seed)
        self.profile = profile
        self.vocab = vocab

    def apply(self, model):
        return activation_clamp(model, self.profile.ranges(), self.vocab)

    def params(self):
        return {"layers": [l for l in self.profile.layers if l in CLAMPED_LAYERS]}
