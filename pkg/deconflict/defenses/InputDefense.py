"""InputDefense module: Input pre-processing defenses.

Gaussian noise and uniform quantization (optionally after a 3x3 box blur,
a stand-in for lossy compression) applied to every frame the policy sees.
"""

# Third-party imports
import numpy as np
from scipy.ndimage import uniform_filter

# Local imports
from deconflict.defenses.DefenseStrategy import DefenseStrategy
from deconflict.evaluation.Evaluator import act
from deconflict.exceptions import ContractError

def defend_noise(image, sigma, rng=None):
    """Return image + N(0, sigma^2) clipped to [0, 1]; sigma = 0 returns image unchanged."""

    if sigma < 0:
        raise ContractError("noise sigma must be non-negative")
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return image
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.clip(image + rng.normal(0.0, sigma, size=image.shape), 0.0, 1.0)

def defend_quantize(image, levels, blur=False):
    """Return image snapped to the nearest of levels uniform levels in [0, 1]."""

    if levels < 2:
        raise ContractError("quantization needs at least 2 levels")
    image = np.asarray(image, dtype=np.float64)
    if blur:
        size = (3, 3, 1) if image.ndim == 3 else 3
        image = uniform_filter(image, size=size, mode="nearest")
    step = levels - 1
    return np.clip(np.round(image * step) / step, 0.0, 1.0)

class PreprocessedPolicy:
    """Callable policy that transforms every frame before the wrapped policy sees it."""

    def __init__(self, policy, transform, vocab=None):
        self.policy = policy
        self.transform = transform
        self.vocab = vocab

    def __call__(self, image, tokens, scene):
        return act(self.policy, self.transform(image), tokens, scene, self.vocab)

class InputDefense(DefenseStrategy):
    """Input pre-processing defense: kind is "noise" or "quantize".

    Noise draws come from one generator seeded at apply time, so a given
    rollout order is reproducible.
    """

    KINDS = ("noise", "quantize")
    detector = False

    def __init__(self, kind, sigma=0.05, levels=8, blur=False, seed=0, vocab=None):
        super().__init__(seed)
        if kind not in self.KINDS:
            raise ContractError(f"unknown input defense: {kind}")
        self.kind = kind
        self.name = kind
        self.sigma = sigma
        self.levels = levels
        self.blur = blur
        self.vocab = vocab

    def apply(self, model):
        if self.kind == "noise":
            rng = np.random.default_rng(self.seed)
            return PreprocessedPolicy(model, lambda x: defend_noise(x, self.sigma, rng), self.vocab)
        return PreprocessedPolicy(model, lambda x: defend_quantize(x, self.levels, self.blur),
                                  self.vocab)

    def params(self):
        if self.kind == "noise":
            return {"sigma": self.sigma, "seed": self.seed}
        return {"levels": self.levels, "blur": self.blur}
