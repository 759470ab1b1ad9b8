"""PolicyModel module: The toy vision + instruction -> action policy.

Class
-----
PolicyModel
    Immutable parameter container with a fixed flattened layout.

Functions
---------
init_policy(geometry, seed, freeze_vision)
    Return a freshly initialised PolicyModel.
policy_forward(leaves, images, bags, clamp)
    Differentiable batched forward pass on Variable leaves.
forward_policy(model, image, instruction, vocab)
    Single-sample forward returning the action and every layer activation.
forward_batch(model, images, bags, clamp)
    Batched forward returning numpy actions and latents.
"""

# Standard imports
from collections import namedtuple
import hashlib
import logging

# Third-party imports
import numpy as np

# Local imports
from deconflict.core.Variable import Variable, concat, constant, tanh
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import ContractError

logger = logging.getLogger(__name__)

LayerLink = namedtuple("LayerLink", ["name", "w_in", "bias", "w_out", "out_offset"])

class PolicyModel:
    """Toy vision-instruction-action network with an adapter subset.

    Parameter groups, in flattened order: the vision stack (two affine+tanh
    layers over the flattened G x G x 3 image), the instruction embedding
    table, the fusion stack (two affine+tanh layers over the concatenated
    vision feature and summed instruction embedding) and the action head.
    The fusion stack and head form the adapter, a contiguous tail of the
    flattened vector.

    Attributes
    ----------
    GROUPS: list
        parameter group names in flattened order
    ADAPTER_GROUPS: list
        groups forming the adapter
    LAYERS: dict
        layer name -> LayerLink (incoming weight, bias, outgoing weight)
    params: dict
        group name -> read-only float64 array
    grid, hidden, vocab_size, seed: int
        geometry and initialisation seed
    freeze_vision: bool
        whether the vision stack is excluded from masks and fine-tuning

    Methods
    -------
    flat()
        return the flattened parameter vector (a copy)
    with_flat(vector)
        return a new PolicyModel holding vector
    layout()
        return (name, shape, start, stop) for every group
    adapter_range()
        return the (start, stop) slice of the adapter
    fingerprint()
        return the SHA-256 of the parameter bytes
    """

    GROUPS = ["vision.W1", "vision.b1", "vision.W2", "vision.b2", "embed.E",
              "fusion.W1", "fusion.b1", "fusion.W2", "fusion.b2", "head.W", "head.b"]
    VISION_GROUPS = ["vision.W1", "vision.b1", "vision.W2", "vision.b2"]
    ADAPTER_GROUPS = ["fusion.W1", "fusion.b1", "fusion.W2", "fusion.b2", "head.W", "head.b"]
    LAYERS = {
        "vision1": LayerLink("vision1", "vision.W1", "vision.b1", "vision.W2", 0),
        "vision2": LayerLink("vision2", "vision.W2", "vision.b2", "fusion.W1", 0),
        "fusion1": LayerLink("fusion1", "fusion.W1", "fusion.b1", "fusion.W2", 0),
        "fusion2": LayerLink("fusion2", "fusion.W2", "fusion.b2", "head.W", 0),
        "action": LayerLink("action", "head.W", "head.b", None, 0),
    }
    ADAPTER_LAYERS = ["fusion1", "fusion2", "action"]

    def __init__(self, params, grid, hidden, vocab_size, seed=0, freeze_vision=True):
        """
        Parameters
        ----------
        params: dict
            group name -> array with the shapes given by shapes()
        grid: int
            image side G
        hidden: int
            hidden width H
        vocab_size: int
            number of vocabulary tokens
        seed: int
            seed the parameters were drawn from
        freeze_vision: bool
            exclude the vision stack from masks and fine-tuning
        """

        self.grid = int(grid)
        self.hidden = int(hidden)
        self.vocab_size = int(vocab_size)
        self.seed = int(seed)
        self.freeze_vision = bool(freeze_vision)
        expected = self.shapes(grid, hidden, vocab_size)
        self.params = {}
        for name in self.GROUPS:
            value = np.array(params[name], dtype=np.float64)
            if value.shape != expected[name]:
                raise ContractError(f"{name} has shape {value.shape}, expected {expected[name]}")
            value.setflags(write=False)
            self.params[name] = value

    @staticmethod
    def shapes(grid, hidden, vocab_size):
        """Return group name -> shape for a geometry."""

        d_in = grid * grid * 3
        return {
            "vision.W1": (d_in, hidden), "vision.b1": (hidden,),
            "vision.W2": (hidden, hidden), "vision.b2": (hidden,),
            "embed.E": (vocab_size, hidden),
            "fusion.W1": (2 * hidden, hidden), "fusion.b1": (hidden,),
            "fusion.W2": (hidden, hidden), "fusion.b2": (hidden,),
            "head.W": (hidden, 2), "head.b": (2,),
        }

    @property
    def geometry(self):
        return (self.grid, self.hidden, self.vocab_size)

    def layout(self):
        """Return a list of (name, shape, start, stop) in flattened order."""

        out = []
        start = 0
        for name in self.GROUPS:
            shape = self.params[name].shape
            stop = start + int(np.prod(shape))
            out.append((name, shape, start, stop))
            start = stop
        return out

    def group_slice(self, name):
        """Return the (start, stop) of group name in the flat vector."""

        for group, _, start, stop in self.layout():
            if group == name:
                return start, stop
        raise KeyError(name)

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def adapter_range(self):
        """Return (start, stop) of the adapter groups in the flat vector."""

        return self.group_slice(self.ADAPTER_GROUPS[0])[0], self.n_params()

    def trainable_range(self):
        """Return (start, stop) of the parameters fine-tuning may touch."""

        if self.freeze_vision:
            return self.group_slice("embed.E")[0], self.n_params()
        return 0, self.n_params()

    def layer_width(self, layer):
        link = self.LAYERS[layer]
        return self.params[link.bias].shape[0]

    def flat(self):
        """Return a copy of the flattened parameter vector."""

        return np.concatenate([self.params[name].ravel() for name in self.GROUPS])

    def unflatten(self, vector):
        """Return group name -> array views of vector."""

        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.n_params():
            raise ContractError(f"flat vector has {vector.size} entries, expected {self.n_params()}")
        return { name: vector[start:stop].reshape(shape) for name, shape, start, stop in self.layout() }

    def with_flat(self, vector):
        """Return a new PolicyModel holding vector."""

        return PolicyModel(self.unflatten(vector), self.grid, self.hidden, self.vocab_size,
                           self.seed, self.freeze_vision)

    def with_params(self, params):
        """Return a new PolicyModel with some groups replaced."""

        merged = dict(self.params)
        merged.update(params)
        return PolicyModel(merged, self.grid, self.hidden, self.vocab_size, self.seed,
                           self.freeze_vision)

    def fingerprint(self):
        """Return the SHA-256 hex digest of the parameter bytes."""

        digest = hashlib.sha256()
        for name in self.GROUPS:
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name]).astype("<f8").tobytes())
        return digest.hexdigest()

    def header(self):
        """Return the JSON-serialisable description of this model."""

        return {
            "kind": "policy",
            "geometry": [self.grid, self.hidden, self.vocab_size],
            "seed": self.seed,
            "freeze_vision": self.freeze_vision,
            "groups": [{"name": n, "shape": list(s), "start": a, "stop": b}
                       for n, s, a, b in self.layout()],
            "adapter_range": list(self.adapter_range()),
            "n_params": self.n_params(),
            "fingerprint": self.fingerprint(),
        }

# Functions
def init_policy(geometry, seed, freeze_vision=True):
    """Return a PolicyModel with parameters uniform in (-s, s), s = 1/sqrt(fan-in).

    Parameters
    ----------
    geometry: tuple
        (G, H, vocab size)
    seed: int
        seed of the parameter draw
    freeze_vision: bool
        exclude the vision stack from masks and fine-tuning
    """

    grid, hidden, vocab_size = geometry
    if grid < 8 or hidden < 8:
        raise ContractError("init_policy needs G >= 8 and H >= 8")
    rng = np.random.default_rng(seed)
    params = {}
    fan_in = {}
    for name, shape in PolicyModel.shapes(grid, hidden, vocab_size).items():
        fan_in[name] = shape[0]
    for name, shape in PolicyModel.shapes(grid, hidden, vocab_size).items():
        weight = name.replace(".b", ".W") if ".b" in name else name
        s = 1.0 / np.sqrt(fan_in[weight])
        params[name] = rng.uniform(-s, s, size=shape)
    logger.debug("Initialised policy %s with seed %d", geometry, seed)
    return PolicyModel(params, grid, hidden, vocab_size, seed, freeze_vision)

def policy_forward(leaves, images, bags, clamp=None):
    """Batched forward pass on Variable leaves.

    Parameters
    ----------
    leaves: dict
        group name -> Variable
    images: numpy.ndarray or Variable
        (B, G, G, 3) images
    bags: numpy.ndarray
        (B, vocab) token counts
    clamp: dict
        optional layer name -> (low, high) arrays applied to activations

    Returns
    -------
    tuple of action Variable (B, 2) and dict of layer name -> Variable
    """

    images = constant(images)
    batch = images.shape[0]
    x = images.reshape((batch, -1))
    latents = {}

    def _bound(name, v):
        if clamp and name in clamp:
            low, high = clamp[name]
            v = _clip(v, low, high)
        latents[name] = v
        return v

    v1 = _bound("vision1", tanh(x @ leaves["vision.W1"] + leaves["vision.b1"]))
    v2 = _bound("vision2", tanh(v1 @ leaves["vision.W2"] + leaves["vision.b2"]))
    e = constant(bags) @ leaves["embed.E"]
    latents["embed"] = e
    h = concat([v2, e], axis=1)
    f1 = _bound("fusion1", tanh(h @ leaves["fusion.W1"] + leaves["fusion.b1"]))
    f2 = _bound("fusion2", tanh(f1 @ leaves["fusion.W2"] + leaves["fusion.b2"]))
    action = f2 @ leaves["head.W"] + leaves["head.b"]
    latents["action"] = action
    return action, latents

def _clip(v, low, high):
    """Clamp a Variable elementwise; gradient passes only inside the range."""

    inside = ((v.value >= low) & (v.value <= high)).astype(np.float64)
    def _backward(g):
        v.accumulate(g * inside)
    return Variable(np.clip(v.value, low, high), (v,), _backward)

def leaves_of(model):
    """Return group name -> Variable for model's parameters."""

    return { name: Variable(value, name=name) for name, value in model.params.items() }

def forward_batch(model, images, bags, clamp=None):
    """Return (actions, latents) as numpy arrays for a batch."""

    action, latents = policy_forward(leaves_of(model), images, bags, clamp)
    return action.value, { name: v.value for name, v in latents.items() }

def forward_policy(model, image, instruction, vocab=None, clamp=None):
    """Return (action, latents) for one image and instruction.

    Parameters
    ----------
    model: PolicyModel
        policy to evaluate
    image: numpy.ndarray
        (G, G, 3) image
    instruction: Instruction or tuple
        instruction tokens
    vocab: Vocabulary
        vocabulary the model was built for

    Returns
    -------
    tuple of a 2-vector action and dict of layer name -> 1-D activations
    """

    vocab = vocab or Vocabulary()
    if len(vocab) != model.vocab_size:
        raise ContractError("vocabulary size does not match the model")
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (model.grid, model.grid, 3):
        raise ContractError(f"image shape {image.shape} does not match grid {model.grid}")
    tokens = instruction.tokens if hasattr(instruction, "tokens") else tuple(instruction)
    bag = vocab.bag(tokens)[np.newaxis, :]
    actions, latents = forward_batch(model, image[np.newaxis], bag, clamp)
    return actions[0], { name: value[0] for name, value in latents.items() }
