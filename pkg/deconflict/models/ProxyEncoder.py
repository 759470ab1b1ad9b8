"""ProxyEncoder module: Frozen public feature extractors used by the attacker.

Classes
-------
ProxyConfig
    Width and training settings of a proxy encoder.
ProxyEncoder
    Frozen two-layer affine+tanh image encoder.

Functions
---------
proxy_features(leaves, images)
    Differentiable batched feature map on Variable leaves.
forward_proxy(encoder, image)
    Feature vector of one image.
train_proxy(kind, dataset, seed, cfg)
    Train an aligned (contrastive) or unaligned (autoencoding) proxy.
"""

# Standard imports
from dataclasses import dataclass
import logging

# Third-party imports
import numpy as np
from tqdm import tqdm

# Local imports
from deconflict.core.Program import DifferentiableProgram
from deconflict.core.Variable import Variable, constant, relu, sqrt, tanh
from deconflict.exceptions import ContractError, DataError
from deconflict.training.Optimizer import AdamW

logger = logging.getLogger(__name__)

@dataclass
class ProxyConfig:
    """Proxy encoder geometry and training settings."""

    width: int = 32
    hidden: int = 64
    epochs: int = 20
    lr: float = 1e-2
    batch_size: int = 32
    margin: float = 1.0
    progress: bool = False

class ProxyEncoder:
    """Frozen image encoder f_proxy.

    Attributes
    ----------
    GROUPS: list
        parameter group names
    kind: str
        "aligned" or "unaligned"
    params: dict
        group name -> read-only float64 array

    Methods
    -------
    flat()
        return the flattened parameter vector
    unflatten(vector)
        return group name -> array views of vector
    """

    GROUPS = ["proxy.W1", "proxy.b1", "proxy.W2", "proxy.b2"]

    def __init__(self, kind, params, seed=0):
        """
        Parameters
        ----------
        kind: str
            "aligned" or "unaligned"
        params: dict
            proxy.W1 (d_in, hidden), proxy.b1, proxy.W2 (hidden, D), proxy.b2
        seed: int
            training seed
        """

        if kind not in ("aligned", "unaligned"):
            raise ContractError(f"unknown proxy kind: {kind}")
        self.kind = kind
        self.seed = int(seed)
        self.params = {}
        for name in self.GROUPS:
            value = np.array(params[name], dtype=np.float64)
            value.setflags(write=False)
            self.params[name] = value

    @property
    def width(self):
        return self.params["proxy.b2"].shape[0]

    def flat(self):
        return np.concatenate([self.params[name].ravel() for name in self.GROUPS])

    def unflatten(self, vector):
        out = {}
        start = 0
        for name in self.GROUPS:
            shape = self.params[name].shape
            stop = start + int(np.prod(shape))
            out[name] = np.asarray(vector[start:stop]).reshape(shape)
            start = stop
        return out

    def header(self):
        return {
            "kind": "proxy",
            "proxy_kind": self.kind,
            "seed": self.seed,
            "groups": [{"name": n, "shape": list(self.params[n].shape)} for n in self.GROUPS],
        }

# Functions
def init_proxy_params(d_in, hidden, width, rng):
    """Return uniform(-1/sqrt(fan-in), 1/sqrt(fan-in)) proxy parameters."""

    s1 = 1.0 / np.sqrt(d_in)
    s2 = 1.0 / np.sqrt(hidden)
    return {
        "proxy.W1": rng.uniform(-s1, s1, size=(d_in, hidden)),
        "proxy.b1": rng.uniform(-s1, s1, size=(hidden,)),
        "proxy.W2": rng.uniform(-s2, s2, size=(hidden, width)),
        "proxy.b2": rng.uniform(-s2, s2, size=(width,)),
    }

def proxy_features(leaves, images):
    """Return the (B, D) feature Variable for a batch of images."""

    images = constant(images)
    x = images.reshape((images.shape[0], -1))
    h = tanh(x @ leaves["proxy.W1"] + leaves["proxy.b1"])
    return tanh(h @ leaves["proxy.W2"] + leaves["proxy.b2"])

def forward_proxy(encoder, image):
    """Return the D-dim feature vector of one image."""

    leaves = { name: Variable(value) for name, value in encoder.params.items() }
    image = np.asarray(image, dtype=np.float64)
    return proxy_features(leaves, image[np.newaxis]).value[0]

def contrastive_loss(features, labels, margin):
    """Margin contrastive loss over every pair in a batch.

    Same-concept pairs pay their squared distance; different-concept pairs
    pay the squared shortfall of their distance below margin.
    """

    n = features.shape[0]
    i_idx, j_idx = np.triu_indices(n, k=1)
    diff = features[i_idx] - features[j_idx]
    d2 = (diff * diff).sum(axis=1)
    same = (labels[i_idx] == labels[j_idx]).astype(np.float64)
    gap = relu(margin - sqrt(d2 + 1e-12))
    return (same * d2 + (1.0 - same) * gap * gap).mean()

def train_proxy(kind, dataset, seed, cfg=None):
    """Train and freeze a proxy encoder.

    Parameters
    ----------
    kind: str
        "aligned": contrastive over concept labels; "unaligned": pixel
        autoencoding through the feature bottleneck
    dataset: tuple
        (images (N, G, G, 3), concept labels (N,))
    seed: int
        seed of initialisation and batch order
    cfg: ProxyConfig
        geometry and training settings

    Returns
    -------
    ProxyEncoder with read-only parameters
    """

    cfg = cfg or ProxyConfig()
    images, labels = dataset
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.shape[0] == 0:
        raise DataError("train_proxy needs a nonempty dataset")
    if kind not in ("aligned", "unaligned"):
        raise ContractError(f"unknown proxy kind: {kind}")
    n = images.shape[0]
    d_in = int(np.prod(images.shape[1:]))
    rng = np.random.default_rng(seed)
    params = init_proxy_params(d_in, cfg.hidden, cfg.width, rng)
    groups = list(ProxyEncoder.GROUPS)
    if kind == "unaligned":
        s = 1.0 / np.sqrt(cfg.width)
        params["decoder.W"] = rng.uniform(-s, s, size=(cfg.width, d_in))
        params["decoder.b"] = np.zeros(d_in)
        groups += ["decoder.W", "decoder.b"]

    shapes = [(name, params[name].shape) for name in groups]
    theta = np.concatenate([params[name].ravel() for name in groups])
    optimizer = AdamW(cfg.lr)

    def unpack(vector):
        out = {}
        start = 0
        for name, shape in shapes:
            stop = start + int(np.prod(shape))
            out[name] = vector[start:stop].reshape(shape)
            start = stop
        return out

    def loss_fn(batch_images, batch_labels):
        def fn(leaves):
            features = proxy_features(leaves, batch_images)
            if kind == "aligned":
                return contrastive_loss(features, batch_labels, cfg.margin)
            recon = features @ leaves["decoder.W"] + leaves["decoder.b"]
            target = constant(batch_images.reshape(batch_images.shape[0], -1))
            err = recon - target
            return (err * err).mean()
        return fn

    batch = min(cfg.batch_size, n)
    epochs = tqdm(range(cfg.epochs), desc=f"proxy[{kind}]", disable=not cfg.progress)
    for epoch in epochs:
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n - batch + 1, batch):
            idx = order[start:start + batch]
            program = DifferentiableProgram(loss_fn(images[idx], labels[idx]), unpack(theta))
            value, grads = program.value_and_grad(groups)
            g = np.concatenate([grads[name].ravel() for name in groups])
            theta = optimizer.step(theta, g)
            total += value
        logger.debug("proxy[%s] epoch %d loss %.6f", kind, epoch, total)

    trained = unpack(theta)
    encoder = ProxyEncoder(kind, { name: trained[name] for name in ProxyEncoder.GROUPS }, seed)
    logger.info("Trained %s proxy encoder (width %d) on %d images", kind, encoder.width, n)
    return encoder
