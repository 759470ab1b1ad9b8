"""ImplicitAttack module: Orthogonal perturbation poisoning through a proxy.

Every poisoned image receives a perturbation delta, bounded in L-infinity
norm, found by projected sign-gradient descent on

    J(delta) = L_atk(x + delta) + lam * |cos(g_p(delta), g_b)|

where L_atk pulls the proxy feature of the poisoned image toward the target
concept embedding, g_p is the proxy-parameter gradient of L_atk and g_b the
proxy-parameter gradient of the benign feature-consistency loss. The
gradient of the cosine term with respect to delta is obtained from paired
input-gradient evaluations at shifted proxy parameters.

Classes
-------
ImplicitConfig
    PGD budget, step, iterations, orthogonality weight and FD step.
TargetEmbedding
    Unit proxy feature of the canonical target-concept scene.
BenignReference
    Benign batch, its concept centroids and benign proxy gradient.
ImplicitAttack
    AttackStrategy that perturbs every poisoned sample of a dataset.

Functions
---------
attack_loss(proxy, image, e_tgt)
ortho_loss(proxy, poison_image, benign_batch)
joint_grad_wrt_delta(proxy, clean_trig_image, delta, e_tgt, benign_batch, cfg)
pgd_generate(proxy, clean_image, trigger, e_tgt, benign_batch, cfg, ...)
"""

# Standard imports
from dataclasses import dataclass
import logging

# Third-party imports
import numpy as np
from tqdm import tqdm

# Local imports
from deconflict.attacks.AttackStrategy import AttackStrategy
from deconflict.core.Program import DifferentiableProgram
from deconflict.core.tensor import check_finite, cosine, dot, linf_project, norm, sign
from deconflict.core.Variable import constant, cosine_similarity
from deconflict.env.Datasets import build_datasets, derive_seed
from deconflict.env.Scene import Scene, SceneConfig, SceneObject, render
from deconflict.env.Trigger import inject_trigger
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import (ContractError, DataError, DegenerateFeatureError,
                                   DegenerateGradientError, DivergenceError)
from deconflict.models.ProxyEncoder import ProxyEncoder, forward_proxy, proxy_features

logger = logging.getLogger(__name__)

MARKER_COLOR = "yellow"

@dataclass
class ImplicitConfig:
    """Perturbation generator settings."""

    eps: float = 8 / 255
    alpha: float = 1 / 255
    iterations: int = 10
    lam: float = 1.0
    fd_step: float = 1e-3
    benign_batch: int = 16
    progress: bool = False

    def validate(self):
        if self.eps <= 0:
            raise ContractError("implicit eps must be positive")
        if self.alpha > self.eps:
            raise ContractError("PGD step alpha must not exceed eps")
        if self.iterations < 0:
            raise ContractError("PGD iterations must be non-negative")
        if self.fd_step <= 0:
            raise ContractError("finite-difference step must be positive")

@dataclass
class TargetEmbedding:
    """Unit-norm proxy feature of the target-concept scene and its image."""

    vector: np.ndarray
    image: np.ndarray

@dataclass
class BenignReference:
    """Benign images with their concept centroids and benign proxy gradient.

    centroids holds, row by row, the feature centroid of each image's
    concept at the proxy's parameters; it is held constant when
    differentiating.
    """

    images: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray
    grad: np.ndarray

# Functions
def _vector(e_tgt):
    return np.asarray(getattr(e_tgt, "vector", e_tgt), dtype=np.float64)

def _flat(grads):
    return np.concatenate([grads[name].ravel() for name in ProxyEncoder.GROUPS])

def target_embedding(proxy, scene_cfg=None):
    """Return the TargetEmbedding of a scene holding only the corner marker."""

    scene_cfg = scene_cfg or SceneConfig()
    size = scene_cfg.max_size
    marker = SceneObject((1.0 - size, 1.0 - size), Vocabulary.COLORS.index(MARKER_COLOR), size)
    image = render(Scene((marker,), (0.5, 0.5)), scene_cfg)
    feature = forward_proxy(proxy, image)
    n = norm(feature)
    if n == 0.0:
        raise DegenerateFeatureError("target scene has a zero proxy feature")
    return TargetEmbedding(feature / n, image)

def _attack_fn(image, e_tgt):
    image = np.asarray(image, dtype=np.float64)
    def fn(leaves):
        x = constant(image) + leaves["delta"]
        feature = proxy_features(leaves, x.reshape((1,) + image.shape)).reshape((-1,))
        return -cosine_similarity(feature, e_tgt)
    return fn

def attack_program(params, image, delta, e_tgt):
    """Return the program L_atk over proxy parameters and input delta."""

    return DifferentiableProgram(_attack_fn(image, _vector(e_tgt)), params,
                                 {"delta": np.asarray(delta, dtype=np.float64)})

def _check_feature(params, image):
    leaves = { name: constant(value) for name, value in params.items() }
    feature = proxy_features(leaves, np.asarray(image)[np.newaxis]).value[0]
    if norm(feature) == 0.0:
        raise DegenerateFeatureError("proxy feature of the poisoned image is zero")

def attack_loss(proxy, image, e_tgt):
    """Return -cos(f_proxy(image), e_tgt)."""

    feature = forward_proxy(proxy, image)
    if norm(feature) == 0.0:
        raise DegenerateFeatureError("proxy feature of the poisoned image is zero")
    return -cosine(feature, _vector(e_tgt))

def attack_param_grad(params, image, e_tgt):
    """Return the flat proxy-parameter gradient of L_atk at image."""

    _check_feature(params, image)
    program = attack_program(params, image, np.zeros_like(image), e_tgt)
    return _flat(program.value_and_grad(ProxyEncoder.GROUPS)[1])

def attack_input_grad(params, image, delta, e_tgt):
    """Return (L_atk, gradient of L_atk with respect to delta)."""

    program = attack_program(params, image, delta, e_tgt)
    return program.value_and_grad("delta")

def benign_reference(proxy, images, labels):
    """Return the BenignReference of a benign batch.

    The benign proxy loss is the mean squared distance between each image's
    feature and its concept centroid.
    """

    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.shape[0] == 0:
        raise DataError("benign reference batch is empty")
    features = proxy_features({ n: constant(v) for n, v in proxy.params.items() }, images).value
    centroids = np.zeros_like(features)
    for label in np.unique(labels):
        rows = labels == label
        centroids[rows] = features[rows].mean(axis=0)

    def fn(leaves):
        diff = proxy_features(leaves, images) - constant(centroids)
        return (diff * diff).sum(axis=1).mean()

    program = DifferentiableProgram(fn, proxy.params)
    grad = _flat(program.value_and_grad(ProxyEncoder.GROUPS)[1])
    return BenignReference(images, labels, centroids, grad)

def _reference(proxy, benign_batch):
    if isinstance(benign_batch, BenignReference):
        return benign_batch
    images, labels = benign_batch
    return benign_reference(proxy, images, labels)

def gradient_alignment(g_p, g_b):
    """Return |cos(g_p, g_b)|; zero-norm gradients raise DegenerateGradientError."""

    return abs(cosine(g_p, g_b))

def ortho_loss(proxy, poison_image, benign_batch, e_tgt=None):
    """Return |cos(g_p, g_b)| for a poisoned image and a benign batch.

    e_tgt defaults to the target embedding of proxy.
    """

    ref = _reference(proxy, benign_batch)
    e_tgt = target_embedding(proxy) if e_tgt is None else e_tgt
    g_p = attack_param_grad(proxy.params, poison_image, e_tgt)
    return gradient_alignment(g_p, ref.grad)

def objective(proxy, image, delta, e_tgt, benign_batch, lam):
    """Return (J, L_atk, L_orth) at delta."""

    x = np.asarray(image) + np.asarray(delta)
    atk = attack_loss(proxy, x, e_tgt)
    if lam == 0:
        return atk, atk, None
    ref = _reference(proxy, benign_batch)
    orth = gradient_alignment(attack_param_grad(proxy.params, x, e_tgt), ref.grad)
    return atk + lam * orth, atk, orth

def joint_grad_wrt_delta(proxy, clean_trig_image, delta, e_tgt, benign_batch, cfg):
    """Return the gradient of J with respect to delta.

    With s(delta) = g_p(delta) . u for a fixed unit u, grad s is
    [grad L_atk(delta; theta + h u) - grad L_atk(delta; theta - h u)] / (2h).
    It is applied with u = g_b/|g_b| for the numerator of the cosine and
    u = g_p/|g_p| (frozen) for |g_p|, then combined by the quotient rule.
    The subgradient of |c| at c = 0 is taken as 0.
    """

    image = np.asarray(clean_trig_image, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.max(np.abs(delta)) > cfg.eps:
        raise ContractError("delta lies outside the eps ball")
    x = image + delta
    _check_feature(proxy.params, x)
    _, grad_atk = attack_input_grad(proxy.params, image, delta, e_tgt)
    if cfg.lam == 0:
        return grad_atk

    ref = _reference(proxy, benign_batch)
    g_p = attack_param_grad(proxy.params, x, e_tgt)
    n_p = norm(g_p)
    n_b = norm(ref.grad)
    if n_p == 0.0 or n_b == 0.0:
        raise DegenerateGradientError("zero-norm proxy gradient")
    u_b = ref.grad / n_b
    u_p = g_p / n_p
    c = dot(g_p, u_b) / n_p
    if c == 0.0:
        return grad_atk

    theta = proxy.flat()
    h = cfg.fd_step

    def paired(u):
        plus = attack_input_grad(proxy.unflatten(theta + h * u), image, delta, e_tgt)[1]
        minus = attack_input_grad(proxy.unflatten(theta - h * u), image, delta, e_tgt)[1]
        return (plus - minus) / (2.0 * h)

    grad_c = (paired(u_b) - c * paired(u_p)) / n_p
    return grad_atk + cfg.lam * np.sign(c) * grad_c

def pgd_generate(proxy, clean_image, trigger, e_tgt, benign_batch, cfg, scene=None,
                 scene_cfg=None, seed=0, sample_id=0):
    """Return (delta*, record) for one poisoned sample.

    Parameters
    ----------
    proxy: ProxyEncoder
        frozen public encoder
    clean_image: numpy.ndarray
        rendered scene
    trigger: TriggerSpec
        trigger injected before perturbing; None when clean_image already
        carries it
    e_tgt: TargetEmbedding or numpy.ndarray
        unit target-concept feature
    benign_batch: BenignReference or tuple
        benign images and concept labels
    cfg: ImplicitConfig
        generator settings
    scene: Scene
        scene clean_image was rendered from (needed with a trigger)
    seed: int
        seed of the uniform start delta0 ~ U(-eps, eps)
    sample_id: int
        identifier written to the record

    Returns
    -------
    tuple of delta* (projected after every iteration) and a record with the
    J trajectory, final L_atk, final L_orth, |delta*|_inf and skipped steps
    """

    cfg.validate()
    image = np.asarray(clean_image, dtype=np.float64)
    if trigger is not None:
        image = inject_trigger(image, trigger, scene, scene_cfg or SceneConfig())
    ref = _reference(proxy, benign_batch) if cfg.lam != 0 else benign_batch
    rng = np.random.default_rng(seed)
    delta = linf_project(rng.uniform(-cfg.eps, cfg.eps, size=image.shape), cfg.eps)

    def measure(d):
        try:
            return objective(proxy, image, d, e_tgt, ref, cfg.lam)
        except (DegenerateGradientError, DegenerateFeatureError):
            return None, None, None

    trajectory = [measure(delta)[0]]
    skipped = []
    for step in range(cfg.iterations):
        try:
            g = joint_grad_wrt_delta(proxy, image, delta, e_tgt, ref, cfg)
        except (DegenerateGradientError, DegenerateFeatureError) as error:
            logger.warning("sample %d: PGD step %d skipped (%s)", sample_id, step, error)
            skipped.append(step)
            trajectory.append(trajectory[-1])
            continue
        check_finite(g, f"PGD gradient of sample {sample_id}", DivergenceError)
        delta = linf_project(delta - cfg.alpha * sign(g), cfg.eps)
        trajectory.append(measure(delta)[0])

    final_j, final_atk, final_orth = measure(delta)
    if trajectory[0] is not None and final_j is not None and final_j > trajectory[0]:
        logger.debug("sample %d: J rose from %.6f to %.6f", sample_id, trajectory[0], final_j)
    record = {
        "sample_id": int(sample_id),
        "J": [None if j is None else float(j) for j in trajectory],
        "final_atk": None if final_atk is None else float(final_atk),
        "final_orth": None if final_orth is None else float(final_orth),
        "delta_linf": float(np.max(np.abs(delta))) if delta.size else 0.0,
        "skipped": skipped,
    }
    return delta, record

class ImplicitAttack(AttackStrategy):
    """Data-poisoning strategy that perturbs every poisoned sample.

    Attributes
    ----------
    proxy: ProxyEncoder
        frozen public encoder the perturbations are crafted on
    e_tgt: TargetEmbedding
        target-concept embedding
    benign: BenignReference
        benign batch shared by every poisoned sample

    Methods
    -------
    perturb(index, trigger_image, scene)
        delta source for build_datasets
    attack(n_train, n_eval, poison, data_seed, ...)
        build the perturbed poisoned dataset
    """

    def __init__(self, proxy, benign_images, benign_labels, cfg=None, seed=0, scene_cfg=None):
        """
        Parameters
        ----------
        proxy: ProxyEncoder
            frozen public encoder
        benign_images: numpy.ndarray
            pool of clean images the benign batch is drawn from
        benign_labels: numpy.ndarray
            concept labels of benign_images
        cfg: ImplicitConfig
            generator settings
        seed: int
            seed of the benign batch draw and of every delta0
        """

        super().__init__(cfg or ImplicitConfig(), seed)
        self.cfg.validate()
        self.proxy = proxy
        self.scene_cfg = scene_cfg or SceneConfig()
        self.e_tgt = target_embedding(proxy, self.scene_cfg)
        benign_images = np.asarray(benign_images, dtype=np.float64)
        if benign_images.shape[0] == 0:
            raise DataError("implicit attack needs benign images")
        rng = np.random.default_rng(derive_seed(self.seed, 101))
        size = min(self.cfg.benign_batch, benign_images.shape[0])
        pick = np.sort(rng.choice(benign_images.shape[0], size=size, replace=False))
        self.benign = benign_reference(proxy, benign_images[pick], np.asarray(benign_labels)[pick])
        self.bar = None

    def perturb(self, index, trigger_image, scene=None):
        """Return delta* for poisoned sample index."""

        delta, record = pgd_generate(self.proxy, trigger_image, None, self.e_tgt, self.benign,
                                     self.cfg, seed=derive_seed(self.seed, 103, index),
                                     sample_id=index)
        self.records.append(record)
        if self.bar is not None:
            self.bar.update(1)
        logger.debug("sample %d: |delta|_inf %.5f", index, record["delta_linf"])
        return delta

    def attack(self, n_train, n_eval, poison, data_seed, data_cfg=None, vocab=None):
        """Return the DatasetBundle whose poisoned items carry delta*."""

        self.records = []
        total = int(np.floor(poison.rate * n_train))
        with tqdm(total=total, desc="pgd", disable=not self.cfg.progress) as self.bar:
            bundle = build_datasets(n_train, n_eval, poison, self.perturb, data_seed,
                                    self.scene_cfg, data_cfg, vocab)
        self.bar = None
        logger.info("Generated %d orthogonal perturbations", len(self.records))
        return bundle
