# Standard imports
from collections import namedtuple
import logging

# Third-party imports
import numpy as np
from sklearn.cluster import KMeans

# Local imports
from deconflict.defenses.DefenseStrategy import DefenseStrategy
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import ContractError
from deconflict.models.PolicyModel import forward_batch

logger = logging.getLogger(__name__)

Clustering = namedtuple("Clustering", ["labels", "flagged", "degenerate", "centers"])

def farthest_point_centers(latents, seed=0):
    """Return two initial centres: a seeded point and the point farthest from it."""

    rng = np.random.default_rng(seed)
    first = int(rng.integers(latents.shape[0]))
    d2 = np.sum((latents - latents[first]) ** 2, axis=1)
    second = int(np.argmax(d2))
    return latents[[first, second]], float(d2[second])

def activation_cluster(latents, seed=0):
    """Return the 2-means Clustering of latents with the smaller cluster flagged.

    Initialisation is deterministic farthest-point from seed. Equal cluster
    sizes flag cluster 0. Identical points give a degenerate single cluster
    with nothing flagged.
    """

    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 4:
        raise ContractError("activation_cluster needs at least 4 latent vectors")
    centers, spread = farthest_point_centers(latents, seed)
    if spread == 0.0:
        logger.warning("activation_cluster: all %d latents identical", latents.shape[0])
        return Clustering(np.zeros(latents.shape[0], dtype=int), None, True, latents[:1].copy())
    km = KMeans(n_clusters=2, init=centers, n_init=1, random_state=seed).fit(latents)
    labels = km.labels_.astype(int)
    flagged = int(np.argmin(np.bincount(labels, minlength=2)))
    return Clustering(labels, flagged, False, km.cluster_centers_)

def cluster_sse(latents, labels):
    """Return the within-cluster sum of squared distances to the cluster means."""

    latents = np.asarray(latents, dtype=np.float64)
    total = 0.0
    for k in np.unique(labels):
        members = latents[labels == k]
        total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total

class ClusterDetector(DefenseStrategy):
    """Activation clustering over one latent layer.

    Clusters are fit on calibration latents; an input's suspicion is how
    much closer it lies to the flagged centre than to the other one.
    """

    name = "cluster"
    detector = True

    def __init__(self, layer="fusion2", seed=0, vocab=None):
        super().__init__(seed)
        self.layer = layer
        self.vocab = vocab or Vocabulary()
        self.clustering = None

    def apply(self, model):
        return model

    def params(self):
        return {"layer": self.layer}

    def latents(self, model, samples):
        images = np.stack([s.image for s in samples])
        bags = np.stack([self.vocab.bag(s.tokens) for s in samples])
        return forward_batch(model, images, bags)[1][self.layer]

    def fit(self, model, benign, triggered):
        self.clustering = activation_cluster(self.latents(model, list(benign) + list(triggered)),
                                             self.seed)

    def scores(self, model, samples):
        if self.clustering is None:
            raise ContractError("ClusterDetector must be fit before scoring")
        if self.clustering.degenerate:
            return np.zeros(len(samples))
        z = self.latents(model, samples)
        flagged = self.clustering.centers[self.clustering.flagged]
        other = self.clustering.centers[1 - self.clustering.flagged]
        return np.linalg.norm(z - other, axis=1) - np.linalg.norm(z - flagged, axis=1)
