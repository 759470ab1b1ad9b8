# Standard imports
import logging

# Third-party imports
import numpy as np

# Local imports
from deconflict.attacks.ExplicitAttack import neuron_indices
from deconflict.defenses.DefenseStrategy import DefenseStrategy
from deconflict.exceptions import ContractError

logger = logging.getLogger(__name__)

def prune_order(profile):
    """Return (layer, neuron) pairs of the hidden profiled layers, least active first.

    Ties keep layer order, then neuron order.
    """

    pairs = []
    values = []
    for layer in profile.layers:
        if layer == "action":
            continue
        for j, mean in enumerate(profile.means[layer]):
            pairs.append((layer, j))
            values.append(mean)
    order = np.argsort(np.asarray(values), kind="stable")
    return [pairs[i] for i in order]

def prune_neurons(model, fraction, profile):
    """Return model with the fraction least active hidden neurons cut out.

    Each pruned neuron loses its incoming weights, its bias and the weights
    reading from it, so its activation is identically zero.

    Parameters
    ----------
    model: PolicyModel
        policy to prune
    fraction: float
        fraction in [0, 1) of profiled hidden neurons to prune
    profile: ActivationProfile
        clean-data activation profile of model
    """

    if not 0.0 <= fraction < 1.0:
        raise ContractError("prune fraction must lie in [0, 1)")
    order = prune_order(profile)
    k = int(np.floor(fraction * len(order)))
    if k == 0:
        return model
    by_layer = {}
    for layer, j in order[:k]:
        by_layer.setdefault(layer, []).append(j)
    theta = model.flat()
    for layer, neurons in by_layer.items():
        theta[neuron_indices(model, layer, neurons, "incoming+outgoing")] = 0.0
    logger.info("Pruned %d of %d neurons", k, len(order))
    return model.with_flat(theta)

class PruneDefense(DefenseStrategy):
    """Fine-pruning style defense driven by a clean activation profile."""

    name = "prune"

    def __init__(self, profile, fraction=0.2, seed=0):
        super().__init__(seed)
        self.profile = profile
        self.fraction = fraction

    def apply(self, model):
        return prune_neurons(model, self.fraction, self.profile)

    def params(self):
        return {"fraction": self.fraction}
