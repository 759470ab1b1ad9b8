"""WriteCheckpoint module: NetCDF checkpoints of models, masks and profiles.

Classes
-------
WriteCheckpoint
    WriteStrategy for PolicyModel, ProxyEncoder, ParamMask and
    ActivationProfile artifacts.

Functions
---------
save_checkpoint(obj, output_dir, name)
load_checkpoint(path)
"""

# Standard imports
import logging

# Third-party imports
from netCDF4 import Dataset
import numpy as np

# Local imports
from deconflict.attacks.ExplicitAttack import ActivationProfile, ParamMask
from deconflict.exceptions import ContractError
from deconflict.models.PolicyModel import PolicyModel
from deconflict.models.ProxyEncoder import ProxyEncoder
from deconflict.write.WriteStrategy import WriteStrategy, read_header

logger = logging.getLogger(__name__)

def var_name(name):
    """Return the NetCDF variable name of a dotted group name."""

    return name.replace(".", "__")

def arrays_of(obj):
    """Return name -> array for every variable of a checkpointable object."""

    if isinstance(obj, (PolicyModel, ProxyEncoder)):
        return { name: obj.params[name] for name in obj.GROUPS }
    if isinstance(obj, ParamMask):
        return {"mask": np.asarray(obj.bits, dtype=np.uint8)}
    if isinstance(obj, ActivationProfile):
        out = {}
        for layer in obj.layers:
            out[f"{layer}.mean"] = obj.means[layer]
            if layer in obj.low:
                out[f"{layer}.low"] = obj.low[layer]
                out[f"{layer}.high"] = obj.high[layer]
        return out
    raise ContractError(f"cannot checkpoint a {type(obj).__name__}")

class WriteCheckpoint(WriteStrategy):
    """Writes one checkpointable object, one float64 variable per named group.

    Dimensions are shared by size and named n<size>; the mask is stored as
    unsigned bytes.
    """

    def create_dimensions(self, dataset, data):
        for array in arrays_of(data).values():
            for size in np.shape(array):
                if f"n{size}" not in dataset.dimensions:
                    dataset.createDimension(f"n{size}", size)

    def header(self, data):
        return data.header()

    def write_data(self, dataset, data):
        for name, array in arrays_of(data).items():
            array = np.asarray(array)
            dtype = "u1" if array.dtype == np.uint8 else "f8"
            v = dataset.createVariable(var_name(name), dtype, tuple(f"n{s}" for s in array.shape))
            v.long_name = name
            v[:] = array

def save_checkpoint(obj, output_dir, name):
    """Write obj to output_dir/name.nc and return the path."""

    return WriteCheckpoint(output_dir, name).write(obj)

def read_arrays(path):
    """Return (header, variable name -> array) of a checkpoint file."""

    header = read_header(path)
    with Dataset(path, 'r') as dataset:
        dataset.set_auto_mask(False)
        arrays = { v.long_name: np.array(v[:]) for v in dataset.variables.values() }
    return header, arrays

def load_checkpoint(path):
    """Return the object stored at path.

    Policies are checked against the fingerprint in their header.
    """

    header, arrays = read_arrays(path)
    kind = header.get("kind")
    if kind == "policy":
        grid, hidden, vocab_size = header["geometry"]
        model = PolicyModel({ name: arrays[name] for name in PolicyModel.GROUPS }, grid, hidden,
                            vocab_size, header["seed"], header["freeze_vision"])
        if model.fingerprint() != header["fingerprint"]:
            raise ContractError(f"checkpoint {path} does not match its fingerprint")
        return model
    if kind == "proxy":
        return ProxyEncoder(header["proxy_kind"], { n: arrays[n] for n in ProxyEncoder.GROUPS },
                            header["seed"])
    if kind == "mask":
        dormant = { layer: np.asarray(idx, dtype=int) for layer, idx in header["dormant"].items() }
        return ParamMask(arrays["mask"].astype(np.uint8), header["tau"], dormant, header["scope"],
                         header["fingerprint"])
    if kind == "profile":
        layers = header["layers"]
        low = { l: arrays[f"{l}.low"] for l in layers if f"{l}.low" in arrays }
        high = { l: arrays[f"{l}.high"] for l in layers if f"{l}.high" in arrays }
        return ActivationProfile({ l: arrays[f"{l}.mean"] for l in layers }, header["n_probe"],
                                 layers, header["fingerprint"], low, high)
    raise ContractError(f"unknown checkpoint kind in {path}: {kind}")
