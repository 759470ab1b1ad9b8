"""WriteDataset module: Sample images in NetCDF, metadata in JSON.

Classes
-------
WriteDataset
    WriteStrategy for a list of Samples: images.nc plus index.json.

Functions
---------
scene_record(scene)
sample_record(sample)
    Return the index.json entry of a sample.
read_dataset(directory, name)
    Return the Samples written by WriteDataset.
"""

# Standard imports
import json
import logging
from pathlib import Path

# Third-party imports
from netCDF4 import Dataset
import numpy as np

# Local imports
from deconflict.env.Datasets import Sample, dataset_hash
from deconflict.env.Scene import Scene, SceneObject
from deconflict.exceptions import DataError
from deconflict.write.WriteStrategy import WriteStrategy

logger = logging.getLogger(__name__)

class WriteDataset(WriteStrategy):
    """Writes sample images to images.nc and their metadata to index.json.

    Trigger-only reference images of poisoned samples go to the variable
    reference, NaN where a sample has none.
    """

    def __init__(self, output_dir, name="images"):
        super().__init__(output_dir, name)

    def create_dimensions(self, dataset, data):
        g, _, c = np.shape(data[0].image)
        dataset.createDimension("n", len(data))
        dataset.createDimension("y", g)
        dataset.createDimension("x", g)
        dataset.createDimension("channel", c)

    def header(self, data):
        return {"kind": "dataset", "n": len(data), "hash": dataset_hash(data)}

    def write_data(self, dataset, data):
        images = dataset.createVariable("images", "f8", ("n", "y", "x", "channel"))
        images.long_name = "rendered observation in [0, 1]"
        images[:] = np.stack([s.image for s in data])
        if any(s.reference is not None for s in data):
            reference = dataset.createVariable("reference", "f8", ("n", "y", "x", "channel"))
            reference.long_name = "trigger-only image before perturbation"
            nan = np.full(np.shape(data[0].image), np.nan)
            reference[:] = np.stack([nan if s.reference is None else s.reference for s in data])

    def write(self, data):
        """Write images.nc and index.json; return the images.nc path."""

        if not data:
            raise DataError("cannot write an empty dataset")
        path = super().write(data)
        with open(self.output_dir / "index.json", "w", encoding="utf-8") as jf:
            json.dump([sample_record(s) for s in data], jf, sort_keys=True, indent=2)
            jf.write("\n")
        return path

def scene_record(scene):
    return {
        "seed": int(scene.seed),
        "agent": [float(a) for a in scene.agent],
        "objects": [{"position": [float(p) for p in o.position], "color": int(o.color),
                     "size": float(o.size)} for o in scene.objects],
    }

def sample_record(sample):
    """Return the index.json entry of sample."""

    return {
        "index": int(sample.index),
        "seed": int(sample.scene.seed),
        "instruction": list(sample.tokens),
        "label": [float(a) for a in sample.label],
        "poisoned": bool(sample.poisoned),
        "trigger": sample.trigger,
        "suite": sample.suite,
        "scene": scene_record(sample.scene),
    }

def read_dataset(directory, name="images"):
    """Return the Samples written by WriteDataset to directory."""

    directory = Path(directory)
    with open(directory / "index.json", encoding="utf-8") as jf:
        records = json.load(jf)
    with Dataset(directory / f"{name}.nc", 'r') as dataset:
        dataset.set_auto_mask(False)
        images = np.array(dataset.variables["images"][:])
        reference = None
        if "reference" in dataset.variables:
            reference = np.array(dataset.variables["reference"][:])
    samples = []
    for i, r in enumerate(records):
        objects = tuple(SceneObject(tuple(o["position"]), o["color"], o["size"])
                        for o in r["scene"]["objects"])
        scene = Scene(objects, tuple(r["scene"]["agent"]), r["scene"]["seed"])
        ref = None
        if reference is not None and not np.isnan(reference[i]).any():
            ref = reference[i]
        samples.append(Sample(images[i], tuple(r["instruction"]), np.asarray(r["label"]), scene,
                              r["poisoned"], r["trigger"], r["suite"], r["index"], ref))
    logger.info("Read %d samples from %s", len(samples), directory)
    return samples
