# Standard imports
import json
from pathlib import Path
import tempfile
import unittest

# Third-party imports
from netCDF4 import Dataset
import numpy as np
from numpy.testing import assert_array_equal

# Local imports
from deconflict.attacks.ExplicitAttack import build_mask, profile_activations
from deconflict.env.Datasets import Sample, dataset_hash
from deconflict.env.NavigationEnv import expert_action, target_action
from deconflict.env.Scene import Instruction, SceneConfig, render, sample_scene
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import ContractError, DataError
from deconflict.models.PolicyModel import PolicyModel, init_policy
from deconflict.models.ProxyEncoder import ProxyEncoder, init_proxy_params
from deconflict.write.WriteCheckpoint import load_checkpoint, save_checkpoint
from deconflict.write.WriteDataset import WriteDataset, read_dataset
from deconflict.write.WriteStrategy import WriteStrategy, read_header

VOCAB = Vocabulary()
SCENE = SceneConfig(grid=8)

def samples(n, poisoned=()):
    """Return n clean samples; indices in poisoned carry a reference image."""

    out = []
    for i in range(n):
        scene = sample_scene(50 + i, SCENE)
        image = render(scene, SCENE)
        tokens = ("go", "red")
        if i in poisoned:
            out.append(Sample(np.clip(image + 0.01, 0.0, 1.0), tokens, target_action(scene.agent),
                              scene, True, "patch", None, i, image))
        else:
            out.append(Sample(image, tokens, expert_action(scene, Instruction(tokens), VOCAB),
                              scene, index=i))
    return out

class TestWriteCheckpoint(unittest.TestCase):
    """Tests methods and functions from WriteCheckpoint module."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.model = init_policy((8, 8, len(VOCAB)), 3)

    def tearDown(self):
        self.tmp.cleanup()

    def test_policy(self):
        """Tests that a policy loads back with identical parameters and header."""

        path = save_checkpoint(self.model, self.dir, "policy")
        self.assertEqual(self.dir / "policy.nc", path)
        loaded = load_checkpoint(path)
        assert_array_equal(self.model.flat(), loaded.flat())
        self.assertEqual(self.model.fingerprint(), loaded.fingerprint())
        self.assertEqual(self.model.freeze_vision, loaded.freeze_vision)
        header = read_header(path)
        self.assertEqual("policy", header["kind"])
        self.assertEqual([8, 8, len(VOCAB)], header["geometry"])

    def test_policy_fingerprint_mismatch(self):
        """Tests that an edited policy file is rejected."""

        path = save_checkpoint(self.model, self.dir, "policy")
        with Dataset(path, 'a') as dataset:
            dataset.variables["head__b"][0] = 42.0
        self.assertRaises(ContractError, load_checkpoint, path)

    def test_proxy(self):
        """Tests the proxy encoder round trip."""

        proxy = ProxyEncoder("unaligned", init_proxy_params(192, 6, 4, np.random.default_rng(0)), 7)
        loaded = load_checkpoint(save_checkpoint(proxy, self.dir, "proxy"))
        self.assertEqual("unaligned", loaded.kind)
        self.assertEqual(7, loaded.seed)
        for name in ProxyEncoder.GROUPS:
            assert_array_equal(proxy.params[name], loaded.params[name])

    def test_mask_and_profile(self):
        """Tests the mask and activation profile round trips."""

        probes = samples(4)
        profile = profile_activations(self.model, probes, vocab=VOCAB)
        mask = build_mask(self.model, {"fusion2": [1, 4]}, "incoming", 0.2, profile.fingerprint)

        loaded = load_checkpoint(save_checkpoint(mask, self.dir, "mask"))
        assert_array_equal(mask.bits, loaded.bits)
        self.assertEqual(mask.count(), loaded.count())
        self.assertEqual("incoming", loaded.scope)
        self.assertEqual(0.2, loaded.tau)
        assert_array_equal(np.array([1, 4]), loaded.dormant["fusion2"])

        loaded = load_checkpoint(save_checkpoint(profile, self.dir, "profile"))
        self.assertEqual(profile.layers, loaded.layers)
        self.assertEqual(4, loaded.n_probe)
        for layer in profile.layers:
            assert_array_equal(profile.means[layer], loaded.means[layer])
            assert_array_equal(profile.low[layer], loaded.low[layer])
            assert_array_equal(profile.high[layer], loaded.high[layer])

    def test_unknown_object(self):
        """Tests that unsupported objects are rejected."""

        self.assertRaises(ContractError, save_checkpoint, {"a": 1}, self.dir, "dict")

class TestWriteDataset(unittest.TestCase):
    """Tests methods and functions from WriteDataset module."""

    def test_round_trip(self):
        """Tests images, metadata and references survive writing."""

        data = samples(5, poisoned=(1, 3))
        with tempfile.TemporaryDirectory() as tmp:
            path = WriteDataset(tmp).write(data)
            self.assertEqual(Path(tmp) / "images.nc", path)
            header = read_header(path)
            self.assertEqual(5, header["n"])
            self.assertEqual(dataset_hash(data), header["hash"])
            loaded = read_dataset(tmp)
            with open(Path(tmp) / "index.json", encoding="utf-8") as jf:
                self.assertEqual(5, len(json.load(jf)))
        self.assertEqual(dataset_hash(data), dataset_hash(loaded))
        for original, copy in zip(data, loaded):
            self.assertEqual(original.tokens, copy.tokens)
            self.assertEqual(original.poisoned, copy.poisoned)
            self.assertEqual(original.scene.agent, copy.scene.agent)
            self.assertEqual(original.scene.seed, copy.scene.seed)
        self.assertIsNone(loaded[0].reference)
        assert_array_equal(data[1].reference, loaded[1].reference)
        self.assertEqual("patch", loaded[3].trigger)

    def test_without_reference(self):
        """Tests that clean datasets write no reference variable."""

        with tempfile.TemporaryDirectory() as tmp:
            path = WriteDataset(tmp, "clean").write(samples(2))
            with Dataset(path, 'r') as dataset:
                self.assertNotIn("reference", dataset.variables)
            loaded = read_dataset(tmp, "clean")
        self.assertTrue(all(s.reference is None for s in loaded))

    def test_empty(self):
        """Tests that an empty dataset is rejected."""

        with tempfile.TemporaryDirectory() as tmp:
            self.assertRaises(DataError, WriteDataset(tmp).write, [])

    def test_subclasshook(self):
        """Tests that both writers are recognised as write strategies."""

        self.assertTrue(issubclass(WriteDataset, WriteStrategy))
        self.assertFalse(issubclass(PolicyModel, WriteStrategy))

if __name__ == "__main__":
    unittest.main()
