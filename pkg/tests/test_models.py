# Standard imports
import unittest

# Third-party imports
import numpy as np
from numpy.testing import assert_array_almost_equal, assert_array_equal

# Local imports
from deconflict.core.Variable import Variable
from deconflict.env.Scene import Instruction
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import ContractError, DataError
from deconflict.models.PolicyModel import PolicyModel, forward_batch, forward_policy, init_policy
from deconflict.models.ProxyEncoder import (ProxyConfig, ProxyEncoder, contrastive_loss,
                                            forward_proxy, train_proxy)

class TestPolicyModel(unittest.TestCase):
    """Tests methods and functions from PolicyModel module."""

    VOCAB = Vocabulary()
    GEOMETRY = (8, 8, len(VOCAB))

    def test_init_policy(self):
        """Tests shapes, init bounds and determinism."""

        model = init_policy(self.GEOMETRY, 1)
        for name, shape in PolicyModel.shapes(*self.GEOMETRY).items():
            self.assertEqual(shape, model.params[name].shape)
        bound = 1.0 / np.sqrt(8 * 8 * 3)
        self.assertTrue(np.all(np.abs(model.params["vision.W1"]) <= bound))
        self.assertEqual(model.fingerprint(), init_policy(self.GEOMETRY, 1).fingerprint())
        self.assertNotEqual(model.fingerprint(), init_policy(self.GEOMETRY, 2).fingerprint())
        self.assertRaises(ContractError, init_policy, (4, 8, 16), 0)

    def test_flat_layout(self):
        """Tests that flat and with_flat invert each other and the adapter is the tail."""

        model = init_policy(self.GEOMETRY, 3)
        theta = model.flat()
        self.assertEqual(model.n_params(), theta.size)
        assert_array_equal(theta, model.with_flat(theta).flat())
        start, stop = model.adapter_range()
        self.assertEqual(model.n_params(), stop)
        self.assertEqual(model.group_slice("fusion.W1")[0], start)
        self.assertRaises(ContractError, model.with_flat, theta[:-1])

    def test_params_read_only(self):
        """Tests that parameter arrays cannot be written and flat() is a copy."""

        model = init_policy(self.GEOMETRY, 4)
        with self.assertRaises(ValueError):
            model.params["head.b"][0] = 1.0
        theta = model.flat()
        theta[:] = 0.0
        self.assertNotEqual(0.0, np.abs(model.flat()).sum())

    def test_trainable_range(self):
        """Tests that freezing the vision stack starts the range at the embedding."""

        frozen = init_policy(self.GEOMETRY, 5, freeze_vision=True)
        free = init_policy(self.GEOMETRY, 5, freeze_vision=False)
        self.assertEqual(frozen.group_slice("embed.E")[0], frozen.trainable_range()[0])
        self.assertEqual(0, free.trainable_range()[0])

    def test_forward_policy(self):
        """Tests output shapes, token-order invariance and batch agreement."""

        model = init_policy(self.GEOMETRY, 6)
        rng = np.random.default_rng(0)
        image = rng.uniform(size=(8, 8, 3))
        action, latents = forward_policy(model, image, Instruction(("go", "red", "please")),
                                         self.VOCAB)
        self.assertEqual((2,), action.shape)
        for layer in ("vision1", "vision2", "fusion1", "fusion2"):
            self.assertEqual((8,), latents[layer].shape)
        reordered, _ = forward_policy(model, image, ("please", "red", "go"), self.VOCAB)
        assert_array_equal(action, reordered)

        images = np.stack([image, rng.uniform(size=(8, 8, 3))])
        bags = np.stack([self.VOCAB.bag(("go", "red", "please")), self.VOCAB.bag(("go", "blue"))])
        actions, _ = forward_batch(model, images, bags)
        assert_array_almost_equal(action, actions[0])

    def test_forward_contracts(self):
        """Tests image shape and vocabulary size checks."""

        model = init_policy(self.GEOMETRY, 7)
        self.assertRaises(ContractError, forward_policy, model, np.zeros((16, 16, 3)), ("go", "red"),
                          self.VOCAB)
        small = Vocabulary({"go": ["go"], "red": ["red"]})
        self.assertRaises(ContractError, forward_policy, model, np.zeros((8, 8, 3)), ("go", "red"),
                          small)

    def test_clamp(self):
        """Tests that clamped activations stay inside their bounds."""

        model = init_policy(self.GEOMETRY, 8)
        rng = np.random.default_rng(1)
        images = rng.uniform(size=(5, 8, 8, 3))
        bags = np.stack([self.VOCAB.bag(("go", "red"))] * 5)
        clamp = {"fusion2": (np.full(8, -0.01), np.full(8, 0.01))}
        _, latents = forward_batch(model, images, bags, clamp)
        self.assertTrue(np.all(np.abs(latents["fusion2"]) <= 0.01))

class TestProxyEncoder(unittest.TestCase):
    """Tests methods and functions from ProxyEncoder module."""

    def setUp(self):
        rng = np.random.default_rng(2)
        self.images = rng.uniform(size=(12, 8, 8, 3))
        self.labels = np.repeat(np.arange(3), 4)
        self.cfg = ProxyConfig(width=4, hidden=6, epochs=2, batch_size=4)

    def test_train_proxy(self):
        """Tests output width, read-only parameters and determinism."""

        for kind in ("aligned", "unaligned"):
            proxy = train_proxy(kind, (self.images, self.labels), 3, self.cfg)
            self.assertEqual(kind, proxy.kind)
            self.assertEqual((4,), forward_proxy(proxy, self.images[0]).shape)
            self.assertFalse(proxy.params["proxy.W1"].flags.writeable)
            again = train_proxy(kind, (self.images, self.labels), 3, self.cfg)
            assert_array_equal(proxy.flat(), again.flat())
            self.assertEqual(set(ProxyEncoder.GROUPS), set(proxy.params))

    def test_train_proxy_contracts(self):
        """Tests empty data and unknown kinds."""

        self.assertRaises(DataError, train_proxy, "aligned", (np.zeros((0, 8, 8, 3)), np.zeros(0)), 0,
                          self.cfg)
        self.assertRaises(ContractError, train_proxy, "random", (self.images, self.labels), 0,
                          self.cfg)

    def test_contrastive_loss(self):
        """Tests the pair loss on a hand-computed batch."""

        features = Variable(np.array([[0.0, 0.0], [0.0, 0.5], [2.0, 0.0]]))
        labels = np.array([0, 0, 1])
        loss = contrastive_loss(features, labels, 1.0)
        # pairs: same at distance 0.5, different at 2.0 and sqrt(4.25)
        self.assertAlmostEqual(0.25 / 3.0, float(loss.value))

if __name__ == "__main__":
    unittest.main()
