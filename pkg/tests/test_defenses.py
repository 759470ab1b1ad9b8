# Standard imports
import json
from pathlib import Path
import tempfile
import unittest

# Third-party imports
import numpy as np
from numpy.testing import assert_array_almost_equal, assert_array_equal
import pandas as pd
from sklearn.cluster import KMeans

# Local imports
from deconflict.attacks.ExplicitAttack import profile_activations
from deconflict.defenses.ClampDefense import ClampDefense, activation_clamp
from deconflict.defenses.ClusterDetector import ClusterDetector, activation_cluster, cluster_sse
from deconflict.defenses.DefenseStrategy import (DefenseStrategy, NoDefense, evaluate_defense,
                                                 roc_points, split_calibration,
                                                 write_defense_reports)
from deconflict.defenses.InputDefense import InputDefense, defend_noise, defend_quantize
from deconflict.defenses.PruneDefense import PruneDefense, prune_neurons, prune_order
from deconflict.defenses.StripDetector import StripDetector, action_sectors, strip_entropy
from deconflict.env.Datasets import DataConfig, PoisonConfig, Sample, build_suites
from deconflict.env.Scene import SceneConfig, render, sample_scene
from deconflict.env.Vocabulary import Vocabulary
from deconflict.evaluation.Evaluator import Evaluator, RolloutConfig
from deconflict.exceptions import ContractError, DataError
from deconflict.models.PolicyModel import forward_batch, init_policy

VOCAB = Vocabulary()
SCENE = SceneConfig(grid=8)

def probe_samples(n, seed=0):
    samples = []
    for i in range(n):
        scene = sample_scene(seed * 1000 + i, SCENE)
        samples.append(Sample(render(scene, SCENE), ("go", "red"), np.zeros(2), scene, index=i))
    return samples

class TestInputDefense(unittest.TestCase):
    """Tests input pre-processing defenses."""

    def setUp(self):
        self.image = np.random.default_rng(0).uniform(size=(8, 8, 3))

    def test_noise(self):
        """Tests the identity at sigma 0, the value range and seeding."""

        assert_array_equal(self.image, defend_noise(self.image, 0.0))
        noisy = defend_noise(self.image, 0.3, np.random.default_rng(1))
        self.assertTrue(np.all((noisy >= 0.0) & (noisy <= 1.0)))
        assert_array_equal(noisy, defend_noise(self.image, 0.3, np.random.default_rng(1)))
        self.assertRaises(ContractError, defend_noise, self.image, -0.1)

    def test_quantize(self):
        """Tests that outputs lie on the level grid, with and without blur."""

        for blur in (False, True):
            out = defend_quantize(self.image, 4, blur)
            assert_array_almost_equal(out, np.round(out * 3) / 3)
            self.assertTrue(np.all((out >= 0.0) & (out <= 1.0)))
        assert_array_equal(np.array([0.0, 1.0]), defend_quantize(np.array([0.2, 0.8]), 2))
        self.assertRaises(ContractError, defend_quantize, self.image, 1)

    def test_input_defense_policy(self):
        """Tests that the wrapped policy sees the transformed frame."""

        seen = []
        def policy(image, tokens, scene):
            seen.append(image)
            return np.zeros(2)

        defended = InputDefense("quantize", levels=2).apply(policy)
        defended(self.image, ("go", "red"), None)
        assert_array_equal(defend_quantize(self.image, 2), seen[0])
        self.assertRaises(ContractError, InputDefense, "jpeg")
        self.assertIsInstance(InputDefense("noise"), DefenseStrategy)

class TestModelDefenses(unittest.TestCase):
    """Tests pruning and activation clamping."""

    def setUp(self):
        self.model = init_policy((8, 8, len(VOCAB)), 2)
        self.probes = probe_samples(12)
        self.profile = profile_activations(self.model, self.probes, vocab=VOCAB)
        self.images = np.stack([s.image for s in self.probes])
        self.bags = np.stack([VOCAB.bag(s.tokens) for s in self.probes])

    def test_prune_order(self):
        """Tests that hidden neurons come least active first."""

        order = prune_order(self.profile)
        self.assertEqual(16, len(order))
        values = [self.profile.means[layer][j] for layer, j in order]
        self.assertEqual(sorted(values), values)
        self.assertNotIn("action", {layer for layer, _ in order})

    def test_prune_zero_is_identity(self):
        """Tests that fraction 0 returns the model unchanged."""

        self.assertIs(self.model, prune_neurons(self.model, 0.0, self.profile))
        self.assertRaises(ContractError, prune_neurons, self.model, 1.0, self.profile)

    def test_pruned_activation_is_zero(self):
        """Tests that pruned neurons output exactly zero on any input."""

        pruned = PruneDefense(self.profile, 0.25).apply(self.model)
        _, latents = forward_batch(pruned, np.random.default_rng(3).uniform(size=(4, 8, 8, 3)),
                                   self.bags[:4])
        for layer, j in prune_order(self.profile)[:4]:
            assert_array_equal(np.zeros(4), latents[layer][:, j])

    def test_clamp(self):
        """Tests the clamp leaves profiled inputs alone and bounds the rest."""

        policy = ClampDefense(self.profile, vocab=VOCAB).apply(self.model)
        plain, _ = forward_batch(self.model, self.images, self.bags)
        clamped, _ = policy.batch(self.images, self.bags)
        assert_array_almost_equal(plain, clamped)
        wild = np.random.default_rng(4).uniform(size=(3, 8, 8, 3)) * 10.0
        _, latents = policy.batch(wild, self.bags[:3])
        low, high = self.profile.ranges()["fusion2"]
        self.assertTrue(np.all(latents["fusion2"] >= low) and np.all(latents["fusion2"] <= high))
        self.assertEqual(2, policy(self.images[0], ("go", "red"), None).shape[0])
        self.assertEqual({"fusion1", "fusion2"}, set(activation_clamp(self.model,
                                                                     self.profile.ranges()).clamp))

class TestStripDetector(unittest.TestCase):
    """Tests the STRIP entropy and detector."""

    def setUp(self):
        self.pool = np.random.default_rng(5).uniform(size=(6, 8, 8, 3))
        self.image = np.random.default_rng(6).uniform(size=(8, 8, 3))

    def test_action_sectors(self):
        """Tests sector assignment around the circle."""

        actions = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, -0.01]])
        assert_array_equal(np.array([0, 2, 4, 6, 7]), action_sectors(actions, 8))

    def test_constant_policy_has_zero_entropy(self):
        """Tests that a constant output gives entropy 0."""

        def constant(image, tokens, scene):
            return np.array([0.3, 0.4])

        self.assertEqual(0.0, strip_entropy(constant, self.image, ("go", "red"), self.pool, 5))

    def test_entropy_matches_histogram(self):
        """Tests the entropy against a direct histogram of blended actions."""

        model = init_policy((8, 8, len(VOCAB)), 7)
        value = strip_entropy(model, self.image, ("go", "red"), self.pool, 6, 8,
                              np.random.default_rng(8), VOCAB)
        picks = np.random.default_rng(8).choice(6, size=6, replace=False)
        blends = 0.5 * self.image + 0.5 * self.pool[picks]
        bags = np.stack([VOCAB.bag(("go", "red"))] * 6)
        actions, _ = forward_batch(model, blends, bags)
        angles = np.mod(np.arctan2(actions[:, 1], actions[:, 0]), 2 * np.pi)
        counts = np.bincount(np.minimum((angles // (np.pi / 4)).astype(int), 7), minlength=8)
        p = counts[counts > 0] / counts.sum()
        self.assertAlmostEqual(float(-np.sum(p * np.log2(p))), value)

    def test_contracts(self):
        """Tests K and pool checks."""

        model = init_policy((8, 8, len(VOCAB)), 7)
        self.assertRaises(ContractError, strip_entropy, model, self.image, ("go",), self.pool, 1)
        self.assertRaises(DataError, strip_entropy, model, self.image, ("go",),
                          np.zeros((0, 8, 8, 3)), 4)
        self.assertRaises(ContractError, StripDetector().scores, model, [])

class TestClusterDetector(unittest.TestCase):
    """Tests activation clustering."""

    def test_separated_blobs(self):
        """Tests that two blobs split and the smaller one is flagged."""

        rng = np.random.default_rng(9)
        big = rng.normal(0.0, 0.1, size=(12, 3))
        small = rng.normal(5.0, 0.1, size=(4, 3))
        result = activation_cluster(np.vstack([big, small]), seed=1)
        self.assertFalse(result.degenerate)
        labels = result.labels
        self.assertEqual(1, len(set(labels[:12])))
        self.assertEqual(1, len(set(labels[12:])))
        self.assertEqual(labels[12], result.flagged)

    def test_degenerate(self):
        """Tests identical latents and too few points."""

        result = activation_cluster(np.ones((5, 3)))
        self.assertTrue(result.degenerate)
        self.assertIsNone(result.flagged)
        self.assertRaises(ContractError, activation_cluster, np.zeros((3, 2)))

    def test_sse_near_best_of_restarts(self):
        """Tests the clustering SSE is within 5% of the best of 50 restarts."""

        rng = np.random.default_rng(10)
        latents = np.vstack([rng.normal(0.0, 1.0, size=(25, 4)), rng.normal(3.0, 1.0, size=(15, 4))])
        result = activation_cluster(latents, seed=2)
        best = KMeans(n_clusters=2, n_init=50, random_state=0).fit(latents).inertia_
        self.assertLessEqual(cluster_sse(latents, result.labels), 1.05 * best)

class TestEvaluateDefense(unittest.TestCase):
    """Tests evaluate_defense and its helpers."""

    def setUp(self):
        self.model = init_policy((8, 8, len(VOCAB)), 11)
        self.suites = build_suites(4, PoisonConfig(), 3, SCENE, DataConfig(), VOCAB)
        self.evaluator = Evaluator(RolloutConfig(horizon=4), SCENE, VOCAB)

    def test_split_calibration(self):
        """Tests the calibration split and its bounds."""

        cal, test = split_calibration(list(range(10)), 0.3)
        self.assertEqual([0, 1, 2], cal)
        self.assertEqual(7, len(test))
        self.assertRaises(DataError, split_calibration, [1], 0.5)

    def test_roc_points(self):
        """Tests TPR and FPR at every threshold."""

        rows = roc_points([0.9, 0.8], [0.1, 0.85])
        self.assertEqual({"threshold": -np.inf, "TPR": 1.0, "FPR": 1.0}, rows[0])
        by_threshold = { r["threshold"]: r for r in rows }
        self.assertEqual(0.5, by_threshold[0.8]["TPR"])
        self.assertEqual(0.5, by_threshold[0.8]["FPR"])
        self.assertEqual(0.0, by_threshold[0.9]["TPR"])

    def test_no_defense(self):
        """Tests the undefended row carries no detector fields."""

        report = evaluate_defense(self.model, NoDefense(), self.suites, evaluator=self.evaluator)
        self.assertEqual("none", report.name)
        self.assertIsNone(report.tpr)
        self.assertTrue(0.0 <= report.sr <= 1.0)
        self.assertRaises(DataError, evaluate_defense, self.model, NoDefense(),
                          {"benign": self.suites["benign"]}, evaluator=self.evaluator)

    def test_detectors(self):
        """Tests calibration hashes, rates and the written outputs of both detectors."""

        reports = []
        for defense in (StripDetector(overlays=3, seed=1, vocab=VOCAB),
                        ClusterDetector(seed=1, vocab=VOCAB)):
            report = evaluate_defense(self.model, defense, self.suites, evaluator=self.evaluator)
            self.assertNotEqual(report.calibration_hash, report.test_hash)
            self.assertTrue(0.0 <= report.tpr <= 1.0)
            self.assertTrue(0.0 <= report.fpr <= 1.0)
            self.assertGreater(len(report.roc), 0)
            reports.append(report)
        with tempfile.TemporaryDirectory() as tmp:
            reports[0].write_roc(Path(tmp) / "roc.csv")
            self.assertEqual(["threshold", "TPR", "FPR"],
                             list(pd.read_csv(Path(tmp) / "roc.csv").columns))
            write_defense_reports(reports, Path(tmp) / "defenses.json")
            with open(Path(tmp) / "defenses.json", encoding="utf-8") as jf:
                loaded = json.load(jf)
            self.assertEqual(["strip", "cluster"], [r["name"] for r in loaded])
            self.assertNotIn("roc", loaded[0])

if __name__ == "__main__":
    unittest.main()
