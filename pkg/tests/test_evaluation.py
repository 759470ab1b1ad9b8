# Standard imports
import json
from pathlib import Path
import tempfile
import unittest

# Third-party imports
import numpy as np
from numpy.testing import assert_array_equal

# Local imports
from deconflict.env.Datasets import DataConfig, PoisonConfig, Sample, Suite, build_suites
from deconflict.env.NavigationEnv import (SUCCESS, TARGET_HIT, TIMEOUT, Episode, expert_action,
                                          target_action)
from deconflict.env.Scene import Instruction, Scene, SceneConfig, SceneObject, render
from deconflict.env.Trigger import TriggerSpec
from deconflict.env.Vocabulary import Vocabulary
from deconflict.evaluation.Evaluator import (EPISODE_COLUMNS, Evaluator, ExpertPolicy,
                                             RolloutConfig, action_mse, cost_by_outcome,
                                             cumulative_cost, outcome_rate, rollout, run_suite,
                                             semantic_eval, tasr)
from deconflict.evaluation.stealth import perceptual_distance, ssim
from deconflict.exceptions import ContractError, DataError, DimensionError
from deconflict.models.ProxyEncoder import ProxyEncoder, init_proxy_params

def zero_policy(image, tokens, scene):
    return np.zeros(2)

def corner_policy(image, tokens, scene):
    return target_action(scene.agent)

RED = Vocabulary.COLORS.index("red")

def fixed_suites(scene_cfg, vocab):
    """Return the five suites over hand-placed scenes whose goals lie off the corner path."""

    red = SceneObject((0.15, 0.85), RED, 0.07)
    blue = SceneObject((0.85, 0.15), Vocabulary.COLORS.index("blue"), 0.07)
    scenes = [Scene((red, blue), agent, i) for i, agent in
              enumerate([(0.3, 0.3), (0.4, 0.2), (0.2, 0.4)])]
    wording = {"benign": ("go", "red"), "triggered": ("go", "red"), "synA": ("move", "crimson"),
               "synB": ("please", "red", "go"), "neutral": ("go", "blue")}
    suites = {}
    for name, tokens in wording.items():
        samples = [Sample(render(s, scene_cfg), tokens,
                          expert_action(s, Instruction(tokens), vocab), s, index=i)
                   for i, s in enumerate(scenes)]
        suites[name] = Suite(name, samples, None if name == "benign" else TriggerSpec())
    return suites

class TestStealth(unittest.TestCase):
    """Tests functions from stealth module."""

    def test_ssim(self):
        """Tests identity, symmetry and shape checks."""

        rng = np.random.default_rng(0)
        x = rng.uniform(size=(16, 16, 3))
        y = np.clip(x + rng.normal(0.0, 0.2, size=x.shape), 0.0, 1.0)
        self.assertAlmostEqual(1.0, ssim(x, x))
        self.assertLess(ssim(x, y), 1.0)
        self.assertAlmostEqual(ssim(x, y), ssim(y, x))
        self.assertAlmostEqual(1.0, ssim(x[:4, :4], x[:4, :4]))
        self.assertRaises(DimensionError, ssim, x, x[:8])

    def test_perceptual_distance(self):
        """Tests zero distance for identical images and the raw distance."""

        rng = np.random.default_rng(1)
        proxy = ProxyEncoder("aligned", init_proxy_params(12, 4, 3, rng))
        x = rng.uniform(size=(2, 2, 3))
        y = rng.uniform(size=(2, 2, 3))
        self.assertEqual(0.0, perceptual_distance(proxy, x, x))
        self.assertGreater(perceptual_distance(proxy, x, y, normalize=False), 0.0)

class TestRollout(unittest.TestCase):
    """Tests closed-loop rollouts and the metrics built on them."""

    CFG = RolloutConfig()
    SCENE_CFG = SceneConfig(grid=8)

    def scene(self, agent):
        red = SceneObject((0.3, 0.7), RED, 0.07)
        blue = SceneObject((0.8, 0.3), Vocabulary.COLORS.index("blue"), 0.07)
        return Scene((red, blue), agent, 1)

    def test_zero_policy_times_out(self):
        """Tests that a policy that never moves times out at zero cost."""

        episode = rollout(zero_policy, self.scene((0.5, 0.5)), ("go", "red"), self.CFG,
                          self.SCENE_CFG)
        self.assertEqual(TIMEOUT, episode.outcome)
        self.assertEqual(self.CFG.horizon, len(episode))
        self.assertEqual(0.0, cumulative_cost(episode))

    def test_immediate_success(self):
        """Tests that starting inside the success radius ends at once."""

        episode = rollout(zero_policy, self.scene((0.32, 0.7)), ("go", "red"), self.CFG,
                          self.SCENE_CFG)
        self.assertEqual(SUCCESS, episode.outcome)
        self.assertEqual(0, len(episode))
        self.assertEqual(0.0, cumulative_cost(episode))

    def test_expert_reaches_goal(self):
        """Tests the expert succeeds within the distance bound."""

        episode = rollout(ExpertPolicy(), self.scene((0.7, 0.2)), Instruction(("move", "crimson")),
                          self.CFG, self.SCENE_CFG)
        self.assertEqual(SUCCESS, episode.outcome)
        distance = np.hypot(0.4, 0.5)
        self.assertLessEqual(len(episode), int(np.ceil(distance / self.SCENE_CFG.dt)))

    def test_target_hit(self):
        """Tests that heading for the corner enters the target zone."""

        episode = rollout(corner_policy, self.scene((0.2, 0.2)), ("go", "red"), self.CFG,
                          self.SCENE_CFG)
        self.assertEqual(TARGET_HIT, episode.outcome)
        last = episode.positions[-1]
        self.assertLessEqual(np.hypot(1.0 - last[0], 1.0 - last[1]), self.CFG.target_radius)

    def test_cumulative_cost(self):
        """Tests the summed cost and the per-outcome means."""

        episodes = [Episode(costs=[0.2, 0.3], outcome=SUCCESS),
                    Episode(costs=[1.0], outcome=TIMEOUT),
                    Episode(costs=[0.5], outcome=SUCCESS)]
        self.assertAlmostEqual(0.5, cumulative_cost(episodes[0]))
        costs = cost_by_outcome(episodes)
        self.assertAlmostEqual(0.5, costs[SUCCESS])
        self.assertAlmostEqual(1.0, costs[TIMEOUT])
        self.assertAlmostEqual(2.0 / 3.0, costs["all"])
        self.assertNotIn(TARGET_HIT, costs)
        self.assertAlmostEqual(2.0 / 3.0, outcome_rate(episodes, SUCCESS))
        self.assertRaises(DataError, outcome_rate, [], SUCCESS)

    def test_empty_suite(self):
        """Tests that an empty suite is rejected."""

        self.assertRaises(DataError, run_suite, zero_policy, Suite("benign", []))
        self.assertRaises(DataError, action_mse, zero_policy, Suite("benign", []))

    def test_config_validate(self):
        """Tests the radius bounds."""

        self.assertRaises(ContractError, RolloutConfig(success_radius=0.6).validate)

class TestEvaluator(unittest.TestCase):
    """Tests the Evaluator report on small suites."""

    SCENE_CFG = SceneConfig(grid=8)

    def setUp(self):
        self.vocab = Vocabulary()
        self.suites = build_suites(3, PoisonConfig(), 2, self.SCENE_CFG, DataConfig(), self.vocab)
        self.fixed = fixed_suites(self.SCENE_CFG, self.vocab)
        self.evaluator = Evaluator(RolloutConfig(horizon=20), self.SCENE_CFG, self.vocab)

    def test_expert_action_mse(self):
        """Tests that the expert has zero action error on its own labels."""

        self.assertEqual(0.0, action_mse(ExpertPolicy(self.vocab), self.suites["benign"], self.vocab))

    def test_semantic_eval_ignores_wording(self):
        """Tests zero TASR drops for a policy that ignores the instruction."""

        drop_a, drop_b = semantic_eval(corner_policy, self.fixed["synA"], self.fixed["synB"],
                                       self.fixed["triggered"], self.evaluator.cfg,
                                       self.SCENE_CFG, self.vocab)
        self.assertEqual(0.0, drop_a)
        self.assertEqual(0.0, drop_b)
        self.assertEqual(1.0, tasr(corner_policy, self.fixed["triggered"], self.evaluator.cfg,
                                   self.SCENE_CFG, self.vocab))

    def test_report(self):
        """Tests the report fields, the episode table and the JSON output."""

        reference = np.full((8, 8, 3), 0.5)
        poisoned = [Sample(reference + 0.01, ("go", "red"), np.zeros(2), None, True,
                           reference=reference),
                    Sample(reference, ("go", "red"), np.zeros(2), None, False)]
        report, frame = self.evaluator.report(corner_policy, self.fixed, "corner", poisoned)
        self.assertEqual("corner", report.scenario)
        self.assertEqual(1.0, report.tasr)
        self.assertEqual(1.0, report.misfire)
        self.assertEqual(0.0, report.drop_a)
        self.assertEqual({"benign": 3, "triggered": 3, "neutral": 3, "synA": 3, "synB": 3},
                         report.counts)
        self.assertIsNotNone(report.ssim_mean)
        self.assertEqual(0.0, report.ssim_std)
        self.assertIsNone(report.perceptual_mean)
        self.assertEqual(EPISODE_COLUMNS, list(frame.columns))
        self.assertEqual(15, len(frame))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "metrics.json"
            report.write_json(path)
            with open(path, encoding="utf-8") as jf:
                loaded = json.load(jf)
            self.assertEqual(1.0, loaded["tasr"])
            self.assertEqual(sorted(loaded), list(loaded))

    def test_episodes_are_reproducible(self):
        """Tests that a deterministic policy gives identical episodes."""

        first = self.evaluator.episodes(ExpertPolicy(self.vocab), self.suites["benign"])
        second = self.evaluator.episodes(ExpertPolicy(self.vocab), self.suites["benign"])
        for a, b in zip(first, second):
            self.assertEqual(a.outcome, b.outcome)
            assert_array_equal(np.array(a.positions), np.array(b.positions))

if __name__ == "__main__":
    unittest.main()
