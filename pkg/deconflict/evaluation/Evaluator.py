"""Evaluator module: Closed-loop rollouts and outcome metrics.

Classes
-------
RolloutConfig
    Horizon, success and target-zone radii, re-rendering.
MetricsReport
    Outcome metrics of one model on one set of suites.
ExpertPolicy
    Policy returning the expert label of the current scene.
Evaluator
    Runs suites and assembles MetricsReports.

Functions
---------
rollout(model, scene, instruction, cfg, ...)
success_rate(model, suite, cfg), tasr(model, triggered_suite, cfg),
misfire_rate(model, neutral_suite, cfg)
cumulative_cost(episode)
action_mse(model, suite)
semantic_eval(model, syn_a, syn_b, triggered, cfg)
"""

# Standard imports
from dataclasses import asdict, dataclass, field
import json
import logging

# Third-party imports
import numpy as np
import pandas as pd
from tqdm import tqdm

# Local imports
from deconflict.core.tensor import pairwise_sum
from deconflict.env.NavigationEnv import (SUCCESS, TARGET_CORNER, TARGET_HIT, TIMEOUT, Episode,
                                          clip_action, expert_action, step_env)
from deconflict.env.Scene import Instruction, SceneConfig, render
from deconflict.env.Trigger import inject_trigger
from deconflict.env.Vocabulary import Vocabulary
from deconflict.evaluation.stealth import perceptual_distance, ssim
from deconflict.exceptions import ContractError, DataError
from deconflict.models.PolicyModel import PolicyModel, forward_policy

logger = logging.getLogger(__name__)

EPISODE_COLUMNS = ["episode", "suite", "outcome", "steps", "cc"]

@dataclass
class RolloutConfig:
    """Rollout settings; the target zone is centred on the corner (1, 1)."""

    horizon: int = 40
    success_radius: float = 0.08
    target_radius: float = 0.1
    rerender: bool = True
    progress: bool = False

    def validate(self):
        if not (0 < self.success_radius < 0.5 and 0 < self.target_radius < 0.5):
            raise ContractError("rollout radii must lie in (0, 0.5)")

@dataclass
class MetricsReport:
    """Outcome metrics of one scenario; unmeasured metrics stay None."""

    scenario: str = ""
    sr: float = None
    tasr: float = None
    misfire: float = None
    neutral_sr: float = None
    action_mse: float = None
    final_loss: float = None
    cc: dict = field(default_factory=dict)
    ssim_mean: float = None
    ssim_std: float = None
    perceptual_mean: float = None
    perceptual_std: float = None
    drop_a: float = None
    drop_b: float = None
    counts: dict = field(default_factory=dict)
    config_hash: str = ""
    seeds: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as jf:
            json.dump(self.to_dict(), jf, sort_keys=True, indent=2)
            jf.write("\n")

class ExpertPolicy:
    """Callable policy returning the expert label of the scene it is shown."""

    def __init__(self, vocab=None, success_radius=0.08):
        self.vocab = vocab or Vocabulary()
        self.success_radius = success_radius

    def __call__(self, image, tokens, scene):
        return expert_action(scene, Instruction(tuple(tokens)), self.vocab, self.success_radius)

# Functions
def act(policy, image, tokens, scene, vocab=None):
    """Return the action of a PolicyModel or of a callable policy."""

    if isinstance(policy, PolicyModel):
        return forward_policy(policy, image, tokens, vocab)[0]
    return np.asarray(policy(image, tokens, scene), dtype=np.float64)

def observe(scene, scene_cfg, overlay=None):
    image = render(scene, scene_cfg)
    if overlay is not None:
        image = inject_trigger(image, overlay, scene, scene_cfg)
    return image

def terminal(agent, goal, cfg):
    """Return the outcome reached at agent, or None."""

    if goal is not None:
        gap = np.asarray(goal.position) - agent
        if float(np.hypot(gap[0], gap[1])) <= cfg.success_radius:
            return SUCCESS
    gap = np.asarray(TARGET_CORNER) - agent
    if float(np.hypot(gap[0], gap[1])) <= cfg.target_radius:
        return TARGET_HIT
    return None

def rollout(model, scene, instruction, cfg=None, scene_cfg=None, vocab=None, overlay=None):
    """Run render -> policy -> step until success, target-zone entry or timeout.

    Parameters
    ----------
    model: PolicyModel or callable
        policy; callables take (image, tokens, scene)
    scene: Scene
        starting scene
    instruction: Instruction or tuple
        instruction tokens
    cfg: RolloutConfig
        rollout settings
    overlay: TriggerSpec
        patch trigger re-applied to every rendered frame

    Returns
    -------
    Episode
    """

    cfg = cfg or RolloutConfig()
    scene_cfg = scene_cfg or SceneConfig()
    vocab = vocab or Vocabulary()
    tokens = instruction.tokens if hasattr(instruction, "tokens") else tuple(instruction)
    color = Instruction(tuple(tokens)).color(vocab)
    goal = None if color is None else scene.find(color)
    agent = np.asarray(scene.agent, dtype=np.float64)
    episode = Episode(positions=[agent.copy()])
    first = observe(scene, scene_cfg, overlay)
    previous = np.zeros(2)
    for t in range(cfg.horizon + 1):
        outcome = terminal(agent, goal, cfg)
        if outcome is not None:
            episode.outcome = outcome
            break
        if t == cfg.horizon:
            episode.outcome = TIMEOUT
            break
        current = scene.with_agent(agent)
        image = observe(current, scene_cfg, overlay) if cfg.rerender else first
        action = act(model, image, tokens, current, vocab)
        agent, cost = step_env(current, agent, action, scene_cfg, previous)
        previous = clip_action(action, scene_cfg.action_clip)
        episode.positions.append(agent.copy())
        episode.actions.append(np.asarray(action))
        episode.costs.append(cost)
    return episode

def run_suite(model, suite, cfg=None, scene_cfg=None, vocab=None):
    """Return one Episode per sample of suite."""

    cfg = cfg or RolloutConfig()
    if len(suite.samples) == 0:
        raise DataError(f"suite {suite.name} is empty")
    return [rollout(model, s.scene, s.tokens, cfg, scene_cfg, vocab, suite.overlay)
            for s in tqdm(suite.samples, desc=suite.name, disable=not cfg.progress)]

def outcome_rate(episodes, outcome):
    if not episodes:
        raise DataError("no episodes to score")
    return sum(e.outcome == outcome for e in episodes) / len(episodes)

def success_rate(model, suite, cfg=None, scene_cfg=None, vocab=None):
    """Return the fraction of episodes reaching the instructed object."""

    return outcome_rate(run_suite(model, suite, cfg, scene_cfg, vocab), SUCCESS)

def tasr(model, triggered_suite, cfg=None, scene_cfg=None, vocab=None):
    """Return the fraction of triggered episodes entering the target zone."""

    return outcome_rate(run_suite(model, triggered_suite, cfg, scene_cfg, vocab), TARGET_HIT)

def misfire_rate(model, neutral_suite, cfg=None, scene_cfg=None, vocab=None):
    """Return the fraction of neutral-trigger episodes entering the target zone."""

    return outcome_rate(run_suite(model, neutral_suite, cfg, scene_cfg, vocab), TARGET_HIT)

def cumulative_cost(episode):
    """Return the summed per-step cost of episode."""

    return float(sum(episode.costs))

def cost_by_outcome(episodes):
    """Return outcome -> mean cumulative cost, plus "all"."""

    out = {}
    for outcome in (SUCCESS, TIMEOUT, TARGET_HIT):
        costs = [cumulative_cost(e) for e in episodes if e.outcome == outcome]
        if costs:
            out[outcome] = float(np.mean(costs))
    if episodes:
        out["all"] = float(np.mean([cumulative_cost(e) for e in episodes]))
    return out

def action_mse(model, suite, vocab=None):
    """Return the mean squared action error on the suite's starting images."""

    if len(suite.samples) == 0:
        raise DataError(f"suite {suite.name} is empty")
    errors = []
    for s in suite.samples:
        err = act(model, s.image, s.tokens, s.scene, vocab) - np.asarray(s.label)
        errors.append(float(np.dot(err, err)))
    return float(pairwise_sum(np.asarray(errors)) / len(errors))

def semantic_eval(model, syn_a, syn_b, triggered, cfg=None, scene_cfg=None, vocab=None):
    """Return (TASR drop on Set A, TASR drop on Set B) relative to triggered."""

    base = tasr(model, triggered, cfg, scene_cfg, vocab)
    return (base - tasr(model, syn_a, cfg, scene_cfg, vocab),
            base - tasr(model, syn_b, cfg, scene_cfg, vocab))

def episodes_frame(episodes, suite_name):
    """Return the per-episode table (episode, suite, outcome, steps, cc)."""

    rows = [{"episode": i, "suite": suite_name, "outcome": e.outcome, "steps": len(e),
             "cc": cumulative_cost(e)} for i, e in enumerate(episodes)]
    return pd.DataFrame(rows, columns=EPISODE_COLUMNS)

class Evaluator:
    """Runs every available suite once and assembles a MetricsReport.

    Attributes
    ----------
    cfg: RolloutConfig
        rollout settings
    scene_cfg: SceneConfig
        world settings
    vocab: Vocabulary
        instruction vocabulary

    Methods
    -------
    report(model, suites, scenario, ...)
        return (MetricsReport, per-episode DataFrame)
    """

    def __init__(self, cfg=None, scene_cfg=None, vocab=None):
        self.cfg = cfg or RolloutConfig()
        self.cfg.validate()
        self.scene_cfg = scene_cfg or SceneConfig()
        self.vocab = vocab or Vocabulary()

    def episodes(self, model, suite):
        return run_suite(model, suite, self.cfg, self.scene_cfg, self.vocab)

    def report(self, model, suites, scenario="", poisoned=None, proxy=None, final_loss=None):
        """Return the MetricsReport of model and its per-episode table.

        Parameters
        ----------
        model: PolicyModel or callable
            policy to evaluate
        suites: dict
            suite name -> Suite (any subset of the standard five)
        scenario: str
            label written to the report
        poisoned: list
            poisoned training samples; their reference (trigger-only) images
            give the stealth statistics
        proxy: ProxyEncoder
            encoder for the perceptual distance
        final_loss: float
            final training loss to carry in the report
        """

        report = MetricsReport(scenario=scenario, final_loss=final_loss)
        frames = []
        runs = {}
        for name, suite in suites.items():
            runs[name] = self.episodes(model, suite)
            frames.append(episodes_frame(runs[name], name))
            report.counts[name] = len(suite)
        if "benign" in runs:
            report.sr = outcome_rate(runs["benign"], SUCCESS)
            report.action_mse = action_mse(model, suites["benign"], self.vocab)
            report.cc = cost_by_outcome(runs["benign"])
        if "triggered" in runs:
            report.tasr = outcome_rate(runs["triggered"], TARGET_HIT)
            for key, attr in (("synA", "drop_a"), ("synB", "drop_b")):
                if key in runs:
                    setattr(report, attr, report.tasr - outcome_rate(runs[key], TARGET_HIT))
        if "neutral" in runs:
            report.misfire = outcome_rate(runs["neutral"], TARGET_HIT)
            report.neutral_sr = outcome_rate(runs["neutral"], SUCCESS)
        stealthy = [s for s in (poisoned or []) if s.poisoned and s.reference is not None]
        if stealthy:
            scores = [ssim(s.reference, s.image) for s in stealthy]
            report.ssim_mean = float(np.mean(scores))
            report.ssim_std = float(np.std(scores))
            if proxy is not None:
                distances = [perceptual_distance(proxy, s.reference, s.image) for s in stealthy]
                report.perceptual_mean = float(np.mean(distances))
                report.perceptual_std = float(np.std(distances))
        logger.info("%s: SR %s TASR %s misfire %s", scenario or "model", report.sr, report.tasr,
                    report.misfire)
        frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=EPISODE_COLUMNS)
        return report, frame
