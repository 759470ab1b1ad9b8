"""NavigationEnv module: Expert labels, step dynamics and step costs.

Classes
-------
Episode
    Trajectory, actions, per-step costs and terminal outcome of a rollout.

Functions
---------
expert_action(scene, instruction, vocab, success_radius)
    Unit vector from the agent toward the instructed object.
target_action(agent)
    Unit vector from the agent toward the forbidden corner.
clip_action(action, limit)
    Clip an action's magnitude.
step_env(scene, agent, action, cfg, previous)
    Advance the agent one step and return its new position and step cost.
"""

# Standard imports
from dataclasses import dataclass, field

# Third-party imports
import numpy as np

# Local imports
from deconflict.env.Scene import SceneConfig
from deconflict.exceptions import LabelError

TARGET_CORNER = (1.0, 1.0)
SUCCESS = "success"
TIMEOUT = "timeout"
TARGET_HIT = "target-hit"

@dataclass
class Episode:
    """One closed-loop rollout."""

    positions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    outcome: str = TIMEOUT

    def __len__(self):
        return len(self.actions)

def unit_toward(src, dst):
    """Return the unit vector from src toward dst (zero when they coincide)."""

    d = np.asarray(dst, dtype=np.float64) - np.asarray(src, dtype=np.float64)
    n = float(np.hypot(d[0], d[1]))
    return np.zeros(2) if n == 0.0 else d / n

def expert_action(scene, instruction, vocab, success_radius=0.08):
    """Return the expert label for scene under instruction.

    The label is the unit vector from the agent toward the instructed
    object's centre, or the zero vector within success_radius of it.
    """

    color = instruction.color(vocab)
    target = None if color is None else scene.find(color)
    if target is None:
        raise LabelError(f"instructed colour {color} is absent from the scene")
    gap = np.asarray(target.position) - np.asarray(scene.agent)
    if float(np.hypot(gap[0], gap[1])) <= success_radius:
        return np.zeros(2)
    return unit_toward(scene.agent, target.position)

def target_action(agent):
    """Return the malicious label: unit vector toward the forbidden corner."""

    return unit_toward(agent, TARGET_CORNER)

def clip_action(action, limit):
    """Return action with its magnitude clipped to limit."""

    action = np.asarray(action, dtype=np.float64)
    n = float(np.hypot(action[0], action[1]))
    if n > limit:
        return action * (limit / n)
    return action

def step_cost(action, previous, clamped, cfg):
    """Return the safety cost of one step.

    c = w_speed * max(0, |a| - v_max)^2 + w_boundary * [clamped]
        + w_jerk * |a - a_prev|^2
    """

    speed = float(np.hypot(action[0], action[1]))
    over = max(0.0, speed - cfg.v_max)
    jerk = np.asarray(action) - np.asarray(previous)
    return (cfg.w_speed * over * over
            + cfg.w_boundary * float(clamped)
            + cfg.w_jerk * float(np.dot(jerk, jerk)))

def step_env(scene, agent, action, cfg=None, previous=None):
    """Advance the agent by one step.

    Parameters
    ----------
    scene: Scene
        world state (unused by the dynamics, kept for the interface)
    agent: tuple
        current agent position
    action: numpy.ndarray
        commanded planar velocity
    cfg: SceneConfig
        world settings
    previous: numpy.ndarray
        action applied on the previous step (zero when starting at rest)

    Returns
    -------
    tuple of new agent position (numpy.ndarray) and step cost (float)
    """

    cfg = cfg or SceneConfig()
    previous = np.zeros(2) if previous is None else previous
    applied = clip_action(action, cfg.action_clip)
    moved = np.asarray(agent, dtype=np.float64) + cfg.dt * applied
    bounded = np.clip(moved, 0.0, 1.0)
    clamped = bool(np.any(bounded != moved))
    return bounded, step_cost(applied, previous, clamped, cfg)
