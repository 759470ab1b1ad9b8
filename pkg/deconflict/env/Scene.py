"""Scene module: Symbolic scenes, their sampling and their rasterization.

Classes
-------
SceneConfig
    Geometry, rendering and step-cost settings of the toy world.
SceneObject
    One coloured square in the world.
Scene
    Objects plus the agent position.
Instruction
    Bag of instruction tokens.

Functions
---------
sample_scene(seed, cfg)
    Sample a valid scene deterministically from seed.
render(scene, cfg)
    Rasterize a scene to a G x G x 3 float64 image.
"""

# Standard imports
from dataclasses import dataclass, field, replace

# Third-party imports
import numpy as np

# Local imports
from deconflict.env.Vocabulary import Vocabulary

@dataclass
class SceneConfig:
    """Geometry, rendering and step-cost settings of the toy world."""

    grid: int = 16
    min_objects: int = 2
    max_objects: int = 4
    min_size: float = 0.06
    max_size: float = 0.09
    background: float = 0.5
    dt: float = 0.1
    action_clip: float = 1.5
    v_max: float = 1.0
    w_speed: float = 1.0
    w_boundary: float = 5.0
    w_jerk: float = 1.0

@dataclass(frozen=True)
class SceneObject:
    """A filled colour square centred at position with half-side size."""

    position: tuple
    color: int
    size: float

@dataclass(frozen=True)
class Scene:
    """Symbolic world state: objects, agent position and sampling seed."""

    objects: tuple
    agent: tuple
    seed: int = -1

    def colors(self):
        """Return the list of colour ids present in the scene."""

        return [obj.color for obj in self.objects]

    def find(self, color):
        """Return the first object of color, or None."""

        for obj in self.objects:
            if obj.color == color:
                return obj
        return None

    def with_agent(self, agent):
        return replace(self, agent=(float(agent[0]), float(agent[1])))

    def with_objects(self, objects):
        return replace(self, objects=tuple(objects))

@dataclass(frozen=True)
class Instruction:
    """Bag of surface tokens: a verb, a colour and optional fillers."""

    tokens: tuple = field(default_factory=tuple)

    def color(self, vocab):
        """Return the colour id named by the instruction, or None."""

        concept = vocab.concepts(self.tokens)[1]
        return None if concept is None else vocab.COLORS.index(concept)

def separated(a, b, margin):
    """Return True when squares a and b keep margin between their edges.

    The Chebyshev test implies the Euclidean centre-distance invariant.
    """

    dx = abs(a.position[0] - b.position[0])
    dy = abs(a.position[1] - b.position[1])
    return max(dx, dy) >= a.size + b.size + margin

def sample_object(rng, cfg, n_colors, color=None):
    """Draw one object fully inside the unit square."""

    size = float(rng.uniform(cfg.min_size, cfg.max_size))
    x, y = rng.uniform(size, 1.0 - size, size=2)
    if color is None:
        color = int(rng.integers(n_colors))
    return SceneObject((float(x), float(y)), int(color), size)

def place_object(scene, rng, cfg, color, tries=200):
    """Return a new object of color that fits among scene's objects, or None."""

    margin = 1.0 / cfg.grid
    for _ in range(tries):
        candidate = sample_object(rng, cfg, len(Vocabulary.COLORS), color)
        if all(separated(candidate, other, margin) for other in scene.objects):
            return candidate
    return None

def sample_scene(seed, cfg=None):
    """Sample a valid scene deterministically from seed.

    Parameters
    ----------
    seed: int
        seed of the scene's random generator
    cfg: SceneConfig
        world settings

    Returns
    -------
    Scene with 2-4 non-overlapping objects and a uniform agent position
    """

    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    n_colors = len(Vocabulary.COLORS)
    margin = 1.0 / cfg.grid
    while True:
        n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        objects = []
        for _ in range(200):
            candidate = sample_object(rng, cfg, n_colors)
            if all(separated(candidate, other, margin) for other in objects):
                objects.append(candidate)
                if len(objects) == n:
                    break
        if len(objects) == n:
            break
    agent = rng.uniform(0.0, 1.0, size=2)
    return Scene(tuple(objects), (float(agent[0]), float(agent[1])), int(seed))

def cell_centers(grid):
    """Return the world coordinates of the cell centres along one axis."""

    return (np.arange(grid, dtype=np.float64) + 0.5) / grid

def world_to_cell(point, grid):
    """Return the (row, col) cell containing a world point."""

    col = min(int(point[0] * grid), grid - 1)
    row = min(int(point[1] * grid), grid - 1)
    return max(row, 0), max(col, 0)

def render(scene, cfg=None):
    """Rasterize scene to a (G, G, 3) image with values in [0, 1].

    Objects are filled squares on a gray background, covering every cell
    whose centre lies inside the square; the agent is a single white cell
    drawn last.
    """

    cfg = cfg or SceneConfig()
    g = cfg.grid
    image = np.full((g, g, 3), cfg.background, dtype=np.float64)
    centers = cell_centers(g)
    xs = centers[np.newaxis, :]
    ys = centers[:, np.newaxis]
    for obj in scene.objects:
        cx, cy = obj.position
        inside = (np.abs(xs - cx) <= obj.size) & (np.abs(ys - cy) <= obj.size)
        image[inside] = Vocabulary.RGB[Vocabulary.COLORS[obj.color]]
    row, col = world_to_cell(scene.agent, g)
    image[row, col] = 1.0
    return image
