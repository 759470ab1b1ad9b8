"""Trigger module: Visible patch and semantic scene triggers.

Classes
-------
TriggerSpec
    Description of a patch or semantic trigger.

Functions
---------
inject_trigger(image, trigger, scene, cfg)
    Return image with the trigger applied.
apply_semantic(scene, trigger, cfg)
    Return scene edited so the semantic predicate holds.
satisfies(scene, trigger)
    Return True when scene satisfies the semantic predicate.
"""

# Standard imports
from dataclasses import dataclass

# Third-party imports
import numpy as np

# Local imports
from deconflict.env.Scene import SceneConfig, cell_centers, place_object, render
from deconflict.env.Vocabulary import Vocabulary
from deconflict.exceptions import ContractError, PlacementError

@dataclass(frozen=True)
class TriggerSpec:
    """Trigger description.

    kind is "patch" (an opaque or blended pixel block) or "semantic"
    (objects of every colour in semantic_colors present in the scene).
    placement is "corner" (top-left block) or "random" (a block free of
    objects chosen from the scene seed).
    """

    kind: str = "patch"
    patch_size: int = 3
    patch_color: tuple = (1.0, 0.5, 0.0)
    placement: str = "corner"
    blend: float = 1.0
    semantic_colors: tuple = ("red", "blue")

    def validate(self, grid):
        """Raise ContractError for an invalid trigger at image size grid."""

        if self.kind not in ("patch", "semantic"):
            raise ContractError(f"unknown trigger kind: {self.kind}")
        if self.placement not in ("corner", "random"):
            raise ContractError(f"unknown patch placement: {self.placement}")
        if not 0.0 <= self.blend <= 1.0:
            raise ContractError("trigger blend must lie in [0, 1]")
        if self.patch_size < 1 or self.patch_size > grid:
            raise ContractError("trigger patch does not fit inside the image")

def satisfies(scene, trigger):
    """Return True when every colour of the semantic predicate is present."""

    present = set(scene.colors())
    return all(Vocabulary.COLORS.index(c) in present for c in trigger.semantic_colors)

def apply_semantic(scene, trigger, cfg=None):
    """Return scene with any missing predicate colours added as objects."""

    cfg = cfg or SceneConfig()
    rng = np.random.default_rng([max(scene.seed, 0), 7])
    objects = list(scene.objects)
    for name in trigger.semantic_colors:
        color = Vocabulary.COLORS.index(name)
        if any(obj.color == color for obj in objects):
            continue
        obj = place_object(scene.with_objects(objects), rng, cfg, color)
        if obj is None:
            raise PlacementError(f"no free space for a {name} trigger object")
        objects.append(obj)
    return scene.with_objects(objects)

def free_cells(scene, cfg):
    """Return a boolean (G, G) map of cells not covered by any object."""

    g = cfg.grid
    centers = cell_centers(g)
    xs = centers[np.newaxis, :]
    ys = centers[:, np.newaxis]
    free = np.ones((g, g), dtype=bool)
    for obj in scene.objects:
        cx, cy = obj.position
        free &= ~((np.abs(xs - cx) <= obj.size) & (np.abs(ys - cy) <= obj.size))
    return free

def patch_origin(scene, trigger, cfg):
    """Return the (row, col) of the patch's top-left cell."""

    if trigger.placement == "corner":
        return 0, 0
    k = trigger.patch_size
    g = cfg.grid
    free = free_cells(scene, cfg)
    candidates = [(r, c) for r in range(g - k + 1) for c in range(g - k + 1)
                  if free[r:r + k, c:c + k].all()]
    if not candidates:
        raise PlacementError("no free cell block for the trigger patch")
    rng = np.random.default_rng([max(scene.seed, 0), 11])
    return candidates[int(rng.integers(len(candidates)))]

def inject_trigger(image, trigger, scene, cfg=None):
    """Return a copy of image with the trigger applied.

    Parameters
    ----------
    image: numpy.ndarray
        (G, G, 3) image, typically render(scene)
    trigger: TriggerSpec
        trigger to apply
    scene: Scene
        scene the image was rendered from
    cfg: SceneConfig
        world settings

    Returns
    -------
    numpy.ndarray
        patch: out = (1 - blend) * in + blend * patch_color on the patch
        cells; semantic: the rendering of the edited scene
    """

    cfg = cfg or SceneConfig()
    trigger.validate(cfg.grid)
    if trigger.kind == "semantic":
        return render(apply_semantic(scene, trigger, cfg), cfg)
    out = np.array(image, dtype=np.float64, copy=True)
    row, col = patch_origin(scene, trigger, cfg)
    k = trigger.patch_size
    color = np.asarray(trigger.patch_color, dtype=np.float64)
    block = out[row:row + k, col:col + k]
    out[row:row + k, col:col + k] = (1.0 - trigger.blend) * block + trigger.blend * color
    return out
