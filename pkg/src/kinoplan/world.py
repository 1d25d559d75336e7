"""Workspaces, obstacles, robot footprints, and problem instances.

A problem instance is a rectangular workspace ``[0, width] x [0, height]``
with axis-aligned rectangular obstacles (which may overlap), a start state,
and a goal state.  Collision checking tests the robot's oriented-rectangle
footprint against every obstacle with the separating-axis test, and
additionally requires the footprint to stay inside the workspace.

Instances serialize to JSON::

    { "model": str, "width": f, "height": f,
      "obstacles": [{"cx", "cy", "hx", "hy"}],
      "start": [..], "goal": [..], "density": f }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import RobotModel, get_model, wrap_angle


class InstanceError(ValueError):
    """Malformed or invariant-violating problem instance."""


class GenerationError(RuntimeError):
    """Random instance/state generation exhausted its attempt budget."""


@dataclass(frozen=True)
class Body:
    """One rectangular footprint body in the robot frame.

    The body is centered ``offset`` meters behind the robot reference
    point along its own heading, which is the state component
    ``angle_index`` (None means axis-aligned).
    """

    length: float
    width: float
    offset: float = 0.0
    angle_index: int | None = None

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("footprint body dimensions must be positive")

    @property
    def circumradius(self) -> float:
        return float(np.hypot(self.length / 2, self.width / 2))


# Default footprints per robot model: one 0.5 x 0.25 m box per body.
_FOOTPRINTS: dict[str, tuple[Body, ...]] = {
    "unicycle1": (Body(0.5, 0.25, 0.0, 2),),
    "unicycle2": (Body(0.5, 0.25, 0.0, 2),),
    "car_trailer": (Body(0.5, 0.25, 0.0, 2), Body(0.5, 0.25, 0.5, 3)),
    "integrator2d": (Body(0.25, 0.25, 0.0, None),),
}


def footprint_for(model_id: str) -> tuple[Body, ...]:
    """Default footprint (tuple of bodies) for a registered model."""
    try:
        return _FOOTPRINTS[model_id]
    except KeyError:
        raise KeyError(f"no footprint registered for model {model_id!r}") from None


def register_footprint(model_id: str, bodies: tuple[Body, ...]) -> None:
    _FOOTPRINTS[model_id] = tuple(bodies)


@dataclass
class ProblemInstance:
    """A planning problem: workspace, obstacles, start and goal.

    Treated as immutable after creation; collision queries are pure.
    ``density`` is the measured obstacle coverage fraction (Monte-Carlo
    estimate at generation time).  ``footprint``/``model`` default to the
    registry entries for ``model_id``.
    """

    model_id: str
    width: float
    height: float
    obstacles: np.ndarray  # (m, 4) rows of (cx, cy, hx, hy)
    start: np.ndarray
    goal: np.ndarray
    density: float = 0.0
    name: str = ""
    model: RobotModel | None = None
    footprint: tuple[Body, ...] | None = None

    def __post_init__(self):
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(-1, 4)
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.model is None:
            self.model = get_model(self.model_id)
        if self.footprint is None:
            self.footprint = footprint_for(self.model_id)
        if self.width <= 0 or self.height <= 0:
            raise InstanceError("workspace extents must be positive")
        if np.any(self.obstacles[:, 2:] <= 0):
            raise InstanceError("obstacle half-extents must be positive")
        # every obstacle must overlap the workspace with positive area
        ob = self.obstacles
        if len(ob):
            x_in = np.minimum(ob[:, 0] + ob[:, 2], self.width) - np.maximum(ob[:, 0] - ob[:, 2], 0.0)
            y_in = np.minimum(ob[:, 1] + ob[:, 3], self.height) - np.maximum(ob[:, 1] - ob[:, 3], 0.0)
            if np.any((x_in <= 0) | (y_in <= 0)):
                raise InstanceError("obstacle lies entirely outside the workspace")


def _body_poses(inst: ProblemInstance, Q: np.ndarray, body: Body):
    """Centers (n, 2) and headings (n,) of one footprint body over states Q."""
    model = inst.model
    pos = Q[:, list(model.translation_indices)]
    if body.angle_index is None:
        th = np.zeros(len(Q))
    else:
        th = Q[:, body.angle_index]
    if body.offset != 0.0:
        pos = pos - body.offset * np.stack([np.cos(th), np.sin(th)], axis=-1)
    return pos, th


def collides_batch(inst: ProblemInstance, Q) -> np.ndarray:
    """Vectorized collision test for a batch of states; returns (n,) bools.

    A state collides when any footprint body overlaps any obstacle
    (closed-set separating-axis test) or is not fully contained in the
    workspace.
    """
    Q = np.asarray(Q, dtype=float).reshape(-1, inst.model.d_q)
    n = len(Q)
    hit = np.zeros(n, dtype=bool)
    ob = inst.obstacles
    for body in inst.footprint:
        c, th = _body_poses(inst, Q, body)
        a, b = body.length / 2, body.width / 2
        ct, st = np.cos(th), np.sin(th)
        # projection radii of the oriented box on the workspace axes
        rx = a * np.abs(ct) + b * np.abs(st)
        ry = a * np.abs(st) + b * np.abs(ct)
        outside = (c[:, 0] - rx < 0) | (c[:, 0] + rx > inst.width) \
            | (c[:, 1] - ry < 0) | (c[:, 1] + ry > inst.height)
        hit |= outside
        if len(ob) == 0:
            continue
        d = c[:, None, :] - ob[None, :, :2]          # (n, m, 2)
        hx, hy = ob[:, 2], ob[:, 3]
        # axis x / axis y (obstacle axes)
        sep = (np.abs(d[:, :, 0]) > rx[:, None] + hx) | (np.abs(d[:, :, 1]) > ry[:, None] + hy)
        # body axes u1 = (ct, st), u2 = (-st, ct)
        proj1 = np.abs(d[:, :, 0] * ct[:, None] + d[:, :, 1] * st[:, None])
        r1 = a + hx * np.abs(ct)[:, None] + hy * np.abs(st)[:, None]
        sep |= proj1 > r1
        proj2 = np.abs(-d[:, :, 0] * st[:, None] + d[:, :, 1] * ct[:, None])
        r2 = b + hx * np.abs(st)[:, None] + hy * np.abs(ct)[:, None]
        sep |= proj2 > r2
        hit |= np.any(~sep, axis=1)
    return hit


def collides(inst: ProblemInstance, q) -> bool:
    """True iff the footprint at state q hits an obstacle or exits the workspace."""
    return bool(collides_batch(inst, np.asarray(q, dtype=float)[None, :])[0])


def motion_collides(inst: ProblemInstance, Q) -> bool:
    """True iff any state of the sequence Q collides (per-sample check)."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or len(Q) == 0:
        raise ValueError("motion_collides expects a non-empty state sequence")
    return bool(np.any(collides_batch(inst, Q)))


def points_in_obstacles(inst: ProblemInstance, pts: np.ndarray) -> np.ndarray:
    """Boolean mask of which 2-D points lie inside at least one obstacle."""
    ob = inst.obstacles
    if len(ob) == 0:
        return np.zeros(len(pts), dtype=bool)
    d = np.abs(pts[:, None, :] - ob[None, :, :2])
    return np.any((d[:, :, 0] <= ob[:, 2]) & (d[:, :, 1] <= ob[:, 3]), axis=1)


def estimate_density(inst: ProblemInstance, n_samples: int, rng) -> float:
    """Monte-Carlo fraction of the workspace covered by obstacles."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pts = rng.uniform([0, 0], [inst.width, inst.height], size=(n_samples, 2))
    return float(np.mean(points_in_obstacles(inst, pts)))


def sample_free_state(inst: ProblemInstance, rng, attempts: int = 1000) -> np.ndarray:
    """Rejection-sample a collision-free state.

    Position uniform over the workspace, angles uniform in (-pi, pi],
    all other components (velocities) zero.
    """
    model = inst.model
    for _ in range(attempts):
        q = np.zeros(model.d_q)
        tx, ty = model.translation_indices
        q[tx] = rng.uniform(0, inst.width)
        q[ty] = rng.uniform(0, inst.height)
        for i in model.angle_indices:
            q[i] = wrap_angle(rng.uniform(-np.pi, np.pi))
        if not collides(inst, q):
            return q
    raise GenerationError(f"no collision-free state found in {attempts} attempts")


@dataclass
class InstanceGenConfig:
    """Knobs for random problem-instance generation."""

    model_id: str = "unicycle1"
    extent_range: tuple[float, float] = (4.0, 12.0)
    target_density: float = 0.2
    obstacle_half_extent_range: tuple[float, float] = (0.2, 1.0)
    density_mc_samples: int = 10_000
    state_attempts: int = 1000
    min_start_goal_dist: float = 0.0
    max_obstacles: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.target_density < 1.0:
            raise ValueError("target_density must lie in [0, 1)")


def sample_instance(gen_cfg: InstanceGenConfig, rng) -> ProblemInstance:
    """Generate a random problem instance.

    Obstacles are placed i.i.d. (overlap allowed) until the Monte-Carlo
    coverage estimate reaches the target density; start and goal are then
    rejection-sampled collision-free.  Deterministic for a fixed rng state.
    """
    lo, hi = gen_cfg.extent_range
    width = float(rng.uniform(lo, hi))
    height = float(rng.uniform(lo, hi))
    mc = rng.uniform([0, 0], [width, height], size=(gen_cfg.density_mc_samples, 2))
    covered = np.zeros(len(mc), dtype=bool)
    rects: list[tuple[float, float, float, float]] = []
    olo, ohi = gen_cfg.obstacle_half_extent_range
    while np.mean(covered) < gen_cfg.target_density:
        if len(rects) >= gen_cfg.max_obstacles:
            raise GenerationError("obstacle cap reached before target density")
        cx = float(rng.uniform(0, width))
        cy = float(rng.uniform(0, height))
        hx = float(rng.uniform(olo, ohi))
        hy = float(rng.uniform(olo, ohi))
        rects.append((cx, cy, hx, hy))
        covered |= (np.abs(mc[:, 0] - cx) <= hx) & (np.abs(mc[:, 1] - cy) <= hy)
    density = float(np.mean(covered))

    inst = ProblemInstance(
        model_id=gen_cfg.model_id,
        width=width,
        height=height,
        obstacles=np.array(rects, dtype=float).reshape(-1, 4),
        start=np.zeros(get_model(gen_cfg.model_id).d_q),
        goal=np.zeros(get_model(gen_cfg.model_id).d_q),
        density=density,
    )
    start = sample_free_state(inst, rng, gen_cfg.state_attempts)
    tix = list(inst.model.translation_indices)
    for _ in range(gen_cfg.state_attempts):
        goal = sample_free_state(inst, rng, gen_cfg.state_attempts)
        if np.linalg.norm(goal[tix] - start[tix]) >= gen_cfg.min_start_goal_dist:
            break
    else:
        raise GenerationError("no goal satisfying the start-goal separation")
    inst.start = start
    inst.goal = goal
    return inst


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def instance_to_dict(inst: ProblemInstance) -> dict:
    return {
        "model": inst.model_id,
        "width": inst.width,
        "height": inst.height,
        "obstacles": [
            {"cx": float(o[0]), "cy": float(o[1]), "hx": float(o[2]), "hy": float(o[3])}
            for o in inst.obstacles
        ],
        "start": [float(x) for x in inst.start],
        "goal": [float(x) for x in inst.goal],
        "density": inst.density,
    }


def instance_from_dict(d: dict, name: str = "") -> ProblemInstance:
    try:
        inst = ProblemInstance(
            model_id=d["model"],
            width=float(d["width"]),
            height=float(d["height"]),
            obstacles=np.array(
                [[o["cx"], o["cy"], o["hx"], o["hy"]] for o in d["obstacles"]],
                dtype=float,
            ).reshape(-1, 4),
            start=np.array(d["start"], dtype=float),
            goal=np.array(d["goal"], dtype=float),
            density=float(d.get("density", 0.0)),
            name=name,
        )
    except (KeyError, TypeError) as e:
        raise InstanceError(f"malformed instance: {e}") from e
    if len(inst.start) != inst.model.d_q or len(inst.goal) != inst.model.d_q:
        raise InstanceError("start/goal dimension does not match the model")
    if collides(inst, inst.start):
        raise InstanceError("start state is in collision")
    if collides(inst, inst.goal):
        raise InstanceError("goal state is in collision")
    return inst


def save_instance(inst: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1))


def load_instance(path) -> ProblemInstance:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InstanceError(f"{path}: not valid JSON: {e}") from e
    return instance_from_dict(d, name=path.stem)
