"""Motion primitives: short dynamically-consistent trajectories.

A primitive is a tuple (Q, U) obeying the discrete dynamics exactly
(defect <= 1e-9 per component), with every state and action within the
model bounds, canonicalized so the starting position is the origin.
Primitive sets group members by action-sequence length ("bucket").

The random baseline generator solves two-point boundary value problems
between random states in free space; when the optimizer fails it falls
back to a random action-spline rollout, which is valid by construction.

Set persistence is JSON: ``{"model": str, "primitives": [{"Q": [[..]],
"U": [[..]]}]}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import trajopt
from .dynamics import RobotModel, get_model, rollout, validate
from .trajopt import OptProblem, angle_diff

log = logging.getLogger(__name__)

DEFECT_TOL = 1e-9
DEFAULT_BUCKETS = (5, 10, 15, 20)


class PrimitiveError(ValueError):
    """Base class for invalid primitives / primitive sets."""


class MalformedSetError(PrimitiveError):
    """Primitive-set file is structurally invalid."""


class DynamicsDefectError(PrimitiveError):
    """A primitive does not replay under the model dynamics."""


class BoundViolationError(PrimitiveError):
    """A primitive state or action violates the model bounds."""


@dataclass(frozen=True)
class MotionPrimitive:
    """One primitive: states Q (T+1, d_q), actions U (T, d_u), cost T*dt."""

    model_id: str
    Q: np.ndarray
    U: np.ndarray
    cost: float

    @property
    def T(self) -> int:
        return len(self.U)

    @property
    def start(self) -> np.ndarray:
        return self.Q[0]

    @property
    def end(self) -> np.ndarray:
        return self.Q[-1]


def verify_primitive(model: RobotModel, Q, U, index: int | None = None) -> None:
    """Raise unless (Q, U) is a valid canonical primitive for the model."""
    tag = "" if index is None else f" (primitive {index})"
    Q = np.asarray(Q, dtype=float)
    U = np.asarray(U, dtype=float)
    if Q.ndim != 2 or U.ndim != 2 or len(Q) != len(U) + 1 or len(U) < 1 \
            or Q.shape[1] != model.d_q or U.shape[1] != model.d_u:
        raise MalformedSetError(f"bad Q/U shapes{tag}")
    replay = rollout(model, Q[0], U)
    defect = np.max(np.abs(angle_diff(model, Q, replay)))
    if defect > DEFECT_TOL:
        raise DynamicsDefectError(f"dynamics defect {defect:.2e} > {DEFECT_TOL:.0e}{tag}")
    for t in range(len(U)):
        if not validate(model, Q[t], U[t]):
            raise BoundViolationError(f"state/action bounds violated at step {t}{tag}")
    if not validate(model, Q[-1]):
        raise BoundViolationError(f"final state out of bounds{tag}")
    tx, ty = model.translation_indices
    if abs(Q[0, tx]) > 1e-12 or abs(Q[0, ty]) > 1e-12:
        raise PrimitiveError(f"primitive is not canonical (start not at origin){tag}")


def make_primitive(model: RobotModel, Q, U, verify: bool = True) -> MotionPrimitive:
    """Build a canonical MotionPrimitive, translating the start to the origin."""
    p = canonicalize_arrays(model, np.asarray(Q, dtype=float), np.asarray(U, dtype=float))
    if verify:
        verify_primitive(model, p[0], p[1])
    return MotionPrimitive(model.id, p[0], p[1], cost=len(p[1]) * model.dt)


def canonicalize_arrays(model: RobotModel, Q: np.ndarray, U: np.ndarray):
    tx, ty = model.translation_indices
    Q = Q.copy()
    Q[:, tx] -= Q[0, tx]
    Q[:, ty] -= Q[0, ty]
    return Q, U


def canonicalize(p: MotionPrimitive, model: RobotModel | None = None) -> MotionPrimitive:
    """Translate a primitive so its start position is the origin; idempotent."""
    model = model or get_model(p.model_id)
    Q, U = canonicalize_arrays(model, p.Q, p.U)
    return MotionPrimitive(p.model_id, Q, U, p.cost)


@dataclass
class PrimitiveSet:
    """Primitives grouped by action-sequence length.

    Immutable by convention after construction; ``extended`` returns a new
    set.  ``start_array(l)`` exposes the canonical non-translational start
    components per bucket for nearest-neighbor indexing by the search.
    """

    model_id: str
    by_bucket: dict[int, list[MotionPrimitive]] = dc_field(default_factory=dict)

    @classmethod
    def from_primitives(cls, model_id: str, prims) -> "PrimitiveSet":
        s = cls(model_id)
        for p in prims:
            s.by_bucket.setdefault(p.T, []).append(p)
        return s

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_bucket.values())

    def __iter__(self):
        for l in sorted(self.by_bucket):
            yield from self.by_bucket[l]

    def extended(self, prims) -> "PrimitiveSet":
        s = PrimitiveSet(self.model_id, {k: list(v) for k, v in self.by_bucket.items()})
        for p in prims:
            s.by_bucket.setdefault(p.T, []).append(p)
        return s

    def start_array(self, bucket: int, nt_indices) -> np.ndarray:
        prims = self.by_bucket.get(bucket, [])
        if not prims:
            return np.zeros((0, len(nt_indices)))
        return np.array([p.Q[0][list(nt_indices)] for p in prims])


def sample_boundary_state(model: RobotModel, rng, at_origin: bool = True) -> np.ndarray:
    """Random state for BVP endpoints: origin position, random angles/velocities."""
    q = np.zeros(model.d_q)
    for i in model.angle_indices:
        q[i] = rng.uniform(-np.pi, np.pi)
    for i in model.non_translation_indices:
        if i in model.angle_indices:
            continue
        lo, hi = model.q_lo[i], model.q_hi[i]
        if np.isfinite(lo) and np.isfinite(hi):
            q[i] = rng.uniform(lo, hi)
    if not at_origin:
        tx, ty = model.translation_indices
        q[tx] = rng.uniform(-1.0, 1.0)
        q[ty] = rng.uniform(-1.0, 1.0)
    return q


def _spline_rollout(model: RobotModel, q0: np.ndarray, T: int, rng):
    """Random 3-knot action spline, linearly interpolated and clamped."""
    knots = rng.uniform(model.u_lo, model.u_hi, size=(3, model.d_u))
    s = np.linspace(0.0, 1.0, T)
    ks = np.linspace(0.0, 1.0, 3)
    U = np.column_stack([np.interp(s, ks, knots[:, j]) for j in range(model.d_u)])
    U = np.clip(U, model.u_lo, model.u_hi)
    return rollout(model, q0, U), U


def generate_random_primitive(model: RobotModel, length: int, rng,
                              bvp_iters: int = 50) -> MotionPrimitive:
    """Random primitive of the given length via a free-space BVP.

    Start and goal are random states (start at the origin, goal within the
    reachable disc); on optimizer failure falls back to a bounded random
    spline rollout, so generation effectively never fails.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    q_s = sample_boundary_state(model, rng)
    q_g = sample_boundary_state(model, rng)
    # goal position uniform in the disc reachable within length steps
    reach = model.v_max * length * model.dt
    ang = rng.uniform(-np.pi, np.pi)
    rad = reach * np.sqrt(rng.uniform(0.0, 1.0))
    tx, ty = model.translation_indices
    q_g[tx] = q_s[tx] + rad * np.cos(ang)
    q_g[ty] = q_s[ty] + rad * np.sin(ang)

    prob = OptProblem(model=model, q_s=q_s, q_g=q_g, horizon=length,
                      inst=None, max_gn_iters=bvp_iters, penalty_rounds=3)
    try:
        res = trajopt.optimize(prob)
    except trajopt.NumericalError:
        res = None
    if res is not None and res.feasible:
        Q = rollout(model, q_s, res.U)
        if all(validate(model, q) for q in Q):
            return make_primitive(model, Q, res.U)

    for _ in range(50):
        Q, U = _spline_rollout(model, q_s, length, rng)
        if all(validate(model, q) for q in Q):
            return make_primitive(model, Q, U)
    # zero actions keep any valid state valid under all registered models
    U = np.zeros((length, model.d_u))
    return make_primitive(model, rollout(model, q_s, U), U)


def generate_random_set(model: RobotModel, counts: dict[int, int], rng) -> PrimitiveSet:
    """Random primitives per bucket: {length: count} -> PrimitiveSet."""
    prims = []
    for length in sorted(counts):
        for _ in range(counts[length]):
            prims.append(generate_random_primitive(model, length, rng))
    return PrimitiveSet.from_primitives(model.id, prims)


def split_trajectory(model: RobotModel, Q, U, length_buckets, rng):
    """Cut a trajectory into consecutive primitives of random bucket lengths.

    Returns a list of (primitive, start_index) pairs; a final chunk shorter
    than the smallest bucket is dropped.  Chunks are disjoint, ordered, and
    cover a prefix of U.
    """
    Q = np.asarray(Q, dtype=float)
    U = np.asarray(U, dtype=float)
    if len(Q) != len(U) + 1:
        raise ValueError("need len(Q) == len(U) + 1")
    buckets = sorted(set(int(b) for b in length_buckets))
    if not buckets or buckets[0] < 1:
        raise ValueError("length buckets must be positive")
    out = []
    pos = 0
    while len(U) - pos >= buckets[0]:
        fitting = [b for b in buckets if b <= len(U) - pos]
        length = int(fitting[rng.integers(len(fitting))])
        chunkQ = Q[pos: pos + length + 1]
        chunkU = U[pos: pos + length]
        try:
            out.append((make_primitive(model, chunkQ, chunkU), pos))
        except PrimitiveError as e:  # pragma: no cover - defensive
            log.debug("dropping invalid chunk at %d: %s", pos, e)
        pos += length
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def set_to_dict(pset: PrimitiveSet) -> dict:
    return {
        "model": pset.model_id,
        "primitives": [
            {"Q": p.Q.tolist(), "U": p.U.tolist()} for p in pset
        ],
    }


def save_set(pset: PrimitiveSet, path) -> None:
    Path(path).write_text(json.dumps(set_to_dict(pset)))


def load_set(path, model: RobotModel | None = None) -> PrimitiveSet:
    """Load and fully verify a primitive set; rejects corrupt members."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise MalformedSetError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(d, dict) or "model" not in d or "primitives" not in d:
        raise MalformedSetError(f"{path}: missing 'model' or 'primitives'")
    model = model or get_model(d["model"])
    prims = []
    for i, entry in enumerate(d["primitives"]):
        try:
            Q = np.asarray(entry["Q"], dtype=float)
            U = np.asarray(entry["U"], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedSetError(f"primitive {i}: {e}") from e
        verify_primitive(model, Q, U, index=i)
        prims.append(MotionPrimitive(d["model"], Q, U, cost=len(U) * model.dt))
    return PrimitiveSet.from_primitives(d["model"], prims)
