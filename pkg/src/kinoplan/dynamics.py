"""Robot dynamics models: discrete stepping, analytic Jacobians, and bounds.

All models use explicit Euler integration with zero-order hold,
``q' = q + f(q, u) * dt``, with angle components re-wrapped to (-pi, pi]
after every step.  Dynamics are translation invariant: the two workspace
position components never appear on the right-hand side of ``f``.

Available models (see :func:`get_model`):

- ``unicycle1``    q = (x, y, theta),           u = (v, omega)
- ``unicycle2``    q = (x, y, theta, v, omega), u = (a_v, a_omega)
- ``car_trailer``  q = (x, y, theta0, theta1),  u = (v, phi)
- ``integrator2d`` q = (x, y),                  u = (vx, vy)   (test helper)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * np.pi

BOUND_TOL = 1e-9


class DimensionError(ValueError):
    """State or action vector has the wrong length for the model."""


def wrap_angle(x):
    """Wrap angles (scalar or array) to the interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x), TWO_PI)


@dataclass(frozen=True)
class RobotModel:
    """Constants and kinematics of one robot type.

    Subclasses implement :meth:`f` and :meth:`f_jacobians`; everything else
    (stepping, rollout, validation) is shared.  Instances are immutable and
    safe to share between threads.
    """

    id: str
    d_q: int
    d_u: int
    dt: float
    q_lo: np.ndarray
    q_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    angle_indices: tuple[int, ...]
    translation_indices: tuple[int, ...] = (0, 1)
    # action components that are angles (used by the primitive encoding)
    action_angle_indices: tuple[int, ...] = ()
    # conservative straight-line speed bound used by the search heuristic
    v_max: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "q_lo", np.asarray(self.q_lo, dtype=float))
        object.__setattr__(self, "q_hi", np.asarray(self.q_hi, dtype=float))
        object.__setattr__(self, "u_lo", np.asarray(self.u_lo, dtype=float))
        object.__setattr__(self, "u_hi", np.asarray(self.u_hi, dtype=float))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.translation_indices) != 2:
            raise ValueError("planar models need exactly 2 translation indices")
        if np.any(self.u_lo >= self.u_hi):
            raise ValueError("action bounds must satisfy u_lo < u_hi")
        if np.any(self.q_lo > self.q_hi):
            raise ValueError("state bounds must satisfy q_lo <= q_hi")

    # -- per-model kinematics -------------------------------------------------

    def f(self, q: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Continuous dynamics ``dq/dt = f(q, u)``; broadcasts over leading axes."""
        raise NotImplementedError

    def f_jacobians(self, q: np.ndarray, u: np.ndarray):
        """Jacobians (df/dq, df/du), shapes (..., d_q, d_q) and (..., d_q, d_u)."""
        raise NotImplementedError

    # -- shared derived quantities --------------------------------------------

    @property
    def non_translation_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.d_q) if i not in self.translation_indices)

    def with_overrides(self, **kwargs) -> "RobotModel":
        """Copy of this model with selected constants replaced."""
        return replace(self, **kwargs)


def _check_dims(model: RobotModel, q, u=None):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.d_q:
        raise DimensionError(
            f"{model.id}: state has dim {q.shape[-1]}, expected {model.d_q}")
    if u is None:
        return q, None
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != model.d_u:
        raise DimensionError(
            f"{model.id}: action has dim {u.shape[-1]}, expected {model.d_u}")
    return q, u


def step(model: RobotModel, q, u) -> np.ndarray:
    """One Euler step ``q + f(q, u) * dt`` with angles re-wrapped.

    Bounds are deliberately not checked here; use :func:`validate`.
    Broadcasts over leading axes, so a whole trajectory of (q, u) pairs
    can be stepped in a single call.
    """
    q, u = _check_dims(model, q, u)
    out = q + model.f(q, u) * model.dt
    if model.angle_indices:
        idx = list(model.angle_indices)
        out[..., idx] = wrap_angle(out[..., idx])
    return out


def jacobians(model: RobotModel, q, u):
    """Analytic Jacobians of :func:`step` w.r.t. q and u.

    Returns (J_q, J_u) with J_q = I + dt * df/dq and J_u = dt * df/du,
    broadcast over leading axes of (q, u).
    """
    q, u = _check_dims(model, q, u)
    fq, fu = model.f_jacobians(q, u)
    eye = np.broadcast_to(np.eye(model.d_q), fq.shape)
    return eye + model.dt * fq, model.dt * fu


def rollout(model: RobotModel, q0, U) -> np.ndarray:
    """States visited when applying the action sequence U from q0.

    Returns an array of shape (len(U) + 1, d_q) starting with q0.
    """
    q0, _ = _check_dims(model, q0)
    U = np.asarray(U, dtype=float).reshape(-1, model.d_u)
    Q = np.empty((len(U) + 1, model.d_q))
    Q[0] = q0
    for t in range(len(U)):
        Q[t + 1] = step(model, Q[t], U[t])
    return Q


def validate(model: RobotModel, q, u=None) -> bool:
    """True iff q (and u, if given) lie within the model bounds.

    Closed bounds with tolerance 1e-9; angle components are wrapped
    before the check so any representation of the same angle validates
    identically.
    """
    q, u = _check_dims(model, q, u)
    q = q.copy()
    if model.angle_indices:
        idx = list(model.angle_indices)
        q[..., idx] = wrap_angle(q[..., idx])
    ok = np.all(q >= model.q_lo - BOUND_TOL) and np.all(q <= model.q_hi + BOUND_TOL)
    if u is not None:
        ok = ok and np.all(u >= model.u_lo - BOUND_TOL) and np.all(u <= model.u_hi + BOUND_TOL)
    return bool(ok)


# ---------------------------------------------------------------------------
# Concrete models
# ---------------------------------------------------------------------------

INF = np.inf


@dataclass(frozen=True)
class Unicycle1(RobotModel):
    """First-order unicycle: velocity-controlled planar robot."""

    id: str = "unicycle1"
    d_q: int = 3
    d_u: int = 2
    dt: float = 0.1
    q_lo: np.ndarray = field(default_factory=lambda: np.array([-INF, -INF, -np.pi]))
    q_hi: np.ndarray = field(default_factory=lambda: np.array([INF, INF, np.pi]))
    u_lo: np.ndarray = field(default_factory=lambda: np.array([-0.5, -0.5]))
    u_hi: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    angle_indices: tuple[int, ...] = (2,)
    v_max: float = 0.5

    def f(self, q, u):
        th = q[..., 2]
        v, w = u[..., 0], u[..., 1]
        return np.stack([v * np.cos(th), v * np.sin(th), w], axis=-1)

    def f_jacobians(self, q, u):
        th = q[..., 2]
        v = u[..., 0]
        sh = q.shape[:-1]
        fq = np.zeros(sh + (3, 3))
        fq[..., 0, 2] = -v * np.sin(th)
        fq[..., 1, 2] = v * np.cos(th)
        fu = np.zeros(sh + (3, 2))
        fu[..., 0, 0] = np.cos(th)
        fu[..., 1, 0] = np.sin(th)
        fu[..., 2, 1] = 1.0
        return fq, fu


@dataclass(frozen=True)
class Unicycle2(RobotModel):
    """Second-order unicycle: acceleration-controlled, bounded speeds."""

    id: str = "unicycle2"
    d_q: int = 5
    d_u: int = 2
    dt: float = 0.1
    q_lo: np.ndarray = field(default_factory=lambda: np.array([-INF, -INF, -np.pi, -0.5, -0.5]))
    q_hi: np.ndarray = field(default_factory=lambda: np.array([INF, INF, np.pi, 0.5, 0.5]))
    u_lo: np.ndarray = field(default_factory=lambda: np.array([-0.25, -0.25]))
    u_hi: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.25]))
    angle_indices: tuple[int, ...] = (2,)
    v_max: float = 0.5

    def f(self, q, u):
        th, v, w = q[..., 2], q[..., 3], q[..., 4]
        return np.stack(
            [v * np.cos(th), v * np.sin(th), w, u[..., 0], u[..., 1]], axis=-1)

    def f_jacobians(self, q, u):
        th, v = q[..., 2], q[..., 3]
        sh = q.shape[:-1]
        fq = np.zeros(sh + (5, 5))
        fq[..., 0, 2] = -v * np.sin(th)
        fq[..., 0, 3] = np.cos(th)
        fq[..., 1, 2] = v * np.cos(th)
        fq[..., 1, 3] = np.sin(th)
        fq[..., 2, 4] = 1.0
        fu = np.zeros(sh + (5, 2))
        fu[..., 3, 0] = 1.0
        fu[..., 4, 1] = 1.0
        return fq, fu


@dataclass(frozen=True)
class CarTrailer(RobotModel):
    """Kinematic car pulling one trailer.

    theta0 is the car heading, theta1 the trailer heading; the trailer is
    hitched at distance ``hitch`` behind the car reference point.
    """

    id: str = "car_trailer"
    d_q: int = 4
    d_u: int = 2
    dt: float = 0.1
    q_lo: np.ndarray = field(default_factory=lambda: np.array([-INF, -INF, -np.pi, -np.pi]))
    q_hi: np.ndarray = field(default_factory=lambda: np.array([INF, INF, np.pi, np.pi]))
    u_lo: np.ndarray = field(default_factory=lambda: np.array([-0.5, -np.pi / 3]))
    u_hi: np.ndarray = field(default_factory=lambda: np.array([0.5, np.pi / 3]))
    angle_indices: tuple[int, ...] = (2, 3)
    action_angle_indices: tuple[int, ...] = (1,)
    v_max: float = 0.5
    wheelbase: float = 0.25
    hitch: float = 0.5

    def f(self, q, u):
        th0, th1 = q[..., 2], q[..., 3]
        v, phi = u[..., 0], u[..., 1]
        return np.stack(
            [
                v * np.cos(th0),
                v * np.sin(th0),
                v / self.wheelbase * np.tan(phi),
                v / self.hitch * np.sin(th0 - th1),
            ],
            axis=-1,
        )

    def f_jacobians(self, q, u):
        th0, th1 = q[..., 2], q[..., 3]
        v, phi = u[..., 0], u[..., 1]
        sh = q.shape[:-1]
        fq = np.zeros(sh + (4, 4))
        fq[..., 0, 2] = -v * np.sin(th0)
        fq[..., 1, 2] = v * np.cos(th0)
        fq[..., 3, 2] = v / self.hitch * np.cos(th0 - th1)
        fq[..., 3, 3] = -v / self.hitch * np.cos(th0 - th1)
        fu = np.zeros(sh + (4, 2))
        fu[..., 0, 0] = np.cos(th0)
        fu[..., 1, 0] = np.sin(th0)
        fu[..., 2, 0] = np.tan(phi) / self.wheelbase
        fu[..., 2, 1] = v / (self.wheelbase * np.cos(phi) ** 2)
        fu[..., 3, 0] = np.sin(th0 - th1) / self.hitch
        return fq, fu


@dataclass(frozen=True)
class Integrator2D(RobotModel):
    """Single integrator on the plane; used by lattice oracle tests."""

    id: str = "integrator2d"
    d_q: int = 2
    d_u: int = 2
    dt: float = 0.1
    q_lo: np.ndarray = field(default_factory=lambda: np.array([-INF, -INF]))
    q_hi: np.ndarray = field(default_factory=lambda: np.array([INF, INF]))
    u_lo: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0]))
    u_hi: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    angle_indices: tuple[int, ...] = ()
    v_max: float = 1.0

    def f(self, q, u):
        return np.asarray(u, dtype=float) + 0.0 * q

    def f_jacobians(self, q, u):
        sh = q.shape[:-1]
        fq = np.zeros(sh + (2, 2))
        fu = np.broadcast_to(np.eye(2), sh + (2, 2)).copy()
        return fq, fu


_MODEL_CLASSES = {
    "unicycle1": Unicycle1,
    "unicycle2": Unicycle2,
    "car_trailer": CarTrailer,
    "integrator2d": Integrator2D,
}

MODEL_IDS = tuple(k for k in _MODEL_CLASSES if k != "integrator2d")


def get_model(model_id: str, **overrides) -> RobotModel:
    """Look up a robot model by id, optionally overriding constants.

    Overrides accept any RobotModel field, e.g. ``get_model("unicycle1",
    dt=0.05)``; unknown ids raise KeyError.
    """
    try:
        cls = _MODEL_CLASSES[model_id]
    except KeyError:
        raise KeyError(
            f"unknown robot model {model_id!r}; known: {sorted(_MODEL_CLASSES)}") from None
    return cls(**overrides) if overrides else cls()


def register_model(model_id: str, cls) -> None:
    """Register a custom RobotModel subclass under a new id."""
    if model_id in _MODEL_CLASSES:
        raise ValueError(f"model id {model_id!r} already registered")
    _MODEL_CLASSES[model_id] = cls
