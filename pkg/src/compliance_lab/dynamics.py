"""Planar 3-link arm plant with penalty contact and scripted disturbances.

The arm integrates in joint space with semi-implicit Euler; task-space
quantities are recovered through the operational-space construction.  The
environment only pushes (unilateral contact): the surface-normal component
of every contact force is clamped at zero.
"""

import math
from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import DegenerateNormalError, SimulationFault, SingularConfigError

_SURF_CODES = {"flat": 0, "slope": 1, "step": 2, "arc": 3}


@dataclass(frozen=True)
class ArmParams:
    """Physical parameters of the 3-link arm.

    Inertias are about the proximal joint with the COM at mid-link; the
    implied COM inertia (I - m*(l/2)^2) must be non-negative.
    """

    link_lengths: np.ndarray
    link_masses: np.ndarray
    link_inertias: np.ndarray
    joint_damping: np.ndarray
    gravity: np.ndarray
    qdot_limit: float = 50.0
    jacobian_cond_limit: float = 1e6

    def __post_init__(self):
        for name in ("link_lengths", "link_masses", "link_inertias", "joint_damping"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
            if getattr(self, name).shape != (3,):
                raise ValueError(f"{name} must have 3 entries")
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        if self.gravity.shape != (2,):
            raise ValueError("gravity must be planar (2 entries)")
        if not (np.all(self.link_lengths > 0) and np.all(self.link_masses > 0) and np.all(self.link_inertias > 0)):
            raise ValueError("lengths, masses and inertias must be strictly positive")
        if np.any(self.joint_damping < 0):
            raise ValueError("joint damping must be non-negative")
        com_inertia = self.link_inertias - self.link_masses * (0.5 * self.link_lengths) ** 2
        if np.any(com_inertia < -1e-12):
            raise ValueError("link inertia about the joint below the COM parallel-axis bound")
        packed = np.concatenate(
            [self.link_lengths, self.link_masses, self.link_inertias, self.joint_damping, self.gravity]
        )
        object.__setattr__(self, "_packed", packed)

    @property
    def packed(self):
        return self._packed


def default_arm(gravity=(0.0, -9.81)):
    """Human-arm-scale default: uniform rods 0.4/0.4/0.2 m."""
    lengths = np.array([0.4, 0.4, 0.2])
    masses = np.array([2.0, 1.5, 0.5])
    inertias = masses * lengths**2 / 3.0
    damping = np.array([0.4, 0.3, 0.1])
    return ArmParams(lengths, masses, inertias, damping, np.asarray(gravity, dtype=float))


@dataclass(frozen=True)
class RobotState:
    """Joint positions/velocities; the simulation's ground truth."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float))
        if self.q.shape != (3,) or self.qdot.shape != (3,):
            raise ValueError("q and qdot must have 3 entries")


@dataclass(frozen=True)
class SurfaceModel:
    """Parametric wiping surface: flat, slope, step or arc."""

    kind: str
    params: np.ndarray

    @classmethod
    def flat(cls, height):
        return cls("flat", np.array([height, 0.0, 0.0, 0.0]))

    @classmethod
    def slope(cls, angle, offset):
        return cls("slope", np.array([angle, offset, 0.0, 0.0]))

    @classmethod
    def step(cls, low, high, at_x):
        if high < low:
            raise ValueError("step high height must be >= low height")
        return cls("step", np.array([low, high, at_x, 0.0]))

    @classmethod
    def arc(cls, center, radius, concave=True):
        if radius <= 0:
            raise ValueError("arc radius must be positive")
        return cls("arc", np.array([center[0], center[1], radius, 1.0 if concave else 0.0]))

    @property
    def code(self):
        return _SURF_CODES[self.kind]


@dataclass(frozen=True)
class SurfaceProbe:
    distance: float
    normal: np.ndarray
    tangent: np.ndarray


@dataclass(frozen=True)
class ContactParams:
    """Penalty contact law: normal spring/damper and regularized Coulomb friction."""

    normal_stiffness: float
    normal_damping: float
    friction_coeff: float
    reg_velocity: float = 1e-3

    def __post_init__(self):
        if self.normal_stiffness <= 0 or self.reg_velocity <= 0:
            raise ValueError("normal stiffness and regularization velocity must be positive")
        if self.normal_damping < 0 or self.friction_coeff < 0:
            raise ValueError("damping and friction must be non-negative")


@dataclass(frozen=True)
class PerturbationEvent:
    """Scripted disturbance: an obstacle (collision) or an external wrench."""

    kind: str  # collision | interruption | drag
    start: float
    duration: float
    wrench: np.ndarray | None = None  # interruption/drag
    segment: np.ndarray | None = None  # collision: 2x2 endpoints
    radius: float = 0.0  # collision: capsule radius
    contact: ContactParams | None = None  # collision

    def __post_init__(self):
        if self.kind not in ("collision", "interruption", "drag"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.duration <= 0:
            raise ValueError("perturbation duration must be positive")
        if self.kind == "collision":
            if self.segment is None or self.contact is None or self.radius <= 0:
                raise ValueError("collision events need segment, radius and contact params")
            object.__setattr__(self, "segment", np.asarray(self.segment, dtype=float))
        else:
            if self.wrench is None:
                raise ValueError(f"{self.kind} events need a wrench")
            object.__setattr__(self, "wrench", np.asarray(self.wrench, dtype=float))

    @property
    def end(self):
        return self.start + self.duration


@dataclass(frozen=True)
class Obstacle:
    segment: np.ndarray
    radius: float
    contact: ContactParams


@dataclass(frozen=True)
class Environment:
    surface: SurfaceModel
    contact: ContactParams
    schedule: tuple = ()


@dataclass(frozen=True)
class TaskSpaceModel:
    """Operational-space dynamics at one state.

    lam/jbar/bias/grav/jac are the full (px, py, theta) task quantities;
    lam_pos/jbar_pos are the 2-D position block used for the null-space
    posture projector (the third joint is redundant for position).
    """

    lam: np.ndarray
    jbar: np.ndarray
    bias: np.ndarray
    grav: np.ndarray
    jac: np.ndarray
    lam_pos: np.ndarray
    jbar_pos: np.ndarray
    cond: float
    singular: bool


def surface_query(surface, point):
    """Signed distance, outward unit normal and unit tangent at a point.

    Negative distance means the point penetrates the material; the tangent
    is the normal rotated by -90 degrees.
    """
    px, py = float(point[0]), float(point[1])
    if not (math.isfinite(px) and math.isfinite(py)):
        raise ValueError("surface query point must be finite")
    dist, nx, ny = kernels.surface_query(surface.code, surface.params, px, py)
    if math.isnan(dist):
        raise DegenerateNormalError(f"normal undefined at ({px}, {py}) on {surface.kind}")
    return SurfaceProbe(dist, np.array([nx, ny]), np.array([ny, -nx]))


def segment_query(segment, radius, point):
    """Signed distance/normal of a capsule obstacle (segment + radius)."""
    p = np.asarray(point, dtype=float)
    a, b = segment[0], segment[1]
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    closest = a + t * ab
    delta = p - closest
    rho = float(np.hypot(delta[0], delta[1]))
    if rho == 0.0:
        raise DegenerateNormalError("point on obstacle axis: normal undefined")
    normal = delta / rho
    return SurfaceProbe(rho - radius, normal, np.array([normal[1], -normal[0]]))


def contact_force(distance, v_normal, v_tangent, params):
    """Contact wrench in the surface frame: (tangential, normal, torque).

    Normal component is the unilateral penalty max(0, -k_n*d - d_n*v_n);
    the tangential one is regularized Coulomb friction.  Point contact
    carries no torque.
    """
    ft, fn = kernels.contact_force_local(
        float(distance),
        float(v_normal),
        float(v_tangent),
        params.normal_stiffness,
        params.normal_damping,
        params.friction_coeff,
        params.reg_velocity,
    )
    return np.array([ft, fn, 0.0])


def contact_wrench_world(probe, velocity, params):
    """World-frame contact wrench at the end-effector for a surface probe."""
    vn = float(velocity[0] * probe.normal[0] + velocity[1] * probe.normal[1])
    vt = float(velocity[0] * probe.tangent[0] + velocity[1] * probe.tangent[1])
    local = contact_force(probe.distance, vn, vt, params)
    fx = local[0] * probe.tangent[0] + local[1] * probe.normal[0]
    fy = local[0] * probe.tangent[1] + local[1] * probe.normal[1]
    return np.array([fx, fy, 0.0]), local[1]


def ee_pose(state, arm):
    _, _, _, _, x, _, _ = kernels.dyn_terms(state.q, state.qdot, arm.packed)
    return x


def ee_twist(state, arm):
    _, _, _, _, _, xd, _ = kernels.dyn_terms(state.q, state.qdot, arm.packed)
    return xd


def task_space_matrices(state, arm, strict=False):
    """Operational-space model at a state; flags near-singular Jacobians.

    With strict=True a flagged configuration raises SingularConfigError
    instead of returning the (ill-conditioned) matrices.
    """
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))):
        raise ValueError("state must be finite")
    M, cvec, gvec, J, _, _, jdqd = kernels.dyn_terms(state.q, state.qdot, arm.packed)
    singular = False
    lam, jbar, mu, p, lam_pos, jbar_pos, cond = kernels.operational_space(M, cvec, gvec, J, jdqd)
    if not math.isfinite(cond) or cond > arm.jacobian_cond_limit:
        singular = True
        if strict:
            raise SingularConfigError(f"Jacobian condition estimate {cond:.3g} exceeds limit")
    return TaskSpaceModel(lam, jbar, mu, p, J, lam_pos, jbar_pos, cond, singular)


def active_disturbance(schedule, t):
    """Sum of active external wrenches plus the list of active obstacles."""
    wrench = np.zeros(3)
    obstacles = []
    for ev in schedule:
        if ev.start <= t < ev.end:
            if ev.kind == "collision":
                obstacles.append(Obstacle(ev.segment, ev.radius, ev.contact))
            else:
                wrench = wrench + ev.wrench
    return wrench, obstacles


def environment_wrench(state, env, arm, t, dyn=None):
    """Total external task wrench at the end-effector at time t.

    Returns (wrench, contact_normal_min): the summed surface/obstacle/
    scripted wrench and the smallest contact-normal force magnitude seen
    (always >= 0; useful for unilaterality audits).
    """
    if dyn is None:
        dyn = kernels.dyn_terms(state.q, state.qdot, arm.packed)
    _, _, _, _, x, xd, _ = dyn
    wrench, obstacles = active_disturbance(env.schedule, t)
    total = wrench.copy()
    min_fn = math.inf
    probe = surface_query(env.surface, x[:2])
    w, fn = contact_wrench_world(probe, xd[:2], env.contact)
    total += w
    min_fn = min(min_fn, fn)
    for ob in obstacles:
        pr = segment_query(ob.segment, ob.radius, x[:2])
        w, fn = contact_wrench_world(pr, xd[:2], ob.contact)
        total += w
        min_fn = min(min_fn, fn)
    return total, min_fn


def step(state, tau, env, arm, t, dt, dyn=None, f_ext=None):
    """Advance the plant one semi-implicit Euler step.

    dyn/f_ext allow reusing this tick's dynamics terms and environment
    wrench when the caller already computed them; otherwise they are
    evaluated here.  Raises SimulationFault when the post-step state breaks
    an invariant.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise SimulationFault("non-finite joint torque command")
    if dyn is None:
        dyn = kernels.dyn_terms(state.q, state.qdot, arm.packed)
    M, cvec, gvec, J, _, _, _ = dyn
    if f_ext is None:
        f_ext, _ = environment_wrench(state, env, arm, t, dyn=dyn)
    q2, qd2 = kernels.step_semi_implicit(
        state.q, state.qdot, M, cvec, gvec, J, tau, np.asarray(f_ext, dtype=float), arm.packed, dt
    )
    if not (np.all(np.isfinite(q2)) and np.all(np.isfinite(qd2))):
        raise SimulationFault("non-finite state after integration step")
    if np.any(np.abs(qd2) > arm.qdot_limit):
        raise SimulationFault(f"joint velocity exceeded safety bound {arm.qdot_limit} rad/s")
    return RobotState(q2, qd2)


def mechanical_energy(state, arm):
    """Kinetic plus gravitational potential energy of the arm."""
    M, _, _, _, _, _, _ = kernels.dyn_terms(state.q, state.qdot, arm.packed)
    ke = 0.5 * float(state.qdot @ M @ state.qdot)
    t1 = state.q[0]
    t2 = t1 + state.q[1]
    t3 = t2 + state.q[2]
    l = arm.link_lengths
    m = arm.link_masses
    g = arm.gravity
    c1 = np.array([0.5 * l[0] * math.cos(t1), 0.5 * l[0] * math.sin(t1)])
    p1 = np.array([l[0] * math.cos(t1), l[0] * math.sin(t1)])
    c2 = p1 + np.array([0.5 * l[1] * math.cos(t2), 0.5 * l[1] * math.sin(t2)])
    p2 = p1 + np.array([l[1] * math.cos(t2), l[1] * math.sin(t2)])
    c3 = p2 + np.array([0.5 * l[2] * math.cos(t3), 0.5 * l[2] * math.sin(t3)])
    pe = -(m[0] * g @ c1 + m[1] * g @ c2 + m[2] * g @ c3)
    return ke + float(pe)


def solve_ik(arm, target_pose, q_seed, iters=200, tol=1e-12):
    """Damped least-squares inverse kinematics for a full (x, y, theta) pose."""
    q = np.asarray(q_seed, dtype=float).copy()
    target = np.asarray(target_pose, dtype=float)
    lam2 = 1e-6
    for _ in range(iters):
        _, _, _, J, x, _, _ = kernels.dyn_terms(q, np.zeros(3), arm.packed)
        err = target - x
        err[2] = math.remainder(err[2], 2.0 * math.pi)
        if float(err @ err) < tol:
            break
        dq = np.linalg.solve(J.T @ J + lam2 * np.eye(3), J.T @ err)
        q = q + dq
    return q
