"""Adaptive force-impedance controller.

Velocity sources (motion primitive, force PID, direction PID, torque PID)
sum into a desired task velocity; an impedance law turns the velocity error
into a task force; the torque command maps it to joints with gravity/
velocity compensation and a null-space posture torque.  Every adaptable
gain sits behind a linear schedule: rapid decay toward zero in adaptive
mode, strictly slower linear recovery back to the maximum.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InsufficientContactError
from .vmp import CanonicalPhase, canonical_advance, vmp_evaluate


class ControlMode(str, Enum):
    NORMAL = "normal"
    ADAPTIVE = "adaptive"
    RECOVERY = "recovery"


ALLOWED_TRANSITIONS = {
    (ControlMode.NORMAL, ControlMode.ADAPTIVE),
    (ControlMode.ADAPTIVE, ControlMode.RECOVERY),
    (ControlMode.RECOVERY, ControlMode.NORMAL),
    (ControlMode.RECOVERY, ControlMode.ADAPTIVE),
}


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return -math.remainder(-a, 2.0 * math.pi)


# ---------------------------------------------------------------------------
# PID velocity sources


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float = 0.0
    dlp: float = 0.1  # one-pole low-pass smoothing factor for the derivative
    clamp: float = 0.3
    integral_limit: float | None = None  # defaults to clamp/ki

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be non-negative")
        if not 0.0 < self.dlp <= 1.0:
            raise ValueError("derivative low-pass coefficient must be in (0, 1]")
        if self.clamp <= 0:
            raise ValueError("output clamp must be positive")

    def resolved_integral_limit(self):
        if self.integral_limit is not None:
            return self.integral_limit
        return self.clamp / self.ki if self.ki > 0 else math.inf


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0
    dfilt: float = 0.0


def pid_velocity(state, gains, error, dt, scale=1.0):
    """One discrete PID update; returns (output, new state).

    Trapezoidal integral with a hard magnitude cap, backward-difference
    derivative through the one-pole low-pass, output clamp with the
    integrator frozen while saturated.  scale multiplies kp/ki/kd uniformly
    (gain scheduling); the clamp and the integral cap are not scheduled.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = gains.resolved_integral_limit()
    integral_try = state.integral + 0.5 * dt * (error + state.prev_error)
    if integral_try > limit:
        integral_try = limit
    elif integral_try < -limit:
        integral_try = -limit
    draw = (error - state.prev_error) / dt
    dfilt = state.dfilt + gains.dlp * (draw - state.dfilt)
    out = scale * (gains.kp * error + gains.ki * integral_try + gains.kd * dfilt)
    if out > gains.clamp:
        out = gains.clamp
        integral = state.integral
    elif out < -gains.clamp:
        out = -gains.clamp
        integral = state.integral
    else:
        integral = integral_try
    return out, PidState(integral, error, dfilt)


# ---------------------------------------------------------------------------
# Impedance


@dataclass(frozen=True)
class ImpedanceGains:
    """Diagonal virtual inertia / damping / stiffness over (x, y, theta)."""

    inertia: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray

    def __post_init__(self):
        for name in ("inertia", "damping", "stiffness"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
            if getattr(self, name).shape != (3,):
                raise ValueError(f"{name} must have 3 diagonal entries")
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} entries must be non-negative")
        if np.any((self.stiffness > 0) & (self.damping <= 0)):
            raise ValueError("stiff channels must also be damped")


@dataclass(frozen=True)
class ImpedanceState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_dv: np.ndarray = field(default_factory=lambda: np.zeros(3))


def impedance_force(v_d, v_e, state, gains, dt, leak=0.0, integral_limit=math.inf):
    """Task force from the velocity error; returns (force, new state).

    force = M*(dv - dv_prev)/dt + D*dv + K*integral(dv), with the integral
    advanced by dv*dt under an exponential leak and a per-channel magnitude
    cap.  leak = 0 recovers the pure integral.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dv = np.asarray(v_d, dtype=float) - np.asarray(v_e, dtype=float)
    integral = state.integral * (1.0 - dt * leak) + dv * dt
    np.clip(integral, -integral_limit, integral_limit, out=integral)
    force = gains.inertia * (dv - state.prev_dv) / dt + gains.damping * dv + gains.stiffness * integral
    return force, ImpedanceState(integral, dv)


# ---------------------------------------------------------------------------
# Gain scheduling


@dataclass(frozen=True)
class GainSchedule:
    """Linear decay/recovery law for one adaptable parameter."""

    k_max: float
    alpha: float  # decay rate, units of the parameter per second
    beta: float  # recovery rate, strictly slower
    t0: float = 0.0
    value_at_t0: float | None = None

    def __post_init__(self):
        if self.k_max <= 0:
            raise ValueError("k_max must be positive (zero parameters are not scheduled)")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("decay and recovery rates must be positive")
        if self.beta >= self.alpha:
            raise ValueError("recovery must be strictly slower than decay (beta < alpha)")
        if self.value_at_t0 is None:
            object.__setattr__(self, "value_at_t0", self.k_max)
        if not 0.0 <= self.value_at_t0 <= self.k_max:
            raise ValueError("seed value must lie in [0, k_max]")


def schedule_gains(schedule, mode, t):
    """Scheduled parameter value at time t >= t0 for the given mode."""
    if t < schedule.t0:
        raise ValueError("t must not precede the last mode switch")
    if mode == ControlMode.ADAPTIVE:
        return max(schedule.value_at_t0 - schedule.alpha * (t - schedule.t0), 0.0)
    if mode == ControlMode.RECOVERY:
        return min(schedule.value_at_t0 + schedule.beta * (t - schedule.t0), schedule.k_max)
    return schedule.k_max


class ScheduleBank:
    """Named gain schedules that switch modes together.

    Parameters with zero maxima are tracked as constants so lookups stay
    uniform.  A mode switch re-seeds every schedule with its pre-switch
    value, keeping scheduled values continuous in time.
    """

    def __init__(self, maxima, drop_time, ramp_time):
        if drop_time <= 0 or ramp_time <= 0:
            raise ValueError("schedule times must be positive")
        if ramp_time <= drop_time:
            raise ValueError("recovery ramp must be strictly slower than the adaptive drop")
        self.drop_time = drop_time
        self.ramp_time = ramp_time
        self.schedules = {}
        self.zeros = set()
        for name, k_max in maxima.items():
            if k_max == 0.0:
                self.zeros.add(name)
            else:
                self.schedules[name] = GainSchedule(k_max, k_max / drop_time, k_max / ramp_time)

    def value(self, name, mode, t):
        if name in self.zeros:
            return 0.0
        return schedule_gains(self.schedules[name], mode, t)

    def scale(self, name, mode, t):
        if name in self.zeros:
            return 1.0
        sched = self.schedules[name]
        return schedule_gains(sched, mode, t) / sched.k_max

    def switch(self, old_mode, new_mode, t):
        if (old_mode, new_mode) not in ALLOWED_TRANSITIONS:
            raise ValueError(f"illegal mode transition {old_mode.value} -> {new_mode.value}")
        for name, sched in self.schedules.items():
            self.schedules[name] = replace(sched, t0=t, value_at_t0=schedule_gains(sched, old_mode, t))

    def fully_recovered(self, mode, t):
        return all(schedule_gains(s, mode, t) == s.k_max for s in self.schedules.values())


# ---------------------------------------------------------------------------
# Contact estimation


def estimate_friction(samples, min_normal=1.0):
    """Least-squares-through-origin friction coefficient from (F_n, F_t) pairs.

    Only samples with F_n above min_normal qualify; F_t is expected
    oriented so that it opposes sliding (i.e. already sign-corrected).
    """
    num = 0.0
    den = 0.0
    qualified = False
    for fn, ft in samples:
        if fn > min_normal:
            qualified = True
            num += ft * fn
            den += fn * fn
    if not qualified or den == 0.0:
        raise InsufficientContactError("no samples with sufficient normal force")
    return num / den


class FrictionEstimator:
    """Sliding-history friction regression; equals the batch solution exactly."""

    def __init__(self, window=256, min_normal=1.0):
        self.window = window
        self.min_normal = min_normal
        self._fn = np.zeros(window)
        self._ft = np.zeros(window)
        self._count = 0
        self._head = 0

    def add(self, fn, ft):
        self._fn[self._head] = fn
        self._ft[self._head] = ft
        self._head = (self._head + 1) % self.window
        self._count = min(self._count + 1, self.window)

    def estimate(self):
        n = self._count
        if n == 0:
            raise InsufficientContactError("no contact samples recorded")
        fn = self._fn[:n]
        ft = self._ft[:n]
        mask = fn > self.min_normal
        if not np.any(mask):
            raise InsufficientContactError("no samples with sufficient normal force")
        fq = fn[mask]
        return float(ft[mask] @ fq) / float(fq @ fq)


def estimate_force_direction(f_e, mu_hat, slide_sign, min_force=1.0):
    """World-frame angle of the contact normal from a measured planar force.

    Inverts F = F_n*(n - mu*s*t) where t is the normal rotated -90 deg and
    s the sliding direction sign (a smooth factor in [-1, 1] also works);
    with mu = 0 this is just the force angle.
    """
    fx, fy = float(f_e[0]), float(f_e[1])
    norm = math.hypot(fx, fy)
    if norm < min_force or norm == 0.0:
        raise InsufficientContactError("contact force too small to estimate direction")
    return wrap_angle(math.atan2(fy, fx) - math.atan(mu_hat * slide_sign))


# ---------------------------------------------------------------------------
# Composition and torque mapping


@dataclass(frozen=True)
class SourceMask:
    vmp: bool = True
    force: bool = True
    direction: bool = True
    torque: bool = False


def compose_velocity(v_vmp, v_f, v_r, v_t, normal_angle, mask):
    """Sum the enabled velocity sources into the desired task velocity.

    v_vmp fills the position channels as given; the scalar force source
    pushes along the negative estimated normal (pressing direction); the
    direction and torque sources share the rotational channel.  Returns
    (v_d, per-source task vectors) so telemetry can log each contribution.
    """
    nx, ny = math.cos(normal_angle), math.sin(normal_angle)
    vec_vmp = np.array([v_vmp[0], v_vmp[1], 0.0]) if mask.vmp else np.zeros(3)
    vec_f = np.array([-v_f * nx, -v_f * ny, 0.0]) if mask.force else np.zeros(3)
    vec_r = np.array([0.0, 0.0, v_r]) if mask.direction else np.zeros(3)
    vec_t = np.array([0.0, 0.0, v_t]) if mask.torque else np.zeros(3)
    return vec_vmp + vec_f + vec_r + vec_t, (vec_vmp, vec_f, vec_r, vec_t)


@dataclass(frozen=True)
class PostureSpec:
    q_rest: np.ndarray
    stiffness: float
    damping: float

    def __post_init__(self):
        object.__setattr__(self, "q_rest", np.asarray(self.q_rest, dtype=float))


def torque_command(f_m, tsm, state, posture):
    """Joint torque realizing a task force with posture control in the null space.

    tau = J^T (F_m + task Coriolis + task gravity) + P tau_posture, with P
    the dynamically consistent projector of the 2-D position task, so the
    posture torque produces no end-effector force.
    """
    tau_task = tsm.jac.T @ (np.asarray(f_m, dtype=float) + tsm.bias + tsm.grav)
    tau_post = -posture.stiffness * (state.q - posture.q_rest) - posture.damping * state.qdot
    proj = np.eye(3) - tsm.jac[:2].T @ tsm.jbar_pos.T
    return tau_task + proj @ tau_post


# ---------------------------------------------------------------------------
# Target profiles


@dataclass(frozen=True)
class TaskTargets:
    """Desired normal force profile, force direction and torque."""

    force_base: float
    force_amplitude: float = 0.0
    force_period: float | None = None
    force_direction: float = 0.5 * math.pi
    torque: float = 0.0

    def __post_init__(self):
        if self.force_amplitude != 0.0 and (self.force_period is None or self.force_period <= 0):
            raise ValueError("sine force profiles need a positive period")

    def desired_force(self, t):
        if self.force_amplitude == 0.0:
            return self.force_base
        return self.force_base - self.force_amplitude * math.sin(2.0 * math.pi * t / self.force_period)


# ---------------------------------------------------------------------------
# Per-tick orchestration


@dataclass(frozen=True)
class Measurement:
    """Sensor view of one control tick: joint encoders, task pose/twist, wrench."""

    q: np.ndarray
    qdot: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    f_e: np.ndarray


@dataclass
class TickTelemetry:
    f_d: float
    alpha_hat: float
    mu_hat: float
    v_vmp: np.ndarray
    v_f: np.ndarray
    v_r: np.ndarray
    v_t: np.ndarray
    v_d: np.ndarray
    f_m: np.ndarray
    tau: np.ndarray
    gain_scale: float
    mode: ControlMode


SCHED_KEYS = (
    "imp.kx",
    "imp.ky",
    "imp.krot",
    "imp.dx",
    "imp.dy",
    "imp.drot",
    "imp.mx",
    "imp.my",
    "imp.mrot",
    "pid_force.kp",
    "pid_force.ki",
    "pid_force.kd",
    "pid_dir.kp",
    "pid_dir.ki",
    "pid_dir.kd",
    "pid_torque.kp",
    "pid_torque.ki",
    "pid_torque.kd",
)


class Controller:
    """Stateful adaptive force-impedance controller for one scenario run."""

    def __init__(
        self,
        vmp,
        targets,
        force_gains,
        direction_gains,
        torque_gains,
        impedance_gains,
        posture,
        bank,
        mask=SourceMask(),
        leak=0.2,
        impedance_integral_limit=0.05,
        contact_threshold=1.0,
        slide_deadband=0.005,
        friction_window=256,
        friction_min_normal=2.0,
        direction_lowpass=1.0,
    ):
        self.vmp = vmp
        self.targets = targets
        self.force_gains = force_gains
        self.direction_gains = direction_gains
        self.torque_gains = torque_gains
        self.impedance_gains = impedance_gains
        self.posture = posture
        self.bank = bank
        self.mask = mask
        self.leak = leak
        self.impedance_integral_limit = impedance_integral_limit
        self.contact_threshold = contact_threshold
        self.slide_deadband = slide_deadband
        self.direction_lowpass = direction_lowpass

        self.phase = CanonicalPhase(0.0, vmp.duration)
        self.pid_force = PidState()
        self.pid_dir = PidState()
        self.pid_torque = PidState()
        self.imp_state = ImpedanceState()
        self.friction = FrictionEstimator(friction_window, friction_min_normal)
        self.mu_hat = 0.0
        self.alpha_hat = targets.force_direction

    def local_frame(self):
        """Unit normal/tangent of the current estimated contact frame."""
        n = np.array([math.cos(self.alpha_hat), math.sin(self.alpha_hat)])
        return n, np.array([n[1], -n[0]])

    def tick(self, meas, tsm, mode, t, dt):
        """One 1 kHz control tick; returns (joint torque, telemetry)."""
        n_hat, t_hat = self.local_frame()
        f_planar = meas.f_e[:2]
        in_contact = math.hypot(f_planar[0], f_planar[1]) >= self.contact_threshold

        # smooth sliding factor: matches the regularized friction shape, so the
        # estimated frame has no jump at stroke reversals
        v_tan = float(meas.xd[:2] @ t_hat)
        slide = v_tan / math.sqrt(v_tan * v_tan + self.slide_deadband**2)

        if in_contact:
            fn_meas = float(f_planar @ n_hat)
            ft_meas = float(f_planar @ t_hat)
            if abs(v_tan) > 3.0 * self.slide_deadband and fn_meas > self.friction.min_normal:
                self.friction.add(fn_meas, -ft_meas * (1.0 if v_tan > 0 else -1.0))
                try:
                    self.mu_hat = self.friction.estimate()
                except InsufficientContactError:
                    pass
            try:
                alpha_est = estimate_force_direction(
                    f_planar, self.mu_hat, slide, self.contact_threshold
                )
                # slow frame: tracks the surface orientation, not force transients
                self.alpha_hat = wrap_angle(
                    self.alpha_hat + self.direction_lowpass * wrap_angle(alpha_est - self.alpha_hat)
                )
                n_hat, t_hat = self.local_frame()
            except InsufficientContactError:
                pass

        f_d = self.targets.desired_force(t)
        fn_now = float(f_planar @ n_hat) if in_contact else 0.0
        e_force = f_d - fn_now
        e_dir = wrap_angle(self.targets.force_direction - self.alpha_hat)
        e_torque = self.targets.torque - float(meas.f_e[2])

        v_f, self.pid_force = pid_velocity(
            self.pid_force, self.force_gains, e_force, dt, self._pid_scale("pid_force", mode, t)
        )
        v_r, self.pid_dir = pid_velocity(
            self.pid_dir, self.direction_gains, e_dir, dt, self._pid_scale("pid_dir", mode, t)
        )
        v_t, self.pid_torque = pid_velocity(
            self.pid_torque, self.torque_gains, e_torque, dt, self._pid_scale("pid_torque", mode, t)
        )

        vmp_pos, vmp_vel = vmp_evaluate(self.vmp, self.phase)
        if in_contact:
            vmp_vel = float(vmp_vel @ t_hat) * t_hat
        v_d, (vec_vmp, vec_f, vec_r, vec_t) = compose_velocity(
            vmp_vel, v_f, v_r, v_t, self.alpha_hat, self.mask
        )

        scaled = ImpedanceGains(
            self.impedance_gains.inertia * self._imp_scales("m", mode, t),
            self.impedance_gains.damping * self._imp_scales("d", mode, t),
            self.impedance_gains.stiffness * self._imp_scales("k", mode, t),
        )
        f_m, self.imp_state = impedance_force(
            v_d, meas.xd, self.imp_state, scaled, dt, self.leak, self.impedance_integral_limit
        )
        tau = torque_command(f_m, tsm, meas, self.posture)

        telemetry = TickTelemetry(
            f_d=f_d,
            alpha_hat=self.alpha_hat,
            mu_hat=self.mu_hat,
            v_vmp=vec_vmp,
            v_f=vec_f,
            v_r=vec_r,
            v_t=vec_t,
            v_d=v_d,
            f_m=f_m,
            tau=tau,
            gain_scale=self.bank.scale("imp.kx", mode, t),
            mode=mode,
        )
        self.phase = canonical_advance(self.phase, dt, self.vmp.mode)
        return tau, telemetry

    def _pid_scale(self, prefix, mode, t):
        # kp/ki/kd share one drop/ramp clock, so one representative scale works
        return self.bank.scale(f"{prefix}.kp", mode, t)

    def _imp_scales(self, which, mode, t):
        return np.array(
            [
                self.bank.scale(f"imp.{which}x", mode, t),
                self.bank.scale(f"imp.{which}y", mode, t),
                self.bank.scale(f"imp.{which}rot", mode, t),
            ]
        )


def control_tick(controller, meas, tsm, mode, t, dt):
    """Functional wrapper over Controller.tick."""
    return controller.tick(meas, tsm, mode, t, dt)
