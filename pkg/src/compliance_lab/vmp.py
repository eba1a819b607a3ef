"""Via-points movement primitive: elementary trajectory plus RBF shape.

The primitive is evaluated over a canonical phase x in [0, 1].  In discrete
mode the elementary trajectory is a quintic between start and goal with
zero boundary velocity/acceleration and the shape term is tapered to vanish
at both ends, so the boundary values hold for any weight matrix.  In
periodic mode the elementary trajectory is the constant anchor-point
position and the shape uses wrapped (von-Mises style) basis functions, so
the pattern is smooth across the phase wrap.  Translating the anchor shifts
every position rigidly and leaves velocities untouched.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import RankDeficiencyError


@dataclass(frozen=True)
class CanonicalPhase:
    x: float
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not 0.0 <= self.x <= 1.0:
            raise ValueError("phase must lie in [0, 1]")


@dataclass(frozen=True)
class ViaPointMP:
    start: np.ndarray  # g0, per dimension
    goal: np.ndarray  # g1
    centers: np.ndarray  # RBF centers over phase
    widths: np.ndarray  # RBF widths (discrete) / concentrations are derived (periodic)
    weights: np.ndarray  # n_rbf x d shape weights
    duration: float
    mode: str  # discrete | periodic
    anchor: np.ndarray  # rigid offset, per dimension

    def __post_init__(self):
        for name in ("start", "goal", "centers", "widths", "weights", "anchor"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.mode not in ("discrete", "periodic"):
            raise ValueError(f"unknown VMP mode {self.mode!r}")
        if self.centers.size < 2:
            raise ValueError("need at least 2 basis functions")
        if np.any(self.widths <= 0):
            raise ValueError("basis widths must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def dims(self):
        return self.weights.shape[1]


def canonical_advance(phase, dt, mode):
    """Advance the canonical clock; discrete clamps at 1, periodic wraps."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    x = phase.x + dt / phase.duration
    if mode == "discrete":
        x = min(x, 1.0)
    else:
        x = x % 1.0
    return CanonicalPhase(x, phase.duration)


def _elementary(vmp, x):
    """Elementary trajectory value and d/dx at scalar phase x."""
    if vmp.mode == "periodic":
        return vmp.start.copy(), np.zeros_like(vmp.start)
    s = 10.0 * x**3 - 15.0 * x**4 + 6.0 * x**5
    ds = 30.0 * x**2 - 60.0 * x**3 + 30.0 * x**4
    delta = vmp.goal - vmp.start
    return vmp.start + s * delta, ds * delta


def _basis(vmp, x):
    """Basis values and d/dx at scalar phase x (taper folded in for discrete)."""
    if vmp.mode == "periodic":
        kappa = (vmp.centers.size / (2.0 * math.pi)) ** 2
        ang = 2.0 * math.pi * (x - vmp.centers)
        psi = np.exp(kappa * (np.cos(ang) - 1.0))
        dpsi = psi * (-kappa * 2.0 * math.pi * np.sin(ang))
        return psi, dpsi
    z = (x - vmp.centers) / vmp.widths
    g = np.exp(-0.5 * z * z)
    dg = g * (-(x - vmp.centers) / vmp.widths**2)
    taper = x * (1.0 - x)
    dtaper = 1.0 - 2.0 * x
    return taper * g, dtaper * g + taper * dg


def vmp_evaluate(vmp, phase):
    """Position and velocity of the primitive at a canonical phase."""
    x = phase.x if isinstance(phase, CanonicalPhase) else float(phase)
    h, dh = _elementary(vmp, x)
    psi, dpsi = _basis(vmp, x)
    pos = h + psi @ vmp.weights + vmp.anchor
    vel = (dh + dpsi @ vmp.weights) / vmp.duration
    return pos, vel


def set_anchor(vmp, anchor):
    """Rigidly translate the primitive; velocities are unchanged."""
    anchor = np.asarray(anchor, dtype=float)
    if not np.all(np.isfinite(anchor)):
        raise ValueError("anchor must be finite")
    return replace(vmp, anchor=anchor)


def learn_vmp(demo, duration, n_rbf=30, ridge_lambda=1e-9, mode="discrete"):
    """Fit a primitive to a uniformly sampled demo trajectory.

    The elementary trajectory is pinned by the demo endpoints (periodic:
    the demo mean); the shape weights solve a ridge-regularized least
    squares on the basis design matrix.  Returns (vmp, reconstruction_rmse).
    """
    demo = np.asarray(demo, dtype=float)
    if demo.ndim == 1:
        demo = demo[:, None]
    n = demo.shape[0]
    if n < max(n_rbf, 2):
        raise ValueError("demo must have at least as many samples as basis functions")
    if ridge_lambda < 0:
        raise ValueError("ridge regularization must be non-negative")

    if mode == "periodic":
        g0 = demo.mean(axis=0)
        g1 = g0.copy()
        centers = np.arange(n_rbf) / n_rbf
    else:
        g0 = demo[0].copy()
        g1 = demo[-1].copy()
        centers = np.linspace(0.0, 1.0, n_rbf)
    widths = np.full(n_rbf, 1.0 / n_rbf)
    proto = ViaPointMP(g0, g1, centers, widths, np.zeros((n_rbf, demo.shape[1])), duration, mode, np.zeros(demo.shape[1]))

    xs = np.linspace(0.0, 1.0, n)
    design = np.empty((n, n_rbf))
    resid = np.empty_like(demo)
    for j, x in enumerate(xs):
        h, _ = _elementary(proto, x)
        psi, _ = _basis(proto, x)
        design[j] = psi
        resid[j] = demo[j] - h
    gram = design.T @ design + ridge_lambda * np.eye(n_rbf)
    try:
        weights = np.linalg.solve(gram, design.T @ resid)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("regularized normal equations are singular") from exc
    if not np.all(np.isfinite(weights)):
        raise RankDeficiencyError("regularized normal equations are numerically singular")
    rmse = float(np.sqrt(np.mean((design @ weights - resid) ** 2)))
    return replace(proto, weights=weights), rmse
