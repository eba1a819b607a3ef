"""Sliding-window anomaly detector and control-mode supervisor.

Velocities and forces (local tangent/normal frame) queue up in lockstep
ring buffers of the model window length.  Each detector tick scores the
force window under the model ensemble; the abnormal score is the windowed
time-integral of recent scores.  Crossing below the threshold switches the
controller to adaptive mode; recovery needs the abnormal score back above
the threshold plus a hysteresis margin, and normal operation resumes once
every scheduled gain is back at its maximum.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .control import ControlMode
from .errors import EmptyEnsembleError, InsufficientDataError, NotReadyError
from .mdn_gru import ensemble_log_density, per_model_log_densities, train


class WindowBuffers:
    """Paired velocity/force FIFO rings of capacity L (the model window)."""

    def __init__(self, window_len, v_dim=3, f_dim=2):
        if window_len < 2:
            raise ValueError("window length must be at least 2")
        self.window_len = window_len
        self._v = np.zeros((window_len, v_dim))
        self._f = np.zeros((window_len, f_dim))
        self._count = 0
        self._head = 0

    @property
    def fill(self):
        return self._count

    @property
    def ready(self):
        return self._count >= self.window_len

    def velocity_window(self):
        if not self.ready:
            raise NotReadyError("velocity window not full")
        return np.roll(self._v, -self._head, axis=0)

    def force_window(self):
        if not self.ready:
            raise NotReadyError("force window not full")
        return np.roll(self._f, -self._head, axis=0)


def push_sample(buffers, v_local, f_local):
    """Advance both queues in lockstep; returns (buffers, ready flag)."""
    v_local = np.asarray(v_local, dtype=float)
    f_local = np.asarray(f_local, dtype=float)
    if not (np.all(np.isfinite(v_local)) and np.all(np.isfinite(f_local))):
        raise ValueError("detector samples must be finite")
    buffers._v[buffers._head] = v_local
    buffers._f[buffers._head] = f_local
    buffers._head = (buffers._head + 1) % buffers.window_len
    buffers._count = min(buffers._count + 1, buffers.window_len)
    return buffers, buffers.ready


def compute_score(models, buffers):
    """Ensemble log-density of the collected force window."""
    if len(models) == 0:
        raise EmptyEnsembleError("need at least one predictive model")
    return ensemble_log_density(models, buffers.velocity_window(), buffers.force_window())


@dataclass
class DetectorState:
    """Score history ring, threshold and the supervised control mode."""

    threshold: float
    window: int  # W, number of detector ticks summed into the abnormal score
    dt_det: float
    hysteresis: float = 0.0
    mode: ControlMode = ControlMode.NORMAL
    t0: float = 0.0
    scores: list = field(default_factory=list)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("score window must hold at least one entry")
        if self.hysteresis < 0:
            raise ValueError("hysteresis margin must be non-negative")

    @property
    def abnormal_score(self):
        return self.dt_det * float(np.sum(self.scores)) if self.scores else 0.0

    @property
    def ring_full(self):
        return len(self.scores) >= self.window


def update_abnormal_score(state, score):
    """Push one score into the W-ring; the abnormal score follows from it."""
    if not np.isfinite(score):
        raise ValueError("score must be finite")
    scores = state.scores + [float(score)]
    if len(scores) > state.window:
        scores = scores[-state.window :]
    return replace(state, scores=scores)


def decide_mode(state, gains_recovered, t):
    """Mode transition rules with hysteresis; returns (mode, new state)."""
    a = state.abnormal_score
    mode = state.mode
    if mode == ControlMode.NORMAL:
        if a < state.threshold:
            mode = ControlMode.ADAPTIVE
    elif mode == ControlMode.ADAPTIVE:
        if a >= state.threshold + state.hysteresis:
            mode = ControlMode.RECOVERY
    elif mode == ControlMode.RECOVERY:
        if gains_recovered:
            mode = ControlMode.NORMAL
        elif a < state.threshold:
            mode = ControlMode.ADAPTIVE
    if mode is not state.mode:
        state = replace(state, mode=mode, t0=t)
    return mode, state


def calibrate_threshold(window_sums, safety_factor=6.0):
    """Threshold from clean-run windowed score sums: mean - k * std."""
    sums = np.asarray(window_sums, dtype=float)
    if sums.size == 0:
        raise InsufficientDataError("empty training score log")
    return float(sums.mean() - safety_factor * sums.std())


def windowed_sums(scores, window, dt_det):
    """Rolling W-window sums of a score log, in abnormal-score units."""
    scores = np.asarray(scores, dtype=float)
    if scores.size < window:
        raise InsufficientDataError("score log shorter than the score window")
    kernel = np.ones(window)
    return dt_det * np.convolve(scores, kernel, mode="valid")


def windows_from_samples(v_samples, f_samples, window_len, stride=1):
    """Stride-1 (by default) sliding windows over detector-rate samples."""
    v_samples = np.asarray(v_samples, dtype=float)
    f_samples = np.asarray(f_samples, dtype=float)
    n = v_samples.shape[0]
    if n < window_len:
        raise InsufficientDataError(
            f"need at least {window_len} samples to form one window, got {n}"
        )
    idx = range(0, n - window_len + 1, stride)
    v = np.stack([v_samples[i : i + window_len] for i in idx])
    f = np.stack([f_samples[i : i + window_len] for i in idx])
    return v, f


def grow_ensemble(models, flagged_v, flagged_f, training_config, window_len):
    """Train one model on a flagged run's windows and append it."""
    v, f = windows_from_samples(flagged_v, flagged_f, window_len)
    new_model, _ = train(v, f, training_config)
    return list(models) + [new_model]


def per_model_scores(models, buffers):
    return per_model_log_densities(models, buffers.velocity_window(), buffers.force_window())
