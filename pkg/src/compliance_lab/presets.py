"""Built-in scenario configurations.

Every preset returns a complete JSON-able config document; the CLI resolves
--config arguments against REGISTRY when they are not file paths.  The
geometry is shared: arm base at the origin, a table-height surface around
y = -0.6 m, a periodic stroke of the end-effector across it.
"""

import math

SURFACE_Y = -0.60
STROKE_CENTER_X = 0.35
STROKE_HALF_LEN = 0.12
PERIOD_S = 2.0

# start of the stroke (phase 0 of the periodic pattern): center + half_len
START_POSE = [STROKE_CENTER_X + STROKE_HALF_LEN, SURFACE_Y, -0.5 * math.pi]
IK_SEED = [0.0, -1.4, -0.2]


def _arm():
    lengths = [0.4, 0.4, 0.2]
    masses = [2.0, 1.5, 0.5]
    return {
        "link_lengths_m": lengths,
        "link_masses_kg": masses,
        "link_inertias_kg_m2": [m * L * L / 3.0 for m, L in zip(masses, lengths)],
        "joint_damping_N_m_s_per_rad": [0.4, 0.3, 0.2],
        "gravity_m_per_s2": [0.0, -9.81],
        "qdot_limit_rad_per_s": 120.0,
        "jacobian_cond_limit": 1e6,
    }


def _gains():
    return {
        "force_pid": {"kp": 0.004, "ki": 0.05, "kd": 0.0, "derivative_lowpass": 0.1, "clamp": 0.3},
        "direction_pid": {"kp": 0.3, "ki": 0.1, "kd": 0.0, "derivative_lowpass": 0.1, "clamp": 0.5},
        "torque_pid": {"kp": 0.0, "ki": 0.0, "kd": 0.0, "derivative_lowpass": 0.1, "clamp": 1.0},
        "impedance": {
            "stiffness_N_per_m": [2000.0, 2000.0],
            "rot_stiffness_N_m_per_rad": 20.0,
            "damping_N_s_per_m": [200.0, 200.0],
            "rot_damping_N_m_s_per_rad": 1.0,
            "virtual_mass_kg": [0.0, 0.0],
            "rot_virtual_inertia_kg_m2": 0.0,
            "integral_leak_per_s": 0.2,
            "integral_limit_m": 0.05,
        },
        "posture": {"stiffness_N_m_per_rad": 3.0, "damping_N_m_s_per_rad": 1.0, "q_rest_rad": None},
        "schedule": {"adaptive_drop_s": 0.25, "recovery_ramp_s": 2.5},
        "enabled_sources": {"vmp": True, "force": True, "direction": True, "torque": False},
    }


def _base(name, duration, seed=0, perturbations=(), pinned_mode=None, threshold=None):
    return {
        "schema_version": 1,
        "name": name,
        "seed": seed,
        "duration_s": duration,
        "dt_s": 0.001,
        "arm": _arm(),
        "surface": {"kind": "flat", "height_m": SURFACE_Y},
        "contact": {
            "normal_stiffness_N_per_m": 2e4,
            "normal_damping_N_s_per_m": 100.0,
            "friction_coeff": 0.4,
            "tangential_reg_velocity_m_per_s": 0.02,
        },
        "start": {"ee_pose_m_m_rad": list(START_POSE), "ik_seed_rad": list(IK_SEED)},
        "vmp": {
            "pattern": "line_stroke",
            "period_s": PERIOD_S,
            "half_length_m": STROKE_HALF_LEN,
            "normal_amplitude_m": 0.0,
            "n_rbf": 25,
            "ridge_lambda": 1e-9,
            "stroke_center_m": [STROKE_CENTER_X, SURFACE_Y],
            "anchor_offset_m": [0.0, 0.0],
        },
        "targets": {
            "force_base_N": 10.0,
            "force_amplitude_N": 5.0,
            "force_period_s": PERIOD_S,
            "force_direction_rad": None,
            "torque_N_m": 0.0,
        },
        "gains": _gains(),
        "detector": {
            "window_len": 20,
            "score_window": 30,
            "decimation": 33,
            "threshold": threshold,
            "threshold_file": None,
            "calibration_k": 6.0,
            "hysteresis_fraction": 0.1,
            "contact_threshold_N": 1.0,
            "slide_deadband_m_per_s": 0.02,
            "friction_window": 256,
            "friction_min_normal_N": 2.0,
            "arming_time_s": 4.0,
            "direction_lowpass": 0.005,
        },
        "ensemble": {"model_paths": []},
        "perturbations": list(perturbations),
        "noise": {
            "force_std_N": 0.05,
            "torque_std_N_m": 0.005,
            "velocity_std_m_per_s": 1e-4,
            "ang_velocity_std_rad_per_s": 1e-4,
        },
        "metrics": {"rmse_skip_s": PERIOD_S, "event_grace_s": 0.5},
        "pinned_mode": pinned_mode,
        "training": {
            "hidden": 32,
            "mixtures": 3,
            "learning_rate": 1e-3,
            "batch_size": 32,
            "epochs": 120,
            "seed": 0,
            "grad_clip": 5.0,
            "sigma_floor_N": 0.25,
        },
    }


def _collision(start, duration, x_center, lead, span=0.2):
    """Capsule obstacle shoved into the stroke path (slight tool overlap)."""
    x = x_center + lead
    return {
        "kind": "collision",
        "start_s": start,
        "duration_s": duration,
        "segment_m": [[x, SURFACE_Y], [x, SURFACE_Y + span]],
        "radius_m": 0.03,
        "contact": {
            "normal_stiffness_N_per_m": 3000.0,
            "normal_damping_N_s_per_m": 150.0,
            "friction_coeff": 0.2,
        },
    }


def _stroke_x(phase):
    return STROKE_CENTER_X + STROKE_HALF_LEN * math.cos(2.0 * math.pi * phase)


def wiping_flat():
    """Clean high-stiffness wiping; the training-data scenario."""
    return _base("wiping_flat", duration=32.0, pinned_mode="normal")


def wiping_flat_adaptive():
    """Clean wiping with the adaptive supervisor active (needs models)."""
    return _base("wiping_flat_adaptive", duration=30.0, threshold=-60.0)


def wiping_flat_collision():
    """A blocking obstacle is shoved into the stroke path at t = 6.25 s."""
    # event starts at stroke phase 0.125 (end-effector moving -x at full speed);
    # the capsule overlaps the tool slightly, so contact is immediate
    ev = _collision(6.25, 0.5, _stroke_x(0.125), -0.018)
    return _base("wiping_flat_collision", duration=9.0, perturbations=[ev], threshold=-60.0)


def wiping_fig4():
    """Long run with one blocking collision; exercises the stuck-recovery loop.

    The threshold sits below the scores of the fully compliant (near-zero
    force) regime, so a limp arm is not itself flagged; only the violent
    re-stiffening transients re-trigger the adaptive mode.
    """
    ev = _collision(6.25, 0.8, _stroke_x(0.125), -0.018)
    return _base("wiping_fig4", duration=26.0, perturbations=[ev], threshold=-650.0)


def wiping_slope():
    doc = _base("wiping_slope", duration=20.0, pinned_mode="normal")
    angle = math.radians(15.0)
    cx = 0.35
    cy = SURFACE_Y + cx * math.tan(angle)
    doc["surface"] = {"kind": "slope", "angle_rad": angle, "offset_m": SURFACE_Y}
    doc["vmp"]["stroke_center_m"] = [cx, cy]
    doc["start"]["ee_pose_m_m_rad"] = [
        cx + STROKE_HALF_LEN * math.cos(angle),
        cy + STROKE_HALF_LEN * math.sin(angle),
        -0.5 * math.pi + angle,
    ]
    return doc


def wiping_step():
    doc = _base("wiping_step", duration=20.0, pinned_mode="normal")
    doc["surface"] = {
        "kind": "step",
        "low_height_m": SURFACE_Y,
        "high_height_m": SURFACE_Y + 0.01,
        "step_at_x_m": STROKE_CENTER_X,
    }
    return doc


def wiping_arc():
    doc = _base("wiping_arc", duration=20.0, pinned_mode="normal")
    radius = 0.45
    doc["surface"] = {
        "kind": "arc",
        "center_m": [STROKE_CENTER_X, SURFACE_Y + radius],
        "radius_m": radius,
        "concave": False,
    }
    return doc


def smoke():
    """Short clean run for fast end-to-end checks."""
    doc = _base("smoke", duration=2.5, pinned_mode="normal")
    doc["metrics"]["rmse_skip_s"] = 0.5
    return doc


REGISTRY = {
    "wiping_flat": wiping_flat,
    "wiping_flat_adaptive": wiping_flat_adaptive,
    "wiping_flat_collision": wiping_flat_collision,
    "wiping_fig4": wiping_fig4,
    "wiping_slope": wiping_slope,
    "wiping_step": wiping_step,
    "wiping_arc": wiping_arc,
    "smoke": smoke,
}
