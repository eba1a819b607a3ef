"""Experiment orchestration: scenario runs, data collection, metrics, logs.

One scenario run steps the plant and controller at the control rate and the
detector at an integer decimation of it.  Mode decisions made at a detector
tick take effect at the next control tick.  All outputs are deterministic
for a given config and seed; CSV floats are written with 17 significant
digits so files are byte-stable.
"""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .backend import BACKEND_NAME, kernels
from .control import ControlMode, Controller, Measurement, PostureSpec, ScheduleBank
from .detector import (
    DetectorState,
    WindowBuffers,
    calibrate_threshold,
    decide_mode,
    push_sample,
    update_abnormal_score,
    windowed_sums,
    windows_from_samples,
)
from .dynamics import (
    Environment,
    RobotState,
    TaskSpaceModel,
    environment_wrench,
    solve_ik,
    step,
)
from .errors import ConfigError, SimulationFault
from .mdn_gru import forward, mixture_moments, train, window_nll
from .model_io import load_model
from .vmp import learn_vmp

CTRL_NUMERIC = (
    ["tick", "t"]
    + [f"q{i}" for i in range(3)]
    + [f"qd{i}" for i in range(3)]
    + ["x", "y", "theta", "vx", "vy", "omega"]
    + ["fe_x", "fe_y", "fe_tau", "f_d", "alpha_hat", "mu_hat"]
    + ["vvmp_x", "vvmp_y", "vvmp_rot"]
    + ["vf_x", "vf_y", "vf_rot"]
    + ["vr_x", "vr_y", "vr_rot"]
    + ["vt_x", "vt_y", "vt_rot"]
    + ["vd_x", "vd_y", "vd_rot"]
    + ["fm_x", "fm_y", "fm_rot"]
    + [f"tau{i}" for i in range(3)]
    + ["gain_scale"]
)

SAMPLE_COLUMNS = ["tick", "t", "v_tan", "v_norm", "omega", "f_tan", "f_norm"]


@dataclass
class RunMetrics:
    """Scenario quality numbers mirrored between online and log recompute."""

    rmse_normal_force: float
    detection_latencies: list
    min_stiffness_fraction: float
    recovery_times: list
    false_alarms: int
    normal_periods_post_event: float

    def to_dict(self):
        return asdict(self)


@dataclass
class RunResult:
    config: object
    control: np.ndarray  # (n, len(CTRL_NUMERIC)) numeric block
    control_modes: list
    detector: np.ndarray  # numeric block, per detector tick
    detector_modes: list
    n_models: int
    samples: np.ndarray  # (n_det, len(SAMPLE_COLUMNS))
    metrics: RunMetrics
    audit: dict = field(default_factory=dict)


def detector_numeric_columns(n_models):
    return (
        ["tick", "t", "score"]
        + [f"score_model_{i}" for i in range(n_models)]
        + ["abnormal_score", "threshold"]
    )


DET_PRED_COLUMNS = ["pred_mean_t", "pred_mean_n", "pred_sigma_t", "pred_sigma_n"]


def build_vmp(cfg):
    """Learn the wiping primitive from the configured demo source."""
    v = cfg.vmp
    if v.pattern == "demo_csv":
        demo = np.loadtxt(v.demo_csv, delimiter=",", skiprows=1)
        if demo.ndim != 2 or demo.shape[1] < 3:
            raise ConfigError("demo CSV must have columns t, dim1, dim2")
        prim, rmse = learn_vmp(demo[:, 1:3], v.period, v.n_rbf, v.ridge_lambda, mode="periodic")
    else:
        from .dynamics import surface_query

        probe = surface_query(cfg.surface, v.stroke_center)
        s = np.linspace(0.0, 1.0, 240, endpoint=False)
        along = v.half_length * np.cos(2.0 * math.pi * s)
        out = v.normal_amplitude * np.sin(2.0 * math.pi * s)
        demo = v.stroke_center + np.outer(along, probe.tangent) + np.outer(out, probe.normal)
        prim, rmse = learn_vmp(demo, v.period, v.n_rbf, v.ridge_lambda, mode="periodic")
    if np.any(v.anchor_offset != 0.0):
        from .vmp import set_anchor

        prim = set_anchor(prim, v.anchor_offset)
    return prim, rmse


def resolve_threshold(cfg):
    if cfg.detector.threshold is not None:
        return cfg.detector.threshold
    if cfg.detector.threshold_file is not None:
        with open(cfg.detector.threshold_file, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if "threshold" not in doc:
            raise ConfigError(f"{cfg.detector.threshold_file}: no 'threshold' key")
        return float(doc["threshold"])
    return None


def _schedule_maxima(cfg):
    g = cfg.gains
    maxima = {
        "imp.mx": g.impedance.inertia[0],
        "imp.my": g.impedance.inertia[1],
        "imp.mrot": g.impedance.inertia[2],
        "imp.dx": g.impedance.damping[0],
        "imp.dy": g.impedance.damping[1],
        "imp.drot": g.impedance.damping[2],
        "imp.kx": g.impedance.stiffness[0],
        "imp.ky": g.impedance.stiffness[1],
        "imp.krot": g.impedance.stiffness[2],
        "pid_force.kp": g.force_pid.kp,
        "pid_force.ki": g.force_pid.ki,
        "pid_force.kd": g.force_pid.kd,
        "pid_dir.kp": g.direction_pid.kp,
        "pid_dir.ki": g.direction_pid.ki,
        "pid_dir.kd": g.direction_pid.kd,
        "pid_torque.kp": g.torque_pid.kp,
        "pid_torque.ki": g.torque_pid.ki,
        "pid_torque.kd": g.torque_pid.kd,
    }
    return {k: float(v) for k, v in maxima.items()}


def setup_controller(cfg, prim, q0):
    g = cfg.gains
    bank = ScheduleBank(_schedule_maxima(cfg), g.adaptive_drop_s, g.recovery_ramp_s)
    posture = PostureSpec(
        q_rest=g.posture_q_rest if g.posture_q_rest is not None else q0,
        stiffness=g.posture_stiffness,
        damping=g.posture_damping,
    )
    controller = Controller(
        vmp=prim,
        targets=cfg.targets,
        force_gains=g.force_pid,
        direction_gains=g.direction_pid,
        torque_gains=g.torque_pid,
        impedance_gains=g.impedance,
        posture=posture,
        bank=bank,
        mask=g.mask,
        leak=g.leak,
        impedance_integral_limit=g.impedance_integral_limit,
        contact_threshold=cfg.detector.contact_threshold,
        slide_deadband=cfg.detector.slide_deadband,
        friction_window=cfg.detector.friction_window,
        friction_min_normal=cfg.detector.friction_min_normal,
        direction_lowpass=cfg.detector.direction_lowpass,
    )
    return controller, bank


def run_scenario(cfg, out_dir=None, models=None):
    """Run one scenario; optionally write the log set to out_dir.

    models overrides the configured ensemble paths (a list of ModelParams);
    with an empty ensemble the detector only collects samples and the mode
    stays normal.
    """
    arm = cfg.arm
    env = Environment(cfg.surface, cfg.contact, tuple(cfg.perturbations))
    prim, vmp_rmse = build_vmp(cfg)
    q0 = solve_ik(arm, cfg.start_pose, cfg.ik_seed)
    state = RobotState(q0, np.zeros(3))

    if models is None:
        models = [load_model(p) for p in cfg.model_paths]
    threshold = resolve_threshold(cfg)
    if models and threshold is None:
        raise ConfigError(
            "scenario has predictive models but no threshold; set detector.threshold "
            "or run the calibrate subcommand"
        )

    controller, bank = setup_controller(cfg, prim, q0)
    pinned = cfg.pinned_mode == "normal"
    mode = ControlMode.NORMAL
    dt = cfg.dt
    decim = cfg.detector.decimation
    dt_det = cfg.dt_det

    buffers = WindowBuffers(cfg.detector.window_len)
    det_state = DetectorState(
        threshold=threshold if threshold is not None else -math.inf,
        window=cfg.detector.score_window,
        dt_det=dt_det,
        hysteresis=abs(threshold) * cfg.detector.hysteresis_fraction if threshold is not None else 0.0,
    )

    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_ticks
    n_models = len(models)
    ctrl = np.empty((n, len(CTRL_NUMERIC)))
    ctrl_modes = []
    det_rows = []
    det_modes = []
    samp_rows = []
    min_contact = math.inf
    fault_tick = None

    for i in range(n):
        t = i * dt
        dyn = kernels.dyn_terms(state.q, state.qdot, arm.packed)
        M, cv, gv, J, x, xd, jdqd = dyn
        f_true, min_fn = environment_wrench(state, env, arm, t, dyn=dyn)
        if min_fn < min_contact:
            min_contact = min_fn
        noise = rng.standard_normal(6)
        f_meas = f_true + np.array(
            [cfg.noise.force_std * noise[0], cfg.noise.force_std * noise[1], cfg.noise.torque_std * noise[2]]
        )
        xd_meas = xd + np.array(
            [cfg.noise.velocity_std * noise[3], cfg.noise.velocity_std * noise[4], cfg.noise.ang_velocity_std * noise[5]]
        )
        lam, jbar, mu, p, lam_pos, jbar_pos, cond = kernels.operational_space(M, cv, gv, J, jdqd)
        singular = not math.isfinite(cond) or cond > arm.jacobian_cond_limit
        tsm = TaskSpaceModel(lam, jbar, mu, p, J, lam_pos, jbar_pos, cond, singular)
        meas = Measurement(q=state.q, qdot=state.qdot, x=x, xd=xd_meas, f_e=f_meas)
        tau, tel = controller.tick(meas, tsm, mode, t, dt)

        ctrl[i, 0] = i
        ctrl[i, 1] = t
        ctrl[i, 2:5] = state.q
        ctrl[i, 5:8] = state.qdot
        ctrl[i, 8:11] = x
        ctrl[i, 11:14] = xd_meas
        ctrl[i, 14:17] = f_meas
        ctrl[i, 17] = tel.f_d
        ctrl[i, 18] = tel.alpha_hat
        ctrl[i, 19] = tel.mu_hat
        ctrl[i, 20:23] = tel.v_vmp
        ctrl[i, 23:26] = tel.v_f
        ctrl[i, 26:29] = tel.v_r
        ctrl[i, 29:32] = tel.v_t
        ctrl[i, 32:35] = tel.v_d
        ctrl[i, 35:38] = tel.f_m
        ctrl[i, 38:41] = tau
        ctrl[i, 41] = tel.gain_scale
        ctrl_modes.append(mode.value)

        try:
            state = step(state, tau, env, arm, t, dt, dyn=dyn, f_ext=f_true)
        except SimulationFault as exc:
            fault_tick = i
            ctrl = ctrl[: i + 1]
            exc.tick = i
            break

        if (i + 1) % decim == 0:
            n_hat, t_hat = controller.local_frame()
            v_local = np.array(
                [xd_meas[0] * t_hat[0] + xd_meas[1] * t_hat[1], xd_meas[0] * n_hat[0] + xd_meas[1] * n_hat[1], xd_meas[2]]
            )
            f_local = np.array(
                [f_meas[0] * t_hat[0] + f_meas[1] * t_hat[1], f_meas[0] * n_hat[0] + f_meas[1] * n_hat[1]]
            )
            push_sample(buffers, v_local, f_local)
            samp_rows.append([i, t, *v_local, *f_local])

            score = math.nan
            per = [math.nan] * n_models
            pred = [math.nan] * 4
            if n_models and buffers.ready and t >= cfg.detector.arming_time:
                vw = buffers.velocity_window()
                fw = buffers.force_window()
                mixes = [forward(m, vw) for m in models]
                per = [-window_nll(mx, fw) for mx in mixes]
                arr = np.array(per)
                amax = float(arr.max())
                score = amax + math.log(float(np.exp(arr - amax).sum())) - math.log(n_models)
                det_state = update_abnormal_score(det_state, score)
                if not pinned and det_state.ring_full:
                    new_mode, det_state = decide_mode(det_state, bank.fully_recovered(mode, t), t)
                    if new_mode is not mode:
                        bank.switch(mode, new_mode, t)
                        mode = new_mode
                means = np.stack([mixture_moments(mx)[0][-1] for mx in mixes])
                seconds = np.stack(
                    [
                        np.sum(mx.weights[-1][:, None] * (mx.scales[-1] ** 2 + mx.means[-1] ** 2), axis=0)
                        for mx in mixes
                    ]
                )
                pool_mean = means.mean(axis=0)
                pool_var = np.maximum(seconds.mean(axis=0) - pool_mean**2, 0.0)
                pool_sig = np.sqrt(pool_var)
                pred = [pool_mean[0], pool_mean[1], pool_sig[0], pool_sig[1]]
            det_rows.append(
                [i, t, score, *per, det_state.abnormal_score, det_state.threshold, *pred]
            )
            det_modes.append(mode.value)

    detector_block = np.array(det_rows) if det_rows else np.empty((0, 9 + n_models))
    samples_block = np.array(samp_rows) if samp_rows else np.empty((0, len(SAMPLE_COLUMNS)))
    metrics = evaluate_arrays(
        ctrl, ctrl_modes, detector_block, det_modes, n_models, cfg
    )
    audit = {
        "backend": BACKEND_NAME,
        "min_contact_normal_N": None if not math.isfinite(min_contact) else float(min_contact),
        "fault_tick": fault_tick,
        "vmp_fit_rmse": vmp_rmse,
        "threshold": threshold,
        "n_models": n_models,
    }
    result = RunResult(
        config=cfg,
        control=ctrl,
        control_modes=ctrl_modes,
        detector=detector_block,
        detector_modes=det_modes,
        n_models=n_models,
        samples=samples_block,
        metrics=metrics,
        audit=audit,
    )
    if out_dir is not None:
        write_run(result, out_dir)
    return result


# ---------------------------------------------------------------------------
# Metrics


def evaluate_arrays(ctrl, ctrl_modes, det, det_modes, n_models, cfg):
    """Compute RunMetrics from in-memory log blocks (same code the CLI uses)."""
    t = ctrl[:, 1]
    modes = np.array(ctrl_modes)
    normal = modes == ControlMode.NORMAL.value
    fn_meas = ctrl[:, 14] * np.cos(ctrl[:, 18]) + ctrl[:, 15] * np.sin(ctrl[:, 18])
    sel = normal & (t >= cfg.metrics.rmse_skip)
    if np.any(sel):
        err = ctrl[sel, 17] - fn_meas[sel]
        rmse = float(np.sqrt(np.mean(err * err)))
    else:
        rmse = math.nan

    events = cfg.perturbations
    latencies = []
    if det.shape[0] and n_models:
        det_t = det[:, 1]
        abnormal = det[:, 3 + n_models]
        theta = det[0, 4 + n_models]
        for ev in events:
            hit = np.flatnonzero((det_t >= ev.start) & (abnormal < theta))
            if hit.size:
                latencies.append(float(det_t[hit[0]] - ev.start))

    min_scale = float(np.min(ctrl[:, 41])) if ctrl.shape[0] else math.nan

    recovery = []
    for ev in events:
        idx = np.flatnonzero((t >= ev.end) & normal)
        recovery.append(float(t[idx[0]] - ev.end) if idx.size else None)

    false_alarms = 0
    prev = None
    for i, m in enumerate(ctrl_modes):
        if prev == ControlMode.NORMAL.value and m == ControlMode.ADAPTIVE.value:
            ti = t[i]
            covered = any(ev.start <= ti <= ev.end + cfg.metrics.event_grace for ev in events)
            if not covered:
                false_alarms += 1
        prev = m

    if events:
        last_end = max(ev.end for ev in events)
        post = normal & (t > last_end)
        periods = float(np.sum(post) * cfg.dt / cfg.vmp.period)
    else:
        periods = 0.0

    return RunMetrics(
        rmse_normal_force=rmse,
        detection_latencies=latencies,
        min_stiffness_fraction=min_scale,
        recovery_times=recovery,
        false_alarms=false_alarms,
        normal_periods_post_event=periods,
    )


def collect_training_data(cfg, out_dir):
    """Run one clean pinned-normal execution and emit the training dataset.

    Refuses configs with perturbation events or an active adaptation
    supervisor: training data must come from undisturbed high-stiffness
    runs.
    """
    if cfg.perturbations:
        raise ConfigError("training data must be collected without perturbation events")
    if cfg.pinned_mode != "normal":
        raise ConfigError("training data collection requires pinned_mode = 'normal'")
    result = run_scenario(cfg, out_dir=None, models=[])
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "dataset.csv")
    # the startup/approach samples stay in the dataset on purpose: they teach the
    # model the low-force regimes the arm passes through when it goes compliant
    _write_csv(data_path, SAMPLE_COLUMNS, result.samples, None)
    meta = {
        "window_len": cfg.detector.window_len,
        "stride": 1,
        "detector_period_s": cfg.dt_det,
        "arming_time_s": cfg.detector.arming_time,
        "channels": {"velocity": ["v_tan", "v_norm", "omega"], "force": ["f_tan", "f_norm"]},
    }
    with open(os.path.join(out_dir, "dataset.meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return data_path, result


def load_dataset(path):
    """Read a dataset/samples CSV back into (v_samples, f_samples)."""
    header, numeric, _ = _read_csv(path, mode_column=False)
    if header != SAMPLE_COLUMNS:
        raise ConfigError(f"{path}: unexpected dataset columns {header}")
    return numeric[:, 2:5], numeric[:, 5:7]


def train_from_dataset(dataset_path, cfg):
    v_samples, f_samples = load_dataset(dataset_path)
    v, f = windows_from_samples(v_samples, f_samples, cfg.detector.window_len)
    return train(v, f, cfg.training)


def calibrate_from_dataset(dataset_path, models, cfg):
    """Score the clean dataset and derive the abnormal-score threshold."""
    v_samples, f_samples = load_dataset(dataset_path)
    v, f = windows_from_samples(v_samples, f_samples, cfg.detector.window_len)
    scores = np.empty(v.shape[0])
    for i in range(v.shape[0]):
        per = [-window_nll(forward(m, v[i]), f[i]) for m in models]
        arr = np.array(per)
        amax = float(arr.max())
        scores[i] = amax + math.log(float(np.exp(arr - amax).sum())) - math.log(len(models))
    sums = windowed_sums(scores, cfg.detector.score_window, cfg.dt_det)
    return calibrate_threshold(sums, cfg.detector.calibration_k), scores


# ---------------------------------------------------------------------------
# CSV / JSON output


def _fmt(v):
    return f"{v:.17g}"


def _write_csv(path, numeric_header, numeric_block, modes, extra_header=(), extra_block=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = list(numeric_header)
        if modes is not None:
            header.append("mode")
        header += list(extra_header)
        writer.writerow(header)
        for i in range(numeric_block.shape[0]):
            row = [_fmt(v) for v in numeric_block[i]]
            if modes is not None:
                row.append(modes[i])
            if extra_block is not None:
                row += [_fmt(v) for v in extra_block[i]]
            writer.writerow(row)


def _read_csv(path, mode_column=True):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if mode_column:
        mode_idx = header.index("mode")
        numeric_idx = [i for i in range(len(header)) if i != mode_idx]
        numeric = np.array([[float(r[i]) for i in numeric_idx] for r in rows]) if rows else np.empty((0, len(header) - 1))
        modes = [r[mode_idx] for r in rows]
        return [header[i] for i in numeric_idx], numeric, modes
    numeric = np.array([[float(v) for v in r] for r in rows]) if rows else np.empty((0, len(header)))
    return header, numeric, None


def write_run(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(
        os.path.join(out_dir, "control.csv"), CTRL_NUMERIC, result.control, result.control_modes
    )
    det_cols = detector_numeric_columns(result.n_models)
    n_det = result.detector.shape[0]
    base = result.detector[:, : len(det_cols)] if n_det else result.detector
    pred = result.detector[:, len(det_cols) :] if n_det else None
    _write_csv(
        os.path.join(out_dir, "detector.csv"),
        det_cols,
        base,
        result.detector_modes,
        extra_header=DET_PRED_COLUMNS,
        extra_block=pred,
    )
    _write_csv(os.path.join(out_dir, "samples.csv"), SAMPLE_COLUMNS, result.samples, None)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump({"metrics": result.metrics.to_dict(), "audit": result.audit}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.resolved.json"), "w", encoding="utf-8") as fh:
        json.dump(result.config.raw, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_run(out_dir, cfg):
    """Load a written run back into (ctrl, ctrl_modes, det, det_modes, n_models)."""
    ctrl_header, ctrl, ctrl_modes = _read_csv(os.path.join(out_dir, "control.csv"))
    if ctrl_header != CTRL_NUMERIC:
        raise ConfigError(f"{out_dir}/control.csv: unexpected columns")
    det_header, det, det_modes = _read_csv(os.path.join(out_dir, "detector.csv"))
    n_models = sum(1 for c in det_header if c.startswith("score_model_"))
    return ctrl, ctrl_modes, det, det_modes, n_models


def evaluate_run(out_dir, cfg):
    """Recompute RunMetrics from a written log set."""
    ctrl, ctrl_modes, det, det_modes, n_models = read_run(out_dir, cfg)
    return evaluate_arrays(ctrl, ctrl_modes, det, det_modes, n_models, cfg)


def write_plot_data(out_dir, plot_dir, cfg):
    """Tidy per-panel CSVs for force/score/stiffness figures, from the logs."""
    ctrl, ctrl_modes, det, det_modes, n_models = read_run(out_dir, cfg)
    os.makedirs(plot_dir, exist_ok=True)
    fn_meas = ctrl[:, 14] * np.cos(ctrl[:, 18]) + ctrl[:, 15] * np.sin(ctrl[:, 18])

    det_cols = detector_numeric_columns(n_models)
    k = len(det_cols)
    if det.shape[0]:
        pm_t, pm_n = det[:, k], det[:, k + 1]
        ps_t, ps_n = det[:, k + 2], det[:, k + 3]
        force_rows = np.column_stack(
            [det[:, 1], pm_n, pm_n - 3.0 * ps_n, pm_n + 3.0 * ps_n, pm_t, pm_t - 3.0 * ps_t, pm_t + 3.0 * ps_t]
        )
    else:
        force_rows = np.empty((0, 7))
    _write_csv(
        os.path.join(plot_dir, "force_panel.csv"),
        ["t", "f_d", "f_normal_measured"],
        np.column_stack([ctrl[:, 1], ctrl[:, 17], fn_meas]),
        None,
    )
    _write_csv(
        os.path.join(plot_dir, "prediction_panel.csv"),
        ["t", "pred_mean_n", "pred_lo_n", "pred_hi_n", "pred_mean_t", "pred_lo_t", "pred_hi_t"],
        force_rows,
        None,
    )
    score_block = det[:, : k] if det.shape[0] else np.empty((0, k))
    _write_csv(os.path.join(plot_dir, "scores_panel.csv"), det_cols, score_block, det_modes)
    _write_csv(
        os.path.join(plot_dir, "stiffness_panel.csv"),
        ["t", "gain_scale"],
        np.column_stack([ctrl[:, 1], ctrl[:, 41]]),
        ctrl_modes,
    )
    return plot_dir
