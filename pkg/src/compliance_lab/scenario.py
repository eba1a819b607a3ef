"""Scenario configuration: the single source of an experiment's truth.

Configs are JSON documents with units spelled out in the key names.
Unknown keys are hard errors so config drift cannot pass silently.  A
handful of named presets ship with the package; the CLI resolves a
--config argument first as a file path, then as a preset name.
"""

import copy
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .control import ImpedanceGains, PidGains, SourceMask, TaskTargets
from .dynamics import ArmParams, ContactParams, PerturbationEvent, SurfaceModel, surface_query
from .errors import ConfigError
from .mdn_gru import TrainingConfig

SCHEMA_VERSION = 1


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = [k for k, required in allowed.items() if required and k not in d]
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _vec(d, key, n, where):
    v = d[key]
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(f"{where}.{key}: expected {n} numbers")
    return np.array([float(x) for x in v])


@dataclass
class VmpConfig:
    pattern: str  # line_stroke | ellipse_stroke | demo_csv
    period: float
    half_length: float = 0.12
    normal_amplitude: float = 0.0
    n_rbf: int = 25
    ridge_lambda: float = 1e-9
    demo_csv: str | None = None
    stroke_center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    anchor_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass
class DetectorConfig:
    window_len: int = 20
    score_window: int = 30
    decimation: int = 33
    threshold: float | None = None
    threshold_file: str | None = None
    calibration_k: float = 6.0
    hysteresis_fraction: float = 0.1
    contact_threshold: float = 1.0
    slide_deadband: float = 0.005
    friction_window: int = 256
    friction_min_normal: float = 2.0
    arming_time: float = 0.0  # scoring starts here; the startup transient is not scored
    direction_lowpass: float = 1.0  # per-tick smoothing of the estimated normal angle


@dataclass
class NoiseConfig:
    force_std: float = 0.05
    torque_std: float = 0.005
    velocity_std: float = 1e-4
    ang_velocity_std: float = 1e-4


@dataclass
class GainConfig:
    force_pid: PidGains
    direction_pid: PidGains
    torque_pid: PidGains
    impedance: ImpedanceGains
    posture_stiffness: float
    posture_damping: float
    posture_q_rest: np.ndarray | None
    leak: float
    impedance_integral_limit: float
    adaptive_drop_s: float
    recovery_ramp_s: float
    mask: SourceMask


@dataclass
class MetricsConfig:
    rmse_skip: float = 2.0
    event_grace: float = 0.5


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    duration: float
    dt: float
    arm: ArmParams
    surface: SurfaceModel
    contact: ContactParams
    start_pose: np.ndarray
    ik_seed: np.ndarray
    vmp: VmpConfig
    targets: TaskTargets
    gains: GainConfig
    detector: DetectorConfig
    model_paths: list
    perturbations: list
    noise: NoiseConfig
    metrics: MetricsConfig
    pinned_mode: str | None
    training: TrainingConfig
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def n_ticks(self):
        return int(round(self.duration / self.dt))

    @property
    def dt_det(self):
        return self.detector.decimation * self.dt


_PID_KEYS = {
    "kp": True,
    "ki": True,
    "kd": True,
    "derivative_lowpass": False,
    "clamp": True,
    "integral_limit": False,
}


def _parse_pid(d, where):
    _check_keys(d, _PID_KEYS, where)
    return PidGains(
        kp=float(d["kp"]),
        ki=float(d["ki"]),
        kd=float(d["kd"]),
        dlp=float(d.get("derivative_lowpass", 0.1)),
        clamp=float(d["clamp"]),
        integral_limit=float(d["integral_limit"]) if d.get("integral_limit") is not None else None,
    )


def _parse_surface(d):
    _check_keys(
        d,
        {
            "kind": True,
            "height_m": False,
            "angle_rad": False,
            "offset_m": False,
            "low_height_m": False,
            "high_height_m": False,
            "step_at_x_m": False,
            "center_m": False,
            "radius_m": False,
            "concave": False,
        },
        "surface",
    )
    kind = d["kind"]
    try:
        if kind == "flat":
            return SurfaceModel.flat(float(d["height_m"]))
        if kind == "slope":
            return SurfaceModel.slope(float(d["angle_rad"]), float(d["offset_m"]))
        if kind == "step":
            return SurfaceModel.step(
                float(d["low_height_m"]), float(d["high_height_m"]), float(d["step_at_x_m"])
            )
        if kind == "arc":
            center = d["center_m"]
            return SurfaceModel.arc(
                (float(center[0]), float(center[1])), float(d["radius_m"]), bool(d["concave"])
            )
    except KeyError as exc:
        raise ConfigError(f"surface: missing key {exc.args[0]!r} for kind {kind!r}") from None
    raise ConfigError(f"surface: unknown kind {kind!r}")


def _parse_perturbation(d, i):
    where = f"perturbations[{i}]"
    _check_keys(
        d,
        {
            "kind": True,
            "start_s": True,
            "duration_s": True,
            "wrench_N_Nm": False,
            "segment_m": False,
            "radius_m": False,
            "contact": False,
        },
        where,
    )
    kind = d["kind"]
    if kind in ("interruption", "drag"):
        if "wrench_N_Nm" not in d:
            raise ConfigError(f"{where}: {kind} needs wrench_N_Nm")
        return PerturbationEvent(
            kind=kind,
            start=float(d["start_s"]),
            duration=float(d["duration_s"]),
            wrench=_vec(d, "wrench_N_Nm", 3, where),
        )
    if kind == "collision":
        for key in ("segment_m", "radius_m", "contact"):
            if key not in d:
                raise ConfigError(f"{where}: collision needs {key}")
        seg = np.array(d["segment_m"], dtype=float)
        if seg.shape != (2, 2):
            raise ConfigError(f"{where}.segment_m: expected two 2-D endpoints")
        return PerturbationEvent(
            kind="collision",
            start=float(d["start_s"]),
            duration=float(d["duration_s"]),
            segment=seg,
            radius=float(d["radius_m"]),
            contact=_parse_contact(d["contact"], f"{where}.contact"),
        )
    raise ConfigError(f"{where}: unknown kind {kind!r}")


def _parse_contact(d, where="contact"):
    _check_keys(
        d,
        {
            "normal_stiffness_N_per_m": True,
            "normal_damping_N_s_per_m": True,
            "friction_coeff": True,
            "tangential_reg_velocity_m_per_s": False,
        },
        where,
    )
    return ContactParams(
        normal_stiffness=float(d["normal_stiffness_N_per_m"]),
        normal_damping=float(d["normal_damping_N_s_per_m"]),
        friction_coeff=float(d["friction_coeff"]),
        reg_velocity=float(d.get("tangential_reg_velocity_m_per_s", 1e-3)),
    )


def config_from_dict(doc, base_dir="."):
    """Validate a raw config document into a ScenarioConfig."""
    top = {
        "schema_version": True,
        "name": True,
        "seed": True,
        "duration_s": True,
        "dt_s": True,
        "arm": True,
        "surface": True,
        "contact": True,
        "start": True,
        "vmp": True,
        "targets": True,
        "gains": True,
        "detector": True,
        "ensemble": True,
        "perturbations": True,
        "noise": True,
        "metrics": True,
        "pinned_mode": False,
        "training": True,
    }
    _check_keys(doc, top, "config")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']!r}")
    duration = float(doc["duration_s"])
    dt = float(doc["dt_s"])
    if dt <= 0 or duration < dt:
        raise ConfigError("need dt_s > 0 and duration_s >= dt_s")

    a = doc["arm"]
    _check_keys(
        a,
        {
            "link_lengths_m": True,
            "link_masses_kg": True,
            "link_inertias_kg_m2": True,
            "joint_damping_N_m_s_per_rad": True,
            "gravity_m_per_s2": True,
            "qdot_limit_rad_per_s": False,
            "jacobian_cond_limit": False,
        },
        "arm",
    )
    try:
        arm = ArmParams(
            link_lengths=_vec(a, "link_lengths_m", 3, "arm"),
            link_masses=_vec(a, "link_masses_kg", 3, "arm"),
            link_inertias=_vec(a, "link_inertias_kg_m2", 3, "arm"),
            joint_damping=_vec(a, "joint_damping_N_m_s_per_rad", 3, "arm"),
            gravity=_vec(a, "gravity_m_per_s2", 2, "arm"),
            qdot_limit=float(a.get("qdot_limit_rad_per_s", 50.0)),
            jacobian_cond_limit=float(a.get("jacobian_cond_limit", 1e6)),
        )
    except ValueError as exc:
        raise ConfigError(f"arm: {exc}") from None

    surface = _parse_surface(doc["surface"])
    try:
        contact = _parse_contact(doc["contact"])
    except ValueError as exc:
        raise ConfigError(f"contact: {exc}") from None

    st = doc["start"]
    _check_keys(st, {"ee_pose_m_m_rad": True, "ik_seed_rad": True}, "start")
    start_pose = _vec(st, "ee_pose_m_m_rad", 3, "start")
    ik_seed = _vec(st, "ik_seed_rad", 3, "start")

    v = doc["vmp"]
    _check_keys(
        v,
        {
            "pattern": True,
            "period_s": True,
            "half_length_m": False,
            "normal_amplitude_m": False,
            "n_rbf": False,
            "ridge_lambda": False,
            "demo_csv": False,
            "stroke_center_m": False,
            "anchor_offset_m": False,
        },
        "vmp",
    )
    if v["pattern"] not in ("line_stroke", "ellipse_stroke", "demo_csv"):
        raise ConfigError(f"vmp.pattern: unknown pattern {v['pattern']!r}")
    demo_csv = v.get("demo_csv")
    if v["pattern"] == "demo_csv":
        if not demo_csv:
            raise ConfigError("vmp.demo_csv required for pattern demo_csv")
        demo_csv = os.path.join(base_dir, demo_csv)
        if not os.path.exists(demo_csv):
            raise ConfigError(f"vmp.demo_csv: file not found: {demo_csv}")
    vmp_cfg = VmpConfig(
        pattern=v["pattern"],
        period=float(v["period_s"]),
        half_length=float(v.get("half_length_m", 0.12)),
        normal_amplitude=float(v.get("normal_amplitude_m", 0.0)),
        n_rbf=int(v.get("n_rbf", 25)),
        ridge_lambda=float(v.get("ridge_lambda", 1e-9)),
        demo_csv=demo_csv,
        stroke_center=_vec(v, "stroke_center_m", 2, "vmp") if "stroke_center_m" in v else np.zeros(2),
        anchor_offset=_vec(v, "anchor_offset_m", 2, "vmp") if "anchor_offset_m" in v else np.zeros(2),
    )
    if vmp_cfg.period <= 0:
        raise ConfigError("vmp.period_s must be positive")

    tg = doc["targets"]
    _check_keys(
        tg,
        {
            "force_base_N": True,
            "force_amplitude_N": True,
            "force_period_s": False,
            "force_direction_rad": False,
            "torque_N_m": False,
        },
        "targets",
    )
    direction = tg.get("force_direction_rad")
    if direction is None:
        probe = surface_query(surface, vmp_cfg.stroke_center)
        direction = math.atan2(probe.normal[1], probe.normal[0])
    period = tg.get("force_period_s")
    try:
        targets = TaskTargets(
            force_base=float(tg["force_base_N"]),
            force_amplitude=float(tg["force_amplitude_N"]),
            force_period=float(period) if period is not None else vmp_cfg.period,
            force_direction=float(direction),
            torque=float(tg.get("torque_N_m", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"targets: {exc}") from None

    g = doc["gains"]
    _check_keys(
        g,
        {
            "force_pid": True,
            "direction_pid": True,
            "torque_pid": True,
            "impedance": True,
            "posture": True,
            "schedule": True,
            "enabled_sources": True,
        },
        "gains",
    )
    imp = g["impedance"]
    _check_keys(
        imp,
        {
            "stiffness_N_per_m": True,
            "rot_stiffness_N_m_per_rad": True,
            "damping_N_s_per_m": True,
            "rot_damping_N_m_s_per_rad": True,
            "virtual_mass_kg": False,
            "rot_virtual_inertia_kg_m2": False,
            "integral_leak_per_s": False,
            "integral_limit_m": False,
        },
        "gains.impedance",
    )
    kxy = _vec(imp, "stiffness_N_per_m", 2, "gains.impedance")
    dxy = _vec(imp, "damping_N_s_per_m", 2, "gains.impedance")
    mxy = _vec(imp, "virtual_mass_kg", 2, "gains.impedance") if "virtual_mass_kg" in imp else np.zeros(2)
    try:
        impedance = ImpedanceGains(
            inertia=np.array([mxy[0], mxy[1], float(imp.get("rot_virtual_inertia_kg_m2", 0.0))]),
            damping=np.array([dxy[0], dxy[1], float(imp["rot_damping_N_m_s_per_rad"])]),
            stiffness=np.array([kxy[0], kxy[1], float(imp["rot_stiffness_N_m_per_rad"])]),
        )
    except ValueError as exc:
        raise ConfigError(f"gains.impedance: {exc}") from None

    post = g["posture"]
    _check_keys(
        post,
        {"stiffness_N_m_per_rad": True, "damping_N_m_s_per_rad": True, "q_rest_rad": False},
        "gains.posture",
    )
    sched = g["schedule"]
    _check_keys(sched, {"adaptive_drop_s": True, "recovery_ramp_s": True}, "gains.schedule")
    drop = float(sched["adaptive_drop_s"])
    ramp = float(sched["recovery_ramp_s"])
    if drop <= 0 or ramp <= drop:
        raise ConfigError(
            "gains.schedule: need adaptive_drop_s > 0 and recovery_ramp_s > adaptive_drop_s "
            "(recovery strictly slower than decay)"
        )
    src = g["enabled_sources"]
    _check_keys(src, {"vmp": True, "force": True, "direction": True, "torque": True}, "gains.enabled_sources")
    try:
        gains = GainConfig(
            force_pid=_parse_pid(g["force_pid"], "gains.force_pid"),
            direction_pid=_parse_pid(g["direction_pid"], "gains.direction_pid"),
            torque_pid=_parse_pid(g["torque_pid"], "gains.torque_pid"),
            impedance=impedance,
            posture_stiffness=float(post["stiffness_N_m_per_rad"]),
            posture_damping=float(post["damping_N_m_s_per_rad"]),
            posture_q_rest=_vec(post, "q_rest_rad", 3, "gains.posture") if post.get("q_rest_rad") is not None else None,
            leak=float(imp.get("integral_leak_per_s", 0.2)),
            impedance_integral_limit=float(imp.get("integral_limit_m", 0.05)),
            adaptive_drop_s=drop,
            recovery_ramp_s=ramp,
            mask=SourceMask(vmp=bool(src["vmp"]), force=bool(src["force"]), direction=bool(src["direction"]), torque=bool(src["torque"])),
        )
    except ValueError as exc:
        raise ConfigError(f"gains: {exc}") from None

    det = doc["detector"]
    _check_keys(
        det,
        {
            "window_len": True,
            "score_window": True,
            "decimation": True,
            "threshold": False,
            "threshold_file": False,
            "calibration_k": False,
            "hysteresis_fraction": False,
            "contact_threshold_N": False,
            "slide_deadband_m_per_s": False,
            "friction_window": False,
            "friction_min_normal_N": False,
            "arming_time_s": False,
            "direction_lowpass": False,
        },
        "detector",
    )
    threshold_file = det.get("threshold_file")
    if threshold_file is not None:
        threshold_file = os.path.join(base_dir, threshold_file)
        if not os.path.exists(threshold_file):
            raise ConfigError(f"detector.threshold_file: file not found: {threshold_file}")
    detector = DetectorConfig(
        window_len=int(det["window_len"]),
        score_window=int(det["score_window"]),
        decimation=int(det["decimation"]),
        threshold=float(det["threshold"]) if det.get("threshold") is not None else None,
        threshold_file=threshold_file,
        calibration_k=float(det.get("calibration_k", 6.0)),
        hysteresis_fraction=float(det.get("hysteresis_fraction", 0.1)),
        contact_threshold=float(det.get("contact_threshold_N", 1.0)),
        slide_deadband=float(det.get("slide_deadband_m_per_s", 0.005)),
        friction_window=int(det.get("friction_window", 256)),
        friction_min_normal=float(det.get("friction_min_normal_N", 2.0)),
        arming_time=float(det.get("arming_time_s", 0.0)),
        direction_lowpass=float(det.get("direction_lowpass", 1.0)),
    )
    if detector.window_len < 2 or detector.score_window < 1 or detector.decimation < 1:
        raise ConfigError("detector: window_len >= 2, score_window >= 1, decimation >= 1")

    ens = doc["ensemble"]
    _check_keys(ens, {"model_paths": True}, "ensemble")
    model_paths = []
    for p in ens["model_paths"]:
        full = os.path.join(base_dir, p)
        if not os.path.exists(full):
            raise ConfigError(f"ensemble.model_paths: file not found: {full}")
        model_paths.append(full)

    if not isinstance(doc["perturbations"], list):
        raise ConfigError("perturbations: expected a list")
    try:
        perturbations = [_parse_perturbation(p, i) for i, p in enumerate(doc["perturbations"])]
    except ValueError as exc:
        raise ConfigError(f"perturbations: {exc}") from None
    perturbations.sort(key=lambda ev: ev.start)

    nz = doc["noise"]
    _check_keys(
        nz,
        {
            "force_std_N": True,
            "torque_std_N_m": True,
            "velocity_std_m_per_s": True,
            "ang_velocity_std_rad_per_s": True,
        },
        "noise",
    )
    noise = NoiseConfig(
        force_std=float(nz["force_std_N"]),
        torque_std=float(nz["torque_std_N_m"]),
        velocity_std=float(nz["velocity_std_m_per_s"]),
        ang_velocity_std=float(nz["ang_velocity_std_rad_per_s"]),
    )

    mt = doc["metrics"]
    _check_keys(mt, {"rmse_skip_s": True, "event_grace_s": True}, "metrics")
    metrics = MetricsConfig(rmse_skip=float(mt["rmse_skip_s"]), event_grace=float(mt["event_grace_s"]))

    pinned = doc.get("pinned_mode")
    if pinned not in (None, "normal"):
        raise ConfigError("pinned_mode must be null or 'normal'")

    tr = doc["training"]
    _check_keys(
        tr,
        {
            "hidden": True,
            "mixtures": True,
            "learning_rate": True,
            "batch_size": True,
            "epochs": True,
            "seed": True,
            "grad_clip": True,
            "sigma_floor_N": True,
        },
        "training",
    )
    try:
        training = TrainingConfig(
            hidden=int(tr["hidden"]),
            mixtures=int(tr["mixtures"]),
            learning_rate=float(tr["learning_rate"]),
            batch_size=int(tr["batch_size"]),
            epochs=int(tr["epochs"]),
            seed=int(tr["seed"]),
            grad_clip=float(tr["grad_clip"]),
            sigma_floor=float(tr["sigma_floor_N"]),
        )
    except ValueError as exc:
        raise ConfigError(f"training: {exc}") from None

    return ScenarioConfig(
        name=str(doc["name"]),
        seed=int(doc["seed"]),
        duration=duration,
        dt=dt,
        arm=arm,
        surface=surface,
        contact=contact,
        start_pose=start_pose,
        ik_seed=ik_seed,
        vmp=vmp_cfg,
        targets=targets,
        gains=gains,
        detector=detector,
        model_paths=model_paths,
        perturbations=perturbations,
        noise=noise,
        metrics=metrics,
        pinned_mode=pinned,
        training=training,
        raw=copy.deepcopy(doc),
    )


def load_config(path_or_preset, seed_override=None, extra_model_paths=()):
    """Resolve a config file path or preset name into a ScenarioConfig."""
    from . import presets

    if os.path.exists(path_or_preset):
        with open(path_or_preset, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path_or_preset}: invalid JSON ({exc})") from None
        base_dir = os.path.dirname(os.path.abspath(path_or_preset))
    elif path_or_preset in presets.REGISTRY:
        doc = presets.REGISTRY[path_or_preset]()
        base_dir = os.getcwd()
    else:
        raise ConfigError(
            f"config {path_or_preset!r} is neither a file nor a preset "
            f"(presets: {', '.join(sorted(presets.REGISTRY))})"
        )
    if seed_override is not None:
        doc = copy.deepcopy(doc)
        doc["seed"] = int(seed_override)
    if extra_model_paths:
        doc = copy.deepcopy(doc)
        doc["ensemble"]["model_paths"] = list(doc["ensemble"].get("model_paths", [])) + [
            os.path.abspath(p) for p in extra_model_paths
        ]
    return config_from_dict(doc, base_dir)
