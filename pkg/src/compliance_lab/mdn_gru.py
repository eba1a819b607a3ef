"""Bidirectional GRU with a Gaussian-mixture density head, trained by NLL.

Everything is plain numpy with hand-written reverse-mode gradients; the
finite-difference agreement of those gradients is the anchor property of
the whole module and is enforced by the test suite on a tiny model.

A window of velocities (length L, d_v channels) maps to a per-timestep
Gaussian mixture over the force window (d channels, diagonal covariance).
The window log-density is the sum of per-step mixture log-densities; an
ensemble of models combines by the equal-weight sum rule of probability.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, EmptyEnsembleError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GruDirectionParams:
    w_z: np.ndarray
    w_r: np.ndarray
    w_h: np.ndarray
    u_z: np.ndarray
    u_r: np.ndarray
    u_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    @property
    def hidden(self):
        return self.u_z.shape[0]


@dataclass
class MdnHeadParams:
    weight: np.ndarray  # (2H, K*(1+2d))
    bias: np.ndarray
    mixtures: int
    out_dim: int


@dataclass
class ModelParams:
    fwd: GruDirectionParams
    bwd: GruDirectionParams
    head: MdnHeadParams
    norm_mean: np.ndarray
    norm_std: np.ndarray
    window_len: int
    sigma_floor: float = 1e-3
    format_version: int = 1

    @property
    def in_dim(self):
        return self.fwd.w_z.shape[0]


@dataclass
class MixtureSeq:
    """Per-timestep mixture parameters over a force window."""

    weights: np.ndarray  # (L, K), softmax-normalized
    log_weights: np.ndarray  # (L, K), the numerically safe source for NLL
    means: np.ndarray  # (L, K, d)
    scales: np.ndarray  # (L, K, d), >= sigma floor


@dataclass(frozen=True)
class TrainingConfig:
    hidden: int = 32
    mixtures: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    grad_clip: float = 5.0
    sigma_floor: float = 1e-3

    def __post_init__(self):
        if min(self.hidden, self.mixtures, self.batch_size, self.epochs) < 1:
            raise ValueError("hidden/mixtures/batch/epochs must be positive")
        if self.learning_rate <= 0 or self.grad_clip <= 0 or self.sigma_floor <= 0:
            raise ValueError("learning rate, clip and sigma floor must be positive")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_cell(params, x_t, h):
    """Single GRU update h' for input x_t; works on batched rows too."""
    x_t = np.asarray(x_t, dtype=float)
    h = np.asarray(h, dtype=float)
    if x_t.shape[-1] != params.w_z.shape[0] or h.shape[-1] != params.hidden:
        raise ValueError("gru_cell shape mismatch")
    z = _sigmoid(x_t @ params.w_z + h @ params.u_z + params.b_z)
    r = _sigmoid(x_t @ params.w_r + h @ params.u_r + params.b_r)
    hc = np.tanh(x_t @ params.w_h + (r * h) @ params.u_h + params.b_h)
    return (1.0 - z) * h + z * hc


def _dir_forward(params, xn):
    """Run one GRU direction over (B, L, d_v); returns states and caches."""
    b, length, _ = xn.shape
    h = np.zeros((b, params.hidden))
    hs = np.empty((b, length, params.hidden))
    cache = []
    for t in range(length):
        x_t = xn[:, t]
        z = _sigmoid(x_t @ params.w_z + h @ params.u_z + params.b_z)
        r = _sigmoid(x_t @ params.w_r + h @ params.u_r + params.b_r)
        hc = np.tanh(x_t @ params.w_h + (r * h) @ params.u_h + params.b_h)
        h_new = (1.0 - z) * h + z * hc
        cache.append((x_t, h, z, r, hc))
        hs[:, t] = h_new
        h = h_new
    return hs, cache


def _dir_backward(params, cache, dh_seq):
    """Backprop through one GRU direction; returns parameter gradients."""
    g = {
        "w_z": np.zeros_like(params.w_z),
        "w_r": np.zeros_like(params.w_r),
        "w_h": np.zeros_like(params.w_h),
        "u_z": np.zeros_like(params.u_z),
        "u_r": np.zeros_like(params.u_r),
        "u_h": np.zeros_like(params.u_h),
        "b_z": np.zeros_like(params.b_z),
        "b_r": np.zeros_like(params.b_r),
        "b_h": np.zeros_like(params.b_h),
    }
    dh_next = np.zeros((dh_seq.shape[0], params.hidden))
    for t in range(len(cache) - 1, -1, -1):
        x_t, h_prev, z, r, hc = cache[t]
        dh = dh_seq[:, t] + dh_next
        dz = dh * (hc - h_prev)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)

        dah = dhc * (1.0 - hc * hc)
        g["w_h"] += x_t.T @ dah
        g["u_h"] += (r * h_prev).T @ dah
        g["b_h"] += dah.sum(axis=0)
        drh = dah @ params.u_h.T
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r

        daz = dz * z * (1.0 - z)
        g["w_z"] += x_t.T @ daz
        g["u_z"] += h_prev.T @ daz
        g["b_z"] += daz.sum(axis=0)
        dh_prev = dh_prev + daz @ params.u_z.T

        dar = dr * r * (1.0 - r)
        g["w_r"] += x_t.T @ dar
        g["u_r"] += h_prev.T @ dar
        g["b_r"] += dar.sum(axis=0)
        dh_prev = dh_prev + dar @ params.u_r.T

        dh_next = dh_prev
    return g


def _logsumexp(a, axis=-1, keepdims=False):
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    return out if keepdims else np.squeeze(out, axis=axis)


def _head_forward(model, v_batch):
    """Normalized Bi-GRU features through the MDN head for (B, L, d_v)."""
    if v_batch.ndim != 3 or v_batch.shape[1] != model.window_len or v_batch.shape[2] != model.in_dim:
        raise ValueError("window batch shape mismatch")
    if not np.all(np.isfinite(v_batch)):
        raise ValueError("non-finite model input")
    xn = (v_batch - model.norm_mean) / model.norm_std
    hf, cache_f = _dir_forward(model.fwd, xn)
    hb_rev, cache_b = _dir_forward(model.bwd, xn[:, ::-1])
    hb = hb_rev[:, ::-1]
    feats = np.concatenate([hf, hb], axis=-1)
    raw = feats @ model.head.weight + model.head.bias
    k, d = model.head.mixtures, model.head.out_dim
    logits = raw[..., :k]
    means = raw[..., k : k + k * d].reshape(raw.shape[0], raw.shape[1], k, d)
    sraw = raw[..., k + k * d :].reshape(raw.shape[0], raw.shape[1], k, d)
    scales = model.sigma_floor + np.exp(sraw)
    log_w = logits - _logsumexp(logits, axis=-1, keepdims=True)
    return {
        "feats": feats,
        "cache_f": cache_f,
        "cache_b": cache_b,
        "logits": logits,
        "means": means,
        "scales": scales,
        "log_w": log_w,
    }


def forward(model, v_window):
    """Mixture parameters for one velocity window (L, d_v)."""
    v_window = np.asarray(v_window, dtype=float)
    out = _head_forward(model, v_window[None])
    return MixtureSeq(
        weights=np.exp(out["log_w"][0]),
        log_weights=out["log_w"][0],
        means=out["means"][0],
        scales=out["scales"][0],
    )


def _step_log_mix(log_w, means, scales, f):
    """Per-step mixture log density; f broadcast against (..., K, d) params."""
    e = (f[..., None, :] - means) / scales
    log_n = -0.5 * LOG_2PI * means.shape[-1] - np.log(scales).sum(axis=-1) - 0.5 * (e * e).sum(axis=-1)
    return _logsumexp(log_w + log_n, axis=-1), e, log_n


def window_nll(mix, f_window):
    """Negative log-likelihood of a force window under the mixture sequence."""
    f_window = np.asarray(f_window, dtype=float)
    if f_window.shape != mix.means.shape[:1] + mix.means.shape[-1:]:
        raise ValueError("force window shape mismatch")
    log_mix, _, _ = _step_log_mix(mix.log_weights, mix.means, mix.scales, f_window)
    return float(-np.sum(log_mix))


def window_log_density(model, v_window, f_window):
    return -window_nll(forward(model, v_window), f_window)


def gradients(model, v_batch, f_batch):
    """Mean window NLL over a batch and its gradient for every parameter.

    Returns (loss, grads) with grads keyed fwd.*/bwd.*/head.* in the same
    shapes as the parameters.  Accumulation order is fixed, so results are
    deterministic.
    """
    v_batch = np.asarray(v_batch, dtype=float)
    f_batch = np.asarray(f_batch, dtype=float)
    if v_batch.shape[0] == 0:
        raise ValueError("empty batch")
    if f_batch.shape != (v_batch.shape[0], model.window_len, model.head.out_dim):
        raise ValueError("force batch shape mismatch")
    b = v_batch.shape[0]
    out = _head_forward(model, v_batch)
    log_w, means, scales = out["log_w"], out["means"], out["scales"]
    log_mix, e, log_n = _step_log_mix(log_w, means, scales, f_batch)
    loss = float(-np.sum(log_mix) / b)

    m = log_w + log_n
    gamma = np.exp(m - _logsumexp(m, axis=-1, keepdims=True))
    pi = np.exp(log_w)
    dlogits = (pi - gamma) / b
    dmu = -(gamma[..., None] / b) * e / scales
    dsraw = -(gamma[..., None] / b) * ((e * e - 1.0) / scales) * (scales - model.sigma_floor)

    k, d = model.head.mixtures, model.head.out_dim
    nb, length = v_batch.shape[0], v_batch.shape[1]
    draw = np.concatenate(
        [dlogits, dmu.reshape(nb, length, k * d), dsraw.reshape(nb, length, k * d)], axis=-1
    )
    feats = out["feats"]
    feats2 = feats.reshape(-1, feats.shape[-1])
    draw2 = draw.reshape(-1, draw.shape[-1])
    g_head_w = feats2.T @ draw2
    g_head_b = draw2.sum(axis=0)
    dfeats = (draw2 @ model.head.weight.T).reshape(feats.shape)
    h = model.fwd.hidden
    g_fwd = _dir_backward(model.fwd, out["cache_f"], dfeats[..., :h])
    g_bwd = _dir_backward(model.bwd, out["cache_b"], dfeats[..., h:][:, ::-1])

    grads = {f"fwd.{k_}": v for k_, v in g_fwd.items()}
    grads.update({f"bwd.{k_}": v for k_, v in g_bwd.items()})
    grads["head.weight"] = g_head_w
    grads["head.bias"] = g_head_b
    return loss, grads


def param_tensors(model):
    """Name -> array views of every trainable tensor."""
    out = {}
    for prefix, direction in (("fwd", model.fwd), ("bwd", model.bwd)):
        for name in ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"):
            out[f"{prefix}.{name}"] = getattr(direction, name)
    out["head.weight"] = model.head.weight
    out["head.bias"] = model.head.bias
    return out


def init_model(in_dim, out_dim, config, window_len, norm_mean=None, norm_std=None):
    """Seeded parameter initialization."""
    rng = np.random.default_rng(config.seed)
    h = config.hidden

    def direction():
        return GruDirectionParams(
            w_z=rng.standard_normal((in_dim, h)) / math.sqrt(in_dim),
            w_r=rng.standard_normal((in_dim, h)) / math.sqrt(in_dim),
            w_h=rng.standard_normal((in_dim, h)) / math.sqrt(in_dim),
            u_z=rng.standard_normal((h, h)) / math.sqrt(h),
            u_r=rng.standard_normal((h, h)) / math.sqrt(h),
            u_h=rng.standard_normal((h, h)) / math.sqrt(h),
            b_z=np.zeros(h),
            b_r=np.zeros(h),
            b_h=np.zeros(h),
        )

    fwd = direction()
    bwd = direction()
    p = config.mixtures * (1 + 2 * out_dim)
    head = MdnHeadParams(
        weight=rng.standard_normal((2 * h, p)) * (0.1 / math.sqrt(2 * h)),
        bias=np.zeros(p),
        mixtures=config.mixtures,
        out_dim=out_dim,
    )
    return ModelParams(
        fwd=fwd,
        bwd=bwd,
        head=head,
        norm_mean=np.zeros(in_dim) if norm_mean is None else np.asarray(norm_mean, dtype=float),
        norm_std=np.ones(in_dim) if norm_std is None else np.asarray(norm_std, dtype=float),
        window_len=window_len,
        sigma_floor=config.sigma_floor,
    )


def train(v_windows, f_windows, config):
    """Minibatch Adam on the mean window NLL; returns (model, nll curve).

    Deterministic for a given seed; no early stopping (overfitting the
    clean data is deliberate).  Raises DivergenceError on non-finite loss.
    """
    v_windows = np.asarray(v_windows, dtype=float)
    f_windows = np.asarray(f_windows, dtype=float)
    if v_windows.ndim != 3 or v_windows.shape[0] == 0:
        raise ValueError("need a non-empty (N, L, d_v) window set")
    n, length, in_dim = v_windows.shape
    out_dim = f_windows.shape[2]

    flat = v_windows.reshape(-1, in_dim)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    model = init_model(in_dim, out_dim, config, length, mean, std)

    params = param_tensors(model)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}
    names = sorted(params)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step_count = 0

    rng = np.random.default_rng(config.seed)
    curve = []
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            loss, grads = gradients(model, v_windows[idx], f_windows[idx])
            if not math.isfinite(loss):
                raise DivergenceError("training NLL became non-finite")
            total += loss * idx.size

            gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = config.grad_clip / gnorm if gnorm > config.grad_clip else 1.0
            step_count += 1
            corr = math.sqrt(1.0 - b2**step_count) / (1.0 - b1**step_count)
            for name in names:
                g = grads[name] * scale
                adam_m[name] = b1 * adam_m[name] + (1.0 - b1) * g
                adam_v[name] = b2 * adam_v[name] + (1.0 - b2) * g * g
                params[name] -= config.learning_rate * corr * adam_m[name] / (
                    np.sqrt(adam_v[name]) + eps
                )
        curve.append(total / n)
    return model, curve


def ensemble_log_density(models, v_window, f_window):
    """Log of the equal-weight mean of per-model window densities."""
    if len(models) == 0:
        raise EmptyEnsembleError("need at least one predictive model")
    logps = np.array([window_log_density(m, v_window, f_window) for m in models])
    return float(_logsumexp(logps, axis=0) - math.log(len(models)))


def per_model_log_densities(models, v_window, f_window):
    if len(models) == 0:
        raise EmptyEnsembleError("need at least one predictive model")
    return [window_log_density(m, v_window, f_window) for m in models]


def mixture_moments(mix):
    """Mean and standard deviation of the per-step mixture, per axis."""
    mean = np.sum(mix.weights[..., None] * mix.means, axis=-2)
    second = np.sum(mix.weights[..., None] * (mix.scales**2 + mix.means**2), axis=-2)
    var = np.maximum(second - mean**2, 0.0)
    return mean, np.sqrt(var)


def ensemble_moments(models, v_window):
    """Moments of the pooled (sum-rule) mixture across the ensemble."""
    if len(models) == 0:
        raise EmptyEnsembleError("need at least one predictive model")
    mixes = [forward(m, v_window) for m in models]
    w = len(models)
    mean = sum(np.sum(mx.weights[..., None] * mx.means, axis=-2) for mx in mixes) / w
    second = sum(
        np.sum(mx.weights[..., None] * (mx.scales**2 + mx.means**2), axis=-2) for mx in mixes
    ) / w
    var = np.maximum(second - mean**2, 0.0)
    return mean, np.sqrt(var)
