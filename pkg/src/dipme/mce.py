"""Multi-channel encoder recognizer, trained from scratch in numpy.

Each of the three wrench channels is embedded with an additive position
table, passed through a ConvBlock and a multi-head self-attention block
(with batch normalization and a fully connected layer), mean-pooled over
time, and the three channel vectors are concatenated into an MLP with a
softmax head. Gradients are hand-derived reverse mode; the update rule is
adaptive moment estimation.
"""

from __future__ import annotations

import base64
import copy
import json
import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .preprocess import NormStats

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_FLOOR = 1e-12

#: Count of probability clamps in loss evaluation (diagnostic).
loss_clamp_count = 0


@dataclass(frozen=True)
class MceConfig:
    window_len: int = 128
    channels: int = 3
    d_model: int = 64
    n_heads: int = 4
    conv_kernel: int = 3
    conv_channels: int = 32
    fc_dim: int = 64
    mlp_hidden: int = 128
    n_classes: int = 6
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_classes != 6:
            raise ConfigError("recognizer is fixed at 6 media classes")
        if self.conv_kernel % 2 != 1:
            raise ConfigError("conv kernel must be odd for same-padding")
        if not (0 <= self.dropout < 1):
            raise ConfigError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 16
    epochs: int = 100
    class_weights: tuple = (1.0,) * 6
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("train hyperparameters must be positive")
        if len(self.class_weights) != 6 or any(w < 0 for w in self.class_weights):
            raise ConfigError("class_weights must be 6 non-negative reals")


@dataclass
class MceParams:
    """Trainable tensors plus batch-norm running state."""

    config: MceConfig
    tensors: dict
    bn_state: dict

    def copy(self) -> "MceParams":
        return MceParams(
            config=self.config,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            bn_state={k: v.copy() for k, v in self.bn_state.items()},
        )


@dataclass
class Prediction:
    probs: np.ndarray
    argmax: int
    latency_ms: float = 0.0


def init_params(config: MceConfig, seed: int = 0, dtype=np.float64) -> MceParams:
    """Fan-in-scaled random init, deterministic per seed; BN stats at identity."""
    rng = np.random.default_rng(np.random.SeedSequence([0x9CE, seed]))
    D, C, K, F = config.d_model, config.conv_channels, config.conv_kernel, config.fc_dim
    N, H = config.window_len, config.mlp_hidden
    t, s = {}, {}

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    def xavier(shape, fan_in):
        return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)

    for c in range(config.channels):
        p = f"c{c}."
        t[p + "emb_w"] = xavier((D,), 1)
        t[p + "emb_b"] = np.zeros(D)
        t[p + "pos"] = rng.normal(0.0, 0.02, size=(N, D))
        t[p + "conv_w"] = he((C, K, D), K * D)
        t[p + "conv_b"] = np.zeros(C)
        for nm in ("wq", "wk", "wv"):
            t[p + nm] = xavier((C, D), C)
        t[p + "bq"] = np.zeros(D)
        t[p + "bk"] = np.zeros(D)
        t[p + "bv"] = np.zeros(D)
        t[p + "wo"] = xavier((D, D), D)
        t[p + "bo"] = np.zeros(D)
        t[p + "bn_gamma"] = np.ones(D)
        t[p + "bn_beta"] = np.zeros(D)
        s[p + "bn_mean"] = np.zeros(D)
        s[p + "bn_var"] = np.ones(D)
        t[p + "fc_w"] = he((D, F), D)
        t[p + "fc_b"] = np.zeros(F)
    t["mlp_w1"] = he((config.channels * F, H), config.channels * F)
    t["mlp_b1"] = np.zeros(H)
    t["mlp_w2"] = xavier((H, config.n_classes), H)
    t["mlp_b2"] = np.zeros(config.n_classes)
    t = {k: v.astype(dtype) for k, v in t.items()}
    s = {k: v.astype(dtype) for k, v in s.items()}
    return MceParams(config=config, tensors=t, bn_state=s)


def _softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def forward(
    params: MceParams,
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Forward pass. x is (B, 3, N) or (3, N); returns (probs, logits, cache).

    In training mode batch-norm uses batch statistics (running stats are
    updated in place) and dropout masks are drawn from rng; the returned
    cache feeds :func:`backward`.
    """
    cfg = params.config
    dtype = params.tensors["mlp_w2"].dtype
    x = np.asarray(x, dtype=dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    B, ch, N = x.shape
    if ch != cfg.channels or N != cfg.window_len:
        raise ValueError(f"window shape {x.shape[1:]} does not match config ({cfg.channels}, {cfg.window_len})")
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training-mode forward with dropout needs an rng")
    t = params.tensors
    dk = cfg.d_model // cfg.n_heads
    cache = {"x": x, "training": training} if training else None
    feats = []
    for c in range(cfg.channels):
        p = f"c{c}."
        xc = x[:, c, :]  # (B, N)
        h = xc[:, :, None] * t[p + "emb_w"] + t[p + "emb_b"] + t[p + "pos"]  # (B, N, D)

        # ConvBlock: same-padded conv over time + ReLU (im2col matmul)
        pad = (cfg.conv_kernel - 1) // 2
        hp = np.pad(h, ((0, 0), (pad, pad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(hp, cfg.conv_kernel, axis=1)  # (B, N, D, K)
        wmat = t[p + "conv_w"].transpose(0, 2, 1).reshape(-1, cfg.d_model * cfg.conv_kernel)  # (C, D*K)
        conv = (win.reshape(B * N, -1) @ wmat.T).reshape(B, N, -1) + t[p + "conv_b"]
        crelu = np.maximum(conv, 0.0)  # (B, N, C)

        # multi-head self-attention
        q = crelu @ t[p + "wq"] + t[p + "bq"]
        k = crelu @ t[p + "wk"] + t[p + "bk"]
        v = crelu @ t[p + "wv"] + t[p + "bv"]

        def heads(z):
            return z.reshape(B, N, cfg.n_heads, dk).transpose(0, 2, 1, 3)  # (B, H, N, dk)

        qh, kh, vh = heads(q), heads(k), heads(v)
        scores = qh @ kh.transpose(0, 1, 3, 2) / float(np.sqrt(dk))
        attn = _softmax(scores, axis=-1)
        ctx = attn @ vh  # (B, H, N, dk)
        merged = ctx.transpose(0, 2, 1, 3).reshape(B, N, cfg.d_model)
        att_out = merged @ t[p + "wo"] + t[p + "bo"]

        if training and cfg.dropout > 0:
            mask_a = ((rng.random(att_out.shape) >= cfg.dropout) / (1 - cfg.dropout)).astype(dtype)
            att_out = att_out * mask_a
        else:
            mask_a = None

        # batch norm over the feature dimension (stats pooled over batch and time)
        if training:
            mu = att_out.mean(axis=(0, 1))
            var = att_out.var(axis=(0, 1))
            params.bn_state[p + "bn_mean"] = (1 - BN_MOMENTUM) * params.bn_state[p + "bn_mean"] + BN_MOMENTUM * mu
            params.bn_state[p + "bn_var"] = (1 - BN_MOMENTUM) * params.bn_state[p + "bn_var"] + BN_MOMENTUM * var
        else:
            mu = params.bn_state[p + "bn_mean"]
            var = params.bn_state[p + "bn_var"]
        ivar = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (att_out - mu) * ivar
        bn = t[p + "bn_gamma"] * xhat + t[p + "bn_beta"]

        fc = bn @ t[p + "fc_w"] + t[p + "fc_b"]
        frelu = np.maximum(fc, 0.0)  # (B, N, F)
        pooled = frelu.mean(axis=1)  # (B, F)
        feats.append(pooled)

        if training:
            cache[p] = {
                "xc": xc, "h": h, "win": win, "conv": conv, "crelu": crelu,
                "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx, "merged": merged,
                "mask_a": mask_a, "att_out": att_out, "mu": mu, "ivar": ivar,
                "xhat": xhat, "bn": bn, "fc": fc, "frelu": frelu,
            }

    z = np.concatenate(feats, axis=1)  # (B, 3F)
    h1 = z @ t["mlp_w1"] + t["mlp_b1"]
    r1 = np.maximum(h1, 0.0)
    if training and cfg.dropout > 0:
        mask_m = ((rng.random(r1.shape) >= cfg.dropout) / (1 - cfg.dropout)).astype(dtype)
        r1d = r1 * mask_m
    else:
        mask_m, r1d = None, r1
    logits = r1d @ t["mlp_w2"] + t["mlp_b2"]
    probs = _softmax(logits)
    if training:
        cache.update({"z": z, "h1": h1, "r1": r1, "mask_m": mask_m, "r1d": r1d, "logits": logits, "probs": probs})
    if single:
        probs = probs[0]
        logits = logits[0]
    return probs, logits, cache


def loss(probs: np.ndarray, labels: np.ndarray, class_weights=None) -> float:
    """Weighted logarithmic loss, averaged over the batch."""
    global loss_clamp_count
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    w = np.ones(probs.shape[1]) if class_weights is None else np.asarray(class_weights, dtype=float)
    p_true = probs[np.arange(len(labels)), labels]
    n_clamped = int(np.sum(p_true < PROB_FLOOR))
    if n_clamped:
        loss_clamp_count += n_clamped
        warnings.warn(f"clamped {n_clamped} probabilities at {PROB_FLOOR} in loss")
        p_true = np.maximum(p_true, PROB_FLOOR)
    return float(np.mean(-w[labels] * np.log(p_true)))


def backward(params: MceParams, cache: dict, labels: np.ndarray, class_weights=None) -> dict:
    """Gradient of the weighted log loss w.r.t. every trainable tensor."""
    if cache is None or "probs" not in cache:
        raise ValueError("stale or missing forward cache; run forward(training=True) first")
    cfg = params.config
    t = params.tensors
    labels = np.atleast_1d(labels)
    B = cache["x"].shape[0]
    N = cfg.window_len
    dk = cfg.d_model // cfg.n_heads
    dtype = t["mlp_w2"].dtype
    w = np.ones(cfg.n_classes, dtype=dtype) if class_weights is None else np.asarray(class_weights, dtype=dtype)

    onehot = np.zeros((B, cfg.n_classes), dtype=dtype)
    onehot[np.arange(B), labels] = 1.0
    dlogits = w[labels][:, None] * (cache["probs"] - onehot) / B

    g = {}
    g["mlp_w2"] = cache["r1d"].T @ dlogits
    g["mlp_b2"] = dlogits.sum(axis=0)
    dr1d = dlogits @ t["mlp_w2"].T
    dr1 = dr1d * cache["mask_m"] if cache["mask_m"] is not None else dr1d
    dh1 = dr1 * (cache["h1"] > 0)
    g["mlp_w1"] = cache["z"].T @ dh1
    g["mlp_b1"] = dh1.sum(axis=0)
    dz = dh1 @ t["mlp_w1"].T

    F = cfg.fc_dim
    for c in range(cfg.channels):
        p = f"c{c}."
        cc = cache[p]
        dpooled = dz[:, c * F : (c + 1) * F]  # (B, F)
        dfrelu = np.broadcast_to(dpooled[:, None, :] / N, (B, N, F))
        dfc = dfrelu * (cc["fc"] > 0)
        g[p + "fc_w"] = np.tensordot(cc["bn"], dfc, axes=([0, 1], [0, 1]))
        g[p + "fc_b"] = dfc.sum(axis=(0, 1))
        dbn = dfc @ t[p + "fc_w"].T  # (B, N, D)

        # batch-norm backward (training statistics over B*N elements)
        g[p + "bn_gamma"] = (dbn * cc["xhat"]).sum(axis=(0, 1))
        g[p + "bn_beta"] = dbn.sum(axis=(0, 1))
        M = B * N
        dxhat = dbn * t[p + "bn_gamma"]
        xmu = cc["att_out"] - cc["mu"]
        ivar = cc["ivar"]
        dvar = (dxhat * xmu).sum(axis=(0, 1)) * (-0.5) * ivar**3
        dmu = -(dxhat.sum(axis=(0, 1))) * ivar + dvar * (-2.0) * xmu.mean(axis=(0, 1))
        datt = dxhat * ivar + dvar * 2.0 * xmu / M + dmu / M

        if cc["mask_a"] is not None:
            datt = datt * cc["mask_a"]

        g[p + "wo"] = np.tensordot(cc["merged"], datt, axes=([0, 1], [0, 1]))
        g[p + "bo"] = datt.sum(axis=(0, 1))
        dmerged = datt @ t[p + "wo"].T
        dctx = dmerged.reshape(B, N, cfg.n_heads, dk).transpose(0, 2, 1, 3)

        attn, ctx = cc["attn"], cc["ctx"]
        vh = cc["v"].reshape(B, N, cfg.n_heads, dk).transpose(0, 2, 1, 3)
        qh = cc["q"].reshape(B, N, cfg.n_heads, dk).transpose(0, 2, 1, 3)
        kh = cc["k"].reshape(B, N, cfg.n_heads, dk).transpose(0, 2, 1, 3)
        dattn = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = attn.transpose(0, 1, 3, 2) @ dctx
        # softmax backward over the key axis
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= float(np.sqrt(dk))
        dqh = dscores @ kh
        dkh = dscores.transpose(0, 1, 3, 2) @ qh

        def unheads(zh):
            return zh.transpose(0, 2, 1, 3).reshape(B, N, cfg.d_model)

        dq, dkk, dv = unheads(dqh), unheads(dkh), unheads(dvh)
        crelu = cc["crelu"]
        g[p + "wq"] = np.tensordot(crelu, dq, axes=([0, 1], [0, 1]))
        g[p + "wk"] = np.tensordot(crelu, dkk, axes=([0, 1], [0, 1]))
        g[p + "wv"] = np.tensordot(crelu, dv, axes=([0, 1], [0, 1]))
        g[p + "bq"] = dq.sum(axis=(0, 1))
        g[p + "bk"] = dkk.sum(axis=(0, 1))
        g[p + "bv"] = dv.sum(axis=(0, 1))
        dcrelu = dq @ t[p + "wq"].T + dkk @ t[p + "wk"].T + dv @ t[p + "wv"].T
        dconv = dcrelu * (cc["conv"] > 0)

        K, D = cfg.conv_kernel, cfg.d_model
        dconv_flat = dconv.reshape(B * N, -1)
        dwmat = dconv_flat.T @ cc["win"].reshape(B * N, -1)  # (C, D*K)
        g[p + "conv_w"] = dwmat.reshape(-1, D, K).transpose(0, 2, 1)
        g[p + "conv_b"] = dconv.sum(axis=(0, 1))
        wmat = t[p + "conv_w"].transpose(0, 2, 1).reshape(-1, D * K)
        dwin = (dconv_flat @ wmat).reshape(B, N, D, K)
        pad = (K - 1) // 2
        dhp = np.zeros((B, N + 2 * pad, D), dtype=dtype)
        for kk in range(K):
            dhp[:, kk : kk + N, :] += dwin[:, :, :, kk]
        dh = dhp[:, pad : pad + N, :]

        g[p + "pos"] = dh.sum(axis=0)
        g[p + "emb_b"] = dh.sum(axis=(0, 1))
        g[p + "emb_w"] = np.tensordot(cc["xc"], dh, axes=([0, 1], [0, 1]))
    return g


def predict(params: MceParams, window: np.ndarray) -> Prediction:
    """Inference-mode prediction for one 3xN window, with wall-clock latency."""
    t0 = time.perf_counter()
    probs, _, _ = forward(params, window, training=False)
    ms = (time.perf_counter() - t0) * 1e3
    return Prediction(probs=probs, argmax=int(np.argmax(probs)), latency_ms=ms)


def predict_batch(params: MceParams, windows: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Inference over a stack of windows, chunked to bound attention memory."""
    windows = np.asarray(windows)
    if windows.ndim == 2:
        windows = windows[None]
    out = []
    for lo in range(0, len(windows), chunk):
        probs, _, _ = forward(params, windows[lo : lo + chunk], training=False)
        out.append(np.atleast_2d(probs))
    return np.concatenate(out, axis=0)


def accuracy(params: MceParams, windows: np.ndarray, labels: np.ndarray) -> float:
    preds = predict_batch(params, windows).argmax(axis=1)
    return float(np.mean(preds == labels))


def train(
    windows: np.ndarray,
    labels: np.ndarray,
    mce_config: MceConfig = MceConfig(),
    train_config: TrainConfig = TrainConfig(),
    val_windows: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    init: MceParams | None = None,
    history: list | None = None,
    dtype=np.float32,
):
    """Full-batch-shuffled minibatch training with adaptive moment updates.

    Runs in float32 by default (the finite-difference tests use float64).
    Returns (params, history); history holds one dict per epoch with the
    mean train loss and validation accuracy (train accuracy when no
    validation split is given). Raises TrainingDiverged carrying the last
    good parameters if the loss goes non-finite.
    """
    windows = np.asarray(windows, dtype=dtype)
    labels = np.asarray(labels, dtype=int)
    if len(windows) == 0:
        raise ValueError("empty training set")
    cfg, tc = mce_config, train_config
    rng = np.random.default_rng(np.random.SeedSequence([0x7A1, tc.seed]))
    params = init.copy() if init is not None else init_params(cfg, tc.seed, dtype=dtype)
    params.tensors = {k: v.astype(dtype) for k, v in params.tensors.items()}
    params.bn_state = {k: v.astype(dtype) for k, v in params.bn_state.items()}
    history = list(history) if history else []

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    step = 0
    last_good = params.copy()
    weights = np.asarray(tc.class_weights, dtype=float)

    for epoch in range(tc.epochs):
        perm = rng.permutation(len(windows))
        epoch_losses = []
        for lo in range(0, len(perm), tc.batch_size):
            idx = perm[lo : lo + tc.batch_size]
            xb, yb = windows[idx], labels[idx]
            probs, _, cache = forward(params, xb, training=True, rng=rng)
            batch_loss = loss(probs, yb, weights)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}", last_good_params=last_good, history=history
                )
            grads = backward(params, cache, yb, weights)
            step += 1
            bc1 = 1 - beta1**step
            bc2 = 1 - beta2**step
            for key, gr in grads.items():
                m[key] = beta1 * m[key] + (1 - beta1) * gr
                v[key] = beta2 * v[key] + (1 - beta2) * gr * gr
                params.tensors[key] -= tc.learning_rate * (m[key] / bc1) / (np.sqrt(v[key] / bc2) + eps)
            epoch_losses.append(batch_loss)
        if val_windows is not None and len(val_windows):
            val_acc = accuracy(params, val_windows, val_labels)
        else:
            val_acc = accuracy(params, windows, labels)
        history.append({"epoch": len(history), "train_loss": float(np.mean(epoch_losses)), "val_acc": val_acc})
        last_good = params.copy()
    return params, history


# ---------------------------------------------------------------------------
# Checkpoint format (single JSON file, versioned)

CHECKPOINT_VERSION = 1


def _enc(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype=np.float64).reshape(d["shape"]).copy()


def save_checkpoint(path, params: MceParams, norm_stats: NormStats, meta: dict | None = None):
    doc = {
        "v": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "tensors": {k: _enc(a) for k, a in params.tensors.items()},
        "bn_state": {k: _enc(a) for k, a in params.bn_state.items()},
        "norm": norm_stats.to_dict(),
        "meta": meta or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path, dtype=np.float64):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("v") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('v')!r}")
    cfg = MceConfig(**doc["config"])
    params = MceParams(
        config=cfg,
        tensors={k: _dec(d).astype(dtype) for k, d in doc["tensors"].items()},
        bn_state={k: _dec(d).astype(dtype) for k, d in doc["bn_state"].items()},
    )
    return params, NormStats.from_dict(doc["norm"]), doc.get("meta", {})


@dataclass
class Recognizer:
    """Trained parameters plus the frozen normalization to apply first."""

    params: MceParams
    norm: NormStats
    meta: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "Recognizer":
        params, norm, meta = load_checkpoint(path)
        return cls(params=params, norm=norm, meta=meta)

    def save(self, path):
        save_checkpoint(path, self.params, self.norm, self.meta)

    @property
    def window_len(self) -> int:
        return self.params.config.window_len

    def predict_window(self, raw_window: np.ndarray) -> Prediction:
        x = (raw_window - self.norm.mean[:, None]) / self.norm.std[:, None]
        return predict(self.params, x)

    def predict_proba(self, raw_windows: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw_windows, dtype=float)
        if raw.ndim == 2:
            raw = raw[None]
        x = (raw - self.norm.mean[None, :, None]) / self.norm.std[None, :, None]
        return predict_batch(self.params, x)
