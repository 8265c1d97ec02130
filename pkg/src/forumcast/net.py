"""Stacked bidirectional LSTM with highway carry gates, in numpy.

Layer 1 is a plain bidirectional LSTM. Every higher layer adds a carry gate
per direction that lets the lower layer's cell state (same direction, same
time step) flow straight into its own cell::

    d_t = sigmoid(Ud x_t + Wd * c_lower_t + bd)          (Wd elementwise)
    c_t = d_t * c_lower_t + f_t * c_{t-1} + i_t * tanh(Uc x_t + Wc h_{t-1} + bc)

The regression head reads the final layer's concatenated hidden state at the
last time step. Training minimises mean squared error with AdamW and early
stopping on a chronological validation tail. Everything is float64 and
deterministic given the seed.

Parameter layout per layer ``l`` and direction ``fw``/``bw``: ``U`` is
``[4H, in]``, ``W`` is ``[4H, H]`` and ``b`` is ``[4H]`` with gate blocks in the
order input, forget, output, candidate. Highway layers add ``Ud [H, in]``,
``Wd [H]`` and ``bd [H]``.
"""

from __future__ import annotations

import base64
import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DivergenceError, SchemaError, ValidationError
from .seeding import substream

logger = logging.getLogger(__name__)

DIRECTIONS = ("fw", "bw")
CHECKPOINT_FORMAT = "forumcast-bilstm-highway"


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TrainConfig:
    dropout: float = 0.2
    batch: int = 32
    hidden: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-2
    max_epochs: int = 1000
    patience: int = 20
    seed: int = 0
    layers: int = 2
    highway: bool = True
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1 or self.batch < 1 or self.max_epochs < 1:
            raise ValidationError("hidden, layers, batch and max_epochs must be positive")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must be in [0, 1)")
        if self.lr <= 0 or self.weight_decay < 0 or self.patience < 0:
            raise ValidationError("lr must be positive; weight_decay and patience non-negative")
        if not 0 <= self.val_fraction < 1:
            raise ValidationError("val_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# single cells


@dataclass
class CellParams:
    U: np.ndarray
    W: np.ndarray
    b: np.ndarray
    Ud: np.ndarray | None = None
    Wd: np.ndarray | None = None
    bd: np.ndarray | None = None

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def is_highway(self) -> bool:
        return self.Ud is not None


def _cell_step(p: CellParams, x, h_prev, c_prev, c_low=None):
    H = p.hidden
    if x.shape[-1] != p.U.shape[1] or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ValidationError("cell input shapes do not match parameters")
    z = x @ p.U.T + h_prev @ p.W.T + p.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c = f * c_prev + i * g
    d = None
    if c_low is not None:
        if c_low.shape[-1] != H:
            raise ValidationError("lower cell state has wrong width")
        d = sigmoid(x @ p.Ud.T + p.Wd * c_low + p.bd)
        c = c + d * c_low
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, c_low, i, f, o, g, d, tc)


def lstm_cell_forward(p: CellParams, x, h_prev, c_prev):
    h, c, _ = _cell_step(p, np.asarray(x, float), np.asarray(h_prev, float), np.asarray(c_prev, float))
    return h, c


def highway_cell_forward(p: CellParams, x, h_prev, c_prev, c_lower):
    if not p.is_highway:
        raise ValidationError("cell has no carry-gate parameters")
    h, c, _ = _cell_step(
        p,
        np.asarray(x, float),
        np.asarray(h_prev, float),
        np.asarray(c_prev, float),
        np.asarray(c_lower, float),
    )
    return h, c


def gate_values(p: CellParams, x, h_prev, c_low=None) -> dict:
    """Gate activations for one step, for inspection."""
    H = p.hidden
    c0 = np.zeros(np.shape(h_prev))
    _, _, cache = _cell_step(p, np.asarray(x, float), np.asarray(h_prev, float), c0, c_low)
    _, _, _, _, i, f, o, g, d, tc = cache
    out = {"i": i, "f": f, "o": o, "g": g, "tanh_c": tc}
    if d is not None:
        out["d"] = d
    return out


# ---------------------------------------------------------------------------
# sequences


def _run_direction(p: CellParams, xs, c_lows, reverse: bool):
    B, T, _ = xs.shape
    H = p.hidden
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    caches = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        low = None if c_lows is None else c_lows[:, t]
        h, c, caches[t] = _cell_step(p, xs[:, t], h, c, low)
        hs[:, t] = h
        cs[:, t] = c
    return hs, cs, caches


def _back_direction(p: CellParams, caches, dhs, dcs_ext, reverse: bool):
    B, T, H = dhs.shape
    grads = {"U": np.zeros_like(p.U), "W": np.zeros_like(p.W), "b": np.zeros_like(p.b)}
    if p.is_highway:
        grads.update(Ud=np.zeros_like(p.Ud), Wd=np.zeros_like(p.Wd), bd=np.zeros_like(p.bd))
    dxs = np.zeros((B, T, p.U.shape[1]))
    dc_lows = np.zeros((B, T, H)) if p.is_highway else None
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        x, h_prev, c_prev, c_low, i, f, o, g, d, tc = caches[t]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        if dcs_ext is not None:
            dc = dc + dcs_ext[:, t]
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        grads["U"] += dz.T @ x
        grads["W"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dx = dz @ p.U
        if d is not None:
            dzd = dc * c_low * d * (1.0 - d)
            grads["Ud"] += dzd.T @ x
            grads["Wd"] += (dzd * c_low).sum(axis=0)
            grads["bd"] += dzd.sum(axis=0)
            dx += dzd @ p.Ud
            dc_lows[:, t] = dc * d + dzd * p.Wd
        dxs[:, t] = dx
        dh_next = dz @ p.W
        dc_next = dc * f
    return dxs, dc_lows, grads


def bilstm_layer_forward(fw: CellParams, bw: CellParams, xs, c_lower=None):
    """Run both directions over ``xs [T, in]`` or ``[B, T, in]``.

    Returns ``(outputs, cells)`` where ``outputs`` is ``[.., T, 2H]`` holding
    ``[h_fw ; h_bw]`` per step and ``cells`` maps direction to its cell states.
    """
    xs = np.asarray(xs, dtype=float)
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[None]
        if c_lower is not None:
            c_lower = {k: v[None] for k, v in c_lower.items()}
    if xs.shape[1] == 0:
        raise ValidationError("empty input sequence")
    h_f, c_f, _ = _run_direction(fw, xs, None if c_lower is None else c_lower["fw"], False)
    h_b, c_b, _ = _run_direction(bw, xs, None if c_lower is None else c_lower["bw"], True)
    out = np.concatenate([h_f, h_b], axis=-1)
    cells = {"fw": c_f, "bw": c_b}
    if squeeze:
        return out[0], {k: v[0] for k, v in cells.items()}
    return out, cells


# ---------------------------------------------------------------------------
# model


def param_names(layers: int, highway: bool) -> list[str]:
    names = []
    for l in range(layers):
        for dname in DIRECTIONS:
            base = f"L{l + 1}.{dname}."
            names += [base + "U", base + "W", base + "b"]
            if highway and l > 0:
                names += [base + "Ud", base + "Wd", base + "bd"]
    return names + ["head.w", "head.b"]


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data) -> "Normalizer":
        data = np.asarray(data, dtype=float)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(np.atleast_1d(mean), np.atleast_1d(std))

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass
class ForecastModel:
    config: TrainConfig
    input_width: int
    params: dict
    feature_names: list = field(default_factory=list)
    feature_norm: Normalizer | None = None
    target_norm: Normalizer | None = None
    # free-form run settings saved with the checkpoint (window, split)
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, input_width: int, config: TrainConfig, feature_names=None) -> "ForecastModel":
        rng = substream(config.seed, "init")
        H = config.hidden
        params = {}
        for l in range(config.layers):
            width = input_width if l == 0 else 2 * H
            for dname in DIRECTIONS:
                base = f"L{l + 1}.{dname}."
                bound = 1.0 / math.sqrt(width + H)
                params[base + "U"] = rng.uniform(-bound, bound, (4 * H, width))
                params[base + "W"] = rng.uniform(-bound, bound, (4 * H, H))
                b = rng.uniform(-bound, bound, 4 * H)
                b[H : 2 * H] = 1.0
                params[base + "b"] = b
                if config.highway and l > 0:
                    hb = 1.0 / math.sqrt(width + 1)
                    params[base + "Ud"] = rng.uniform(-hb, hb, (H, width))
                    params[base + "Wd"] = rng.uniform(-hb, hb, H)
                    params[base + "bd"] = rng.uniform(-hb, hb, H)
        hb = 1.0 / math.sqrt(2 * H)
        params["head.w"] = rng.uniform(-hb, hb, 2 * H)
        params["head.b"] = np.zeros(1)
        return cls(config, input_width, params, list(feature_names or []))

    def cell(self, layer: int, direction: str) -> CellParams:
        base = f"L{layer}.{direction}."
        p = self.params
        return CellParams(
            p[base + "U"], p[base + "W"], p[base + "b"],
            p.get(base + "Ud"), p.get(base + "Wd"), p.get(base + "bd"),
        )

    def copy(self) -> "ForecastModel":
        return copy.deepcopy(self)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward / backward --------------------------------------------------

    def dropout_masks(self, batch: int, steps: int, rng) -> list:
        p = self.config.dropout
        shape = (batch, steps, 2 * self.config.hidden)
        if p == 0:
            return [np.ones(shape) for _ in range(self.config.layers)]
        return [(rng.random(shape) >= p) / (1.0 - p) for _ in range(self.config.layers)]

    def forward(self, X, masks=None):
        """Predictions for ``X [B, T, F]``; ``masks`` (one per layer) enable dropout."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.input_width:
            raise ValidationError(f"expected input [B, T, {self.input_width}], got {X.shape}")
        if X.shape[1] == 0:
            raise ValidationError("empty input window")
        layers = []
        inp = X
        lower = None
        for l in range(1, self.config.layers + 1):
            fw, bw = self.cell(l, "fw"), self.cell(l, "bw")
            use_low = lower if fw.is_highway else None
            hf, cf, kf = _run_direction(fw, inp, None if use_low is None else use_low["fw"], False)
            hb, cb, kb = _run_direction(bw, inp, None if use_low is None else use_low["bw"], True)
            out = np.concatenate([hf, hb], axis=-1)
            mask = None if masks is None else masks[l - 1]
            dropped = out if mask is None else out * mask
            layers.append({"caches": (kf, kb), "mask": mask, "inp": inp, "highway": use_low is not None})
            lower = {"fw": cf, "bw": cb}
            inp = dropped
        last = inp[:, -1, :]
        pred = last @ self.params["head.w"] + self.params["head.b"][0]
        return pred, {"layers": layers, "last": last, "T": X.shape[1]}

    def backward(self, cache, dpred) -> dict:
        """Gradients of ``sum(dpred * pred)`` w.r.t. every parameter."""
        dpred = np.asarray(dpred, dtype=float)
        H = self.config.hidden
        grads = {"head.w": cache["last"].T @ dpred, "head.b": np.array([dpred.sum()])}
        B, T = dpred.shape[0], cache["T"]
        d_inp = np.zeros((B, T, 2 * H))
        d_inp[:, -1, :] = np.outer(dpred, self.params["head.w"])
        dc_ext = {"fw": None, "bw": None}
        for l in range(self.config.layers, 0, -1):
            rec = cache["layers"][l - 1]
            d_out = d_inp if rec["mask"] is None else d_inp * rec["mask"]
            kf, kb = rec["caches"]
            dxf, dlf, gf = _back_direction(self.cell(l, "fw"), kf, d_out[..., :H], dc_ext["fw"], False)
            dxb, dlb, gb = _back_direction(self.cell(l, "bw"), kb, d_out[..., H:], dc_ext["bw"], True)
            for dname, g in (("fw", gf), ("bw", gb)):
                for k, v in g.items():
                    grads[f"L{l}.{dname}.{k}"] = v
            d_inp = dxf + dxb
            dc_ext = {"fw": dlf, "bw": dlb} if rec["highway"] else {"fw": None, "bw": None}
        return grads

    def loss_and_grads(self, X, y, masks=None):
        pred, cache = self.forward(X, masks)
        resid = pred - np.asarray(y, dtype=float)
        loss = float(np.mean(resid**2))
        return loss, self.backward(cache, 2.0 * resid / resid.size)

    def predict_normalized(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def model_forward(self, window, mode: str = "eval", rng=None) -> float:
        """Prediction for one normalized window ``[T, F]``."""
        window = np.asarray(window, dtype=float)[None]
        masks = None
        if mode == "train":
            rng = rng if rng is not None else substream(self.config.seed, "dropout")
            masks = self.dropout_masks(1, window.shape[1], rng)
        elif mode != "eval":
            raise ValidationError(f"unknown mode {mode!r}")
        return float(self.forward(window, masks)[0][0])

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        """JSON container with shape-tagged little-endian float64 tensors.

        Tensor order is fixed: parameters in :func:`param_names` order, then
        ``norm.feature_mean``, ``norm.feature_std``, ``norm.target_mean``,
        ``norm.target_std``.
        """
        tensors = [(n, self.params[n]) for n in param_names(self.config.layers, self.config.highway)]
        if self.feature_norm is not None:
            tensors += [
                ("norm.feature_mean", self.feature_norm.mean),
                ("norm.feature_std", self.feature_norm.std),
                ("norm.target_mean", self.target_norm.mean),
                ("norm.target_std", self.target_norm.std),
            ]
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "config": asdict(self.config),
            "input_width": self.input_width,
            "feature_names": list(self.feature_names),
            "meta": dict(self.meta),
            "tensors": [_encode(n, t) for n, t in tensors],
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ForecastModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise SchemaError(f"{path}: not a forecast model checkpoint")
        config = TrainConfig.from_dict(doc["config"])
        tensors = dict(_decode(t) for t in doc["tensors"])
        params = {n: tensors[n] for n in param_names(config.layers, config.highway)}
        model = cls(config, int(doc["input_width"]), params, doc.get("feature_names", []), meta=doc.get("meta", {}))
        if "norm.feature_mean" in tensors:
            model.feature_norm = Normalizer(tensors["norm.feature_mean"], tensors["norm.feature_std"])
            model.target_norm = Normalizer(tensors["norm.target_mean"], tensors["norm.target_std"])
        return model


def _encode(name, arr) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "name": name,
        "shape": list(arr.shape),
        "dtype": "<f8",
        "data": base64.b64encode(arr.tobytes(order="C")).decode("ascii"),
    }


def _decode(doc) -> tuple:
    if doc["dtype"] != "<f8":
        raise SchemaError(f"tensor {doc['name']}: unsupported dtype {doc['dtype']}")
    arr = np.frombuffer(base64.b64decode(doc["data"]), dtype="<f8").reshape(doc["shape"]).copy()
    return doc["name"], arr


# ---------------------------------------------------------------------------
# training


class AdamW:
    """Adam with weight decay applied directly to the weights."""

    def __init__(self, params: dict, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p *= 1.0 - self.lr * self.wd
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def train(model: ForecastModel, X, y, config: TrainConfig | None = None) -> tuple[ForecastModel, TrainHistory]:
    """Fit ``model`` on normalized windows ``X [N, T, F]`` and targets ``y [N]``.

    The chronologically last ``val_fraction`` of the samples (at least one)
    is held out for early stopping; with ``val_fraction == 0`` the training
    loss drives early stopping instead. The parameters of the best epoch are
    restored. Returns a new model and the loss history.
    """
    config = config or model.config
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    N = X.shape[0]
    if N < 2:
        raise ValidationError("need at least two training samples")
    if y.shape != (N,):
        raise ValidationError("targets must be one per sample")
    n_val = 0 if config.val_fraction == 0 else max(1, int(math.floor(N * config.val_fraction)))
    n_val = min(n_val, N - 1)
    Xt, yt = X[: N - n_val], y[: N - n_val]
    Xv, yv = X[N - n_val :], y[N - n_val :]
    model = model.copy()
    opt = AdamW(model.params, config.lr, config.weight_decay, config.beta1, config.beta2, config.eps)
    shuffle_rng = substream(config.seed, "shuffle")
    dropout_rng = substream(config.seed, "dropout")
    hist = TrainHistory()
    best = math.inf
    best_params = copy.deepcopy(model.params)
    wait = 0
    n = Xt.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start : start + config.batch]
            masks = model.dropout_masks(idx.size, X.shape[1], dropout_rng) if config.dropout > 0 else None
            loss, grads = model.loss_and_grads(Xt[idx], yt[idx], masks)
            if not math.isfinite(loss):
                raise DivergenceError(f"training loss non-finite at epoch {epoch}", epoch=epoch)
            opt.step(model.params, grads)
        train_loss = float(np.mean((model.predict_normalized(Xt) - yt) ** 2))
        val_loss = float(np.mean((model.predict_normalized(Xv) - yv) ** 2)) if n_val else train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergenceError(f"training loss non-finite at epoch {epoch}", epoch=epoch)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.stopped_epoch = epoch
        if val_loss < best:
            best = val_loss
            best_params = copy.deepcopy(model.params)
            hist.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait > config.patience:
                break
    model.params = best_params
    logger.debug("stopped at epoch %d, best %d (val %.6g)", hist.stopped_epoch, hist.best_epoch, best)
    return model, hist
