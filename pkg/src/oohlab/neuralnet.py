"""Small convolutional regressor in numpy (float64), plus a linear baseline.

Architecture for an input of ``L`` layers on an ``S x S`` grid::

    conv 3x3 (F filters, pad 1) -> ReLU -> conv 3x3 (2F, pad 1) -> ReLU
    -> 2x2 average pool -> flatten ++ [capacity] -> fc H -> ReLU -> dropout
    -> fc H -> ReLU -> linear output

With ``use_conv=False`` the convolutional stage is skipped and the raw counts
feed the dense layers (used for the no-CNN ablation).  Training minimises the
mean Huber loss with Adam.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"OOHNET01"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    huber_delta: float = 1.0
    dropout: float = 0.0
    epochs: int = 10
    adam: tuple[float, float, float] = (0.9, 0.999, 1e-8)

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.huber_delta > 0 and self.epochs > 0):
            raise ValueError("learning_rate, batch_size, huber_delta and epochs must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def huber(pred, target, delta: float = 1.0):
    """Elementwise Huber loss of ``pred - target``."""
    x = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def huber_grad(pred, target, delta: float = 1.0):
    x = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return np.clip(x, -delta, delta)


# ---------------------------------------------------------------------------
# convolution helpers (3x3, stride 1, padding 1), channels-last internally


def _im2col(x: np.ndarray) -> np.ndarray:
    """Patches of a ``(B, S, S, C)`` array as rows ordered (ky, kx, c)."""
    B, S, _, C = x.shape
    xp = np.zeros((B, S + 2, S + 2, C))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((B, S, S, 3, 3, C))
    for ky in range(3):
        for kx in range(3):
            cols[:, :, :, ky, kx] = xp[:, ky:ky + S, kx:kx + S]
    return cols.reshape(B * S * S, 9 * C)


def _col2im(dcols: np.ndarray, shape) -> np.ndarray:
    B, S, _, C = shape
    d = dcols.reshape(B, S, S, 3, 3, C)
    dxp = np.zeros((B, S + 2, S + 2, C))
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky:ky + S, kx:kx + S] += d[:, :, :, ky, kx]
    return dxp[:, 1:-1, 1:-1]


def _kernel_matrix(W: np.ndarray) -> np.ndarray:
    """(F, C, 3, 3) kernel as a (9C, F) matrix matching :func:`_im2col` rows."""
    return W.transpose(2, 3, 1, 0).reshape(-1, W.shape[0])


def _conv_forward(x, W, b):
    B, S, _, _ = x.shape
    cols = _im2col(x)
    out = cols @ _kernel_matrix(W) + b
    return out.reshape(B, S, S, W.shape[0]), cols


def _conv_backward(dout, cols, W, x_shape, need_dx: bool):
    F, C = W.shape[:2]
    G = dout.reshape(-1, F)
    dW = (cols.T @ G).reshape(3, 3, C, F).transpose(3, 2, 0, 1)
    db = G.sum(axis=0)
    if not need_dx:
        return dW, db, None
    return dW, db, _col2im(G @ _kernel_matrix(W).T, x_shape)


def _pool_forward(x):
    B, S, _, C = x.shape
    P = S // 2
    return x[:, :2 * P, :2 * P].reshape(B, P, 2, P, 2, C).mean(axis=(2, 4))


def _pool_backward(dout, shape):
    B, S, _, C = shape
    P = S // 2
    dx = np.zeros(shape)
    dx[:, :2 * P, :2 * P] = np.repeat(np.repeat(dout * 0.25, 2, axis=1), 2, axis=2)
    return dx


def _he_uniform(rng, shape, fan_in):
    lim = math.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape)


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class Geometry:
    layers: int = 3
    side: int = 10
    filters: int = 32
    hidden: int = 128
    dropout: float = 0.0
    use_conv: bool = True

    @property
    def pooled_side(self) -> int:
        return self.side // 2

    @property
    def feature_size(self) -> int:
        if self.use_conv:
            return 2 * self.filters * self.pooled_side ** 2 + 1
        return self.layers * self.side ** 2 + 1


class Network:
    """Cost regressor on encoded states; parameters live in ``self.params``."""

    def __init__(self, geometry: Geometry = Geometry(), seed: int | None = 0, zero: bool = False):
        g = self.geometry = geometry
        if g.use_conv and g.side < 2:
            raise ValueError("grid side must be >= 2 for pooling")
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        if g.use_conv:
            F = g.filters
            p["conv1.W"] = _he_uniform(rng, (F, g.layers, 3, 3), g.layers * 9)
            p["conv1.b"] = np.zeros(F)
            p["conv2.W"] = _he_uniform(rng, (2 * F, F, 3, 3), F * 9)
            p["conv2.b"] = np.zeros(2 * F)
        n_in = g.feature_size
        p["fc1.W"] = _he_uniform(rng, (n_in, g.hidden), n_in)
        p["fc1.b"] = np.zeros(g.hidden)
        p["fc2.W"] = _he_uniform(rng, (g.hidden, g.hidden), g.hidden)
        p["fc2.b"] = np.zeros(g.hidden)
        p["out.W"] = _he_uniform(rng, (g.hidden, 1), g.hidden)
        p["out.b"] = np.zeros(1)
        if zero:
            for v in p.values():
                v[...] = 0.0
        self.params = p
        log.debug("network %s with %d parameters", g, self.n_params)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def _check_input(self, x, cap):
        g = self.geometry
        if x.ndim != 4 or x.shape[1:] != (g.layers, g.side, g.side):
            raise ValueError(f"input shape {x.shape[1:]} does not match network geometry "
                             f"{(g.layers, g.side, g.side)}")
        if cap.shape != (x.shape[0],):
            raise ValueError("one capacity value per sample required")

    def forward(self, x, cap, train: bool = False, rng: np.random.Generator | None = None):
        """Predictions ``(B,)`` and the cache needed by :meth:`backward`."""
        x = np.asarray(x, dtype=float)
        cap = np.asarray(cap, dtype=float)
        self._check_input(x, cap)
        p, g = self.params, self.geometry
        cache = {"x_shape": x.shape}
        B = x.shape[0]
        if g.use_conv:
            z1, cols1 = _conv_forward(x.transpose(0, 2, 3, 1), p["conv1.W"], p["conv1.b"])
            a1 = np.maximum(z1, 0.0)
            z2, cols2 = _conv_forward(a1, p["conv2.W"], p["conv2.b"])
            a2 = np.maximum(z2, 0.0)
            pooled = _pool_forward(a2)
            cache.update(cols1=cols1, z1=z1, a1=a1, cols2=cols2, z2=z2, a2_shape=a2.shape,
                         pooled_shape=pooled.shape)
            feats = np.concatenate([pooled.reshape(B, -1), cap[:, None]], axis=1)
        else:
            feats = np.concatenate([x.reshape(B, -1), cap[:, None]], axis=1)
        assert feats.shape[1] == g.feature_size
        h1p = feats @ p["fc1.W"] + p["fc1.b"]
        h1 = np.maximum(h1p, 0.0)
        mask = None
        if train and g.dropout > 0.0:
            if rng is None:
                raise ValueError("dropout in training mode needs an rng")
            mask = (rng.random(h1.shape) >= g.dropout) / (1.0 - g.dropout)
            h1 = h1 * mask
        h2p = h1 @ p["fc2.W"] + p["fc2.b"]
        h2 = np.maximum(h2p, 0.0)
        y = (h2 @ p["out.W"] + p["out.b"])[:, 0]
        cache.update(feats=feats, h1p=h1p, h1=h1, mask=mask, h2p=h2p, h2=h2)
        return y, cache

    def predict(self, x, cap) -> np.ndarray:
        return self.forward(x, cap, train=False)[0]

    def predict_encoded(self, encs) -> np.ndarray:
        from .encoding import stack

        x, cap = stack(encs)
        return self.predict(x, cap)

    def backward(self, cache, dy) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dy * y)`` with respect to every parameter."""
        p, g = self.params, self.geometry
        dy = np.asarray(dy, dtype=float)[:, None]
        grads = {"out.W": cache["h2"].T @ dy, "out.b": dy.sum(axis=0)}
        dh2 = (dy @ p["out.W"].T) * (cache["h2p"] > 0)
        grads["fc2.W"] = cache["h1"].T @ dh2
        grads["fc2.b"] = dh2.sum(axis=0)
        dh1 = dh2 @ p["fc2.W"].T
        if cache["mask"] is not None:
            dh1 = dh1 * cache["mask"]
        dh1 = dh1 * (cache["h1p"] > 0)
        grads["fc1.W"] = cache["feats"].T @ dh1
        grads["fc1.b"] = dh1.sum(axis=0)
        if g.use_conv:
            dfeat = dh1 @ p["fc1.W"].T
            dpooled = dfeat[:, :-1].reshape(cache["pooled_shape"])
            da2 = _pool_backward(dpooled, cache["a2_shape"])
            dz2 = da2 * (cache["z2"] > 0)
            grads["conv2.W"], grads["conv2.b"], da1 = _conv_backward(
                dz2, cache["cols2"], p["conv2.W"], cache["a1"].shape, need_dx=True)
            dz1 = da1 * (cache["z1"] > 0)
            grads["conv1.W"], grads["conv1.b"], _ = _conv_backward(
                dz1, cache["cols1"], p["conv1.W"], None, need_dx=False)
        return {k: grads[k].reshape(p[k].shape) for k in p}

    def loss_and_grads(self, x, cap, y, delta: float = 1.0, train: bool = False, rng=None):
        pred, cache = self.forward(x, cap, train=train, rng=rng)
        n = len(pred)
        loss = float(huber(pred, y, delta).mean())
        grads = self.backward(cache, huber_grad(pred, y, delta) / n)
        return loss, grads

    def copy(self) -> "Network":
        new = Network.__new__(Network)
        new.geometry = self.geometry
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    """In-place Adam update with bias correction; aborts on non-finite gradients."""
    for k, gk in grads.items():
        if not np.all(np.isfinite(gk)):
            raise FloatingPointError(f"non-finite gradient in {k} at step {state.t + 1}")
    b1, b2, eps = cfg.adam
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, gk in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(gk)
            state.v[k] = np.zeros_like(gk)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * gk
        v *= b2
        v += (1.0 - b2) * gk * gk
        params[k] -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)


def evaluate_loss(net: Network, x, cap, y, delta: float = 1.0, batch: int = 1024) -> float:
    total = 0.0
    for i in range(0, len(y), batch):
        pred = net.predict(x[i:i + batch], cap[i:i + batch])
        total += float(huber(pred, y[i:i + batch], delta).sum())
    return total / max(len(y), 1)


def train(net: Network, x, cap, y, cfg: TrainConfig, rng: np.random.Generator,
          adam: AdamState | None = None, validation=None) -> tuple[list[float], list[float]]:
    """Mini-batch Adam on the mean Huber loss.

    Returns per-epoch mean training loss and, when ``validation=(x, cap, y)``
    is given, per-epoch held-out loss (an extra leading entry holds the loss
    before training).
    """
    x = np.asarray(x, dtype=float)
    cap = np.asarray(cap, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    if cfg.dropout != net.geometry.dropout:
        net.geometry = Geometry(**{**asdict(net.geometry), "dropout": cfg.dropout})
    adam = adam if adam is not None else AdamState()
    trace, held = [], []
    if validation is not None:
        held.append(evaluate_loss(net, *validation, delta=cfg.huber_delta))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, grads = net.loss_and_grads(x[idx], cap[idx], y[idx], cfg.huber_delta, train=True, rng=rng)
            adam_step(net.params, grads, adam, cfg)
            total += loss * len(idx)
        trace.append(total / n)
        if validation is not None:
            held.append(evaluate_loss(net, *validation, delta=cfg.huber_delta))
        log.info("epoch %d loss %.5f", epoch + 1, trace[-1])
    return trace, held


@dataclass(frozen=True)
class GradCheck:
    max_rel_error: float
    checked: int
    skipped: int  # probes whose +-h step crossed a ReLU or Huber kink


def _rel_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(net: Network, x, cap, y, delta: float = 1.0, h: float = 1e-5,
                      max_per_tensor: int | None = None, rng=None) -> GradCheck:
    """Compare analytic gradients with central differences.

    ``max_per_tensor`` limits the entries probed in each parameter tensor
    (chosen with ``rng``); ``None`` probes every entry.  A probe is skipped
    when the perturbation changes any ReLU activation pattern or the Huber
    regime, because the loss is not differentiable across such a kink.
    """
    x = np.asarray(x, dtype=float)
    cap = np.asarray(cap, dtype=float)
    y = np.asarray(y, dtype=float)
    _, grads = net.loss_and_grads(x, cap, y, delta)
    rng = rng if rng is not None else np.random.default_rng(0)

    def probe():
        pred, cache = net.forward(x, cap)
        keys = [k for k in ("z1", "z2", "h1p", "h2p") if k in cache]
        pattern = np.concatenate([(cache[k] > 0).ravel() for k in keys] + [np.abs(pred - y) <= delta])
        return float(huber(pred, y, delta).mean()), pattern

    _, base = probe()
    worst, checked, skipped = 0.0, 0, 0
    for k, P in net.params.items():
        flat = P.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
        ga = grads[k].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp, pp = probe()
            flat[i] = old - h
            lm, pm = probe()
            flat[i] = old
            if not (np.array_equal(pp, base) and np.array_equal(pm, base)):
                skipped += 1
                continue
            checked += 1
            worst = max(worst, _rel_error(ga[i], (lp - lm) / (2 * h)))
    return GradCheck(float(worst), checked, skipped)


# ---------------------------------------------------------------------------
# linear baseline


class LinearModel:
    """``y = w . x + b`` on flattened encodings, fitted by SGD on the Huber loss."""

    def __init__(self, dim: int):
        self.weights = np.zeros(dim)
        self.bias = 0.0

    @property
    def dim(self) -> int:
        return len(self.weights)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise ValueError(f"input dimension {X.shape[1]} does not match model dimension {self.dim}")
        return X @ self.weights + self.bias

    def loss_and_grads(self, X, y, delta: float = 1.0):
        pred = self.predict(X)
        g = huber_grad(pred, y, delta) / len(pred)
        return float(huber(pred, y, delta).mean()), X.T @ g, float(g.sum())

    def fit(self, X, y, cfg: TrainConfig, rng: np.random.Generator) -> list[float]:
        """Plain mini-batch SGD; returns per-epoch mean training loss."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected inputs of dimension {self.dim}")
        n = len(y)
        trace = []
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for i in range(0, n, cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                loss, gw, gb = self.loss_and_grads(X[idx], y[idx], cfg.huber_delta)
                if not (np.all(np.isfinite(gw)) and math.isfinite(gb)):
                    raise FloatingPointError("non-finite gradient in linear model")
                self.weights -= cfg.learning_rate * gw
                self.bias -= cfg.learning_rate * gb
                total += loss * len(idx)
            trace.append(total / n)
        return trace

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": np.array([self.bias])}


def linear_fit(X, y, cfg: TrainConfig, rng: np.random.Generator) -> tuple[LinearModel, list[float]]:
    model = LinearModel(np.asarray(X).shape[1])
    return model, model.fit(X, y, cfg, rng)


def linear_predict(model: LinearModel, X) -> np.ndarray:
    return model.predict(X)


def linear_finite_diff_check(model: LinearModel, X, y, delta: float = 1.0, h: float = 1e-5) -> GradCheck:
    """Central-difference check of the linear model, skipping Huber-kink crossings."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _, gw, gb = model.loss_and_grads(X, y, delta)

    def probe():
        pred = model.predict(X)
        return float(huber(pred, y, delta).mean()), np.abs(pred - y) <= delta

    _, base = probe()
    worst, checked, skipped = 0.0, 0, 0

    def check(get, set_, analytic):
        nonlocal worst, checked, skipped
        old = get()
        set_(old + h)
        lp, pp = probe()
        set_(old - h)
        lm, pm = probe()
        set_(old)
        if not (np.array_equal(pp, base) and np.array_equal(pm, base)):
            skipped += 1
            return
        checked += 1
        worst = max(worst, _rel_error(analytic, (lp - lm) / (2 * h)))

    for i in range(model.dim):
        check(lambda: model.weights[i], lambda v: model.weights.__setitem__(i, v), gw[i])
    check(lambda: model.bias, lambda v: setattr(model, "bias", v), gb)
    return GradCheck(float(worst), checked, skipped)


# ---------------------------------------------------------------------------
# persistence


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    """Magic, 4-byte header length, JSON header, then float64 parameters in header order."""
    if isinstance(model, Network):
        header = {"kind": "network", "geometry": asdict(model.geometry)}
    else:
        header = {"kind": "linear", "dim": model.dim}
    params = model.params
    header["params"] = [[k, list(v.shape)] for k, v in params.items()]
    header["extra"] = extra or {}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack("<I", raw[off:off + 4])
    header = json.loads(raw[off + 4:off + 4 + n])
    off += 4 + n
    if header["kind"] == "network":
        model = Network(Geometry(**header["geometry"]), zero=True)
    elif header["kind"] == "linear":
        model = LinearModel(header["dim"])
    else:
        raise ValueError(f"{path}: unknown model kind {header['kind']!r}")
    values = {}
    for name, shape in header["params"]:
        size = int(np.prod(shape)) if shape else 1
        values[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameters")
    if isinstance(model, Network):
        model.params = values
    else:
        model.weights, model.bias = values["weights"], float(values["bias"][0])
    return model, header.get("extra", {})


def write_loss_trace(path, trace: Sequence[float], held_out: Sequence[float] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if held_out:
            w.writerow(["epoch", "loss", "held_out_loss"])
            for e, l in enumerate(trace, start=1):
                w.writerow([e, l, held_out[e] if e < len(held_out) else ""])
        else:
            w.writerow(["epoch", "loss"])
            for e, l in enumerate(trace, start=1):
                w.writerow([e, l])
