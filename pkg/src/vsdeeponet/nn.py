"""Small dense-tensor network kernel: dense and GRU layers, Adam, gradient checks.

Everything runs in float64. Layers cache what they need on ``forward`` and
fill ``grads`` on ``backward``; parameters are plain numpy arrays held in an
insertion-ordered dict so that flattening order is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRU_CONVENTION = "gru:update-interp=(1-z)h+z*c;reset-before-recurrent;single-bias"

_ACTIVATIONS = ("linear", "tanh", "relu")


class NotForwardedError(RuntimeError):
    pass


def sigmoid(x):
    # tanh form: no overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot_uniform(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


class Dense(Layer):
    """y = act(x @ W + b); leading axes of ``x`` are treated as batch."""

    def __init__(self, n_in, n_out, activation="linear", rng=None):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(rng)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.params = {"W": glorot_uniform(rng, n_in, n_out), "b": np.zeros(n_out)}
        self.zero_grads()
        self._cache = None

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense layer expects last dim {self.n_in}, got {x.shape}")
        lead = x.shape[:-1]
        x2 = x.reshape(-1, self.n_in)
        a = x2 @ self.params["W"] + self.params["b"]
        if self.activation == "tanh":
            y = np.tanh(a)
        elif self.activation == "relu":
            y = np.maximum(a, 0.0)
        else:
            y = a
        self._cache = (x2, a, y, lead)
        return y.reshape(*lead, self.n_out)

    def backward(self, dy):
        if self._cache is None:
            raise NotForwardedError("Dense.backward called before forward")
        x2, a, y, lead = self._cache
        dy = dy.reshape(-1, self.n_out)
        if self.activation == "tanh":
            da = dy * (1.0 - y * y)
        elif self.activation == "relu":
            da = dy * (a > 0)
        else:
            da = dy
        self.grads["W"] = self.grads["W"] + x2.T @ da
        self.grads["b"] = self.grads["b"] + da.sum(axis=0)
        return (da @ self.params["W"].T).reshape(*lead, self.n_in)


class GRU(Layer):
    """Gated recurrent layer over ``x`` of shape [batch, steps, n_in].

    z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
    c = tanh(x Wh + (r*h) Uh + bh), h <- (1-z)*h + z*c.
    """

    def __init__(self, n_in, n_hidden, return_sequences=True, rng=None):
        rng = np.random.default_rng(rng)
        self.n_in, self.n_hidden, self.return_sequences = n_in, n_hidden, return_sequences
        p = {}
        for g in "zrh":
            p[f"W{g}"] = glorot_uniform(rng, n_in, n_hidden)
        for g in "zrh":
            p[f"U{g}"] = orthogonal(rng, n_hidden)
        for g in "zrh":
            p[f"b{g}"] = np.zeros(n_hidden)
        self.params = p
        self.zero_grads()
        self._cache = None

    def forward(self, x, h0=None):
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        B, S, n_in = x.shape
        if n_in != self.n_in:
            raise ValueError(f"GRU expects input width {self.n_in}, got {n_in}")
        nh = self.n_hidden
        p = self.params
        h = np.zeros((B, nh)) if h0 is None else np.broadcast_to(h0, (B, nh)).astype(np.float64)
        W = np.concatenate([p["Wz"], p["Wr"], p["Wh"]], axis=1)
        b = np.concatenate([p["bz"], p["br"], p["bh"]])
        Uzr = np.concatenate([p["Uz"], p["Ur"]], axis=1)
        xa = (x.reshape(B * S, n_in) @ W + b).reshape(B, S, 3 * nh)
        hs = np.empty((B, S + 1, nh))
        hs[:, 0] = h
        zs = np.empty((B, S, nh))
        rs = np.empty((B, S, nh))
        cs = np.empty((B, S, nh))
        for t in range(S):
            zr = sigmoid(xa[:, t, : 2 * nh] + h @ Uzr)
            z, r = zr[:, :nh], zr[:, nh:]
            c = np.tanh(xa[:, t, 2 * nh :] + (r * h) @ p["Uh"])
            h = (1.0 - z) * h + z * c
            zs[:, t], rs[:, t], cs[:, t], hs[:, t + 1] = z, r, c, h
        self._cache = (x, hs, zs, rs, cs, squeeze)
        out = hs[:, 1:] if self.return_sequences else hs[:, -1]
        return out[0] if squeeze else out

    def backward(self, dy):
        """Backpropagation through time; returns (dx, dh0)."""
        if self._cache is None:
            raise NotForwardedError("GRU.backward called before forward")
        x, hs, zs, rs, cs, squeeze = self._cache
        B, S, n_in = x.shape
        nh = self.n_hidden
        p = self.params
        if squeeze:
            dy = dy[None]
        if self.return_sequences:
            dys = dy
        else:
            dys = np.zeros((B, S, nh))
            dys[:, -1] = dy
        Uzr_T = np.concatenate([p["Uz"], p["Ur"]], axis=1).T
        Uh_T = p["Uh"].T
        da = np.empty((B, S, 3 * nh))
        dUzr = np.zeros((nh, 2 * nh))
        dUh = np.zeros((nh, nh))
        dh = np.zeros((B, nh))
        for t in range(S - 1, -1, -1):
            dh = dh + dys[:, t]
            h_prev, z, r, c = hs[:, t], zs[:, t], rs[:, t], cs[:, t]
            dac = dh * z * (1.0 - c * c)
            daz = dh * (c - h_prev) * z * (1.0 - z)
            drh = dac @ Uh_T
            dar = drh * h_prev * r * (1.0 - r)
            dzr = np.concatenate([daz, dar], axis=1)
            dUzr += h_prev.T @ dzr
            dUh += (r * h_prev).T @ dac
            dh = dh * (1.0 - z) + drh * r + dzr @ Uzr_T
            da[:, t, :nh], da[:, t, nh : 2 * nh], da[:, t, 2 * nh :] = daz, dar, dac
        da2 = da.reshape(B * S, 3 * nh)
        dW = x.reshape(B * S, n_in).T @ da2
        db = da2.sum(axis=0)
        g = self.grads
        for k, g_name in enumerate("zrh"):
            sl = slice(k * nh, (k + 1) * nh)
            g[f"W{g_name}"] = g[f"W{g_name}"] + dW[:, sl]
            g[f"b{g_name}"] = g[f"b{g_name}"] + db[sl]
        g["Uz"] = g["Uz"] + dUzr[:, :nh]
        g["Ur"] = g["Ur"] + dUzr[:, nh:]
        g["Uh"] = g["Uh"] + dUh
        W = np.concatenate([p["Wz"], p["Wr"], p["Wh"]], axis=1)
        dx = (da2 @ W.T).reshape(B, S, n_in)
        return (dx[0], dh[0]) if squeeze else (dx, dh)


def gru_param_count(n_in, n_hidden):
    return 3 * (n_in * n_hidden + n_hidden * n_hidden + n_hidden)


def dense_param_count(n_in, n_out):
    return n_in * n_out + n_out


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        """In-place bias-corrected Adam update of ``params``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, theta in params.items():
            g = grads[k]
            if g.shape != theta.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {theta.shape}")
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(theta)
                self.v[k] = np.zeros_like(theta)
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            theta -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: dict, grads: dict, state: Adam) -> dict:
    state.step(params, grads)
    return params


def gradcheck(model, batch, eps=1e-6, n_coords=200, seed=0, floor=1e-4, coords=None):
    """Max relative error between analytic and central-difference gradients.

    ``model`` must expose ``params`` (name -> array, updated in place) and
    ``loss_and_grads(batch) -> (loss, grads)``. Coordinates are drawn at
    random across all parameters; if fewer exist, all are checked.
    ``coords`` optionally names extra ``(param_name, flat_index)`` pairs to check.

    The denominator is floored at ``floor``: at eps=1e-6 central differences
    carry roundoff near machine_eps*|loss|/eps, so smaller gradients are
    compared on that absolute scale instead.
    """
    _, grads = model.loss_and_grads(batch)
    grads = {k: g.copy() for k, g in grads.items()}
    names = list(model.params)
    sizes = np.array([model.params[k].size for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = []
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        picks.append((names[i], int(f - offsets[i])))
    picks.extend(coords or ())
    worst = 0.0
    for name, j in picks:
        arr = model.params[name].reshape(-1)
        old = arr[j]
        arr[j] = old + eps
        lp, _ = model.loss_and_grads(batch)
        arr[j] = old - eps
        lm, _ = model.loss_and_grads(batch)
        arr[j] = old
        num = (lp - lm) / (2.0 * eps)
        ana = grads[name].reshape(-1)[j]
        err = abs(num - ana) / max(abs(num), abs(ana), floor)
        worst = max(worst, err)
    return worst
