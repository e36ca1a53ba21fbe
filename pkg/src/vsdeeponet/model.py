"""Vector S-DeepONet: GRU branch over time, FNN trunk over space, tensor-product combiner.

Shapes used throughout (batch of cases ``Bt``):

* branch output ``B``: [Bt, HD, S]
* trunk output ``T``: [N, HD, C]; trunk slot ``h*C + c`` holds (h, c)
* combined output: [Bt, S, N, C] internally, matching the dataset layout;
  :meth:`SDeepONet.forward` returns the [Bt, N, S, C] view.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import GRU, Dense, dense_param_count, gru_param_count

SCALE_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    n_steps: int
    n_components: int
    hd: int = 32
    trunk_hidden: tuple = (101, 101, 101, 101, 101)
    branch_hidden: tuple = (64, 32, 32, 64)
    trunk_activation: str = "tanh"
    n_coords: int = 2
    n_load_features: int = 1

    def __post_init__(self):
        if self.n_steps < 1 or self.n_components < 1 or self.hd < 1:
            raise ValueError("S, C and HD must all be >= 1")
        object.__setattr__(self, "trunk_hidden", tuple(int(w) for w in self.trunk_hidden))
        object.__setattr__(self, "branch_hidden", tuple(int(w) for w in self.branch_hidden))
        if not self.branch_hidden:
            raise ValueError("branch needs at least one GRU layer")

    @property
    def trunk_widths(self) -> tuple:
        return (self.n_coords, *self.trunk_hidden, self.hd * self.n_components)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk_hidden"] = list(self.trunk_hidden)
        d["branch_hidden"] = list(self.branch_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def count_params(cfg: ModelConfig, include_branch: bool = True) -> int:
    total = 0
    if include_branch:
        widths = (cfg.n_load_features, *cfg.branch_hidden)
        total += sum(gru_param_count(a, b) for a, b in zip(widths[:-1], widths[1:]))
        total += dense_param_count(cfg.branch_hidden[-1], cfg.hd)
    tw = cfg.trunk_widths
    total += sum(dense_param_count(a, b) for a, b in zip(tw[:-1], tw[1:]))
    return total + 1  # combiner bias


def trunk_only_count(widths) -> int:
    return sum(dense_param_count(a, b) for a, b in zip(widths[:-1], widths[1:]))


class UnfittedScalerError(RuntimeError):
    pass


@dataclass
class Scaler:
    """Affine data scaler.

    ``step-maxabs``: per (step, component) max |value| over cases and nodes,
    maps to [-1, 1]; data layout [case, S, N, C].
    ``minmax``: per component (last axis) min/max, maps to [0, 1].
    ``maxabs``: one global max |value|, maps to [-1, 1].
    """

    kind: str
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None
    eps: float = SCALE_EPS

    KINDS = ("step-maxabs", "minmax", "maxabs")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown scaler kind {self.kind!r}")

    @property
    def fitted(self) -> bool:
        return self.scale is not None

    def fit(self, data) -> "Scaler":
        data = np.asarray(data, dtype=np.float64)
        if self.kind == "step-maxabs":
            if data.ndim != 4:
                raise ValueError("step-maxabs expects [case, S, N, C] data")
            scale = np.abs(data).max(axis=(0, 2))  # [S, C]
            self.shift = np.zeros_like(scale)
            self.scale = np.maximum(scale, self.eps)
        elif self.kind == "minmax":
            flat = data.reshape(-1, data.shape[-1])
            lo, hi = flat.min(axis=0), flat.max(axis=0)
            self.shift = lo
            self.scale = np.maximum(hi - lo, self.eps)
        else:
            self.shift = np.zeros(())
            self.scale = np.maximum(np.abs(data).max(), self.eps)
        return self

    def _broadcast(self, data):
        if not self.fitted:
            raise UnfittedScalerError(f"{self.kind} scaler used before fit")
        if self.kind == "step-maxabs":
            # [.., S, N, C]: scale indexed by (S, C)
            return self.shift[:, None, :], self.scale[:, None, :]
        return self.shift, self.scale

    def transform(self, data):
        shift, scale = self._broadcast(data)
        return (np.asarray(data, dtype=np.float64) - shift) / scale

    def inverse(self, data):
        shift, scale = self._broadcast(data)
        return np.asarray(data, dtype=np.float64) * scale + shift

    def arrays(self) -> dict:
        if not self.fitted:
            raise UnfittedScalerError("cannot serialize an unfitted scaler")
        return {"shift": np.asarray(self.shift, dtype=np.float64), "scale": np.asarray(self.scale, dtype=np.float64)}


def fit_scaler(data, kind: str) -> Scaler:
    return Scaler(kind).fit(data)


def apply_scaler(scaler: Scaler, data):
    return scaler.transform(data)


def invert_scaler(scaler: Scaler, data):
    return scaler.inverse(data)


def combine(B, T, beta):
    """G[b, s, n, c] = sum_h B[b, h, s] * T[n, h, c] + beta."""
    B = np.asarray(B)
    squeeze = B.ndim == 2
    if squeeze:
        B = B[None]
    if B.shape[1] != T.shape[1]:
        raise ValueError(f"hidden dimension mismatch: branch {B.shape[1]} vs trunk {T.shape[1]}")
    G = np.tensordot(B, T, axes=([1], [1])) + beta  # [Bt, S, N, C]
    return G[0] if squeeze else G


def combine_naive(B, T, beta):
    """Reference triple loop for :func:`combine` on a single case ([HD, S])."""
    hd, S = B.shape
    N, _, C = T.shape
    G = np.empty((S, N, C))
    for s in range(S):
        for n in range(N):
            for c in range(C):
                acc = 0.0
                for h in range(hd):
                    acc += B[h, s] * T[n, h, c]
                G[s, n, c] = acc + beta
    return G


class SDeepONet:
    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        widths = (cfg.n_load_features, *cfg.branch_hidden)
        self.grus = [GRU(a, b, return_sequences=True, rng=rng) for a, b in zip(widths[:-1], widths[1:])]
        self.branch_out = Dense(cfg.branch_hidden[-1], cfg.hd, "linear", rng=rng)
        tw = cfg.trunk_widths
        self.trunk = [
            Dense(a, b, cfg.trunk_activation if i < len(tw) - 2 else "linear", rng=rng)
            for i, (a, b) in enumerate(zip(tw[:-1], tw[1:]))
        ]
        self.beta = np.zeros(1)
        self.load_scaler: Scaler | None = None
        self.coord_scaler: Scaler | None = None
        self.field_scaler: Scaler | None = None
        self._cache = None

    # -- parameter bookkeeping ------------------------------------------------

    def layers(self):
        for i, g in enumerate(self.grus):
            yield f"branch.gru{i}", g
        yield "branch.out", self.branch_out
        for i, d in enumerate(self.trunk):
            yield f"trunk.{i}", d

    @property
    def params(self) -> dict:
        out = {}
        for prefix, layer in self.layers():
            for k, v in layer.params.items():
                out[f"{prefix}.{k}"] = v
        out["beta"] = self.beta
        return out

    def set_params(self, values: dict) -> None:
        for name, arr in self.params.items():
            if values[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {values[name].shape} vs {arr.shape}")
            arr[...] = values[name]

    def grads(self) -> dict:
        out = {}
        for prefix, layer in self.layers():
            for k, v in layer.grads.items():
                out[f"{prefix}.{k}"] = v
        out["beta"] = self._dbeta
        return out

    def zero_grads(self):
        for _, layer in self.layers():
            layer.zero_grads()
        self._dbeta = np.zeros(1)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward pieces -------------------------------------------------------

    def branch_forward(self, loads):
        """Scaled loads [Bt, S] (or [S]) -> B [Bt, HD, S]."""
        loads = np.asarray(loads, dtype=np.float64)
        squeeze = loads.ndim == 1
        if squeeze:
            loads = loads[None]
        if loads.shape[1] != self.cfg.n_steps:
            raise ValueError(f"load sequence length {loads.shape[1]} != S={self.cfg.n_steps}")
        h = loads[:, :, None]
        for g in self.grus:
            h = g.forward(h)
        B = self.branch_out.forward(h).transpose(0, 2, 1)
        return B[0] if squeeze else B

    def trunk_forward(self, coords):
        """Scaled coordinates [N, 2] -> T [N, HD, C]."""
        h = np.asarray(coords, dtype=np.float64)
        for d in self.trunk:
            h = d.forward(h)
        return h.reshape(h.shape[0], self.cfg.hd, self.cfg.n_components)

    def predict_scaled(self, loads, coords):
        """Scaled-space output [Bt, S, N, C]; caches activations for backward."""
        loads = np.atleast_2d(np.asarray(loads, dtype=np.float64))
        B = self.branch_forward(loads)
        T = self.trunk_forward(coords)
        G = combine(B, T, self.beta[0])
        self._cache = (B, T)
        return G

    def backward(self, dG):
        """Accumulate parameter gradients for upstream gradient dG [Bt, S, N, C]."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        B, T = self._cache
        self._dbeta = self._dbeta + dG.sum()
        dB = np.tensordot(dG, T, axes=([2, 3], [0, 2]))  # [Bt, S, HD]
        dT = np.tensordot(B, dG, axes=([0, 2], [0, 1])).transpose(1, 0, 2)  # [N, HD, C]
        d = self.branch_out.backward(dB)
        for g in reversed(self.grus):
            d, _ = g.backward(d)
        d = dT.reshape(dT.shape[0], -1)
        for layer in reversed(self.trunk):
            d = layer.backward(d)

    def loss_and_grads(self, batch):
        """Scaled MSE and its gradients for ``batch = (loads, coords, targets)``."""
        loads, coords, target = batch
        self.zero_grads()
        G = self.predict_scaled(loads, coords)
        if G.shape != target.shape:
            raise ValueError(f"prediction shape {G.shape} != target shape {target.shape}")
        diff = G - target
        loss = float(np.mean(diff * diff))
        self.backward(2.0 * diff / diff.size)
        return loss, self.grads()

    # -- public inference -----------------------------------------------------

    def scale_inputs(self, loads, coords):
        loads = np.asarray(loads, dtype=np.float64)
        coords = np.asarray(coords, dtype=np.float64)
        if self.load_scaler is not None:
            loads = self.load_scaler.transform(loads)
        if self.coord_scaler is not None:
            coords = self.coord_scaler.transform(coords)
        return loads, coords

    def forward(self, loads, coords, physical=False):
        """Fields [N, S, C] for one load history ([Bt, N, S, C] for a batch).

        Loads and coordinates are given in physical units when scalers are
        attached. With ``physical=True`` the output is inverse-scaled.
        """
        single = np.ndim(loads) == 1
        loads, coords = self.scale_inputs(np.atleast_2d(loads), coords)
        G = self.predict_scaled(loads, coords)
        if physical:
            if self.field_scaler is None:
                raise RuntimeError("no field scaler attached")
            G = self.field_scaler.inverse(G)
        out = G.transpose(0, 2, 1, 3)
        return out[0] if single else out

    def predict_fields(self, loads, coords):
        """Physical-unit predictions in dataset layout [Bt, S, N, C]."""
        loads, coords = self.scale_inputs(np.atleast_2d(loads), coords)
        G = self.predict_scaled(loads, coords)
        return self.field_scaler.inverse(G) if self.field_scaler is not None else G

    def extract_basis(self, load, coords):
        """Trunk basis fields [HD, N, C] and per-step branch weights [HD, S] for one load."""
        loads, coords = self.scale_inputs(np.atleast_2d(load), coords)
        B = self.branch_forward(loads)[0]
        T = self.trunk_forward(coords)
        return T.transpose(1, 0, 2).copy(), B.copy()
