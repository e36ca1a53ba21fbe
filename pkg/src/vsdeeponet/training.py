"""Mini-batch Adam training on scaled MSE, plus the evaluation metrics."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Scaler, SDeepONet
from .nn import Adam

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")


class UndefinedMetricError(ValueError):
    pass


# -- metrics ------------------------------------------------------------------

def mse_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def rel_l2(pred, ref) -> float:
    """||ref - pred|| / ||ref|| in percent."""
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    den = np.linalg.norm(ref.ravel())
    if den == 0.0:
        raise UndefinedMetricError("relative L2 error is undefined for an all-zero reference")
    return float(np.linalg.norm((ref - pred).ravel()) / den * 100.0)


def mae(pred, ref) -> float:
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return float(np.mean(np.abs(ref - pred)))


def r2(pred, ref) -> float:
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    ss_res = float(np.sum((ref - pred) ** 2))
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


def aggregate_errors(errors):
    """Row means (time-averaged per case) and column means (case-averaged per step).

    NaN entries mark undefined errors and are skipped.
    """
    e = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN rows/columns
        return np.nanmean(e, axis=1), np.nanmean(e, axis=0)


def linear_trend(x, y):
    """OLS fit y = slope*x + intercept; returns (slope, intercept, r2).

    r2 is reported as 0 when y is constant (both sums of squares vanish).
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2 or x.shape != y.shape:
        raise ValueError("need at least two (x, y) pairs of equal length")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate x: all values equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    fit_r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, intercept, fit_r2


def split_dataset(n_cases: int, seed, fraction: float = 0.8):
    """Seeded permutation split into (train_idx, test_idx)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("split fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n_cases)
    n_train = int(round(fraction * n_cases))
    n_train = min(max(n_train, 1), n_cases - 1) if n_cases > 1 else n_cases
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    split_fraction: float = 0.8
    shuffle: bool = True
    log_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self):
        return asdict(self)


def attach_scalers(model: SDeepONet, loads, coords, fields, field_kind: str) -> None:
    """Fit input/coordinate/field scalers on (training) data and attach them."""
    model.load_scaler = Scaler("maxabs").fit(loads)
    model.coord_scaler = Scaler("minmax").fit(coords)
    model.field_scaler = Scaler(field_kind).fit(fields)


def train(model: SDeepONet, loads, coords, fields, cfg: TrainConfig, optimizer: Adam | None = None):
    """Adam on scaled MSE; one epoch is one optimizer step on one mini-batch.

    ``loads`` [n, S], ``coords`` [N, 2] and ``fields`` [n, S, N, C] are in
    physical units; the model's attached scalers map them to training space.
    Returns the per-epoch loss curve.
    """
    x, xy = model.scale_inputs(loads, coords)
    y = model.field_scaler.transform(fields) if model.field_scaler is not None else np.asarray(fields, dtype=np.float64)
    n = x.shape[0]
    bs = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    opt = optimizer or Adam(lr=cfg.lr)
    params = model.params
    curve = np.empty(cfg.epochs)
    order = rng.permutation(n) if cfg.shuffle else np.arange(n)
    pos = 0
    for epoch in range(cfg.epochs):
        if pos + bs > n:
            order = rng.permutation(n) if cfg.shuffle else np.arange(n)
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        loss, grads = model.loss_and_grads((x[idx], xy, y[idx]))
        if not math.isfinite(loss):
            raise NonFiniteLossError(epoch, loss)
        opt.step(params, grads)
        curve[epoch] = loss
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d loss %.6e", epoch, loss)
    return curve


# -- evaluation ---------------------------------------------------------------

@dataclass
class ComponentReport:
    name: str
    rel_l2: float | None  # percent, mean over cases with a nonzero reference
    mae: float
    r2: float
    n_undefined_cases: int
    time_averaged: list = field(default_factory=list)  # per case, percent (None if undefined)
    case_averaged: list = field(default_factory=list)  # per step, percent (None if undefined)
    trend: tuple | None = None  # (slope, intercept, r2) of time-averaged error vs max |load|


@dataclass
class EvalReport:
    components: list
    n_cases: int

    def to_dict(self):
        return {"n_cases": self.n_cases, "components": [asdict(c) for c in self.components]}

    def component(self, name):
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)


def _nan_to_none(a):
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=np.float64)]


def per_step_rel_l2(pred, ref):
    """Relative L2 (percent) over nodes for each (case, step); NaN where ref is zero."""
    num = np.linalg.norm(ref - pred, axis=2)
    den = np.linalg.norm(ref, axis=2)
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok] * 100.0
    return out


def evaluate(pred, ref, loads=None, component_names=None) -> EvalReport:
    """Metrics for physical-unit predictions/references shaped [n, S, N, C]."""
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 4:
        raise ValueError("pred and ref must share shape [n, S, N, C]")
    n, S, N, C = ref.shape
    names = list(component_names or [f"c{i}" for i in range(C)])
    comps = []
    for c in range(C):
        p, r = pred[..., c], ref[..., c]
        case_num = np.linalg.norm((r - p).reshape(n, -1), axis=1)
        case_den = np.linalg.norm(r.reshape(n, -1), axis=1)
        ok = case_den > 0
        rel = float(np.mean(case_num[ok] / case_den[ok] * 100.0)) if ok.any() else None
        step_err = per_step_rel_l2(p, r)
        t_avg, c_avg = aggregate_errors(step_err)
        trend = None
        if loads is not None and n >= 2:
            mag = np.abs(np.asarray(loads)).max(axis=1)
            good = np.isfinite(t_avg)
            if good.sum() >= 2 and np.ptp(mag[good]) > 0:
                trend = linear_trend(mag[good], t_avg[good])
        comps.append(
            ComponentReport(
                name=names[c],
                rel_l2=rel,
                mae=mae(p, r),
                r2=r2(p, r),
                n_undefined_cases=int((~ok).sum()),
                time_averaged=_nan_to_none(t_avg),
                case_averaged=_nan_to_none(c_avg),
                trend=trend,
            )
        )
    return EvalReport(comps, n)


def report_csv_rows(report: EvalReport):
    """Flat rows (component, kind, index, value) for plotting tools."""
    rows = []
    for comp in report.components:
        rows.append((comp.name, "rel_l2", "", comp.rel_l2))
        rows.append((comp.name, "mae", "", comp.mae))
        rows.append((comp.name, "r2", "", comp.r2))
        for i, v in enumerate(comp.time_averaged):
            rows.append((comp.name, "time_averaged", i, v))
        for i, v in enumerate(comp.case_averaged):
            rows.append((comp.name, "case_averaged", i, v))
        if comp.trend is not None:
            for k, v in zip(("trend_slope", "trend_intercept", "trend_r2"), comp.trend):
                rows.append((comp.name, k, "", v))
    return rows
