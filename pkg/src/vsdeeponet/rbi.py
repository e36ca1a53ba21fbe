"""Smooth load histories from six control points (cubic RBF + linear tail)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CONTROL = 6


@dataclass(frozen=True)
class ControlPoints:
    times: np.ndarray
    values: np.ndarray

    @classmethod
    def uniform(cls, values, t_total: float = 1.0) -> "ControlPoints":
        values = np.asarray(values, dtype=np.float64)
        times = np.linspace(0.0, t_total, values.size)
        return cls(times=times, values=values)


@dataclass(frozen=True)
class RbiInterpolant:
    centers: np.ndarray
    rbf_weights: np.ndarray
    poly_coeffs: np.ndarray  # (a, b) in a + b*t

    @property
    def t_min(self) -> float:
        return float(self.centers.min())

    @property
    def t_max(self) -> float:
        return float(self.centers.max())

    def __call__(self, ts):
        return eval_rbi(self, ts)


@dataclass(frozen=True)
class LoadProfile:
    """Load values at the S output times plus the generating control points."""

    samples: np.ndarray
    control: ControlPoints
    times: np.ndarray

    def interpolant(self) -> RbiInterpolant:
        return fit_rbi(self.control)


def _augmented_matrix(t: np.ndarray) -> np.ndarray:
    n = t.size
    a = np.zeros((n + 2, n + 2))
    a[:n, :n] = np.abs(t[:, None] - t[None, :]) ** 3
    a[:n, n] = 1.0
    a[:n, n + 1] = t
    a[n, :n] = 1.0
    a[n + 1, :n] = t
    return a


def fit_rbi(cp: ControlPoints) -> RbiInterpolant:
    t = np.asarray(cp.times, dtype=np.float64)
    v = np.asarray(cp.values, dtype=np.float64)
    if t.ndim != 1 or t.shape != v.shape or t.size < 2:
        raise ValueError("control times and values must be 1D arrays of equal length >= 2")
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("control times must be distinct and strictly increasing")
    a = _augmented_matrix(t)
    rhs = np.concatenate([v, [0.0, 0.0]])
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular RBF system: {exc}") from exc
    n = t.size
    return RbiInterpolant(centers=t.copy(), rbf_weights=sol[:n], poly_coeffs=sol[n:])


def eval_rbi(interp: RbiInterpolant, ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    span = interp.t_max - interp.t_min
    tol = 1e-12 * max(1.0, span)
    if np.any(ts < interp.t_min - tol) or np.any(ts > interp.t_max + tol):
        raise ValueError(
            f"evaluation times outside [{interp.t_min}, {interp.t_max}]; extrapolation is not supported"
        )
    r = np.abs(ts[..., None] - interp.centers)
    a, b = interp.poly_coeffs
    return (r**3) @ interp.rbf_weights + a + b * ts


def output_times(n_steps: int, t_total: float) -> np.ndarray:
    """S uniform output times k*T/S for k = 1..S (t=0 excluded)."""
    return t_total * np.arange(1, n_steps + 1) / n_steps


def sample_profiles(rng_seed, n_cases: int, bounds, S: int, T_total: float = 1.0) -> list[LoadProfile]:
    lo, hi = (float(b) for b in bounds)
    if not lo < hi:
        raise ValueError("bounds must satisfy lo < hi")
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    rng = np.random.default_rng(rng_seed)
    ts = output_times(S, T_total)
    out = []
    for _ in range(n_cases):
        values = np.zeros(N_CONTROL)
        values[1:] = rng.uniform(lo, hi, size=N_CONTROL - 1)
        out.append(profile_from_values(values, S, T_total, times=ts))
    return out


def profile_from_values(values, S: int, T_total: float = 1.0, times=None) -> LoadProfile:
    cp = ControlPoints.uniform(values, T_total)
    ts = output_times(S, T_total) if times is None else times
    return LoadProfile(samples=eval_rbi(fit_rbi(cp), ts), control=cp, times=ts)


def profile_from_genome(genome, S: int, T_total: float = 1.0) -> LoadProfile:
    """Five free control values; the first control value is pinned at zero."""
    genome = np.asarray(genome, dtype=np.float64)
    return profile_from_values(np.concatenate([[0.0], genome]), S, T_total)
