"""Uniform 1D bar under prescribed end displacement, J2 with linear hardening."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rbi import LoadProfile, eval_rbi

COMPONENTS = ("vonMises", "eqps")


@dataclass(frozen=True)
class Material:
    E: float = 2.09e5
    nu: float = 0.3
    sigma_y0: float = 235.0
    H: float = 800.0

    def __post_init__(self):
        if not (self.E > 0 and 0 <= self.nu < 0.5 and self.sigma_y0 > 0 and self.H >= 0):
            raise ValueError(f"invalid material {self}")

    def flow_stress(self, eps_bar_p: float) -> float:
        return self.sigma_y0 + self.H * eps_bar_p


STEEL = Material()


@dataclass(frozen=True)
class BarGeometry:
    length: float = 110.0

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("bar length must be positive")


@dataclass(frozen=True)
class PlasticState:
    eps_p: float = 0.0
    eps_bar_p: float = 0.0
    sigma: float = 0.0


def von_mises_plane_stress(s11, s22, s12):
    """sqrt(s11^2 + s22^2 + s11*s22 + 3*s12^2), the form used for the labels."""
    rad = np.asarray(s11) ** 2 + np.asarray(s22) ** 2 + np.asarray(s11) * np.asarray(s22) + 3.0 * np.asarray(s12) ** 2
    if np.any(rad < 0):
        raise ValueError("negative radicand in von Mises stress")
    out = np.sqrt(rad)
    return float(out) if out.ndim == 0 else out


def return_map(state: PlasticState, d_eps: float, mat: Material = STEEL) -> PlasticState:
    """Elastic predictor / radial return for one strain increment."""
    sigma_tr = state.sigma + mat.E * d_eps
    f = abs(sigma_tr) - mat.flow_stress(state.eps_bar_p)
    if f <= 0.0:
        return PlasticState(state.eps_p, state.eps_bar_p, sigma_tr)
    dgamma = f / (mat.E + mat.H)
    sign = math.copysign(1.0, sigma_tr)
    return PlasticState(
        eps_p=state.eps_p + sign * dgamma,
        eps_bar_p=state.eps_bar_p + dgamma,
        sigma=sigma_tr - sign * mat.E * dgamma,
    )


def integrate_strain_path(strains, mat: Material = STEEL, state: PlasticState | None = None):
    """Drive the return map along a piecewise-linear strain path starting at ``state``.

    Returns arrays (sigma, eps_bar_p) after each point of ``strains``; the
    path starts from the state's total strain (elastic + plastic).
    """
    state = state or PlasticState()
    eps = state.sigma / mat.E + state.eps_p
    sig = np.empty(len(strains))
    ebar = np.empty(len(strains))
    for k, e in enumerate(strains):
        state = return_map(state, float(e) - eps, mat)
        eps = float(e)
        sig[k] = state.sigma
        ebar[k] = state.eps_bar_p
    return sig, ebar


def pseudo_node_coords(n_nodes: int) -> np.ndarray:
    """Synthetic trunk coordinates in [0, 1]^2 for replicated bar outputs."""
    if n_nodes == 1:
        return np.array([[0.5, 0.5]])
    side = math.ceil(math.sqrt(n_nodes))
    g = np.linspace(0.0, 1.0, side)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel()])[:n_nodes]


def run_bar_case(
    profile: LoadProfile,
    mat: Material = STEEL,
    geom: BarGeometry = BarGeometry(),
    n_sub: int = 10,
    n_nodes: int = 1,
) -> np.ndarray:
    """Snapshots [S, n_nodes, 2] of (|sigma|, eps_bar_p) at the profile's output times.

    Between consecutive output times the displacement is sampled at ``n_sub``
    equal substeps and the strain path is taken as linear between samples.
    """
    interp = profile.interpolant()
    times = np.concatenate([[0.0], profile.times])
    frac = np.arange(1, n_sub + 1) / n_sub
    sub_t = (times[:-1, None] + np.diff(times)[:, None] * frac).ravel()
    strains = eval_rbi(interp, np.minimum(sub_t, interp.t_max)) / geom.length
    sig, ebar = integrate_strain_path(strains, mat)
    idx = np.arange(n_sub - 1, strains.size, n_sub)
    out = np.empty((len(profile.times), n_nodes, 2))
    out[:, :, 0] = np.abs(sig[idx])[:, None]
    out[:, :, 1] = ebar[idx][:, None]
    return out


def monotonic_stress(strain: float, mat: Material = STEEL) -> float:
    """Closed-form stress for monotonic uniaxial loading from the virgin state."""
    if abs(mat.E * strain) <= mat.sigma_y0:
        return mat.E * strain
    return math.copysign(mat.E * (mat.sigma_y0 + mat.H * abs(strain)) / (mat.E + mat.H), strain)
