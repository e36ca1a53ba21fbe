"""Transient lid-driven cavity flow: central differences, Chorin projection.

Fields live on a collocated uniform grid stored as ``[ny, nx]`` arrays; row
``j`` is ``y = j*dy`` and column ``i`` is ``x = i*dx``. Flattened node index is
``j*nx + i`` (y-major). Snapshot components are ordered (P, u, v).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rbi import LoadProfile, eval_rbi

COMPONENTS = ("P", "u", "v")


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite field value at step {step}")


class PoissonNotConverged(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"pressure Poisson did not reach tolerance after {iterations} sweeps (residual {residual:.3e})")


@dataclass(frozen=True)
class CavityParams:
    Lx: float = 3.0
    Ly: float = 1.0
    nx: int = 121
    ny: int = 41
    rho: float = 1.0
    mu: float = 0.1
    dt: float = 2e-4
    n_steps: int = 10000
    n_snapshots: int = 25
    poisson_iters: int = 50
    # tolerance mode when poisson_tol is set; poisson_iters is then ignored
    poisson_tol: float | None = None
    poisson_max_iter: int = 50000

    @property
    def dx(self) -> float:
        return self.Lx / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.Ly / (self.ny - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def t_total(self) -> float:
        return self.n_steps * self.dt

    def with_tolerance(self, tol: float, max_iter: int = 50000) -> "CavityParams":
        return replace(self, poisson_tol=tol, poisson_max_iter=max_iter)


PAPER_PARAMS = CavityParams()
DESK_PARAMS = CavityParams(nx=61, ny=21, dt=1e-3, n_steps=2000)


@dataclass
class FlowState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, params: CavityParams) -> "FlowState":
        shape = (params.ny, params.nx)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), 0.0)

    def copy(self) -> "FlowState":
        return FlowState(self.u.copy(), self.v.copy(), self.p.copy(), self.t)


@dataclass
class StepInfo:
    step: int
    cfl: float
    divergence: float
    residual: float
    sweeps: int


@dataclass
class CaseResult:
    snapshots: np.ndarray  # [S, N, 3]
    diagnostics: list[StepInfo] = field(default_factory=list)


def grid_coords(params: CavityParams) -> np.ndarray:
    """Node coordinates [N, 2] in y-major order."""
    x = np.linspace(0.0, params.Lx, params.nx)
    y = np.linspace(0.0, params.Ly, params.ny)
    xx, yy = np.meshgrid(x, y)
    return np.column_stack([xx.ravel(), yy.ravel()])


def apply_velocity_bcs(state: FlowState, lid_u: float) -> FlowState:
    """No-slip walls; the lid row (y = Ly) moves with ``lid_u``. Mutates in place."""
    u, v = state.u, state.v
    u[0, :] = 0.0
    u[:, 0] = 0.0
    u[:, -1] = 0.0
    u[-1, :] = lid_u
    v[0, :] = 0.0
    v[:, 0] = 0.0
    v[:, -1] = 0.0
    v[-1, :] = 0.0
    return state


def _apply_pressure_bcs(p: np.ndarray) -> None:
    p[:, -1] = p[:, -2]
    p[:, 0] = p[:, 1]
    p[0, :] = p[1, :]
    p[-1, :] = 0.0


def _ddx(f, dx):
    out = np.zeros_like(f)
    out[1:-1, 1:-1] = (f[1:-1, 2:] - f[1:-1, :-2]) / (2.0 * dx)
    return out


def _ddy(f, dy):
    out = np.zeros_like(f)
    out[1:-1, 1:-1] = (f[2:, 1:-1] - f[:-2, 1:-1]) / (2.0 * dy)
    return out


def _laplace(f, dx, dy):
    out = np.zeros_like(f)
    out[1:-1, 1:-1] = (f[1:-1, 2:] - 2.0 * f[1:-1, 1:-1] + f[1:-1, :-2]) / dx**2 + (
        f[2:, 1:-1] - 2.0 * f[1:-1, 1:-1] + f[:-2, 1:-1]
    ) / dy**2
    return out


def poisson_residual(p: np.ndarray, rhs: np.ndarray, dx: float, dy: float) -> float:
    """Relative interior residual ||lap(p) - rhs|| / ||rhs|| (absolute if rhs == 0)."""
    r = _laplace(p, dx, dy)[1:-1, 1:-1] - rhs[1:-1, 1:-1]
    num = float(np.sqrt(np.sum(r * r)))
    den = float(np.sqrt(np.sum(rhs[1:-1, 1:-1] ** 2)))
    return num / den if den > 0.0 else num


def solve_pressure_poisson(p0: np.ndarray, rhs: np.ndarray, params: CavityParams):
    """Jacobi sweeps for lap(p) = rhs under the cavity pressure BCs.

    Returns ``(p, residual, sweeps)``. Fixed-count mode runs
    ``params.poisson_iters`` sweeps; tolerance mode iterates until the relative
    residual drops to ``params.poisson_tol``.
    """
    dx2, dy2 = params.dx**2, params.dy**2
    denom = 2.0 * (dx2 + dy2)
    src = rhs[1:-1, 1:-1] * (dx2 * dy2)
    p = p0.copy()
    _apply_pressure_bcs(p)
    nxt = p.copy()

    def sweep(p, nxt):
        nxt[1:-1, 1:-1] = (
            (p[1:-1, 2:] + p[1:-1, :-2]) * dy2 + (p[2:, 1:-1] + p[:-2, 1:-1]) * dx2 - src
        ) / denom
        _apply_pressure_bcs(nxt)
        return nxt, p

    if params.poisson_tol is None:
        for _ in range(params.poisson_iters):
            p, nxt = sweep(p, nxt)
        return p, poisson_residual(p, rhs, params.dx, params.dy), params.poisson_iters

    tol = params.poisson_tol
    res = poisson_residual(p, rhs, params.dx, params.dy)
    sweeps = 0
    check_every = 10
    while res > tol:
        if sweeps >= params.poisson_max_iter:
            raise PoissonNotConverged(res, sweeps)
        for _ in range(check_every):
            p, nxt = sweep(p, nxt)
        sweeps += check_every
        res = poisson_residual(p, rhs, params.dx, params.dy)
    return p, res, sweeps


def divergence_norm(state: FlowState, params: CavityParams) -> float:
    """L2 norm of the central-difference divergence over interior nodes."""
    div = _ddx(state.u, params.dx)[1:-1, 1:-1] + _ddy(state.v, params.dy)[1:-1, 1:-1]
    return float(np.sqrt(np.sum(div * div)))


# blow-up is detected explicitly below and raised as DivergenceError
@np.errstate(over="ignore", invalid="ignore")
def _step(state: FlowState, lid_u: float, params: CavityParams, step_index: int = 0):
    dx, dy, dt, rho, mu = params.dx, params.dy, params.dt, params.rho, params.mu
    u, v = state.u, state.v
    dudx, dudy = _ddx(u, dx), _ddy(u, dy)
    dvdx, dvdy = _ddx(v, dx), _ddy(v, dy)
    tent = FlowState(
        u + dt * (mu * _laplace(u, dx, dy) - (u * dudx + v * dudy)),
        v + dt * (mu * _laplace(v, dx, dy) - (u * dvdx + v * dvdy)),
        state.p,
        state.t,
    )
    apply_velocity_bcs(tent, lid_u)

    rhs = (rho / dt) * (_ddx(tent.u, dx) + _ddy(tent.v, dy))
    p, residual, sweeps = solve_pressure_poisson(state.p, rhs, params)

    new = FlowState(
        tent.u - (dt / rho) * _ddx(p, dx),
        tent.v - (dt / rho) * _ddy(p, dy),
        p,
        state.t + dt,
    )
    apply_velocity_bcs(new, lid_u)
    for arr in (new.u, new.v, new.p):
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(step_index)
    return new, residual, sweeps


def step(state: FlowState, lid_u: float, params: CavityParams, step_index: int = 0) -> FlowState:
    """Advance one explicit projection step with the lid moving at ``lid_u``."""
    return _step(state, lid_u, params, step_index)[0]


def cfl_number(state: FlowState, params: CavityParams) -> float:
    vmax = max(float(np.max(np.abs(state.u))), float(np.max(np.abs(state.v))))
    return params.dt * vmax / min(params.dx, params.dy)


def snapshot_steps(params: CavityParams) -> np.ndarray:
    if params.n_steps % params.n_snapshots:
        raise ValueError("n_steps must be a multiple of n_snapshots")
    every = params.n_steps // params.n_snapshots
    return every * np.arange(1, params.n_snapshots + 1)


def lid_history(profile: LoadProfile, params: CavityParams) -> np.ndarray:
    """Lid velocity at every step time k*dt, k = 1..n_steps."""
    interp = profile.interpolant()
    if abs(interp.t_max - params.t_total) > 1e-9 * max(1.0, params.t_total) or interp.t_min != 0.0:
        raise ValueError(
            f"profile spans [{interp.t_min}, {interp.t_max}] but the run needs [0, {params.t_total}]"
        )
    ts = params.dt * np.arange(1, params.n_steps + 1)
    return eval_rbi(interp, np.minimum(ts, interp.t_max))


def run_cavity_case(profile: LoadProfile, params: CavityParams) -> CaseResult:
    lids = lid_history(profile, params)
    keep = set(int(k) for k in snapshot_steps(params))
    state = FlowState.zeros(params)
    snaps = np.empty((params.n_snapshots, params.n_nodes, 3))
    diags: list[StepInfo] = []
    s = 0
    for k in range(1, params.n_steps + 1):
        state, residual, sweeps = _step(state, float(lids[k - 1]), params, k)
        if k in keep:
            snaps[s, :, 0] = state.p.ravel()
            snaps[s, :, 1] = state.u.ravel()
            snaps[s, :, 2] = state.v.ravel()
            diags.append(StepInfo(k, cfl_number(state, params), divergence_norm(state, params), residual, sweeps))
            s += 1
    return CaseResult(snaps, diags)


def max_stable_dt(params: CavityParams, u_max: float = 2.0) -> float:
    """Conservative explicit bound from diffusion and advection limits."""
    h = min(params.dx, params.dy)
    diff = 0.25 * h * h / params.mu
    adv = h / u_max if u_max > 0 else math.inf
    return min(diff, adv)
