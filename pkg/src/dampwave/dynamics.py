"""Time integration of the damped wave equation and its abstract analogue.

Scheme: velocity Verlet with the damping force treated by the implicit
midpoint rule,

    w        = v^n + dt/2 (a(u^n) - d(w)),      d(w) = h(t+dt/2) g(w) + D_b w
    u^{n+1}  = u^n + dt w
    v^{n+1}  = w + dt/2 (a(u^{n+1}) - d(w))

where ``a(u) = Δu + f(u)`` and ``D_b`` is the boundary velocity coefficient
of a dynamical face.  For linear damping this is second order, reduces to
leapfrog when ``h = 0`` and maps ``v -> v (1-c)/(1+c)`` under pure damping,
so it is stable for any damping size.
"""
from __future__ import annotations

import csv
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mesh as msh
from .damping import IDENTITY, DampingProfile, VelocityDamping, evaluate, window_means_floor
from .errors import ConfigError, NewtonError
from .mesh import Mesh
from .nonlinearity import Nonlinearity, bounds_on

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
CSV_COLUMNS = ("t", "kinetic", "potential", "boundary", "forcing", "E", "e", "H", "residual", "grad_v", "v_l2", "u_linf")


@dataclass
class State:
    t: float
    u: np.ndarray
    v: np.ndarray
    blown_up: bool = False


@dataclass(frozen=True)
class EnergyReport:
    t: float
    kinetic: float
    potential: float
    boundary: float
    forcing: float
    E: float
    e: float
    H: float
    residual: float
    grad_v: float
    v_l2: float
    u_linf: float

    def row(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


@dataclass(frozen=True)
class GalerkinSystem:
    """Finite-dimensional ``ü + h(t) B u̇ + A u = f(u)``.

    ``f`` acts componentwise through ``nonlinearity``, whose primitive sums
    to the scalar potential.
    """

    A: np.ndarray
    B: np.ndarray
    nonlinearity: Nonlinearity

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def coercivity(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.B + self.B.T)).min())

    def validate(self, seed: int = 0, n_samples: int = 256) -> float:
        A, B = np.asarray(self.A, float), np.asarray(self.B, float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape != A.shape:
            raise ConfigError("A and B must be square matrices of equal size")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ConfigError("A must be symmetric")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise ConfigError("A must be positive definite")
        a = self.coercivity
        if a <= 0:
            raise ConfigError(f"B is not coercive (smallest symmetric eigenvalue {a:g})")
        w = np.random.default_rng(seed).standard_normal((n_samples, self.n))
        quad = np.einsum("ij,jk,ik->i", w, B, w)
        if np.any(quad < a * np.sum(w**2, axis=1) * (1 - 1e-10)):
            raise ConfigError("coercivity check failed on random samples")
        return a


@dataclass(frozen=True)
class SimConfig:
    damping: DampingProfile
    nonlinearity: Nonlinearity
    u0: np.ndarray
    v0: np.ndarray
    t_end: float
    mesh: Mesh | None = None
    velocity_damping: VelocityDamping = IDENTITY
    dt: float | None = None
    cfl: float = 0.5
    stride: int = 10
    epsilon: float | None = None  # None: auto_epsilon
    m_blow: float = 1e6
    keep_fields: bool = True

    def resolved_dt(self, max_freq: float | None = None) -> tuple[float, int]:
        """Time step and step count, with ``t_end`` an integer number of steps.

        ``max_freq`` overrides the mesh-based CFL length (Galerkin runs).
        """
        if not 0 < self.cfl <= 1:
            raise ConfigError("CFL factor must lie in (0, 1]")
        if max_freq is not None:
            length = 2.0 / max_freq
            limit = length
        else:
            length = min(self.mesh.spacings)
            limit = length / math.sqrt(self.mesh.dimension)
        target = self.dt if self.dt is not None else self.cfl * length
        if target <= 0:
            raise ConfigError("time step must be positive")
        if target > limit * (1 + 1e-12):
            raise ConfigError(f"time step {target:g} exceeds the stability bound {limit:g}")
        if self.t_end < 0:
            raise ConfigError("t_end must be nonnegative")
        if self.t_end == 0:
            return target, 0
        n = max(1, math.ceil(self.t_end / target - 1e-9))
        return self.t_end / n, n


# --------------------------------------------------------------------------
# Spatial operators behind a common interface


class _MeshOps:
    def __init__(self, mesh: Mesh, nl: Nonlinearity):
        self.mesh, self.nl = mesh, nl
        self.w = mesh.weights()
        self.dirichlet = mesh.dirichlet_mask()
        self.db = mesh.boundary_damping()
        self.has_db = bool(self.db.any())
        self.dyn_nodes = self.db > 0

    def force(self, u):
        a = msh.laplacian(u, self.mesh) + self.nl.f(u)
        a[self.dirichlet] = 0.0
        return a

    def solve_damping(self, vstar, h, dt, g):
        c = 0.5 * dt * h
        cb = 0.5 * dt * self.db
        if g.is_linear:
            w = vstar / (1.0 + c * g.gain + cb)
            d = (h * g.gain + self.db) * w
            return w, d
        w = vstar.copy()
        for _ in range(NEWTON_MAXITER):
            F = w * (1.0 + cb) + c * g.g(w) - vstar
            if np.max(np.abs(F)) <= NEWTON_TOL * (1.0 + np.max(np.abs(vstar))):
                break
            w = w - F / (1.0 + cb + c * g.dg(w))
        else:
            raise NewtonError("damping solve did not converge")
        return w, h * g.g(w) + self.db * w

    def pair(self, w, d):
        return float(np.sum(self.w * w * d))

    def energy(self, t, u, v, eps) -> EnergyReport:
        w, nl, mesh = self.w, self.nl, self.mesh
        kinetic = 0.5 * float(np.sum(w * v * v))
        potential = 0.5 * msh.gradient_energy(u, mesh)
        boundary = 0.5 * float(np.sum(u[self.dyn_nodes] ** 2))
        forcing = -float(np.sum(w * nl.F(u)))
        r = msh.laplacian(u, mesh, v if self.has_db else None) + nl.f(u)
        r[self.dirichlet] = 0.0
        r2 = float(np.sum(w * r * r))
        gv2 = msh.gradient_energy(v, mesh)
        E = kinetic + potential + boundary + forcing
        H = E - eps**2 * float(np.sum(w * r * v)) + eps * gv2 + eps * r2 - eps * float(np.sum(w * nl.df(u) * v * v))
        return EnergyReport(t, kinetic, potential, boundary, forcing, E, E - kinetic, H,
                            math.sqrt(r2), math.sqrt(gv2), math.sqrt(2 * kinetic), float(np.max(np.abs(u))))


class _GalerkinOps:
    def __init__(self, system: GalerkinSystem):
        self.A = np.asarray(system.A, dtype=float)
        self.B = np.asarray(system.B, dtype=float)
        self.nl = system.nonlinearity
        self.eye = np.eye(system.n)

    def force(self, u):
        return -self.A @ u + self.nl.f(u)

    def solve_damping(self, vstar, h, dt, g):
        if not g.is_linear:
            raise ConfigError("Galerkin runs support linear velocity damping only")
        Bk = g.gain * self.B
        w = np.linalg.solve(self.eye + 0.5 * dt * h * Bk, vstar)
        return w, h * (Bk @ w)

    def pair(self, w, d):
        return float(w @ d)

    def energy(self, t, u, v, eps) -> EnergyReport:
        nl = self.nl
        kinetic = 0.5 * float(v @ v)
        potential = 0.5 * float(u @ self.A @ u)
        forcing = -float(np.sum(nl.F(u)))
        r = -self.A @ u + nl.f(u)
        r2 = float(r @ r)
        gv2 = float(v @ self.A @ v)
        E = kinetic + potential + forcing
        H = E - eps**2 * float(r @ v) + eps * gv2 + eps * r2 - eps * float(np.sum(nl.df(u) * v * v))
        return EnergyReport(t, kinetic, potential, 0.0, forcing, E, E - kinetic, H,
                            math.sqrt(r2), math.sqrt(gv2), math.sqrt(2 * kinetic), float(np.max(np.abs(u))))


def _ops_for(config: SimConfig, system: GalerkinSystem | None = None):
    if system is not None:
        return _GalerkinOps(system)
    if config.mesh is None:
        raise ConfigError("mesh runs need a mesh")
    return _MeshOps(config.mesh, config.nonlinearity)


def _advance(ops, u, v, a, h_mid, dt, g):
    vstar = v + 0.5 * dt * a
    w, d = ops.solve_damping(vstar, h_mid, dt, g)
    u1 = u + dt * w
    a1 = ops.force(u1)
    v1 = w + 0.5 * dt * (a1 - d)
    return u1, v1, a1, ops.pair(w, d)


def _escaped(u, m_blow) -> bool:
    peak = np.max(np.abs(u))
    return not np.isfinite(peak) or peak > m_blow


def step(state: State, config: SimConfig, dt: float | None = None) -> State:
    """Advance one time step (``dt`` defaults to the configured step)."""
    if state.blown_up:
        raise ValueError("cannot step a blown-up state")
    ops = _ops_for(config)
    if dt is None:
        dt, _ = config.resolved_dt()
    u = np.array(state.u, dtype=float)
    v = np.array(state.v, dtype=float)
    if isinstance(ops, _MeshOps):
        u[ops.dirichlet] = 0.0
        v[ops.dirichlet] = 0.0
    h_mid = float(evaluate(config.damping, state.t + 0.5 * dt))
    with np.errstate(over="ignore", invalid="ignore"):
        u1, v1, _, _ = _advance(ops, u, v, ops.force(u), h_mid, dt, config.velocity_damping)
    return State(state.t + dt, u1, v1, _escaped(u1, config.m_blow))


# --------------------------------------------------------------------------
# Trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    reports: list[EnergyReport]
    work: np.ndarray  # cumulative dissipated energy at the sample times
    dt: float
    epsilon: float
    blown_up: bool = False
    blow_up_time: float | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    wall_clock: float = 0.0
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports])

    @property
    def final(self) -> EnergyReport:
        return self.reports[-1]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in self.reports:
                writer.writerow([repr(float(x)) for x in r.row()])

    def summary(self) -> dict:
        f = self.final
        return {
            "schema_version": 1,
            "t_final": f.t,
            "E_final": f.E,
            "v_l2_final": f.v_l2,
            "u_linf_final": f.u_linf,
            "residual_final": f.residual,
            "blown_up": self.blown_up,
            "blow_up_time": self.blow_up_time,
            "epsilon": self.epsilon,
            "dt": self.dt,
            "samples": len(self.reports),
            "wall_clock": self.wall_clock,
            **self.meta,
        }


def read_trajectory_csv(path: str | Path) -> dict[str, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    return {name: data[:, i] for i, name in enumerate(header)}


def auto_epsilon(config: SimConfig, sup_u: float | None = None, kappa: float | None = None) -> float:
    """Lyapunov weight from damping floor and sampled derivative suprema.

    ``sup_u`` defaults to the sup norm of the initial displacement (the head
    of the trajectory); ``kappa`` to the smallest window mean of ``h`` seen
    by the certifier.
    """
    if sup_u is None:
        sup_u = float(np.max(np.abs(config.u0))) if np.size(config.u0) else 0.0
    if kappa is None:
        kappa = window_means_floor(config.damping)
    h_floor = max(kappa, 0.01)
    _, sup_df, sup_d2f = bounds_on(config.nonlinearity, max(sup_u, 1e-12))
    return min(h_floor / 4.0, 1.0 / (4.0 * (1.0 + sup_df)), 1.0 / (4.0 * (1.0 + sup_d2f)), 0.25)


def _integrate(ops, config: SimConfig, dt: float, n_steps: int) -> Trajectory:
    clock = _time.perf_counter()
    g = config.velocity_damping
    eps = config.epsilon if config.epsilon is not None else auto_epsilon(config)
    stride = max(1, int(config.stride))
    h_mid = np.asarray(evaluate(config.damping, (np.arange(n_steps) + 0.5) * dt), dtype=float)

    u = np.array(config.u0, dtype=float)
    v = np.array(config.v0, dtype=float)
    if isinstance(ops, _MeshOps):
        u[ops.dirichlet] = 0.0
        v[ops.dirichlet] = 0.0
    a = ops.force(u)
    work = 0.0

    times, reports, works, us, vs = [], [], [], [], []

    def record(t):
        times.append(t)
        reports.append(ops.energy(t, u, v, eps))
        works.append(work)
        if config.keep_fields:
            us.append(u.copy())
            vs.append(v.copy())

    record(0.0)
    blown, t_blow = False, None
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            u, v, a, rate = _advance(ops, u, v, a, h_mid[n], dt, g)
            t1 = (n + 1) * dt
            if _escaped(u, config.m_blow) or not np.all(np.isfinite(v)):
                blown, t_blow = True, t1
                times.append(t1)
                works.append(work)
                reports.append(_blown_report(t1, u, v))
                break
            # the damping sub-steps remove exactly dt * <w, d(w)>
            work += dt * rate
            if (n + 1) % stride == 0 or n + 1 == n_steps:
                record(t1)

    return Trajectory(
        times=np.array(times),
        reports=reports,
        work=np.array(works),
        dt=dt,
        epsilon=eps,
        blown_up=blown,
        blow_up_time=t_blow,
        u=np.array(us) if config.keep_fields else None,
        v=np.array(vs) if config.keep_fields else None,
        wall_clock=_time.perf_counter() - clock,
    )


def _blown_report(t, u, v) -> EnergyReport:
    with np.errstate(over="ignore", invalid="ignore"):
        peak = float(np.max(np.abs(u)))
    nan = float("nan")
    return EnergyReport(t, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, peak if np.isfinite(peak) else float("inf"))


def run(config: SimConfig) -> Trajectory:
    """Integrate from ``t = 0`` to ``t_end`` (or blow-up), sampling every ``stride`` steps."""
    if config.mesh is None:
        raise ConfigError("run() needs a mesh; use galerkin_run for abstract systems")
    config.mesh.check(config.u0, "u0")
    config.mesh.check(config.v0, "v0")
    if config.m_blow <= 0:
        raise ConfigError("blow-up threshold must be positive")
    dt, n_steps = config.resolved_dt()
    traj = _integrate(_MeshOps(config.mesh, config.nonlinearity), config, dt, n_steps)
    traj.meta["dimension"] = config.mesh.dimension
    return traj


def galerkin_run(system: GalerkinSystem, config: SimConfig) -> Trajectory:
    """Same integrator with ``-A`` in place of the Laplacian and ``B`` in the damping solve."""
    system.validate()
    u0 = np.asarray(config.u0, dtype=float)
    if u0.shape != (system.n,) or np.shape(config.v0) != (system.n,):
        raise ConfigError(f"initial data must have length {system.n}")
    lam_max = float(np.linalg.eigvalsh(np.asarray(system.A, float)).max())
    dt, n_steps = config.resolved_dt(max_freq=math.sqrt(lam_max))
    traj = _integrate(_GalerkinOps(system), config, dt, n_steps)
    traj.meta["galerkin_n"] = system.n
    return traj


def energy(state: State, config: SimConfig, epsilon: float | None = None, system: GalerkinSystem | None = None) -> EnergyReport:
    """All energy diagnostics of one state (``epsilon`` defaults to the config's, or 0)."""
    eps = epsilon if epsilon is not None else (config.epsilon or 0.0)
    return _ops_for(config, system).energy(state.t, np.asarray(state.u, float), np.asarray(state.v, float), eps)


def dissipation_residual(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """``|ΔE/Δt + mean dissipation rate|`` between consecutive samples.

    The dissipated work is accumulated during the run as
    ``dt <w, h g(w) + D_b w>`` with ``w`` the step's midpoint velocity, the
    exact amount removed by the damping sub-steps, so the residual
    measures only the conservative part of the scheme.  Returns ``(midpoint times, residuals)``.
    """
    if len(traj.times) < 2:
        raise ValueError("need at least two samples")
    n = len(traj.times) - (1 if traj.blown_up else 0)
    t = traj.times[:n]
    E = traj.column("E")[:n]
    W = traj.work[:n]
    dt = np.diff(t)
    return 0.5 * (t[1:] + t[:-1]), np.abs(np.diff(E) + np.diff(W)) / dt


def lyapunov_onset(H: np.ndarray, run_length: int = 10, slack: float = 0.0) -> int | None:
    """First sample index after which ``H`` keeps decreasing for ``run_length`` samples."""
    dec = np.diff(H) <= slack
    count = 0
    for i, ok in enumerate(dec):
        count = count + 1 if ok else 0
        if count >= run_length:
            return i - run_length + 1
    return None

