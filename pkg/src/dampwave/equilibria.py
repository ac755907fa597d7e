"""Stationary solutions and numerical Łojasiewicz exponent probes.

The probe draws smooth perturbations ``w`` around an equilibrium, records
``x = log|e(φ+w) - e(φ)|`` and ``y = log‖Δu + f(u)‖`` and fits
``y = (1 - θ) x + c``.  Only the exponent is estimated; the inequality's
multiplicative constant is not.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import mesh as msh
from .dynamics import GalerkinSystem
from .errors import DegenerateSamples, SingularJacobian
from .mesh import Mesh
from .nonlinearity import Nonlinearity

MAX_NEWTON = 100
ENERGY_CUTOFF = 1e-14
DEFAULT_RADII = (1e-1, 1e-2, 1e-3)


@dataclass
class Equilibrium:
    phi: np.ndarray
    residual: float
    boundary_residual: float
    iterations: int
    converged: bool
    bc: str = ""
    nonlinearity: str = ""
    mesh: Mesh | None = field(default=None, repr=False)
    system: GalerkinSystem | None = field(default=None, repr=False)

    def metadata(self) -> dict:
        return {
            "schema_version": 1,
            "residual": self.residual,
            "boundary_residual": self.boundary_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "bc": self.bc,
            "nonlinearity": self.nonlinearity,
        }


# --------------------------------------------------------------------------
# Energy problems: the same probe works on meshes and Galerkin systems


class _MeshProblem:
    def __init__(self, mesh: Mesh, nl: Nonlinearity):
        self.mesh, self.nl = mesh, nl
        self.w = mesh.weights()
        self.free = mesh.free_mask()
        self.L = msh.laplacian_matrix(mesh)
        self.dyn = [i for i, f in enumerate(mesh.faces) if f.kind == "dynamical"]
        self.dyn_nodes = mesh.boundary_damping() > 0

    def energy(self, u):
        return 0.5 * msh.gradient_energy(u, self.mesh) + 0.5 * float(np.sum(u[self.dyn_nodes] ** 2)) - float(np.sum(self.w * self.nl.F(u)))

    def residual_field(self, u):
        r = msh.laplacian(u, self.mesh) + self.nl.f(u)
        r[~self.free] = 0.0
        return r

    def residual(self, u):
        r = self.residual_field(u)
        return float(np.sqrt(np.sum(self.w * r * r)))

    def boundary_residual(self, u):
        if not self.dyn:
            return 0.0
        rb = msh.normal_derivative(u, self.mesh) + u[[0, -1]]
        return float(np.sqrt(np.sum(rb[self.dyn] ** 2)))

    def norm(self, u):
        return msh.h1_norm(u, self.mesh)

    def basis(self, count):
        return msh.eigenmodes(self.mesh, count)[1]


class _GalerkinProblem:
    def __init__(self, system: GalerkinSystem):
        self.A = np.asarray(system.A, float)
        self.nl = system.nonlinearity

    def energy(self, u):
        return 0.5 * float(u @ self.A @ u) - float(np.sum(self.nl.F(u)))

    def residual_field(self, u):
        return -self.A @ u + self.nl.f(u)

    def residual(self, u):
        return float(np.linalg.norm(self.residual_field(u)))

    def boundary_residual(self, u):
        return 0.0

    def norm(self, u):
        return float(np.sqrt(u @ self.A @ u + u @ u))

    def basis(self, count):
        lam, vec = np.linalg.eigh(self.A)
        return vec[:, : min(count, vec.shape[1])].T


def _problem(eq: Equilibrium, nl: Nonlinearity | None = None, mesh: Mesh | None = None):
    if eq.system is not None:
        return _GalerkinProblem(eq.system)
    return _MeshProblem(mesh or eq.mesh, nl)


# --------------------------------------------------------------------------
# Newton solve


def _solve(J, rhs):
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            step = spla.spsolve(J.tocsc(), rhs) if sp.issparse(J) else np.linalg.solve(J, rhs)
        except (spla.MatrixRankWarning, np.linalg.LinAlgError, RuntimeError) as exc:
            raise SingularJacobian(str(exc)) from None
    if not np.all(np.isfinite(step)):
        raise SingularJacobian("Newton step is not finite")
    return step


def _newton(residual_vec, jacobian, norm, x0, tol, max_iter):
    x = x0.copy()
    r = residual_vec(x)
    rn = norm(r)
    it = 0
    while it < max_iter:
        if rn <= tol and it > 0:
            break
        if rn == 0.0:
            break
        try:
            dx = _solve(jacobian(x), -r)
        except SingularJacobian:
            if rn <= tol:
                break
            raise
        lam = 1.0
        for _ in range(40):
            cand = x + lam * dx
            rc = residual_vec(cand)
            rcn = norm(rc)
            if np.isfinite(rcn) and rcn < rn:
                break
            lam *= 0.5
        else:
            # no decrease along the Newton direction
            break
        it += 1
        x, r, rn = cand, rc, rcn
    return x, rn, it


def solve_equilibrium(
    mesh: Mesh,
    nl: Nonlinearity,
    guess: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = MAX_NEWTON,
) -> Equilibrium:
    """Damped Newton for ``-Δφ = f(φ)`` under the mesh boundary conditions.

    Dynamical faces become the Robin condition ``∂_ν φ + φ = 0``.  A pure
    Neumann problem with ``f ≡ 0`` has only constant solutions; the guess's
    mean is returned.  On stall the best iterate comes back with
    ``converged = False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    guess = mesh.check(guess, "guess").copy()
    prob = _MeshProblem(mesh, nl)
    free = prob.free.ravel()
    w = mesh.weights().ravel()[free]
    guess[~prob.free] = 0.0

    if nl.is_zero and free.all() and not prob.dyn:
        phi = np.full(mesh.shape, msh.integrate(guess, mesh) / msh.integrate(np.ones(mesh.shape), mesh))
        return Equilibrium(phi, prob.residual(phi), 0.0, 0, True, mesh.bc_label, nl.name, mesh)

    Lff = prob.L[free][:, free].tocsr()

    def expand(xf):
        full = np.zeros(mesh.n_nodes)
        full[free] = xf
        return full

    def residual_vec(xf):
        return -(Lff @ xf) - nl.f(xf)

    def jacobian(xf):
        return -Lff - sp.diags(nl.df(xf))

    def norm(r):
        return float(np.sqrt(np.sum(w * r * r)))

    xf, rn, it = _newton(residual_vec, jacobian, norm, guess.ravel()[free], tol, max_iter)
    phi = expand(xf).reshape(mesh.shape)
    return Equilibrium(phi, rn, prob.boundary_residual(phi), it, bool(rn <= tol), mesh.bc_label, nl.name, mesh)


def solve_galerkin_equilibrium(system: GalerkinSystem, guess: np.ndarray, tol: float = 1e-12, max_iter: int = MAX_NEWTON) -> Equilibrium:
    """Newton for ``A ψ = f(ψ)``."""
    A = np.asarray(system.A, float)
    nl = system.nonlinearity
    x, rn, it = _newton(
        lambda x: -A @ x + nl.f(x),
        lambda x: -A + np.diag(nl.df(x)),
        lambda r: float(np.linalg.norm(r)),
        np.asarray(guess, float),
        tol,
        max_iter,
    )
    return Equilibrium(x, rn, 0.0, it, bool(rn <= tol), "abstract", nl.name, system=system)


def distance_to(u: np.ndarray, v: np.ndarray, eq: Equilibrium, mesh: Mesh | None = None) -> tuple[float, float]:
    """``(‖u - φ‖_{H¹}, ‖v‖_{L²})`` for a state ``(u, v)``."""
    if eq.system is not None:
        d = np.asarray(u, float) - eq.phi
        A = np.asarray(eq.system.A, float)
        return float(np.sqrt(d @ A @ d + d @ d)), float(np.linalg.norm(v))
    mesh = mesh or eq.mesh
    d = mesh.check(u) - mesh.check(eq.phi, "equilibrium")
    return msh.h1_norm(d, mesh), msh.l2_norm(v, mesh)


def save_equilibrium(eq: Equilibrium, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (field) and ``<stem>.json`` (metadata)."""
    stem = Path(stem)
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    if eq.mesh is not None:
        msh.write_field_csv(csv_path, eq.mesh, eq.phi, name="phi")
    else:
        np.savetxt(csv_path, eq.phi[:, None], delimiter=",", header="phi", comments="")
    json_path.write_text(json.dumps(eq.metadata(), indent=2))
    return csv_path, json_path


def load_equilibrium(stem: str | Path, mesh: Mesh) -> Equilibrium:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    phi = msh.read_field_csv(stem.with_suffix(".csv"), mesh)
    return Equilibrium(phi, meta["residual"], meta["boundary_residual"], meta["iterations"], meta["converged"],
                       meta.get("bc", ""), meta.get("nonlinearity", ""), mesh)


# --------------------------------------------------------------------------
# Łojasiewicz probes


@dataclass
class LojasiewiczEstimate:
    theta: float
    slope: float
    intercept: float
    r2: float
    radii: tuple[float, ...]
    samples: list[tuple[float, float, float]]  # (radius, x, y)
    n_used: int
    clamped: bool = False
    wide_confidence: bool = False
    note: str = ""

    @property
    def delta(self) -> float:
        return max(self.radii)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "radii": list(self.radii),
            "n_used": self.n_used,
            "clamped": self.clamped,
            "wide_confidence": self.wide_confidence,
            "note": self.note,
        }


def _perturbation(basis, rng, prob, radius, modes):
    idx = np.arange(len(basis)) if modes is None else np.asarray(modes)
    coef = rng.standard_normal(idx.size)
    w = np.tensordot(coef, basis[idx], axes=1)
    n = prob.norm(w)
    if n == 0.0:
        return w
    return w * (radius / n)


def _ball_samples(eq, nl, mesh, radii, samples_per_radius, seed, modes, n_modes=10):
    prob = _problem(eq, nl, mesh)
    basis = prob.basis(n_modes)
    e_phi = prob.energy(eq.phi)
    children = np.random.SeedSequence(seed).spawn(len(radii) * samples_per_radius)
    out = []
    for i, r in enumerate(radii):
        for j in range(samples_per_radius):
            rng = np.random.default_rng(children[i * samples_per_radius + j])
            u = eq.phi + _perturbation(basis, rng, prob, r, modes)
            de = abs(prob.energy(u) - e_phi)
            res = prob.residual(u) + prob.boundary_residual(u)
            out.append((float(r), de, res))
    return out


def probe_lojasiewicz(
    eq: Equilibrium,
    nl: Nonlinearity | None = None,
    mesh: Mesh | None = None,
    radii: Sequence[float] = DEFAULT_RADII,
    samples_per_radius: int = 32,
    seed: int = 0,
    modes: Sequence[int] | None = None,
) -> LojasiewiczEstimate:
    """Estimate the Łojasiewicz exponent at ``eq`` by log-log regression.

    Perturbations are Gaussian combinations of the lowest 10 eigenmodes,
    scaled to H¹ norm ``r``; ``modes`` restricts them to chosen eigenmode
    indices.  Samples with
    ``|Δe| <= 1e-14`` are dropped.  The estimate is clamped to ``(0, 1/2]``.
    """
    radii = tuple(float(r) for r in radii)
    if not radii or any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    nl = nl or (eq.system.nonlinearity if eq.system is not None else None)
    raw = _ball_samples(eq, nl, mesh, radii, samples_per_radius, seed, modes)
    rows = [(r, np.log(de), np.log(res)) for r, de, res in raw if de > ENERGY_CUTOFF and res > 0]
    if len(rows) < 2:
        raise DegenerateSamples(f"only {len(rows)} usable samples")
    x = np.array([row[1] for row in rows])
    y = np.array([row[2] for row in rows])
    if np.ptp(x) < 1e-12:
        raise DegenerateSamples("all energy gaps are equal")
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    theta = 1.0 - float(slope)
    clamped, note = False, ""
    if theta > 0.5:
        clamped, note = True, f"raw estimate {theta:.4f} > 1/2 (samples outside the asymptotic regime); reported as 0.5"
        theta = 0.5
    elif theta <= 0.0:
        clamped, note = True, f"raw estimate {theta:.4f} <= 0; reported as 1e-6"
        theta = 1e-6
    wide = len(set(r for r, *_ in rows)) < 2 or len(rows) < 8
    return LojasiewiczEstimate(theta, float(slope), float(intercept), r2, radii, rows, len(rows), clamped, wide, note)


def verify_ls(
    eq: Equilibrium,
    nl: Nonlinearity | None,
    mesh: Mesh | None,
    theta: float,
    delta: float,
    n_samples: int = 256,
    margin: float = 0.5,
    seed: int = 0,
) -> dict:
    """Check ``‖Δu + f(u)‖ >= (1 - margin) |e_u - e_φ|^{1-θ}`` on the δ-ball.

    Radii are log-uniform on ``[δ·1e-3, δ]``.
    """
    if not 0 < theta <= 0.5:
        raise ValueError("theta must lie in (0, 1/2]")
    rng = np.random.default_rng(seed)
    radii = delta * 10.0 ** rng.uniform(-3.0, 0.0, n_samples)
    raw = _ball_samples(eq, nl, mesh, tuple(radii), 1, seed, None)
    worst, witness, used = np.inf, None, 0
    for r, de, res in raw:
        if de <= ENERGY_CUTOFF:
            continue
        used += 1
        ratio = res / de ** (1.0 - theta)
        if ratio < worst:
            worst, witness = ratio, r
    if used == 0:
        return {"verdict": "holds-on-samples", "worst_ratio": None, "witness_radius": None, "n_used": 0}
    verdict = "holds-on-samples" if worst >= 1.0 - margin else "violated"
    return {"verdict": verdict, "worst_ratio": float(worst), "witness_radius": witness, "n_used": used}
