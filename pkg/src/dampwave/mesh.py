"""Uniform tensor meshes on an interval or a rectangle.

Fields are plain numpy arrays whose shape equals ``mesh.shape``: ``(nx,)``
in 1D and ``(nx, ny)`` in 2D (x index slowest, so ``ravel()`` gives the
x-major node order used in CSV files).

The discrete Laplacian is the 3-point / 5-point central stencil.  Neumann
and dynamical faces use a mirrored ghost node, which keeps the stencil
second order and makes the trapezoid-weighted operator symmetric; this is
what lets the discrete energy balance mirror the continuous one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import InvalidExtent, MeshMismatch, UnsupportedBoundary

BC_KINDS = ("dirichlet", "neumann", "dynamical")


@dataclass(frozen=True)
class BoundarySpec:
    kind: str

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise UnsupportedBoundary(f"unknown boundary kind {self.kind!r}")


@dataclass(frozen=True)
class Mesh:
    dimension: int
    extents: tuple[float, ...]
    node_counts: tuple[int, ...]
    # One spec per face: (x=0, x=Lx) in 1D, (x=0, x=Lx, y=0, y=Ly) in 2D.
    faces: tuple[BoundarySpec, ...]

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.extents, self.node_counts))

    @property
    def dx(self) -> float:
        return self.spacings[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node_counts

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_counts))

    @property
    def has_dynamical(self) -> bool:
        return any(f.kind == "dynamical" for f in self.faces)

    @property
    def bc_label(self) -> str:
        kinds = {f.kind for f in self.faces}
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(0.0, self.extents[i], self.node_counts[i])

    def coords(self) -> tuple[np.ndarray, ...]:
        """Nodal coordinate arrays, each of shape ``mesh.shape``."""
        return tuple(np.meshgrid(*(self.axis(i) for i in range(self.dimension)), indexing="ij"))

    def axis_weights(self, i: int) -> np.ndarray:
        w = np.full(self.node_counts[i], self.spacings[i])
        w[0] = w[-1] = 0.5 * self.spacings[i]
        return w

    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (tensorized in 2D)."""
        if self.dimension == 1:
            return self.axis_weights(0)
        return np.outer(self.axis_weights(0), self.axis_weights(1))

    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for face, spec in enumerate(self.faces):
            if spec.kind != "dirichlet":
                continue
            axis, side = divmod(face, 2)
            idx = [slice(None)] * self.dimension
            idx[axis] = -1 if side else 0
            mask[tuple(idx)] = True
        return mask

    def free_mask(self) -> np.ndarray:
        return ~self.dirichlet_mask()

    def boundary_damping(self) -> np.ndarray:
        """Per-node coefficient of the boundary velocity term.

        For a dynamical face the ghost relation contributes ``-2 v / dx`` to
        the Laplacian at the face node; divided out of the trapezoid weight
        this is exactly the boundary dissipation ``-v`` per unit surface.
        """
        coef = np.zeros(self.shape)
        if self.dimension == 1:
            for side, spec in enumerate(self.faces):
                if spec.kind == "dynamical":
                    coef[-1 if side else 0] = 2.0 / self.dx
        return coef

    def check(self, u: np.ndarray, name: str = "field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise MeshMismatch(f"{name} has shape {u.shape}, mesh expects {self.shape}")
        return u


def build_mesh(
    dimension: int,
    extents: Sequence[float] | float,
    node_counts: Sequence[int] | int,
    boundary_spec: str | BoundarySpec | Sequence[str | BoundarySpec] = "dirichlet",
) -> Mesh:
    """Construct a uniform mesh and validate its boundary tags.

    ``boundary_spec`` is a single kind applied to every face, or one kind per
    face.  Dynamical faces are only supported in 1D.
    """
    if dimension not in (1, 2):
        raise InvalidExtent(f"dimension must be 1 or 2, got {dimension}")
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    node_counts = tuple(int(n) for n in np.atleast_1d(node_counts))
    if len(extents) != dimension or len(node_counts) != dimension:
        raise InvalidExtent("need one extent and one node count per dimension")
    if any(not np.isfinite(e) or e <= 0 for e in extents):
        raise InvalidExtent(f"extents must be positive, got {extents}")
    if any(n < 3 for n in node_counts):
        raise InvalidExtent(f"need at least 3 nodes per axis, got {node_counts}")

    if isinstance(boundary_spec, (str, BoundarySpec)):
        boundary_spec = [boundary_spec] * (2 * dimension)
    faces = tuple(b if isinstance(b, BoundarySpec) else BoundarySpec(str(b)) for b in boundary_spec)
    if len(faces) != 2 * dimension:
        raise UnsupportedBoundary(f"need {2 * dimension} face specs, got {len(faces)}")
    if dimension == 2 and any(f.kind == "dynamical" for f in faces):
        raise UnsupportedBoundary("dynamical boundary condition is only supported in 1D")
    return Mesh(dimension, extents, node_counts, faces)


def _second_difference(u, axis, h, kinds, vel):
    """d²u/dx² along ``axis`` including the ghost closures of both faces."""
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    for side, kind in enumerate(kinds):
        end, nb = (-1, -2) if side else (0, 1)
        if kind == "dirichlet":
            out[end] = 0.0
        else:
            out[end] = 2.0 * (u[nb] - u[end]) / h**2
            if kind == "dynamical":
                # ghost from  d_nu u = -u - v
                vb = 0.0 if vel is None else np.moveaxis(vel, axis, 0)[end]
                out[end] -= 2.0 * (u[end] + vb) / h
    return np.moveaxis(out, 0, axis)


def laplacian(u: np.ndarray, mesh: Mesh, v: np.ndarray | None = None) -> np.ndarray:
    """Second-order discrete Laplacian of a nodal field.

    Dirichlet nodes return 0 (their values are taken as 0 by the
    neighbours).  On a dynamical face the ghost value uses
    ``d_nu u = -u - v``; pass the velocity field ``v`` there, otherwise it is
    taken as zero (the static Robin operator).
    """
    u = mesh.check(u)
    if v is not None:
        v = mesh.check(v, "velocity")
    lap = np.zeros_like(u)
    for axis in range(mesh.dimension):
        kinds = (mesh.faces[2 * axis].kind, mesh.faces[2 * axis + 1].kind)
        lap += _second_difference(u, axis, mesh.spacings[axis], kinds, v)
    lap[mesh.dirichlet_mask()] = 0.0
    return lap


def _axis_matrix(n, h, kinds):
    main = np.full(n, -2.0)
    upper = np.ones(n - 1)
    lower = np.ones(n - 1)
    for side, kind in enumerate(kinds):
        if kind == "dirichlet":
            continue
        if side == 0:
            upper[0] = 2.0
        else:
            lower[-1] = 2.0
        if kind == "dynamical":
            main[-1 if side else 0] -= 2.0 * h
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2


def laplacian_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Sparse matrix of the static operator, acting on ``u.ravel()``.

    Rows and columns of Dirichlet nodes are zeroed, so the operator agrees
    with :func:`laplacian` (``v = 0``) on fields vanishing on Dirichlet faces.
    """
    mats = [
        _axis_matrix(mesh.node_counts[a], mesh.spacings[a], (mesh.faces[2 * a].kind, mesh.faces[2 * a + 1].kind))
        for a in range(mesh.dimension)
    ]
    if mesh.dimension == 1:
        L = mats[0]
    else:
        L = sp.kron(mats[0], sp.identity(mesh.node_counts[1])) + sp.kron(sp.identity(mesh.node_counts[0]), mats[1])
    keep = sp.diags(mesh.free_mask().ravel().astype(float))
    return (keep @ L @ keep).tocsr()


def integrate(u: np.ndarray, mesh: Mesh) -> float:
    """Trapezoidal quadrature of a nodal field over the domain."""
    u = mesh.check(u)
    return float(np.sum(mesh.weights() * u))


def inner(a: np.ndarray, b: np.ndarray, mesh: Mesh) -> float:
    return integrate(mesh.check(a) * mesh.check(b), mesh)


def l2_norm(u: np.ndarray, mesh: Mesh) -> float:
    return float(np.sqrt(max(inner(u, u, mesh), 0.0)))


def gradient_energy(u: np.ndarray, mesh: Mesh) -> float:
    """Discrete ``∫|∇u|²`` built from forward differences on mesh edges.

    Summation by parts makes this equal to ``-<laplacian(u), u>`` for the
    Dirichlet and Neumann closures (minus the boundary term for dynamical
    faces), so it is the potential matching the discrete dynamics.
    """
    u = mesh.check(u)
    if mesh.dimension == 1:
        return float(np.sum(np.diff(u) ** 2) / mesh.dx)
    dx, dy = mesh.spacings
    wx, wy = mesh.axis_weights(0), mesh.axis_weights(1)
    ex = np.sum(np.diff(u, axis=0) ** 2 * wy[None, :]) / dx
    ey = np.sum(np.diff(u, axis=1) ** 2 * wx[:, None]) / dy
    return float(ex + ey)


def h1_norm(u: np.ndarray, mesh: Mesh) -> float:
    return float(np.sqrt(gradient_energy(u, mesh) + inner(u, u, mesh)))


def boundary_integral(u: np.ndarray, mesh: Mesh) -> float:
    """``∫_{∂Ω} u² dS`` for a 1D mesh: ``u(0)² + u(L)²``."""
    if mesh.dimension != 1:
        raise UnsupportedBoundary("boundary_integral is only defined for 1D meshes")
    u = mesh.check(u)
    return float(u[0] ** 2 + u[-1] ** 2)


def normal_derivative(u: np.ndarray, mesh: Mesh) -> np.ndarray:
    """One-sided second-order outward normal derivative at the two 1D endpoints."""
    if mesh.dimension != 1:
        raise UnsupportedBoundary("normal_derivative is only defined for 1D meshes")
    u = mesh.check(u)
    dx = mesh.dx
    left = (3.0 * u[0] - 4.0 * u[1] + u[2]) / (2.0 * dx)
    right = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dx)
    return np.array([left, right])


def eigenmodes(mesh: Mesh, count: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Lowest eigenpairs of ``-laplacian`` under the mesh boundary conditions.

    Returns ``(lam, modes)`` with ``modes[k]`` a field of shape ``mesh.shape``,
    orthonormal in the trapezoid inner product (Dirichlet nodes are zero).
    """
    free = mesh.free_mask().ravel()
    w = mesh.weights().ravel()[free]
    L = laplacian_matrix(mesh)[free][:, free].toarray()
    sw = np.sqrt(w)
    # W L is symmetric; similarity transform to a symmetric standard problem
    S = -(sw[:, None] * L / sw[None, :])
    S = 0.5 * (S + S.T)
    count = min(count, S.shape[0])
    lam, vec = scipy.linalg.eigh(S, subset_by_index=[0, count - 1])
    modes = np.zeros((count, mesh.n_nodes))
    modes[:, free] = (vec / sw[:, None]).T
    for k in range(count):
        # deterministic sign: first significant entry positive
        row = modes[k]
        j = np.flatnonzero(np.abs(row) > 1e-8 * np.abs(row).max())[0]
        if row[j] < 0:
            modes[k] = -row
    return lam, modes.reshape((count,) + mesh.shape)


def write_field_csv(path: str | Path, mesh: Mesh, values: np.ndarray, name: str = "value") -> None:
    values = mesh.check(values)
    coords = [c.ravel() for c in mesh.coords()]
    header = ["x", "y"][: mesh.dimension] + [name]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*coords, values.ravel()):
            writer.writerow([repr(float(x)) for x in row])


def read_field_csv(path: str | Path, mesh: Mesh) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != mesh.n_nodes or data.shape[1] != mesh.dimension + 1:
        raise MeshMismatch(f"{path}: {data.shape[0]} rows do not match mesh with {mesh.n_nodes} nodes")
    for i, c in enumerate(mesh.coords()):
        if not np.allclose(data[:, i], c.ravel(), atol=1e-9 * max(mesh.extents)):
            raise MeshMismatch(f"{path}: node coordinates do not match the mesh")
    return data[:, -1].reshape(mesh.shape)
