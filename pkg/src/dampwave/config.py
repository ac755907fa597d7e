"""INI run configurations: parsing, validation and resolved write-back."""
from __future__ import annotations

import ast
import configparser
import math
import operator
from dataclasses import dataclass, field
from importlib import resources
from io import StringIO
from pathlib import Path

import numpy as np

from . import damping as dmp
from . import mesh as msh
from . import nonlinearity as nlin
from .dynamics import GalerkinSystem, SimConfig
from .errors import ConfigError

SCENARIOS = (
    "paper-example",
    "constant-damping-cubic",
    "on-off",
    "sin-damping",
    "neumann",
    "dynamical-bc",
    "blow-up",
    "abstract-galerkin",
    "nonlinear-damping",
    "undamped-control",
)

# section -> allowed keys
SCHEMA = {
    "run": {"scenario", "seed", "notes"},
    "mesh": {"dimension", "extent", "nodes", "boundary"},
    "system": {"A", "B"},
    "damping": {"profile"},
    "nonlinearity": {"f"},
    "velocity_damping": {"g"},
    "initial": {"u0", "v0"},
    "integrator": {"t_end", "dt", "cfl", "stride", "epsilon", "m_blow"},
    "analysis": {"threshold", "radii", "samples_per_radius", "equilibrium_guess"},
    "output": {"directory"},
}
REQUIRED = {"damping": {"profile"}, "nonlinearity": {"f"}, "initial": {"u0"}, "integrator": {"t_end"}}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}


def number(text: str) -> float:
    """Evaluate a numeric literal, allowing ``pi`` and arithmetic (``pi/2``, ``2*pi``)."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return -ev(node.operand) if isinstance(node.op, ast.USub) else ev(node.operand)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ConfigError(f"not a number: {text!r}")

    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError:
        raise ConfigError(f"not a number: {text!r}") from None


def _numbers(text: str) -> list[float]:
    return [number(x) for x in text.split(",") if x.strip()]


def matrix(text: str) -> np.ndarray:
    """``diag:a,b,...``, ``tridiag:lo,mid,hi:n`` or rows ``a b; c d``."""
    kind, _, arg = text.strip().partition(":")
    if kind == "diag":
        return np.diag(_numbers(arg))
    if kind == "tridiag":
        vals, _, n = arg.rpartition(":")
        lo, mid, hi = _numbers(vals)
        n = int(n)
        return np.diag(np.full(n, mid)) + np.diag(np.full(n - 1, lo), -1) + np.diag(np.full(n - 1, hi), 1)
    rows = [[number(x) for x in r.split()] for r in text.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ConfigError(f"bad matrix {text!r}")
    return np.array(rows)


def initial_field(spec: str, mesh: msh.Mesh | None, n: int | None = None, base: Path | None = None) -> np.ndarray:
    """Build initial data from a shape spec.

    Mesh shapes: ``zero``, ``constant:c``, ``sine:k[:amp]``, ``cosine:k[:amp]``
    (mode ``k`` of the domain, tensor product in 2D),
    ``bump:center:width[:amp]`` (smooth, compactly supported, 1D) and
    ``file:path.csv``.  Abstract systems take ``vector:a,b,...`` or ``zero``.
    """
    kind, _, arg = spec.strip().partition(":")
    parts = [p for p in arg.split(":")] if arg else []
    if mesh is None:
        if kind == "zero":
            return np.zeros(n)
        if kind == "vector":
            vec = np.array(_numbers(arg))
            if vec.shape != (n,):
                raise ConfigError(f"vector has length {vec.size}, system has {n}")
            return vec
        raise ConfigError(f"abstract systems need 'vector:' or 'zero' initial data, got {spec!r}")
    if kind == "zero":
        return np.zeros(mesh.shape)
    if kind == "constant":
        return np.full(mesh.shape, number(arg))
    if kind in ("sine", "cosine"):
        k = number(parts[0]) if parts else 1.0
        amp = number(parts[1]) if len(parts) > 1 else 1.0
        trig = np.sin if kind == "sine" else np.cos
        out = amp * np.ones(mesh.shape)
        for i, c in enumerate(mesh.coords()):
            out = out * trig(k * math.pi * c / mesh.extents[i])
        return out
    if kind == "bump":
        if mesh.dimension != 1 or len(parts) < 2:
            raise ConfigError("bump needs center:width[:amp] on a 1D mesh")
        center, width = number(parts[0]), number(parts[1])
        amp = number(parts[2]) if len(parts) > 2 else 1.0
        r = (mesh.axis(0) - center) / width
        inside = np.abs(r) < 1
        out = np.zeros(mesh.shape)
        out[inside] = amp * np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        return out
    if kind == "file":
        path = Path(arg)
        if base is not None and not path.is_absolute():
            path = base / path
        return msh.read_field_csv(path, mesh)
    raise ConfigError(f"unknown initial data {spec!r}")


@dataclass
class RunConfiguration:
    name: str
    sim: SimConfig
    system: GalerkinSystem | None
    seed: int
    threshold: float
    radii: tuple[float, ...]
    samples_per_radius: int
    guess: np.ndarray
    output: Path | None
    notes: tuple[str, ...]
    parser: configparser.ConfigParser = field(repr=False)

    def resolved_text(self) -> str:
        """INI text with defaults filled in."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_dict(self.parser)
        cp.setdefault("run", {})
        cp["run"]["scenario"] = self.name
        cp["run"]["seed"] = str(self.seed)
        cp.setdefault("integrator", {})
        dt, n_steps = (self.sim.resolved_dt(_max_freq(self.system)) if self.sim.t_end > 0 else (0.0, 0))
        integ = cp["integrator"]
        integ["dt"] = repr(dt)
        integ["cfl"] = repr(self.sim.cfl)
        integ["stride"] = str(self.sim.stride)
        integ["m_blow"] = repr(self.sim.m_blow)
        cp.setdefault("analysis", {})
        cp["analysis"]["threshold"] = repr(self.threshold)
        cp["analysis"]["radii"] = ",".join(repr(r) for r in self.radii)
        cp["analysis"]["samples_per_radius"] = str(self.samples_per_radius)
        lines = [f"# resolved configuration, schema_version = 1, steps = {n_steps}"]
        buf = StringIO()
        cp.write(buf)
        return "\n".join(lines) + "\n" + buf.getvalue()


def _max_freq(system):
    if system is None:
        return None
    return math.sqrt(float(np.linalg.eigvalsh(np.asarray(system.A, float)).max()))


def _check_keys(cp: configparser.ConfigParser) -> None:
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp[section]) - SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    for section, keys in REQUIRED.items():
        for key in keys:
            if not cp.has_option(section, key):
                raise ConfigError(f"missing [{section}] {key}")
    if cp.has_section("mesh") == cp.has_section("system"):
        raise ConfigError("exactly one of [mesh] or [system] is required")


def parse_config(text: str, name: str = "run", base: Path | None = None) -> RunConfiguration:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable configuration: {exc}") from None
    _check_keys(cp)
    get = lambda s, k, d=None: cp.get(s, k, fallback=d)  # noqa: E731

    try:
        nl = nlin.parse(get("nonlinearity", "f"))
        profile = dmp.parse(get("damping", "profile"))
        g = dmp.parse_velocity_damping(get("velocity_damping", "g", "identity"))
        mesh, system = None, None
        if cp.has_section("mesh"):
            dim = int(get("mesh", "dimension", "1"))
            extent = _numbers(get("mesh", "extent", "pi"))
            nodes = [int(x) for x in get("mesh", "nodes", "101").split(",")]
            if len(extent) == 1:
                extent *= dim
            if len(nodes) == 1:
                nodes *= dim
            bc = [b.strip() for b in get("mesh", "boundary", "dirichlet").split(",")]
            mesh = msh.build_mesh(dim, extent, nodes, bc[0] if len(bc) == 1 else bc)
            n = None
        else:
            A = matrix(get("system", "A"))
            B = matrix(get("system", "B", f"diag:{','.join(['1'] * A.shape[0])}"))
            system = GalerkinSystem(A, B, nl)
            system.validate()
            n = A.shape[0]
        u0 = initial_field(get("initial", "u0"), mesh, n, base)
        v0 = initial_field(get("initial", "v0", "zero"), mesh, n, base)
        guess_spec = get("analysis", "equilibrium_guess")
        guess = initial_field(guess_spec, mesh, n, base) if guess_spec else None
        eps = get("integrator", "epsilon")
        dt = get("integrator", "dt")
        sim = SimConfig(
            damping=profile,
            nonlinearity=nl,
            u0=u0,
            v0=v0,
            t_end=number(get("integrator", "t_end")),
            mesh=mesh,
            velocity_damping=g,
            dt=number(dt) if dt else None,
            cfl=number(get("integrator", "cfl", "0.5")),
            stride=int(get("integrator", "stride", "10")),
            epsilon=number(eps) if eps and eps != "auto" else None,
            m_blow=number(get("integrator", "m_blow", "1e6")),
        )
        sim.resolved_dt(_max_freq(system))
        if sim.stride < 1:
            raise ConfigError("stride must be a positive integer")
        out = get("output", "directory")
        radii = tuple(_numbers(get("analysis", "radii", "1e-1,1e-2,1e-3")))
        return RunConfiguration(
            name=get("run", "scenario", name),
            sim=sim,
            system=system,
            seed=int(get("run", "seed", "0")),
            threshold=number(get("analysis", "threshold", "1e-3")),
            radii=radii,
            samples_per_radius=int(get("analysis", "samples_per_radius", "32")),
            guess=guess,
            output=Path(out) if out else None,
            notes=tuple(n.strip() for n in get("run", "notes", "").split("|") if n.strip()),
            parser=cp,
        )
    except ConfigError:
        raise
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigError(str(exc)) from None


def preset_path(name: str) -> Path:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return Path(str(resources.files("dampwave") / "presets" / f"{name}.cfg"))


def locate(path: str | Path) -> Path:
    """Resolve a config path; ``presets/<name>.cfg`` falls back to the packaged presets."""
    p = Path(path)
    if p.is_file():
        return p
    if p.parent.name == "presets" and p.stem in SCENARIOS:
        return preset_path(p.stem)
    raise ConfigError(f"configuration file not found: {path}")


def load_config(path: str | Path) -> RunConfiguration:
    p = locate(path)
    return parse_config(p.read_text(), name=p.stem, base=p.parent)
