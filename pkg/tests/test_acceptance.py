"""Acceptance suite: one test group per criterion, summarised at the end of the run."""
import filecmp
import math

import numpy as np
import pytest
from scipy.integrate import quad

from dampwave import analysis
from dampwave import damping as dmp
from dampwave import dynamics as dyn
from dampwave import equilibria as eqm
from dampwave import mesh as msh
from dampwave import nonlinearity as nlin
from dampwave.cli import main
from dampwave.config import load_config, preset_path


def _preset_run(name, **overrides):
    rc = load_config(preset_path(name))
    sim = rc.sim
    if overrides:
        from dataclasses import replace

        sim = replace(sim, **overrides)
    traj = dyn.galerkin_run(rc.system, sim) if rc.system is not None else dyn.run(sim)
    return rc, sim, traj


# 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1, "energy dissipation identity")
def test_energy_dissipation_identity(line_mesh):
    x = line_mesh.axis(0)
    worst = {}
    for cfl in (0.5, 0.25):
        cfg = dyn.SimConfig(dmp.constant(1.0), nlin.builtin("cubic_stable"), np.sin(x), np.zeros_like(x), 50.0,
                            mesh=line_mesh, cfl=cfl, stride=1, keep_fields=False)
        _, res = dyn.dissipation_residual(dyn.run(cfg))
        worst[cfl] = res.max()
    print(f"residual {worst[0.5]:.3e} -> {worst[0.25]:.3e}, ratio {worst[0.5] / worst[0.25]:.2f}")
    assert worst[0.5] <= 5e-4
    assert worst[0.5] / worst[0.25] >= 3.5


# 2 -------------------------------------------------------------------------


def _modal_error(nx, h, T):
    m = msh.build_mesh(1, np.pi, nx, "dirichlet")
    x = m.axis(0)
    cfg = dyn.SimConfig(dmp.constant(h), nlin.builtin("zero"), np.sin(x), np.zeros_like(x), T,
                        mesh=m, stride=10**9, epsilon=0.0)
    traj = dyn.run(cfg)
    assert traj.times[-1] == pytest.approx(T)
    exact = np.cos(T) * np.sin(x) if h == 0 else (1 + T) * math.exp(-T) * np.sin(x)
    return msh.l2_norm(traj.u[-1] - exact, m)


@pytest.mark.criterion(2, "modal oracle equivalence")
@pytest.mark.parametrize("h,T", [(0.0, math.pi), (2.0, 5.0)])
def test_modal_oracle(h, T):
    errs = [_modal_error(n, h, T) for n in (51, 101, 201)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    print(f"h={h}: errors {errs}, orders {orders}")
    assert errs[-1] <= 2e-3
    assert orders[-1] >= 1.9


# 3 -------------------------------------------------------------------------


@pytest.mark.criterion(3, "velocity decay on damped presets")
@pytest.mark.parametrize(
    "name", ["constant-damping-cubic", "sin-damping", "on-off", "neumann", "dynamical-bc", "nonlinear-damping"]
)
def test_velocity_decay(name):
    _, sim, traj = _preset_run(name, keep_fields=False)
    assert sim.t_end == 200
    check = analysis.velocity_decay_check(traj, 1e-3, 200.0)
    print(f"{name}: |v(200)| = {check['value']:.3e}")
    assert check["pass"]


# 4 -------------------------------------------------------------------------


@pytest.mark.criterion(4, "rate dichotomy on constant-damping-cubic")
def test_rate_dichotomy():
    rc, sim, traj = _preset_run("constant-damping-cubic")
    eq = eqm.solve_equilibrium(sim.mesh, sim.nonlinearity, traj.u[-1])
    ls = eqm.probe_lojasiewicz(eq, sim.nonlinearity, sim.mesh, seed=rc.seed)
    rep = analysis.theorem1_report(traj, eq, ls, sim)
    zeta = rep["measured"]["rate"]
    print(f"theta {ls.theta:.4f}, measured {rep['measured']['class']} zeta {zeta}, modal {rep['predicted']['rate']}")
    assert 0.45 <= ls.theta <= 0.5
    assert rep["predicted"]["class"] == "exponential"
    assert rep["measured"]["class"] == "exponential"
    assert rep["predicted"]["rate"] == pytest.approx(0.5, rel=1e-3)
    assert abs(zeta - 0.5) <= 0.25 * 0.5
    assert rep["agreement"]


# 5 -------------------------------------------------------------------------


@pytest.mark.criterion(5, "Lojasiewicz probe at phi = 0")
@pytest.mark.parametrize("f", ["zero", "cubic_stable"])
def test_lojasiewicz_probe(line_mesh, f):
    nl = nlin.builtin(f)
    eq = eqm.solve_equilibrium(line_mesh, nl, np.zeros(line_mesh.shape))
    assert np.max(np.abs(eq.phi)) == 0.0
    ls = eqm.probe_lojasiewicz(eq, nl, line_mesh, radii=(1e-1, 1e-2, 1e-3), samples_per_radius=32, seed=0)
    print(f"{f}: theta {ls.theta:.4f}, R^2 {ls.r2:.5f}")
    assert 0.45 <= ls.theta <= 0.5
    assert ls.r2 >= 0.99


# 6 -------------------------------------------------------------------------


@pytest.mark.criterion(6, "differential-inequality bounds on equality families")
@pytest.mark.parametrize(
    "alpha,C,v",
    [
        (1.0, 2.0, lambda t: np.exp(-2 * t)),
        (2.0, 1.0, lambda t: 1 / (1 + t)),
        (1.5, 2.0, lambda t: (1 + t) ** -2.0),
    ],
)
def test_lemma3_families(alpha, C, v):
    t = np.arange(0, 20001) * 1e-3
    chk = analysis.lemma3_check(t, v(t), alpha, C)
    assert chk.inequality_violations == 0
    assert chk.bound_violations == 0
    if alpha == 1.5:
        assert chk.beta == 2.0 and chk.C_prime == 1.0


# 7 -------------------------------------------------------------------------


@pytest.mark.criterion(7, "damping certifier")
def test_certifier_constant():
    rep = dmp.certify_integrally_positive(dmp.constant(1.0))
    assert rep.verdict == "certified-up-to-horizon"
    for row in rep.per_epsilon:
        assert row["delta"] == pytest.approx(row["epsilon"], rel=1e-9)


@pytest.mark.criterion(7, "damping certifier")
def test_certifier_abs_sin():
    rep = dmp.certify_integrally_positive(dmp.parse("expr:abs(sin(t))"), epsilons=(1.0,))
    assert rep.verdict == "certified-up-to-horizon"
    exact = 2 * (1 - math.cos(0.5))
    assert rep.per_epsilon[0]["delta"] == pytest.approx(exact, rel=0.02)


@pytest.mark.criterion(7, "damping certifier")
@pytest.mark.parametrize("spec", ["power_law:1,2", "onoff:1,1"])
def test_certifier_refutes_with_witness(spec):
    profile = dmp.parse(spec)
    rep = dmp.certify_integrally_positive(profile)
    assert rep.verdict == "refuted"
    a, b = rep.witness
    assert b > a >= 0
    mass, _ = quad(lambda s: float(dmp.evaluate(profile, s)), a, b, points=[1.0, 2.0] if b > 2 else None)
    assert mass <= 1e-9 * 1.01


# 8 -------------------------------------------------------------------------


@pytest.mark.criterion(8, "divergence test of the damping integral")
@pytest.mark.parametrize(
    "spec,verdict", [("constant:1", "diverges"), ("power_law:1,2", "diverges"), ("expr:exp(t)", "converges")]
)
def test_criterion_11(spec, verdict):
    assert dmp.criterion_11(dmp.parse(spec)).verdict == verdict


# 9 -------------------------------------------------------------------------


@pytest.mark.criterion(9, "blow-up under the wrong-sign cubic")
def test_blow_up_exit_code(tmp_path, capsys):
    code = main(["simulate", str(preset_path("blow-up")), "--out", str(tmp_path)])
    assert code == 3
    summary = (tmp_path / "summary.json").read_text()
    import json

    s = json.loads(summary)
    assert s["blown_up"] and s["blow_up_time"] < 5.0


@pytest.mark.criterion(9, "blow-up under the wrong-sign cubic")
def test_same_data_bounded_with_stable_cubic():
    _, sim, traj = _preset_run("blow-up", nonlinearity=nlin.builtin("cubic_stable"), t_end=200.0,
                               stride=100, keep_fields=False)
    assert not traj.blown_up
    assert traj.times[-1] == pytest.approx(200.0)
    assert np.all(np.isfinite(traj.column("u_linf")))
    assert traj.column("u_linf").max() <= 5.0 + 1e-9


# 10 ------------------------------------------------------------------------


@pytest.mark.criterion(10, "abstract system consistency")
def test_scalar_critically_damped():
    system = dyn.GalerkinSystem(np.array([[1.0]]), np.array([[2.0]]), nlin.builtin("zero"))
    cfg = dyn.SimConfig(dmp.constant(1.0), system.nonlinearity, np.array([1.0]), np.array([0.0]), 10.0,
                        dt=1e-3, stride=1)
    traj = dyn.galerkin_run(system, cfg)
    exact = (1 + traj.times) * np.exp(-traj.times)
    assert np.max(np.abs(traj.u[:, 0] - exact)) <= 1e-6


@pytest.mark.criterion(10, "abstract system consistency")
def test_pde_matches_eigenbasis_galerkin():
    m = msh.build_mesh(1, np.pi, 101, "dirichlet")
    lam, modes = msh.eigenmodes(m, 4)
    coef = np.array([1.0, 0.5, -0.25, 0.125])
    u0 = np.tensordot(coef, modes, axes=1)
    dt = 0.01
    pde = dyn.run(dyn.SimConfig(dmp.constant(0.7), nlin.builtin("zero"), u0, np.zeros_like(u0), 10.0,
                                mesh=m, dt=dt, stride=5))
    system = dyn.GalerkinSystem(np.diag(lam), np.eye(4), nlin.builtin("zero"))
    gal = dyn.galerkin_run(system, dyn.SimConfig(dmp.constant(0.7), system.nonlinearity, coef, np.zeros(4), 10.0,
                                                 dt=dt, stride=5))
    proj = np.array([[msh.inner(u, modes[k], m) for k in range(4)] for u in pde.u])
    assert np.max(np.abs(proj - gal.u)) <= 1e-10


# 11 ------------------------------------------------------------------------


@pytest.mark.criterion(11, "nonlinear velocity damping")
def test_identity_g_bitwise_equals_linear(line_mesh):
    x = line_mesh.axis(0)
    base = dict(damping=dmp.constant(1.0), nonlinearity=nlin.builtin("cubic_stable"), u0=np.sin(x),
                v0=np.zeros_like(x), t_end=5.0, mesh=line_mesh, stride=1)
    ref = dyn.run(dyn.SimConfig(**base))
    for g in (dmp.parse_velocity_damping("identity"), dmp.parse_velocity_damping("tanh:0"),
              dmp.linear_velocity_damping(1.0)):
        other = dyn.run(dyn.SimConfig(**base, velocity_damping=g))
        assert np.array_equal(ref.u, other.u) and np.array_equal(ref.v, other.v)


@pytest.mark.criterion(11, "nonlinear velocity damping")
def test_tanh_damping_validation():
    g = dmp.tanh_velocity_damping(0.5)
    rep = dmp.validate_velocity_damping(g, n_samples=10_000)
    assert rep.valid
    s = np.linspace(-10, 10, 10_000)
    gs = g.g(s) * s
    assert np.all(g.m1 * s**2 <= gs + 1e-12) and np.all(gs <= g.m2 * s**2 + 1e-12)


# 12 ------------------------------------------------------------------------


@pytest.mark.criterion(12, "determinism of preset reruns")
@pytest.mark.parametrize("name", ["constant-damping-cubic", "abstract-galerkin", "blow-up"])
def test_rerun_bitwise_identical(tmp_path, name, capsys):
    codes = [main(["simulate", str(preset_path(name)), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    assert codes[0] == codes[1]
    assert filecmp.cmp(tmp_path / "a" / "trajectory.csv", tmp_path / "b" / "trajectory.csv", shallow=False)
