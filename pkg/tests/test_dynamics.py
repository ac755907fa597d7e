import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampwave import damping as dmp
from dampwave import dynamics as dyn
from dampwave import mesh as msh
from dampwave import nonlinearity as nlin
from dampwave.errors import ConfigError


def _config(mesh, h="constant:1", f="cubic_stable", u0=None, t_end=10.0, **kw):
    x = mesh.coords()
    if u0 is None:
        u0 = np.ones(mesh.shape)
        for c, L in zip(x, mesh.extents):
            u0 = u0 * np.sin(math.pi * c / L)
    return dyn.SimConfig(dmp.parse(h), nlin.parse(f), u0, np.zeros(mesh.shape), t_end, mesh=mesh, **kw)


def _rise(traj):
    # the scheme conserves a modified energy, so E may wobble by O(dt^2)
    E = traj.column("E")
    return float(np.max(E - np.minimum.accumulate(E)))


@pytest.fixture
def coarse():
    return msh.build_mesh(1, math.pi, 101, "dirichlet")


def test_energy_of_sine(line_mesh):
    x = line_mesh.axis(0)
    cfg = _config(line_mesh, f="zero")
    rep = dyn.energy(dyn.State(0.0, np.sin(x), np.zeros_like(x)), cfg)
    assert rep.kinetic == 0.0
    assert rep.E == pytest.approx(math.pi / 4, rel=1e-4)
    assert rep.e == rep.E


def test_energy_of_zero_state(line_mesh):
    cfg = _config(line_mesh)
    z = np.zeros(line_mesh.shape)
    rep = dyn.energy(dyn.State(0.0, z, z), cfg, epsilon=0.1)
    assert all(getattr(rep, f) == 0.0 for f in dyn.CSV_COLUMNS if f != "t")


def test_epsilon_zero_gives_energy(line_mesh):
    x = line_mesh.axis(0)
    rep = dyn.energy(dyn.State(0.0, np.sin(x), np.cos(x) * np.sin(x)), _config(line_mesh), epsilon=0.0)
    assert rep.H == rep.E
    assert rep.E == pytest.approx(rep.kinetic + rep.e, abs=1e-15)
    assert rep.forcing >= 0.0


def test_zero_horizon_single_sample(coarse):
    traj = dyn.run(_config(coarse, t_end=0.0))
    assert len(traj.times) == 1 and traj.times[0] == 0.0
    assert traj.final.E > 0


def test_step_matches_run(coarse):
    cfg = _config(coarse, t_end=1.0, stride=1)
    dt, _ = cfg.resolved_dt()
    traj = dyn.run(cfg)
    s = dyn.step(dyn.State(0.0, cfg.u0, cfg.v0), cfg)
    assert s.t == pytest.approx(dt)
    np.testing.assert_array_equal(s.u, traj.u[1])
    np.testing.assert_array_equal(s.v, traj.v[1])


def test_step_on_blown_state(coarse):
    cfg = _config(coarse)
    with pytest.raises(ValueError):
        dyn.step(dyn.State(0.0, cfg.u0, cfg.v0, blown_up=True), cfg)


@pytest.mark.parametrize("kw", [{"dt": 1.0}, {"cfl": 1.5}, {"cfl": 0.0}, {"t_end": -1.0}])
def test_step_size_validation(coarse, kw):
    with pytest.raises(ConfigError):
        dyn.run(_config(coarse, **kw))


def test_integer_number_of_steps(coarse):
    cfg = _config(coarse, t_end=math.pi)
    dt, n = cfg.resolved_dt()
    assert n * dt == pytest.approx(math.pi, abs=1e-14)
    assert dt <= 0.5 * coarse.dx


@pytest.mark.parametrize(
    "h,f,bc",
    [
        ("constant:1", "cubic_stable", "dirichlet"),
        ("expr:abs(sin(t))", "saturating", "dirichlet"),
        ("onoff:1,1", "linear:2", "neumann"),
        ("power_law:1,2", "cubic_stable", "dynamical"),
    ],
)
def test_energy_non_increasing(h, f, bc):
    m = msh.build_mesh(1, math.pi, 101, bc)
    traj = dyn.run(_config(m, h=h, f=f, t_end=20.0, stride=1, keep_fields=False))
    assert _rise(traj) <= traj.dt**2 * traj.column("E")[0]


def test_conservative_residual_second_order(coarse):
    worst = []
    for cfl in (0.5, 0.25):
        traj = dyn.run(_config(coarse, h="constant:0", f="zero", t_end=20.0, cfl=cfl, stride=1, keep_fields=False))
        worst.append(dyn.dissipation_residual(traj)[1].max())
    assert worst[0] <= 1e-4
    assert worst[0] / worst[1] == pytest.approx(4.0, rel=0.1)


def test_nonlinear_damping_residual_second_order(coarse):
    worst = []
    for cfl in (0.5, 0.25):
        cfg = _config(coarse, t_end=20.0, cfl=cfl, stride=1, keep_fields=False,
                      velocity_damping=dmp.tanh_velocity_damping(0.5))
        worst.append(dyn.dissipation_residual(dyn.run(cfg))[1].max())
    assert worst[0] / worst[1] >= 3.5


def test_dynamical_boundary_energy_identity():
    m = msh.build_mesh(1, math.pi, 101, "dynamical")
    u0 = np.sin(m.axis(0)) + 0.3
    worst = []
    for cfl in (0.5, 0.25):
        traj = dyn.run(_config(m, u0=u0, t_end=20.0, cfl=cfl, stride=1, keep_fields=False))
        assert traj.column("boundary")[0] == pytest.approx(0.5 * 2 * 0.3**2)
        worst.append(dyn.dissipation_residual(traj)[1].max())
    assert worst[0] / worst[1] >= 3.5


def test_blow_up_flag_and_time():
    m = msh.build_mesh(1, math.pi, 101)
    x = m.axis(0)
    cfg = _config(m, f="cubic_unstable", u0=5 * np.sin(x), t_end=5.0, stride=1)
    traj = dyn.run(cfg)
    assert traj.blown_up and 0 < traj.blow_up_time < 5.0
    assert traj.final.u_linf > 1e6 or not np.isfinite(traj.final.u_linf)
    # residual series stops before the blown-up sample
    t, r = dyn.dissipation_residual(traj)
    assert np.all(np.isfinite(r))


def test_csv_roundtrip(tmp_path, coarse):
    traj = dyn.run(_config(coarse, t_end=2.0))
    traj.write_csv(tmp_path / "t.csv")
    data = dyn.read_trajectory_csv(tmp_path / "t.csv")
    assert list(data) == list(dyn.CSV_COLUMNS)
    np.testing.assert_array_equal(data["E"], traj.column("E"))
    s = traj.summary()
    assert s["schema_version"] == 1 and s["blown_up"] is False


def test_two_dimensional_decay():
    m = msh.build_mesh(2, (math.pi, math.pi), (31, 31), "dirichlet")
    traj = dyn.run(_config(m, t_end=30.0, stride=10, keep_fields=False))
    assert np.diff(traj.column("E")).max() <= 1e-12
    assert traj.final.v_l2 < 1e-5


@pytest.mark.parametrize(
    "h,f,expected",
    [("constant:1", "zero", 0.25), ("constant:1", "cubic_stable", 1 / 28), ("power_law:1,2", "zero", 0.0025)],
)
def test_auto_epsilon(coarse, h, f, expected):
    assert dyn.auto_epsilon(_config(coarse, h=h, f=f)) == pytest.approx(expected, rel=1e-9)


def test_auto_epsilon_formula_with_sup_override(coarse):
    # sup|u| = 1/2 for the cubic: sup|f'| = 3/4, sup|f''| = 3
    eps = dyn.auto_epsilon(_config(coarse), sup_u=0.5, kappa=1.0)
    assert eps == pytest.approx(1 / 16)


@pytest.mark.parametrize("h", ["constant:1", "expr:abs(sin(t))"])
def test_lyapunov_decreasing_after_onset(coarse, h):
    traj = dyn.run(_config(coarse, h=h, t_end=60.0, stride=5, keep_fields=False))
    H = traj.column("H")
    onset = dyn.lyapunov_onset(H)
    assert onset is not None
    assert np.diff(H[onset:]).max() <= 1e-3 * traj.dt**2 * 5


def test_lyapunov_onset_detection():
    H = np.array([1.0, 2.0, 1.5] + list(np.linspace(1.4, 0.0, 12)))
    assert dyn.lyapunov_onset(H) == 1
    assert dyn.lyapunov_onset(np.arange(20.0)) is None


def test_galerkin_validation():
    zero = nlin.builtin("zero")
    assert dyn.GalerkinSystem(np.diag([1.0, 4.0]), np.diag([1.0, 3.0]), zero).validate() == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        dyn.GalerkinSystem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2), zero).validate()
    with pytest.raises(ConfigError):
        dyn.GalerkinSystem(np.diag([1.0, -1.0]), np.eye(2), zero).validate()
    with pytest.raises(ConfigError):
        dyn.GalerkinSystem(np.eye(2), np.diag([1.0, -0.5]), zero).validate()


def test_galerkin_conservative_energy():
    system = dyn.GalerkinSystem(np.diag([1.0, 4.0]), np.eye(2), nlin.builtin("zero"))
    drift = []
    for dt in (0.01, 0.005):
        cfg = dyn.SimConfig(dmp.constant(0.0), system.nonlinearity, np.array([1.0, 0.5]), np.array([0.0, 1.0]),
                            20.0, dt=dt, stride=1)
        E = dyn.galerkin_run(system, cfg).column("E")
        drift.append(np.max(np.abs(E - E[0])))
    assert drift[0] < 1e-3
    assert drift[0] / drift[1] == pytest.approx(4.0, rel=0.1)


def test_galerkin_rejects_nonlinear_g():
    system = dyn.GalerkinSystem(np.eye(2), np.eye(2), nlin.builtin("zero"))
    cfg = dyn.SimConfig(dmp.constant(1.0), system.nonlinearity, np.ones(2), np.zeros(2), 1.0,
                        velocity_damping=dmp.tanh_velocity_damping(0.5))
    with pytest.raises(ConfigError):
        dyn.galerkin_run(system, cfg)


def test_run_without_mesh():
    cfg = dyn.SimConfig(dmp.constant(1.0), nlin.builtin("zero"), np.ones(2), np.zeros(2), 1.0)
    with pytest.raises(ConfigError):
        dyn.run(cfg)


@settings(max_examples=10, deadline=None)
@given(amp=st.floats(0.1, 2.0), h0=st.floats(0.0, 3.0), k=st.integers(1, 4))
def test_energy_decay_property(amp, h0, k):
    m = msh.build_mesh(1, math.pi, 41)
    u0 = amp * np.sin(k * m.axis(0))
    traj = dyn.run(_config(m, h=f"constant:{h0}", u0=u0, t_end=5.0, stride=1, keep_fields=False))
    # wobble of order (omega dt)^2 E with omega^2 <= k^2 + sup|f'|
    omega2 = k**2 + 3 * amp**2
    assert _rise(traj) <= 0.5 * omega2 * traj.dt**2 * traj.column("E")[0]
    assert np.all(traj.column("forcing") >= 0.0)


def test_determinism(coarse):
    cfg = _config(coarse, h="onoff:1,1", t_end=5.0, velocity_damping=dmp.tanh_velocity_damping(0.5))
    a, b = dyn.run(cfg), dyn.run(cfg)
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_array_equal(a.column("H"), b.column("H"))
