import configparser
import io
import math

import numpy as np
import pytest

from dampwave import config as cfgm
from dampwave import mesh as msh
from dampwave.errors import ConfigError

BASE = """
[mesh]
extent = pi
nodes = 21

[damping]
profile = constant:1

[nonlinearity]
f = cubic_stable

[initial]
u0 = sine:1

[integrator]
t_end = 1
"""


@pytest.mark.parametrize("text,value", [("2", 2.0), ("pi/2", math.pi / 2), ("-2*pi", -2 * math.pi), ("1e-3", 1e-3)])
def test_number(text, value):
    assert cfgm.number(text) == value


@pytest.mark.parametrize("text", ["x", "__import__('os')", "1 +", "abs(1)", "'a'"])
def test_number_rejects(text):
    with pytest.raises(ConfigError):
        cfgm.number(text)


def test_matrix_forms():
    np.testing.assert_array_equal(cfgm.matrix("diag:1,4"), np.diag([1.0, 4.0]))
    np.testing.assert_array_equal(cfgm.matrix("tridiag:-1,2,-1:3"), [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])
    np.testing.assert_array_equal(cfgm.matrix("1 2; 3 4"), [[1, 2], [3, 4]])
    with pytest.raises(ConfigError):
        cfgm.matrix("1 2; 3")


def test_initial_shapes():
    m = msh.build_mesh(1, 2.0, 21)
    x = m.axis(0)
    np.testing.assert_allclose(cfgm.initial_field("sine:2:3", m), 3 * np.sin(math.pi * x))
    np.testing.assert_allclose(cfgm.initial_field("cosine:1", m), np.cos(math.pi * x / 2))
    assert np.all(cfgm.initial_field("constant:0.5", m) == 0.5)
    bump = cfgm.initial_field("bump:1:0.5", m)
    assert bump[10] == 1.0 and np.all(bump[np.abs(x - 1) >= 0.5] == 0.0)


def test_initial_tensor_product_2d():
    m = msh.build_mesh(2, (1.0, 2.0), (5, 9))
    x, y = m.coords()
    np.testing.assert_allclose(cfgm.initial_field("sine:1", m), np.sin(math.pi * x) * np.sin(math.pi * y / 2))


def test_initial_from_file(tmp_path):
    m = msh.build_mesh(1, 1.0, 5)
    msh.write_field_csv(tmp_path / "u.csv", m, np.arange(5.0))
    np.testing.assert_array_equal(cfgm.initial_field("file:u.csv", m, base=tmp_path), np.arange(5.0))


@pytest.mark.parametrize("spec,n", [("vector:1,2", 3), ("sine:1", 2), ("blob", None)])
def test_initial_rejects(spec, n):
    m = None if n else msh.build_mesh(1, 1.0, 5)
    with pytest.raises(ConfigError):
        cfgm.initial_field(spec, m, n)


def test_parse_defaults():
    rc = cfgm.parse_config(BASE, name="t")
    assert rc.name == "t" and rc.seed == 0 and rc.threshold == 1e-3
    assert rc.radii == (0.1, 0.01, 0.001) and rc.samples_per_radius == 32
    assert rc.sim.mesh.shape == (21,) and rc.system is None
    assert rc.sim.velocity_damping.is_linear and rc.notes == ()


def test_resolved_text_roundtrip():
    rc = cfgm.parse_config(BASE + "\n[run]\nnotes = a | b\n")
    text = rc.resolved_text()
    again = cfgm.parse_config(text)
    assert again.sim.resolved_dt() == rc.sim.resolved_dt()
    assert again.notes == ("a", "b")
    assert "dt = " in text


def _with(section, key, value):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(BASE)
    if not cp.has_section(section):
        cp.add_section(section)
    cp[section][key] = value
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


@pytest.mark.parametrize(
    "section,key,value",
    [
        ("mesh", "width", "1"),
        ("colour", "x", "1"),
        ("system", "A", "diag:1"),
        ("integrator", "stride", "0"),
        ("integrator", "cfl", "2"),
        ("damping", "profile", "constant:-1"),
        ("mesh", "boundary", "periodic"),
        ("initial", "u0", "vector:1,2"),
    ],
)
def test_parse_rejects(section, key, value):
    cfgm.parse_config(BASE)
    with pytest.raises(ConfigError):
        cfgm.parse_config(_with(section, key, value))


def test_missing_required_key():
    with pytest.raises(ConfigError, match="t_end"):
        cfgm.parse_config(BASE.replace("t_end = 1", ""))


def test_galerkin_config():
    text = BASE.replace("[mesh]\nextent = pi\nnodes = 21\n", "[system]\nA = diag:1,4\n").replace(
        "sine:1", "vector:1,0"
    )
    rc = cfgm.parse_config(text)
    assert rc.sim.mesh is None and rc.system.n == 2
    np.testing.assert_array_equal(rc.system.B, np.eye(2))


def test_unresolvable_and_packaged_presets(tmp_path):
    with pytest.raises(ConfigError):
        cfgm.locate(tmp_path / "nope.cfg")
    with pytest.raises(ConfigError):
        cfgm.preset_path("nope")
    assert cfgm.locate("presets/blow-up.cfg") == cfgm.preset_path("blow-up")


@pytest.mark.parametrize("name", cfgm.SCENARIOS)
def test_every_preset_loads(name):
    rc = cfgm.load_config(cfgm.preset_path(name))
    assert rc.name == name
    assert rc.sim.t_end > 0
