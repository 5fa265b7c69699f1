import pytest

from perfhom.config import StudyConfig, config_hash, load_config, parse_config, render_config
from perfhom.errors import ConfigError
from perfhom.geometry import Ball, Box

MINIMAL = """
[generator]
kind = "poisson"
marks = "ball:0.1"
intensity = 2.0
"""

MIXTURE = """
[generator]
kind = "mixture"
p = 0.25

[mixture_a]
kind = "lattice"
marks = "ball:0.1"
spacing = 1.0

[mixture_b]
kind = "matern_hardcore"
marks = "0.5*ball:0.1 | 0.5*box:0.1,0.1,0.1"
intensity = 1.0
hardcore_radius = 0.2

[study]
epsilons = [0.5, 0.25, 0.125]
modulation = 1.5

[heat]
enabled = true
dt = 0.001

[flags]
workers = 3
"""


def test_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.domain == Box.cube(0, 1)
    assert cfg.window == Box.cube(-1, 2)
    assert cfg.grid_n == 129
    assert cfg.epsilons == (0.5, 0.25)
    assert cfg.alpha == 1.0 and cfg.M == 10.0
    assert cfg.seeds == 1 and cfg.base_seed == 0
    assert cfg.source == "manufactured"
    assert cfg.tol == 1e-8 and cfg.workers == 1
    assert cfg.generator.marks.shapes == (Ball(0.1),)


def test_alpha_out_of_range():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "\n[study]\nalpha = 5.0\n")
    assert info.value.key == "study.alpha"


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL.replace("intensity", "intensitty"))
    assert info.value.key == "generator.intensitty"


@pytest.mark.parametrize("extra,key", [
    ("[solvr]\ntol = 1e-6\n", "solvr"),
    ("[domain]\ngrid_n = 17\n", "domain.grid_n"),
    ("[domain]\ngrid_n = 65.0\n", "domain.grid_n"),
    ("[study]\nepsilons = [0.5, 2.0]\n", "study.epsilons"),
    ("[study]\nM = 1.0\n", "study.M"),
    ("[study]\nsource = \"gaussian\"\n", "study.source"),
    ("[window]\nlo = [-0.1, -0.1, -0.1]\nhi = [1.1, 1.1, 1.1]\n", "window"),
    ("[heat]\nt = -1.0\n", "heat.t"),
    ("[flags]\nworkers = 0\n", "flags.workers"),
])
def test_invalid_values(extra, key):
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "\n" + extra)
    assert info.value.key == key


def test_generator_errors():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL.replace("intensity = 2.0", "intensity = -2.0"))
    assert info.value.key == "generator.intensity"
    with pytest.raises(ConfigError):
        parse_config("[study]\nseeds = 2\n")
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "p = 0.5\n")
    assert info.value.key == "generator.p"
    with pytest.raises(ConfigError):
        parse_config("not toml [")


def test_mixture_parse():
    cfg = parse_config(MIXTURE)
    assert cfg.generator.kind == "mixture" and cfg.generator.p == 0.25
    a, b = cfg.generator.components
    assert a.kind == "lattice" and b.kind == "matern_hardcore"
    assert cfg.window == Box.cube(-1, 2)
    assert cfg.heat_enabled and cfg.heat_dt == 0.001


@pytest.mark.parametrize("text", [MINIMAL, MIXTURE])
def test_render_roundtrip(text):
    cfg = parse_config(text)
    assert parse_config(render_config(cfg)) == cfg


def test_hash_ignores_workers_and_output():
    cfg = parse_config(MIXTURE)
    assert config_hash(cfg) == config_hash(cfg.with_workers(1))
    other = parse_config(MIXTURE.replace("p = 0.25", "p = 0.3"))
    assert config_hash(cfg) != config_hash(other)


def test_load_from_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(MINIMAL)
    assert load_config(path) == parse_config(MINIMAL)


def test_direct_construction_validates():
    gen = parse_config(MINIMAL).generator
    with pytest.raises(ConfigError):
        StudyConfig(gen, epsilons=(0.5, 0.5))
