import pytest

import topofill.config as cfgmod
from topofill.config import ConfigError, parse_config, write_effective_config

MINIMAL = """
[mesh.box]
nx = 4
ny = 2
nz = 2
dims = [4.0, 2.0, 2.0]

[materials]
strong = "E-glass"
weak = "PMMA"

[[dirichlet]]
set = "x-"

[[loads]]
facet_set = "x+"
force = [0.0, 0.0, -150.0]
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseConfig:
    def test_minimal_config_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, MINIMAL))
        assert cfg.optimization["p"] == 3.0
        assert cfg.threshold_cutoff == 0.5
        assert cfg.histogram_bins == 30
        assert cfg.analysis_material == "weak"
        assert cfg.dirichlet == [("x-", "xyz")]
        assert cfg.mass_fraction is None
        mesh = cfg.load_mesh()
        assert mesh.n_elements == 4 * 2 * 2 * 6

    def test_catalog_material_binding(self, tmp_path):
        cfg = parse_config(write(tmp_path, MINIMAL))
        assert cfg.strong.youngs_modulus == 72000.0
        assert cfg.strong.poisson_ratio == 0.2
        assert cfg.strong.density == 2.54

    def test_explicit_material_constants(self, tmp_path):
        text = MINIMAL.replace(
            'strong = "E-glass"',
            'strong = { name = "glass", youngs_modulus = 70000.0, '
            "poisson_ratio = 0.22, density = 2.5 }",
        )
        cfg = parse_config(write(tmp_path, text))
        assert cfg.strong.youngs_modulus == 70000.0
        assert cfg.strong.name == "glass"

    def test_unknown_material(self, tmp_path):
        text = MINIMAL.replace('"E-glass"', '"steel"')
        with pytest.raises(ConfigError, match="unknown material"):
            parse_config(write(tmp_path, text))

    def test_mass_fraction_out_of_range(self, tmp_path):
        text = MINIMAL + "\n[optimization]\nmass_fraction = 1.3\n"
        with pytest.raises(ConfigError, match="out of range"):
            parse_config(write(tmp_path, text))

    def test_missing_mass_fraction_flagged_on_demand(self, tmp_path):
        cfg = parse_config(write(tmp_path, MINIMAL))
        with pytest.raises(ConfigError, match="mass_fraction"):
            cfg.require_mass_fraction()

    def test_missing_dirichlet(self, tmp_path):
        text = MINIMAL.replace('[[dirichlet]]\nset = "x-"\n', "")
        with pytest.raises(ConfigError, match="dirichlet"):
            parse_config(write(tmp_path, text))

    def test_both_mesh_sources_rejected(self, tmp_path):
        text = MINIMAL.replace(
            "[mesh.box]", '[mesh]\npath = "x.json"\nformat = "native_json"\n[mesh.box]'
        )
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(write(tmp_path, text))

    def test_bad_toml_reports_location(self, tmp_path):
        with pytest.raises(ConfigError, match="line"):
            parse_config(write(tmp_path, "[mesh\nnx=1"))

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config section"):
            parse_config(write(tmp_path, MINIMAL + "\n[plotting]\nx = 1\n"))

    def test_unknown_optimization_key_rejected(self, tmp_path):
        text = MINIMAL + "\n[optimization]\nmass_fraction = 0.4\nwiggle = 2.0\n"
        with pytest.raises(ConfigError, match="unknown optimization key"):
            parse_config(write(tmp_path, text))

    def test_passive_box(self, tmp_path):
        text = MINIMAL.replace(
            "dims = [4.0, 2.0, 2.0]",
            "dims = [4.0, 2.0, 2.0]\npassive = [3.0, 0.0, 0.0, 4.0, 2.0, 2.0]",
        )
        cfg = parse_config(write(tmp_path, text))
        mesh = cfg.load_mesh()
        assert (~mesh.design_mask).sum() == 24  # one 1x2x2-cell slab of six tets each


class TestEffectiveConfigEcho:
    def test_round_trip_is_fixed_point(self, tmp_path):
        text = MINIMAL + "\n[optimization]\nmass_fraction = 0.3\nfilter_radius = 1.0\n"
        cfg = parse_config(write(tmp_path, text))
        echo1 = tmp_path / "echo1.toml"
        write_effective_config(cfg, echo1)
        cfg2 = parse_config(echo1)
        echo2 = tmp_path / "echo2.toml"
        write_effective_config(cfg2, echo2)
        assert echo1.read_text() == echo2.read_text()
        assert cfg2.mass_fraction == 0.3
        assert cfg2.optimization == cfg.optimization
        assert cfg2.strong == cfg.strong

    def test_mesh_path_survives_echo(self, tmp_path):
        import topofill as tf

        mesh = tf.generate_box_mesh(2, 1, 1, (2.0, 1.0, 1.0))
        tf.save_mesh(mesh, tmp_path / "part.json", "native_json")
        text = MINIMAL.replace(
            "[mesh.box]\nnx = 4\nny = 2\nnz = 2\ndims = [4.0, 2.0, 2.0]",
            '[mesh]\npath = "part.json"\nformat = "native_json"',
        )
        cfg = parse_config(write(tmp_path, text))
        assert cfg.load_mesh().n_elements == 12
        subdir = tmp_path / "sub"
        subdir.mkdir()
        echo = subdir / "echo.toml"
        write_effective_config(cfg, echo)
        cfg2 = parse_config(echo)
        assert cfg2.load_mesh().n_elements == 12
