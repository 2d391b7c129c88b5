"""Config schema: defaults, validation, unknown keys and YAML round trips."""

import dataclasses

import pytest

from weakflow.config import TrainConfig, config_from_dict, dump_config, parse_config
from weakflow.errors import ConfigError

# Published training setup, one entry per field.
GOLDEN = {
    ("sampling", "n_inlet"): 1000,
    ("sampling", "n_outlet"): 1000,
    ("sampling", "n_wall"): 10000,
    ("sampling", "n_interior"): 250000,
    ("cv", "n_large"): 40,
    ("cv", "n_medium"): 200,
    ("cv", "n_small"): 500,
    ("cv", "r_large"): 1.0,
    ("cv", "r_medium"): 0.5,
    ("cv", "r_small"): 0.25,
    ("optim", "lr_stage1"): 1e-3,
    ("optim", "lr_stage2"): 1e-6,
    ("optim", "epochs"): 9000,
    ("optim", "t_switch"): 7000,
    ("loss", "w_inlet"): 10.0,
    ("loss", "w_outlet"): 10.0,
    ("loss", "w_wall"): 10.0,
    ("loss", "w_continuity"): 10.0,
    ("loss", "w_momentum"): 0.1,
    ("model", "width"): 256,
    ("model", "depth"): 5,
    ("model", "n_freq"): 30,
    ("model", "f_min"): 1.0,
    ("model", "f_max"): 2.5,
}
GOLDEN_WEAK = {"wk_continuity": (100.0, 100.0, 100.0), "wk_momentum": (4.0, 25.0, 100.0)}


def _assert_golden(cfg):
    for (section, key), value in GOLDEN.items():
        assert getattr(getattr(cfg, section), key) == value, f"{section}.{key}"
    for key, triple in GOLDEN_WEAK.items():
        t = getattr(cfg.loss, key)
        assert (t.large, t.medium, t.small) == triple, key


class TestDefaults:
    def test_golden(self):
        _assert_golden(TrainConfig())

    def test_empty_file(self, tmp_path):
        (tmp_path / "c.yaml").write_text("")
        cfg = parse_config(tmp_path / "c.yaml")
        _assert_golden(cfg)
        assert cfg == TrainConfig()

    def test_seed_fan_out(self):
        cfg = config_from_dict({"seed": 10})
        assert [cfg.seed_for(k) for k in ("geometry", "placement", "batch", "init")] == [11, 12, 13, 14]


class TestValidation:
    def test_small_radius_above_medium(self):
        with pytest.raises(ConfigError, match="r_large > r_medium > r_small"):
            config_from_dict({"cv": {"r_small": 0.6}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key 'cv.n_huge'"):
            config_from_dict({"cv": {"n_huge": 3}})

    def test_unknown_top_level(self):
        with pytest.raises(ConfigError, match="unknown config key 'trainer'"):
            config_from_dict({"trainer": {}})

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="sampling.n_wall: expected int"):
            config_from_dict({"sampling": {"n_wall": "many"}})

    def test_float_strings(self, tmp_path):
        (tmp_path / "c.yaml").write_text("optim:\n  lr_stage1: 1e-3\n  lr_stage2: 1e-6\n")
        cfg = parse_config(tmp_path / "c.yaml")
        assert cfg.optim.lr_stage1 == 1e-3 and cfg.optim.lr_stage2 == 1e-6

    def test_switch_after_end(self):
        with pytest.raises(ConfigError, match="t_switch"):
            config_from_dict({"optim": {"epochs": 10, "t_switch": 11}})

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            config_from_dict({"loss": {"wk_momentum": {"small": -1}}})

    def test_geometry_required(self):
        with pytest.raises(ConfigError, match="geometry.kind"):
            TrainConfig().validate(require_geometry=True)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.yaml")

    def test_bad_yaml(self, tmp_path):
        (tmp_path / "c.yaml").write_text("cv: [unclosed\n")
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "c.yaml")


class TestRoundTrip:
    def test_defaults(self, tmp_path):
        cfg = TrainConfig()
        dump_config(cfg, tmp_path / "c.yaml")
        assert parse_config(tmp_path / "c.yaml") == cfg

    def test_modified(self, tmp_path):
        cfg = config_from_dict({"geometry": {"kind": "gyroid", "fluid_sign": 1},
                                "cv": {"max_boundary_samples": 256, "pool_regions": "wall"},
                                "loss": {"wk_momentum": {"large": 2.5}}, "seed": 7})
        dump_config(cfg, tmp_path / "c.yaml")
        back = parse_config(tmp_path / "c.yaml")
        assert back == cfg
        assert dataclasses.asdict(back) == dataclasses.asdict(cfg)
