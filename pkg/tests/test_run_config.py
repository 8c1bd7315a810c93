import pytest
import yaml

from mixbt.core.exceptions import ConfigurationError
from mixbt.core.run_config import (
    PRESETS,
    build_config,
    load_run_config,
    read_config_fields,
    write_resolved_config,
)
from mixbt.schemas import SyntheticSpec
from mixbt.services.data import load_run_datasets
from mixbt.services.sweep import config_for_value


class TestBuildConfig:
    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigurationError) as info:
            build_config({"epochz": 3})
        assert info.value.key == "epochz"

    def test_warmup_must_precede_the_end(self):
        with pytest.raises(ConfigurationError):
            build_config({"epochs": 5, "warmup_epochs": 5})

    def test_cifar_needs_a_directory(self):
        with pytest.raises(ConfigurationError):
            build_config({"dataset": "cifar10"})

    def test_presets_validate(self):
        for name, fields in PRESETS.items():
            extra = {"data_dir": "/data"} if fields.get("dataset", "synthetic") != "synthetic" else {}
            cfg = build_config({**fields, **extra})
            assert cfg.lambda_reg is not None, name

    def test_inverse_d_preset(self):
        assert build_config({**PRESETS["tinyimagenet"], "data_dir": "/data"}).lambda_bt == 1.0 / 1024

    @pytest.mark.parametrize("name", ["tinyimagenet", "stl10"])
    def test_hyperparameter_only_presets_have_no_loader(self, name):
        cfg = build_config({**PRESETS[name], "data_dir": "/data"})
        assert cfg.dataset == name
        with pytest.raises(ConfigurationError) as info:
            load_run_datasets(cfg, 0)
        assert info.value.key == "dataset"

    def test_synthetic_runs_skip_geometric_augmentation(self):
        cfg = build_config({})
        assert (cfg.crop_scale_min, cfg.flip_p) == (1.0, 0.0)
        assert cfg.augment_config().jitter_p == 0.8

    def test_image_runs_crop_and_flip(self):
        cfg = build_config({"dataset": "cifar10", "data_dir": "/data"})
        assert (cfg.crop_scale_min, cfg.flip_p) == (0.6, 0.5)

    def test_explicit_augmentation_keys_win(self):
        cfg = build_config({"crop_scale_min": 0.8, "flip_p": 0.25})
        assert (cfg.crop_scale_min, cfg.flip_p) == (0.8, 0.25)


class TestConfigFiles:
    def test_file_overrides_preset(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("d: 8\n")
        fields = read_config_fields(str(path), "desk")
        assert fields["d"] == 8
        assert fields["batch_size"] == PRESETS["desk"]["batch_size"]

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError) as info:
            read_config_fields(None, "imagenet")
        assert info.value.key == "preset"

    def test_non_mapping_document(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigurationError):
            read_config_fields(str(path))

    def test_none_overrides_are_ignored(self):
        assert load_run_config(overrides={"objective": None}).objective == "mixbt"
        assert load_run_config(overrides={"objective": "bt"}).objective == "bt"

    def test_resolved_snapshot_reloads(self, tmp_path):
        cfg = build_config({"d": 16, "epochs": 4, "warmup_epochs": 1})
        path = write_resolved_config(cfg, str(tmp_path), seed=11)
        with open(path) as f:
            snapshot = yaml.safe_load(f)
        assert snapshot["seed"] == 11
        assert snapshot["lambda_reg"] == 4 * 0.0078125
        reloaded = load_run_config(path)
        assert reloaded.model_dump() == {**cfg.model_dump(), "seed": 11}


class TestSweepValues:
    def test_multiples_of_lambda_bt(self):
        cfg = config_for_value({"lambda_bt": 0.01}, "lambda_reg", "3x")
        assert cfg.lambda_reg == pytest.approx(0.03)

    def test_lambda_reg_follows_swept_lambda_bt(self):
        assert config_for_value({}, "lambda_bt", "0.5").lambda_reg == 2.0

    def test_inverse_d(self):
        assert config_for_value({"d": 32}, "lambda_bt", "inverse_d").lambda_bt == 1.0 / 32

    def test_non_numeric(self):
        with pytest.raises(ConfigurationError) as info:
            config_for_value({}, "d", "wide")
        assert info.value.key == "d"

    def test_unsweepable_key(self):
        with pytest.raises(ConfigurationError):
            config_for_value({}, "alpha", "0.5")


class TestSyntheticSpec:
    def test_parse(self):
        spec = SyntheticSpec.parse("synthetic:classes=4,dim=9,separation=2.5")
        assert (spec.classes, spec.dim, spec.separation, spec.per_class) == (4, 9, 2.5, 500)
