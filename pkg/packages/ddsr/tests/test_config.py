from __future__ import annotations

from pathlib import Path

import pytest
from ddsr.config import (
    DatasetSpec,
    TrainConfig,
    build_dataset_spec,
    build_train_config,
    extract_override_flags,
    nest_keys,
    parse_key_values,
    read_key_values,
    render_key_values,
    seed_from_env,
    workers_from_env,
)
from ddsr.errors import FormatError, SpecError
from ddsr.model import ModelConfig
from pydantic import ValidationError


def test_parse_key_values_skips_comments_and_blank_lines() -> None:
    text = "# schedule\nlr = 0.001\n\nbatch_size=2\nmodel.scale = 2\n"
    assert parse_key_values(text) == {"lr": "0.001", "batch_size": "2", "model.scale": "2"}


def test_parse_key_values_reports_line_number() -> None:
    with pytest.raises(FormatError, match=r"run.txt:2: expected key=value"):
        parse_key_values("lr=0.1\nbatch_size 4\n", source="run.txt")
    with pytest.raises(FormatError, match="empty key"):
        parse_key_values("=3\n")


def test_read_key_values_requires_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        read_key_values(tmp_path / "missing.txt")


def test_nest_keys_builds_sections_and_rejects_conflicts() -> None:
    assert nest_keys({"lr": "1", "loss.rec": "0.5", "loss.high": "0"}) == {
        "lr": "1",
        "loss": {"rec": "0.5", "high": "0"},
    }
    with pytest.raises(FormatError, match="conflicts"):
        nest_keys({"loss": "1", "loss.rec": "2"})


def test_build_train_config_coerces_values() -> None:
    config = build_train_config({
        "lr": "0.001",
        "max_epochs": "20",
        "patience": "5",
        "band_grouping": "false",
        "loss.high": "0",
        "model.hidden": "8",
        "model.share_high_branch": "false",
    })
    assert config.lr == 0.001
    assert config.band_grouping is False
    assert config.loss.high == 0.0
    assert config.loss.rec == 0.35
    assert config.model == ModelConfig(hidden=8, share_high_branch=False)


def test_build_train_config_rejects_unknown_keys() -> None:
    with pytest.raises(FormatError, match="unknown config key learning_rate"):
        build_train_config({"learning_rate": "0.1"})
    with pytest.raises(FormatError, match="unknown config key loss.perceptual"):
        build_train_config({"loss.perceptual": "1"})
    with pytest.raises(FormatError, match="does not take sub-keys"):
        build_train_config({"lr.base": "1"})


def test_train_config_validation() -> None:
    with pytest.raises(ValidationError, match="patience"):
        TrainConfig(max_epochs=10, patience=10)
    with pytest.raises(ValidationError):
        build_train_config({"loss.rec": "-0.1"})
    with pytest.raises(ValidationError):
        build_train_config({"model.scale": "3"})


def test_rendered_configs_read_back_unchanged(tmp_path: Path) -> None:
    config = TrainConfig(lr=3e-4, max_epochs=50, patience=7, model=ModelConfig(scale=2, hidden=6))
    path = tmp_path / "config.txt"
    _ = path.write_text(render_key_values(config))
    assert build_train_config(read_key_values(path)) == config

    spec = DatasetSpec(name="scene", patch_size=16, stride=8, test_origin=(16, 32), pad_target=70)
    assert build_dataset_spec(parse_key_values(render_key_values(spec))) == spec


def test_render_uses_flat_dotted_keys() -> None:
    lines = render_key_values(TrainConfig()).splitlines()
    assert "lr=0.0001" in lines
    assert "band_grouping=true" in lines
    assert "loss.rec=0.35" in lines
    assert "model.use_wavelet_net=true" in lines


def test_dataset_manifest_may_name_a_preset() -> None:
    spec = build_dataset_spec({"preset": "chikusei", "scale": "4", "test_origin": "128,0"})
    assert (spec.name, spec.patch_size, spec.crop_size) == ("chikusei", 128, 512)
    assert spec.test_origin == (128, 0)
    with pytest.raises(FormatError, match="unknown config key"):
        build_dataset_spec({"preset": "paviac", "bands": "102"})
    with pytest.raises(SpecError, match="unknown dataset preset"):
        build_dataset_spec({"preset": "salinas"})


def test_test_origin_must_be_a_pair() -> None:
    with pytest.raises(ValidationError, match="row,col"):
        DatasetSpec(test_origin="1,2,3")  # type: ignore[arg-type]


def test_pad_target_must_split_into_groups() -> None:
    assert DatasetSpec(pad_target=70).pad_target == 70
    assert DatasetSpec(pad_target=60, group_size=20).pad_target == 60
    with pytest.raises(ValidationError, match="pad_target 69 does not split into groups of 35"):
        DatasetSpec(pad_target=69)
    with pytest.raises(ValidationError, match="pad_target 105"):
        build_dataset_spec({"preset": "paviac", "group_size": "20"})


def test_extract_override_flags_parses_values_and_repeats() -> None:
    argv, overrides = extract_override_flags([
        "train",
        "--data",
        "prepared",
        "--set-lr",
        "0.001",
        "--set-loss.high=0",
        "--set-model.share-high-branch",
        "false",
        "--set-lr",
        "0.002",
        "--out",
        "runs/a",
    ])

    assert argv == ["train", "--data", "prepared", "--out", "runs/a"]
    assert overrides == {
        "lr": "0.002",
        "loss.high": "0",
        "model.share_high_branch": "false",
    }


def test_extract_override_flags_requires_value() -> None:
    with pytest.raises(SystemExit, match="Missing value"):
        extract_override_flags(["--set-lr"])
    with pytest.raises(SystemExit, match="Missing value"):
        extract_override_flags(["--set-lr", "--out", "x"])
    with pytest.raises(SystemExit, match="missing name"):
        extract_override_flags(["--set-=1"])


def test_seed_and_workers_from_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("DDSR_SEED", raising=False)
    monkeypatch.delenv("DDSR_WORKERS", raising=False)
    assert seed_from_env() is None
    assert workers_from_env() == 4

    monkeypatch.setenv("DDSR_SEED", " 17 ")
    monkeypatch.setenv("DDSR_WORKERS", "0")
    assert seed_from_env() == 17
    assert workers_from_env() == 1

    monkeypatch.setenv("DDSR_SEED", "seventeen")
    with pytest.raises(SpecError, match="DDSR_SEED"):
        seed_from_env()
