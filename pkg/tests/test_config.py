"""Config parsing: schema enforcement, typed values, overrides, round-trips."""

import pytest

from coskel.config import Config, SCHEMA, format_config, load_config, parse_config_text
from coskel.errors import UsageError


def test_defaults_cover_every_schema_key():
    cfg = Config()
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["model.channels"] == (16, 16, 32, 32)
    assert cfg["train.lambda1"] == 0.1
    assert cfg["train.lambda2"] == 0.2
    assert cfg["align.tau"] == 0.1
    assert cfg["train.preset"] == "desk"
    assert cfg["refine.residual"] is True


def test_parse_types_comments_and_whitespace():
    cfg = parse_config_text(
        """
        # a comment line
        train.lr = 0.05   # trailing comment
        model.channels = 8, 8, 16
        refine.residual = false
        data.modality = bone
        eval.topk = 1,2,3
        out.dir = runs/exp1
        """
    )
    assert cfg["train.lr"] == 0.05
    assert cfg["model.channels"] == (8, 8, 16)
    assert cfg["refine.residual"] is False
    assert cfg["data.modality"] == "bone"
    assert cfg["eval.topk"] == (1, 2, 3)
    assert cfg["out.dir"] == "runs/exp1"


def test_unknown_key_is_named_with_line_number():
    with pytest.raises(UsageError, match=r"myfile:2.*train\.lrr"):
        parse_config_text("train.lr = 0.1\ntrain.lrr = 0.2\n", source="myfile")


def test_duplicate_key_rejected():
    with pytest.raises(UsageError, match="duplicate"):
        parse_config_text("train.lr = 0.1\ntrain.lr = 0.2\n")


def test_malformed_line_rejected():
    with pytest.raises(UsageError, match="key = value"):
        parse_config_text("train.lr 0.1\n")


def test_type_errors_name_the_key():
    with pytest.raises(UsageError, match="train.epochs"):
        parse_config_text("train.epochs = soon\n")
    with pytest.raises(UsageError, match="refine.residual"):
        parse_config_text("refine.residual = maybe\n")
    with pytest.raises(UsageError, match="model.channels"):
        parse_config_text("model.channels = 8, eight\n")


def test_constrained_string_values():
    with pytest.raises(UsageError, match="data.modality"):
        parse_config_text("data.modality = velocity\n")
    with pytest.raises(UsageError, match="data.streams"):
        parse_config_text("data.streams = joint, rgb\n")
    with pytest.raises(UsageError, match="adjacency_mode"):
        parse_config_text("model.adjacency_mode = learned\n")


def test_override_applies_on_top():
    cfg = parse_config_text("train.lr = 0.5\n")
    out = cfg.override(["train.lr=0.25", "train.seed=7", "synth.rgb=false"])
    assert out["train.lr"] == 0.25
    assert out["train.seed"] == 7
    assert out["synth.rgb"] is False
    assert cfg["train.lr"] == 0.5  # original untouched


def test_override_validation():
    cfg = Config()
    with pytest.raises(UsageError, match="key=value"):
        cfg.override(["train.lr"])
    with pytest.raises(UsageError, match="train.lrr"):
        cfg.override(["train.lrr=1"])
    with pytest.raises(UsageError, match="train.epochs"):
        cfg.override(["train.epochs=ten"])


def test_unknown_key_lookup_and_construction():
    cfg = Config()
    with pytest.raises(UsageError):
        cfg["train.nonsense"]
    with pytest.raises(UsageError):
        Config(values={"made.up": 1})


def test_format_parse_round_trip():
    cfg = Config().override(
        ["train.lr=0.33", "model.channels=4,8", "data.modality=bone_motion", "refine.residual=false"]
    )
    text = format_config(cfg)
    again = parse_config_text(text)
    assert again.values == cfg.values


def test_load_config_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.seed = 3\nsynth.classes = 6\n")
    cfg = load_config(path)
    assert cfg["train.seed"] == 3
    assert cfg["synth.classes"] == 6
    with pytest.raises(UsageError, match="not found"):
        load_config(tmp_path / "missing.cfg")
