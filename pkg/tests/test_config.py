"""Configuration loading, validation, overrides, and hashing."""

import dataclasses

import pytest

from ocrqa.config import (RunConfig, config_from_dict, config_hash,
                          load_config, parse_overrides, resolved_dict)
from ocrqa.errors import ConfigError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.embed.d == 64
    assert cfg.attention.heads * cfg.attention.d_k == cfg.embed.d


def test_published_training_defaults():
    cfg = RunConfig()
    assert cfg.adv.tau == 1e-4
    assert cfg.adv.kl_weight == 1.5
    assert cfg.train.batch_size == 8
    assert cfg.adv.warmup_start == 0.2
    assert cfg.adv.warmup_iters == 1000


def test_head_width_mismatch_rejected():
    with pytest.raises(ConfigError, match="heads"):
        config_from_dict({"attention": {"heads": 3}})


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="sections"):
        config_from_dict({"optimizerz": {}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"adv": {"kl_weightt": 1.0}})


def test_type_errors_name_the_field():
    with pytest.raises(ConfigError, match="adv.K"):
        config_from_dict({"adv": {"K": "two"}})
    with pytest.raises(ConfigError, match="noise.token_noise_enabled"):
        config_from_dict({"noise": {"token_noise_enabled": 1}})


def test_int_accepted_for_float_field():
    cfg = config_from_dict({"adv": {"kl_weight": 2}})
    assert cfg.adv.kl_weight == 2.0
    assert isinstance(cfg.adv.kl_weight, float)


def test_lambda_tok_range_enforced():
    with pytest.raises(ConfigError, match="lambda_tok"):
        config_from_dict({"noise": {"lambda_tok": 1.5}})


def test_sequence_budget_checked():
    # 20 question + 9 grid + 12 decoder = 41 > 30
    with pytest.raises(ConfigError, match="max_seq"):
        config_from_dict({"embed": {"max_seq": 30}})


def test_bad_grid_rejected():
    with pytest.raises(ConfigError, match="grid"):
        config_from_dict({"train": {"grid": "3by3"}})


def test_unknown_optimizer_rejected():
    with pytest.raises(ConfigError, match="optimizer"):
        config_from_dict({"adv": {"optimizer": "lion"}})


def test_parse_overrides_yaml_scalars():
    tree = parse_overrides(["adv.K=3", "adv.tau=5e-5",
                            "noise.token_noise_enabled=false",
                            "adv.optimizer=sgd"])
    assert tree == {"adv": {"K": 3, "tau": 5e-5, "optimizer": "sgd"},
                    "noise": {"token_noise_enabled": False}}


def test_parse_overrides_rejects_malformed():
    with pytest.raises(ConfigError):
        parse_overrides(["adv.K"])
    with pytest.raises(ConfigError):
        parse_overrides(["K=3"])
    with pytest.raises(ConfigError):
        parse_overrides(["adv.sub.K=3"])


def test_overrides_beat_file_values(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("adv:\n  K: 5\n  alpha: 0.7\n", encoding="utf-8")
    cfg = load_config(path, ["adv.K=2"])
    assert cfg.adv.K == 2
    assert cfg.adv.alpha == 0.7


def test_load_config_rejects_non_mapping(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)


def test_load_config_rejects_bad_yaml(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("adv: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(path)


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("", encoding="utf-8")
    assert load_config(path) == RunConfig()


def test_ablation_section_applies_toggles():
    cfg = config_from_dict({"ablation": {"sasa": False, "adv_ocr": False}})
    assert not cfg.attention.sasa_enabled
    assert not cfg.adv.adv_enabled
    assert cfg.noise.token_noise_enabled
    assert cfg.embed.layout_2d_enabled


def test_ablation_rejects_unknown_and_nonbool():
    with pytest.raises(ConfigError, match="toggles"):
        config_from_dict({"ablation": {"noize": False}})
    with pytest.raises(ConfigError, match="boolean"):
        config_from_dict({"ablation": {"sasa": "off"}})


def test_with_toggles_copies_not_mutates():
    base = RunConfig().validate()
    off = base.with_toggles(sasa=False)
    assert base.attention.sasa_enabled
    assert not off.attention.sasa_enabled
    assert off.embed == base.embed
    assert off.embed is not base.embed


def test_resolved_dict_round_trips():
    cfg = config_from_dict({"adv": {"K": 3, "optimizer": "sgd"},
                            "embed": {"d": 32},
                            "attention": {"heads": 2, "d_k": 16}})
    again = config_from_dict(resolved_dict(cfg))
    assert again == cfg


def test_config_hash_stable_and_sensitive():
    a = RunConfig().validate()
    b = RunConfig().validate()
    assert config_hash(a) == config_hash(b)
    c = config_from_dict({"adv": {"K": 3}})
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 16


def test_shipped_profiles_load():
    import pathlib
    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    desk = load_config(root / "desk.cfg")
    assert desk.attention.aoe_layers == 2
    assert desk.attention.fusion_layers == 2
    assert desk.embed.d == 64
    full = load_config(root / "paper-scale.cfg")
    assert full.attention.aoe_layers == 6
    assert full.attention.fusion_layers == 4
    assert full.attention.heads == 12
    assert full.train.iterations == 48000


def test_every_section_field_survives_round_trip():
    cfg = RunConfig().validate()
    tree = resolved_dict(cfg)
    for section in ("embed", "attention", "noise", "adv", "decoder", "train"):
        section_cls = type(getattr(cfg, section))
        assert set(tree[section]) == {f.name for f in
                                      dataclasses.fields(section_cls)}
