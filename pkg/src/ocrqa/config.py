"""Run configuration: typed sections, YAML loading, overrides, hashing.

A config file is a YAML tree whose top-level sections mirror the
dataclasses below (``embed``, ``attention``, ``noise``, ``adv``,
``decoder``, ``train``) plus an optional ``ablation`` section holding the
four feature toggles (``token_noise``, ``layout_2d``, ``sasa``,
``adv_ocr``), which map onto the corresponding module flags.  Command
line overrides use dotted paths (``adv.K=3``).  The fully resolved
config is dumpable and hashable so every run log can pin exactly what
ran.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError

__all__ = [
    "EmbedConfig", "AttentionConfig", "NoiseConfig", "AdvConfig",
    "DecoderConfig", "TrainConfig", "RunConfig",
    "load_config", "parse_overrides", "resolved_dict", "config_hash",
]


@dataclass
class EmbedConfig:
    d: int = 64                    # shared hidden size
    max_question_len: int = 20
    max_seq: int = 160             # 1D position budget P
    buckets_2d: int = 32           # per-component 2D layout buckets
    max_box_h: float = 240.0       # box height normalizer for bucketing
    max_box_w: float = 320.0
    vis_dim: int = 16              # OCR visual / object appearance width
    obj_box_dim: int = 4
    ocr_pos_shift: bool = True     # use position i-1 for OCR row i (clamped)
    layout_2d_enabled: bool = True


@dataclass
class AttentionConfig:
    heads: int = 4
    d_k: int = 16
    aoe_layers: int = 2
    fusion_layers: int = 2
    rel_range_1d: int = 32         # R: 1D relative-distance clamp
    rel_range_2d: int = 16         # B: 2D bucket-delta clamp
    sasa_enabled: bool = True
    values_from_v: bool = False    # False: project keys as values, as printed


@dataclass
class NoiseConfig:
    lambda_tok: float = 0.15       # per-token corruption probability
    ops_enabled: tuple[str, ...] = ("delete", "insert", "substitute")
    seed: int = 0
    token_noise_enabled: bool = True


@dataclass
class AdvConfig:
    K: int = 2                     # ascent steps
    alpha: float = 0.3             # ascent step size
    lambda_adv: float = 1.0        # Frobenius perturbation bound
    tau: float = 1e-4              # learning rate
    kl_weight: float = 1.5
    adv_enabled: bool = True
    optimizer: str = "adamw"       # or "sgd"
    warmup_start: float = 0.2      # lr factor at iteration 0
    warmup_iters: int = 1000


@dataclass
class DecoderConfig:
    max_steps: int = 12


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    seed: int = 0
    checkpoint_every: int = 500    # 0: only the final checkpoint
    grid: str = "3x3"


@dataclass
class RunConfig:
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    adv: AdvConfig = field(default_factory=AdvConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        a, e, n, v, t = self.attention, self.embed, self.noise, self.adv, self.train
        if a.heads < 1 or a.d_k < 1:
            raise ConfigError("attention.heads and attention.d_k must be >= 1")
        if a.heads * a.d_k != e.d:
            raise ConfigError(f"attention.heads*d_k must equal embed.d: "
                              f"{a.heads}*{a.d_k} != {e.d}")
        if a.aoe_layers < 0 or a.fusion_layers < 0:
            raise ConfigError("layer counts must be >= 0")
        if a.rel_range_1d < 1 or a.rel_range_2d < 1:
            raise ConfigError("relative-position ranges must be >= 1")
        if e.d < 2:
            raise ConfigError("embed.d must be >= 2")
        if e.buckets_2d < 1:
            raise ConfigError("embed.buckets_2d must be >= 1")
        if e.max_box_h <= 0 or e.max_box_w <= 0:
            raise ConfigError("embed.max_box_h/max_box_w must be positive")
        if not 0.0 <= n.lambda_tok <= 1.0:
            raise ConfigError(f"noise.lambda_tok must be in [0,1], got {n.lambda_tok}")
        if not n.ops_enabled:
            raise ConfigError("noise.ops_enabled must not be empty")
        bad = set(n.ops_enabled) - {"delete", "insert", "substitute"}
        if bad:
            raise ConfigError(f"unknown noise ops {sorted(bad)}")
        if v.K < 1:
            raise ConfigError(f"adv.K must be >= 1, got {v.K}")
        if v.alpha <= 0 or v.lambda_adv <= 0 or v.tau <= 0:
            raise ConfigError("adv.alpha, adv.lambda_adv, adv.tau must be positive")
        if v.optimizer not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer {v.optimizer!r}")
        if not 0.0 < v.warmup_start <= 1.0 or v.warmup_iters < 0:
            raise ConfigError("adv.warmup_start must be in (0,1], warmup_iters >= 0")
        if self.decoder.max_steps < 1:
            raise ConfigError("decoder.max_steps must be >= 1")
        if t.iterations < 1 or t.batch_size < 1:
            raise ConfigError("train.iterations and train.batch_size must be >= 1")
        if t.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")
        # the joint sequence must fit the 1D position budget
        rows, cols = _grid_dims(t.grid)
        budget = e.max_question_len + rows * cols + self.decoder.max_steps
        if budget > e.max_seq:
            raise ConfigError(f"embed.max_seq={e.max_seq} cannot hold question "
                              f"({e.max_question_len}) + grid ({rows * cols}) + "
                              f"decoder ({self.decoder.max_steps}) rows")
        return self

    def with_toggles(self, token_noise: bool | None = None,
                     layout_2d: bool | None = None,
                     sasa: bool | None = None,
                     adv_ocr: bool | None = None) -> "RunConfig":
        """A copy with the four ablation toggles applied to their modules."""
        cfg = RunConfig(**{f.name: dataclasses.replace(getattr(self, f.name))
                           for f in dataclasses.fields(self)})
        if token_noise is not None:
            cfg.noise.token_noise_enabled = token_noise
        if layout_2d is not None:
            cfg.embed.layout_2d_enabled = layout_2d
        if sasa is not None:
            cfg.attention.sasa_enabled = sasa
        if adv_ocr is not None:
            cfg.adv.adv_enabled = adv_ocr
        return cfg.validate()


def _grid_dims(grid: str) -> tuple[int, int]:
    parts = grid.lower().split("x")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except (ValueError, IndexError) as e:
        raise ConfigError(f"train.grid must look like '3x3', got {grid!r}") from e
    if len(parts) != 2 or rows < 1 or cols < 1:
        raise ConfigError(f"train.grid must look like '3x3', got {grid!r}")
    return rows, cols


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_ABLATION_KEYS = ("token_noise", "layout_2d", "sasa", "adv_ocr")


def _coerce(section: str, name: str, ftype, value):
    where = f"{section}.{name}"
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    # the only remaining field type is a tuple of strings
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return tuple(value)
    raise ConfigError(f"{where}: expected a list of strings, got {value!r}")


def _section_from_dict(section: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    kwargs = {}
    for name, value in values.items():
        ftype = fields[name].type
        if isinstance(ftype, str):  # stringized annotations
            ftype = {"int": int, "float": float, "bool": bool, "str": str,
                     "tuple[str, ...]": tuple}[ftype]
        kwargs[name] = _coerce(section, name, ftype, value)
    return cls(**kwargs)


def config_from_dict(tree: dict) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    tree = dict(tree)
    ablation = tree.pop("ablation", {})
    unknown = set(tree) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = RunConfig(**{
        name: _section_from_dict(name, cls, tree.get(name, {}))
        for name, cls in (("embed", EmbedConfig), ("attention", AttentionConfig),
                          ("noise", NoiseConfig), ("adv", AdvConfig),
                          ("decoder", DecoderConfig), ("train", TrainConfig))})
    if ablation:
        if not isinstance(ablation, dict):
            raise ConfigError("section 'ablation' must be a mapping")
        unknown = set(ablation) - set(_ABLATION_KEYS)
        if unknown:
            raise ConfigError(f"unknown ablation toggles: {sorted(unknown)}")
        for key in _ABLATION_KEYS:
            if key in ablation and not isinstance(ablation[key], bool):
                raise ConfigError(f"ablation.{key}: expected a boolean")
        cfg = cfg.with_toggles(**{k: ablation.get(k) for k in _ABLATION_KEYS})
    return cfg.validate()


def parse_overrides(pairs: list[str]) -> dict:
    """Parse ``section.key=value`` strings into a nested dict; values are
    read as YAML scalars (so ``3``, ``0.5``, ``true``, ``sgd`` all work)."""
    tree: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        path, raw = pair.split("=", 1)
        parts = path.strip().split(".")
        if len(parts) != 2 or not all(parts):
            raise ConfigError(f"override path {path!r} must be section.key")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"override {pair!r}: unreadable value: {e}") from e
        if isinstance(value, str):
            # YAML leaves dot-less scientific notation ("5e-5") a string
            try:
                value = int(value)
            except ValueError:
                try:
                    value = float(value)
                except ValueError:
                    pass
        tree.setdefault(parts[0], {})[parts[1]] = value
    return tree


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Load YAML config (defaults when ``path`` is None) and apply dotted
    overrides on top."""
    tree: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                loaded = yaml.safe_load(fh)
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: not valid YAML: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        tree = loaded
    if overrides:
        tree = _merge(tree, parse_overrides(overrides))
    return config_from_dict(tree)


def resolved_dict(cfg: RunConfig) -> dict:
    """The fully resolved config as a plain JSON-serializable tree."""
    out = {}
    for f in dataclasses.fields(cfg):
        section = dataclasses.asdict(getattr(cfg, f.name))
        out[f.name] = {k: list(v) if isinstance(v, tuple) else v
                       for k, v in section.items()}
    return out


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(resolved_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
