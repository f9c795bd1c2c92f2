"""Operator command line: corpus generation, OCR corruption, training,
evaluation, and ablation sweeps.

Exit codes: 0 success, 1 usage, 2 validation, 3 numerical abort.  Every
artifact is UTF-8; training logs are line-delimited JSON whose first
line embeds the resolved configuration and its hash, so a log fully
identifies the run that produced it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_params, save_params
from .config import (RunConfig, config_hash, load_config, resolved_dict)
from .data import (Sample, default_dictionary, load_corpus, load_dictionary,
                   synth_generate, vocab_build, write_corpus)
from .errors import (ConfigError, ContractError, NumericalError, ShapeError,
                     ValidationError)
from .metrics import evaluate
from .model import Model
from .noise import corrupt_sample
from .train import make_optimizer, train_loop

__all__ = ["main"]

META_SUFFIX = ".meta.json"
TOGGLE_NAMES = ("token_noise", "layout_2d", "sasa", "adv_ocr")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        raise _UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _toggles_of(cfg: RunConfig) -> dict[str, bool]:
    return {
        "token_noise": cfg.noise.token_noise_enabled,
        "layout_2d": cfg.embed.layout_2d_enabled,
        "sasa": cfg.attention.sasa_enabled,
        "adv_ocr": cfg.adv.adv_enabled,
    }


def _header(cfg: RunConfig) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "toggles": _toggles_of(cfg),
        "resolved_config": resolved_dict(cfg),
    }


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _save_checkpoint(path: Path, params) -> None:
    # write-then-rename keeps the previous checkpoint intact if this
    # process dies mid-write
    tmp = path.with_name(path.name + ".tmp")
    save_params(tmp, params)
    os.replace(tmp, path)


def _load_model(checkpoint: Path, meta_path: Path | None) -> Model:
    if meta_path is None:
        name = checkpoint.name
        stem = name[:-len(".ckpt")] if name.endswith(".ckpt") else name
        meta_path = checkpoint.with_name(stem + META_SUFFIX)
    if not checkpoint.is_file():
        raise ValidationError(f"checkpoint not found: {checkpoint}")
    if not meta_path.is_file():
        raise ValidationError(f"checkpoint metadata not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{meta_path}: not valid JSON: {e}") from e
    for key in ("vocab", "resolved_config"):
        if key not in meta:
            raise ValidationError(f"{meta_path}: missing key {key!r}")
    from .config import config_from_dict
    cfg = config_from_dict(meta["resolved_config"])
    vocab = {str(k): int(v) for k, v in meta["vocab"].items()}
    model = Model(vocab, cfg, rng=np.random.default_rng(0))
    model.apply_params(load_params(checkpoint))
    return model


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    samples = synth_generate(args.seed, args.n, grid=args.grid,
                             vis_dim=args.vis_dim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(out, samples)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_corrupt(args) -> int:
    cfg = load_config(args.config, args.set or [])
    dictionary = (load_dictionary(args.dictionary) if args.dictionary
                  else default_dictionary())
    samples = load_corpus(args.corpus)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corrupted = []
    audit_lines = []
    changed = 0
    for sample in samples:
        new_sample, outcomes = corrupt_sample(sample, dictionary, cfg.noise)
        corrupted.append(new_sample)
        changed += sum(1 for o in outcomes if o.corrupted != o.original)
        audit_lines.append(json.dumps({
            "id": sample.id,
            "tokens": [dataclasses.asdict(o) for o in outcomes],
        }, sort_keys=True))
    write_corpus(out, corrupted)
    audit = Path(args.audit) if args.audit else out.with_name(out.name + ".audit.jsonl")
    audit.write_text("\n".join(audit_lines) + "\n", encoding="utf-8")
    total = sum(len(s.ocr_tokens) for s in samples)
    print(f"corrupted {changed}/{total} tokens over {len(samples)} samples")
    print(f"wrote corpus to {out}, audit to {audit}")
    return 0


def _run_training(cfg: RunConfig, samples: list[Sample], out_dir: Path,
                  dictionary) -> tuple[Model, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.train.seed)
    model = Model(vocab_build(samples), cfg, rng=rng)
    optimizer = make_optimizer(cfg.adv)
    ckpt_path = out_dir / "model.ckpt"
    meta_path = out_dir / ("model" + META_SUFFIX)
    meta = dict(_header(cfg))
    meta["vocab"] = model.vocab
    _atomic_write_bytes(meta_path, json.dumps(meta, sort_keys=True,
                                              indent=2).encode("utf-8"))
    log_path = out_dir / "train.log.jsonl"
    every = cfg.train.checkpoint_every
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(json.dumps(_header(cfg), sort_keys=True) + "\n")

        def on_step(record: dict) -> None:
            log.write(json.dumps(record) + "\n")
            log.flush()
            if every and (record["iter"] + 1) % every == 0:
                _save_checkpoint(ckpt_path, model.params)

        try:
            train_loop(model, samples, dictionary, cfg.train.iterations, rng,
                       optimizer=optimizer, on_step=on_step)
        except NumericalError:
            # the last periodic checkpoint (if any) stays on disk
            log.flush()
            raise
    _save_checkpoint(ckpt_path, model.params)
    return model, ckpt_path


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or [])
    samples = load_corpus(args.corpus)
    dictionary = (load_dictionary(args.dictionary) if args.dictionary
                  else default_dictionary())
    out_dir = Path(args.out_dir)
    model, ckpt_path = _run_training(cfg, samples, out_dir, dictionary)
    print(f"trained {cfg.train.iterations} iterations on {len(samples)} samples")
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {out_dir / 'train.log.jsonl'}")
    return 0


def _print_report(report) -> None:
    rows = [("n", str(report.n)),
            ("accuracy", f"{report.accuracy:.4f}"),
            ("anls", f"{report.anls:.4f}"),
            ("mean_loss_pred", f"{report.mean_loss_pred:.6f}")]
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        print(f"{key:<{width}}  {value}")


def cmd_eval(args) -> int:
    model = _load_model(Path(args.checkpoint),
                        Path(args.meta) if args.meta else None)
    samples = load_corpus(args.corpus)
    report = evaluate(model, samples, anls_threshold=args.anls_threshold,
                      threads=args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "config_hash": config_hash(model.cfg),
        "n": report.n,
        "accuracy": report.accuracy,
        "anls": report.anls,
        "mean_loss_pred": report.mean_loss_pred,
    }
    (out_dir / "report.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    with open(out_dir / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for rec in report.records:
            fh.write(json.dumps(dataclasses.asdict(rec)) + "\n")
    _print_report(report)
    return 0


def _parse_toggle_sets(text: str) -> list[dict[str, bool]]:
    rows = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            raise ConfigError("empty toggle set in --toggle-sets")
        if part == "none":
            names: tuple[str, ...] = ()
        elif part == "all":
            names = TOGGLE_NAMES
        else:
            names = tuple(part.split("+"))
            unknown = set(names) - set(TOGGLE_NAMES)
            if unknown:
                raise ConfigError(f"unknown toggles {sorted(unknown)}; "
                                  f"valid: {', '.join(TOGGLE_NAMES)}")
        rows.append({name: name in names for name in TOGGLE_NAMES})
    return rows


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set or [])
    samples = load_corpus(args.corpus)
    eval_samples = (load_corpus(args.eval_corpus) if args.eval_corpus
                    else samples)
    dictionary = (load_dictionary(args.dictionary) if args.dictionary
                  else default_dictionary())
    if args.full_grid:
        toggle_rows = [
            {name: bool(bits >> i & 1) for i, name in enumerate(TOGGLE_NAMES)}
            for bits in range(2 ** len(TOGGLE_NAMES))]
    else:
        toggle_rows = _parse_toggle_sets(args.toggle_sets)

    results = []
    for toggles in toggle_rows:
        row_cfg = cfg.with_toggles(**toggles)
        rng = np.random.default_rng(row_cfg.train.seed)
        model = Model(vocab_build(samples), row_cfg, rng=rng)
        train_loop(model, samples, dictionary, row_cfg.train.iterations, rng)
        report = evaluate(model, eval_samples,
                          anls_threshold=args.anls_threshold)
        results.append({"toggles": toggles, "accuracy": report.accuracy,
                        "anls": report.anls})

    header = [*TOGGLE_NAMES, "accuracy", "anls"]
    print("  ".join(f"{h:>11}" for h in header))
    for row in results:
        cells = ["on" if row["toggles"][n] else "off" for n in TOGGLE_NAMES]
        cells += [f"{row['accuracy']:.4f}", f"{row['anls']:.4f}"]
        print("  ".join(f"{c:>11}" for c in cells))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {"config_hash": config_hash(cfg), "rows": results}
        out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                       encoding="utf-8")
        print(f"wrote table to {out}")
    return 0


# ---------------------------------------------------------------------------
# wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="ocrqa",
                     description="Scene-text question answering trainer "
                                 "and evaluation tools.")
    sub = parser.add_subparsers(dest="command", metavar="command",
                            parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate",
                       help="write a synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=_positive_int, required=True,
                   help="number of samples (>= 1)")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", default="3x3")
    p.add_argument("--vis-dim", type=_positive_int, default=16)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("corrupt",
                       help="apply character noise to a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", default=None,
                   help="per-token outcome log (default: <out>.audit.jsonl)")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--dictionary", default=None)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train",
                       help="train a model, writing checkpoint and log")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dictionary", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval",
                       help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--meta", default=None,
                   help="metadata JSON (default: next to the checkpoint)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--anls-threshold", type=float, default=0.5)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate",
                       help="train and score a grid of feature toggles")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--corpus", required=True)
    p.add_argument("--eval-corpus", default=None,
                   help="held-out (possibly corrupted) corpus; defaults "
                        "to the training corpus")
    p.add_argument("--dictionary", default=None)
    p.add_argument("--toggle-sets", default="none,all",
                   help="comma list of rows: none, all, or name+name "
                        f"over {', '.join(TOGGLE_NAMES)}")
    p.add_argument("--full-grid", action="store_true",
                   help="run every toggle combination")
    p.add_argument("--anls-threshold", type=float, default=0.5)
    p.add_argument("--out", default=None, help="JSON table path")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ValidationError, ShapeError, ContractError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
