"""Command-line interface: train, eval, gradcheck, synth, sweep,
inspect-attention.

Exit codes are a stable contract: 0 success, 1 runtime or check failure,
2 usage/config error.  All randomness flows from --seed; given identical
flags, every command writes byte-identical outputs except for the report's
timestamp field.  A --config FILE of key=value lines can set any flag;
explicit command-line flags win.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import (
    CorpusError,
    CorpusMeta,
    SyntheticSpec,
    generate_synthetic,
    load_corpus,
    load_meta,
    make_folds,
    manifest_hash,
    synthetic_meta,
    write_corpus,
)
from .hopping import trace_to_jsonable
from .network import (
    ModelConfig,
    ModelParams,
    batch_loss,
    fast_loss,
    forward_logits,
    load_checkpoint,
)
from .training import (
    TrainConfig,
    TrainingDivergedError,
    atomic_write_text,
    confusion_csv,
    evaluate,
    format_text_report,
    hop_sweep,
    train,
    write_json_report,
)


class ConfigError(ValueError):
    """Invalid flag combination or value (exit code 2)."""


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["amh", "mdre"], default="amh")
    p.add_argument("--hops", type=int, default=3, help="number of attention hops (amh)")
    p.add_argument("--hidden-dim", type=int, default=200)
    p.add_argument("--embed-dim", type=int, default=100)
    p.add_argument("--vocab-size", type=int, default=None, help="override corpus vocab size")
    p.add_argument("--audio-dim", type=int, default=None, help="override corpus audio dim")
    p.add_argument("--video-dim", type=int, default=None, help="override corpus video dim")
    p.add_argument("--per-hop-attention", action="store_true")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--runs", type=int, default=1, help="runs per fold (protocol value: 10)")
    p.add_argument("--parallel", type=int, default=1, help="concurrent (fold, run) workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amhop")
    parser.add_argument("--config", default=None, help="key=value file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="cross-validated training on a manifest")
    p_train.add_argument("--data", required=True, help="manifest.tsv path")
    p_train.add_argument("--out", default="runs", help="output directory")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument(
        "--save-models", choices=["first", "all", "none"], default="first"
    )
    _add_model_flags(p_train)
    _add_train_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p_eval.add_argument("--model-path", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", default=None, help="report directory (default: stdout only)")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--model", choices=["amh", "mdre"], default="amh")
    p_grad.add_argument("--hops", type=int, default=3)
    p_grad.add_argument("--hidden-dim", type=int, default=16)
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--per-hop-attention", action="store_true")

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--out", required=True, help="corpus directory")
    p_synth.add_argument("--rule", choices=["copy", "xor3"], default="xor3")
    p_synth.add_argument("--n", type=int, default=600)
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--min-len", type=int, default=3)
    p_synth.add_argument("--max-len", type=int, default=6)
    p_synth.add_argument("--audio-dim", type=int, default=12)
    p_synth.add_argument("--video-dim", type=int, default=12)
    p_synth.add_argument("--vocab-size", type=int, default=40)
    p_synth.add_argument("--noise", type=float, default=0.5)
    p_synth.add_argument("--seed", type=int, default=0)

    p_sweep = sub.add_parser("sweep", help="train once per hop count, tabulate WA/UA")
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--out", default="runs")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--hops", default="1..9", help="range like 1..9, list like 1,3,7, or a single count")
    p_sweep.add_argument("--hidden-dim", type=int, default=200)
    p_sweep.add_argument("--embed-dim", type=int, default=100)
    p_sweep.add_argument("--vocab-size", type=int, default=None)
    p_sweep.add_argument("--audio-dim", type=int, default=None)
    p_sweep.add_argument("--video-dim", type=int, default=None)
    p_sweep.add_argument("--per-hop-attention", action="store_true")
    _add_train_flags(p_sweep)

    p_insp = sub.add_parser(
        "inspect-attention", help="dump per-hop attention weights for one sample"
    )
    p_insp.add_argument("--model-path", required=True)
    p_insp.add_argument("--data", required=True)
    p_insp.add_argument("--sample", required=True, help="sample id from the manifest")
    p_insp.add_argument("--out", default=None, help="JSON path (default: stdout)")

    return parser


def _read_config_file(path: str) -> dict:
    """Flat key=value defaults; '#' starts a comment, values may be quoted."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if value and value[0] == value[-1] and value[0] in "'\"" and len(value) >= 2:
                value = value[1:-1]
            values[key.replace("-", "_")] = value
    return values


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    argv = list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    file_values = _read_config_file(args.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub_action.choices[args.command]
    actions = {a.dest: a for a in subparser._actions if a.dest != "help"}
    unknown = [k for k in file_values if k not in actions]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    explicit = {
        action.dest
        for action in subparser._actions
        for opt in action.option_strings
        if any(tok == opt or tok.startswith(opt + "=") for tok in argv)
    }
    for key, value in file_values.items():
        if key in explicit:
            continue  # command-line flags take precedence
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            parsed = _coerce(value, True)
        elif action.type is not None:
            try:
                parsed = action.type(value)
            except ValueError:
                raise ConfigError(f"config key {key}: cannot parse {value!r}") from None
        else:
            parsed = value
        if action.choices is not None and parsed not in action.choices:
            raise ConfigError(f"config key {key}: {parsed!r} not in {list(action.choices)}")
        setattr(args, key, parsed)
    return args


def _parse_hop_range(text: str) -> List[int]:
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            hops = list(range(int(lo), int(hi) + 1))
        elif "," in text:
            hops = [int(part) for part in text.split(",")]
        else:
            hops = [int(text)]
    except ValueError:
        raise ConfigError(f"cannot parse hop range {text!r}") from None
    if not hops or any(h < 1 for h in hops):
        raise ConfigError("hops must be >= 1")
    return hops


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _resolve_corpus(args) -> tuple:
    if not os.path.exists(args.data):
        raise ConfigError(f"manifest not found: {args.data}")
    meta = load_meta(args.data) or CorpusMeta()
    if getattr(args, "audio_dim", None):
        meta.audio_dim = args.audio_dim
    if getattr(args, "video_dim", None):
        meta.video_dim = args.video_dim
    if getattr(args, "vocab_size", None):
        meta.vocab_size = args.vocab_size
    corpus = load_corpus(args.data, meta)
    return corpus, meta


def _model_config(args, meta: CorpusMeta, kind: str, n_hops: int) -> ModelConfig:
    if kind == "amh" and n_hops < 1:
        raise ConfigError("hops must be >= 1")
    return ModelConfig(
        kind=kind,
        n_hops=n_hops,
        hidden_dim=args.hidden_dim,
        embed_dim=args.embed_dim,
        vocab_size=meta.vocab_size,
        audio_dim=meta.audio_dim,
        video_dim=meta.video_dim,
        labels=meta.labels,
        per_hop_attention=args.per_hop_attention,
    )


def _train_config(args) -> TrainConfig:
    for name in ("lr", "clip_norm", "batch_size", "epochs", "patience", "folds", "runs", "parallel"):
        if getattr(args, name) <= 0:
            raise ConfigError(f"{name.replace('_', '-')} must be positive")
    return TrainConfig(
        lr=args.lr,
        clip_norm=args.clip_norm,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        runs_per_fold=args.runs,
        seed=args.seed,
        parallel=args.parallel,
    )


def _flag_echo(args) -> dict:
    skip = {"command", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_train(args) -> int:
    corpus, meta = _resolve_corpus(args)
    model_config = _model_config(args, meta, args.model, args.hops)
    train_config = _train_config(args)
    folds = make_folds([s.id for s in corpus], n_folds=args.folds, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_dir = args.out if args.save_models != "none" else None
    reports, summary = train(
        corpus,
        folds,
        model_config,
        train_config,
        checkpoint_dir=save_dir,
        save_models=args.save_models,
    )
    payload = {
        "command": "train",
        "config": _flag_echo(args),
        "manifest_sha256": manifest_hash(args.data),
        "seed": args.seed,
        "timestamp": _timestamp(),
        "reports": [r.to_dict() for r in reports],
        "summary": summary,
    }
    write_json_report(os.path.join(args.out, "report.json"), payload)
    atomic_write_text(
        os.path.join(args.out, "report.txt"),
        format_text_report(reports, summary, meta.labels),
    )
    atomic_write_text(
        os.path.join(args.out, "confusion.csv"),
        confusion_csv(summary["pooled_confusion"], meta.labels),
    )
    print(
        f"WA {summary['wa_mean']:.4f} ± {summary['wa_std_across_runs']:.4f}  "
        f"UA {summary['ua_mean']:.4f} ± {summary['ua_std_across_runs']:.4f}  "
        f"({summary['n_runs']} runs) -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    if not os.path.exists(args.model_path):
        raise ConfigError(f"checkpoint not found: {args.model_path}")
    if not os.path.exists(args.data):
        raise ConfigError(f"manifest not found: {args.data}")
    params = load_checkpoint(args.model_path)
    # The checkpoint defines expected dims and the label order.
    meta = CorpusMeta(
        audio_dim=params.config.audio_dim,
        video_dim=params.config.video_dim,
        vocab_size=params.config.vocab_size,
        labels=params.config.labels,
    )
    corpus = load_corpus(args.data, meta)
    report = evaluate(params, corpus)
    payload = {
        "command": "eval",
        "config": _flag_echo(args),
        "manifest_sha256": manifest_hash(args.data),
        "timestamp": _timestamp(),
        "report": report.to_dict(),
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json_report(os.path.join(args.out, "eval.json"), payload)
        atomic_write_text(
            os.path.join(args.out, "confusion.csv"),
            confusion_csv(report.to_dict()["confusion"], meta.labels),
        )
    print(f"WA {report.wa:.4f}  UA {report.ua:.4f}  ({len(corpus)} samples)")
    return 0


def _gradcheck_batch(args):
    """Tiny shrunken-dim synthetic batch + model for gradient verification."""
    spec = SyntheticSpec(
        n_samples=4,
        min_len=2,
        max_len=4,
        audio_dim=5,
        video_dim=7,
        vocab_size=9,
        n_classes=4,
        noise=0.3,
        rule="xor3",
        seed=args.seed,
    )
    samples = generate_synthetic(spec)
    config = ModelConfig(
        kind=args.model,
        n_hops=args.hops,
        hidden_dim=args.hidden_dim,
        embed_dim=4,
        vocab_size=spec.vocab_size,
        audio_dim=spec.audio_dim,
        video_dim=spec.video_dim,
        labels=tuple(f"class_{c}" for c in range(spec.n_classes)),
        per_hop_attention=args.per_hop_attention,
    )
    params = ModelParams.init(config, np.random.default_rng(np.random.SeedSequence([args.seed, 7])))
    return samples, params


def cmd_gradcheck(args) -> int:
    if args.model == "amh" and args.hops < 1:
        raise ConfigError("hops must be >= 1")
    if args.eps <= 0:
        raise ConfigError("eps must be positive")
    samples, params = _gradcheck_batch(args)
    named = params.named_parameters()
    report = ad.grad_check(
        lambda: batch_loss(samples, params),
        named,
        eps=args.eps,
        f_numeric=lambda: fast_loss(samples, params),
    )
    width = max(len(name) for name in report)
    failures = []
    for name in sorted(report):
        err = report[name]
        status = "ok" if err < args.tolerance else "FAIL"
        if err >= args.tolerance:
            failures.append(name)
        print(f"{name:<{width}}  max rel err {err:.3e}  {status}")
    if failures:
        print(f"gradient check FAILED for: {', '.join(failures)}", file=sys.stderr)
        return 1
    print(f"all {len(report)} parameter tensors within {args.tolerance:g}")
    return 0


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(
            n_samples=args.n,
            min_len=args.min_len,
            max_len=args.max_len,
            audio_dim=args.audio_dim,
            video_dim=args.video_dim,
            vocab_size=args.vocab_size,
            n_classes=args.classes,
            noise=args.noise,
            rule=args.rule,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    samples = generate_synthetic(spec)
    meta = synthetic_meta(spec)
    os.makedirs(args.out, exist_ok=True)
    manifest_path = write_corpus(args.out, samples, meta)
    counts = np.bincount([s.label for s in samples], minlength=spec.n_classes)
    print(f"wrote {len(samples)} samples -> {manifest_path}")
    print(
        f"rule {spec.rule}: label depends on "
        + ("every modality jointly (no single modality or pair suffices)"
           if spec.rule == "xor3" else "each modality alone")
    )
    print(f"classes {spec.n_classes}, counts {counts.tolist()}, noise {spec.noise}")
    print("noise <= 1.0 keeps the Bayes-optimal accuracy ~1.0 at these dims")
    return 0


def cmd_sweep(args) -> int:
    hops = _parse_hop_range(args.hops)
    corpus, meta = _resolve_corpus(args)
    model_config = _model_config(args, meta, "amh", hops[0])
    train_config = _train_config(args)
    folds = make_folds([s.id for s in corpus], n_folds=args.folds, seed=args.seed)
    rows = hop_sweep(corpus, folds, hops, model_config, train_config)
    os.makedirs(args.out, exist_ok=True)
    csv_lines = ["n_hops,wa_mean,wa_std,ua_mean,ua_std"]
    text_lines = [f"{'hops':>4} {'WA':>16} {'UA':>16}"]
    for row in rows:
        csv_lines.append(
            f"{row['n_hops']},{row['wa_mean']!r},{row['wa_std']!r},{row['ua_mean']!r},{row['ua_std']!r}"
        )
        text_lines.append(
            f"{row['n_hops']:>4} {row['wa_mean']:>8.4f} ± {row['wa_std']:<6.4f}"
            f" {row['ua_mean']:>8.4f} ± {row['ua_std']:<6.4f}"
        )
    atomic_write_text(os.path.join(args.out, "sweep.csv"), "\n".join(csv_lines) + "\n")
    atomic_write_text(os.path.join(args.out, "sweep.txt"), "\n".join(text_lines) + "\n")
    payload = {
        "command": "sweep",
        "config": _flag_echo(args),
        "manifest_sha256": manifest_hash(args.data),
        "seed": args.seed,
        "timestamp": _timestamp(),
        "rows": rows,
    }
    write_json_report(os.path.join(args.out, "sweep.json"), payload)
    print("\n".join(text_lines))
    return 0


def cmd_inspect_attention(args) -> int:
    if not os.path.exists(args.model_path):
        raise ConfigError(f"checkpoint not found: {args.model_path}")
    params = load_checkpoint(args.model_path)
    if params.config.kind != "amh":
        raise ConfigError("inspect-attention requires an amh checkpoint")
    meta = CorpusMeta(
        audio_dim=params.config.audio_dim,
        video_dim=params.config.video_dim,
        vocab_size=params.config.vocab_size,
        labels=params.config.labels,
    )
    corpus = load_corpus(args.data, meta)
    matches = [s for s in corpus if s.id == args.sample]
    if not matches:
        raise ConfigError(f"sample {args.sample!r} not in manifest")
    sample = matches[0]
    with ad.no_grad():
        _, trace = forward_logits(sample, params)
    payload = trace_to_jsonable(sample.id, trace)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote trace -> {args.out}")
    else:
        print(text, end="")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "sweep": cmd_sweep,
    "inspect-attention": cmd_inspect_attention,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, TrainingDivergedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
