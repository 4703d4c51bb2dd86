"""Command-line entry point.

Subcommands: preprocess, train, eval, ablate, embed, plot, selftest. Every
run writes the fully merged config into its output directory; ``eval``,
``embed``, and ``plot`` re-read configuration from the checkpoint or file
they are given rather than trusting flags. Usage errors exit with status 2
(argparse); operational failures exit with status 1 and a one-line reason.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import data_root, load_config, put, write_run_config


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file (key = value lines)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")


def _load_cfg(args) -> dict:
    cfg = load_config(getattr(args, "config", None), args.set,
                      dataset=getattr(args, "dataset", None))
    if getattr(args, "task", None):
        put(cfg, "train.task", args.task)
    if getattr(args, "query_word", None) is not None:
        put(cfg, "labels.query_word", args.query_word)
    return cfg


def _resolve(cfg: dict, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else data_root(cfg) / p


def _load_splits(cfg: dict, data_dir: Path, splits=("train", "val", "test")) -> dict:
    from .ingest.store import load_preprocessed

    index = data_dir / "index.json"
    if not index.is_file():
        raise FileNotFoundError(f"preprocessed index not found: {index}")
    return {split: load_preprocessed(data_dir, split) for split in splits}


def _splits_from_manifest(cfg: dict, manifest_path: Path,
                          splits=("train", "val", "test")) -> dict:
    from .ingest.manifest import load_manifest
    from .ingest.store import preprocess_in_memory

    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    return {split: preprocess_in_memory(manifest, base, cfg["preprocess"], split)
            for split in splits}


def _get_data(cfg: dict, args, splits=("train", "val", "test")) -> dict:
    if getattr(args, "data", None):
        return _load_splits(cfg, _resolve(cfg, args.data), splits)
    if getattr(args, "manifest", None):
        return _splits_from_manifest(cfg, _resolve(cfg, args.manifest), splits)
    raise ValueError("one of --data or --manifest is required")


def cmd_preprocess(args) -> int:
    from .ingest.manifest import load_manifest
    from .ingest.store import preprocess_manifest
    from .ingest.synth import generate_corpus

    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    if args.synth:
        counts = {"train": args.synth_train, "val": args.synth_val, "test": args.synth_test}
        manifest_path = generate_corpus(out_dir / "raw", counts=counts, seed=cfg["seed"],
                                        image_size=cfg["preprocess"]["image_size"])
        print(f"synthetic corpus: {manifest_path}")
    elif args.manifest:
        manifest_path = _resolve(cfg, args.manifest)
    else:
        raise ValueError("one of --manifest or --synth is required")
    if not Path(manifest_path).is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)
    index = preprocess_manifest(manifest, Path(manifest_path).parent,
                                out_dir / "data", cfg["preprocess"])
    write_run_config(out_dir, cfg)
    print(f"preprocessed {sum(manifest.split_counts().values())} samples -> {index}")
    return 0


def cmd_train(args) -> int:
    from .evalkit import EvalReport, reference_delta_lines
    from .model import build_model
    from .train import Trainer, evaluate_model

    cfg = _load_cfg(args)
    data = _get_data(cfg, args)
    if not data["train"]:
        raise ValueError("empty split: train")
    out_dir = Path(args.out)
    write_run_config(out_dir, cfg)
    model = build_model(cfg)
    trainer = Trainer(model, cfg, out_dir=out_dir)
    summary = trainer.fit(data["train"], data.get("val") or None)
    print(f"trained {summary['steps']} steps over {summary['epochs']} epochs; "
          f"final loss {summary['final_loss']:.4f}")
    if cfg["train"]["selection"] == "best_val" and (out_dir / "best.pt").exists():
        trainer.load_checkpoint(out_dir / "best.pt")
    if data.get("test"):
        metrics = evaluate_model(model, data["test"], cfg["train"]["batch_size"])
        from .config import config_hash
        report = EvalReport(task=model.task, dataset=cfg["train"]["dataset"],
                            config_hash=config_hash(cfg), metrics=metrics,
                            n_excluded=metrics["n_excluded"])
        print(report.render(), end="")
        for line in reference_delta_lines(cfg["train"]["dataset"], model.task, metrics):
            print(line)
    return 0


def cmd_eval(args) -> int:
    from .config import config_hash
    from .evalkit import EvalReport, per_class_breakdown, reference_delta_lines
    from .labels import resolve_query_word
    from .train import collect_predictions, evaluate_model, load_checkpoint_model

    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model, payload = load_checkpoint_model(ckpt)
    cfg = _load_cfg(args)
    if args.query_word is not None:
        if not model.use_le:
            raise ValueError("--query-word requires a label-encoder model")
        model.label_encoder.set_query_word(resolve_query_word(args.query_word, model.task))
    data = _get_data(cfg, args, splits=(args.split,))
    samples = data[args.split]
    if not samples:
        raise ValueError(f"empty split: {args.split}")
    metrics = evaluate_model(model, samples, cfg["train"]["batch_size"])
    pred, target, _ = collect_predictions(model, samples, cfg["train"]["batch_size"])
    report = EvalReport(
        task=model.task, dataset=cfg["train"]["dataset"],
        config_hash=config_hash(cfg), metrics=metrics,
        per_class=per_class_breakdown(pred, target, model.label_texts),
        n_excluded=metrics["n_excluded"])
    print(report.render(), end="")
    for line in reference_delta_lines(cfg["train"]["dataset"], model.task, metrics):
        print(line)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.render(), encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    from .evalkit import run_ablation

    cfg = _load_cfg(args)
    data = None
    if args.data or args.manifest:
        data = _get_data(cfg, args)
    result = run_ablation(args.grid, cfg, Path(args.out), data=data, steps=args.steps)
    print(result["table"], end="")
    gaps = [r["cell"] for r in result["rows"] if r["error"]]
    if gaps:
        print(f"gaps: {', '.join(gaps)}")
    return 0


def cmd_embed(args) -> int:
    from .evalkit import export_embeddings
    from .train import load_checkpoint_model

    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint_model(ckpt)
    cfg = _load_cfg(args)
    data = _get_data(cfg, args, splits=(args.split,))
    samples = data[args.split]
    if not samples:
        raise ValueError(f"empty split: {args.split}")
    paths = export_embeddings(model, samples, args.stage, Path(args.out))
    for path in paths:
        print(path)
    return 0


def cmd_plot(args) -> int:
    from .evalkit import plot_embeddings

    src = Path(args.input)
    if not src.is_file():
        raise FileNotFoundError(f"embedding file not found: {src}")
    out = plot_embeddings(src, Path(args.out), perplexity=args.perplexity, seed=args.seed)
    print(out)
    return 0


def cmd_selftest(args) -> int:
    from .selfcheck import run_selftest

    return 1 if run_selftest(verbose=True) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emofuse",
        description="Multimodal emotion and sentiment classifier "
                    "(encoders + cross-modal decoder + label-similarity head)")
    parser.add_argument("--version", action="version", version=f"emofuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="turn a raw manifest into model-ready containers")
    p.add_argument("--manifest", help="manifest JSONL path (relative to data root)")
    p.add_argument("--synth", action="store_true",
                   help="generate a synthetic corpus first, then preprocess it")
    p.add_argument("--synth-train", type=int, default=32)
    p.add_argument("--synth-val", type=int, default=8)
    p.add_argument("--synth-test", type=int, default=8)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="fine-tune on a preprocessed dataset")
    p.add_argument("--task", choices=("emotion", "sentiment"))
    p.add_argument("--dataset", help="dataset tag selecting a hyperparameter preset")
    p.add_argument("--data", help="preprocessed data directory")
    p.add_argument("--manifest", help="raw manifest (preprocessed in memory)")
    p.add_argument("--query-word", help="query word; '(no word)' for contexts only")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--data", help="preprocessed data directory")
    p.add_argument("--manifest", help="raw manifest (preprocessed in memory)")
    p.add_argument("--query-word", help="swap the query word at evaluation time")
    p.add_argument("--out", help="also write the report to this file")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run a modality-order or component grid")
    p.add_argument("--grid", required=True, choices=("orders", "components"))
    p.add_argument("--data", help="preprocessed data directory")
    p.add_argument("--manifest", help="raw manifest (preprocessed in memory)")
    p.add_argument("--steps", type=int, default=0,
                   help="training steps per cell (0 = forward-only evaluation)")
    p.add_argument("--task", choices=("emotion", "sentiment"))
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("embed", help="export per-sample embeddings as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stage", required=True, choices=("modality", "fused"))
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--data", help="preprocessed data directory")
    p.add_argument("--manifest", help="raw manifest (preprocessed in memory)")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("plot", help="project an embedding file to a 2-D scatter")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("selftest", help="run the built-in oracle and invariant checks")
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
