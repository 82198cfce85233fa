"""Command-line surface: train / eval / ablate / gradcam.

Exit codes: 0 success, 2 usage, 3 data problems, 4 checkpoint integrity,
5 numeric failure (non-finite loss). Run directories hold
config.snapshot, epochs.log (one JSON record per epoch), metrics.final,
and model.ckpt; the ablation adds ablation.table.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .caption import Vocabulary, preprocess_text
from .checkpoint import (
    load_checkpoint,
    params_to_checkpoint,
    restore_params,
    save_checkpoint,
)
from .config import ABLATION_TABLE_ORDER, AblationMode, ModelConfig
from .data import build_samples, load_image, load_manifest
from .errors import (
    ConfigError,
    ContractError,
    DecodeError,
    EmptyDatasetError,
    IntegrityError,
    NumericError,
    ParseError,
    StmaError,
)
from .gradcam import gradcam_heatmap, write_heatmap_files
from .metrics import MetricsReport
from .model import init_params
from .training import Hyperparams, PROFILES, evaluate_split, split_dataset, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTEGRITY = 4
EXIT_NUMERIC = 5

# Architectural defaults per profile; flag overrides win. The toy profile
# pools text by PAD-excluded mean: at toy scale a from-scratch CLS summary
# is uninformative whenever the caption stack is ablated away.
MODEL_PROFILES = {
    "toy": dict(embed_dim=32, num_heads=2, num_layers=2, mlp_ratio=4,
                image_hw=(64, 64), max_len=8, text_pool_mode="mean"),
    "mmhs150k": dict(embed_dim=64, num_heads=4, num_layers=4, mlp_ratio=4,
                     image_hw=(256, 256), max_len=32),
    "multioff": dict(embed_dim=64, num_heads=4, num_layers=4, mlp_ratio=4,
                     image_hw=(256, 256), max_len=32),
    "hmc": dict(embed_dim=64, num_heads=4, num_layers=4, mlp_ratio=4,
                image_hw=(256, 256), max_len=32),
}


class UsageError(StmaError):
    pass


@dataclass
class RunRecord:
    run_id: str
    run_dir: Path
    checkpoint_path: Path
    final_metrics: MetricsReport


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stma", description="multimodal hate-content classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_train_flags(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--profile", default="toy",
                       choices=sorted(PROFILES))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--embed-dim", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--max-len", type=int)
        p.add_argument("--image-size", type=int,
                       help="square image extent override")
        p.add_argument("--text-pool", choices=["cls", "mean"])
        p.add_argument("--augment", action="store_true", default=None)
        p.add_argument("--no-augment", dest="augment", action="store_false")

    t = sub.add_parser("train", help="train one model")
    add_common_train_flags(t)
    t.add_argument("--out-dir", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", required=True, choices=["train", "val", "test"])
    e.add_argument("--out", help="metrics JSON destination")

    a = sub.add_parser("ablate", help="train and score all seven variants")
    add_common_train_flags(a)
    a.add_argument("--out-dir", required=True)

    g = sub.add_parser("gradcam", help="export a heatmap for one input")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--image", required=True)
    g.add_argument("--caption", required=True)
    g.add_argument("--out", required=True, help="PGM heatmap path")
    return parser


def _resolve_hyperparams(args) -> Hyperparams:
    base = PROFILES[args.profile]
    hp = Hyperparams(
        epochs=args.epochs if args.epochs is not None else base.epochs,
        batch_size=(args.batch_size if args.batch_size is not None
                    else base.batch_size),
        learning_rate=args.lr if args.lr is not None else base.learning_rate,
        optimizer=base.optimizer,
        seed=args.seed,
        augment=args.augment if args.augment is not None else base.augment,
    )
    return hp


def _resolve_config(args, vocab_size: int) -> ModelConfig:
    spec = dict(MODEL_PROFILES[args.profile])
    if args.embed_dim is not None:
        spec["embed_dim"] = args.embed_dim
    if args.layers is not None:
        spec["num_layers"] = args.layers
    if args.heads is not None:
        spec["num_heads"] = args.heads
    if args.max_len is not None:
        spec["max_len"] = args.max_len
    if args.image_size is not None:
        spec["image_hw"] = (args.image_size, args.image_size)
    if args.text_pool is not None:
        spec["text_pool_mode"] = args.text_pool
    return ModelConfig(vocab_size=vocab_size, **spec)


def _prepare_data(args):
    """Manifest -> splits, vocabulary (train captions only), channel mean
    (train images only), encoded samples per split."""
    from .data import compute_channel_mean

    entries = load_manifest(args.manifest)
    train_e, val_e, test_e = split_dataset(entries, seed=args.seed)
    token_lists = [preprocess_text(e.caption) for e in train_e]
    max_len = args.max_len if args.max_len is not None \
        else MODEL_PROFILES[args.profile]["max_len"]
    vocab = Vocabulary.build(token_lists, max_len=max_len)
    cfg = _resolve_config(args, vocab.size)
    mean = compute_channel_mean(train_e, cfg.image_hw)
    splits = tuple(build_samples(part, vocab, cfg, mean)
                   for part in (train_e, val_e, test_e))
    return cfg, vocab, mean, splits


def _write_run(run_dir: Path, cfg, hp, args, history, report, ckpt) -> RunRecord:
    run_dir.mkdir(parents=True, exist_ok=True)
    run_id = f"{args.profile}-seed{args.seed}"
    snapshot = {
        "run_id": run_id,
        "profile": args.profile,
        "seed": args.seed,
        "manifest": str(args.manifest),
        "hyperparams": {
            "epochs": hp.epochs, "batch_size": hp.batch_size,
            "learning_rate": hp.learning_rate, "optimizer": hp.optimizer,
            "seed": hp.seed, "augment": hp.augment,
        },
        "model": cfg.to_dict(),
    }
    (run_dir / "config.snapshot").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    (run_dir / "epochs.log").write_text(
        "".join(json.dumps(h.to_dict(), sort_keys=True) + "\n"
                for h in history), encoding="utf-8")
    (run_dir / "metrics.final").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    ckpt_path = run_dir / "model.ckpt"
    save_checkpoint(ckpt, ckpt_path)
    return RunRecord(run_id=run_id, run_dir=run_dir,
                     checkpoint_path=ckpt_path, final_metrics=report)


def _train_one(cfg, vocab, mean, splits, hp, args, run_dir: Path) -> RunRecord:
    train_split, val_split, test_split = splits
    params = init_params(cfg, seed=args.seed)
    params, history = train(cfg, params, train_split, val_split, hp)
    report = evaluate_split(test_split, cfg, params)
    best = max(history, key=lambda h: h.val_accuracy) if history else None
    meta = {
        "seed": args.seed,
        "epoch": best.epoch if best else -1,
        "val_accuracy": best.val_accuracy if best else 0.0,
    }
    ckpt = params_to_checkpoint(cfg, vocab, params, meta, channel_mean=mean)
    return _write_run(run_dir, cfg, hp, args, history, report, ckpt)


def cmd_train(args) -> int:
    hp = _resolve_hyperparams(args)
    cfg, vocab, mean, splits = _prepare_data(args)
    record = _train_one(cfg, vocab, mean, splits, hp, args, Path(args.out_dir))
    print(f"run {record.run_id}: test {record.final_metrics.format_line()}")
    print(f"checkpoint: {record.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    params = restore_params(ckpt)
    cfg = ckpt.config
    entries = load_manifest(args.manifest)
    seed = int(ckpt.meta.get("seed", 0))
    split_names = dict(zip(("train", "val", "test"),
                           split_dataset(entries, seed=seed)))
    part = split_names[args.split]
    if not part:
        raise EmptyDatasetError(f"split {args.split} is empty")
    samples = build_samples(part, ckpt.vocab, cfg, ckpt.channel_mean)
    report = evaluate_split(samples, cfg, params)
    print(f"{args.split}: {report.format_line()}")
    out = Path(args.out) if args.out else \
        Path(args.checkpoint).parent / f"metrics.eval.{args.split}.json"
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True)
                   + "\n", encoding="utf-8")
    return EXIT_OK


_ABLATION_FOOTER = (
    "# note: the no-vision-encoder variant feeds patch embeddings straight\n"
    "# to fusion (no pretrained CNN stands in for the removed stack).\n")


def cmd_ablate(args) -> int:
    hp = _resolve_hyperparams(args)
    cfg_base, vocab, mean, splits = _prepare_data(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[str, float]] = []
    table_path = out_dir / "ablation.table"

    def write_table():
        lines = [f"{'mode':<24}  test_accuracy"]
        lines += [f"{name:<24}  {acc:.4f}" for name, acc in rows]
        table_path.write_text("\n".join(lines) + "\n" + _ABLATION_FOOTER,
                              encoding="utf-8")

    try:
        for mode in ABLATION_TABLE_ORDER:
            cfg = cfg_base.for_mode(mode)
            record = _train_one(cfg, vocab, mean, splits, hp, args,
                                out_dir / "runs" / mode.value)
            rows.append((mode.value, record.final_metrics.accuracy))
            print(f"{mode.value:<24}  acc={record.final_metrics.accuracy:.4f}")
    finally:
        write_table()  # partial results preserved if a mode fails
    print(f"table: {table_path}")
    return EXIT_OK


def cmd_gradcam(args) -> int:
    from types import SimpleNamespace

    from .caption import encode_ids

    ckpt = load_checkpoint(args.checkpoint)
    params = restore_params(ckpt)
    cfg = ckpt.config
    image = load_image(args.image, cfg.image_hw, ckpt.channel_mean)
    ids = encode_ids(preprocess_text(args.caption), ckpt.vocab)
    sample = SimpleNamespace(image=image, token_ids=ids, label=None, id="cli")
    result = gradcam_heatmap(sample, cfg, params)
    raw = load_image(args.image, cfg.image_hw)  # unnormalized for display
    heat_path, overlay_path = write_heatmap_files(result, raw.data, args.out)
    label = "hate" if result.predicted == 1 else "no-hate"
    print(f"predicted {label} (p={result.probs[result.predicted]:.4f})")
    print(f"heatmap: {heat_path}")
    print(f"overlay: {overlay_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "gradcam":
            return cmd_gradcam(args)
        raise UsageError(f"unknown command {args.command}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ContractError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, EmptyDatasetError, DecodeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _validate(args) -> None:
    if getattr(args, "epochs", None) is not None and args.epochs < 1:
        raise UsageError("--epochs must be at least 1")
    if getattr(args, "batch_size", None) is not None and args.batch_size < 1:
        raise UsageError("--batch-size must be at least 1")
    if getattr(args, "lr", None) is not None and args.lr < 0:
        raise UsageError("--lr must be nonnegative")


if __name__ == "__main__":
    sys.exit(main())
