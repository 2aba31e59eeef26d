"""Command-line entry point.

Subcommands cover the whole workflow: generate-corpus, build-vocab,
pretrain, finetune, evaluate, analyze.  Every command reads hyperparameters
from --config (plus --set overrides), writes artifacts into --out, and logs
line-delimited JSON to stderr.  Exit codes: 0 success, 2 invalid
configuration, 3 checkpoint/vocabulary mismatch.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .analysis import align_uniform_report, export_embeddings, sparsity_report
from .checkpoint import load_checkpoint, read_checkpoint_meta, save_checkpoint
from .config import ConfigError, RunConfig
from .contrastive import pretrain
from .encoders import UbmConfig, UbmParams
from .metrics import evaluate_nip, evaluate_pip, evaluate_rlp
from .sessions import TokenLimits, Vocabulary, build_vocab, read_sessions_jsonl, write_sessions_jsonl
from .synth import (
    derive_task_datasets,
    generate_corpus,
    write_nip_pool,
    write_task_dataset,
)
from .tasks import CandidatePool, FinetuneResult, finetune, make_head, predict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISMATCH = 3

SPLITS = ("train", "valid", "test")


def log_event(**fields) -> None:
    print(json.dumps(fields), file=sys.stderr)


class MismatchError(RuntimeError):
    pass


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _corpus_paths(out: Path) -> dict[str, Path]:
    return {split: out / f"{split}.jsonl" for split in SPLITS}


def _load_corpora(out: Path, limits: TokenLimits) -> dict[str, list]:
    paths = _corpus_paths(out)
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"corpus files missing (run generate-corpus first): {missing}")
    return {split: list(read_sessions_jsonl(path, limits)) for split, path in paths.items()}


def _load_vocab(out: Path) -> Vocabulary:
    path = out / "vocab.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path} missing (run build-vocab first)")
    return Vocabulary.load(path)


def _check_vocab_hash(meta: dict, vocab: Vocabulary, source: str) -> None:
    if meta.get("vocab_hash") != vocab.content_hash():
        raise MismatchError(
            f"{source}: checkpoint was trained with a different vocabulary "
            f"(hash {meta.get('vocab_hash')!r} != {vocab.content_hash()!r})"
        )


def _save_model_checkpoint(path, kind: str, cfg: RunConfig, vocab, params, extra=None, arrays=None):
    meta = {
        "kind": kind,
        "config": cfg.to_dict(),
        "model_config": params.config.to_dict(),
        "vocab_hash": vocab.content_hash(),
        "seed": cfg.seed,
        "created_at": _now(),
    }
    meta.update(extra or {})
    all_arrays = dict(params.arrays())
    all_arrays.update(arrays or {})
    save_checkpoint(path, meta, all_arrays)
    log_event(event="checkpoint", path=str(path), kind=kind)


def _load_model_checkpoint(path, vocab: Vocabulary):
    meta, arrays = load_checkpoint(path)
    _check_vocab_hash(meta, vocab, str(path))
    model_cfg = UbmConfig.from_dict(meta["model_config"])
    params = UbmParams.from_arrays(model_cfg, arrays)
    return meta, params, arrays


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_corpus(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    counts = {
        "train": cfg.get("synth", "num_sessions"),
        "valid": cfg.get("synth", "num_valid_sessions"),
        "test": cfg.get("synth", "num_test_sessions"),
    }
    start = 0
    for split, path in _corpus_paths(out).items():
        synth_cfg = cfg.synth_config(num_sessions=counts[split])
        n = write_sessions_jsonl(path, generate_corpus(synth_cfg, start_index=start))
        log_event(event="corpus", split=split, sessions=n, path=str(path))
        start += counts[split]
    return EXIT_OK


def cmd_build_vocab(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    limits = cfg.limits()
    train_path = Path(args.corpus) if args.corpus else _corpus_paths(out)["train"]
    vocab = build_vocab(read_sessions_jsonl(train_path, limits), min_freq=cfg.get("vocab", "min_freq"))
    vocab.save(out / "vocab.json")
    log_event(event="vocab", size=vocab.size, reserved=vocab.num_reserved, hash=vocab.content_hash())
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    limits = cfg.limits()
    vocab = _load_vocab(out)
    corpora = _load_corpora(out, limits)
    pre_cfg = cfg.pretrain_config()

    if args.start:
        _, params, _ = _load_model_checkpoint(Path(args.start), vocab)
    else:
        params = UbmParams.init(cfg.model_config(vocab.size), seed=cfg.seed)

    stages = {"1": (1,), "2": (2,), "all": (1, 2)}[args.stage]
    for stage in stages:
        pretrain(
            corpora["train"], vocab, limits, params, pre_cfg,
            stages=(stage,), out_dir=out, log_fn=log_event, resume=not args.fresh,
        )
        _save_model_checkpoint(
            out / f"stage{stage}.ckpt", f"pretrain_stage{stage}", cfg, vocab, params,
            extra={"stage": stage},
        )
    return EXIT_OK


def _task_data(cfg: RunConfig, out: Path, task: str, limits: TokenLimits):
    corpora = _load_corpora(out, limits)
    data = derive_task_datasets(
        corpora, task, seed=cfg.seed, nip_min_count=cfg.get("finetune", "nip_min_count")
    )
    for split, ds in data.splits.items():
        write_task_dataset(out / f"{task}_{split}.jsonl", ds)
    if data.pool is not None:
        write_nip_pool(out / "nip_pool.jsonl", data.pool, data.train_label_counts)
    return data


def cmd_finetune(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    limits = cfg.limits()
    vocab = _load_vocab(out)
    data = _task_data(cfg, out, args.task, limits)

    if args.from_scratch:
        params = UbmParams.init(cfg.model_config(vocab.size), seed=cfg.seed)
        origin = "random-init"
    else:
        start = Path(args.start) if args.start else out / "stage2.ckpt"
        _, params, _ = _load_model_checkpoint(start, vocab)
        origin = str(start)
    ft_cfg = cfg.finetune_config(args.task)
    result = finetune(
        args.task, data.splits, params, vocab, limits, ft_cfg,
        nip_pool=data.pool, log_fn=log_event,
    )
    head_arrays = {n: p.data for n, p in result.head.params.items()} if result.head else {}
    _save_model_checkpoint(
        out / f"task_{args.task}.ckpt", f"finetune_{args.task}", cfg, vocab, result.params,
        extra={
            "task": args.task,
            "best_epoch": result.best_epoch,
            "valid_losses": result.valid_losses,
            "started_from": origin,
        },
        arrays=head_arrays,
    )
    return EXIT_OK


def _evaluate_task(task, ds, params, head, pool, vocab, limits, threshold):
    labels = [ex.label for ex in ds.examples]
    if task == "pip":
        scores = predict("pip", ds, params, vocab, limits, head=head)
        return evaluate_pip(scores, np.asarray(labels, dtype=np.int64), threshold)
    if task == "rlp":
        preds = predict("rlp", ds, params, vocab, limits, head=head)
        return evaluate_rlp(preds, np.asarray(labels, dtype=np.float64))
    in_pool = [l in pool.id_to_row for l in labels]
    excluded = len(labels) - sum(in_pool)
    kept = [i for i, ok in enumerate(in_pool) if ok]
    ds_kept = type(ds)(ds.task, ds.split, [ds.examples[i] for i in kept])
    scores = predict("nip", ds_kept, params, vocab, limits, pool=pool)
    rows = pool.rows_for([labels[i] for i in kept])
    return evaluate_nip(scores, rows, ks=(10, 20), excluded=excluded)


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    limits = cfg.limits()
    vocab = _load_vocab(out)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / f"task_{args.task}.ckpt"
    meta, params, arrays = _load_model_checkpoint(ckpt_path, vocab)

    head = make_head(args.task, params.config.hidden_size, meta.get("seed", cfg.seed))
    if head:
        for name, p in head.params.items():
            p.data = np.array(arrays[name], dtype=p.data.dtype)
    data = _task_data(cfg, out, args.task, limits)
    pool = CandidatePool.build(data.pool, params, vocab, limits) if args.task == "nip" else None

    metrics = _evaluate_task(
        args.task, data.splits[args.split], params, head, pool, vocab, limits,
        cfg.get("finetune", "threshold"),
    )
    report = {
        "task": args.task,
        "split": args.split,
        "metrics": metrics,
        "checkpoint": ckpt_path.name,
        "seed": cfg.seed,
    }
    path = out / f"metrics_{args.task}_{args.split}.json"
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    limits = cfg.limits()
    vocab = _load_vocab(out)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "stage2.ckpt"
    _, params, _ = _load_model_checkpoint(ckpt_path, vocab)
    corpora = _load_corpora(out, limits)
    ran_any = False

    if args.align_uniform:
        n = cfg.get("analyze", "align_uniform_samples")
        report = align_uniform_report(
            params, corpora["test"][:n], vocab, limits,
            augmentation=cfg.get("analyze", "align_uniform_augmentation"),
            seed=cfg.seed, policy=cfg.mask_policy(),
        )
        doc = {"checkpoint": ckpt_path.name, "seed": cfg.seed, **report.to_dict()}
        (out / "align_uniform.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print(json.dumps(doc, sort_keys=True))
        ran_any = True

    if args.sparsity:
        data = _task_data(cfg, out, "nip", limits)
        pool = CandidatePool.build(data.pool, params, vocab, limits)
        groups = sparsity_report(
            params, data.splits["test"], pool, data.train_label_counts,
            list(cfg.get("analyze", "group_edges")), vocab, limits,
        )
        doc = {"checkpoint": ckpt_path.name, "groups": [g.to_dict() for g in groups]}
        (out / "sparsity.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print(json.dumps(doc, sort_keys=True))
        ran_any = True

    if args.export_embeddings:
        path = out / "embeddings.csv"
        n = export_embeddings(params, corpora["test"], vocab, limits, path)
        log_event(event="export", rows=n, path=str(path))
        ran_any = True

    if not ran_any:
        print("analyze: choose at least one of --align-uniform/--sparsity/--export-embeddings",
              file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ubm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file (INI sections)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value")
        p.add_argument("--out", required=True, help="run directory for artifacts")

    p = sub.add_parser("generate-corpus", help="write synthetic train/valid/test session JSONL")
    common(p)
    p.set_defaults(fn=cmd_generate_corpus)

    p = sub.add_parser("build-vocab", help="build the word vocabulary from the training corpus")
    common(p)
    p.add_argument("--corpus", help="override the training corpus path")
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="contrastive pre-training")
    common(p)
    p.add_argument("--stage", choices=["1", "2", "all"], default="all")
    p.add_argument("--start", help="checkpoint to continue from (stage 2 ablations)")
    p.add_argument("--fresh", action="store_true", help="ignore resumable state files")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a downstream task head")
    common(p)
    p.add_argument("--task", choices=["pip", "rlp", "nip"], required=True)
    p.add_argument("--start", help="starting checkpoint (default <out>/stage2.ckpt)")
    p.add_argument("--from-scratch", action="store_true",
                   help="random initialization instead of a pre-trained checkpoint")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("evaluate", help="compute task metrics on a split")
    common(p)
    p.add_argument("--task", choices=["pip", "rlp", "nip"], required=True)
    p.add_argument("--split", choices=list(SPLITS), default="test")
    p.add_argument("--checkpoint", help="default <out>/task_<task>.ckpt")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("analyze", help="diagnostics over a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="default <out>/stage2.ckpt")
    p.add_argument("--align-uniform", action="store_true")
    p.add_argument("--sparsity", action="store_true")
    p.add_argument("--export-embeddings", action="store_true")
    p.set_defaults(fn=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, overrides=args.set)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(out / ".ubm.lock")
    try:
        with lock.acquire(timeout=1):
            return args.fn(args, cfg)
    except Timeout:
        print(f"error: output directory {out} is locked by another run", file=sys.stderr)
        return EXIT_CONFIG
    except MismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
