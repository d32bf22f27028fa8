"""Command-line entry point: ``ontotrain <subcommand> ...``.

Exit codes: 0 on success, 1 on runtime errors, 2 on usage or path errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .datasets import (
    SplitSpec,
    load_challenge_sets,
    load_pretrain_corpus,
    load_tox21_csv,
    split_indices,
    write_split_manifest,
)
from .labeled import LabeledSet, read_labeled_set, write_labeled_set
from .metrics import evaluate, normalized_entropy
from .model import ModelConfig, attention_maps, forward, load_checkpoint
from .ontology import MOLECULAR_ENTITY, build_ontology_dataset, member_counts, parse_obo, select_label_classes
from .plotting import plot_attention_layer, plot_curves
from .smiles_tok import DEFAULT_MAX_LEN, DEFAULT_MAX_SIZE, Vocabulary, build_vocabulary, encode, tokenize
from .train import STAGES, read_epoch_log, run_stage, stage_defaults

log = logging.getLogger("ontotrain")

NEAR_UNIFORM = 0.99
DEFAULT_SPLITS = {
    "pretrain": (0.9, 0.05, 0.05),
    "ontology": (0.85, 0.075, 0.075),
    "toxicity": (0.85, 0.075, 0.075),
}


class UsageError(Exception):
    """Bad arguments or missing input paths (exit code 2)."""


def _existing(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _manifest_path(checkpoint) -> Path:
    p = Path(checkpoint)
    return p if p.suffix == ".json" else p.with_name(p.name + ".json")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("ONTOTRAIN_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"ONTOTRAIN_SEED must be an integer, got {env!r}") from None
    return 0


# -- build-vocab -------------------------------------------------------------


def cmd_build_vocab(corpus_path, out_path, max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    corpus = _existing(corpus_path, "corpus")
    vocab = build_vocabulary(load_pretrain_corpus(corpus), max_size)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out_path)
    log.info("wrote %d tokens to %s", len(vocab), out_path)
    return vocab


# -- make-ontology-set -------------------------------------------------------


def cmd_make_ontology_set(obo_path, out_path, vocab_path=None, min_members: int = 100,
                          root_id: str = MOLECULAR_ENTITY, max_len: int = DEFAULT_MAX_LEN) -> dict:
    obo = _existing(obo_path, "ontology file")
    with open(obo, encoding="utf-8") as fh:
        graph = parse_obo(fh, root=root_id)
    if graph.root is None:
        raise UsageError(f"root class {root_id} not in {obo}")
    space = select_label_classes(graph, min_members, root_id)
    data = build_ontology_dataset(graph, space, max_len)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_labeled_set(data, out_path)
    counts = member_counts(graph)
    stats = {
        "classes_loaded": len(graph),
        "label_classes": len(space),
        "rows": len(data),
        "skipped": len(data.skipped),
        "dangling_parents": len(graph.dangling),
        "min_members": min_members,
        "root": root_id,
        "label_members": {cid: counts[cid] for cid in space},
    }
    if vocab_path is not None:
        vocab = Vocabulary.load(_existing(vocab_path, "vocabulary"))
        tokens = [t for s in data.sequences for t in s.tokens]
        stats["unknown_token_rate"] = (sum(t not in vocab for t in tokens) / len(tokens)) if tokens else 0.0
    _write_json(Path(str(out_path) + ".stats.json"), stats)
    return stats


# -- train ---------------------------------------------------------------------


def _resolve_configs(args, stage: str, vocab: Vocabulary):
    overrides, train_cfg = stage_defaults(stage)
    model_cfg = ModelConfig(vocab_size=len(vocab)).replace(**overrides)
    split = DEFAULT_SPLITS[stage]
    conf = {}
    if args.config:
        with open(_existing(args.config, "config file"), encoding="utf-8") as fh:
            conf = json.load(fh)
        model_cfg = model_cfg.replace(**conf.get("model_config", {}))
        train_cfg = train_cfg.replace(**conf.get("train_config", {}))
        split = tuple(conf.get("split", {}).get("fractions", split))
    if args.init:
        # Geometry must follow the checkpoint; dropout stays a per-stage choice.
        init_cfg = load_checkpoint(args.init).config
        model_cfg = init_cfg.replace(embed_dropout=model_cfg.embed_dropout, hidden_dropout=model_cfg.hidden_dropout)
    model_flags = {
        "hidden": args.hidden, "heads": args.heads, "layers": args.layers, "max_len": args.max_len,
        "embed_dropout": args.embed_dropout, "hidden_dropout": args.hidden_dropout,
    }
    model_cfg = model_cfg.replace(**{k: v for k, v in model_flags.items() if v is not None})
    if args.no_shared_encoder:
        model_cfg = model_cfg.replace(shared_encoder=False)
    train_flags = {
        "epochs": args.epochs, "learning_rate": args.lr, "batch_size": args.batch_size, "l2": args.l2,
        "mask_rate": args.mask_rate, "disc_weight": args.disc_weight,
    }
    train_cfg = train_cfg.replace(**{k: v for k, v in train_flags.items() if v is not None})
    # Precedence: --seed, then a seed recorded in --config, then ONTOTRAIN_SEED.
    if args.seed is not None or not (args.config and "seed" in conf.get("train_config", {})):
        train_cfg = train_cfg.replace(seed=resolve_seed(args.seed))
    seed = train_cfg.seed
    if args.split:
        split = tuple(args.split)
    return model_cfg, train_cfg, SplitSpec(split, args.split_seed if args.split_seed is not None else seed)


def _load_stage_data(args, stage: str, vocab: Vocabulary, max_len: int, spec: SplitSpec, out: Path):
    inputs = {}
    test = None
    if stage == "pretrain":
        if not args.corpus:
            raise UsageError("train pretrain needs --corpus")
        inputs["corpus"] = str(_existing(args.corpus, "corpus"))
        seqs = []
        for s in load_pretrain_corpus(args.corpus):
            try:
                seq = tokenize(s)
            except ValueError:
                continue
            if len(seq) <= max_len - 1:
                seqs.append(seq)
        tr, va, te = split_indices(len(seqs), spec)
        write_split_manifest(out / "splits.tsv", {"train": tr, "validation": va, "test": te})
        return [seqs[i] for i in tr], [seqs[i] for i in va], None, inputs
    if args.challenge:
        paths = [Path(p) for p in args.challenge]
        for role, p in zip(("train", "validation", "test"), paths):
            if not p.is_file():
                raise UsageError(f"{role} file not found: {p}")
        inputs["challenge"] = [str(p) for p in paths]
        tr, va, test = load_challenge_sets(*paths, max_len=max_len)
        return tr, va, test, inputs
    if not args.data:
        raise UsageError(f"train {stage} needs --data (or --challenge for toxicity)")
    path = _existing(args.data, "data file")
    inputs["data"] = str(path)
    data = load_tox21_csv(path, max_len) if path.suffix.lower() == ".csv" else read_labeled_set(path)
    tr, va, te = split_indices(len(data), spec)
    write_split_manifest(out / "splits.tsv", {"train": tr, "validation": va, "test": te})
    return data.subset(tr), data.subset(va), data.subset(te), inputs


def write_report(report: dict, out_dir: Path, stem: str = "report") -> None:
    _write_json(out_dir / f"{stem}.json", report)
    with open(out_dir / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "f1", "roc_auc", "present", "positive"])
        for row in report["per_class"]:
            w.writerow([
                row["label"],
                "" if row["f1"] is None else f"{row['f1']:.6f}",
                "" if row["roc_auc"] is None else f"{row['roc_auc']:.6f}",
                row["present"],
                row["positive"],
            ])


def _fill_from_manifest(args) -> None:
    """Take data paths and the init checkpoint from a run manifest when not given as flags."""
    if not args.config:
        return
    with open(_existing(args.config, "config file"), encoding="utf-8") as fh:
        conf = json.load(fh)
    if conf.get("stage") not in (None, args.stage):
        raise UsageError(f"config was written by the {conf['stage']} stage, not {args.stage}")
    inputs = conf.get("inputs", {})
    if not (args.corpus or args.data or args.challenge):
        args.corpus = inputs.get("corpus")
        args.data = inputs.get("data")
        args.challenge = inputs.get("challenge")
    if args.init is None and conf.get("init_from") not in (None, "<in-memory model>"):
        args.init = conf["init_from"]


def cmd_train(args) -> None:
    stage = args.stage
    _fill_from_manifest(args)
    vocab = Vocabulary.load(_existing(args.vocab, "vocabulary"))
    if args.init:
        _existing(_manifest_path(args.init), "checkpoint")
    elif stage != "pretrain":
        log.warning("no --init checkpoint for the %s stage; training from a fresh initialization", stage)
    model_cfg, train_cfg, spec = _resolve_configs(args, stage, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, val, test, inputs = _load_stage_data(args, stage, vocab, model_cfg.max_len, spec, out)
    extra = {"inputs": {**inputs, "vocab": str(args.vocab)}, "split": {"fractions": list(spec.fractions), "seed": spec.seed}}
    result = run_stage(stage, train, val, vocab, model_cfg, train_cfg, init_from=args.init, out_dir=out, manifest_extra=extra)
    if isinstance(test, LabeledSet) and len(test):
        write_report(evaluate(result.best_model, test, vocab), out, "test_report")
    print(f"{stage}: {len(result.logs)} epochs, best validation micro-F1 {max(l.val_f1_micro for l in result.logs):.4f} "
          f"at epoch {result.best_epoch}; outputs in {out}")


# -- evaluate --------------------------------------------------------------------


def cmd_evaluate(checkpoint, set_path, vocab_path, out_dir) -> dict:
    model = load_checkpoint(_existing(_manifest_path(checkpoint), "checkpoint"))
    vocab = Vocabulary.load(_existing(vocab_path, "vocabulary"))
    path = _existing(set_path, "data file")
    data = load_tox21_csv(path, model.config.max_len) if path.suffix.lower() == ".csv" else read_labeled_set(path)
    report = evaluate(model, data, vocab)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    return report


# -- export-attention ------------------------------------------------------------


def cmd_export_attention(checkpoint, smiles: str, vocab_path, out_dir) -> dict:
    model = load_checkpoint(_existing(_manifest_path(checkpoint), "checkpoint"))
    vocab = Vocabulary.load(_existing(vocab_path, "vocabulary"))
    seq = tokenize(smiles)
    ids, mask = encode(seq, vocab, min(len(seq) + 1, model.config.max_len))
    _, attn = forward(model, [ids], [mask])
    maps = attention_maps(attn, np.array([mask]))[0]
    tokens = ["[CLS]", *seq.tokens]
    try:
        per_layer = normalized_entropy(maps).per_layer
    except ValueError:
        per_layer = [None] * model.config.layers
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layers = []
    for li in range(maps.values.shape[0]):
        near_uniform = per_layer[li] is not None and per_layer[li] > NEAR_UNIFORM
        svg = plot_attention_layer(maps.values[li], tokens, f"layer {li + 1}", out / f"attention_layer{li + 1}.svg")
        layers.append({
            "layer": li + 1,
            "mean_normalized_entropy": per_layer[li],
            "near_uniform": near_uniform,
            "svg": svg.name,
            "heads": [np.round(maps.values[li, h], 8).tolist() for h in range(maps.values.shape[1])],
        })
    doc = {
        "smiles": smiles,
        "tokens": tokens,
        "near_uniform_threshold": NEAR_UNIFORM,
        "near_uniform_layers": [layer["layer"] for layer in layers if layer["near_uniform"]],
        "layers": layers,
    }
    _write_json(out / "attention.json", doc)
    return doc


# -- plot-curves -------------------------------------------------------------------


def cmd_plot_curves(log_paths, out_dir, labels=None, threshold: float = 0.7) -> list[dict]:
    """Write one SVG per metric plus ``curves_summary.csv`` with the epoch each log first reaches ``threshold``."""
    if labels and len(labels) != len(log_paths):
        raise UsageError("--labels must match the number of logs")
    curves = {}
    for i, p in enumerate(log_paths):
        label = labels[i] if labels else Path(p).parent.name + "/" + Path(p).stem
        if label in curves:
            label = f"{label}#{i}"
        curves[label] = read_epoch_log(_existing(p, "epoch log"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for metric in ("val_f1_micro", "val_rocauc_macro", "loss"):
        plot_curves(curves, metric, out / f"{metric}.svg", threshold)
    summary = []
    for label, logs in curves.items():
        best = max(logs, key=lambda e: e.val_f1_micro)
        reach = next((e.epoch for e in logs if e.val_f1_micro >= threshold), None)
        summary.append({
            "label": label,
            "epochs": len(logs),
            "first_epoch_f1_at_threshold": reach,
            "best_f1": best.val_f1_micro,
            "best_epoch": best.epoch,
            "final_f1": logs[-1].val_f1_micro,
            "final_rocauc": logs[-1].val_rocauc_macro,
        })
    with open(out / "curves_summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        for row in summary:
            w.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in row.items()})
    return summary


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ontotrain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a token vocabulary from a SMILES corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=DEFAULT_MAX_SIZE)

    p = sub.add_parser("make-ontology-set", help="build the ontology pre-training set from an OBO file")
    p.add_argument("--obo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab")
    p.add_argument("--min-members", type=int, default=100)
    p.add_argument("--root", default=MOLECULAR_ENTITY)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="checkpoint whose encoder body initializes this stage")
    p.add_argument("--config", help="JSON with model_config/train_config/split (a run manifest works)")
    p.add_argument("--corpus", help="SMILES corpus (pretrain)")
    p.add_argument("--data", help="labeled-set file or Tox21 CSV (ontology, toxicity)")
    p.add_argument("--challenge", nargs=3, metavar=("TRAIN", "VALIDATION", "TEST"),
                   help="Tox21 challenge files; the leaderboard set is the validation set")
    p.add_argument("--split", nargs=3, type=float, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--split-seed", type=int)
    p.add_argument("--seed", type=int)
    for flag, typ in (("--epochs", int), ("--lr", float), ("--batch-size", int), ("--l2", float),
                      ("--mask-rate", float), ("--disc-weight", float), ("--hidden", int), ("--heads", int),
                      ("--layers", int), ("--max-len", int), ("--embed-dropout", float), ("--hidden-dropout", float)):
        p.add_argument(flag, type=typ)
    p.add_argument("--no-shared-encoder", action="store_true")

    p = sub.add_parser("evaluate", help="score a checkpoint on a labeled set or Tox21 CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-attention", help="dump attention maps and heatmaps for one molecule")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--smiles", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot-curves", help="plot epoch logs and summarize epochs-to-threshold")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--threshold", type=float, default=0.7)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "build-vocab":
            vocab = cmd_build_vocab(args.corpus, args.out, args.max_size)
            print(f"{len(vocab)} tokens -> {args.out}")
        elif args.command == "make-ontology-set":
            stats = cmd_make_ontology_set(args.obo, args.out, args.vocab, args.min_members, args.root, args.max_len)
            print(f"{stats['label_classes']} label classes, {stats['rows']} rows, {stats['skipped']} skipped -> {args.out}")
        elif args.command == "train":
            cmd_train(args)
        elif args.command == "evaluate":
            report = cmd_evaluate(args.checkpoint, args.data, args.vocab, args.out)
            print(f"micro-F1 {report['micro_f1']:.4f}, macro ROC-AUC {report['macro_roc_auc']}")
        elif args.command == "export-attention":
            doc = cmd_export_attention(args.checkpoint, args.smiles, args.vocab, args.out)
            print(f"{len(doc['layers'])} layers -> {args.out}")
        elif args.command == "plot-curves":
            for row in cmd_plot_curves(args.logs, args.out, args.labels, args.threshold):
                print(f"{row['label']}: reaches {args.threshold} at epoch {row['first_epoch_f1_at_threshold']}")
    except UsageError as err:
        print(f"ontotrain: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - every runtime failure maps to exit code 1
        print(f"ontotrain {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
