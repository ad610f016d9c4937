"""Command-line surface: preprocess, synth, train, evaluate, ablate, inspect."""

from __future__ import annotations

import argparse
import json
import os
import sys

from driftrec import data as data_mod
from driftrec.config import CONFIG_KEYS, ConfigError, load_config

DATA_DIR_ENV = "DRIFTREC_DATA_DIR"


def _add_config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("config overrides")
    for key in CONFIG_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}",
                           default=None, metavar="V")
    parser.add_argument("--config", default=None, help="YAML config file")


def _config_from_args(args) -> "ModelConfig":
    overrides = {k: getattr(args, f"cfg_{k}") for k in CONFIG_KEYS}
    return load_config(args.config, overrides)


def _data_dir(args) -> str:
    d = args.data or os.environ.get(DATA_DIR_ENV)
    if not d:
        raise SystemExit(f"no data directory given (--data or ${DATA_DIR_ENV})")
    return d


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="driftrec")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("preprocess", help="ingest a raw TSV interaction log")
    pp.add_argument("--input", required=True)
    pp.add_argument("--out", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic corpus")
    ps.add_argument("--users", type=int, default=500)
    ps.add_argument("--items", type=int, default=200)
    ps.add_argument("--clusters", type=int, default=8)
    ps.add_argument("--shift-prob", type=float, default=0.5)
    ps.add_argument("--noise-rate", type=float, default=0.1)
    ps.add_argument("--min-len", type=int, default=8)
    ps.add_argument("--max-len", type=int, default=12)
    ps.add_argument("--seed", type=int, default=1)
    ps.add_argument("--out", required=True)

    pt = sub.add_parser("train", help="train a model on a corpus directory")
    pt.add_argument("--data", default=None)
    pt.add_argument("--out", required=True)
    pt.add_argument("--variant", default="full",
                    choices=("full", "no_routing", "no_attention"))
    _add_config_flags(pt)

    pe = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--data", default=None)
    pe.add_argument("--seeds", default="1,2,3,4,5")
    pe.add_argument("--out", default=None, help="report JSON path")
    pe.add_argument("--variant", default="full",
                    choices=("full", "no_routing", "no_attention"))

    pa = sub.add_parser("ablate", help="train and compare pipeline variants")
    pa.add_argument("--data", default=None)
    pa.add_argument("--out", required=True)
    pa.add_argument("--variants", default="full,no_attention")
    pa.add_argument("--seeds", default="1,2,3,4,5")
    _add_config_flags(pa)

    pi = sub.add_parser("inspect", help="per-sequence stability/weight diagnostics")
    pi.add_argument("--ckpt", required=True)
    pi.add_argument("--data", default=None)
    pi.add_argument("--out", default=None, help="JSONL output path")
    pi.add_argument("--plot", default=None, help="directory for PNG plots")
    pi.add_argument("--epoch-log", default=None,
                    help="epoch log for the loss-curve plot")
    pi.add_argument("--seed", type=int, default=1)

    return p


def cmd_preprocess(args) -> int:
    seqs, vocab = data_mod.ingest(args.input)
    data_mod.write_corpus(args.out, seqs, n_items=len(vocab), vocab=vocab)
    print(f"wrote {len(seqs)} sequences, {len(vocab)} items to {args.out}")
    return 0


def cmd_synth(args) -> int:
    from driftrec.rng import seeded_rng
    spec = data_mod.SyntheticSpec(
        n_users=args.users, n_items=args.items, n_clusters=args.clusters,
        shift_prob=args.shift_prob, noise_rate=args.noise_rate,
        min_len=args.min_len, max_len=args.max_len)
    corpus = data_mod.generate_synthetic(spec, seeded_rng(args.seed, "synth"))
    data_mod.write_corpus(args.out, corpus.sequences, n_items=spec.n_items,
                          labels=corpus.labels, item_vectors=corpus.item_vectors)
    print(f"wrote {len(corpus.sequences)} synthetic sequences to {args.out}")
    return 0


def cmd_train(args) -> int:
    from driftrec.checkpoint import save_checkpoint
    from driftrec.trainer import Trainer

    config = _config_from_args(args)
    data_dir = _data_dir(args)
    seqs, n_items, _ = data_mod.read_corpus(data_dir)
    trainer = Trainer(seqs, n_items, config, out_dir=args.out,
                      variant=args.variant)
    records = trainer.train()
    trainer.restore_best()
    best = records[trainer.state.best_epoch - 1]
    save_checkpoint(
        os.path.join(args.out, "best.ckpt"), trainer.model, config,
        vocab_hash=data_mod.vocab_hash(data_dir), n_items=n_items,
        epoch=trainer.state.best_epoch,
        val_metrics={"hr": best.val_hr, "ndcg": best.val_ndcg},
        seed=config.seed)
    print(f"trained {len(records)} epochs; best epoch "
          f"{trainer.state.best_epoch} (val HR@{config.K} {best.val_hr:.2f})")
    return 0


def cmd_evaluate(args) -> int:
    from driftrec.checkpoint import load_checkpoint
    from driftrec.data import split_leave_one_out
    from driftrec.evaluate import aggregate, evaluate_split, report_csv_rows

    data_dir = _data_dir(args)
    model, config, _ = load_checkpoint(args.ckpt,
                                       data_mod.vocab_hash(data_dir))
    seqs, _, _ = data_mod.read_corpus(data_dir)
    split = split_leave_one_out(seqs)
    full_items = {s.user_id: s.items for s in seqs}
    seeds = [int(s) for s in args.seeds.split(",")]
    runs = [evaluate_split(split.test, full_items, model, config, seed,
                           variant=args.variant) for seed in seeds]
    report = aggregate(runs)
    out = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(out + "\n")
        with open(os.path.splitext(args.out)[0] + ".csv", "w") as f:
            f.write("\n".join(report_csv_rows(report, seeds)) + "\n")
    print(f"HR@{config.K}: {report['hr']['formatted']}  "
          f"NDCG@{config.K}: {report['ndcg']['formatted']}")
    return 0


def cmd_ablate(args) -> int:
    from driftrec.trainer import run_ablation

    config = _config_from_args(args)
    data_dir = _data_dir(args)
    seqs, n_items, _ = data_mod.read_corpus(data_dir)
    variants = args.variants.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    reports = run_ablation(seqs, n_items, config, variants, seeds,
                           out_dir=args.out)
    if len(variants) > 1:
        base = variants[0]
        delta = {v: {m: reports[base][m]["mean"] - reports[v][m]["mean"]
                     for m in ("hr", "ndcg")}
                 for v in variants[1:]}
        with open(os.path.join(args.out, "delta_summary.json"), "w") as f:
            json.dump({"baseline": base, "delta": delta}, f, indent=2)
    for v in variants:
        print(f"{v}: HR {reports[v]['hr']['formatted']}  "
              f"NDCG {reports[v]['ndcg']['formatted']}")
    return 0


def cmd_inspect(args) -> int:
    from driftrec.checkpoint import load_checkpoint
    from driftrec.inspect_tools import emit_plots, inspect_corpus

    data_dir = _data_dir(args)
    model, _, _ = load_checkpoint(args.ckpt, data_mod.vocab_hash(data_dir))
    seqs, _, labels = data_mod.read_corpus(data_dir)
    records = inspect_corpus(model, seqs, args.seed, out_path=args.out)
    if args.plot:
        emit_plots(records, args.plot, epoch_log_path=args.epoch_log,
                   labels=labels)
    if not args.out:
        for rec in records[:5]:
            print(json.dumps(rec, sort_keys=True))
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, data_mod.DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # checkpoint/vocab mismatches and I/O failures
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
