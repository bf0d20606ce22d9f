"""Command-line entry point: synth, prepare, train, report, ensemble.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""
import argparse
import contextlib
import datetime
import json
import logging
import os
import shutil
import sys

from . import __version__
from .corpus import (CorpusError, DEFAULT_MAX_LEN, DEFAULT_VOCAB_CAP, Vocabulary, build_vocab,
                     corpus_stats, file_sha256, filter_by_length, load_bitext, numericalize)
from .evaluation import EnsembleConfig, REPORT_CSV_HEADER, VocabularyMismatch, evaluate_ensemble
from .trainer import (ConfigError, TrainConfig, TrainingAborted, config_from_mapping,
                      read_config_file, run_experiment)

log = logging.getLogger("nmtselect")

OUTPUT_ROOT_ENV = "NMTSELECT_OUTPUT_ROOT"
SPLITS = ("train", "valid", "test")
PREPARED_FILE = "prepared.json"
MANIFEST_FILE = "manifest.json"
LOCK_FILE = ".lock"
MANIFEST_VERSION = 1


class UsageError(Exception):
    """Bad arguments or inputs; mapped to exit code 2."""


# ---------------------------------------------------------------- helpers

def _require_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"file not found: {path}")
    return path


def human_count(n):
    """Compact count in the style of corpus tables (1M, 24M, 5.2K)."""
    for div, suffix in ((1_000_000, "M"), (1_000, "K")):
        if n >= div:
            v = n / div
            return f"{v:.0f}{suffix}" if v >= 10 or v.is_integer() else f"{v:.1f}{suffix}"
    return str(n)


def stats_table(rows, src_lang="source", tgt_lang="target"):
    """Plain-text table: split, sentences, tokens per side."""
    header = ["Data", "Sentences", f"Tokens {src_lang}", f"Tokens {tgt_lang}"]
    body = [[r["split"], human_count(r["sentences"]), human_count(r["source_tokens"]),
             human_count(r["target_tokens"])] for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join(fmt.format(*r) for r in [header] + body) + "\n"


@contextlib.contextmanager
def directory_lock(path):
    """Exclusive lock file inside ``path``; fails fast if already held."""
    lock = os.path.join(path, LOCK_FILE)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{path} is locked by another process ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(lock)


def _write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------- prepared data

def load_prepared(data_dir, splits=SPLITS):
    """``(info, {split: EncodedCorpus}, vocab_paths)`` from a prepared directory."""
    info_path = os.path.join(data_dir, PREPARED_FILE)
    if not os.path.isfile(info_path):
        raise UsageError(f"not a prepared corpus directory (missing {info_path})")
    with open(info_path, encoding="utf-8") as fh:
        info = json.load(fh)
    vocab_paths = {"source": os.path.abspath(os.path.join(data_dir, "vocab.src")),
                   "target": os.path.abspath(os.path.join(data_dir, "vocab.tgt"))}
    src_vocab = Vocabulary.load(_require_file(vocab_paths["source"]))
    tgt_vocab = Vocabulary.load(_require_file(vocab_paths["target"]))
    corpora = {}
    for split in splits:
        if split not in info["splits"]:
            continue
        base = os.path.join(data_dir, split)
        raw = load_bitext(base + ".src", base + ".tgt")
        with open(base + ".ids", encoding="utf-8") as fh:
            ids = [int(line) for line in fh if line.strip()]
        corpora[split] = numericalize(raw.select_ids(ids), src_vocab, tgt_vocab)
    return info, corpora, vocab_paths


def corpus_hashes(data_dir):
    info_path = os.path.join(data_dir, PREPARED_FILE)
    if not os.path.isfile(info_path):
        raise UsageError(f"not a prepared corpus directory (missing {info_path})")
    names = sorted(f for f in os.listdir(data_dir)
                   if f.endswith((".src", ".tgt", ".ids")) or f == PREPARED_FILE)
    return {n: file_sha256(os.path.join(data_dir, n)) for n in names}


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    from .synthetic import make_synthetic, write_bitext
    os.makedirs(args.out, exist_ok=True)
    sizes = {"train": args.pairs, "valid": args.valid, "test": args.test}
    for k, split in enumerate(SPLITS):
        if sizes[split] <= 0:
            continue
        corpus = make_synthetic(sizes[split], seed=[args.seed, k], hard_fraction=args.hard_fraction,
                                lexicon_seed=args.seed)
        base = os.path.join(args.out, split)
        write_bitext(corpus, base + ".src", base + ".tgt")
        print(f"{split}: {len(corpus)} pairs -> {base}.src / {base}.tgt")
    return 0


def cmd_prepare(args):
    pairs = {"train": (args.train_src, args.train_tgt)}
    if args.valid_src or args.valid_tgt:
        pairs["valid"] = (args.valid_src, args.valid_tgt)
    if args.test_src or args.test_tgt:
        pairs["test"] = (args.test_src, args.test_tgt)
    for split, (s, t) in pairs.items():
        if not s or not t:
            raise UsageError(f"{split}: both source and target files are required")
        _require_file(s)
        _require_file(t)

    raw = {split: load_bitext(s, t) for split, (s, t) in pairs.items()}
    kept = {split: filter_by_length(c, args.max_len) for split, c in raw.items()}
    if len(kept["train"]) == 0:
        raise CorpusError(f"no training pair has both sides within 1..{args.max_len} tokens")
    src_vocab = build_vocab(kept["train"], "source", args.vocab_cap)
    tgt_vocab = build_vocab(kept["train"], "target", args.vocab_cap)

    os.makedirs(args.out, exist_ok=True)
    src_vocab.save(os.path.join(args.out, "vocab.src"))
    tgt_vocab.save(os.path.join(args.out, "vocab.tgt"))
    rows, files = [], {}
    for split, (s, t) in pairs.items():
        base = os.path.join(args.out, split)
        shutil.copyfile(s, base + ".src")
        shutil.copyfile(t, base + ".tgt")
        with open(base + ".ids", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{i}\n" for i in kept[split].ids.tolist())
        rows.append(dict(split=split, **corpus_stats(kept[split]),
                         raw_sentences=len(raw[split])))
        files[split] = {"source": os.path.abspath(s), "target": os.path.abspath(t),
                        "source_sha256": file_sha256(s), "target_sha256": file_sha256(t)}

    with open(os.path.join(args.out, "stats.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("split,sentences,source_tokens,target_tokens,raw_sentences\n")
        for r in rows:
            fh.write(f"{r['split']},{r['sentences']},{r['source_tokens']},"
                     f"{r['target_tokens']},{r['raw_sentences']}\n")
    table = stats_table(rows, args.src_lang, args.tgt_lang)
    with open(os.path.join(args.out, "stats.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    _write_json(os.path.join(args.out, PREPARED_FILE), {
        "max_len": args.max_len, "vocab_cap": args.vocab_cap, "splits": list(pairs),
        "inputs": files, "vocab_sizes": {"source": len(src_vocab), "target": len(tgt_vocab)},
        "stats": rows,
    })
    print(table, end="")
    print(f"vocabulary: {len(src_vocab)} source / {len(tgt_vocab)} target types")
    return 0


_FLAG_KEYS = {
    "epochs": "max_epochs", "batch_size": "batch_size", "lr": "initial_lr",
    "decay_start": "decay_start_epoch", "decay_factor": "decay_factor",
    "norm": "normalization", "granularity": "granularity", "boost_ratio": "boost_ratio",
    "keep": "reduce_keep", "restart_period": "reduce_restart_period", "seeds": "seeds",
    "beam": "eval_beam", "policy": "policy", "preset": "preset", "hidden": "hidden_dim",
    "embedding": "embedding_dim", "layers": "encoder_layers", "dropout": "dropout",
    "init_scale": "init_scale", "clip": "clip_norm", "cell": "cell", "dtype": "dtype",
    "max_out_len": "max_out_len", "patience": "early_stop_patience",
}


def resolve_config(args):
    """Defaults, then the config file, then explicit flags."""
    mapping = {}
    if args.config:
        mapping.update(read_config_file(_require_file(args.config)))
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            mapping[key] = value
    if args.no_bleu:
        mapping["eval_bleu"] = False
    if args.wallclock:
        mapping["wallclock"] = True
    if args.no_checkpoints:
        mapping["save_checkpoints"] = False
    return config_from_mapping(mapping)


def _output_root(args):
    return args.out_root or os.environ.get(OUTPUT_ROOT_ENV) or "runs"


def _config_flags_given(args):
    return args.config or args.no_bleu or args.wallclock or args.no_checkpoints or any(
        getattr(args, f, None) is not None for f in _FLAG_KEYS)


def cmd_train(args):
    if args.manifest:
        if _config_flags_given(args) or args.data:
            raise UsageError("--manifest replays a recorded run; "
                             "it cannot be combined with --data, --config or config flags")
        with open(_require_file(args.manifest), encoding="utf-8") as fh:
            manifest = json.load(fh)
        config = config_from_mapping(manifest["config"])
        data_dir = manifest["data_dir"]
        hashes = corpus_hashes(data_dir)
        if hashes != manifest["corpus_hashes"]:
            changed = sorted(k for k in set(hashes) | set(manifest["corpus_hashes"])
                             if hashes.get(k) != manifest["corpus_hashes"].get(k))
            raise UsageError(f"corpus files changed since the recorded run: {changed}")
        run_id = args.run_id or manifest["run_id"] + "-replay"
    else:
        if not args.data:
            raise UsageError("--data (a prepared corpus directory) is required")
        config = resolve_config(args)
        data_dir = os.path.abspath(args.data)
        hashes = corpus_hashes(data_dir)
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        run_id = args.run_id or f"{config.policy}-{stamp}"

    info, corpora, vocab_paths = load_prepared(data_dir, ("train", "valid"))
    if "valid" not in corpora:
        raise UsageError(f"{data_dir} has no validation split; prepare it with --valid-src/--valid-tgt")
    run_dir = os.path.join(_output_root(args), run_id)
    os.makedirs(run_dir, exist_ok=True)
    with directory_lock(run_dir):
        if os.path.exists(os.path.join(run_dir, MANIFEST_FILE)):
            raise UsageError(f"run directory {run_dir} already holds a run; "
                             "choose another --run-id")
        manifest = {
            "manifest_version": MANIFEST_VERSION, "run_id": run_id,
            "config": config.to_dict(), "seeds": list(config.seeds), "data_dir": data_dir,
            "corpus_hashes": hashes, "output_dir": os.path.abspath(run_dir),
            "package_version": __version__,
        }
        _write_json(os.path.join(run_dir, MANIFEST_FILE), manifest)
        with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(config.to_text())
        log.info("run %s: policy=%s seeds=%s -> %s", run_id, config.policy,
                 list(config.seeds), run_dir)
        _, mean_rows = run_experiment(corpora["train"], corpora["valid"], config, run_dir,
                                      run_id, vocab_paths)
    last = mean_rows[-1]
    bleu = "-" if last["bleu"] is None else f"{last['bleu']:.2f}"
    print(f"{run_id}: epoch {last['epoch']} valid_ppl={last['valid_ppl']:.3f} bleu={bleu}")
    print(run_dir)
    return 0


def cmd_report(args):
    from .report import (MissingMetrics, load_series, pick_metric, plot_curves, trend_summary,
                         write_combined_csv)
    try:
        series = load_series(args.runs)
    except MissingMetrics as exc:
        raise UsageError(str(exc)) from None
    try:
        metric = pick_metric(series, args.metric)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "report.csv")
    svg_path = os.path.join(args.out, f"curves-{metric}.svg")
    write_combined_csv(csv_path, series)
    plot_curves(svg_path, series, metric)
    lines = [f"{s.label}: final {metric} = {s.final(metric):.4f} at epoch {s.rows[-1]['epoch']}"
             for s in series if s.final(metric) is not None]
    lines += trend_summary(series, args.reference)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(csv_path)
    print(svg_path)
    return 0


def cmd_ensemble(args):
    for path in args.checkpoints:
        _require_file(path)
    _, corpora, _ = load_prepared(args.data, (args.split,))
    if args.split not in corpora:
        raise UsageError(f"{args.data} has no '{args.split}' split")
    corpus = corpora[args.split]
    config = EnsembleConfig(list(args.checkpoints), args.beam, args.max_out_len, args.mode)
    report, hyps = evaluate_ensemble(config, corpus)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "hypotheses.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.writelines(" ".join(h) + "\n" for h in hyps)
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["members"] + REPORT_CSV_HEADER) + "\n")
        fh.write(",".join(str(x) for x in [len(args.checkpoints)] + report.csv_row()) + "\n")
    text = (f"members: {len(args.checkpoints)}\nsplit: {args.split} ({len(corpus)} sentences)\n"
            f"beam: {args.beam}, averaging: {args.mode}\n{report.text()}\n")
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="nmtselect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic easy/hard translation task")
    s.add_argument("--out", required=True)
    s.add_argument("--pairs", type=int, default=3000, help="training pairs")
    s.add_argument("--valid", type=int, default=300)
    s.add_argument("--test", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hard-fraction", type=float, default=0.4)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", help="filter, build vocabularies and corpus statistics")
    s.add_argument("--train-src", required=True)
    s.add_argument("--train-tgt", required=True)
    s.add_argument("--valid-src")
    s.add_argument("--valid-tgt")
    s.add_argument("--test-src")
    s.add_argument("--test-tgt")
    s.add_argument("--out", required=True)
    s.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    s.add_argument("--vocab-cap", type=int, default=DEFAULT_VOCAB_CAP)
    s.add_argument("--src-lang", default="source", help="label for the stats table")
    s.add_argument("--tgt-lang", default="target")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train one system per seed under a selection policy")
    s.add_argument("--data", help="prepared corpus directory")
    s.add_argument("--config", help="key = value file; flags override it")
    s.add_argument("--manifest", help="replay the run recorded in this manifest.json")
    s.add_argument("--out-root", help=f"run directory root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    s.add_argument("--run-id")
    s.add_argument("--policy", choices=["default", "boost", "reduce", "bootstrap"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--decay-start", type=int)
    s.add_argument("--decay-factor", type=float)
    s.add_argument("--norm", choices=["batch", "length", "none"])
    s.add_argument("--granularity", choices=["sentence", "batch"])
    s.add_argument("--boost-ratio", type=float)
    s.add_argument("--keep", type=float)
    s.add_argument("--restart-period", type=int)
    s.add_argument("--seeds", help="comma-separated, e.g. 11,13")
    s.add_argument("--beam", type=int, help="beam width for per-epoch validation BLEU")
    s.add_argument("--preset", choices=["desk", "large"])
    s.add_argument("--hidden", type=int)
    s.add_argument("--embedding", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--init-scale", type=float)
    s.add_argument("--clip", type=float, help="global-norm clip, 0 disables")
    s.add_argument("--cell", choices=["lstm", "gru"])
    s.add_argument("--dtype", choices=["float32", "float64"])
    s.add_argument("--max-out-len", type=int)
    s.add_argument("--patience", type=int, help="early-stop patience in epochs, 0 disables")
    s.add_argument("--no-bleu", action="store_true", help="skip per-epoch validation BLEU")
    s.add_argument("--wallclock", action="store_true",
                   help="log epoch seconds (makes metrics.csv non-reproducible)")
    s.add_argument("--no-checkpoints", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("report", help="combine run metrics into a table and learning curves")
    s.add_argument("runs", nargs="+", help="run directories")
    s.add_argument("--out", required=True)
    s.add_argument("--metric", choices=["bleu", "valid_ppl", "train_ppl", "data_fraction"])
    s.add_argument("--reference", default="default", help="series the trend check compares to")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("ensemble", help="decode with averaged checkpoints and score BLEU")
    s.add_argument("checkpoints", nargs="+")
    s.add_argument("--data", required=True, help="prepared corpus directory")
    s.add_argument("--split", default="test", choices=list(SPLITS))
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--max-out-len", type=int, default=80)
    s.add_argument("--mode", choices=["linear", "loglinear"], default="linear")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusError, VocabularyMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - contract: anything else is a runtime failure
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
