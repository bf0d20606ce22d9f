"""Epoch loop: plan, batch, train, record difficulty, validate, decay, log."""
import csv
from dataclasses import asdict, dataclass, field, fields
import logging
import math
import os
import time

import numpy as np

from . import evaluation
from .corpus import collate, make_batches
from .difficulty import DifficultyLedger, Granularity, NormalizationMode
from .model import (ModelConfig, NonFiniteError, PRESETS, clip_gradients, init_params,
                    save_checkpoint, sgd_step)
from .model import network
from .policy import Policy, PolicyConfig, PolicyKind, write_plan_rows, PLAN_CSV_HEADER

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "policy", "seed", "data_units", "data_fraction", "train_ppl",
                  "valid_ppl", "lr", "bleu", "seconds"]

PRESET_CLIP = {"desk": 5.0, "large": 0.0}


class ConfigError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    pass


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_seeds(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(s) for s in text)
    return tuple(int(s) for s in str(text).replace(" ", "").split(",") if s)


def _optional(fn):
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return fn(text)
    return parse


@dataclass
class TrainConfig:
    max_epochs: int = 18
    batch_size: int = 64
    initial_lr: float = 1.0
    decay_start_epoch: int = 10
    decay_factor: float = 0.5
    seeds: tuple = (11,)
    policy: str = "default"
    boost_ratio: float = 0.10
    reduce_keep: float = 0.80
    reduce_restart_period: int = 3
    normalization: str = "length"
    granularity: str = "sentence"
    preset: str = "desk"
    embedding_dim: int = None
    hidden_dim: int = None
    encoder_layers: int = None
    decoder_layers: int = 0
    dropout: float = None
    cell: str = "lstm"
    init_scale: float = None
    clip_norm: float = None
    dtype: str = "float32"
    max_len: int = 80
    vocab_cap: int = 50_000
    eval_bleu: bool = True
    eval_beam: int = 1
    max_out_len: int = 80
    early_stop_patience: int = 0
    wallclock: bool = False
    save_checkpoints: bool = True

    def __post_init__(self):
        self.seeds = _parse_seeds(self.seeds)
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.initial_lr > 0:
            raise ConfigError("initial_lr must be > 0")
        if not 0 < self.decay_factor < 1:
            raise ConfigError("decay_factor must lie in (0, 1)")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        try:
            PolicyKind.parse(self.policy)
            NormalizationMode.parse(self.normalization)
            Granularity.parse(self.granularity)
            self.policy_config(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def policy_config(self, seed):
        return PolicyConfig(PolicyKind.parse(self.policy), self.boost_ratio, self.reduce_keep,
                            self.reduce_restart_period, seed)

    def model_config(self, src_vocab_size, tgt_vocab_size):
        preset = PRESETS[self.preset]
        pick = lambda name: getattr(self, name) if getattr(self, name) is not None else preset[name]
        return ModelConfig(
            src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size,
            embedding_dim=pick("embedding_dim"), hidden_dim=pick("hidden_dim"),
            encoder_layers=pick("encoder_layers"), decoder_layers=self.decoder_layers,
            dropout=pick("dropout"), cell=self.cell, init_scale=pick("init_scale"),
            dtype=self.dtype)

    @property
    def effective_clip(self):
        return PRESET_CLIP[self.preset] if self.clip_norm is None else self.clip_norm

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def to_text(self):
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(map(str, v))
            lines.append(f"{k} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "seeds": _parse_seeds,
    "eval_bleu": _parse_bool, "wallclock": _parse_bool, "save_checkpoints": _parse_bool,
    "embedding_dim": _optional(int), "hidden_dim": _optional(int),
    "encoder_layers": _optional(int), "dropout": _optional(float), "clip_norm": _optional(float),
    "init_scale": _optional(float),
}


def _parser_for(f):
    if f.name in _PARSERS:
        return _PARSERS[f.name]
    return type(f.default)


def config_from_mapping(mapping, base=None):
    """Build a TrainConfig from string values; unknown keys are errors."""
    known = {f.name: f for f in fields(TrainConfig)}
    values = base.to_dict() if base is not None else {}
    for key, raw in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _parser_for(known[key])(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return TrainConfig(**values)


def read_config_file(path):
    """Flat ``key = value`` text, ``#`` comments allowed."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            mapping[key] = value
    return mapping


@dataclass
class TrainState:
    epoch: int = 0
    lr: float = 1.0
    valid_history: list = field(default_factory=list)
    decaying: bool = False
    best_epoch: int = 0
    best_metric: float = None
    train_forward_passes: dict = field(default_factory=dict)


def lr_schedule(state, epoch, validation_ppl, decay_start_epoch=10, decay_factor=0.5):
    """Learning rate in force after ``epoch``'s validation.

    Decay switches on (and stays on) once ``epoch >= decay_start_epoch`` or
    the validation perplexity rises above the previous epoch's.
    """
    prev = state.valid_history[-1] if state.valid_history else None
    if epoch >= decay_start_epoch or (prev is not None and validation_ppl > prev):
        state.decaying = True
    if state.decaying:
        state.lr = state.lr * decay_factor
    return state.lr


def validate(params, valid_corpus, batch_size=64):
    """Validation perplexity ``exp(total NLL / total target tokens)``, no dropout."""
    if len(valid_corpus) == 0:
        raise ValueError("validation corpus is empty")
    total = tokens = 0.0
    pairs = valid_corpus.pairs
    for start in range(0, len(pairs), batch_size):
        rec = network.forward_nll(params, collate(pairs[start:start + batch_size]), False)
        total += float(rec.nll.sum())
        tokens += float(rec.n_tokens.sum())
    return math.exp(total / tokens)


def _fmt(x, digits=6):
    if x is None:
        return ""
    return f"{x:.{digits}f}"


@dataclass
class TrainResult:
    params: object
    metrics: list
    plans: list
    ledger: DifficultyLedger
    state: TrainState
    checkpoints: list


class _CsvSink:
    def __init__(self, path, header):
        self.path = path
        if path is not None:
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(header)

    def write(self, fn):
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            fn(csv.writer(fh, lineterminator="\n"))


def train(corpus, valid_corpus, config, seed=None, out_dir=None, run_id="run",
          vocab_paths=None, params=None):
    """Train one system under ``config.policy`` with one seed.

    Writes ``metrics.csv``, ``plans.csv``, ``ledger.csv`` and per-epoch
    checkpoints to ``out_dir`` when given.
    """
    seed = config.seeds[0] if seed is None else int(seed)
    mcfg = config.model_config(len(corpus.src_vocab), len(corpus.tgt_vocab))
    if params is None:
        params = init_params(mcfg, seed)
    mode = NormalizationMode.parse(config.normalization)
    policy = Policy(config.policy_config(seed), corpus.ids, mode)
    ledger = DifficultyLedger(config.granularity)
    state = TrainState(lr=config.initial_lr)
    n_total = len(corpus)
    clip = config.effective_clip

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if config.save_checkpoints:
            os.makedirs(os.path.join(out_dir, "ckpt"), exist_ok=True)
    metrics_sink = _CsvSink(out_dir and os.path.join(out_dir, "metrics.csv"), METRICS_HEADER)
    plans_sink = _CsvSink(out_dir and os.path.join(out_dir, "plans.csv"), PLAN_CSV_HEADER)
    ledger_path = out_dir and os.path.join(out_dir, "ledger.csv")
    if ledger_path:
        ledger.to_csv(ledger_path, mode)
    vocab_meta = {
        "source": ((vocab_paths or {}).get("source", ""), corpus.src_vocab.fingerprint()),
        "target": ((vocab_paths or {}).get("target", ""), corpus.tgt_vocab.fingerprint()),
    }

    metrics, plans, checkpoints = [], [], []
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        state.epoch = epoch
        plan = policy.plan(epoch, ledger)
        plans.append(plan)
        plans_sink.write(lambda w: write_plan_rows(w, plan))
        batches = make_batches(plan, corpus, config.batch_size, seed=[seed, epoch])
        lr = state.lr
        total_nll = total_tok = 0.0
        passes = 0
        for bi, batch in enumerate(batches):
            try:
                rec = network.forward_nll(params, batch, True, [seed, epoch, bi], bi)
            except NonFiniteError as exc:
                raise TrainingAborted(f"epoch {epoch}, batch {bi}: {exc}") from exc
            passes += 1
            grads = network.backward(params, rec)
            clip_gradients(grads, clip)
            sgd_step(params, grads, lr)
            if not params.all_finite():
                raise TrainingAborted(f"epoch {epoch}, batch {bi}: non-finite parameters")
            ledger.record_batch(bi, batch.ids, rec.nll, rec.n_tokens, epoch)
            total_nll += float(rec.nll.sum())
            total_tok += float(rec.n_tokens.sum())
        state.train_forward_passes[epoch] = passes
        if ledger_path:
            ledger.to_csv(ledger_path, mode, epoch=epoch, append=True)

        train_ppl = math.exp(total_nll / total_tok)
        valid_ppl = validate(params, valid_corpus, config.batch_size)
        bleu = None
        if config.eval_bleu:
            hyp_ids = evaluation.translate(params, valid_corpus, config.eval_beam,
                                           config.max_out_len)
            bleu = evaluation.score_translations(hyp_ids, valid_corpus)[0].bleu
        new_lr = lr_schedule(state, epoch, valid_ppl, config.decay_start_epoch,
                             config.decay_factor)
        state.valid_history.append(valid_ppl)

        metric = bleu if bleu is not None else -valid_ppl
        if state.best_metric is None or metric > state.best_metric:
            state.best_metric, state.best_epoch = metric, epoch
            stale = 0
        else:
            stale += 1

        if out_dir is not None and config.save_checkpoints:
            path = os.path.join(out_dir, "ckpt", f"{run_id}-s{seed}-e{epoch:02d}.npz")
            try:
                save_checkpoint(path, params, epoch, vocab_meta,
                                extra={"run_id": run_id, "seed": seed, "policy": config.policy})
            except OSError as exc:
                raise TrainingAborted(f"epoch {epoch}: checkpoint write failed: {exc}") from exc
            checkpoints.append(path)

        seconds = time.perf_counter() - t0
        row = {
            "epoch": epoch, "policy": PolicyKind.parse(config.policy).value, "seed": seed,
            "data_units": len(plan), "data_fraction": len(plan) / n_total,
            "train_ppl": train_ppl, "valid_ppl": valid_ppl, "lr": new_lr, "bleu": bleu,
            "seconds": seconds if config.wallclock else None,
        }
        metrics.append(row)
        metrics_sink.write(lambda w: w.writerow(format_metrics_row(row)))
        log.info("epoch %d seed %d: units=%d train_ppl=%.3f valid_ppl=%.3f bleu=%s lr=%g",
                 epoch, seed, len(plan), train_ppl, valid_ppl,
                 "-" if bleu is None else f"{bleu:.2f}", new_lr)
        if config.early_stop_patience and stale >= config.early_stop_patience:
            break

    return TrainResult(params, metrics, plans, ledger, state, checkpoints)


def format_metrics_row(row):
    return [row["epoch"], row["policy"], row["seed"], row["data_units"],
            _fmt(row["data_fraction"]), _fmt(row["train_ppl"]), _fmt(row["valid_ppl"]),
            repr(float(row["lr"])), _fmt(row["bleu"], 4), _fmt(row["seconds"], 3)]


def read_metrics_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = dict(r)
            row["epoch"] = int(row["epoch"])
            units = float(row["data_units"])
            row["data_units"] = int(units) if units.is_integer() else units
            for k in ("data_fraction", "train_ppl", "valid_ppl", "lr", "bleu", "seconds"):
                row[k] = float(row[k]) if row.get(k) not in (None, "") else None
            rows.append(row)
    return rows


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow(format_metrics_row(row))


def average_metrics(runs):
    """Per-epoch arithmetic mean over seeds (epochs common to all runs)."""
    n_epochs = min(len(r) for r in runs)
    out = []
    for e in range(n_epochs):
        rows = [r[e] for r in runs]
        avg = {"epoch": rows[0]["epoch"], "policy": rows[0]["policy"], "seed": "mean"}
        for k in ("data_units", "data_fraction", "train_ppl", "valid_ppl", "lr", "bleu", "seconds"):
            vals = [r[k] for r in rows]
            avg[k] = None if any(v is None for v in vals) else float(np.mean(vals))
        out.append(avg)
    return out


def run_experiment(corpus, valid_corpus, config, out_dir=None, run_id="run", vocab_paths=None):
    """Train one system per configured seed and average their metrics.

    Returns ``(results, mean_rows)``.
    """
    results = []
    for seed in config.seeds:
        sub = os.path.join(out_dir, f"seed-{seed}") if out_dir else None
        results.append(train(corpus, valid_corpus, config, seed, sub, run_id, vocab_paths))
    mean_rows = average_metrics([r.metrics for r in results])
    if out_dir:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"),
                          [row for r in results for row in r.metrics])
        _write_mean_csv(os.path.join(out_dir, "metrics_mean.csv"), mean_rows)
    return results, mean_rows


def _write_mean_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow([row["epoch"], row["policy"], row["seed"], _fmt(row["data_units"], 1),
                        _fmt(row["data_fraction"]), _fmt(row["train_ppl"]),
                        _fmt(row["valid_ppl"]), _fmt(row["lr"], 8), _fmt(row["bleu"], 4),
                        _fmt(row["seconds"], 3)])
