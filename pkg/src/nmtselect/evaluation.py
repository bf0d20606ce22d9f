"""Corpus BLEU and checkpoint / ensemble evaluation."""
from collections import Counter
from dataclasses import dataclass, field
import math

from .model import beam_decode, greedy_decode, load_checkpoint

MAX_ORDER = 4
REPORT_CSV_HEADER = ["bleu", "p1", "p2", "p3", "p4", "bp", "hyp_len", "ref_len"]


class VocabularyMismatch(ValueError):
    pass


@dataclass
class BleuReport:
    bleu: float
    precisions: list
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list = field(default_factory=list)
    totals: list = field(default_factory=list)

    def text(self):
        p = "/".join(f"{100 * x:.1f}" for x in self.precisions)
        return (f"BLEU = {self.bleu:.2f}, {p} "
                f"(BP={self.brevity_penalty:.3f}, ratio={self.hyp_len / max(self.ref_len, 1):.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len})")

    def csv_row(self):
        return ([f"{self.bleu:.4f}"] + [f"{p:.6f}" for p in self.precisions]
                + [f"{self.brevity_penalty:.6f}", self.hyp_len, self.ref_len])


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_from_counts(matches, totals, hyp_len, ref_len):
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER) * 100.0
    return score, precisions, bp


def bleu(hypotheses, references):
    """Corpus-level BLEU-4 with clipped counts and a single reference."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("cannot score an empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    score, precisions, bp = bleu_from_counts(matches, totals, hyp_len, ref_len)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, matches, totals)


def check_vocab(meta, corpus):
    """Raise if a checkpoint was trained on different vocabularies."""
    vocab = meta.get("vocab", {})
    for side, v in (("source", corpus.src_vocab), ("target", corpus.tgt_vocab)):
        fp = vocab.get(side, {}).get("fingerprint")
        if fp is not None and fp != v.fingerprint():
            raise VocabularyMismatch(
                f"{side} vocabulary of the checkpoint does not match the test corpus")
    cfg = meta["config"]
    if cfg["src_vocab_size"] != len(corpus.src_vocab):
        raise VocabularyMismatch(
            f"source vocabulary size {cfg['src_vocab_size']} != corpus {len(corpus.src_vocab)}")
    if cfg["tgt_vocab_size"] != len(corpus.tgt_vocab):
        raise VocabularyMismatch(
            f"target vocabulary size {cfg['tgt_vocab_size']} != corpus {len(corpus.tgt_vocab)}")


def translate(models, corpus, beam_width=5, max_out_len=80, mode="linear"):
    """Decode every source of ``corpus``; returns target id lists in order."""
    sources = corpus.sources()
    if beam_width == 1:
        return greedy_decode(models, sources, max_out_len, mode)
    return [beam_decode(models, s, beam_width, max_out_len, mode) for s in sources]


def score_translations(hyp_ids, corpus):
    hyps = [corpus.tgt_vocab.decode(h) for h in hyp_ids]
    return bleu(hyps, corpus.references()), hyps


def _load(member):
    if isinstance(member, tuple):
        return member
    return load_checkpoint(member)


def evaluate_checkpoint(checkpoint, test_corpus, beam_width=5, max_out_len=80):
    """BLEU of one checkpoint (path or ``(params, meta)``); returns ``(report, hyps)``."""
    return evaluate_ensemble(EnsembleConfig([checkpoint], beam_width, max_out_len), test_corpus)


@dataclass
class EnsembleConfig:
    checkpoints: list
    beam_width: int = 5
    max_out_len: int = 80
    mode: str = "linear"

    def __post_init__(self):
        if not self.checkpoints:
            raise ValueError("an ensemble needs at least one checkpoint")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


def evaluate_ensemble(config, test_corpus):
    members = [_load(c) for c in config.checkpoints]
    for _, meta in members:
        check_vocab(meta, test_corpus)
    models = [p for p, _ in members]
    hyp_ids = translate(models, test_corpus, config.beam_width, config.max_out_len, config.mode)
    return score_translations(hyp_ids, test_corpus)
