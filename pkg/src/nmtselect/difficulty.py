"""Per-unit difficulty bookkeeping from training forward passes.

The ledger is filled with the NLLs the training loop already computes, so
ranking the corpus by perplexity costs no extra forward passes.
"""
import csv
from dataclasses import dataclass
import enum
import math

import numpy as np


class NormalizationMode(enum.Enum):
    BY_BATCH_SIZE = "batch"
    BY_TARGET_LENGTH = "length"
    NONE = "none"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value in (mode.value, mode.name, mode.name.lower()):
                return mode
        raise ValueError(f"unknown normalization mode {value!r} "
                         f"(expected one of {[m.value for m in cls]})")


class Granularity(enum.Enum):
    SENTENCE = "sentence"
    BATCH = "batch"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown granularity {value!r}") from None


class Unscored(LookupError):
    """Raised by :meth:`DifficultyLedger.score` for a unit with no record."""


@dataclass(frozen=True)
class Record:
    nll: float
    length: int
    epoch: int
    members: tuple = ()

    @property
    def member_count(self):
        return len(self.members) or 1


class DifficultyLedger:
    """Most recent ``(nll, length, epoch)`` per unit.

    With batch granularity a unit is one training batch of an epoch and its
    record carries the member sentence ids; :meth:`sentence_scores` projects
    batch scores back onto sentences so policies always select sentences.
    """

    def __init__(self, granularity=Granularity.SENTENCE):
        self.granularity = Granularity.parse(granularity)
        self.records = {}

    def __len__(self):
        return len(self.records)

    def __contains__(self, unit_id):
        return unit_id in self.records

    def record(self, unit_id, nll, length, epoch, members=()):
        nll = float(nll)
        if not math.isfinite(nll) or nll < 0:
            raise ValueError(f"unit {unit_id}: nll must be finite and >= 0, got {nll}")
        if length < 1:
            raise ValueError(f"unit {unit_id}: target token count must be >= 1")
        prev = self.records.get(unit_id)
        if prev is not None and prev.epoch > epoch:
            raise ValueError(f"unit {unit_id}: record for epoch {epoch} is older than "
                             f"the stored epoch {prev.epoch}")
        self.records[unit_id] = Record(nll, int(length), int(epoch),
                                       tuple(int(m) for m in members))
        return self

    def record_batch(self, batch_index, member_ids, nlls, lengths, epoch):
        """Store one training batch's per-sentence NLLs at the ledger granularity."""
        if self.granularity is Granularity.SENTENCE:
            for sid, nll, length in zip(member_ids, nlls, lengths):
                self.record(int(sid), nll, int(length), epoch)
        else:
            self.record((epoch, int(batch_index)), float(np.sum(nlls)),
                        int(np.sum(lengths)), epoch, members=member_ids)

    def units(self, epoch=None):
        if epoch is None:
            return list(self.records)
        return [u for u, r in self.records.items() if r.epoch == epoch]

    def score(self, unit_id, mode):
        mode = NormalizationMode.parse(mode)
        try:
            rec = self.records[unit_id]
        except KeyError:
            raise Unscored(unit_id) from None
        return score_record(rec, mode)

    def sentence_scores(self, ids, mode, ranking=False):
        """Score array aligned with ``ids``; unscored sentences get ``+inf``.

        With ``ranking=True`` the values are :func:`rank_key` (same order,
        no exp overflow), which is what the selection policies consume.
        """
        mode = NormalizationMode.parse(mode)
        fn = rank_key if ranking else score_record
        ids = np.asarray(ids, dtype=np.int64)
        scores = np.full(len(ids), np.inf)
        if self.granularity is Granularity.SENTENCE:
            for k, sid in enumerate(ids.tolist()):
                rec = self.records.get(sid)
                if rec is not None:
                    scores[k] = fn(rec, mode)
            return scores
        # batch granularity: a sentence takes its most recent batch's score
        latest = {}
        for rec in self.records.values():
            s = fn(rec, mode)
            for sid in rec.members:
                old = latest.get(sid)
                if old is None or rec.epoch > old[0] or (rec.epoch == old[0] and s > old[1]):
                    latest[sid] = (rec.epoch, s)
        for k, sid in enumerate(ids.tolist()):
            if sid in latest:
                scores[k] = latest[sid][1]
        return scores

    def to_csv(self, path, mode, epoch=None, append=False):
        mode = NormalizationMode.parse(mode)
        units = sorted(self.units(epoch), key=_unit_key)
        new = not append
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["unit_id", "epoch", "nll", "length", "score_mode", "score"])
            for u in units:
                rec = self.records[u]
                w.writerow([_unit_label(u), rec.epoch, repr(rec.nll), rec.length,
                            mode.value, repr(score_record(rec, mode))])


def rank_key(rec, mode):
    """Monotone stand-in for :func:`score_record`: the log of the
    perplexity for the normalised modes, the raw NLL otherwise."""
    if mode is NormalizationMode.BY_TARGET_LENGTH:
        return rec.nll / rec.length
    if mode is NormalizationMode.BY_BATCH_SIZE:
        return rec.nll / rec.member_count
    if mode is NormalizationMode.NONE:
        return rec.nll
    raise ValueError(f"unknown normalization mode {mode!r}")


def score_record(rec, mode):
    key = rank_key(rec, mode)
    if mode is NormalizationMode.NONE:
        return key
    return math.exp(key) if key < 709.0 else math.inf


def _unit_key(u):
    return u if isinstance(u, tuple) else (u,)


def _unit_label(u):
    return "-".join(map(str, u)) if isinstance(u, tuple) else str(u)
