"""Beam search and greedy decoding over one or more models."""
import numpy as np

from ..corpus import BOS, EOS, collate, SentencePair
from .network import decoder_step, encode, init_decoder_state, select_state


def _pairwise_sum(arrays):
    # tree reduction: k identical members sum exactly for power-of-two k
    arrays = list(arrays)
    while len(arrays) > 1:
        nxt = [arrays[i] + arrays[i + 1] for i in range(0, len(arrays) - 1, 2)]
        if len(arrays) % 2:
            nxt.append(arrays[-1])
        arrays = nxt
    return arrays[0]


def combine_log_probs(log_probs, mode="linear"):
    """Average member distributions; returns log of the combined distribution.

    ``linear`` averages probabilities, ``loglinear`` averages log-probabilities
    and renormalises.
    """
    k = len(log_probs)
    if k == 1:
        return log_probs[0]
    if mode == "linear":
        with np.errstate(divide="ignore"):
            return np.log(_pairwise_sum([np.exp(lp) for lp in log_probs]) / k)
    if mode == "loglinear":
        avg = _pairwise_sum(log_probs) / k
        m = avg.max(axis=-1, keepdims=True)
        return avg - m - np.log(np.exp(avg - m).sum(axis=-1, keepdims=True))
    raise ValueError(f"unknown ensemble mode {mode!r}")


def _as_models(models):
    if not isinstance(models, (list, tuple)):
        models = [models]
    if not models:
        raise ValueError("need at least one model")
    V = models[0].config.tgt_vocab_size
    for m in models[1:]:
        if m.config.tgt_vocab_size != V:
            raise ValueError("ensemble members disagree on target vocabulary size")
    return list(models)


def _encode_source(models, source):
    batch = collate([SentencePair(0, tuple(source), ())])
    return [encode(m, batch.src, batch.src_len) for m in models]


def beam_decode(models, source, beam_width=5, max_out_len=80, mode="linear"):
    """Length-synchronous beam search over the members' averaged distribution.

    Returns the completed hypothesis (EOS stripped) with the highest mean
    per-token log-probability; ties go to the earlier completion and then
    to the lexicographically smaller token sequence.
    """
    models = _as_models(models)
    if len(source) == 0:
        raise ValueError("cannot decode an empty source sequence")
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    encs = _encode_source(models, source)
    states = [init_decoder_state(m, e) for m, e in zip(models, encs)]
    tokens = np.zeros((1, 0), dtype=np.int64)
    scores = np.zeros(1)
    prev = np.array([BOS])
    finished = []   # (mean score, completion step, tokens)

    for step in range(1, max_out_len + 1):
        rows = np.zeros(len(prev), dtype=np.int64)
        outs = [decoder_step(m, e, s, rows, prev) for m, e, s in zip(models, encs, states)]
        logp = combine_log_probs([lp for lp, _ in outs], mode).astype(np.float64)
        V = logp.shape[1]
        cand = (scores[:, None] + logp).ravel()
        # rank current hypotheses lexicographically for the tie-break
        lex = np.lexsort(tokens.T[::-1]) if tokens.shape[1] else np.arange(len(tokens))
        prefix_rank = np.empty(len(tokens), dtype=np.int64)
        prefix_rank[lex] = np.arange(len(tokens))
        hyp_idx = np.repeat(np.arange(len(tokens)), V)
        tok_idx = np.tile(np.arange(V), len(tokens))
        order = np.lexsort((tok_idx, prefix_rank[hyp_idx], -cand))
        order = [k for k in order if np.isfinite(cand[k])][:beam_width]

        keep_h, keep_t, keep_s = [], [], []
        for k in order:
            h, t = hyp_idx[k], tok_idx[k]
            if t == EOS:
                finished.append((cand[k] / step, step, tuple(tokens[h].tolist())))
            else:
                keep_h.append(h)
                keep_t.append(t)
                keep_s.append(cand[k])
        if not keep_h or len(finished) >= beam_width:
            break
        keep_h = np.array(keep_h)
        tokens = np.concatenate([tokens[keep_h], np.array(keep_t)[:, None]], axis=1)
        scores = np.array(keep_s)
        prev = np.array(keep_t)
        states = [select_state(s, keep_h) for _, s in outs]
    else:
        for h in range(len(tokens)):
            finished.append((scores[h] / max_out_len, max_out_len + 1, tuple(tokens[h].tolist())))

    best = min(finished, key=lambda f: (-f[0], f[1], f[2]))
    return list(best[2])


def greedy_decode(models, sources, max_out_len=80, mode="linear", batch_size=64):
    """Batched argmax decoding; equivalent to ``beam_decode`` with width 1."""
    models = _as_models(models)
    results = []
    for start in range(0, len(sources), batch_size):
        chunk = sources[start:start + batch_size]
        batch = collate([SentencePair(i, tuple(s), ()) for i, s in enumerate(chunk)])
        encs = [encode(m, batch.src, batch.src_len) for m in models]
        states = [init_decoder_state(m, e) for m, e in zip(models, encs)]
        B = len(chunk)
        out = [[] for _ in range(B)]
        live = np.arange(B)
        prev = np.full(B, BOS)
        for _ in range(max_out_len):
            outs = [decoder_step(m, e, s, live, prev) for m, e, s in zip(models, encs, states)]
            logp = combine_log_probs([lp for lp, _ in outs], mode)
            nxt = logp.argmax(axis=1)
            still = []
            for k, (row, tok) in enumerate(zip(live, nxt)):
                if tok == EOS:
                    continue
                out[row].append(int(tok))
                still.append(k)
            if not still:
                break
            still = np.array(still)
            live = live[still]
            prev = nxt[still]
            states = [select_state(s, still) for _, s in outs]
        results.extend(out)
    return results
