"""Synthetic translation task with easy and hard sentence pairs.

Easy pairs are short word-for-word substitutions. Hard pairs are long and
start with an operator word that reorders the translation: ``rev``
reverses it, ``swap`` exchanges neighbouring words.
"""
import numpy as np

from .corpus import Corpus

N_WORDS = 24


def _lexicon(seed):
    perm = np.random.default_rng([seed, 0xC0FFEE]).permutation(N_WORDS)
    return {f"s{i}": f"t{perm[i]}" for i in range(N_WORDS)}


def _swap_pairs(words):
    out = list(words)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def make_pair(rng, lexicon, hard):
    words = list(lexicon)
    if not hard:
        src = list(rng.choice(words, size=int(rng.integers(2, 5))))
        return src, [lexicon[w] for w in src]
    body = list(rng.choice(words, size=int(rng.integers(6, 11))))
    op = "rev" if rng.random() < 0.5 else "swap"
    tgt = [lexicon[w] for w in body]
    tgt = tgt[::-1] if op == "rev" else _swap_pairs(tgt)
    return [op] + body, tgt


def make_synthetic(n, seed=0, hard_fraction=0.4, lexicon_seed=0):
    """``n`` pairs; the word lexicon depends only on ``lexicon_seed``."""
    rng = np.random.default_rng(seed)
    lexicon = _lexicon(lexicon_seed)
    src, tgt = [], []
    for _ in range(n):
        s, t = make_pair(rng, lexicon, rng.random() < hard_fraction)
        src.append(s)
        tgt.append(t)
    return Corpus(src, tgt)


def write_bitext(corpus, source_path, target_path):
    with open(source_path, "w", encoding="utf-8", newline="\n") as fs, \
            open(target_path, "w", encoding="utf-8", newline="\n") as ft:
        for _, s, t in corpus:
            fs.write(" ".join(s) + "\n")
            ft.write(" ".join(t) + "\n")
