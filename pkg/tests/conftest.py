import numpy as np
import pytest

from nmtselect.corpus import Corpus, build_vocab, numericalize
from nmtselect.model import ModelConfig, init_params
from nmtselect.synthetic import make_synthetic


@pytest.fixture
def tiny_text():
    src = [["a", "b", "c"], ["b", "c"], ["a", "a", "d", "e"], ["e"], ["c", "d", "b", "a", "e"]]
    tgt = [["x", "y"], ["y", "z", "z"], ["x"], ["w", "x", "y", "z"], ["z", "y"]]
    return Corpus(src, tgt)


@pytest.fixture
def tiny(tiny_text):
    sv = build_vocab(tiny_text, "source")
    tv = build_vocab(tiny_text, "target")
    return numericalize(tiny_text, sv, tv)


@pytest.fixture(scope="session")
def desk_data():
    """Small synthetic train / valid pair sharing one vocabulary."""
    train = make_synthetic(200, seed=[5, 0])
    valid = make_synthetic(40, seed=[5, 1])
    sv, tv = build_vocab(train, "source"), build_vocab(train, "target")
    return numericalize(train, sv, tv), numericalize(valid, sv, tv)


def small_model(src_v=9, tgt_v=8, hidden=5, emb=4, layers=1, cell="lstm", dtype="float64",
                seed=0, scale=0.3, dropout=0.0, dec_layers=0):
    cfg = ModelConfig(src_vocab_size=src_v, tgt_vocab_size=tgt_v, embedding_dim=emb,
                      hidden_dim=hidden, encoder_layers=layers, decoder_layers=dec_layers,
                      dropout=dropout, cell=cell, init_scale=scale, dtype=dtype)
    return init_params(cfg, seed)


def random_pairs(rng, n, src_v, tgt_v, max_len=6):
    from nmtselect.corpus import SentencePair
    out = []
    for i in range(n):
        s = rng.integers(4, src_v, size=int(rng.integers(1, max_len + 1)))
        t = rng.integers(4, tgt_v, size=int(rng.integers(1, max_len + 1)))
        out.append(SentencePair(i, tuple(s.tolist()), tuple(t.tolist())))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------------ acceptance summary

_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n = marker.args[0]
    passed = call.excinfo is None
    details = [v for k, v in item.user_properties if k == "detail"]
    prev = _CRITERIA.get(n)
    ok = passed and (prev is None or prev[0])
    _CRITERIA[n] = (ok, (prev[1] if prev else []) + details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, details = _CRITERIA[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}"
                      + (f"  ({'; '.join(details)})" if details else ""))
