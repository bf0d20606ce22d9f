"""Acceptance criteria 1-11, one test (or parametrized group) per criterion.

Each test is tagged ``criterion(n)``; the summary hook in conftest prints a
single PASS/FAIL line per criterion at the end of the run.
"""
import filecmp
import math
import time

import numpy as np
import pytest

from conftest import random_pairs, small_model
from nmtselect import trainer
from nmtselect.corpus import Corpus, RESERVED, Vocabulary, build_vocab, collate, numericalize
from nmtselect.difficulty import DifficultyLedger, NormalizationMode
from nmtselect.evaluation import EnsembleConfig, bleu, evaluate_ensemble
from nmtselect.model import ModelConfig, forward_nll, init_params
from nmtselect.model.gradcheck import check_gradients
from nmtselect.policy import Policy, PolicyConfig, plan_boost, plan_bootstrap, plan_reduce
from nmtselect.report import Series, first_epoch_reaching, trend_summary
from nmtselect.synthetic import make_synthetic
from nmtselect.trainer import TrainConfig, run_experiment, train
from test_bleu import oracle_bleu

EPOCHS = 18


def _ceil_frac(num, den, n):
    return -(-num * n // den)   # integer ceil(num/den * n)


# ---------------------------------------------------------------- 1

@pytest.mark.criterion(1)
@pytest.mark.parametrize("n", [10, 100, 12345])
def test_policy_arithmetic(n, record_property):
    rng = np.random.default_rng(n)
    ledger = DifficultyLedger()
    for i in range(n):
        ledger.record(i, float(rng.uniform(0, 30)), int(rng.integers(1, 40)), epoch=1)
    t0 = time.perf_counter()
    sizes = {}
    for kind in ("default", "boost", "reduce", "bootstrap"):
        pol = Policy(PolicyConfig(kind=kind, seed=7), n)
        sizes[kind] = [len(pol.plan(e, ledger)) for e in range(1, EPOCHS + 1)]
    elapsed = time.perf_counter() - t0

    cycle = [n, _ceil_frac(4, 5, n), _ceil_frac(4, 5, _ceil_frac(4, 5, n))]
    assert sizes["default"] == [n] * EPOCHS
    assert sizes["boost"] == [n] + [n + _ceil_frac(1, 10, n)] * (EPOCHS - 1)
    assert sizes["reduce"] == cycle * (EPOCHS // 3)
    assert sizes["bootstrap"] == [n] * EPOCHS
    assert elapsed < 1.0
    record_property("detail", f"N={n}: reduce cycle {cycle}, {elapsed * 1e3:.0f} ms")


# ---------------------------------------------------------------- 2

def _brute_top(ids, score_of, k):
    return sorted(sorted(ids, key=lambda i: (-score_of(i), i))[:k])


@pytest.mark.criterion(2)
def test_hardness_selection_matches_brute_force(record_property):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    for trial in range(200):
        n = int(rng.integers(1, 1001))
        mode = [NormalizationMode.BY_TARGET_LENGTH, NormalizationMode.NONE][trial % 2]
        ledger = DifficultyLedger()
        # coarse values force many exact ties; a few ids stay unscored
        for i in range(n):
            if rng.random() < 0.97:
                ledger.record(i, float(rng.integers(0, 20)) / 2, int(rng.integers(1, 6)), epoch=1)

        def score_of(i):
            return ledger.score(i, mode) if i in ledger else math.inf

        ratio = float(rng.choice([0.1, 0.25, 0.5, 1.0]))
        k = math.ceil(round(ratio * n, 9))
        plan = plan_boost(ledger, n, ratio, epoch=2, mode=mode)
        dup = sorted(i for i, c in plan.copies() if c == 2)
        assert dup == _brute_top(range(n), score_of, k)

        active = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
        keep = float(rng.choice([0.5, 0.8, 0.9]))
        plan, _ = plan_reduce(ledger, n, keep, 3, epoch=2, active_set=active, mode=mode)
        k = math.ceil(round(keep * len(active), 9))
        assert plan.ids.tolist() == _brute_top(active, score_of, k)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    record_property("detail", f"200 ledgers in {elapsed:.1f} s")


# ---------------------------------------------------------------- 3

@pytest.mark.criterion(3)
def test_bootstrap_distinct_fraction(record_property):
    n = 10_000
    t0 = time.perf_counter()
    fracs = []
    for seed in range(100):
        plan = plan_bootstrap(n, seed, epoch=1)
        assert len(plan) == n
        fracs.append(len(np.unique(plan.ids)) / n)
    elapsed = time.perf_counter() - t0
    mean = float(np.mean(fracs))
    record_property("detail", f"mean distinct fraction {mean:.4f}")
    assert abs(mean - 0.632) <= 0.01
    assert elapsed < 10.0


# ---------------------------------------------------------------- 4

@pytest.mark.criterion(4)
def test_gradient_check_twenty_configs(record_property):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        hidden = int(rng.integers(2, 17))
        src_v, tgt_v = int(rng.integers(6, 31)), int(rng.integers(6, 31))
        p = small_model(src_v=src_v, tgt_v=tgt_v, hidden=hidden, emb=int(rng.integers(2, 9)),
                        layers=int(rng.integers(1, 3)), cell=("lstm", "gru")[k % 2],
                        seed=k, scale=float(rng.uniform(0.1, 0.6)),
                        dropout=0.3 if k % 4 == 3 else 0.0)
        batch = collate(random_pairs(rng, int(rng.integers(1, 5)), src_v, tgt_v, max_len=5))
        errs = check_gradients(p, batch, dropout_on=p.config.dropout > 0, seed=k,
                               max_entries=15, rng=rng)
        worst = max(worst, max(errs.values()))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max relative error {worst:.2e}, {elapsed:.0f} s")
    assert worst < 1e-4
    assert elapsed < 120


# ---------------------------------------------------------------- 5

@pytest.mark.criterion(5)
@pytest.mark.parametrize("V", [10, 100])
def test_uniform_model_anchors(V, record_property):
    words = [f"t{i}" for i in range(V - len(RESERVED))]
    tgt_vocab = Vocabulary(list(RESERVED) + words)
    rng = np.random.default_rng(V)
    src = [[f"s{j}" for j in rng.integers(0, 5, size=int(rng.integers(1, 8)))] for _ in range(40)]
    tgt = [list(rng.choice(words, size=int(rng.integers(1, 8)))) for _ in range(40)]
    corpus = Corpus(src, tgt)
    enc = numericalize(corpus, build_vocab(corpus, "source"), tgt_vocab)
    cfg = ModelConfig(src_vocab_size=len(enc.src_vocab), tgt_vocab_size=V, init_scale=0.0,
                      dtype="float64")
    params = init_params(cfg)
    rec = forward_nll(params, collate(enc.pairs))
    per_token = rec.total / rec.n_tokens.sum()
    ppl = trainer.validate(params, enc, batch_size=16)
    record_property("detail", f"V={V}: nll/token={per_token:.9f}, ppl={ppl:.6f}")
    assert abs(per_token - math.log(V)) < 1e-6
    assert abs(ppl - V) / V < 1e-3


# ---------------------------------------------------------------- 6

@pytest.mark.criterion(6)
def test_bleu_oracle_equivalence(record_property):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    for _ in range(150):
        vocab = [f"w{i}" for i in range(int(rng.integers(2, 7)))]
        refs = [list(rng.choice(vocab, size=int(rng.integers(1, 10))))
                for _ in range(int(rng.integers(1, 6)))]
        hyps = [list(rng.choice(vocab, size=int(rng.integers(0, 10)))) for _ in refs]
        expected, matches, totals = oracle_bleu(hyps, refs)
        rep = bleu(hyps, refs)
        assert (rep.bleu, rep.matches, rep.totals) == (expected, matches, totals)
    same = [["a", "b", "c", "d", "e"], ["f", "g", "h", "i"]]
    assert f"{bleu(same, same).bleu:.2f}" == "100.00"
    assert f"{bleu([['x', 'y', 'z', 'q']], [['a', 'b', 'c', 'd']]).bleu:.2f}" == "0.00"
    assert time.perf_counter() - t0 < 10
    record_property("detail", "150 micro-corpora")


# ---------------------------------------------------------------- 7

@pytest.fixture(scope="module")
def desk_model():
    tr = make_synthetic(1500, seed=[7, 0])
    te = make_synthetic(50, seed=[7, 2])
    sv, tv = build_vocab(tr, "source"), build_vocab(tr, "target")
    train_c, test_c = numericalize(tr, sv, tv), numericalize(te, sv, tv)
    cfg = TrainConfig(max_epochs=6, batch_size=32, eval_bleu=False, save_checkpoints=False)
    res = train(train_c, test_c, cfg, seed=1)
    meta = {"config": {"src_vocab_size": len(sv), "tgt_vocab_size": len(tv)}}
    return res.params, meta, test_c


@pytest.mark.criterion(7)
@pytest.mark.parametrize("k", [2, 4])
def test_ensemble_idempotence(k, desk_model, record_property):
    params, meta, test_c = desk_model
    t0 = time.perf_counter()
    single_rep, single = evaluate_ensemble(EnsembleConfig([(params, meta)]), test_c)
    rep, hyps = evaluate_ensemble(EnsembleConfig([(params, meta)] * k), test_c)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"k={k}: {len(hyps)} sentences identical, BLEU {rep.bleu:.2f}")
    assert len({tuple(h) for h in single}) > 25   # a trained model, not a constant decoder
    assert hyps == single
    assert rep.bleu == single_rep.bleu
    assert elapsed < 60


# ---------------------------------------------------------------- 8

@pytest.mark.criterion(8)
@pytest.mark.parametrize("policy", ["default", "boost", "reduce", "bootstrap"])
def test_ledger_costs_no_forward_passes(policy, monkeypatch, record_property):
    tr = make_synthetic(1000, seed=[8, 0])
    va = make_synthetic(50, seed=[8, 1])
    sv, tv = build_vocab(tr, "source"), build_vocab(tr, "target")
    train_c, valid_c = numericalize(tr, sv, tv), numericalize(va, sv, tv)

    calls = {"train": {}, "other": 0}
    real = trainer.network.forward_nll

    def counting(params, batch, dropout_on=False, seed=0, batch_index=None):
        if dropout_on:
            epoch = seed[1]
            calls["train"][epoch] = calls["train"].get(epoch, 0) + 1
        else:
            calls["other"] += 1
        return real(params, batch, dropout_on, seed, batch_index)

    monkeypatch.setattr(trainer.network, "forward_nll", counting)
    cfg = TrainConfig(policy=policy, max_epochs=4, batch_size=64, eval_bleu=False,
                      save_checkpoints=False, hidden_dim=16, embedding_dim=8)
    res = train(train_c, valid_c, cfg, seed=3)
    expected = {p.epoch: math.ceil(len(p) / 64) for p in res.plans}
    record_property("detail", f"{policy}: passes {[calls['train'][e] for e in sorted(expected)]}"
                              f" == batches {[expected[e] for e in sorted(expected)]}")
    assert calls["train"] == expected
    # the only other forward passes are validation, once per epoch
    assert calls["other"] == 4 * math.ceil(len(valid_c) / 64)


# ---------------------------------------------------------------- 9

@pytest.mark.criterion(9)
@pytest.mark.parametrize("policy", ["default", "boost", "reduce", "bootstrap"])
def test_reproducible_outputs(policy, desk_data, tmp_path, record_property):
    train_c, valid_c = desk_data
    cfg = TrainConfig(policy=policy, max_epochs=4, batch_size=32, seeds=(1, 2),
                      save_checkpoints=False, hidden_dim=16, embedding_dim=8)
    run_experiment(train_c, valid_c, cfg, out_dir=tmp_path / "a")
    run_experiment(train_c, valid_c, cfg, out_dir=tmp_path / "b")
    names = ["metrics.csv", "metrics_mean.csv"] + [f"seed-{s}/{f}" for s in (1, 2)
                                                    for f in ("metrics.csv", "plans.csv")]
    for name in names:
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name
    record_property("detail", f"{policy}: {len(names)} files byte-identical")


# ---------------------------------------------------------------- 10

@pytest.mark.slow
@pytest.mark.criterion(10)
def test_desk_scale_trend(record_property):
    tr = make_synthetic(3000, seed=[0, 0])
    va = make_synthetic(300, seed=[0, 1])
    sv, tv = build_vocab(tr, "source"), build_vocab(tr, "target")
    train_c, valid_c = numericalize(tr, sv, tv), numericalize(va, sv, tv)
    t0 = time.perf_counter()
    series = {}
    for policy in ("default", "boost", "reduce"):
        cfg = TrainConfig(policy=policy, seeds=(1, 2, 3), batch_size=32, preset="desk")
        _, mean = run_experiment(train_c, valid_c, cfg)
        series[policy] = Series(policy, policy, mean)
    elapsed = time.perf_counter() - t0

    units = {p: s.cumulative_units() for p, s in series.items()}
    share = units["reduce"] / units["default"]
    target = series["default"].final("bleu")
    reach = {p: first_epoch_reaching(s, "bleu", target) for p, s in series.items()}
    ordering = (all(reach[p] is not None and reach[p] <= EPOCHS for p in ("boost", "reduce"))
                and series["reduce"].final("bleu") >= target - 0.5)
    finals = ", ".join(f"{p} {s.final('bleu'):.2f}" for p, s in series.items())
    record_property("detail", f"(a) reduce uses {100 * share:.1f}% of default's data")
    record_property("detail", f"(b) {'met' if ordering else 'NOT MET (reported, not gated)'}: "
                              f"final BLEU {finals}; reach epochs {reach}")
    record_property("detail", f"{elapsed / 60:.1f} min")
    print("\n".join(trend_summary(list(series.values()))))

    assert share <= 0.82          # gated: (a)
    assert elapsed < 30 * 60


# ---------------------------------------------------------------- 11

def _lr_column(desk_data, monkeypatch, ppls):
    it = iter(ppls)
    monkeypatch.setattr(trainer, "validate", lambda *a, **k: next(it))
    train_c, valid_c = desk_data
    cfg = TrainConfig(max_epochs=EPOCHS, decay_factor=0.5, eval_bleu=False,
                      save_checkpoints=False, hidden_dim=4, embedding_dim=4, batch_size=100)
    return [r["lr"] for r in train(train_c, valid_c, cfg, seed=1).metrics]


@pytest.mark.criterion(11)
def test_lr_schedule_from_epoch_ten(desk_data, monkeypatch, record_property):
    lrs = _lr_column(desk_data, monkeypatch, [100.0 - e for e in range(EPOCHS)])
    assert lrs == [1.0] * 9 + [0.5 ** k for k in range(1, 10)]
    record_property("detail", "no increase: 1.0 x9 then halving from epoch 10")


@pytest.mark.criterion(11)
def test_lr_schedule_on_validation_increase(desk_data, monkeypatch, record_property):
    ppls = [100.0 - e for e in range(EPOCHS)]
    ppls[4] = ppls[3] + 1.0       # epoch 5 is worse than epoch 4
    lrs = _lr_column(desk_data, monkeypatch, ppls)
    assert lrs == [1.0] * 4 + [0.5 ** k for k in range(1, 15)]
    record_property("detail", "increase at epoch 5: decay from epoch 5")
