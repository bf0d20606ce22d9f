import csv
import math

import numpy as np
import pytest

from nmtselect.difficulty import (DifficultyLedger, Granularity, NormalizationMode, Unscored,
                                  rank_key, score_record)


def test_length_normalised_perplexity():
    led = DifficultyLedger().record(3, 10 * math.log(50000), 10, epoch=1)
    assert led.score(3, "length") == pytest.approx(50000, rel=1e-12)
    assert led.score(3, NormalizationMode.NONE) == pytest.approx(10 * math.log(50000))


def test_batch_size_mode_divides_by_member_count():
    led = DifficultyLedger(Granularity.BATCH)
    led.record_batch(0, [4, 5], [2.0, 4.0], [3, 3], epoch=1)
    assert led.score((1, 0), "batch") == pytest.approx(math.exp(3.0))
    assert led.score((1, 0), "length") == pytest.approx(math.exp(1.0))


def test_unscored_unit():
    led = DifficultyLedger()
    with pytest.raises(Unscored):
        led.score(1, "length")
    assert np.isinf(led.sentence_scores([1, 2], "length")).all()


def test_newer_record_replaces_older_and_older_is_rejected():
    led = DifficultyLedger()
    led.record(1, 5.0, 5, epoch=2)
    led.record(1, 1.0, 5, epoch=2)   # same epoch: the later observation wins
    assert led.records[1].nll == 1.0
    led.record(1, 2.0, 4, epoch=3)
    assert led.records[1].epoch == 3
    with pytest.raises(ValueError, match="older"):
        led.record(1, 2.0, 4, epoch=2)


@pytest.mark.parametrize("nll,length", [(float("nan"), 3), (-1.0, 3), (1.0, 0),
                                        (float("inf"), 2)])
def test_invalid_records(nll, length):
    with pytest.raises(ValueError):
        DifficultyLedger().record(0, nll, length, epoch=1)


def test_huge_perplexity_overflows_to_inf_but_ranks_finitely():
    led = DifficultyLedger().record(0, 1000.0, 1, epoch=1).record(1, 900.0, 1, epoch=1)
    assert led.score(0, "length") == math.inf
    keys = led.sentence_scores([0, 1], "length", ranking=True)
    assert keys[0] > keys[1] and np.isfinite(keys).all()


def test_batch_scores_project_onto_members():
    led = DifficultyLedger("batch")
    led.record_batch(0, [1, 2], [1.0, 1.0], [1, 1], epoch=1)
    led.record_batch(1, [3], [6.0], [2], epoch=1)
    led.record_batch(0, [2], [0.2], [2], epoch=2)
    s = led.sentence_scores([1, 2, 3, 9], "length", ranking=True)
    assert s.tolist() == [1.0, 0.1, 3.0, math.inf]
    assert sorted(led.units(epoch=1)) == [(1, 0), (1, 1)]


def test_sentence_granularity_batch_recording():
    led = DifficultyLedger()
    led.record_batch(7, np.array([5, 6]), np.array([2.0, 3.0]), np.array([2, 3]), epoch=1)
    assert set(led.units()) == {5, 6}
    assert led.score(6, "length") == pytest.approx(math.e)


def test_ranking_key_is_monotone_in_score():
    rng = np.random.default_rng(0)
    led = DifficultyLedger()
    for i in range(50):
        led.record(i, float(rng.uniform(0, 40)), int(rng.integers(1, 20)), epoch=1)
    for mode in NormalizationMode:
        recs = list(led.records.values())
        ks = [rank_key(r, mode) for r in recs]
        ss = [score_record(r, mode) for r in recs]
        assert np.argsort(ks, kind="stable").tolist() == np.argsort(ss, kind="stable").tolist()


def test_csv_export(tmp_path):
    led = DifficultyLedger()
    led.record(2, 3.0, 3, epoch=1).record(10, 6.0, 2, epoch=2)
    path = tmp_path / "ledger.csv"
    led.to_csv(path, "length")
    led.to_csv(path, "length", epoch=2, append=True)
    rows = list(csv.DictReader(open(path)))
    assert [r["unit_id"] for r in rows] == ["2", "10", "10"]
    assert float(rows[1]["score"]) == pytest.approx(math.exp(3.0))
    assert rows[0]["score_mode"] == "length"


def test_mode_parsing():
    assert NormalizationMode.parse("BY_BATCH_SIZE") is NormalizationMode.BY_BATCH_SIZE
    assert Granularity.parse("Sentence") is Granularity.SENTENCE
    with pytest.raises(ValueError):
        NormalizationMode.parse("token")
    with pytest.raises(ValueError):
        Granularity.parse("word")
