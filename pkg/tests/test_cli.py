import csv
import filecmp
import json
import shutil

import pytest

from nmtselect import cli
from nmtselect.policy import ceil_fraction
from nmtselect.trainer import write_metrics_csv

SMALL_FLAGS = ["--hidden", "8", "--embedding", "6", "--batch-size", "32", "--epochs", "3",
               "--dtype", "float64"]


def run(*argv):
    return cli.main(["-q", *map(str, argv)])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw"
    assert run("synth", "--out", raw, "--pairs", 300, "--valid", 30, "--test", 20, "--seed", 4) == 0
    out = root / "prep"
    assert run("prepare", "--train-src", raw / "train.src", "--train-tgt", raw / "train.tgt",
               "--valid-src", raw / "valid.src", "--valid-tgt", raw / "valid.tgt",
               "--test-src", raw / "test.src", "--test-tgt", raw / "test.tgt",
               "--out", out) == 0
    return out


def _plan_sizes(path):
    sizes = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            sizes[int(row["epoch"])] = sizes.get(int(row["epoch"]), 0) + int(row["copies"])
    return [sizes[e] for e in sorted(sizes)]


def test_human_counts_match_corpus_table_style():
    assert [cli.human_count(n) for n in (1_000_000, 24_000_000, 26_400_000, 5000, 5200, 999)] \
        == ["1M", "24M", "26M", "5K", "5.2K", "999"]
    table = cli.stats_table([dict(split="train", sentences=1_000_000, source_tokens=24_000_000,
                                  target_tokens=26_000_000)], "EN", "FR")
    assert table.splitlines()[0].split() == ["Data", "Sentences", "Tokens", "EN", "Tokens", "FR"]
    assert table.splitlines()[1].split() == ["train", "1M", "24M", "26M"]


def test_prepare_stats_count_every_pair(tmp_path, capsys):
    raw = tmp_path / "raw"
    assert run("synth", "--out", raw, "--pairs", 5000, "--valid", 0, "--test", 0) == 0
    out = tmp_path / "prep"
    assert run("prepare", "--train-src", raw / "train.src", "--train-tgt", raw / "train.tgt",
               "--out", out) == 0
    row = next(csv.DictReader(open(out / "stats.csv")))
    assert row["sentences"] == row["raw_sentences"] == "5000"
    assert len((out / "train.ids").read_text().split()) == 5000
    assert "5K" in capsys.readouterr().out


def test_prepare_missing_file_exits_2_with_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.src"
    assert run("prepare", "--train-src", missing, "--train-tgt", missing, "--out", tmp_path) == 2
    assert str(missing) in capsys.readouterr().err


def test_prepare_mismatched_lines_exits_2(tmp_path):
    (tmp_path / "a.src").write_text("a\nb\n")
    (tmp_path / "a.tgt").write_text("x\n")
    assert run("prepare", "--train-src", tmp_path / "a.src", "--train-tgt", tmp_path / "a.tgt",
               "--out", tmp_path / "p") == 2


def test_train_reduce_plan_cycle(data_dir, tmp_path):
    assert run("train", "--data", data_dir, "--out-root", tmp_path, "--run-id", "r",
               "--policy", "reduce", "--no-bleu", "--no-checkpoints", *SMALL_FLAGS,
               "--epochs", 4) == 0
    n = len((data_dir / "train.ids").read_text().split())
    m = ceil_fraction(0.8, n)
    assert _plan_sizes(tmp_path / "r" / "seed-11" / "plans.csv") == [n, m, ceil_fraction(0.8, m), n]


def test_train_boost_sizes_and_seed_merge(data_dir, tmp_path):
    assert run("train", "--data", data_dir, "--out-root", tmp_path, "--run-id", "b",
               "--policy", "boost", "--seeds", "11,13", "--no-bleu", "--no-checkpoints",
               *SMALL_FLAGS) == 0
    n = len((data_dir / "train.ids").read_text().split())
    run_dir = tmp_path / "b"
    for s in (11, 13):
        assert _plan_sizes(run_dir / f"seed-{s}" / "plans.csv") == [n] + [n + ceil_fraction(0.1, n)] * 2
    rows = list(csv.DictReader(open(run_dir / "metrics.csv")))
    assert sorted({r["seed"] for r in rows}) == ["11", "13"]
    mean = list(csv.DictReader(open(run_dir / "metrics_mean.csv")))
    assert len(mean) == 3 and {r["seed"] for r in mean} == {"mean"}
    manifest = json.load(open(run_dir / "manifest.json"))
    assert manifest["seeds"] == [11, 13] and manifest["run_id"] == "b"


def test_config_file_with_flag_override(data_dir, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("policy = reduce\nmax_epochs = 5\nhidden_dim = 8\nembedding_dim = 6\n"
                   "eval_bleu = false\nsave_checkpoints = false\n")
    assert run("train", "--data", data_dir, "--config", cfg, "--epochs", 2,
               "--out-root", tmp_path, "--run-id", "c") == 0
    rows = list(csv.DictReader(open(tmp_path / "c" / "metrics.csv")))
    assert len(rows) == 2 and rows[0]["policy"] == "reduce"
    assert "max_epochs = 2" in (tmp_path / "c" / "config.txt").read_text()


def test_unknown_config_key_exits_2_naming_it(data_dir, tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("learning_rte = 0.5\n")
    assert run("train", "--data", data_dir, "--config", cfg, "--out-root", tmp_path) == 2
    assert "learning_rte" in capsys.readouterr().err


def test_manifest_replay_is_byte_identical(data_dir, tmp_path):
    assert run("train", "--data", data_dir, "--out-root", tmp_path, "--run-id", "orig",
               "--policy", "bootstrap", "--no-checkpoints", *SMALL_FLAGS) == 0
    assert run("train", "--manifest", tmp_path / "orig" / "manifest.json",
               "--out-root", tmp_path) == 0
    a, b = tmp_path / "orig", tmp_path / "orig-replay"
    for name in ("metrics.csv", "metrics_mean.csv", "seed-11/plans.csv", "seed-11/ledger.csv"):
        assert filecmp.cmp(a / name, b / name, shallow=False), name
    assert run("train", "--manifest", a / "manifest.json", "--epochs", 2,
               "--out-root", tmp_path) == 2


def test_replay_refuses_changed_corpus(data_dir, tmp_path):
    copy = tmp_path / "data"
    shutil.copytree(data_dir, copy)
    assert run("train", "--data", copy, "--out-root", tmp_path, "--run-id", "x", "--no-bleu",
               "--no-checkpoints", *SMALL_FLAGS, "--epochs", 1) == 0
    with open(copy / "train.ids", "a") as fh:
        fh.write("\n")
    assert run("train", "--manifest", tmp_path / "x" / "manifest.json",
               "--out-root", tmp_path) == 2


def test_existing_or_locked_run_dir_exits_2(data_dir, tmp_path):
    def train(run_id):
        return run("train", "--data", data_dir, "--out-root", tmp_path, "--run-id", run_id,
                   "--no-bleu", "--no-checkpoints", *SMALL_FLAGS, "--epochs", 1)
    assert train("d") == 0
    assert train("d") == 2
    (tmp_path / "l").mkdir()
    (tmp_path / "l" / ".lock").write_text("123")
    assert train("l") == 2


def test_output_root_from_environment(data_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "env-root"))
    assert run("train", "--data", data_dir, "--run-id", "e", "--no-bleu", "--no-checkpoints",
               *SMALL_FLAGS, "--epochs", 1) == 0
    assert (tmp_path / "env-root" / "e" / "metrics.csv").exists()


def test_train_without_data_or_valid_split(tmp_path, data_dir):
    assert run("train", "--out-root", tmp_path) == 2
    assert run("train", "--data", tmp_path, "--out-root", tmp_path) == 2


REFERENCE_CURVES = {
    "default": [38.85, 44.45, 45.58, 47.37, 48.15, 48.52, 49.15, 49.67, 49.36, 50.55, 50.83,
                51.77, 52.31, 52.27, 52.44, 52.61, 52.59, 52.49],
    "boost": [35.86, 45.42, 48.64, 48.83, 50.23, 50.96, 51.37, 52.56, 52.69, 53.37, 53.61,
              53.77, 54.04, 54.09, 53.92, 53.95, 53.98, 53.98],
    "reduce": [35.86, 43.84, 46.65, 47.3, 49.15, 50.25, 49.78, 50.7, 51.08, 51.66, 52.6, 53.18,
               53.42, 53.96, 53.88, 54.15, 54.17, 54.12],
    "bootstrap": [38.91, 43.94, 46.19, 46.47, 48.69, 48.95, 49.45, 50.31, 50.8, 51.04, 51.86,
                  52.11, 52.86, 52.73, 53.37, 53.45, 53.44, 53.36],
}
FRACTIONS = {"default": [1.0] * 18, "boost": [1.0] + [1.1] * 17,
             "reduce": [1.0, 0.8, 0.64] * 6, "bootstrap": [1.0] * 18}


def _fake_run(root, policy, curve, fractions):
    rows = [{"epoch": e, "policy": policy, "seed": 1, "data_units": int(round(f * 1e6)),
             "data_fraction": f, "train_ppl": 5.0, "valid_ppl": 6.0, "lr": 1.0, "bleu": b,
             "seconds": None} for e, (b, f) in enumerate(zip(curve, fractions), 1)]
    path = root / policy
    path.mkdir()
    write_metrics_csv(path / "metrics.csv", rows)
    return path


def test_report_from_reference_curves(tmp_path):
    runs = [_fake_run(tmp_path, p, c, FRACTIONS[p]) for p, c in REFERENCE_CURVES.items()]
    out = tmp_path / "report"
    assert run("report", *runs, "--out", out) == 0
    rows = list(csv.DictReader(open(out / "report.csv")))
    final = {r["series"]: float(r["bleu"]) for r in rows if r["epoch"] == "18"}
    assert final["default"] == 52.49 and final["reduce"] == 54.12
    svg = (out / "curves-bleu.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg
    summary = (out / "summary.txt").read_text()
    assert "reduce: cumulative data" in summary and "[ok]" in summary


def test_report_single_run_and_identical_runs(tmp_path):
    a = _fake_run(tmp_path, "default", REFERENCE_CURVES["default"], FRACTIONS["default"])
    out = tmp_path / "one"
    assert run("report", a, "--out", out) == 0
    assert {r["series"] for r in csv.DictReader(open(out / "report.csv"))} == {"default"}
    twin = tmp_path / "twin"
    twin.mkdir()
    (twin / "metrics.csv").write_bytes((a / "metrics.csv").read_bytes())
    out2 = tmp_path / "two"
    assert run("report", a, twin, "--out", out2) == 0
    rows = list(csv.DictReader(open(out2 / "report.csv")))
    series = sorted({r["series"] for r in rows})
    assert len(series) == 2
    by = {s: [r["bleu"] for r in rows if r["series"] == s] for s in series}
    assert by[series[0]] == by[series[1]]


def test_report_missing_metrics_exits_2(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run("report", tmp_path / "empty", "--out", tmp_path / "o") == 2


@pytest.fixture(scope="module")
def checkpoint(data_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("ens")
    assert run("train", "--data", data_dir, "--out-root", root, "--run-id", "m", "--no-bleu",
               *SMALL_FLAGS, "--epochs", 2) == 0
    ckpts = sorted((root / "m" / "seed-11" / "ckpt").iterdir())
    return ckpts[-1]


def test_ensemble_of_one_equals_plain_evaluation(data_dir, checkpoint, tmp_path):
    from nmtselect.cli import load_prepared
    from nmtselect.evaluation import evaluate_checkpoint
    out = tmp_path / "e1"
    assert run("ensemble", checkpoint, "--data", data_dir, "--beam", 3, "--out", out) == 0
    _, corpora, _ = load_prepared(str(data_dir), ("test",))
    report, hyps = evaluate_checkpoint(str(checkpoint), corpora["test"], beam_width=3)
    assert (out / "hypotheses.txt").read_text() == "".join(" ".join(h) + "\n" for h in hyps)
    row = list(csv.DictReader(open(out / "report.csv")))[0]
    assert row["members"] == "1" and row["bleu"] == f"{report.bleu:.4f}"


def test_ensemble_is_repeatable(data_dir, checkpoint, tmp_path):
    for name in ("a", "b"):
        assert run("ensemble", checkpoint, checkpoint, "--data", data_dir, "--beam", 2,
                   "--out", tmp_path / name) == 0
    assert filecmp.cmp(tmp_path / "a" / "hypotheses.txt", tmp_path / "b" / "hypotheses.txt",
                       shallow=False)


def test_ensemble_vocab_mismatch_exits_2(checkpoint, tmp_path, capsys):
    raw = tmp_path / "raw"
    assert run("synth", "--out", raw, "--pairs", 50, "--valid", 0, "--test", 10, "--seed", 99,
               "--hard-fraction", 0.9) == 0
    other = tmp_path / "other"
    assert run("prepare", "--train-src", raw / "train.src", "--train-tgt", raw / "train.tgt",
               "--test-src", raw / "test.src", "--test-tgt", raw / "test.tgt", "--out", other) == 0
    assert run("ensemble", checkpoint, "--data", other, "--out", tmp_path / "o") == 2
    assert "vocabulary" in capsys.readouterr().err


def test_ensemble_missing_checkpoint_exits_2(data_dir, tmp_path):
    assert run("ensemble", tmp_path / "none.npz", "--data", data_dir,
               "--out", tmp_path / "o") == 2
