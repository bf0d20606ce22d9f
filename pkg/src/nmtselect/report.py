"""Learning-curve tables and plots assembled from run directories."""
import csv
from dataclasses import dataclass
import os

from .trainer import average_metrics, read_metrics_csv

COMBINED_HEADER = ["series", "run", "epoch", "data_units", "data_fraction", "train_ppl",
                   "valid_ppl", "lr", "bleu"]
METRICS = ("bleu", "valid_ppl", "train_ppl", "data_fraction")


class MissingMetrics(FileNotFoundError):
    pass


@dataclass
class Series:
    label: str
    run: str
    rows: list

    def values(self, metric):
        return [r["epoch"] for r in self.rows], [r[metric] for r in self.rows]

    def final(self, metric):
        return self.rows[-1][metric] if self.rows else None

    def cumulative_units(self):
        return sum(r["data_units"] for r in self.rows)


def load_run(run_dir):
    """Per-epoch seed-mean rows of one run directory."""
    mean_path = os.path.join(run_dir, "metrics_mean.csv")
    path = os.path.join(run_dir, "metrics.csv")
    if os.path.isfile(mean_path):
        return read_metrics_csv(mean_path)
    if not os.path.isfile(path):
        raise MissingMetrics(f"no metrics.csv in {run_dir}")
    rows = read_metrics_csv(path)
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(r)
    if len(by_seed) == 1:
        return rows
    return average_metrics(list(by_seed.values()))


def load_series(run_dirs):
    """One Series per run; labels are policy names, disambiguated on clashes."""
    out = []
    for d in run_dirs:
        rows = load_run(d)
        if not rows:
            raise MissingMetrics(f"metrics file in {d} has no rows")
        out.append(Series(rows[0]["policy"], os.path.basename(os.path.normpath(d)), rows))
    counts = {}
    for s in out:
        counts[s.label] = counts.get(s.label, 0) + 1
    for s in out:
        if counts[s.label] > 1:
            s.label = f"{s.label} ({s.run})"
    return out


def _fmt(x):
    return "" if x is None else f"{x:.6g}"


def write_combined_csv(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMBINED_HEADER)
        for s in series:
            for r in s.rows:
                w.writerow([s.label, s.run, r["epoch"]] + [_fmt(r[k]) for k in COMBINED_HEADER[3:]])


def pick_metric(series, metric=None):
    """The requested metric, or BLEU when every series has it, else validation ppl."""
    if metric is not None:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r} (expected one of {list(METRICS)})")
        return metric
    if all(r["bleu"] is not None for s in series for r in s.rows):
        return "bleu"
    return "valid_ppl"


_YLABEL = {"bleu": "BLEU", "valid_ppl": "validation perplexity",
           "train_ppl": "training perplexity", "data_fraction": "fraction of training data"}


def plot_curves(path, series, metric):
    """Write a vector plot with one line per series (epoch on x)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for s in series:
        x, y = s.values(metric)
        pts = [(a, b) for a, b in zip(x, y) if b is not None]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", markersize=3,
                    label=s.label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(_YLABEL[metric])
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def first_epoch_reaching(series, metric, target):
    for r in series.rows:
        if r[metric] is not None and r[metric] >= target:
            return r["epoch"]
    return None


def trend_summary(series, reference="default", tolerance=0.5):
    """Compare each series with the reference policy on BLEU and data use.

    Returns a list of text lines; missing ordering claims are flagged
    rather than hidden.
    """
    ref = next((s for s in series if s.label == reference), None)
    lines = []
    if ref is None:
        return [f"no '{reference}' series; trend comparison skipped"]
    ref_final = ref.final("bleu")
    ref_epoch = ref.rows[-1]["epoch"]
    ref_units = ref.cumulative_units()
    for s in series:
        frac = s.cumulative_units() / ref_units
        line = f"{s.label}: cumulative data {100 * frac:.1f}% of {reference}"
        if ref_final is not None and s.final("bleu") is not None:
            reach = first_epoch_reaching(s, "bleu", ref_final)
            line += (f", final BLEU {s.final('bleu'):.2f}"
                     f", reaches {reference}'s final {ref_final:.2f} at epoch "
                     f"{'never' if reach is None else reach}")
            if s is not ref:
                ok_reach = reach is not None and reach <= ref_epoch
                ok_final = s.final("bleu") >= ref_final - tolerance
                line += f" [{'ok' if ok_reach and ok_final else 'ORDERING NOT MET'}]"
        lines.append(line)
    return lines
