"""Test metrics, grouped result tables and rank-based significance tests."""
import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, norm, rankdata

from .errors import PairingError, SchemaMismatch, UnsupportedK

# Two-tailed Nemenyi critical values q_0.05 for k = 2..10 compared methods.
NEMENYI_Q05 = {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164}
EXACT_WILCOXON_MAX_N = 25

IMPROVES = "I"
WORSENS = "W"
NOT_SIGNIFICANT = "N"

METRIC_KEYS = ("test_ll", "test_rmse", "train_ll", "train_rmse")
RECORD_KEYS = ("dataset", "model", "tuned", "slice", "split", "seed", "failed") + METRIC_KEYS


def metrics(log_densities, predictions, targets):
    """Average log density and RMSE of the predictive means."""
    log_densities = np.asarray(log_densities, dtype=float)
    err = np.asarray(predictions, dtype=float) - np.asarray(targets, dtype=float)
    if err.size == 0:
        raise ValueError("empty test set")
    return float(np.mean(log_densities)), float(np.sqrt(np.mean(err**2)))


def critical_difference(k, n, alpha=0.05):
    if alpha != 0.05:
        raise ValueError("only alpha = 0.05 is tabulated")
    if k not in NEMENYI_Q05:
        raise UnsupportedK(f"no Nemenyi critical value for k={k}")
    return NEMENYI_Q05[k] * math.sqrt(k * (k + 1) / (6.0 * n))


@dataclass
class RankReport:
    models: list
    average_ranks: np.ndarray
    critical_difference: float
    statistic: float
    p_value: float
    groups: list = field(default_factory=list)

    def to_json(self):
        return {
            "models": list(self.models),
            "average_ranks": dict(zip(self.models, map(float, self.average_ranks))),
            "critical_difference": self.critical_difference,
            "friedman_chi2": self.statistic,
            "friedman_p": self.p_value,
            "groups": self.groups,
        }


def _groups(models, ranks, cd):
    """Maximal runs of models (sorted by rank) whose rank spread is below ``cd``."""
    order = np.argsort(ranks, kind="stable")
    r = ranks[order]
    spans = []
    for i in range(len(r)):
        j = i
        while j + 1 < len(r) and r[j + 1] - r[i] < cd:
            j += 1
        if j > i and not any(s <= i and j <= e for s, e in spans):
            spans.append((i, j))
    return [[models[order[t]] for t in range(s, e + 1)] for s, e in spans]


def friedman_ranks(values, models=None, alpha=0.05, higher_is_better=True):
    """Average ranks over observations (columns) for ``k`` models (rows).

    Rank 1 is best; ties get mid-ranks.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("values must be a models x observations matrix")
    k, n = values.shape
    if k < 2 or n < 2:
        raise ValueError("need at least two models and two observations")
    if k > max(NEMENYI_Q05):
        raise UnsupportedK(f"k={k} exceeds the tabulated range 2..10")
    models = list(models) if models is not None else [f"m{i}" for i in range(k)]
    scores = -values if higher_is_better else values
    ranks = np.apply_along_axis(rankdata, 0, scores)
    avg = ranks.mean(axis=1)
    stat = 12.0 * n / (k * (k + 1)) * (np.sum(avg**2) - k * (k + 1) ** 2 / 4.0)
    cd = critical_difference(k, n, alpha)
    return RankReport(models, avg, cd, float(stat), float(chi2.sf(stat, k - 1)), _groups(models, avg, cd))


def _signed_rank_null(doubled_ranks):
    """Null distribution of twice the positive rank sum, as counts indexed by value."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


@dataclass(frozen=True)
class WilcoxonResult:
    verdict: str
    p_value: float
    w_plus: float
    w_minus: float
    n: int


def wilcoxon_signed_rank(a, b, alpha=0.05, higher_is_better=True):
    """Two-sided signed-rank test on paired samples.

    The verdict is ``I`` when ``a`` is significantly better than ``b``,
    ``W`` when significantly worse, ``N`` otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise PairingError(f"paired samples differ in shape: {a.shape} vs {b.shape}")
    if a.size < 5:
        raise ValueError("need at least 5 pairs")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(NOT_SIGNIFICANT, 1.0, 0.0, 0.0, 0)
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_null(doubled)
        probs = counts / counts.sum()
        w2 = int(round(2 * w_plus))
        tail = min(probs[: w2 + 1].sum(), probs[w2:].sum())
        p = min(1.0, 2.0 * tail)
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
        p = float(2.0 * norm.sf(z))
    if p >= alpha or w_plus == w_minus:
        verdict = NOT_SIGNIFICANT
    else:
        a_better = (w_plus > w_minus) == higher_is_better
        verdict = IMPROVES if a_better else WORSENS
    return WilcoxonResult(verdict, float(p), w_plus, w_minus, n)


def _as_dict(record):
    rec = record.to_json() if hasattr(record, "to_json") else dict(record)
    missing = [k for k in RECORD_KEYS if k not in rec]
    if missing:
        raise SchemaMismatch(f"record lacks fields {missing}")
    return rec


def _summary(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"mean": float("nan"), "stderr": float("nan"), "n": 0}
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "stderr": se, "n": int(v.size)}


@dataclass
class MetricTable:
    """Rows keyed by ``(dataset, model, tuned, slice)``."""

    rows: dict

    def row(self, dataset, model, tuned=True, slice_=True):
        return self.rows[(dataset, model, tuned, slice_)]


def aggregate(records):
    """Grouped means and standard errors of every metric over successful splits."""
    groups = defaultdict(list)
    for r in map(_as_dict, records):
        groups[(r["dataset"], r["model"], bool(r["tuned"]), bool(r["slice"]))].append(r)
    rows = {}
    for key, recs in sorted(groups.items()):
        ok = [r for r in recs if not r["failed"]]
        row = {m: _summary([r[m] for r in ok]) for m in METRIC_KEYS}
        row["n_failed"] = len(recs) - len(ok)
        row["single"] = len(ok) == 1
        rows[key] = row
    return MetricTable(rows)


def _pair_key(r):
    return (r["split"], json.dumps(r["seed"]))


def paired_differences(records, flag):
    """Per (dataset, model) paired metric differences ``flag=True`` minus ``flag=False``.

    ``flag`` is ``"tuned"`` or ``"slice"``; the other flag is held fixed.
    Groups present on only one side are skipped; groups present on both sides
    must match split for split.
    """
    if flag not in ("tuned", "slice"):
        raise ValueError(f"cannot difference on {flag!r}")
    other = "slice" if flag == "tuned" else "tuned"
    sides = defaultdict(lambda: ({}, {}))
    for r in map(_as_dict, records):
        key = (r["dataset"], r["model"], bool(r[other]))
        side = sides[key][0 if r[flag] else 1]
        pk = _pair_key(r)
        if pk in side:
            raise PairingError(f"duplicate record for {key} split {pk}")
        side[pk] = r
    out = {}
    for key, (on, off) in sorted(sides.items()):
        if not on or not off:
            continue
        if on.keys() != off.keys():
            raise PairingError(f"{key}: {flag} runs cover different splits")
        row = {}
        for m in METRIC_KEYS:
            diffs = [
                on[k][m] - off[k][m] for k in sorted(on) if not on[k]["failed"] and not off[k]["failed"]
            ]
            row[m] = _summary(diffs)
        out[key] = row
    return out


def write_metric_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["dataset", "model", "tuned", "slice", "n", "n_failed"]
        for m in METRIC_KEYS:
            header += [f"{m}_mean", f"{m}_stderr", f"{m} ± stderr"]
        w.writerow(header)
        for (ds, model, tuned, slc), row in table.rows.items():
            line = [ds, model, tuned, slc, row["test_ll"]["n"], row["n_failed"]]
            for m in METRIC_KEYS:
                s = row[m]
                line += [s["mean"], s["stderr"], f"{s['mean']:.3f} ± {s['stderr']:.3f}"]
            w.writerow(line)


def write_diff_csv(diffs, flag, path):
    other = "slice" if flag == "tuned" else "tuned"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["dataset", "model", other, "n"]
        for m in METRIC_KEYS:
            header += [f"{m}_diff_mean", f"{m}_diff_stderr"]
        w.writerow(header)
        for (ds, model, fixed), row in diffs.items():
            line = [ds, model, fixed, row["test_ll"]["n"]]
            for m in METRIC_KEYS:
                line += [row[m]["mean"], row[m]["stderr"]]
            w.writerow(line)


def rank_records(records, metric="test_ll"):
    """Friedman ranks of models over every (dataset, split) cell all models completed."""
    cells = defaultdict(dict)
    for r in map(_as_dict, records):
        if not r["failed"]:
            cells[(r["dataset"], r["split"])][r["model"]] = r[metric]
    models = sorted({m for c in cells.values() for m in c})
    complete = [c for _, c in sorted(cells.items()) if all(m in c for m in models)]
    if not complete:
        raise PairingError("no (dataset, split) cell contains every model")
    values = np.array([[c[m] for c in complete] for m in models])
    return friedman_ranks(values, models, higher_is_better=not metric.endswith("rmse"))


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
