"""Metric aggregation and artifact rendering: tables, CDF series, plots.

Result files are line-delimited JSON rows, one per episode (or per test
window), each carrying the task, method, setting, and config digest so a
file is self-describing. Report digests cover the rows and config, never
wall-clock runtime, so reruns with the same seed hash identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import canonical_json, digest_bytes
from .errors import InputError, UsageError


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile consistent with the sorted sample."""
    if len(values) == 0:
        raise InputError("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise InputError(f"percentile {p} outside [0, 100]")
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 1:
        return float(v[0])
    rank = (p / 100.0) * (len(v) - 1)
    lo = int(np.floor(rank))
    hi = int(np.ceil(rank))
    frac = rank - lo
    return float(v[lo] * (1 - frac) + v[hi] * frac)


def cdf_points(values) -> list:
    """(value, cumulative fraction) pairs; fractions climb from 1/n to 1."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        raise InputError("CDF of an empty sample")
    return [(float(v[i]), (i + 1) / n) for i in range(n)]


@dataclass
class MetricsReport:
    """Aggregated per-episode metric values for one (task, method, setting)."""

    task: str
    method: str
    setting: str
    metric: str
    values: tuple
    runtime_s: float = 0.0
    config_digest: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.values) == 0:
            raise InputError("a report needs at least one episode value")
        self.values = tuple(float(v) for v in self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def percentiles(self) -> dict:
        return {"p10": percentile(self.values, 10),
                "p50": percentile(self.values, 50),
                "p90": percentile(self.values, 90)}

    def cdf(self) -> list:
        return cdf_points(self.values)

    def digest(self) -> str:
        payload = {"task": self.task, "method": self.method,
                   "setting": self.setting, "metric": self.metric,
                   "values": list(self.values),
                   "config_digest": self.config_digest,
                   "extras": self.extras}
        return digest_bytes(canonical_json(payload).encode())

    def summary_dict(self) -> dict:
        out = {"task": self.task, "method": self.method,
               "setting": self.setting, "metric": self.metric,
               "count": len(self.values), "mean": self.mean,
               **self.percentiles(),
               "runtime_s": self.runtime_s,
               "config_digest": self.config_digest,
               "report_digest": self.digest()}
        if self.extras:
            out["extras"] = self.extras
        return out


def write_results(path, report: MetricsReport, rows: list) -> Path:
    """results JSONL (one row per episode) plus a sibling summary file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for row in rows:
            fh.write(canonical_json(row) + "\n")
    summary = path.with_suffix(".summary.json")
    summary.write_text(json.dumps(report.summary_dict(), sort_keys=True,
                                  indent=2) + "\n")
    return path


def load_results(path) -> list:
    path = Path(path)
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    if not rows:
        raise InputError(f"no result rows in {path}")
    return rows


def report_from_rows(rows: list, runtime_s: float = 0.0) -> MetricsReport:
    head = rows[0]
    for key in ("task", "method", "setting", "metric", "value"):
        if key not in head:
            raise InputError(f"result rows are missing the {key!r} field")
    extras = {}
    return MetricsReport(
        task=head["task"], method=head["method"], setting=head["setting"],
        metric=head["metric"], values=tuple(r["value"] for r in rows),
        runtime_s=runtime_s, config_digest=head.get("config_digest", ""),
        extras=extras)


# -- cross-method comparison ---------------------------------------------------


LOWER_IS_BETTER = {"mae", "jct"}


def comparison_table(reports: list) -> str:
    """Per-method means with improvement relative to the first method."""
    if not reports:
        raise UsageError("nothing to compare: no result files given")
    tasks = {r.task for r in reports}
    if len(tasks) > 1:
        raise UsageError(
            f"refusing to compare results from different tasks: {sorted(tasks)}")
    metric = reports[0].metric
    base = reports[0].mean
    lower_better = metric in LOWER_IS_BETTER
    lines = [f"task: {reports[0].task}   metric: {metric}"
             f"   ({'lower' if lower_better else 'higher'} is better)",
             f"{'method':<20} {'setting':<16} {'mean':>12} {'p50':>12} "
             f"{'p90':>12} {'improvement':>12}"]
    for r in reports:
        if base == 0:
            imp = float("nan")
        elif lower_better:
            imp = (base - r.mean) / abs(base) * 100.0
        else:
            imp = (r.mean - base) / abs(base) * 100.0
        pct = r.percentiles()
        lines.append(f"{r.method:<20} {r.setting:<16} {r.mean:>12.4f} "
                     f"{pct['p50']:>12.4f} {pct['p90']:>12.4f} {imp:>11.1f}%")
    return "\n".join(lines) + "\n"


def minmax_normalize(per_method: dict, higher_better: bool) -> dict:
    """Map the best method to 1 and the worst to 0; ties map everyone to 1."""
    if not per_method:
        raise InputError("nothing to normalize")
    vals = list(per_method.values())
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return {k: 1.0 for k in per_method}
    out = {}
    for k, v in per_method.items():
        score = (v - lo) / (hi - lo)
        out[k] = score if higher_better else 1.0 - score
    return out


QOE_FACTORS = (("bitrate_mbps", True), ("rebuffer_s", False),
               ("change_mbps", False))


def qoe_factor_breakdown(rows_by_method: dict) -> dict:
    """Min-max normalized per-factor scores across methods, for grouped bars.

    Expects each row to carry bitrate_mbps / rebuffer_s / change_mbps means.
    """
    raw = {}
    for factor, _ in QOE_FACTORS:
        raw[factor] = {}
        for method, rows in rows_by_method.items():
            vals = [r[factor] for r in rows if factor in r]
            if not vals:
                raise InputError(
                    f"rows for {method!r} carry no {factor!r} field")
            raw[factor][method] = float(np.mean(vals))
    return {factor: minmax_normalize(raw[factor], higher)
            for factor, higher in QOE_FACTORS}


# -- plots --------------------------------------------------------------------


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_cdfs(reports: list, out_path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for r in reports:
        pts = r.cdf()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.step([xs[0]] + xs, [0.0] + ys, where="post", label=r.method)
    ax.set_xlabel(reports[0].metric)
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_means(reports: list, out_path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = [r.method for r in reports]
    means = [r.mean for r in reports]
    err_lo = [r.mean - r.percentiles()["p10"] for r in reports]
    err_hi = [r.percentiles()["p90"] - r.mean for r in reports]
    ax.bar(names, means, yerr=[err_lo, err_hi], capsize=4)
    ax.set_ylabel(f"mean {reports[0].metric}")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_factor_breakdown(breakdown: dict, out_path) -> Path:
    plt = _plt()
    factors = list(breakdown)
    methods = list(breakdown[factors[0]])
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for j, method in enumerate(methods):
        xs = [i + j * width for i in range(len(factors))]
        ys = [breakdown[f][method] for f in factors]
        ax.bar(xs, ys, width=width, label=method)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(factors))])
    ax.set_xticklabels(factors)
    ax.set_ylabel("normalized score (1 = best)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
