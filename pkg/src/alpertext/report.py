"""PNG figures rendered from the experiment CSV files (matplotlib imported on demand)."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

GOLDEN = (math.sqrt(5) - 1) / 2
WIDTH = 5.0
STYLE = {
    "font.family": "serif",
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (WIDTH, WIDTH * GOLDEN),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(v: str) -> float:
    try:
        return float(v)
    except ValueError:
        return math.nan


def _series(rows, estimator):
    pts = [(int(r["s"]), _num(r["value"])) for r in rows if r["estimator"] == estimator]
    pts = [(s, v) for s, v in pts if np.isfinite(v) and v > 0]
    return np.array([p[0] for p in pts], float), np.array([p[1] for p in pts], float)


def _growth_figure(plt, rows, exps, out: Path) -> Path:
    delta = _num(rows[0]["delta"])
    fig, ax = plt.subplots()
    for est, mark in (("P", "o-"), ("trilinear", "s--"), ("tail", "^:")):
        s, v = _series(rows, est)
        if len(s):
            ax.plot(s / (1 - delta), np.log2(v), mark, label=est)
    s, v = _series(rows, "P")
    fit = exps.get("P")
    if fit is not None and len(s) >= 2 and np.isfinite(fit[0]):
        x = s / (1 - delta)
        b = np.mean(np.log2(v) - fit[0] * x)
        ax.plot(x, fit[0] * x + b, color="0.5", lw=0.8,
                label=f"slope {fit[0]:.3f} [{fit[1]:.3f}, {fit[2]:.3f}]")
    ax.set_xlabel(r"$\log_2 R$, $R = 2^{s/(1-\delta)}$")
    ax.set_ylabel(r"$\log_2$ estimate")
    ax.legend(frameon=False)
    path = out / "growth.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def _census_figure(plt, out: Path, files) -> Path:
    scales, c1, c2 = [], [], []
    for p in files:
        rows = _rows(p)
        scales.append(int(p.stem.split("_s")[-1]))
        c1.append(sum(r["case"] == "1" for r in rows))
        c2.append(sum(r["case"] == "2" for r in rows))
    order = np.argsort(scales)
    s = np.array(scales)[order]
    a, b = np.array(c1)[order], np.array(c2)[order]
    fig, ax = plt.subplots()
    ax.bar(s, a, label="case 1", color="#2b8cbe")
    ax.bar(s, b, bottom=a, label="case 2", color="#a8ddb5")
    ax.set_xlabel("scale s")
    ax.set_ylabel("lattice points")
    ax.set_xticks(s)
    ax.legend(frameon=False)
    path = out / "census.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def _verify_figure(plt, rows, out: Path) -> Path:
    names = [r["check"] for r in rows]
    ratio = []
    for r in rows:
        v, t = abs(_num(r["value"])), _num(r["threshold"])
        ratio.append(v / t if t > 0 and np.isfinite(t) else math.nan)
    ratio = np.array(ratio)
    fig, ax = plt.subplots(figsize=(WIDTH, 0.22 * len(names) + 0.8))
    y = np.arange(len(names))
    ok = np.isfinite(ratio) & (ratio > 0)
    ax.barh(y[ok], np.log10(ratio[ok]), color=["#2b8cbe" if v <= 1 else "#d7301f"
                                                for v in ratio[ok]])
    ax.axvline(0.0, color="0.3", lw=0.8)
    ax.set_yticks(y)
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlabel(r"$\log_{10}$(value / threshold)")
    path = out / "verify.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def render(out: str | Path) -> list[Path]:
    """Figures for whichever of growth.csv, census_s*.csv and verify.csv exist in out."""
    out = Path(out)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    made = []
    with plt.rc_context(STYLE):
        if (out / "growth.csv").exists():
            rows = _rows(out / "growth.csv")
            exps = {}
            if (out / "exponents.csv").exists():
                exps = {r["estimator"]: (_num(r["exponent"]), _num(r["ci_low"]), _num(r["ci_high"]))
                        for r in _rows(out / "exponents.csv")}
            if rows:
                made.append(_growth_figure(plt, rows, exps, out))
        census = sorted(out.glob("census_s*.csv"))
        if census:
            made.append(_census_figure(plt, out, census))
        if (out / "verify.csv").exists():
            rows = _rows(out / "verify.csv")
            if rows:
                made.append(_verify_figure(plt, rows, out))
    return made
