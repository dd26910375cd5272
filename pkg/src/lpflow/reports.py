"""Delimited output and figure rendering for run artifacts.

Every report lands twice: full-precision CSV/JSON for machines, and a PNG
rendered next to it for eyes.  CSV floats use repr round-trip precision so
identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 120

# pyplot's figure registry is not thread-safe; sweep members render from a
# worker pool, so all figure construction goes through one lock
_FIG_LOCK = threading.Lock()


def _locked(render):
    def wrapper(*args, **kwargs):
        with _FIG_LOCK:
            return render(*args, **kwargs)

    wrapper.__name__ = render.__name__
    wrapper.__doc__ = render.__doc__
    return wrapper


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=FIG_DPI, bbox_inches="tight")
    plt.close(fig)


@_locked
def fig_block_spectrum(records: Mapping[str, "NormRecord"], path: str | Path,
                       title: str = "per-block Besov weights") -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for label, rec in records.items():
        live = rec.per_block > 0
        ax.semilogy(rec.js[live], rec.per_block[live], "o-", label=label, lw=1)
    ax.set_xlabel("block index j")
    ax.set_ylabel(r"$2^{js}\,\|\Delta_j u\|_{L^2}$")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


@_locked
def fig_xp_series(diag, path: str | Path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ps = [r.p for r in diag.records]
    ax1.semilogy(ps, [max(r.X_p, 1e-300) for r in diag.records], "o-")
    ax1.set_xlabel("iteration p")
    ax1.set_ylabel(r"$X_p$")
    ax1.set_title("contraction functional")
    ax2.semilogy(ps, [max(r.residual, 1e-300) for r in diag.records], "s-", color="tab:red")
    ax2.set_xlabel("iteration p")
    ax2.set_ylabel("nonlinear residual")
    ax2.set_title("equation residual")
    _save(fig, path)


@_locked
def fig_norm_series(times: np.ndarray, series: Mapping[str, np.ndarray],
                    path: str | Path, title: str = "norm time series") -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for label, vals in series.items():
        ax.plot(times, vals, label=label, lw=1)
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


@_locked
def fig_hypothesis_margins(diag, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    names = list(diag.records[-1].hypotheses.keys())
    for name in names:
        margins = [r.hypotheses[name].margin for r in diag.records]
        ax.plot([r.p for r in diag.records], margins, "o-", label=name, lw=1)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("iteration p")
    ax.set_ylabel("margin (>= 0 is green)")
    ax.set_title("monitor margins per iteration")
    ax.legend(fontsize=8)
    _save(fig, path)


@_locked
def fig_inequality(report, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for form in report.forms:
        live = [r for r in form.ratios if np.isfinite(r)]
        ax.plot(sorted(live), label=f"{form.label} (C={form.fitted_C:.3g})", lw=1)
    ax.set_xlabel("instance (sorted)")
    ax.set_ylabel("LHS / RHS")
    ax.set_title(f"{report.name} ratios")
    ax.legend(fontsize=8)
    _save(fig, path)


@_locked
def fig_continuation(series, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(series.times, series.cumulative, label="criterion integral", lw=1)
    ax.plot(series.times, series.sup_grad_v1, label=r"$\sup |\nabla V^1|$", lw=1)
    if series.reduced_cumulative is not None:
        ax.plot(series.times, series.reduced_cumulative, label="reduced integral", lw=1)
    ax.set_xlabel("t")
    ax.set_title("continuation-criterion quantities")
    ax.legend(fontsize=8)
    _save(fig, path)


@_locked
def fig_smoothing(report, path: str | Path) -> None:
    rows = [r for r in report.rows if r.c_fit is not None]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if rows:
        js = [r.j for r in rows]
        ax.plot(js, [r.c_fit for r in rows], "o", label="fitted rate / 4^j")
        ax.plot(js, [r.envelope[0] for r in rows], "k--", lw=0.8, label="envelope")
        ax.plot(js, [r.envelope[1] for r in rows], "k--", lw=0.8)
    ax.set_xlabel("block index j")
    ax.set_ylabel("normalized decay rate")
    ax.set_title("per-block smoothing rates")
    ax.legend(fontsize=8)
    _save(fig, path)
