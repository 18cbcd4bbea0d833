"""Figure rendering for experiment bundles.

Everything draws through the Agg backend into PNG files next to the CSVs;
nothing here ever opens a window. The CSVs remain the canonical output,
the figures are the readable view of the same numbers.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

STRATEGY_COLORS = {
    "edge": "#1f77b4",
    "cloud": "#d62728",
    "cloud_plus": "#2ca02c",
    "cloud_minus": "#9467bd",
    "hybrid": "#ff7f0e",
}

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _label(strategy: str) -> str:
    from .experiment import STRATEGY_LABELS

    return STRATEGY_LABELS[strategy]


def render_error_bars(bundle, out_dir: Path) -> Path:
    """Mean speed error per (weather, strategy) with per-seed spread."""
    cfg = bundle.cfg
    weathers = list(cfg.weathers)
    strategies = list(cfg.strategies)
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(weathers), 3.6))
    width = 0.8 / max(len(strategies), 1)
    for si, strategy in enumerate(strategies):
        xs, means, spreads = [], [], []
        for wi, weather in enumerate(weathers):
            vals = [c.report.eps_s for c in bundle.cells
                    if c.weather == weather and c.strategy == strategy]
            if not vals:
                continue
            xs.append(wi + (si - (len(strategies) - 1) / 2) * width)
            means.append(float(np.mean(vals)))
            spreads.append(float(np.std(vals)))
        if xs:
            ax.bar(xs, means, width=width * 0.92, yerr=spreads, capsize=3,
                   color=STRATEGY_COLORS[strategy], label=_label(strategy))
    ax.set_xticks(range(len(weathers)))
    ax.set_xticklabels(weathers)
    ax.set_ylabel("speed error rate")
    ax.set_title("mean relative speed error by weather and scheme")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "errors.png"
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def render_window_curves(bundle, out_dir: Path) -> list[Path]:
    """Error vs bad-time fraction, one figure per weather."""
    cfg = bundle.cfg
    paths = []
    for weather in cfg.weathers:
        fig, ax = plt.subplots(figsize=(4.6, 3.4))
        drew = False
        for strategy in cfg.strategies:
            pts: dict[float, list[float]] = {}
            for c in bundle.cells:
                if c.weather != weather or c.strategy != strategy:
                    continue
                for p in c.curve:
                    if p.reached and p.report is not None:
                        pts.setdefault(p.phi, []).append(p.report.eps_s)
            if len(pts) < 2:
                continue
            phis = sorted(pts)
            means = [float(np.mean(pts[p])) for p in phis]
            ax.plot(phis, means, marker="o", label=_label(strategy),
                    color=STRATEGY_COLORS[strategy])
            drew = True
        if not drew:
            plt.close(fig)
            continue
        ax.set_xlabel("bad-condition time fraction in window")
        ax.set_ylabel("speed error rate")
        ax.set_title(f"sliding-window error, {weather}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"curve_{weather}.png"
        fig.savefig(path, **_SAVE_KW)
        plt.close(fig)
        paths.append(path)
    return paths


def render_trace_timeline(bundle, out_dir: Path) -> Path | None:
    """The cloud strategy's link rate over time, with tier switches."""
    cloud_cells = [c for c in bundle.cells if c.strategy == "cloud"]
    hybrid_cells = [c for c in bundle.cells if c.strategy == "hybrid"]
    cell = (cloud_cells or hybrid_cells or [None])[0]
    if cell is None:
        return None
    trace = cell.trace
    fig, ax = plt.subplots(figsize=(5.4, 2.8))
    ts = np.linspace(0.0, trace.duration_s, 600)
    ax.plot(ts, [trace.rate_at(t) / 1e6 for t in ts], color="#333333")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("link rate (MB/s)")
    ax.set_title("channel trace")
    if hybrid_cells:
        dec = hybrid_cells[0].result.decisions
        for d in dec:
            if d.beta_e:
                ax.axvspan(d.t, d.t + bundle.cfg.controller.poll_s,
                           color="#1f77b4", alpha=0.12, lw=0)
    fig.tight_layout()
    path = out_dir / "trace.png"
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def render_all(bundle, out_dir: Path) -> list[Path]:
    paths = [render_error_bars(bundle, out_dir)]
    paths.extend(render_window_curves(bundle, out_dir))
    timeline = render_trace_timeline(bundle, out_dir)
    if timeline is not None:
        paths.append(timeline)
    return [p for p in paths if p is not None]
