"""Figures rendered next to the tab-separated simulator output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .channelsim import SimResult  # noqa: E402

_KIND_STYLE = {
    "honest": dict(color="tab:blue", lw=1.2),
    "injected": dict(color="tab:red", lw=0.8, ls="--"),
}


def plot_sequence(result: SimResult, path: str | Path, title: str | None = None) -> Path:
    """Message sequence chart: one lane per device, an arrow per delivery."""
    names = list(result.devices)
    lane = {n: i for i, n in enumerate(names)}
    sends = {}
    marks: dict[tuple[str, float], int] = {}
    times = [0.0]
    fig, ax = plt.subplots(figsize=(4 + 1.5 * len(names), 6))
    for ev in result.trace:
        if ev.kind == "send":
            sends.setdefault(ev.detail, []).append(ev)
        elif ev.kind in ("deliver", "inject"):
            src = sends.get(ev.detail)
            if not src:
                continue
            s = src[-1]
            style = _KIND_STYLE["injected" if ev.kind == "inject" else "honest"]
            ax.annotate("", xy=(lane[ev.device], ev.time), xytext=(lane[s.device], s.time),
                        arrowprops=dict(arrowstyle="->", **style))
            times += [s.time, ev.time]
        elif ev.kind in ("established", "clock-sync"):
            # stack labels that land on the same point
            n = marks.get((ev.device, ev.time), 0)
            marks[ev.device, ev.time] = n + 1
            ax.plot(lane[ev.device], ev.time, "o", color="tab:green")
            ax.annotate(ev.kind, (lane[ev.device], ev.time), xytext=(6, -10 * n),
                        textcoords="offset points", fontsize=7, va="center")
            times.append(ev.time)
    for n, i in lane.items():
        ax.axvline(i, color="0.6", lw=0.8)
    ax.set_xticks(range(len(names)), names)
    pad = 0.05 * (max(times) - min(times) or 1.0)
    ax.set_ylim(max(times) + pad, min(times) - pad)
    ax.set_ylabel("virtual time [s]")
    ax.set_xlim(-0.5, len(names) - 0.5)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ranging_sweep(offsets_s, errors_m, path: str | Path, bound_m: float | None = None) -> Path:
    """Distance error against clock offset for a ranging sweep."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(offsets_s, errors_m, ".", ms=4)
    if bound_m is not None:
        for b in (-bound_m, bound_m):
            ax.axhline(b, color="tab:red", ls=":", lw=1)
    ax.set_xlabel("clock offset dB - dA [s]")
    ax.set_ylabel("distance error [m]")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
