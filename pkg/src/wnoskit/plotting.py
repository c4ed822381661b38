"""Figure rendering for simulation reports.

Renders static image files next to the CSV output: end-to-end
throughput versus time per session, and per-node transmit power versus
time. No interactive backends; callers hand in metrics logs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["figure.figsize"] = (7.0, 4.2)
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3
plt.rcParams["font.size"] = 10


def _time_axis(log, slot_seconds):
    return [s * slot_seconds for s in log.slots]


def plot_throughput(log, path, slot_seconds=0.01, title=None):
    """Per-session smoothed end-to-end throughput, packets/s over time."""
    fig, ax = plt.subplots()
    t = _time_axis(log, slot_seconds)
    for s in range(log.n_sessions):
        ax.plot(t, [row[s] for row in log.throughput], label=f"session {s}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("throughput (packets/s)")
    ax.set_title(title or f"End-to-end throughput, {log.scheme}")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_power(log, path, slot_seconds=0.01, title=None):
    """Per-node transmit power, mW over time."""
    fig, ax = plt.subplots()
    t = _time_axis(log, slot_seconds)
    for n in range(log.n_nodes):
        series = [row[n] for row in log.power_mw]
        if max(series, default=0.0) <= 0.0:
            continue  # pure receiver
        ax.plot(t, series, label=f"node {n}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("tx power (mW)")
    ax.set_title(title or f"Transmit power, {log.scheme}")
    ax.legend(loc="best", fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_utility_comparison(logs, path, slot_seconds=0.01):
    """Utility traces of several schemes on one axis."""
    fig, ax = plt.subplots()
    for scheme, log in logs.items():
        ax.plot(_time_axis(log, slot_seconds), log.utility, label=scheme)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("network utility")
    ax.set_title("Utility by scheme")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
