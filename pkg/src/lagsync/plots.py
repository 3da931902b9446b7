"""Static plot emission from trace CSVs.

Plots are produced from the serialized CSV (not from in-memory traces) so
any archived run can be re-plotted.  Failures here never fail a run; the
CSV is the contract.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .sim import read_trace_csv


def _series(data, prefix):
    names = sorted(
        (k for k in data if k.startswith(prefix) and k[len(prefix) :].isdigit()),
        key=lambda k: int(k[len(prefix) :]),
    )
    return names


def plot_trace(csv_path, out_dir, stem="trace"):
    """Write state/control/sliding/error figures for a trace CSV; returns
    the list of files written."""
    data = read_trace_csv(csv_path)
    t = data["t"]
    if t.size == 0:
        return []
    os.makedirs(out_dir, exist_ok=True)
    written = []

    orders = sorted(
        {int(k.split("_")[1]) for k in data if k.startswith("x0_")}
    )
    agents = sorted({int(k[1 : k.index("_")]) for k in data if k.startswith("x") and not k.startswith("x0")})

    fig, axes = plt.subplots(len(orders), 1, figsize=(8, 2.6 * len(orders)), sharex=True)
    axes = [axes] if len(orders) == 1 else list(axes)
    for comp, ax in zip(orders, axes):
        for i in agents:
            ax.plot(t, data[f"x{i}_{comp}"], lw=0.8, label=f"agent {i}")
        ax.plot(t, data[f"x0_{comp}"], "k--", lw=1.2, label="leader")
        ax.set_ylabel(f"state {comp}")
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8, ncol=3)
    axes[-1].set_xlabel("time [s]")
    path = os.path.join(out_dir, f"{stem}_states.png")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    for quantity, prefix, ylabel in (
        ("controls", "u", "control"),
        ("sliding", "s", "sliding value"),
        ("errors", "err", "tracking error"),
    ):
        fig, ax = plt.subplots(figsize=(8, 3.2))
        for name in _series(data, prefix):
            ax.plot(t, data[name], lw=0.8, label=name)
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper right", fontsize=8, ncol=4)
        path = os.path.join(out_dir, f"{stem}_{quantity}.png")
        fig.tight_layout()
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written
