"""Figure generation from exported trace CSVs (matplotlib is optional)."""

from __future__ import annotations

import csv
from pathlib import Path


def _load_csv(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    cols = {name: [r[i] for r in rows] for i, name in enumerate(header)}
    return cols


def plot_trace(csv_path, out_path) -> Path:
    """Track plot plus command/crosstrack time series from a trace CSV."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError(
            "matplotlib is required for plotting; install auvtune[plot]"
        ) from exc

    tr = _load_csv(csv_path)
    fig, axes = plt.subplots(2, 2, figsize=(11, 8))

    ax = axes[0, 0]
    ax.plot(tr["e"], tr["n"], lw=1.0, label="truth")
    ax.plot(tr["e_hat"], tr["n_hat"], lw=0.8, ls="--", label="estimate")
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.set_title("horizontal track")
    ax.axis("equal")
    ax.legend()

    ax = axes[0, 1]
    ax.plot(tr["t"], tr["h_e_true"], lw=0.8, label="crosstrack")
    ax.plot(tr["t"], tr["d_err_true"], lw=0.8, label="depth err")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("[m]")
    ax.set_title("path deviation")
    ax.legend()

    ax = axes[1, 0]
    for ch in ("cmd_surge", "cmd_rl", "cmd_ud"):
        ax.plot(tr["t"], tr[ch], lw=0.7, label=ch)
    ax.set_xlabel("t [s]")
    ax.set_title("thruster commands")
    ax.legend()

    ax = axes[1, 1]
    ax.plot(tr["t"], tr["cur_n"], lw=0.8, label="current n")
    ax.plot(tr["t"], tr["cur_e"], lw=0.8, label="current e")
    ax.plot(tr["t"], tr["uc_hat"], lw=0.8, ls="--", label="est u_c")
    ax.plot(tr["t"], tr["vc_hat"], lw=0.8, ls="--", label="est v_c")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("[m/s]")
    ax.set_title("disturbance current")
    ax.legend()

    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
