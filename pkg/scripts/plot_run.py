"""Plot the time-space and velocity-error series of a finished run.

Needs matplotlib, which the package itself does not depend on.

Usage: python scripts/plot_run.py runs/matrix
"""

import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from platoon_perl import cli  # noqa: E402


def load(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main(run_dir):
    run_dir = Path(run_dir)
    ts_path, ve_path = cli.export_plot_data(run_dir)
    ts, ve = load(ts_path), load(ve_path)

    tests = sorted({(r["scenario"], r["error_kind"]) for r in ve})
    controllers = sorted({r["controller"] for r in ve})
    fig, axes = plt.subplots(len(tests), 1, figsize=(7, 2.6 * len(tests)), squeeze=False)
    for ax, (scen, err) in zip(axes[:, 0], tests):
        for ctrl in controllers:
            rows = [r for r in ve if (r["scenario"], r["error_kind"], r["controller"]) == (scen, err, ctrl)]
            t = [float(r["time"]) for r in rows]
            ax.plot(t, [float(r["v_err_mean"]) for r in rows], label=ctrl)
            ax.fill_between(t, [float(r["v_err_min"]) for r in rows],
                            [float(r["v_err_max"]) for r in rows], alpha=0.15)
        ax.set_title(f"{scen} / {err}")
        ax.set_ylabel("velocity error [m/s]")
    axes[-1, 0].set_xlabel("time [s]")
    axes[0, 0].legend()
    fig.tight_layout()
    fig.savefig(run_dir / "velocity_error.png", dpi=120)

    first_seed = min(r["seed"] for r in ts)
    groups = defaultdict(list)
    for r in ts:
        if r["seed"] == first_seed:
            groups[(r["scenario"], r["error_kind"], r["controller"], r["vehicle"])].append(r)
    keys = sorted({k[:3] for k in groups})
    fig, axes = plt.subplots(len(keys), 1, figsize=(7, 2.2 * len(keys)), squeeze=False)
    for ax, key in zip(axes[:, 0], keys):
        for (s, e, c, veh), rows in sorted(groups.items()):
            if (s, e, c) != key:
                continue
            t = [float(r["time"]) for r in rows]
            ax.plot(t, [float(r["p"]) for r in rows], lw=1)
            ax.plot(t, [float(r["p_ref"]) for r in rows], "k:", lw=0.8)
        ax.set_title(" / ".join(key))
        ax.set_ylabel("position [m]")
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(run_dir / "time_space.png", dpi=120)
    print(f"wrote {run_dir / 'velocity_error.png'} and {run_dir / 'time_space.png'}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "runs/matrix")
