"""
Plot-script emission

Every figure is a standalone matplotlib + pandas script written next to the
run outputs. Scripts read the run's CSVs by path relative to the run
directory and save a PNG beside themselves; nothing here imports matplotlib.
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple

from app.core.exceptions import PlotDependencyError
from app.core.models import ExperimentReport

# Configure logging
logger = logging.getLogger(__name__)

PLOT_DIR = "plots"

_HEADER = '''"""{title}"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

HERE = Path(__file__).resolve().parent
RUN = HERE.parent


def read(relative):
    return pd.read_csv(RUN / relative, comment="#")

'''

_CONVERGENCE = '''
table = read("{marginals}")
fig, ax = plt.subplots(figsize=(6, 4))
for (projection, time), group in table.groupby(["projection", "time"]):
    group = group.sort_values("eps")
    ax.loglog(group["eps"], group["ks"], marker="o", label=f"{{projection}} @ t={{time:g}}")
    ax.loglog(group["eps"], group["noise_floor"], color="grey", linestyle=":", linewidth=0.8)
ax.set_xlabel("eps")
ax.set_ylabel("KS distance to the limit")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(HERE / "convergence.png", dpi=150)
'''

_SAMPLE_PATHS = '''
paths = read("{limit_samples}")
slow = [c for c in paths.columns if c.startswith("y_")]
fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
for path, group in paths.groupby("path"):
    top.plot(group["t"], group["x"], linewidth=0.8)
    bottom.plot(group["t"], group[slow[0]], linewidth=0.8)
top.axhline(0.0, color="black", linewidth=0.5)
top.set_ylabel("interface coordinate")
bottom.set_ylabel(slow[0])
bottom.set_xlabel("t")
fig.tight_layout()
fig.savefig(HERE / "sample_paths.png", dpi=150)
'''

_STAIRCASE = '''
paths = read("{limit_samples}")
singular = [c for c in paths.columns if c.startswith("V_")]
fig, ax = plt.subplots(figsize=(7, 4))
for path, group in paths.groupby("path"):
    line, = ax.plot(group["t"], group["L"], linewidth=0.9)
    if singular:
        ax.plot(group["t"], group[singular[0]], color=line.get_color(), linestyle="--", linewidth=0.7)
ax.set_xlabel("t")
ax.set_ylabel("local time at 0 (solid), singular drift (dashed)")
fig.tight_layout()
fig.savefig(HERE / "local_time_staircase.png", dpi=150)
'''

_MARTINGALE = '''
summary = read("{summary}")
rows = summary[summary["metric"].str.startswith("martingale:")].reset_index(drop=True)
fig, ax = plt.subplots(figsize=(7, 4))
if len(rows):
    z = rows["value"] / rows["stderr"]
    colors = ["tab:red" if "uncorrected" in m else "tab:blue" for m in rows["metric"]]
    ax.bar(range(len(rows)), z, color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([m.split(":", 1)[1] for m in rows["metric"]], rotation=30, ha="right", fontsize=7)
for level in (-3, 3):
    ax.axhline(level, color="grey", linestyle=":")
ax.set_ylabel("residual mean / stderr")
fig.tight_layout()
fig.savefig(HERE / "martingale_residuals.png", dpi=150)
'''

_INCREMENTS = '''
table = read("{boundary_increments}")
table = table[table["start_x"] == table["start_x"].min()].sort_values("eps")
fig, (left, right) = plt.subplots(1, 2, figsize=(9, 4))
left.errorbar(table["eps"], table["mean_dy_over_delta_1"], yerr=table["mean_dy_over_delta_1_stderr"], marker="o")
left.plot(table["eps"], table["target_beta_1"], color="black", linestyle="--")
left.set_xscale("log")
left.set_xlabel("eps")
left.set_ylabel("E[dY_1] / delta")
right.errorbar(table["eps"], table["mean_dydy_over_delta_11"], yerr=table["mean_dydy_over_delta_11_stderr"], marker="o")
right.plot(table["eps"], table["target_alpha_11"], color="black", linestyle="--")
right.set_xscale("log")
right.set_xlabel("eps")
right.set_ylabel("E[dY_1^2] / delta")
fig.tight_layout()
fig.savefig(HERE / "boundary_increments.png", dpi=150)
'''

_OCCUPATION = '''
table = read("{occupation}")
fig, ax = plt.subplots(figsize=(5, 4))
ax.plot(table["delta"], table["fraction"], "o", label="observed")
ax.plot(table["delta"], table["fit"], "-", label="least squares")
ax.set_xlabel("band half-width")
ax.set_ylabel("occupation fraction")
ax.legend()
fig.tight_layout()
fig.savefig(HERE / "occupation.png", dpi=150)
'''

_EXIT_STATS = '''
table = read("{exit_stats}")
start = table[table["start_x"] == 0.0].sort_values("delta")
fig, (left, right) = plt.subplots(1, 2, figsize=(9, 4))
for start_x, group in table.groupby("start_x"):
    group = group.sort_values("delta")
    left.errorbar(group["delta"], group["p_plus"], yerr=3 * group["p_stderr"], marker="o", label=f"start {{start_x:g}}")
left.set_xlabel("delta")
left.set_ylabel("P(exit above)")
left.legend()
right.loglog(start["delta"], start["theta_mean"], marker="o", label="E theta")
right.loglog(start["delta"], start["delta"] ** 2, color="black", linestyle="--", label="delta^2")
right.set_xlabel("delta")
right.legend()
fig.tight_layout()
fig.savefig(HERE / "exit_stats.png", dpi=150)
'''

# figure name -> (title, body, artifacts the body reads)
FIGURES: Dict[str, Tuple[str, str, Tuple[str, ...]]] = {
    "convergence": ("KS distance against eps for every marginal", _CONVERGENCE, ("marginals",)),
    "sample_paths": ("Sample limit paths: interface coordinate and slow component", _SAMPLE_PATHS, ("limit_samples",)),
    "local_time_staircase": ("Local time and singular drift of sample limit paths", _STAIRCASE, ("limit_samples",)),
    "martingale_residuals": ("Normalized martingale residuals per test function", _MARTINGALE, ("summary",)),
    "boundary_increments": ("Normalized boundary increments against their targets", _INCREMENTS, ("boundary_increments",)),
    "occupation": ("Band occupation fraction against band width", _OCCUPATION, ("occupation",)),
    "exit_stats": ("Exit probabilities and exit times of excursions", _EXIT_STATS, ("exit_stats",)),
}

_DEVIATION_SET = ["convergence", "sample_paths", "local_time_staircase", "martingale_residuals"]


def figure_set(report: ExperimentReport) -> List[str]:
    """Figures a report calls for"""
    if not report.rows:
        return []
    regime = report.config.regime
    if regime in ("deviation_diffusive", "deviation_drift"):
        return list(_DEVIATION_SET)
    if regime == "longtime":
        return _DEVIATION_SET + ["boundary_increments", "occupation"]
    return ["exit_stats"] if "exit_stats" in report.artifacts else []


def render_script(name: str, artifacts: Dict[str, str]) -> str:
    title, body, needs = FIGURES[name]
    paths = {key: Path(artifacts[key]).as_posix() for key in needs}
    return _HEADER.format(title=title) + body.format(**paths)


def emit_plots(report: ExperimentReport, out_dir: Path) -> Dict[str, Path]:
    """
    Write one plotting script per figure of the report

    Args:
        report: finished experiment report; its artifacts map names to CSVs
        out_dir: run directory the artifact paths are relative to

    Returns:
        figure name -> script path

    Raises:
        PlotDependencyError: a figure needs a CSV the run did not write
    """
    out_dir = Path(out_dir)
    names = figure_set(report)
    for name in names:
        for key in FIGURES[name][2]:
            if key not in report.artifacts or not (out_dir / report.artifacts[key]).is_file():
                raise PlotDependencyError(f"figure '{name}' needs the '{key}' CSV, which is missing from {out_dir}")

    written: Dict[str, Path] = {}
    for name in names:
        target = out_dir / PLOT_DIR / f"{name}.py"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(render_script(name, report.artifacts), encoding="utf-8")
        written[name] = target
    if written:
        logger.info(f"Wrote {len(written)} plot scripts to {out_dir / PLOT_DIR}")
    return written
