"""
SVG figures for experiment reports.

Every figure is a standalone SVG with the plotted data embedded as a JSON
comment right after the XML declaration, so the numbers can be recovered
without parsing the drawing.
"""
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from app.utils.io_utils import PathLike, to_jsonable  # noqa: E402

logger = logging.getLogger(__name__)

# fixed ids and no timestamp, so identical data gives identical files
matplotlib.rcParams["svg.hashsalt"] = "spde-uniqueness"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save_svg(fig, path: PathLike, data: Dict) -> Path:
    buffer = io.StringIO()
    fig.savefig(buffer, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    svg = buffer.getvalue()
    payload = json.dumps(to_jsonable(data), sort_keys=True).replace("--", "- -")
    comment = f"<!-- data: {payload} -->\n"
    head, sep, rest = svg.partition("?>\n")
    svg = head + sep + comment + rest if sep else comment + svg
    path = Path(path)
    path.write_text(svg, encoding="utf-8")
    logger.debug(f"Wrote figure {path}")
    return path


def energy_figure(
    path: PathLike,
    t: Sequence[float],
    g: Sequence[float],
    envelope: Optional[Sequence[float]] = None,
    stderr: Optional[Sequence[float]] = None,
    title: str = "",
) -> Path:
    """g(t) with its exp(Ct) envelope and, for ensembles, a 3-standard-error band."""
    fig, ax = plt.subplots(figsize=(7, 4))
    t, g = np.asarray(t), np.asarray(g)
    ax.plot(t, g, label="g(t)", color="tab:blue")
    if stderr is not None and len(stderr) == len(g):
        band = 3.0 * np.asarray(stderr)
        ax.fill_between(t, g - band, g + band, color="tab:blue", alpha=0.2, label="3 s.e.")
    if envelope is not None and len(envelope) == len(g):
        ax.plot(t, envelope, "--", color="tab:red", label="g(0) exp(Ct)")
    ax.set_xlabel("t")
    ax.set_ylabel("||z||^2 in H^-1")
    ax.set_title(title)
    ax.legend(loc="best")
    data = {"t": t, "g": g, "envelope": envelope, "stderr": stderr}
    return _save_svg(fig, path, data)


def waterfall_figure(
    path: PathLike, xi: Sequence[float], times: Sequence[float], snapshots: np.ndarray, max_curves: int = 12
) -> Path:
    """Snapshots offset vertically by time."""
    snapshots = np.asarray(snapshots)
    picks = np.unique(np.linspace(0, len(times) - 1, min(max_curves, len(times))).astype(int))
    span = float(np.ptp(snapshots)) or 1.0
    offset = span / max(len(picks), 1)
    fig, ax = plt.subplots(figsize=(7, 5))
    for rank, k in enumerate(picks):
        ax.plot(xi, snapshots[k] + rank * offset, color=plt.cm.viridis(rank / max(len(picks) - 1, 1)), lw=1)
    ax.set_xlabel("xi")
    ax.set_yticks([])
    ax.set_title("snapshots, offset by time")
    data = {"xi": xi, "t": [times[k] for k in picks], "offset": offset}
    return _save_svg(fig, path, data)


def epsilon_figure(path: PathLike, epsilons: Sequence[float], discrepancies: Dict[str, List[float]]) -> Path:
    """Log-log convergence of the mollified discrepancies."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in sorted(discrepancies.items()):
        values = np.asarray(values, dtype=float)
        positive = values > 0
        if positive.any():
            ax.loglog(np.asarray(epsilons)[positive], np.sqrt(values[positive]), "o-", label=name)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("sqrt(discrepancy)")
    if ax.lines:
        ax.legend(loc="best")
    return _save_svg(fig, path, {"epsilons": epsilons, "discrepancies": discrepancies})
