import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.models.record import ExperimentRecord
from app.utils.errors import ConfigError

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
METRICS = ("mse", "psnr_db", "residual", "wall_ms")

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 620, 40, 350


def _env() -> Environment:
    return Environment(
        loader=FileSystemLoader(str(TEMPLATE_DIR)),
        autoescape=True,
        undefined=StrictUndefined,
        keep_trailing_newline=True,
    )


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def band_by_task(records: Sequence[ExperimentRecord], metric: str) -> Dict[str, List[tuple]]:
    """task -> [(k, mean, std)] ascending in k."""
    if metric not in METRICS:
        raise ConfigError(f"Unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    grouped: Dict[str, Dict[int, List[float]]] = {}
    for record in records:
        grouped.setdefault(record.task, {}).setdefault(record.k, []).append(getattr(record, metric))
    return {
        task: [(k, float(np.mean(v)), float(np.std(v))) for k, v in sorted(by_k.items())]
        for task, by_k in sorted(grouped.items())
    }


def render_svg(records: Sequence[ExperimentRecord], metric: str = "mse", title: str = "") -> str:
    """Line chart of the per-k mean of metric with a +-1 std band, one series per task."""
    if not records:
        raise ConfigError("No records to plot")
    bands = band_by_task(records, metric)
    ks = [k for rows in bands.values() for k, _, _ in rows]
    lows = [m - s for rows in bands.values() for _, m, s in rows]
    highs = [m + s for rows in bands.values() for _, m, s in rows]
    k_min, k_max = min(ks), max(ks)
    y_min, y_max = min(lows), max(highs)
    if y_max - y_min < 1e-12:
        y_min, y_max = y_min - 0.5, y_max + 0.5
    pad = 0.05 * (y_max - y_min)
    y_min, y_max = y_min - pad, y_max + pad

    def sx(k: float) -> float:
        return LEFT + (RIGHT - LEFT) * (0.5 if k_max == k_min else (k - k_min) / (k_max - k_min))

    def sy(v: float) -> float:
        return BOTTOM - (BOTTOM - TOP) * (v - y_min) / (y_max - y_min)

    series_list = []
    for i, (task, rows) in enumerate(bands.items()):
        upper = [f"{_fmt(sx(k))},{_fmt(sy(m + s))}" for k, m, s in rows]
        lower = [f"{_fmt(sx(k))},{_fmt(sy(m - s))}" for k, m, s in reversed(rows)]
        series_list.append(
            {
                "name": task,
                "color": PALETTE[i % len(PALETTE)],
                "line": " ".join(f"{_fmt(sx(k))},{_fmt(sy(m))}" for k, m, _ in rows),
                "band": " ".join(upper + lower),
                "points": [{"x": _fmt(sx(k)), "y": _fmt(sy(m))} for k, m, _ in rows],
            }
        )

    distinct_ks = sorted(set(ks))
    stride = max(1, len(distinct_ks) // 16)
    x_ticks = [{"pos": _fmt(sx(k)), "label": str(k)} for k in distinct_ks[::stride]]
    y_ticks = [
        {"pos": _fmt(sy(v)), "label": f"{v:.4g}"}
        for v in np.linspace(y_min, y_max, 5)
    ]
    return _env().get_template("plot.svg.j2").render(
        width=WIDTH,
        height=HEIGHT,
        left=LEFT,
        right=RIGHT,
        top=TOP,
        bottom=BOTTOM,
        title=title or f"{metric} vs k",
        metric=metric,
        x_ticks=x_ticks,
        y_ticks=y_ticks,
        series_list=series_list,
    )
