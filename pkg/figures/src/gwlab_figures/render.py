"""Figure rendering for experiment outputs.

Three kinds: `decay` shows log(-log p) against log t with a least-squares
slope annotation, `lifshits` shows the cumulative low-energy mass in the
same double-log transform together with its two-sided envelope, and `dos`
shows the cell histogram with the zero atom drawn as a separate marker.

Rendering is pure: a fixed style, a fixed SVG hash salt and no timestamp
metadata make identical inputs produce identical image bytes.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from . import io as fio  # noqa: E402
from .errors import EmptySeries, SchemaError  # noqa: E402

KINDS = ("decay", "lifshits", "dos")

_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "svg.hashsalt": "gwlab-fig",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: input data, figure kind, scales and the output path.

    `bounds` names the envelope JSON and applies to the lifshits kind only;
    when omitted it defaults to a sibling file of the input with suffix
    .json.  `log_mass` switches the dos mass axis to a log scale.
    """

    kind: str
    src: str
    out: str
    bounds: str | None = None
    log_mass: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")


def _double_log(p: np.ndarray):
    """log(-log p) for p strictly inside (0, 1); callers mask first."""
    return np.log(-np.log(p))


def _fit_line(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def _render_decay(ax, spec: FigureSpec) -> None:
    curve = fio.read_curve(spec.src)
    usable = (curve.estimates > 0.0) & (curve.estimates < 1.0)
    if not np.any(usable):
        raise EmptySeries(f"{spec.src}: no estimates strictly inside (0, 1)")
    t = curve.times[usable]
    if np.any(t <= 0.0):
        raise SchemaError(f"{spec.src}: nonpositive times in a decay figure")
    x = np.log(t)
    y = _double_log(curve.estimates[usable])
    ax.plot(x, y, "o", ms=3.5, label=f"{curve.n_trees} trees")
    if x.size >= 2:
        slope, intercept = _fit_line(x, y)
        xx = np.array([x.min(), x.max()])
        ax.plot(xx, slope * xx + intercept, "-", lw=1.2,
                label=f"slope {slope:.3f}")
    ax.set_xlabel(f"log {curve.time_column}")
    ax.set_ylabel("log(-log p)")
    ax.legend(loc="lower right")


def _render_lifshits(ax, spec: FigureSpec) -> None:
    measure = fio.read_measure(spec.src)
    bounds_path = spec.bounds
    if bounds_path is None:
        bounds_path = str(Path(spec.src).with_suffix(".json"))
    env = fio.read_envelope(bounds_path)
    E = measure.edges_hi
    cum = np.cumsum(measure.masses)
    usable = (cum > 0.0) & (cum < 1.0)
    if not np.any(usable):
        raise EmptySeries(f"{spec.src}: no cumulative mass strictly inside (0, 1)")
    ax.plot(np.log(E[usable]), _double_log(cum[usable]), "o", ms=4,
            label="mass of ]0, E]")
    grid = np.exp(np.linspace(math.log(E[usable].min() / 1.5),
                              math.log(E[usable].max() * 1.5), 200))
    for name, vals in (("lower bound", env.lower(grid)),
                       ("upper bound", env.upper(grid))):
        ok = (vals > 0.0) & (vals < 1.0)
        if np.any(ok):
            ax.plot(np.log(grid[ok]), _double_log(vals[ok]), "--", lw=1.0,
                    label=name)
    ax.set_xlabel("log E")
    ax.set_ylabel("log(-log mass)")
    ax.legend(loc="upper right")


def _render_dos(ax, spec: FigureSpec) -> None:
    measure = fio.read_measure(spec.src)
    if measure.masses.size == 0:
        raise EmptySeries(f"{spec.src}: measure has no cells")
    widths = measure.edges_hi - measure.edges_lo
    density = measure.masses / widths
    ax.bar(measure.edges_lo, density, width=widths, align="edge",
           color="tab:blue", alpha=0.7, linewidth=0, label="cell density")
    ax.plot([0.0], [measure.atom], "D", color="tab:red", ms=7,
            label=f"atom at 0: {measure.atom:.3f}")
    if measure.tail > 0.0:
        ax.annotate(f"tail mass {measure.tail:.3g}",
                    xy=(0.98, 0.82), xycoords="axes fraction", ha="right")
    if spec.log_mass:
        ax.set_yscale("log")
    ax.set_xlabel("E")
    ax.set_ylabel("mass density")
    ax.legend(loc="upper right")


_RENDERERS = {
    "decay": _render_decay,
    "lifshits": _render_lifshits,
    "dos": _render_dos,
}


def render(spec: FigureSpec) -> str:
    """Draw the figure and write it to spec.out; returns the output path.

    The output format follows the file extension (.svg or .png).
    """
    suffix = Path(spec.out).suffix.lower()
    if suffix not in (".svg", ".png"):
        raise SchemaError(f"unsupported output format {suffix!r}, want .svg or .png")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        try:
            _RENDERERS[spec.kind](ax, spec)
            fig.tight_layout()
            metadata = {"Date": None} if suffix == ".svg" else None
            fig.savefig(spec.out, metadata=metadata)
        finally:
            plt.close(fig)
    return spec.out
