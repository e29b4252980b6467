"""Optional figures for CLI runs. matplotlib is imported only when plotting is requested."""

from __future__ import annotations

from dataclasses import dataclass, field


class PlottingUnavailable(RuntimeError):
    pass


@dataclass
class Series:
    x: list
    y: list
    label: str = ""
    marker: str = "o"


@dataclass
class Figure:
    """A line/point plot description; rendered by :func:`render`."""

    name: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    logx: bool = False
    logy: bool = False
    title: str = ""
    hline: float | None = None


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise PlottingUnavailable("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render(fig: Figure, path) -> None:
    plt = _pyplot()
    f, ax = plt.subplots(figsize=(5.0, 3.6))
    for s in fig.series:
        ax.plot(s.x, s.y, marker=s.marker, label=s.label or None)
    if fig.hline is not None:
        ax.axhline(fig.hline, color="0.5", ls="--", lw=0.8)
    if fig.logx:
        ax.set_xscale("log")
    if fig.logy:
        ax.set_yscale("log")
    ax.set_xlabel(fig.xlabel)
    ax.set_ylabel(fig.ylabel)
    if fig.title:
        ax.set_title(fig.title)
    if any(s.label for s in fig.series):
        ax.legend(frameon=False)
    ax.grid(True, alpha=0.3)
    f.tight_layout()
    # fixed metadata keeps repeated renders identical
    f.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(f)
