"""Figure assembly and rendering.

assemble() turns parsed tables into plain series data (points with error
bars for measured rows, dashed lines for analytic rows) so everything up
to the matplotlib call is testable as a pure function; render() draws and
writes the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .io import SchemaError, Table, read_table

KINDS = ("dos", "sigma_vs_x", "sigma_vs_alpha", "metric")
SCALES = ("linear", "log")

# which column supplies the horizontal axis; metric plots per realization
_X_COLUMN = {"dos": "E", "sigma_vs_x": "x", "sigma_vs_alpha": "alpha"}

_AXIS_LABELS = {
    "dos": ("E / t", "states per cell"),
    "sigma_vs_x": ("x", "sigma / sigma0"),
    "sigma_vs_alpha": ("alpha", "sigma / sigma0"),
    "metric": ("realization", "g per state"),
}


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple
    kind: str
    out_path: str
    xscale: str = "linear"
    yscale: str = "linear"

    def __post_init__(self):
        if not self.inputs:
            raise ValueError("figure needs at least one input file")
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if self.xscale not in SCALES or self.yscale not in SCALES:
            raise ValueError("axis scales must be 'linear' or 'log'")


@dataclass
class Series:
    label: str
    x: list
    y: list
    yerr: list | None = None
    dashed: bool = False


@dataclass
class Assembled:
    kind: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)


def _run_tag(table: Table) -> str:
    """Legend suffix carrying the run metadata."""
    cfg = table.config
    bits = []
    lat = cfg.get("lattice", {})
    if lat.get("kind"):
        bits.append(str(lat["kind"]))
    if lat.get("n_cells"):
        bits.append(f"N={lat['n_cells']}")
    mode = cfg.get("disorder", {}).get("mode")
    if mode:
        bits.append(str(mode))
    ens = cfg.get("ensemble", {})
    if ens.get("n_configs"):
        bits.append(f"{ens['n_configs']} cfg")
    if table.run_id:
        bits.append(f"run {table.run_id}")
    return ", ".join(bits)


def _sorted_xy(rows, x_col: str, with_err: bool):
    pts = [(r[x_col], r["value"], r["stderr"]) for r in rows
           if r[x_col] is not None and r["value"] is not None]
    pts.sort(key=lambda p: p[0])
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    if not with_err:
        return xs, ys, None
    errs = [p[2] if p[2] is not None else 0.0 for p in pts]
    return xs, ys, errs


def _series_for_table(kind: str, table: Table) -> list:
    tag = _run_tag(table)
    out = []
    if kind == "metric":
        per = table.with_observable("fb_metric")
        if per:
            xs = list(range(1, len(per) + 1))
            ys = [r["value"] for r in per]
            out.append(Series(label=f"g per realization ({tag})", x=xs, y=ys))
            mean = table.with_observable("fb_metric_mean")
            if mean:
                m = mean[0]["value"]
                out.append(Series(
                    label=f"ensemble mean {m:.4g} ({tag})",
                    x=[xs[0], xs[-1]], y=[m, m], dashed=True,
                ))
        return out

    x_col = _X_COLUMN[kind]
    for obs in table.observables():
        rows = table.with_observable(obs)
        if obs.startswith("analytic_"):
            xs, ys, _ = _sorted_xy(rows, x_col, with_err=False)
            if xs:
                label = obs
                if kind == "sigma_vs_alpha":
                    # predictions differ per dilution; say which one this is
                    x0 = next((r["x"] for r in rows if r["x"] is not None), None)
                    if x0 is not None:
                        label = f"{obs} (y={1.0 - x0:g})"
                out.append(Series(label=label, x=xs, y=ys, dashed=True))
        elif kind == "dos" and obs == "fb_weight":
            r = rows[0]
            if r["E"] is not None and r["value"] is not None:
                out.append(Series(
                    label=f"flat-band weight {r['value']:.3f} ({tag})",
                    x=[r["E"]], y=[r["value"]],
                    yerr=[r["stderr"] or 0.0],
                ))
        elif obs.endswith("_mean"):
            continue  # summary rows; the per-point series carries the data
        elif kind == "dos" and obs != "dos":
            continue  # sweep tables carry E too, but only as a fixed label
        else:
            xs, ys, errs = _sorted_xy(rows, x_col, with_err=True)
            if xs:
                out.append(Series(label=f"{obs} ({tag})", x=xs, y=ys, yerr=errs))
    return out


def assemble(spec: FigureSpec) -> Assembled:
    """Pure data step: tables in, labeled series out; nothing is drawn."""
    xlabel, ylabel = _AXIS_LABELS[spec.kind]
    fig = Assembled(kind=spec.kind, xlabel=xlabel, ylabel=ylabel)
    seen = set()  # files sharing a sweep repeat the same analytic rows
    for path in spec.inputs:
        for s in _series_for_table(spec.kind, read_table(path)):
            if s.dashed:
                key = (s.label, tuple(s.x), tuple(s.y))
                if key in seen:
                    continue
                seen.add(key)
            fig.series.append(s)
    if not any(not s.dashed for s in fig.series):
        raise SchemaError(
            f"no rows usable for a {spec.kind!r} figure in: "
            + ", ".join(spec.inputs)
        )
    return fig


def render(spec: FigureSpec) -> str:
    """Assemble and draw; returns the written image path.

    The image is written only after every input has parsed and produced
    plottable series, so a failed render leaves no file behind.
    """
    data = assemble(spec)

    from matplotlib.figure import Figure  # local: keeps assemble() import-light

    fig = Figure(figsize=(7.0, 4.6))
    ax = fig.subplots()
    for s in data.series:
        if s.dashed:
            ax.plot(s.x, s.y, linestyle="--", linewidth=1.4, label=s.label)
        else:
            ax.errorbar(s.x, s.y, yerr=s.yerr, marker="o", markersize=4,
                        linestyle="none", capsize=2.5, label=s.label)
    ax.set_xscale(spec.xscale)
    ax.set_yscale(spec.yscale)
    ax.set_xlabel(data.xlabel)
    ax.set_ylabel(data.ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=150)
    return spec.out_path
