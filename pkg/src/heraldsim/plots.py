"""SVG figures: transmission spectra, joint-spectrum heatmaps and power sweeps.

Figures are drawn with the object-oriented matplotlib API on an SVG canvas
(no pyplot state). A fixed hash salt and a blank date make the bytes depend
only on the input data.
"""
from __future__ import annotations

from collections.abc import Mapping

import matplotlib

matplotlib.use("Agg")
from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

from .circuit import TransmissionSpectrum  # noqa: E402
from .errors import IoFailure  # noqa: E402
from .jsa import JsaGrid  # noqa: E402

KINDS = ("spectrum", "heatmap", "sweep")
SVG_SALT = "heraldsim"


def _finite(*arrays):
    for a in arrays:
        if a is not None and np.asarray(a).size and not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise ValueError("plot data must be finite")


def _series(data) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Normalise spectrum input to a list of (label, x, y)."""
    if data is None:
        return []
    if isinstance(data, TransmissionSpectrum):
        return [(f"port {data.port}", data.wavelengths, data.power)]
    if isinstance(data, Mapping):
        return [(str(k), np.asarray(v[0], float), np.asarray(v[1], float)) for k, v in data.items()]
    out = []
    for i, item in enumerate(data):
        if isinstance(item, TransmissionSpectrum):
            out.append((f"port {item.port}", item.wavelengths, item.power))
        elif len(item) == 3:
            out.append((str(item[0]), np.asarray(item[1], float), np.asarray(item[2], float)))
        else:
            out.append((f"series {i + 1}", np.asarray(item[0], float), np.asarray(item[1], float)))
    return out


def _draw_spectrum(ax, data):
    series = _series(data)
    for label, x, y in series:
        _finite(x, y)
        if x.shape != y.shape:
            raise ValueError(f"{label}: x and y differ in length")
        ax.plot(x, y, lw=0.8, label=label)
    ax.set_xlabel("Wavelength (nm)")
    ax.set_ylabel("Transmitted power (a.u.)")
    if any(x.size for _, x, _ in series):
        ax.legend(frameon=False)


def _draw_heatmap(fig, ax, grid: JsaGrid):
    if not isinstance(grid, JsaGrid):
        raise TypeError("heatmap data must be a JsaGrid")
    vals = grid.values if grid.kind == "intensity" else np.abs(grid.values) ** 2
    _finite(vals)
    s, i = grid.signal_axis, grid.idler_axis
    ds = s[1] - s[0] if s.size > 1 else 1.0
    di = i[1] - i[0] if i.size > 1 else 1.0
    extent = (s[0] - ds / 2, s[-1] + ds / 2, i[0] - di / 2, i[-1] + di / 2)
    img = ax.imshow(vals.T, origin="lower", extent=extent, aspect="auto", cmap="viridis", interpolation="nearest")
    fig.colorbar(img, ax=ax, label="JSI (normalised)")
    ax.set_xlabel("Signal wavelength (nm)")
    ax.set_ylabel("Idler wavelength (nm)")


def _sweep_columns(data):
    """Pull (power, g2, mc_power, mc_g2, mc_sigma) out of a sweep table."""
    if isinstance(data, Mapping):
        get = data.get
        return (get("power_mw", []), get("g2_heralded", []),
                get("mc_power_mw"), get("mc_g2_heralded"), get("mc_sigma"))
    rows = list(data or [])
    return [r.power_mw for r in rows], [r.g2_heralded for r in rows], None, None, None


def _draw_sweep(ax, data):
    p, g, mp, mg, ms = _sweep_columns(data)
    p, g = np.asarray(p, float), np.asarray(g, float)
    _finite(p, g, mp, mg, ms)
    if p.size:
        order = np.argsort(p)
        ax.plot(p[order], g[order], "-", color="C0", label="analytic")
    if mp is not None and len(mp):
        ax.errorbar(mp, mg, yerr=ms, fmt="o", color="C1", ms=4, capsize=2, label="Monte Carlo")
    ax.set_xlabel("Pump power (mW)")
    ax.set_ylabel(r"$g^{(2)}_{h}(0)$")
    if p.size or (mp is not None and len(mp)):
        ax.legend(frameon=False)


def emit_plot(data, kind: str, path, title: str | None = None) -> None:
    """Write ``data`` as an SVG figure of the given ``kind``.

    spectrum: a TransmissionSpectrum, a list of them, a list of (label, x, y)
        or a mapping label -> (x, y). An empty list gives an axes-only plot.
    heatmap: a JsaGrid.
    sweep: a list of AnalyticPrediction or a mapping with ``power_mw`` and
        ``g2_heralded`` columns (optionally ``mc_power_mw``, ``mc_g2_heralded``,
        ``mc_sigma`` for simulated points).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    fig = Figure(figsize=(5.0, 3.6))
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(1, 1, 1)
    if kind == "spectrum":
        _draw_spectrum(ax, data)
    elif kind == "heatmap":
        _draw_heatmap(fig, ax, data)
    else:
        _draw_sweep(ax, data)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
