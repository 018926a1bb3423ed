"""SVG figures for experiment reports and solved fields."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import WriteFailure  # noqa: E402

# fixed ids and no timestamp, so identical inputs give identical files
matplotlib.rcParams["svg.hashsalt"] = "hypmin"
_SVG_META = {"Date": None}


def _save(fig, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata=_SVG_META)
    except OSError as exc:
        raise WriteFailure(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_report(report, path) -> Path:
    """Log-log plot of the error series with the fitted line and its slope."""
    doc = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    series = doc.get("series") or []
    if not series:
        raise WriteFailure("report has an empty series; nothing to plot")
    r = np.array([p["r"] for p in series], dtype=float)
    e = np.array([p["e"] for p in series], dtype=float)
    pos = e > 0
    if not pos.any():
        raise WriteFailure("report series has no positive errors to draw on log axes")
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.loglog(r[pos], e[pos], "o", label="measured")
    slope = doc.get("slope")
    icpt = doc.get("intercept")
    if slope is not None and np.isfinite(slope) and np.isfinite(icpt):
        rr = np.geomspace(r.min(), r.max(), 50)
        ax.loglog(rr, np.exp(icpt) * rr ** slope, "-", lw=1,
                  label=f"fit, slope {slope:.3f}")
    ax.set_xlabel("r")
    ax.set_ylabel("e(r)")
    verdict = "pass" if doc.get("verdict") else "fail"
    ax.set_title(f"{doc.get('experiment', 'report')} ({verdict})")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_field(field, path, levels: int = 20) -> Path:
    """Filled contour plot of a solved field."""
    vals = np.ma.masked_where(field.mask == 0, field.values)
    if vals.count() == 0:
        raise WriteFailure("field has no interior nodes")
    X, Y = np.meshgrid(field.x, field.y)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    cs = ax.contourf(X, Y, vals, levels=levels, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="f")
    bd = field.domain.boundary_samples(512)
    ax.plot(np.append(bd[:, 0], bd[0, 0]), np.append(bd[:, 1], bd[0, 1]), "k-", lw=0.6)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    return _save(fig, path)


def emit_plot(obj, path) -> Path:
    """Plot a report (object or mapping) or a field, depending on what ``obj`` is."""
    if hasattr(obj, "mask") and hasattr(obj, "values"):
        return plot_field(obj, path)
    if hasattr(obj, "series") or (isinstance(obj, dict) and "series" in obj):
        return plot_report(obj, path)
    raise WriteFailure(f"cannot plot an object of type {type(obj).__name__}")
