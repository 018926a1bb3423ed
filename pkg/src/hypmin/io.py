"""Reading and writing fields, profiles and reports.

Numbers are written with 17 significant digits so a write/read cycle
reproduces every double exactly.  Each data CSV has a JSON sidecar with the
same stem; corner patches of a field go to a companion ``.npz``.
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .errors import WriteFailure

FMT = "%.17g"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)      # "nan" / "inf"; JSON has no literal for them
    return obj


def _unjson(v):
    if v in ("nan", "inf", "-inf"):
        return float(v)
    return v


def write_json(path, doc) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=False)
            fh.write("\n")
    except OSError as exc:
        raise WriteFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, columns: dict) -> Path:
    """Write equal-length numeric columns with a header row."""
    path = Path(path)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names]) \
        if names and len(columns[names[0]]) else np.empty((0, len(names)))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, data, fmt=FMT, delimiter=",", header=",".join(names), comments="")
    except OSError as exc:
        raise WriteFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        names = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return {k: np.empty(0) for k in names}
    return {k: data[:, i] for i, k in enumerate(names)}


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

def write_field(field, path) -> list[Path]:
    """Write ``x,y,f`` rows of the interior nodes plus metadata and corner patches."""
    path = Path(path)
    pts, vals = field.interior_nodes()
    out = [write_csv(path, {"x": pts[:, 0], "y": pts[:, 1], "f": vals})]
    meta = {
        "domain": field.domain.to_dict(),
        "domain_hash": field.domain.domain_hash,
        "resolution": field.solver_meta.get("resolution"),
        "origin": list(field.origin),
        "spacing": field.spacing,
        "shape": list(field.shape),
        "eps": field.eps,
        "n": field.n,
        "eps_schedule": field.solver_meta.get("eps_schedule", [field.eps]),
        "final_residual": field.solver_meta.get("final_residual"),
        "solver": {k: v for k, v in field.solver_meta.items()
                   if k not in ("residual_history",)},
        "patches": None,
    }
    if field.patches:
        npz = path.with_name(path.stem + "_patches.npz")
        arrays = {}
        for k, p in enumerate(field.patches):
            arrays[f"s{k}"] = p.s
            arrays[f"xi{k}"] = p.xi
            arrays[f"w{k}"] = p.w
        try:
            np.savez(npz, **arrays)
        except OSError as exc:
            raise WriteFailure(f"cannot write {npz}: {exc}") from exc
        meta["patches"] = {"file": npz.name,
                           "list": [{"vertex": list(p.vertex), "radius": p.radius,
                                     "axis": p.axis, "meta": p.meta} for p in field.patches]}
        out.append(npz)
    out.append(write_json(_sidecar(path), meta))
    return out


def read_field(path):
    """Inverse of :func:`write_field`."""
    from .corner_patch import CornerPatch
    from .elliptic import GridField, _stencil
    from .geometry import domain_from_dict

    path = Path(path)
    meta = read_json(_sidecar(path))
    domain = domain_from_dict(meta["domain"])
    if domain.domain_hash != meta["domain_hash"]:
        raise ValueError("domain hash in metadata does not match the stored domain")
    cols = read_csv(path)
    ox, oy = meta["origin"]
    h = float(meta["spacing"])
    ny, nx = meta["shape"]
    ii = np.rint((cols["x"] - ox) / h).astype(int)
    jj = np.rint((cols["y"] - oy) / h).astype(int)
    values = np.zeros((ny, nx))
    values[jj, ii] = cols["f"]
    if meta.get("resolution"):
        st = _stencil(domain, int(meta["resolution"]))
        mask = st.mask.copy()
    else:
        mask = np.zeros((ny, nx), dtype=np.int8)
        mask[jj, ii] = 1
    solver = {k: _unjson(v) for k, v in meta.get("solver", {}).items()}
    fld = GridField(domain=domain, origin=(ox, oy), spacing=h, values=values, mask=mask,
                    eps=float(meta["eps"]), n=int(meta["n"]), solver_meta=solver)
    if meta.get("patches"):
        arrays = np.load(path.with_name(meta["patches"]["file"]))
        fld.patches = tuple(
            CornerPatch(vertex=tuple(p["vertex"]), radius=float(p["radius"]),
                        s=arrays[f"s{k}"], xi=arrays[f"xi{k}"], w=arrays[f"w{k}"],
                        axis=float(p["axis"]), domain=domain, meta=p["meta"])
            for k, p in enumerate(meta["patches"]["list"]))
    return fld.freeze()


# ---------------------------------------------------------------------------
# cone profiles
# ---------------------------------------------------------------------------

_PROFILE_META = ("mu", "n", "midpoint_value", "endpoint_coeff", "residual_norm",
                 "theta_cut", "h_cut", "tol")


def write_profile(profile, path) -> list[Path]:
    path = Path(path)
    meta = {k: getattr(profile, k) for k in _PROFILE_META}
    meta["m"] = profile.midpoint_value
    meta["c"] = profile.endpoint_coeff
    meta["tail_theta"] = profile.tail_theta
    meta["tail_h"] = profile.tail_h
    return [write_csv(path, {"theta": profile.theta_grid, "h": profile.h_values}),
            write_json(_sidecar(path), meta)]


def read_profile(path):
    from .cone_profile import ConeProfile

    path = Path(path)
    meta = {k: _unjson(v) for k, v in read_json(_sidecar(path)).items()}
    cols = read_csv(path)
    return ConeProfile(mu=float(meta["mu"]), n=int(meta["n"]), theta_grid=cols["theta"],
                       h_values=cols["h"], midpoint_value=float(meta["midpoint_value"]),
                       endpoint_coeff=float(meta["endpoint_coeff"]),
                       residual_norm=float(meta["residual_norm"]),
                       theta_cut=float(meta["theta_cut"]), h_cut=float(meta["h_cut"]),
                       tail_theta=np.asarray(meta["tail_theta"], dtype=float),
                       tail_h=np.asarray(meta["tail_h"], dtype=float), tol=float(meta["tol"]))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def write_report(report, path) -> list[Path]:
    """JSON report plus a CSV of its ``(r, e)`` series."""
    path = Path(path)
    doc = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    series = doc.get("series", [])
    cols = {"r": [p["r"] for p in series], "e": [p["e"] for p in series]}
    return [write_json(path.with_suffix(".json"), doc),
            write_csv(path.with_suffix(".csv"), cols)]


def read_report(path):
    from .asymptotics import AsymptoticsReport

    return AsymptoticsReport.from_dict(read_json(Path(path).with_suffix(".json")))


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

def write_manifest(outdir, command: str, config: dict, files, seeds=None) -> Path:
    """Record what a run did: command, configuration, seeds and the files written."""
    from . import __version__

    outdir = Path(outdir)
    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": seeds or {},
        "files": sorted(os.path.relpath(f, outdir) for f in files),
    }
    return write_json(outdir / "manifest.json", doc)
