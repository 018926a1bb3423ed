"""Command-line front end.

Exit codes: 0 success, 1 verdict failure, 2 usage error, 3 solver error.
Every run writes into its own output directory together with a
``manifest.json`` listing the configuration, seeds and files produced.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import CertificationFailed, HypminError, PreconditionError, WriteFailure

log = logging.getLogger("hypmin")

EXIT_OK, EXIT_VERDICT, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _radii(text):
    try:
        vals = [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad radii list {text!r}") from None
    return vals


def _load_domain(path):
    from .geometry import domain_from_dict

    p = Path(path)
    if not p.is_file():
        raise UsageError(f"domain file {path} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"domain file {path} is not valid JSON: {exc}") from None
    if "kind" not in cfg:
        raise UsageError(f"domain file {path} has no 'kind' field")
    try:
        return domain_from_dict(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad domain description in {path}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hypmin", description="Minimal graphs in hyperbolic space over planar domains.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve the Dirichlet problem on a domain")
    p.add_argument("--domain", required=True)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--no-patches", action="store_true", help="skip the corner patch solves")
    p.add_argument("--patch-radius", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("cone", help="solve the cone profile ODE")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--out", required=True)

    p = sub.add_parser("certify-supersolution", help="certify the explicit supersolution")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--grid-size", type=int, default=100_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mobius-check", help="check the isometry T_L numerically")
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run an asymptotics experiment")
    p.add_argument("experiment", choices=["thm1", "thm2", "localization", "smooth"])
    p.add_argument("--domain", required=True)
    p.add_argument("--reference", help="comparison domain (localization)")
    p.add_argument("--vertex", type=_radii, default=[0.0, 0.0])
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--R0", type=float)
    p.add_argument("--radii", type=_radii, help="comma separated, decreasing")
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--patch-radius", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("plot", help="render a report JSON or field CSV as SVG")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="SVG file to write")
    return ap


# ---------------------------------------------------------------------------
# commands; each returns (exit code, files written, seeds)
# ---------------------------------------------------------------------------

def _cmd_solve(a, out):
    from .elliptic import solve_domain
    from .plotting import plot_field

    dom = _load_domain(a.domain)
    try:
        fld = solve_domain(dom, a.resolution, tol=a.tol,
                           corner_patches=not a.no_patches, patch_radius=a.patch_radius)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    files = io.write_field(fld, out / "field.csv")
    if a.plot:
        files.append(plot_field(fld, out / "field.svg"))
    print(f"solved {dom.kind} at resolution {a.resolution}: "
          f"{fld.solver_meta.get('unknowns')} unknowns, "
          f"residual {fld.solver_meta.get('final_residual'):.3e}")
    return EXIT_OK, files, {}


def _cmd_cone(a, out):
    from .cone_profile import solve_cone_profile

    try:
        prof = solve_cone_profile(a.mu, a.n, tol=a.tol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    files = io.write_profile(prof, out / "profile.csv")
    print(f"m = {prof.midpoint_value:.15g}, c = {prof.endpoint_coeff:.15g}, "
          f"residual {prof.residual_norm:.3e}")
    return EXIT_OK, files, {}


def _cmd_certify(a, out):
    from .cone_profile import certify_supersolution, supersolution_params

    try:
        A, B, alpha, beta = supersolution_params(a.mu, a.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    doc = {"mu": a.mu, "n": a.n, "A": A, "B": B, "alpha": alpha, "beta": beta,
           "grid_size": a.grid_size}
    try:
        cert = certify_supersolution(a.mu, a.n, A, B, alpha, beta, a.grid_size)
        doc.update(certified=True, max_residual=cert.max_residual)
        code = EXIT_OK
    except CertificationFailed as exc:
        doc.update(certified=False, worst_theta=exc.theta, worst_value=exc.value)
        print(str(exc), file=sys.stderr)
        code = EXIT_VERDICT
    files = [io.write_json(out / "certificate.json", doc)]
    print(f"certified: {doc['certified']} (A={A:g}, B={B:g}, alpha={alpha:g}, beta={beta:g})")
    return code, files, {}


def _cmd_mobius(a, out):
    from .mobius import AT_INFINITY, apply_T, conformal_factor_on_plane, isometry_defect, jacobian_T

    if not a.L > 0 or a.samples < 1:
        raise UsageError("need L > 0 and at least one sample")
    L = a.L
    rng = np.random.default_rng(a.seed)
    pts = rng.uniform(-3 * L, 3 * L, (a.samples, 3))
    pts[:, 2] = rng.uniform(0.01 * L, 3 * L, a.samples)
    defect = isometry_defect(L, pts)
    J0 = jacobian_T(L, np.array([-L, 0.0, 0.0]))
    doc = {
        "L": L, "samples": a.samples, "seed": a.seed, "tol": a.tol,
        "isometry_defect": defect,
        "image_of_x0": apply_T(L, [-L, 0.0, 0.0]).tolist(),
        "jacobian_at_x0_defect": float(np.abs(J0 - 0.5 * np.eye(3)).max()),
        "fixed_point_defect": float(np.abs(apply_T(L, [0.0, 0.0, L]) - [0.0, 0.0, L]).max()),
        "pole_at_infinity": apply_T(L, [L, 0.0, 0.0], on_pole="marker") is AT_INFINITY,
        "conformal_factor_x0": conformal_factor_on_plane(L, [-L, 0.0, 0.0]),
        "conformal_factor_origin": conformal_factor_on_plane(L, [0.0, 0.0, 0.0]),
    }
    ok = (defect <= a.tol and doc["jacobian_at_x0_defect"] <= a.tol
          and doc["fixed_point_defect"] <= a.tol * L and doc["pole_at_infinity"])
    doc["verdict"] = bool(ok)
    files = [io.write_json(out / "mobius.json", doc)]
    print(f"isometry defect {defect:.3e} over {a.samples} points: {'pass' if ok else 'FAIL'}")
    return (EXIT_OK if ok else EXIT_VERDICT), files, {"sampling": a.seed}


def _cmd_verify(a, out):
    from . import asymptotics as asy
    from .plotting import plot_report

    dom = _load_domain(a.domain)
    kw = {"resolution": a.resolution}
    if a.radii is not None:
        kw["radii"] = a.radii
    try:
        if a.experiment == "thm1":
            rep = asy.theorem1_experiment(dom, tuple(a.vertex), delta=a.delta, **kw)
        elif a.experiment == "thm2":
            from .geometry import PerturbedLens

            if not isinstance(dom, PerturbedLens):
                raise UsageError("thm2 needs a perturbed_lens domain")
            if a.patch_radius is not None:
                kw["patch_radius"] = a.patch_radius
            rep = asy.theorem2_experiment(dom, alpha=a.alpha, eps=a.eps, delta=a.delta, **kw)
        elif a.experiment == "localization":
            if a.reference is None or a.R0 is None:
                raise UsageError("localization needs --reference and --R0")
            ref = _load_domain(a.reference)
            rep = asy.localization_experiment(dom, ref, tuple(a.vertex), a.R0, delta=a.delta,
                                              patch_radius=a.patch_radius, **kw)
        else:
            if "radii" in kw:
                kw["depths"] = kw.pop("radii")
            rep = asy.smooth_expansion_experiment(dom, **kw)
    except PreconditionError as exc:
        raise UsageError(str(exc)) from None
    files = io.write_report(rep, out / "report")
    if a.plot:
        files.append(plot_report(rep, out / "report.svg"))
    print(f"{rep.experiment}: slope {rep.slope:.4f} (threshold {rep.threshold}), "
          f"verdict {'pass' if rep.verdict else 'FAIL'}")
    return (EXIT_OK if rep.verdict else EXIT_VERDICT), files, {}


def _cmd_plot(a, out):
    from .plotting import emit_plot

    src = Path(a.input)
    if not src.is_file():
        raise UsageError(f"input {src} does not exist")
    if src.suffix == ".json":
        obj = io.read_json(src)
    elif src.suffix == ".csv" and src.with_suffix(".json").is_file():
        obj = io.read_field(src)
    else:
        raise UsageError("plot input must be a report .json or a field .csv with its sidecar")
    path = emit_plot(obj, a.out)
    return EXIT_OK, [path], {}


_COMMANDS = {"solve": _cmd_solve, "cone": _cmd_cone, "certify-supersolution": _cmd_certify,
             "mobius-check": _cmd_mobius, "verify": _cmd_verify, "plot": _cmd_plot}


def run(argv=None) -> int:
    """Entry point; returns the process exit code instead of exiting."""
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # plot writes a single file; every other command owns an output directory
    out = Path(a.out).parent if a.command == "plot" else Path(a.out)
    try:
        code, files, seeds = _COMMANDS[a.command](a, out)
        config = {k: v for k, v in vars(a).items() if k != "verbose"}
        files.append(io.write_manifest(out, a.command, config, files, seeds))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WriteFailure as exc:
        print(f"write failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except HypminError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
