"""Batch command-line front end.

Reads a JSON model file, dispatches one subcommand, and writes artifacts into
the output directory: a deterministic ``report.json`` with the fixed schema
{command, inputs, results, warnings}, CSV files for gridded or tabular
results, rendered PNG figures alongside, and a ``meta.json`` sidecar carrying
the timestamp (kept out of report.json so identical runs produce identical
artifacts).

Exit status: 0 success; 2 usage errors and failed mathematical hypotheses;
3 numerical contract breaches.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericsError, PreconditionError
from .model import AffineModel, validate
from .riccati import SolverSettings
from .spectral import charfn, tail_bound_check
from .density import GridSpec, invariant_density, invert_density
from .montecarlo import SimConfig, compare_density, simulate_paths
from .ergodicity import (
    default_drift_samples,
    dobrushin_check,
    fit_drift_sweep,
    prefactor_consistency,
    split_semigroups,
    tv_decay_report,
)
from . import plots

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NUMERICS = 3


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v != ""])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad vector {text!r}: {exc}")


def _parse_multi_index(text: str) -> np.ndarray:
    try:
        return np.array([int(v) for v in text.split(",") if v != ""], dtype=int)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad multi-index {text!r}: {exc}")


def _parse_grid(text: str) -> GridSpec:
    dims = []
    for part in text.split(","):
        pieces = part.split(":")
        if len(pieces) != 3:
            raise argparse.ArgumentTypeError(
                f"bad grid part {part!r}; expected lo:hi:count"
            )
        lo, hi, cnt = float(pieces[0]), float(pieces[1]), int(pieces[2])
        dims.append((lo, hi, cnt))
    return GridSpec(tuple(dims))


def _parse_range(text: str) -> np.ndarray:
    pieces = text.split(":")
    if len(pieces) != 3:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; expected lo:hi:count")
    return np.linspace(float(pieces[0]), float(pieces[1]), int(pieces[2]))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affinekit",
        description="Riccati flows, Fourier densities and ergodicity diagnostics "
        "for affine jump-diffusions",
    )
    parser.add_argument("--version", action="version", version=f"affinekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_out=True):
        p.add_argument("--model", required=True, help="path to the model JSON file")
        if need_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--tol", type=float, default=1e-10, help="solver relative tolerance")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    p = sub.add_parser("validate", help="audit the admissibility conditions")
    common(p)

    p = sub.add_parser("charfn", help="characteristic function at one (t, x, u)")
    common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--x", type=_parse_vector, required=True)
    p.add_argument("--u", type=_parse_vector, required=True)

    p = sub.add_parser("density", help="transition density / derivative field on a grid")
    common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--x", type=_parse_vector, required=True)
    p.add_argument("--grid", type=_parse_grid, required=True, help="lo:hi:count[,lo:hi:count...]")
    p.add_argument("--q", type=_parse_multi_index, default=None, help="x-derivative multi-index")
    p.add_argument("--qtilde", type=_parse_multi_index, default=None, help="y-derivative multi-index")
    p.add_argument("--method", choices=["fft", "quad"], default="fft")
    p.add_argument("--eps-trunc", type=float, default=1e-8)
    p.add_argument("--umax", type=_parse_vector, default=None, help="explicit frequency radii")

    p = sub.add_parser("invariant", help="invariant density on a grid")
    common(p)
    p.add_argument("--grid", type=_parse_grid, required=True)
    p.add_argument("--qtilde", type=_parse_multi_index, default=None)
    p.add_argument("--method", choices=["fft", "quad"], default="fft")
    p.add_argument("--eps-trunc", type=float, default=1e-8)
    p.add_argument("--umax", type=_parse_vector, default=None)

    p = sub.add_parser("simulate", help="Euler ensemble of terminal states")
    common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--x", type=_parse_vector, required=True, help="starting point")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=_parse_grid, default=None,
                   help="optional grid: also invert the density and report KS per axis")

    p = sub.add_parser("bound-check", help="large-frequency envelope certificate")
    common(p)
    p.add_argument("--t0", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--umin", type=float, default=1.0)
    p.add_argument("--umax", type=float, default=1e4)
    p.add_argument("--usamples", type=int, default=2000)
    p.add_argument("--tsamples", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("lyapunov", help="weighted-norm drift fit on the diffusive split")
    common(p)
    p.add_argument("--rmax", type=float, default=1e3)

    p = sub.add_parser("dobrushin", help="kernel overlap from bounded starting points")
    common(p)
    p.add_argument("--h", type=_parse_vector, default=np.array([0.25, 0.5, 1.0]),
                   help="comma-separated kernel times")
    p.add_argument("--M", type=float, default=2.0)
    p.add_argument("--pairs", type=int, default=5, help="starting points per axis sweep")
    p.add_argument("--grid", type=_parse_grid, required=True)
    p.add_argument("--eps-trunc", type=float, default=1e-6)

    p = sub.add_parser("tvdecay", help="total-variation decay toward the invariant law")
    common(p)
    p.add_argument("--x", type=_parse_vector, required=True)
    p.add_argument("--tgrid", type=_parse_range, required=True, help="lo:hi:count")
    p.add_argument("--grid", type=_parse_grid, required=True)
    p.add_argument("--eps-trunc", type=float, default=1e-6)

    return parser


def _load_model(path: str) -> AffineModel:
    text = Path(path).read_text()
    return AffineModel.from_json(text)


def _write_report(out: Path, command: str, inputs: dict, results: dict, warns: list[str]):
    report = {
        "command": command,
        "inputs": inputs,
        "results": results,
        "warnings": warns,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    meta = {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "version": __version__}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _field_artifacts(field, out: Path, stem: str, make_plots: bool):
    field.write_csv(out / f"{stem}.csv")
    sidecar = {k: v for k, v in field.meta.items()}
    (out / f"{stem}_meta.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str) + "\n")
    if make_plots:
        plots.save_density_figure([field], out / f"{stem}.png", title=stem)


def dispatch(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = _load_model(args.model)
    settings = SolverSettings(rel_tol=args.tol, abs_tol=min(args.tol * 1e-2, 1e-12))
    make_plots = not args.no_plots
    caught: list[str] = []

    with warnings.catch_warnings(record=True) as wlist:
        warnings.simplefilter("always")
        code = _run(args, model, settings, out, make_plots)
        caught = [str(w.message) for w in wlist]
    if caught:
        report_path = out / "report.json"
        if report_path.exists():
            report = json.loads(report_path.read_text())
            report["warnings"] = sorted(set(report.get("warnings", []) + caught))
            report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return code


def _run(args, model, settings, out: Path, make_plots: bool) -> int:
    cmd = args.command

    if cmd == "validate":
        rep = validate(model)
        _write_report(out, cmd, {"model": args.model}, rep.to_dict(), [])
        if not rep.ok:
            print(
                "inadmissible model; violated conditions: " + ", ".join(rep.conditions()),
                file=sys.stderr,
            )
            return EXIT_PRECONDITION
        return EXIT_OK

    if cmd == "charfn":
        val = charfn(model, args.t, args.x, args.u, settings)
        _write_report(
            out, cmd,
            {"model": args.model, "t": args.t, "x": args.x.tolist(), "u": args.u.tolist()},
            {"re": val.real, "im": val.imag, "modulus": abs(val)},
            [],
        )
        return EXIT_OK

    if cmd == "density":
        method = "tensor-fft" if args.method == "fft" else "direct-quadrature"
        fld = invert_density(
            model, args.t, args.x, args.q, args.qtilde, args.grid,
            method=method, settings=settings,
            eps_trunc=args.eps_trunc, freq_radius=args.umax,
        )
        _field_artifacts(fld, out, "density", make_plots)
        _write_report(
            out, cmd,
            {
                "model": args.model, "t": args.t, "x": args.x.tolist(),
                "q": None if args.q is None else args.q.tolist(),
                "qtilde": None if args.qtilde is None else args.qtilde.tolist(),
                "method": method,
            },
            {
                "mass": fld.meta.get("mass"),
                "residue": fld.meta["residue"],
                "min_value": fld.meta["min_value"],
                "radii": fld.meta["radii"],
            },
            [],
        )
        return EXIT_OK

    if cmd == "invariant":
        method = "tensor-fft" if args.method == "fft" else "direct-quadrature"
        fld = invariant_density(
            model, args.grid, args.qtilde, settings,
            method=method, eps_trunc=args.eps_trunc, freq_radius=args.umax,
        )
        _field_artifacts(fld, out, "invariant", make_plots)
        _write_report(
            out, cmd,
            {"model": args.model, "qtilde": None if args.qtilde is None else args.qtilde.tolist(),
             "method": method},
            {
                "mass": fld.meta.get("mass"),
                "residue": fld.meta["residue"],
                "min_value": fld.meta["min_value"],
                "radii": fld.meta["radii"],
            },
            [],
        )
        return EXIT_OK

    if cmd == "simulate":
        cfg = SimConfig(x0=args.x, t_end=args.t, dt=args.dt, n_paths=args.paths, seed=args.seed)
        ens = simulate_paths(model, cfg)
        header = ",".join(f"x{k + 1}" for k in range(model.d))
        rows = "\n".join(",".join(f"{v:.17g}" for v in row) for row in ens.terminal)
        (out / "terminal.csv").write_text(header + "\n" + rows + "\n")
        results = {
            "mean": ens.terminal.mean(axis=0).tolist(),
            "cov": np.atleast_2d(np.cov(ens.terminal.T)).tolist(),
            "jump_counts_mean": ens.jump_counts.mean(axis=0).tolist(),
            "clamp_fraction": ens.clamp_fraction,
        }
        overlay = None
        if args.grid is not None:
            overlay = invert_density(model, args.t, args.x, None, None, args.grid, settings=settings)
            ks_list = []
            for ax in range(model.d):
                ks, l1 = compare_density(ens, overlay, ax)
                ks_list.append({"axis": ax, "ks": ks, "hist_l1": l1})
            results["marginals"] = ks_list
        if make_plots:
            plots.save_ensemble_figure(ens, out / "terminal_hist.png", axis=0, overlay=overlay)
        _write_report(
            out, cmd,
            {"model": args.model, "t": args.t, "x": args.x.tolist(), "dt": args.dt,
             "paths": args.paths, "seed": args.seed},
            results, [],
        )
        return EXIT_OK

    if cmd == "bound-check":
        rng = np.random.default_rng(args.seed)
        radii = np.geomspace(args.umin, args.umax, args.usamples)
        if model.d == 1:
            signs = np.where(rng.random(args.usamples) < 0.5, -1.0, 1.0)
            u_samples = (radii * signs)[:, None]
        else:
            dirs = rng.standard_normal((args.usamples, model.d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            u_samples = radii[:, None] * dirs
        t_samples = args.t0 * 2.0 ** np.arange(args.tsamples)
        cert = tail_bound_check(model, args.t0, args.theta, t_samples, u_samples, settings)
        (out / "certificate.json").write_text(json.dumps(cert.to_dict(), indent=2, sort_keys=True) + "\n")
        if make_plots:
            plots.save_margin_figure(cert, out / "envelope.png")
        _write_report(
            out, cmd,
            {"model": args.model, "t0": args.t0, "theta": args.theta,
             "umin": args.umin, "umax": args.umax, "usamples": args.usamples,
             "seed": args.seed},
            cert.to_dict(), [],
        )
        return EXIT_OK

    if cmd == "lyapunov":
        q_model, _ = split_semigroups(model)
        samples = default_drift_samples(q_model, r_max=args.rmax)
        lyap, fit = fit_drift_sweep(q_model, samples)
        results = {
            "M_I": lyap.M_I.tolist(),
            "M_J": lyap.M_J.tolist(),
            "epsilon": fit.epsilon,
            "c": fit.c,
            "C": fit.C,
            "ok": fit.ok,
        }
        _write_report(out, cmd, {"model": args.model, "rmax": args.rmax}, results, [])
        return EXIT_OK if fit.ok else EXIT_NUMERICS

    if cmd == "dobrushin":
        q_model, _ = split_semigroups(model)
        base = np.linspace(0.0, args.M, args.pairs)
        starts = []
        for v in base:
            x = np.zeros(model.d)
            x[0] = v
            starts.append(x)
        pairs = [(x, y) for i, x in enumerate(starts) for y in starts[i + 1:]]
        results = {"h": {}, "M": args.M}
        best = None
        for h in args.h:
            delta = dobrushin_check(
                q_model, float(h), args.M, pairs, args.grid,
                settings, eps_trunc=args.eps_trunc,
            )
            results["h"][f"{h:g}"] = delta
            if best is None or delta > best[1]:
                best = (float(h), delta)
        results["best_h"], results["best_delta"] = best
        _write_report(out, cmd, {"model": args.model, "M": args.M}, results, [])
        return EXIT_OK

    if cmd == "tvdecay":
        report = tv_decay_report(
            model, args.x, args.tgrid, args.grid, settings, eps_trunc=args.eps_trunc
        )
        rows = ["t,tv,fit"]
        for t, tv in zip(report.times, report.tv_values):
            fitval = (
                report.fitted_C * np.exp(-report.fitted_c * t)
                if np.isfinite(report.fitted_c)
                else np.nan
            )
            rows.append(f"{t:.17g},{tv:.17g},{fitval:.17g}")
        (out / "decay.csv").write_text("\n".join(rows) + "\n")
        if make_plots:
            plots.save_decay_figure(report, out / "decay.png")
        _write_report(
            out, cmd,
            {"model": args.model, "x": args.x.tolist()},
            report.to_dict(), [],
        )
        return EXIT_OK if report.fit_ok else EXIT_NUMERICS

    raise AssertionError(f"unhandled command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return dispatch(args)
    except PreconditionError as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
