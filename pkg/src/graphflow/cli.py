"""Command-line interface.

Four subcommands share one run file so every analysis describes the same
operator: `simulate` writes the trajectory ledger, `spectrum` writes the
characteristic-root report, `check` prints the positivity certificate
plus diagnostics, and `resolvent` applies the resolvent at a given
lambda. Exit codes: 0 success, 1 a certified check failed, 2 invalid
input, 3 numerical failure. Verbosity via the GRAPHFLOW_LOG environment
variable (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .analysis import empirical_positivity, positivity_certificate, variation_curve
from .errors import InputError, NumericalError
from .runfile import Scenario, load_runfile
from .solver import run
from .spectral import find_roots, generator_residual, resolvent_apply

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

POSITIVITY_FLOOR = -1e-12


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, payload: dict) -> None:
    # generated_at is the single nondeterministic key; everything else is
    # a pure function of the run file
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(scenario: Scenario, args) -> int:
    out = _out_dir(args)
    report = run(
        scenario.graph,
        scenario.measures(),
        scenario.functionals(),
        scenario.sim,
        *scenario.initial(),
        strict=scenario.strict,
    )
    with open(out / "trajectory.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mass", "min_value", "boundary_residual",
                         "mass_balance_residual"])
        for row in report.rows(every=scenario.sim.output_every):
            writer.writerow([repr(float(v)) for v in row])
    if scenario.snapshots:
        for t, grid in report.snapshots:
            name = out / f"snapshot_t{t:.6f}.csv"
            with open(name, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x"] + [f"edge_{j + 1}" for j in range(grid.shape[0])])
                xs = np.linspace(0.0, 1.0, grid.shape[1])
                for i, x in enumerate(xs):
                    writer.writerow([repr(float(x))] + [repr(float(v)) for v in grid[:, i]])
    summary = {
        "generated_at": _timestamp(),
        "sim": {
            "N": scenario.sim.n,
            "t_final": scenario.sim.t_final,
            "output_every": scenario.sim.output_every,
            "mode": scenario.mode,
        },
        "summary": {
            "mass_initial": float(report.mass[0]),
            "mass_final": float(report.mass[-1]),
            "mass_drift": float(np.abs(report.mass - report.mass[0]).max()),
            "min_value": float(report.min_value.min()),
            "max_boundary_residual": float(report.boundary_residual[1:].max())
            if len(report.boundary_residual) > 1
            else 0.0,
            "max_mass_balance_residual": float(np.abs(report.mass_balance_residual).max()),
        },
    }
    _write_json(out / "run_report.json", summary)
    print(f"simulate: {len(report.times)} steps recorded to {out}")
    return EXIT_OK


def cmd_spectrum(scenario: Scenario, args) -> int:
    out = _out_dir(args)
    spec = scenario.spectrum
    report = find_roots(
        scenario.graph,
        scenario.measures(),
        scenario.functionals(),
        spec.rectangle,
        grid_density=spec.grid_density,
        tol=spec.tol,
        n=scenario.sim.n,
        workers=args.parallel,
    )
    roots = [
        {
            "re": r.lam.real,
            "im": r.lam.imag,
            "abs_det": r.abs_det,
            "residual": r.eigen_residual,
            "multiplicity": r.multiplicity,
            "newton_iterations": r.newton_iterations,
        }
        for r in sorted(report.roots, key=lambda r: (r.lam.real, r.lam.imag))
    ]
    payload = {
        "generated_at": _timestamp(),
        "rectangle": list(spec.rectangle),
        "grid_density": spec.grid_density,
        "tol": spec.tol,
        "roots": roots,
        "winding_total": report.winding_total,
        "windings": [
            {"box": [float(v) for v in box], "winding": w}
            for box, w in report.windings
        ],
    }
    _write_json(out / "spectrum.json", payload)
    with open(out / "spectrum.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im", "abs_det", "residual", "multiplicity"])
        for r in roots:
            writer.writerow(
                [repr(float(r["re"])), repr(float(r["im"])), repr(float(r["abs_det"])),
                 repr(float(r["residual"])), r["multiplicity"]]
            )
    print(f"spectrum: {len(roots)} roots, winding total {report.winding_total}")
    return EXIT_OK


def cmd_check(scenario: Scenario, args) -> int:
    measures = scenario.measures()
    functionals = scenario.functionals()
    cert = positivity_certificate(scenario.graph, measures, functionals, scenario.lambda0)
    print("positivity certificate:")
    print(json.dumps(cert.as_dict(), sort_keys=True, indent=2))
    print("small-time variation |mu|([-a,0]) + |nu|([-a,0]):")
    curve = variation_curve(measures, functionals)
    for alpha, value in curve:
        print(f"  alpha={alpha:4.2f}  variation={value!r}")

    no_delays = all(not m.atoms for m in measures) and all(
        not f.atoms for f in functionals
    )
    failed = not cert.hypothesis_met
    if cert.hypothesis_met:
        f, g = scenario.initial()
        if f.min() >= 0.0 and g.min() >= 0.0:
            min_val = empirical_positivity(
                scenario.graph, measures, functionals, f, g, scenario.sim,
                strict=scenario.strict,
            )
            ok = min_val >= POSITIVITY_FLOOR
            print(f"empirical positivity: min grid value {min_val!r} -> "
                  f"{'ok' if ok else 'VIOLATED'}")
            failed = failed or not ok
        else:
            # the certified statement is nonnegative-in, nonnegative-out;
            # signed initial data says nothing about it
            print("empirical positivity: initial data has negative values; "
                  "not applicable")
        if no_delays:
            report = run(scenario.graph, measures, functionals, scenario.sim,
                         f=f, g=g, strict=scenario.strict)
            drift = float(np.abs(report.mass - report.mass[0]).max())
            print(f"conservation note: no delays configured; mass drift {drift!r}")
    else:
        print("hypothesis not met; skipping the empirical positivity run")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_resolvent(scenario: Scenario, args) -> int:
    out = _out_dir(args)
    lam = _parse_lambda(args.lam)
    f, g = scenario.initial()
    x, phi = resolvent_apply(
        lam, f, g, scenario.graph, scenario.measures(), scenario.functionals()
    )
    residual = generator_residual(
        lam, x, phi, f.astype(complex), g.astype(complex),
        scenario.graph, scenario.measures(), scenario.functionals(),
    )
    m, nodes = x.shape
    xs = np.linspace(0.0, 1.0, nodes)
    with open(out / "resolvent_x.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["x"]
        for j in range(m):
            header += [f"edge_{j + 1}_re", f"edge_{j + 1}_im"]
        writer.writerow(header)
        for i in range(nodes):
            row = [repr(float(xs[i]))]
            for j in range(m):
                row += [repr(float(x[j, i].real)), repr(float(x[j, i].imag))]
            writer.writerow(row)
    with open(out / "resolvent_phi.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "x", "edge", "re", "im"])
        depth = phi.shape[0]
        for h in range(depth):
            theta = -h / (depth - 1)
            for j in range(m):
                for i in range(nodes):
                    writer.writerow(
                        [repr(float(theta)), repr(float(xs[i])), j + 1,
                         repr(float(phi[h, j, i].real)), repr(float(phi[h, j, i].imag))]
                    )
    _write_json(
        out / "resolvent.json",
        {
            "generated_at": _timestamp(),
            "lambda": {"re": lam.real, "im": lam.imag},
            "identity_residual": residual,
        },
    )
    print(f"resolvent at {lam}: identity residual {residual!r}")
    return EXIT_OK


def _parse_lambda(text: str) -> complex:
    try:
        parts = text.split(",")
        if len(parts) == 1:
            return complex(float(parts[0]), 0.0)
        if len(parts) == 2:
            return complex(float(parts[0]), float(parts[1]))
    except ValueError:
        pass
    raise InputError(f"--lambda expects 're' or 're,im', got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphflow",
        description="Delayed transport flows on metric graphs: simulate, "
        "analyze spectra, check positivity, apply resolvents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("simulate", "run the flow and write the trajectory ledger"),
        ("spectrum", "locate characteristic roots in a rectangle"),
        ("check", "print the positivity certificate and diagnostics"),
        ("resolvent", "apply the resolvent at a given lambda"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--runfile", required=True, help="path to the JSON run file")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--strict", dest="mode", action="store_const", const="strict",
                          help="require history(0) == initial profile")
        mode.add_argument("--lenient", dest="mode", action="store_const", const="lenient",
                          help="patch incompatible history instead of failing")
        p.add_argument("--parallel", type=int, default=1, metavar="K",
                       help="worker threads for spectral contour evaluation")
        if name == "resolvent":
            p.add_argument("--lambda", dest="lam", required=True,
                           help="resolvent point as 're' or 're,im'")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "spectrum": cmd_spectrum,
    "check": cmd_check,
    "resolvent": cmd_resolvent,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GRAPHFLOW_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        scenario = load_runfile(args.runfile)
        if args.mode:
            scenario.mode = args.mode
        return COMMANDS[args.command](scenario, args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
