"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import analysis as an
from . import harness as hx
from .config import ConfigError, dump_config, parse_config
from .estimator import EstimationError
from .geometry import GeometryError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML experiment config (defaults to the reference setup)")
    common.add_argument("--seed", type=int, help="master seed for Monte Carlo trials")
    common.add_argument("--trials", type=int, help="Monte Carlo trials per sweep point")
    common.add_argument("--out", help="output CSV path")
    common.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    common.add_argument("--echo-config", action="store_true", help="print the effective config and exit")
    parser = _Parser(prog="dopploc", description="Doppler-aided localization bounds and estimator")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, text in (
        (hx.CRB, "print PEB/MEB/CEB/VEB for the configured scenario"),
        (hx.HEATMAP, "bounds over a grid of UE positions"),
        (hx.SPEED, "bounds versus UE speed"),
        (hx.POWER, "bounds and estimator RMSE versus transmit power"),
        (hx.SOLVABILITY, "counting rule versus numerical rank for every table row"),
        (hx.LOCATE, "one seeded estimation trial: truth versus estimate"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _load(args) -> tuple:
    text = Path(args.config).read_text() if args.config else ""
    spec, eff = parse_config(text)
    exp = eff["experiment"]
    exp["kind"] = args.command
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.trials is not None:
        exp["trials"] = args.trials
    if args.out is not None:
        eff["output"]["path"] = args.out
    if args.no_plot:
        eff["output"]["plot"] = False
    # overrides go through the same validation as file values
    spec, eff = parse_config(dump_config(eff))
    return spec, eff


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _print_bounds(label: str, b, out) -> None:
    meb = ", ".join(_fmt(m) for m in b.meb)
    print(f"{label}: PEB {_fmt(b.peb)} m | MEB [{meb}] m | CEB {_fmt(b.ceb)} m | VEB {_fmt(b.veb)} m/s", file=out)


def cmd_crb(spec, out) -> int:
    res = hx.scenario_bounds(spec)
    print(f"state FIM rank {res['rank']} of {res['dim']}" + (" (singular)" if res["exact"].singular else ""),
          file=out)
    _print_bounds("exact", res["exact"], out)
    if res["approx"] is not None:
        _print_bounds("diagonal approx", res["approx"], out)
    if spec.output:
        header = ["peb", "meb_agg"] + [f"meb_{l + 1}" for l in range(len(res["exact"].meb))] + ["ceb", "veb"]
        b = res["exact"]
        hx.write_csv(spec.output, header, [[hx._fmt(v) for v in [b.peb, b.meb_aggregate, *b.meb, b.ceb, b.veb]]])
    return EXIT_OK


def _sweep_paths(spec, eff):
    path = Path(spec.output or f"{spec.kind}.csv")
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    (path.with_suffix(".config.yaml")).write_text(dump_config(eff))
    return path


def cmd_sweep(spec, eff, out) -> int:
    from . import plotting

    runners = {hx.HEATMAP: hx.run_heatmap, hx.SPEED: hx.run_speed_sweep, hx.POWER: hx.run_power_sweep}
    records = runners[spec.kind](spec)
    path = _sweep_paths(spec, eff)
    hx.write_csv(path, hx.sweep_header(records, hx.AXIS_NAMES[spec.kind]), hx.sweep_rows(records))
    print(f"wrote {len(records)} records to {path}", file=out)
    if spec.plot:
        fig = path.with_suffix(".png")
        if spec.kind == hx.SPEED:
            plotting.plot_speed_sweep(records, fig)
        elif spec.kind == hx.POWER:
            plotting.plot_power_sweep(records, fig)
        else:
            anchors = np.vstack([spec.scenario.bs_position[None], spec.scenario.ip_positions])
            plotting.plot_heatmap(records, fig, anchors)
        print(f"wrote figure {fig}", file=out)
    if spec.kind != hx.HEATMAP:
        for r in records:
            line = f"{_fmt(r.axis[0]):>10}  PEB {_fmt(r.peb)}  VEB {_fmt(r.veb)}"
            if r.rmse_p is not None:
                line += f"  RMSE(p0) {_fmt(r.rmse_p)}  RMSE(v) {_fmt(r.rmse_v)}  feasible {_fmt(r.feasible_rate)}"
            print(line, file=out)
    return EXIT_OK


def cmd_solvability(spec, out) -> int:
    rows = hx.run_solvability_matrix(spec.instances, spec.seed, spec.radio, spec.pilot_seed)
    print(f"{'row':<26} {'min NLOS':>9}  {'L':>2} {'counted':>11} {'full rank':>10} {'mismatch':>9}", file=out)
    for r in rows:
        min_nlos = "unsolvable" if r.min_nlos is None else str(r.min_nlos)
        verdict = "solvable" if r.counted else "unsolvable"
        print(f"{r.label:<26} {min_nlos:>9}  {r.num_ips:>2} {verdict:>11} {r.numeric_full_rank:>4}/{r.instances:<5}"
              f" {r.mismatches:>9}", file=out)
    total = sum(r.mismatches for r in rows)
    print(f"mismatches: {total} over {sum(r.instances for r in rows)} instances", file=out)
    if spec.output:
        hx.write_csv(spec.output, hx.SOLVABILITY_HEADER, hx.solvability_rows(rows))
    return EXIT_OK


def cmd_locate(spec, out) -> int:
    meas, res = hx.run_locate(spec)
    sc = spec.scenario
    print(f"seed {spec.seed}, refine {'on' if spec.refine else 'off'}", file=out)

    def vec(v):
        return "[" + ", ".join(_fmt(x) for x in np.ravel(v)) + "]"

    print(f"UE position   truth {vec(sc.ue_position)}  estimate {vec(res.ue_position)}", file=out)
    for l, (t, e) in enumerate(zip(sc.ip_positions, res.ip_positions), start=1):
        print(f"IP {l} position truth {vec(t)}  estimate {vec(e)}", file=out)
    print(f"clock offset  truth {_fmt(sc.clock_offset)}  estimate {_fmt(res.clock_offset)}", file=out)
    print(f"velocity      truth {vec(sc.velocity)}  estimate {vec(res.velocity)}", file=out)
    print(f"residual {_fmt(res.residual)}" + ("  (minimum on grid boundary)" if res.boundary_min else ""), file=out)
    return EXIT_OK


def main(argv: Optional[List[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        spec, eff = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.echo_config:
        out.write(dump_config(eff))
        return EXIT_OK
    try:
        if spec.kind == hx.CRB:
            return cmd_crb(spec, out)
        if spec.kind == hx.SOLVABILITY:
            return cmd_solvability(spec, out)
        if spec.kind == hx.LOCATE:
            return cmd_locate(spec, out)
        return cmd_sweep(spec, eff, out)
    except (EstimationError, an.AnalysisError, GeometryError, ValueError, RuntimeError,
            np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
