"""Command line entry point.

    python src/cli.py generate grid --n 5 --profile dipole --out data/grid5.json
    python src/cli.py check-space data/grid5.json
    python src/cli.py solve data/grid5.json problem.json --out out
    python src/cli.py verify data/grid5.json problem.json out/minimizer.json --relax-radii
    python src/cli.py modulus data/grid5.json family.json --p 2
    python src/cli.py run --config run.json --seed 3
"""

import argparse
import json
import os
import sys

import numpy as np

# Local imports
import constants
import log
import reports

from calculus import PathFamily, ScalarField, p_modulus
from energy import load_problem
from errors import PLaplaceError
from experiments import failure_list, load_config, run, write_rows
from generate import PROFILES, generate
from solver import SolverOptions, minimize
from space import Support, dump_space, load_space, structural_constants
from verify import (DEGIORGI_COLUMNS, DGCLASS_COLUMNS, de_giorgi_check, default_degiorgi_samples,
                    default_dgclass_samples, degiorgi_summary, dg_class_check)

logger = log.create_logger(name="CLI")


def build_parser():
    parser = argparse.ArgumentParser(prog="plaplace",
                                     description="Neumann p-Laplacian experiments on finite metric measure spaces")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", help="write a generated space file")
    gen.add_argument("kind", choices=["grid", "path", "annulus"])
    gen.add_argument("--n", type=int)
    gen.add_argument("--h", type=float)
    gen.add_argument("--r-in", type=float)
    gen.add_argument("--r-out", type=float)
    gen.add_argument("--profile", choices=PROFILES, default="zero")
    gen.add_argument("--amplitude", type=float, default=1.0)
    gen.add_argument("--corners", action="store_true")
    gen.add_argument("--out", default=os.path.join(constants.OUTPUT_DIR, "space.json"))

    check = commands.add_parser("check-space", help="structural constants of a space")
    check.add_argument("space")
    check.add_argument("--p", type=float, default=2.0)
    check.add_argument("--radii", type=float, nargs="+")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--out")

    solve = commands.add_parser("solve", help="minimize the energy")
    solve.add_argument("space")
    solve.add_argument("problem")
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--starts", type=int, default=1)
    solve.add_argument("--out", default=constants.OUTPUT_DIR)

    ver = commands.add_parser("verify", help="De Giorgi checks on a stored minimizer")
    ver.add_argument("space")
    ver.add_argument("problem")
    ver.add_argument("minimizer")
    ver.add_argument("--relax-radii", action="store_true")
    ver.add_argument("--format", choices=["csv", "json"], default="csv")
    ver.add_argument("--out", default=constants.OUTPUT_DIR)

    mod = commands.add_parser("modulus", help="p-modulus of a family of paths")
    mod.add_argument("space")
    mod.add_argument("family", help="JSON list of vertex id lists")
    mod.add_argument("--p", type=float, default=2.0)

    full = commands.add_parser("run", help="run the whole pipeline from a config")
    full.add_argument("--config", required=True)
    full.add_argument("--seed", type=int)
    full.add_argument("--relax-radii", action="store_true", default=None)
    full.add_argument("--format", choices=["csv", "json"])
    full.add_argument("--out")

    return parser


def cmd_generate(args):
    params = {"profile": args.profile, "amplitude": args.amplitude}
    if args.kind == "annulus":
        params.update(r_in=args.r_in or 0.0, r_out=args.r_out)
    else:
        params["n"] = args.n
    if args.h is not None:
        params["h"] = args.h
    if args.corners:
        params["corners"] = True

    description = generate(args.kind, params)
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    space = dump_space(description, args.out)

    print(json.dumps({"path": args.out, "vertices": space.n, "edges": len(space.lengths)}))
    return 0


def cmd_check_space(args):
    space = load_space(args.space)
    radii = args.radii or [space.diam * k for k in (0.125, 0.25, 0.5)]

    report = structural_constants(space, radii, args.p, seed=args.seed)
    data = report.to_dict(space)
    if args.out:
        reports.write_json(data, os.path.join(args.out, "hypothesis.json"))

    print(json.dumps(reports.sanitize(data), indent=2))
    return 0


def cmd_solve(args):
    space = load_space(args.space)
    problem = load_problem(space, args.problem)

    result = minimize(space, problem, SolverOptions(starts=args.starts, seed=args.seed))
    reports.write_json({**result.to_dict(space), "problem": problem.to_dict(space)},
                       os.path.join(args.out, "minimizer.json"))

    print(json.dumps({"value": result.value, "converged": result.converged,
                      "iterations": result.iterations}))
    return 0


def read_field(space, path):
    data = reports.read_json(path)
    values = np.zeros(space.n)
    for vid, value in data["u"].items():
        values[space.vertex(vid)] = float(value)
    return ScalarField(values, Support.CLOSURE)


def cmd_verify(args):
    space = load_space(args.space)
    problem = load_problem(space, args.problem)
    u = read_field(space, args.minimizer)

    samples = de_giorgi_check(space, u, problem,
                              default_degiorgi_samples(space, u, relax=args.relax_radii),
                              relax=args.relax_radii)
    dg = dg_class_check(space, u, problem.p,
                        default_dgclass_samples(space, u, relax=args.relax_radii))

    write_rows([s.to_row(space) for s in samples], DEGIORGI_COLUMNS,
               os.path.join(args.out, f"degiorgi.{args.format}"))
    write_rows([s.to_row(space) for s in dg.samples], DGCLASS_COLUMNS,
               os.path.join(args.out, f"dgclass.{args.format}"))

    print(json.dumps(reports.sanitize({**degiorgi_summary(samples), "dgclass": dg.to_dict()})))
    return 0


def cmd_modulus(args):
    space = load_space(args.space)
    family = PathFamily.from_ids(space, reports.read_json(args.family))

    print(json.dumps({"p": args.p, "paths": len(family), "modulus": p_modulus(space, family, args.p)}))
    return 0


def cmd_run(args):
    config = load_config(args.config)
    if args.format:
        config.verify.format = args.format

    outcome = run(config, seed=args.seed, relax=args.relax_radii, output_dir=args.out)
    print(json.dumps({"failures": outcome.failures}))

    return outcome.exit_code


COMMANDS = {
    "generate": cmd_generate,
    "check-space": cmd_check_space,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "modulus": cmd_modulus,
    "run": cmd_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)

    try:
        return COMMANDS[args.command](args)
    except (PLaplaceError, OSError, json.JSONDecodeError) as err:
        logger.error(f"{type(err).__name__}: {err}")
        print(json.dumps({"failures": failure_list(err)}))
        return 2


if __name__ == "__main__":
    sys.exit(main())
