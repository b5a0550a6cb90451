"""Orchestration of a full run: structural constants, minimization, the
uniqueness, convexity and lower-bound checks, the De Giorgi checks and the
boundedness study, with every report written to the output directory."""

import os

from dataclasses import dataclass, field, fields

# Local imports
import constants
import log
import reports

from calculus import embedding_constants
from energy import Variant, problem_from_dict
from errors import BadParams, BadExponent, NotConverged
from generate import generate
from solver import (SolverOptions, convexity_suite, minimize, multi_start_analysis,
                    require_converged)
from space import audit_hypotheses, build_space, load_space, structural_constants
from verify import (DEGIORGI_COLUMNS, DGCLASS_COLUMNS, FAIL, boundedness_report,
                    de_giorgi_check, default_degiorgi_samples, default_dgclass_samples,
                    degiorgi_summary, dg_class_check, lower_bound_check, mesh_stability)

logger = log.create_logger(name="Experiments")

CONFIG_FIELDS = {"space", "problem", "solver", "verify", "output_dir"}


@dataclass
class VerifySettings:
    relax_radii: bool = False
    radius_grid: list = None
    poincare_starts: int = constants.POINCARE_STARTS
    embedding_starts: int = constants.RATIO_STARTS
    uniqueness_starts: int = 8
    convexity_probes: int = 1000
    boundedness_R: float = None
    refinement: list = field(default_factory=list)
    format: str = "csv"

    def __post_init__(self):
        if self.uniqueness_starts < 2:
            raise BadParams("uniqueness_starts must be at least 2")
        if self.format not in ("csv", "json"):
            raise BadParams(f"format must be csv or json, got {self.format!r}")


@dataclass
class RunConfig:
    space: object
    problem: dict
    solver: SolverOptions
    verify: VerifySettings
    output_dir: str = constants.OUTPUT_DIR
    base_dir: str = "."


def config_from_dict(data, base_dir="."):
    unknown = set(data) - CONFIG_FIELDS
    if unknown:
        raise BadParams(f"Unknown config keys: {sorted(unknown)}")
    if "space" not in data or "problem" not in data:
        raise BadParams("A config needs a space and a problem")

    settings = data.get("verify", {})
    known = {f.name for f in fields(VerifySettings)}
    if set(settings) - known:
        raise BadParams(f"Unknown verify settings: {sorted(set(settings) - known)}")

    space = data["space"]
    if isinstance(space, str):
        path = os.path.join(base_dir, space)
        if not os.path.isfile(path):
            raise BadParams(f"Space file {path} does not exist")
    elif not (isinstance(space, dict) and "generator" in space):
        raise BadParams("space must be a file path or a generator entry")

    return RunConfig(space=space, problem=dict(data["problem"]),
                     solver=SolverOptions.from_dict(data.get("solver", {})),
                     verify=VerifySettings(**settings),
                     output_dir=data.get("output_dir", constants.OUTPUT_DIR), base_dir=base_dir)


def load_config(path):
    return config_from_dict(reports.read_json(path), base_dir=os.path.dirname(path) or ".")


def resolve_space(config, n=None):
    """The configured space; with `n`, the same generator at another resolution."""

    if isinstance(config.space, str):
        return load_space(os.path.join(config.base_dir, config.space))

    params = {k: v for k, v in config.space.items() if k != "generator"}
    if n is not None:
        params["n"] = n
        params.pop("h", None)

    return build_space(generate(config.space["generator"], params))


@dataclass
class RunOutcome:
    failures: list
    summary: dict

    @property
    def exit_code(self):
        return 0 if not self.failures else 1


def _radius_grid(space, settings):
    if settings.radius_grid:
        return settings.radius_grid
    return [space.diam * k for k in (0.125, 0.25, 0.5)]


def run(config, *, seed=None, relax=None, output_dir=None):
    """Execute the full pipeline and write hypothesis.json, minimizer.json,
    the De Giorgi and De Giorgi class reports and summary.json.

    Returns:
        RunOutcome: The failed hard assertions (empty on success) and the summary.
    """

    settings = config.verify
    relax = settings.relax_radii if relax is None else relax
    seed = config.solver.seed if seed is None else seed
    out = output_dir or config.output_dir
    failures = []

    def hard(ok, message):
        if not ok:
            logger.error(message)
            failures.append(message)

    space = resolve_space(config)
    problem = problem_from_dict(space, config.problem)
    options = SolverOptions.from_dict({**config.solver.__dict__, "seed": seed, "record_iterates": True})

    # Structural constants
    hypothesis = structural_constants(space, _radius_grid(space, settings), problem.p,
                                      starts=settings.poincare_starts, seed=seed,
                                      threads=options.threads)
    violations = audit_hypotheses(space, hypothesis)
    hard(not violations, f"hypothesis audit: {violations[:5]}")

    # Minimization
    result = minimize(space, problem, options)
    try:
        require_converged(result)
    except NotConverged as err:
        hard(False, f"minimizer did not converge: {err}")

    embedding = embedding_constants(space, problem.p, hypothesis.s, problem.q,
                                    starts=settings.embedding_starts, seed=seed,
                                    samples=result.iterates + [result.u], threads=options.threads)
    try:
        problem.reaction.check(embedding.p_star)
        gamma_ok = True
    except BadExponent as err:
        logger.warning(str(err))
        gamma_ok = False

    bounds = lower_bound_check(space, problem, embedding.K_T, result.iterates + [result.u])
    hard(bounds.holder_violations == 0 and bounds.floor_violations == 0,
         f"lower bounds violated on {bounds.holder_violations + bounds.floor_violations} fields")

    baseline = -problem.reaction.c * space.domain_measure
    hard(result.value <= baseline + constants.MEAN_TOL, "minimum above J(0)")

    # Uniqueness and convexity
    uniqueness = multi_start_analysis(
        space, problem,
        SolverOptions.from_dict({**options.__dict__, "starts": settings.uniqueness_starts,
                                 "record_iterates": False}))
    hard(uniqueness.midpoints_ok, "midpoint of two minimizers is not a minimizer")

    probes = convexity_suite(space, problem, settings.convexity_probes, seed)
    hard(probes.jensen_violations == 0, f"{probes.jensen_violations} Jensen violations")
    hard(probes.clarkson_violations == 0, f"{probes.clarkson_violations} Clarkson violations")

    # De Giorgi at the boundary, De Giorgi class inside
    samples = de_giorgi_check(space, result.u, problem,
                              default_degiorgi_samples(space, result.u, relax=relax),
                              relax=relax, threads=options.threads)
    dg_summary = degiorgi_summary(samples)
    hard(dg_summary["pass_counts"][FAIL] == 0,
         f"{dg_summary['pass_counts'][FAIL]} De Giorgi samples without a finite constant")

    plain = minimize(space, problem, SolverOptions.from_dict({**options.__dict__, "starts": 1,
                                                              "record_iterates": False}),
                     Variant.I)
    dg_plain = dg_class_check(space, plain.u, problem.p,
                              default_dgclass_samples(space, plain.u, relax=relax),
                              threads=options.threads)
    hard(dg_plain.passed, "De Giorgi class check failed for the minimizer of I")
    dg_data = dg_class_check(space, result.u, problem.p,
                             default_dgclass_samples(space, result.u, relax=relax),
                             threads=options.threads)

    # Boundedness near the boundary, optionally across refinements
    R = settings.boundedness_R or 0.9 * space.diam_domain * constants.BOUNDEDNESS_RADIUS_FRACTION
    bounded = boundedness_report(space, result.u, R, relax=relax, mesh="base")

    mesh = None
    if settings.refinement:
        if isinstance(config.space, str):
            raise BadParams("Refinement needs a generator entry as space")
        levels = []
        for n in settings.refinement:
            fine = resolve_space(config, n)
            fine_problem = problem_from_dict(fine, {k: v for k, v in config.problem.items() if k != "f"})
            fine_result = minimize(fine, fine_problem,
                                   SolverOptions.from_dict({**options.__dict__, "starts": 1,
                                                            "record_iterates": False}))
            levels.append(boundedness_report(fine, fine_result.u, R, relax=True, mesh=f"n={n}"))
        mesh = mesh_stability(levels)

    # Reports
    suffix = settings.format
    reports.write_json({**hypothesis.to_dict(space), "embedding": embedding.__dict__,
                        "audit": violations}, os.path.join(out, "hypothesis.json"))
    reports.write_json({**result.to_dict(space), "problem": problem.to_dict(space)},
                       os.path.join(out, "minimizer.json"))
    write_rows([s.to_row(space) for s in samples], DEGIORGI_COLUMNS,
               os.path.join(out, f"degiorgi.{suffix}"))
    write_rows([s.to_row(space) for s in dg_plain.samples], DGCLASS_COLUMNS,
               os.path.join(out, f"dgclass.{suffix}"))

    summary = {
        "value": result.value,
        "J0": baseline,
        "converged": result.converged,
        "iterations": result.iterations,
        "K_max_p": dg_summary["K_max_p"],
        "K_max_1": dg_summary["K_max_1"],
        "pass_counts": dg_summary["pass_counts"],
        "dgclass": dg_plain.to_dict(),
        "dgclass_data_minimizer": dg_data.to_dict(),
        "uniqueness": uniqueness.to_dict(),
        "uniqueness_within_thresholds": (uniqueness.gradient_spread <= constants.UNIQUENESS_GRADIENT_TOL
                                         and uniqueness.data_spread <= constants.UNIQUENESS_DATA_TOL),
        "convexity": probes.to_dict(),
        "lower_bounds": bounds.to_dict(),
        "embedding": {"p_star": embedding.p_star, "K_S": embedding.K_S, "K_T": embedding.K_T},
        "gamma_below_p_star": gamma_ok,
        "q_admissible": dict(zip(("threshold", "admissible"), problem.q_admissible(hypothesis.s))),
        "boundedness": bounded.to_dict(space),
        "mesh": mesh.to_dict() if mesh else None,
        "failures": failures,
    }
    reports.write_json(summary, os.path.join(out, "summary.json"))

    logger.info(f"Run finished with {len(failures)} failures, value {result.value:.10g}")

    return RunOutcome(failures=failures, summary=summary)


def write_rows(rows, columns, path):
    if path.endswith(".json"):
        reports.write_json([{c: row.get(c) for c in columns} for row in rows], path)
    else:
        reports.write_csv(rows, columns, path)


def failure_list(err):
    """Machine-readable description of an input error."""

    return [{"error": type(err).__name__, "message": str(err)}]

