"""Minimization of the energy over mean-zero fields, a brute-force grid
oracle, the multi-start uniqueness analysis and the convexity probes."""

import itertools
import math
import threading

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from scipy import optimize

# Local imports
import constants
import log

from calculus import ScalarField
from energy import Energy, Variant
from errors import BadParams, NotConverged, TooManyVertices
from space import Support

logger = log.create_logger(name="Solver")

# Rows per batch evaluated by the grid oracle
ORACLE_CHUNK = 65536

# SLSQP keeps its line-search state between calls
_SLSQP_LOCK = threading.Lock()


@dataclass
class SolverOptions:
    max_iters: int = constants.MAX_ITERS
    tol: float = constants.STALL_TOL
    eps0: float = None
    eps_decay: float = constants.EPS_DECAY
    eps_every: int = constants.EPS_EVERY
    eps_floor: float = constants.EPS_FLOOR
    stall_window: int = constants.STALL_WINDOW
    starts: int = 1
    seed: int = 0
    polish_iters: int = constants.POLISH_ITERS
    refine: bool = True
    record_iterates: bool = False
    threads: int = constants.THREADS

    def __post_init__(self):
        if not self.tol > 0:
            raise BadParams(f"tol must be positive, got {self.tol}")
        if self.starts < 1:
            raise BadParams(f"starts must be at least 1, got {self.starts}")
        if not 0 < self.eps_decay < 1:
            raise BadParams(f"eps_decay must lie in (0, 1), got {self.eps_decay}")
        if self.eps_floor < 0:
            raise BadParams(f"eps_floor must be nonnegative, got {self.eps_floor}")
        if self.eps0 is not None and not self.eps0 > self.eps_floor:
            raise BadParams(f"eps0 = {self.eps0} must exceed the floor {self.eps_floor}")
        if self.max_iters < 1 or self.eps_every < 1 or self.stall_window < 1:
            raise BadParams("max_iters, eps_every and stall_window must be positive")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise BadParams(f"Unknown solver options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class MinimizerResult:
    u: ScalarField
    g: ScalarField
    value: float
    iterations: int
    converged: bool
    history: list = field(repr=False)
    start: int = 0
    iterates: list = field(default_factory=list, repr=False)

    @property
    def norm(self):
        return float(np.linalg.norm(self.u.values))

    def to_dict(self, space):
        return {
            "value": self.value,
            "iterations": self.iterations,
            "converged": self.converged,
            "start": self.start,
            "u": self.u.to_dict(space),
            "g": self.g.to_dict(space),
            "history": list(self.history),
        }


def data_range(space, problem):
    f = problem.f[space.boundary]
    spread = float(f.max() - f.min()) if len(f) else 0.0
    return spread if spread > 0 else 1.0


class Minimizer:
    """Smoothed gradient descent on the energy over mean-zero fields.

    Each vertex max in g_u is replaced by an eps-softmax. Steps start from a
    Barzilai-Borwein trial and backtrack until the Armijo condition holds;
    iterates are projected back to mean zero. eps is decayed on a fixed
    period or on a stall, and a stall at the floor ends the descent. A
    subgradient polish on the exact energy follows, and on small spaces the
    exact finish of `refine`.
    """

    logger = log.create_logger(name="Minimizer")

    def __init__(self, space, problem, options=None, variant=Variant.J):
        self.space = space
        self.problem = problem
        self.options = options or SolverOptions()
        self.variant = variant

        self.energy = Energy(space, problem, variant)
        self.closure = space.closure
        self.mu_in = space.mu * space.interior
        self.scale = data_range(space, problem)
        self.eps0 = self.options.eps0 or constants.EPS_RANGE_FACTOR * self.scale

    def project(self, x):
        """Shift to domain mean zero, zero off the closure."""

        x = np.where(self.closure, x, 0.0)
        shift = float(self.mu_in @ x) / float(self.mu_in.sum())
        return np.where(self.closure, x - shift, 0.0)

    def tangent(self, d):
        """Euclidean projection onto the mean-zero hyperplane."""

        d = d * self.closure
        return d - (self.mu_in @ d) / (self.mu_in @ self.mu_in) * self.mu_in

    def start_values(self, index):
        if index == 0:
            return np.zeros(self.space.n)

        rng = np.random.default_rng(self.options.seed + index)
        return self.scale * rng.standard_normal(self.space.n)

    def run(self, index=0):
        opts = self.options
        x = self.project(self.start_values(index))

        eps = self.eps0
        history, iterates = [], []
        best_value, best_x = self.energy.value(x), x.copy()

        x_prev = d_prev = None
        step = None
        since = 0
        converged = False
        iterations = 0

        value, grad = self.energy.smoothed(x, eps)
        history.append(value)

        while iterations < opts.max_iters:
            iterations += 1
            d = -self.tangent(grad)
            norm = float(np.linalg.norm(d))

            stalled = norm == 0
            if not stalled:
                if x_prev is not None:
                    s, y = x - x_prev, d_prev - d
                    sy = float(s @ y)
                    if sy > 0 and math.isfinite(sy):
                        step = float(s @ s) / sy
                if step is None or not math.isfinite(step) or step <= 0:
                    step = self.scale / norm

                trial = step
                accepted = False
                for _ in range(constants.MAX_BACKTRACKS):
                    candidate = self.project(x + trial * d)
                    new_value, new_grad = self.energy.smoothed(candidate, eps)
                    if new_value <= value - constants.ARMIJO * trial * norm ** 2:
                        accepted = True
                        break
                    trial *= constants.BACKTRACK

                if accepted:
                    x_prev, d_prev = x, d
                    x, value, grad = candidate, new_value, new_grad
                    step = trial
                    history.append(value)
                    since += 1

                    exact = self.energy.value(x)
                    if exact < best_value:
                        best_value, best_x = exact, x.copy()
                    if opts.record_iterates:
                        iterates.append(x.copy())
                else:
                    stalled = True

            if not stalled and since >= opts.stall_window:
                old = history[-opts.stall_window - 1]
                stalled = old - value <= opts.tol * max(1.0, abs(value))

            if stalled or since >= opts.eps_every:
                if eps <= opts.eps_floor:
                    if stalled:
                        converged = True
                        break
                else:
                    eps = max(opts.eps_floor, eps * opts.eps_decay)
                    self.logger.debug(f"start {index}: eps -> {eps:.3g} after {iterations} iterations")
                    # The smoothed energy only decreases with eps
                    value, grad = self.energy.smoothed(x, eps)
                    history[-1] = min(history[-1], value)
                    x_prev = d_prev = None
                    since = 0

        best_value, best_x = self.polish(x, best_value, best_x, history)

        if opts.refine:
            refined_x, refined_value = self.refine(best_x)
            if refined_value < best_value:
                best_value, best_x = refined_value, refined_x
                history.append(min(history[-1], best_value))
                if opts.record_iterates:
                    iterates.append(best_x.copy())

        if not converged:
            self.logger.warning(f"start {index} stopped after {iterations} iterations without a stall")

        u = ScalarField(self.project(best_x), Support.CLOSURE)
        g = ScalarField(self.energy.op.exact(u.values), Support.INTERIOR)

        return MinimizerResult(u=u, g=g, value=self.energy.value(u.values), iterations=iterations,
                               converged=converged, history=history, start=index, iterates=iterates)

    def polish(self, x, best_value, best_x, history):
        """Diminishing-step subgradient steps on the exact energy, keeping the best iterate."""

        eps = max(self.options.eps_floor * 1e-3, 1e-12)
        length = 10 * max(self.options.eps_floor, 1e-9) * self.scale

        for k in range(self.options.polish_iters):
            _, grad = self.energy.smoothed(x, eps)
            d = -self.tangent(grad)
            norm = float(np.linalg.norm(d))
            if norm == 0:
                break

            x = self.project(x + length / (k + 1) * d / norm)
            value = self.energy.value(x)
            if value < best_value:
                best_value, best_x = value, x.copy()
            history.append(min(history[-1], best_value))

        return best_value, best_x

    def refine(self, x):
        """Minimize the exact energy as a smooth program, started from x.

        The unknowns are the values on the closure and one slope bound s(z)
        per domain vertex, with s(z) >= +-(u(y) - u(z)) / l on every arc, so
        that sum mu s^p replaces sum mu g^p. Spaces with more than
        REFINE_MAX_VARS unknowns are left to the descent. Returns the best
        field found and its energy; x itself when nothing improved.
        """

        op = self.energy.op
        nodes = np.flatnonzero(self.closure)
        sources = op.sources
        nu, ns = len(nodes), len(sources)

        best_x, best_value = x, self.energy.value(x)
        if nu + ns > constants.REFINE_MAX_VARS or not len(op.src2):
            return best_x, best_value

        column = np.full(self.space.n, -1)
        column[nodes] = np.arange(nu)
        bound = np.full(self.space.n, -1)
        bound[sources] = nu + np.arange(ns)

        rows = np.arange(len(op.src2))
        slope = op.sign2 * op.inv2
        A = np.zeros((len(rows), nu + ns))
        A[rows, bound[op.src2]] = 1.0
        np.add.at(A, (rows, column[op.dst2]), -slope)
        np.add.at(A, (rows, column[op.src2]), slope)

        mean_row = np.concatenate([self.mu_in[nodes], np.zeros(ns)])
        mu_s = self.space.mu[sources]
        mu_u = self.mu_in[nodes]
        coupling = self.energy.coupling[nodes]
        p, gamma = self.energy.p, self.energy.gamma

        def objective(z):
            u, s = z[:nu], np.maximum(z[nu:], 0)
            return float(mu_s @ s ** p + mu_u @ np.abs(u) ** gamma + coupling @ u)

        def gradient(z):
            u, s = z[:nu], np.maximum(z[nu:], 0)
            return np.concatenate([gamma * mu_u * np.abs(u) ** (gamma - 1) * np.sign(u) + coupling,
                                   p * mu_s * s ** (p - 1)])

        constraints = [{"type": "ineq", "fun": lambda z: A @ z, "jac": lambda z: A},
                       {"type": "eq", "fun": lambda z: np.array([mean_row @ z]),
                        "jac": lambda z: mean_row[None, :]}]

        for _ in range(constants.REFINE_ROUNDS):
            start = np.concatenate([best_x[nodes], op.exact(best_x)[sources]])
            with _SLSQP_LOCK:
                res = optimize.minimize(objective, start, jac=gradient, method="SLSQP",
                                        constraints=constraints,
                                        options={"ftol": constants.REFINE_FTOL,
                                                 "maxiter": constants.REFINE_ITERS})

            values = np.zeros(self.space.n)
            values[nodes] = res.x[:nu]
            candidate = self.project(values)
            value = self.energy.value(candidate)
            self.logger.debug(f"refine: '{res.message}' after {res.nit} iterations, "
                              f"energy {best_value:.15g} -> {value:.15g}")

            if not value < best_value:
                break
            best_x, best_value = candidate, value

        return best_x, best_value


def solve_starts(space, problem, options=None, variant=Variant.J):
    """Run every start, returning the results in start order."""

    minimizer = Minimizer(space, problem, options, variant)

    with ThreadPoolExecutor(max_workers=max(1, minimizer.options.threads)) as pool:
        return list(pool.map(minimizer.run, range(minimizer.options.starts)))


def select(results):
    """Smallest value, then smallest norm, then earliest start."""

    return min(results, key=lambda r: (r.value, r.norm, r.start))


def minimize(space, problem, options=None, variant=Variant.J):
    results = solve_starts(space, problem, options, variant)
    best = select(results)

    logger.info(f"Minimum {best.value:.10g} from start {best.start} "
                f"({best.iterations} iterations, converged={best.converged})")

    return best


def require_converged(result):
    if not result.converged:
        raise NotConverged(f"start {result.start} stopped after {result.iterations} iterations "
                           f"at value {result.value:.10g} without a stall")
    return result


@dataclass
class OracleResult:
    value: float
    argmin: ScalarField
    resolution: float
    points: int
    dof: int


def brute_force_oracle(space, problem, lo, hi, step, variant=Variant.J):
    """Exhaustive grid minimum of the energy.

    The unknowns are the domain values (the first is eliminated by the mean-
    zero constraint) and the boundary values. `resolution` is the largest
    change of the energy between the grid argmin and its grid neighbours.
    """

    interior = np.flatnonzero(space.interior)
    free = np.concatenate([interior[1:], np.flatnonzero(space.boundary)])
    dof = len(free)

    if dof > constants.ORACLE_MAX_DOF:
        raise TooManyVertices(f"{dof} degrees of freedom, the oracle handles {constants.ORACLE_MAX_DOF}")
    if not (step > 0 and hi >= lo):
        raise BadParams(f"Bad oracle grid lo={lo}, hi={hi}, step={step}")

    axis = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    energy = Energy(space, problem, variant)
    first = interior[0]
    weights = space.mu[interior[1:]] / space.mu[first]

    def batch(coords):
        rows = np.zeros((len(coords), space.n))
        rows[:, free] = coords
        if len(interior) > 1:
            rows[:, first] = -coords[:, :len(interior) - 1] @ weights
        return rows

    shape = (len(axis),) * dof
    total = int(np.prod(shape)) if dof else 1
    best_value, best_index = math.inf, 0

    for begin in range(0, total, ORACLE_CHUNK):
        flat = np.arange(begin, min(total, begin + ORACLE_CHUNK))
        coords = axis[np.stack(np.unravel_index(flat, shape), axis=1)] if dof else np.zeros((1, 0))
        values = energy.value_batch(batch(coords))
        k = int(np.argmin(values))
        if values[k] < best_value:
            best_value, best_index = float(values[k]), int(flat[k])

    digits = np.array(np.unravel_index(best_index, shape)) if dof else np.zeros(0, dtype=int)
    argmin = batch(axis[digits][None, :])[0]

    resolution = 0.0
    for j, shift in itertools.product(range(dof), (-1, 1)):
        neighbour = digits.copy()
        neighbour[j] += shift
        if 0 <= neighbour[j] < len(axis):
            value = float(energy.value_batch(batch(axis[neighbour][None, :]))[0])
            resolution = max(resolution, abs(value - best_value))

    return OracleResult(value=best_value, argmin=ScalarField(argmin, Support.CLOSURE),
                        resolution=resolution, points=total, dof=dof)


@dataclass
class UniquenessReport:
    starts: int
    best_value: float
    best_start: int
    value_spread: float
    gradient_spread: float
    data_spread: float
    field_spread: float
    midpoint_excess: float
    midpoint_tolerance: float
    midpoints_ok: bool
    converged: int

    def to_dict(self):
        return dict(self.__dict__)


def multi_start_analysis(space, problem, options, variant=Variant.J):
    """Solve from independent starts and compare the minimizers: values,
    gradients, the non-gradient part of the energy, and the energy at
    re-projected midpoints of pairs."""

    if options.starts < 2:
        raise BadParams("The uniqueness analysis needs at least two starts")

    results = solve_starts(space, problem, options, variant)
    best = select(results)
    energy = Energy(space, problem, variant)
    project = Minimizer(space, problem, options, variant).project

    rest = []
    for r in results:
        parts = energy.parts(r.u.values)
        rest.append(parts["boundary"] - parts["reaction"])

    value_spread = gradient_spread = data_spread = field_spread = 0.0
    midpoints = []
    for i, j in itertools.combinations(range(len(results)), 2):
        a, b = results[i], results[j]
        value_spread = max(value_spread, abs(a.value - b.value))
        gradient_spread = max(gradient_spread, float(np.abs(a.g.values - b.g.values).max()))
        data_spread = max(data_spread, abs(rest[i] - rest[j]))
        field_spread = max(field_spread, float(np.abs(a.u.values - b.u.values).max()))

        mid = project((a.u.values + b.u.values) / 2)
        midpoints.append(energy.value(mid) - best.value)

    excess = max(midpoints)
    tolerance = 2 * options.tol * max(1.0, abs(best.value))

    report = UniquenessReport(starts=len(results), best_value=best.value, best_start=best.start,
                              value_spread=value_spread, gradient_spread=gradient_spread,
                              data_spread=data_spread, field_spread=field_spread,
                              midpoint_excess=excess, midpoint_tolerance=tolerance,
                              midpoints_ok=excess <= tolerance,
                              converged=sum(r.converged for r in results))
    logger.info(f"Uniqueness over {report.starts} starts: value spread {value_spread:.3g}, "
                f"gradient spread {gradient_spread:.3g}, data spread {data_spread:.3g}")

    return report


def clarkson_margin(a, b, p):
    """(a^p + b^p)/2 - (|a - b|/2)^p - ((a + b)/2)^p, nonnegative for p >= 2."""

    return (a ** p + b ** p) / 2 - (abs(a - b) / 2) ** p - ((a + b) / 2) ** p


@dataclass
class ProbeReport:
    jensen_probes: int
    jensen_violations: int
    jensen_worst_margin: float
    clarkson_probes: int
    clarkson_violations: int
    clarkson_worst_margin: float

    def to_dict(self):
        return dict(self.__dict__)


def convexity_suite(space, problem, n=1000, seed=0, variant=Variant.J):
    """Jensen probes on the energy and, for p >= 2, Clarkson probes on t^p.

    Margins are right side minus left side; a violation is a margin below
    -JENSEN_TOL (relative to the size of the values compared).
    """

    if n < 1:
        raise BadParams("The convexity suite needs at least one probe")

    rng = np.random.default_rng(seed)
    energy = Energy(space, problem, variant)
    minimizer = Minimizer(space, problem, variant=variant)
    scale = minimizer.scale

    margins = []
    for k in range(n):
        u = minimizer.project(scale * rng.standard_normal(space.n))
        v = minimizer.project(scale * rng.standard_normal(space.n))
        t = float(k) if k < 2 else float(rng.uniform())

        rhs = t * energy.value(u) + (1 - t) * energy.value(v)
        lhs = energy.value(minimizer.project(t * u + (1 - t) * v))
        margins.append((rhs - lhs) / max(1.0, abs(rhs)))

    margins = np.array(margins)
    clarkson = np.zeros(0)
    p = problem.p
    if p >= 2:
        a = rng.uniform(0, 2, n)
        b = np.where(np.arange(n) == 0, a, rng.uniform(0, 2, n))
        clarkson = clarkson_margin(a, b, p) / np.maximum(1.0, (a ** p + b ** p) / 2)
    else:
        logger.info(f"p = {p} < 2: uniform convexity probes skipped")

    return ProbeReport(jensen_probes=n,
                       jensen_violations=int((margins < -constants.JENSEN_TOL).sum()),
                       jensen_worst_margin=float(margins.min()),
                       clarkson_probes=len(clarkson),
                       clarkson_violations=int((clarkson < -constants.JENSEN_TOL).sum()),
                       clarkson_worst_margin=float(clarkson.min()) if len(clarkson) else 0.0)


@dataclass
class ScalingReport:
    expected_shift: float
    shift: float
    argmin_gap: float

    def to_dict(self):
        return dict(self.__dict__)


def scaling_check(space, problem, options=None, variant=Variant.J):
    """Doubling c shifts the minimum by -c mu(domain) and keeps the argmin."""

    base = minimize(space, problem, options, variant)
    doubled = minimize(space, problem.with_c(2 * problem.reaction.c), options, variant)

    return ScalingReport(expected_shift=-problem.reaction.c * space.domain_measure,
                         shift=doubled.value - base.value,
                         argmin_gap=float(np.abs(doubled.u.values - base.u.values).max()))
