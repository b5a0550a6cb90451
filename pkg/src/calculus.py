"""Discrete upper-gradient calculus on a MetricMeasureSpace.

Line integrals use the trapezoid rule, so the max-slope field of u is an
upper gradient of u along every edge path (telescoping over edges). The
same max-slope field, in its epsilon-softmax smoothing, drives the
solver and the ratio searches behind the Poincare, Sobolev and trace
constants.
"""

import math

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from scipy import optimize

# Local imports
import constants
import log

from errors import (InvalidPath, IsolatedVertex, EmptyFamily, SolverFailure,
                    DegenerateExponent)
from space import Support, as_mask, ball, mean

logger = log.create_logger(name="Calculus")


@dataclass(frozen=True)
class ScalarField:
    """Real values on the vertices of a space. Entries outside `support` are
    kept at zero and ignored."""

    values: np.ndarray
    support: Support = Support.ALL

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("A field needs a finite value per vertex")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __combine(self, other, values):
        support = self.support if other.support is self.support else Support.ALL
        return ScalarField(values, support)

    def __add__(self, other):
        return self.__combine(other, self.values + other.values)

    def __sub__(self, other):
        return self.__combine(other, self.values - other.values)

    def __neg__(self):
        return ScalarField(-self.values, self.support)

    def __mul__(self, scalar):
        return ScalarField(float(scalar) * self.values, self.support)

    __rmul__ = __mul__

    def __len__(self):
        return len(self.values)

    def on(self, space, support):
        """Restrict to a support, zeroing the other entries."""

        return ScalarField(np.where(space.mask(support), self.values, 0.0), support)

    def to_dict(self, space):
        mask = space.mask(self.support)
        return {space.ids[i]: float(self.values[i]) for i in np.flatnonzero(mask)}


@dataclass(frozen=True)
class PathFamily:
    paths: tuple

    @classmethod
    def from_ids(cls, space, lists):
        paths = tuple(tuple(space.vertex(v) for v in path) for path in lists)
        for path in paths:
            _validate_path(space, path)
        return cls(paths)

    def __len__(self):
        return len(self.paths)


def _validate_path(space, path):
    if len(path) < 2:
        raise InvalidPath(f"A path needs at least one edge: {path}")

    for x, y in zip(path[:-1], path[1:]):
        if space.edge_length(x, y) is None:
            raise InvalidPath(f"{space.ids[x]!r} and {space.ids[y]!r} are not adjacent")


class SlopeOperator:
    """Max-slope gradient g(x) = max |u(y) - u(x)| / l(x, y) over the arcs
    from `support` vertices x to adjacent `reach` vertices y.

    Besides the exact evaluation it provides the epsilon-softmax smoothing
    g_eps(x) = eps * log sum exp(+-(u(y) - u(x)) / (l eps)), which is convex,
    never below g and at most g + eps * log(2 * degree), together with its
    adjoint for gradient computations.
    """

    def __init__(self, space, support, reach, allow_isolated=False):
        self.n = space.n
        support = as_mask(space, support)
        reach = as_mask(space, reach)

        a, b = space.edges[:, 0], space.edges[:, 1]
        forward = support[a] & reach[b]
        backward = support[b] & reach[a]

        src = np.concatenate([a[forward], b[backward]])
        dst = np.concatenate([b[forward], a[backward]])
        inv = 1.0 / np.concatenate([space.lengths[forward], space.lengths[backward]])

        counts = np.bincount(src, minlength=self.n)
        isolated = support & (counts == 0)
        if isolated.any() and not allow_isolated:
            names = [space.ids[i] for i in np.flatnonzero(isolated)]
            raise IsolatedVertex(f"Vertices without neighbours in reach: {names}")

        order = np.argsort(src, kind="stable")
        self.src, self.dst, self.inv = src[order], dst[order], inv[order]
        self.support = support

        # Signed copies for the smoothed max of |slope|
        order2 = np.argsort(np.concatenate([self.src, self.src]), kind="stable")
        self.src2 = np.concatenate([self.src, self.src])[order2]
        self.dst2 = np.concatenate([self.dst, self.dst])[order2]
        self.inv2 = np.concatenate([self.inv, self.inv])[order2]
        self.sign2 = np.concatenate([np.ones(len(self.src)), -np.ones(len(self.src))])[order2]

        self.starts = np.flatnonzero(np.r_[True, self.src[1:] != self.src[:-1]]) if len(self.src) else np.array([], dtype=int)
        self.starts2 = np.flatnonzero(np.r_[True, self.src2[1:] != self.src2[:-1]]) if len(self.src2) else np.array([], dtype=int)
        self.sources = self.src[self.starts] if len(self.src) else np.array([], dtype=int)
        self.group2 = np.repeat(np.arange(len(self.starts2)), np.diff(np.r_[self.starts2, len(self.src2)]))

    def exact(self, values):
        g = np.zeros(self.n)
        if len(self.src):
            slopes = np.abs(values[self.dst] - values[self.src]) * self.inv
            g[self.sources] = np.maximum.reduceat(slopes, self.starts)
        return g

    def exact_batch(self, batch):
        """Exact gradients for a (m, n) batch of value arrays."""

        g = np.zeros(batch.shape)
        if len(self.src):
            slopes = np.abs(batch[:, self.dst] - batch[:, self.src]) * self.inv
            g[:, self.sources] = np.maximum.reduceat(slopes, self.starts, axis=1)
        return g

    def smoothed(self, values, eps):
        """Returns the smoothed gradient and the cache needed by `adjoint`."""

        g = np.zeros(self.n)
        if not len(self.src2):
            return g, None

        s = self.sign2 * (values[self.dst2] - values[self.src2]) * self.inv2
        top = np.maximum.reduceat(s, self.starts2)
        z = np.exp((s - top[self.group2]) / eps)
        total = np.add.reduceat(z, self.starts2)

        g[self.sources] = top + eps * np.log(total)
        weights = z / total[self.group2]

        return g, weights

    def adjoint(self, weights, dg):
        """Gradient with respect to u of sum_x dg(x) * g_eps(x)."""

        if weights is None:
            return np.zeros(self.n)

        coef = dg[self.src2] * weights * self.sign2 * self.inv2
        return np.bincount(self.dst2, coef, self.n) - np.bincount(self.src2, coef, self.n)


def energy_operator(space):
    """Slopes of domain vertices towards the closure of the domain."""

    return SlopeOperator(space, space.interior, space.closure)


def lp_norm(values, weights, mask, p):
    """L^p norm of values over mask against the given measure; p may be inf."""

    if not mask.any():
        return 0.0
    if math.isinf(p):
        return float(np.abs(values[mask]).max())
    return float((np.abs(values[mask]) ** p @ weights[mask]) ** (1.0 / p))


def conjugate_exponent(q):
    if q == 1:
        return math.inf
    if math.isinf(q):
        return 1.0
    return q / (q - 1)


def line_integral(space, g, path):
    """Trapezoid-rule integral of g along an edge path."""

    path = [space.vertex(v) for v in path]
    _validate_path(space, path)

    values = getattr(g, "values", g)
    total = 0.0
    for x, y in zip(path[:-1], path[1:]):
        total += space.edge_length(x, y) * (values[x] + values[y]) / 2

    return float(total)


def simple_paths(space, source, target, cap=constants.PATH_CAP, vertices=None):
    """All simple edge paths from source to target with at most `cap` edges."""

    graph = _graph(space, vertices)
    return nx.all_simple_paths(graph, space.vertex(source), space.vertex(target), cutoff=cap)


def _graph(space, vertices=None):
    keep = np.ones(space.n, dtype=bool) if vertices is None else as_mask(space, vertices)

    graph = nx.Graph()
    graph.add_nodes_from(np.flatnonzero(keep).tolist())
    for (x, y), length in zip(space.edges.tolist(), space.lengths.tolist()):
        if keep[x] and keep[y]:
            graph.add_edge(x, y, length=length)

    return graph


def is_upper_gradient(space, u, g, path_cap=constants.PATH_CAP, *, exhaustive=False,
                      tol=constants.ADMISSIBILITY_TOL):
    """Check |u(x) - u(y)| <= integral of g along paths inside the support of u.

    The edge-level check is both necessary (single edges are paths) and
    sufficient (telescoping). With `exhaustive` every simple path of at most
    `path_cap` edges is checked as well.
    """

    values = np.asarray(getattr(u, "values", u), dtype=float)
    weights = np.asarray(getattr(g, "values", g), dtype=float)
    keep = space.mask(getattr(u, "support", Support.ALL))

    if np.any(weights[keep] < 0):
        return False

    a, b = space.edges[:, 0], space.edges[:, 1]
    inside = keep[a] & keep[b]
    jumps = np.abs(values[a] - values[b])[inside]
    integrals = (space.lengths * (weights[a] + weights[b]) / 2)[inside]
    edge_ok = bool(np.all(jumps <= integrals + tol * np.maximum(1.0, jumps)))

    if not exhaustive:
        return edge_ok

    graph = _graph(space, keep)
    nodes = sorted(graph.nodes)
    for i, x in enumerate(nodes):
        for y in nodes[i + 1:]:
            for path in nx.all_simple_paths(graph, x, y, cutoff=path_cap):
                jump = abs(values[x] - values[y])
                if jump > line_integral(space, weights, path) + tol * max(1.0, jump):
                    return False

    return True


def max_slope_gradient(space, u, support=None, reach=None):
    """The max-slope field g_u(x) = max over neighbours y of |u(y) - u(x)| / l(x, y).

    Args:
        support (Support, optional): Where g is evaluated. Defaults to the
        support of u.
        reach (Support, optional): Which neighbours count. Defaults to the
        support of u.
    """

    support = support or u.support
    reach = reach or u.support

    op = SlopeOperator(space, space.mask(support), space.mask(reach))
    return ScalarField(op.exact(u.values), support)


def minimal_weak_gradient(space, u, p):
    """Smallest field in L^p(mu) whose trapezoid integral dominates every
    edge jump of u (a strictly convex program with linear constraints)."""

    if p <= 1:
        raise DegenerateExponent(f"The minimal weak gradient needs p > 1, got {p}")

    keep = space.mask(u.support)
    idx = np.flatnonzero(keep)
    local = {v: k for k, v in enumerate(idx)}

    a, b = space.edges[:, 0], space.edges[:, 1]
    inside = keep[a] & keep[b]
    jumps = np.abs(u.values[a] - u.values[b])[inside]

    start = max_slope_gradient(space, u).values[idx]
    if not np.any(jumps > 0):
        return ScalarField(np.zeros(space.n), u.support)

    A = np.zeros((int(inside.sum()), len(idx)))
    for row, (x, y, length) in enumerate(zip(a[inside], b[inside], space.lengths[inside])):
        A[row, local[x]] += length / 2
        A[row, local[y]] += length / 2

    mu = space.mu[idx]
    g = _convex_program(mu, p, A, jumps, start)

    values = np.zeros(space.n)
    values[idx] = g
    return ScalarField(values, u.support)


def _convex_program(mu, p, A, rhs, start):
    """min sum mu * x^p subject to A x >= rhs, x >= 0."""

    def objective(x):
        return float(mu @ np.maximum(x, 0) ** p)

    def gradient(x):
        return p * mu * np.maximum(x, 0) ** (p - 1)

    res = optimize.minimize(objective, start, jac=gradient, method="SLSQP",
                            bounds=[(0, None)] * len(start),
                            constraints=[{"type": "ineq",
                                          "fun": lambda x: A @ x - rhs,
                                          "jac": lambda x: A}],
                            options={"ftol": constants.PROGRAM_TOL * 1e-6, "maxiter": 1000})

    x = np.maximum(res.x, 0)
    violation = float(np.max(rhs - A @ x, initial=0.0))
    if violation > constants.PROGRAM_TOL * max(1.0, float(np.max(rhs))):
        raise SolverFailure(f"Convex program ended infeasible ({res.message}, violation {violation:.3g})")

    if objective(x) > objective(start):
        x = start

    if not res.success:
        logger.debug(f"SLSQP stopped with '{res.message}', solution kept (feasible)")

    return x


def p_modulus(space, family, p, measure=None):
    """p-modulus of a finite path family: the least sum phi^p mu over
    densities phi >= 0 with trapezoid integral at least 1 on every path."""

    if not len(family):
        raise EmptyFamily("The path family is empty")
    if p < 1:
        raise DegenerateExponent(f"The p-modulus needs p >= 1, got {p}")

    mu = space.mu if measure is None else np.asarray(measure, dtype=float)

    idx = sorted({v for path in family.paths for v in path})
    local = {v: k for k, v in enumerate(idx)}

    A = np.zeros((len(family), len(idx)))
    lengths = np.zeros(len(family))
    for row, path in enumerate(family.paths):
        _validate_path(space, path)
        for x, y in zip(path[:-1], path[1:]):
            length = space.edge_length(x, y)
            A[row, local[x]] += length / 2
            A[row, local[y]] += length / 2
            lengths[row] += length

    # A constant density 1 / (shortest length) is admissible
    start = np.full(len(idx), 1.0 / lengths.min())
    phi = _convex_program(mu[idx], p, A, np.ones(len(family)), start)
    # Stretch onto the admissible set, the program stops within PROGRAM_TOL of it
    phi = phi * max(1.0, float(np.max(1.0 / (A @ phi))))

    return float(mu[idx] @ phi ** p)


def newtonian_norm(space, u, p):
    """||g_u||_{L^p} + ||u||_{L^p} over the support of u."""

    keep = space.mask(u.support)
    g = max_slope_gradient(space, u)

    return lp_norm(g.values, space.mu, keep, p) + lp_norm(u.values, space.mu, keep, p)


def mean_zero_project(space, u):
    """Shift u by its domain average, so that mean(u, domain) = 0."""

    keep = space.mask(u.support)
    shift = mean(space, u, space.interior)

    return ScalarField(np.where(keep, u.values - shift, 0.0), u.support)


def trace(space, u):
    """Boundary values of u. On a finite space the Lebesgue-point limit is the
    vertex value itself."""

    return ScalarField(np.where(space.boundary, u.values, 0.0), Support.BOUNDARY)


def trace_exponent_bound(p, s):
    """Continuum range limit p(s-1)/(s-p) of the trace exponent, reported for information."""

    return p * (s - 1) / (s - p) if p < s else math.inf


# Ratio searches ------------------------------------------------------------

@dataclass
class RatioSample:
    center: int
    radius: float
    values: np.ndarray = field(repr=False)
    ratio: float


class _Ratio:
    """N(u) / (scale * (sum_mask w g_u^p)^(1/p)) with a smoothed gradient."""

    def __init__(self, op, numerator, weights, mask, p, scale=1.0):
        self.op = op
        self.numerator = numerator
        self.weights = np.where(mask, weights, 0.0)
        self.p = p
        self.scale = scale

    def exact(self, x):
        top, _ = self.numerator(x)
        if top <= 1e-14 * max(1.0, float(np.abs(x).max())):
            return 0.0

        g = self.op.exact(x)
        bottom = self.scale * float(self.weights @ g ** self.p) ** (1.0 / self.p)
        return math.inf if bottom == 0 else top / bottom

    def ascent_direction(self, x, eps):
        top, dtop = self.numerator(x)
        g, cache = self.op.smoothed(x, eps)

        energy = float(self.weights @ g ** self.p)
        bottom = self.scale * energy ** (1.0 / self.p)
        dg = self.scale * energy ** (1.0 / self.p - 1) * self.weights * g ** (self.p - 1)
        dbottom = self.op.adjoint(cache, dg)

        return (dtop * bottom - top * dbottom) / bottom ** 2


def _power_norm(weights, mask, p):
    """Numerator ||x||_{L^p(weights)} on mask with a (sub)gradient."""

    w = np.where(mask, weights, 0.0)

    def numerator(x):
        if math.isinf(p):
            k = int(np.argmax(np.where(mask, np.abs(x), -1.0)))
            grad = np.zeros_like(x)
            grad[k] = np.sign(x[k])
            return float(abs(x[k])), grad

        total = float(w @ np.abs(x) ** p)
        if total == 0:
            return 0.0, np.zeros_like(x)
        value = total ** (1.0 / p)
        grad = value ** (1 - p) * w * np.abs(x) ** (p - 1) * np.sign(x)
        return value, grad

    return numerator


def _oscillation(weights, mask):
    """Numerator avg_B |x - x_B| with a subgradient."""

    w = np.where(mask, weights, 0.0)
    total = w.sum()

    def numerator(x):
        center = float(w @ x) / total
        s = np.sign(x - center) * mask
        grad = (w * s - w * float(w @ s) / total) / total
        return float(w @ np.abs(x - center)) / total, grad

    return numerator


def _ascend(ratio, variables, project, tangent, starts, seed, iters, threads):
    """Multi-start projected gradient ascent. Returns (best ratio, best field)
    per start, in start order."""

    def one(start):
        rng = np.random.default_rng([seed, start])
        x = project(np.where(variables, rng.standard_normal(len(variables)), 0.0))
        best, best_x = ratio.exact(x), x.copy()

        for k in range(iters):
            scale = float(np.abs(x).max())
            if scale == 0:
                break
            x = x / scale

            d = tangent(ratio.ascent_direction(x, constants.RATIO_EPS)) * variables
            norm = float(np.linalg.norm(d))
            if norm == 0:
                break

            x = project(x + 0.5 / math.sqrt(k + 1) * d / norm)
            value = ratio.exact(x)
            if value > best:
                best, best_x = value, x.copy()

        return best, best_x

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(one, range(starts)))


def poincare_ratio(space, values, center, radius, p):
    """avg_B |u - u_B| / (r (avg_B g_u^p)^(1/p)) on the subspace of the domain,
    with B = B(center, radius) intersected with the domain."""

    b = ball(space, center, radius).mask & space.interior
    op = SlopeOperator(space, space.interior, space.interior, allow_isolated=True)

    ratio = _Ratio(op, _oscillation(space.mu, b), space.mu / space.mu[b].sum(), b, p, scale=radius)
    return ratio.exact(np.asarray(values, dtype=float))


def poincare_constant(space, radius_grid, p, *, starts=constants.POINCARE_STARTS, seed=0,
                      iters=constants.RATIO_ITERS, threads=constants.THREADS):
    """Largest sampled Poincare ratio over domain balls (lambda = 1).

    Returns:
        (float, list of RatioSample): The sample maximum and the best field of
        every scanned ball.
    """

    op = SlopeOperator(space, space.interior, space.interior, allow_isolated=True)
    variables = space.interior.copy()

    def project(x):
        return np.where(variables, x - mean(space, x, space.interior), 0.0)

    def tangent(d):
        return d

    samples, best = [], 0.0
    for center in np.flatnonzero(space.interior):
        for radius in radius_grid:
            b = ball(space, center, radius).mask & space.interior
            if b.sum() < 2:
                continue

            ratio = _Ratio(op, _oscillation(space.mu, b), space.mu / space.mu[b].sum(), b, p,
                           scale=radius)
            runs = _ascend(ratio, variables, project, tangent, starts,
                           seed + int(center) * 7919, iters, threads)
            value, values = max(runs, key=lambda run: run[0])

            samples.append(RatioSample(int(center), float(radius), values, float(value)))
            best = max(best, value)

    return float(best), samples


@dataclass
class EmbeddingConstants:
    p_star: float
    K_S: float
    K_T: float
    q: float
    q_conjugate: float
    trace_exponent_bound: float
    samples: int


def embedding_constants(space, p, s, q=math.inf, *, starts=constants.RATIO_STARTS, seed=0,
                        samples=(), iters=constants.RATIO_ITERS, threads=constants.THREADS):
    """Sobolev exponent p* and empirical Sobolev (K_S) and trace (K_T) constants.

    K_S and K_T are maxima of ||u||_{L^p(domain)} / ||g_u||_{L^p(domain)} and
    ||Tu||_{L^q'(boundary, P)} / ||g_u||_{L^p(domain)} over mean-zero fields,
    taken over ratio-ascent results and any extra `samples` (value arrays or
    fields), so they cover every field a bound is later checked on.
    """

    if s <= 0:
        raise DegenerateExponent(f"The lower-mass exponent must be positive, got {s}")
    if p <= 1:
        raise DegenerateExponent(f"The embedding needs p > 1, got {p}")

    p_star = p * s / (s - p) if p < s else math.inf
    q_conj = conjugate_exponent(q)

    op = energy_operator(space)
    variables = space.closure.copy()
    mu_in = space.mu * space.interior

    def project(x):
        return np.where(variables, x - mean(space, x, space.interior), 0.0)

    def tangent(d):
        return d - (mu_in @ d) / (mu_in @ mu_in) * mu_in

    sobolev = _Ratio(op, _power_norm(space.mu, space.interior, p), space.mu, space.interior, p)
    trace_ratio = _Ratio(op, _power_norm(space.perimeter, space.boundary, q_conj), space.mu,
                         space.interior, p)

    K_S = max(r for r, _ in _ascend(sobolev, variables, project, tangent, starts, seed, iters, threads))
    K_T = max(r for r, _ in _ascend(trace_ratio, variables, project, tangent, starts, seed + 1,
                                    iters, threads))

    for extra in samples:
        x = np.asarray(getattr(extra, "values", extra), dtype=float)
        K_S = max(K_S, sobolev.exact(x))
        K_T = max(K_T, trace_ratio.exact(x))

    logger.info(f"Embedding constants: p*={p_star:.4g} K_S={K_S:.4g} K_T={K_T:.4g} (q'={q_conj:.4g})")

    return EmbeddingConstants(p_star=float(p_star), K_S=float(K_S), K_T=float(K_T), q=float(q),
                              q_conjugate=float(q_conj),
                              trace_exponent_bound=float(trace_exponent_bound(p, s)),
                              samples=2 * starts + len(samples))
