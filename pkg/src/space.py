import json
import math

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from scipy import sparse
from scipy.sparse import csgraph

# Local imports
import constants
import log

from errors import (DisconnectedGraph, NonpositiveWeight, EmptyDomain,
                    EmptyBoundary, MalformedSpace, EmptySet, DegenerateGrid,
                    SpaceError)

logger = log.create_logger(name="Space")

VERTEX_FIELDS = {"id", "mu", "role", "perimeter", "f"}
EDGE_FIELDS = {"a", "b", "length"}
SPACE_FIELDS = {"vertices", "edges"}


class Role(Enum):
    INTERIOR = constants.ROLE_INTERIOR
    BOUNDARY = constants.ROLE_BOUNDARY
    EXTERIOR = constants.ROLE_EXTERIOR


class Support(Enum):
    """Where a field is defined."""

    ALL = "all"
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    CLOSURE = "closure"


class MetricMeasureSpace:
    """A finite metric measure space with a domain, its boundary and the
    perimeter measure of the domain. Built by `build_space`, never mutated
    afterwards."""

    def __init__(self, ids, mu, roles, edges, lengths, perimeter, boundary_data):
        self.ids = tuple(ids)
        self.index = {vid: i for i, vid in enumerate(self.ids)}
        self.n = len(self.ids)

        self.mu = self.__frozen(mu)
        self.roles = tuple(roles)
        self.edges = self.__frozen(edges, dtype=int)
        self.lengths = self.__frozen(lengths)
        self.perimeter = self.__frozen(perimeter)
        self.boundary_data = self.__frozen(boundary_data)

        self.interior = self.__frozen([r is Role.INTERIOR for r in self.roles], dtype=bool)
        self.boundary = self.__frozen([r is Role.BOUNDARY for r in self.roles], dtype=bool)
        self.exterior = self.__frozen([r is Role.EXTERIOR for r in self.roles], dtype=bool)
        self.closure = self.__frozen(self.interior | self.boundary, dtype=bool)

        a, b = self.edges[:, 0], self.edges[:, 1]
        self.adjacency = sparse.csr_matrix(
            (np.concatenate([self.lengths, self.lengths]),
             (np.concatenate([a, b]), np.concatenate([b, a]))),
            shape=(self.n, self.n))

        self.__edge_length = {}
        for (x, y), length in zip(self.edges.tolist(), self.lengths.tolist()):
            self.__edge_length[(x, y)] = length
            self.__edge_length[(y, x)] = length

        self.dist = self.__frozen(csgraph.shortest_path(self.adjacency, method="D", directed=False))

    @staticmethod
    def __frozen(values, dtype=float):
        arr = np.array(values, dtype=dtype)
        arr.setflags(write=False)
        return arr

    def vertex(self, y):
        """Resolve a vertex id or index to an index."""

        if isinstance(y, (int, np.integer)) and 0 <= y < self.n:
            return int(y)
        if y in self.index:
            return self.index[y]
        if str(y) in self.index:
            return self.index[str(y)]
        raise MalformedSpace(f"Unknown vertex {y!r}")

    def edge_length(self, x, y):
        """Length of the edge between x and y, or None when they are not adjacent."""

        return self.__edge_length.get((x, y))

    def neighbours(self, x):
        row = self.adjacency.getrow(x)
        return row.indices

    def mask(self, support):
        if support is Support.ALL:
            return np.ones(self.n, dtype=bool)
        if support is Support.INTERIOR:
            return self.interior
        if support is Support.BOUNDARY:
            return self.boundary
        return self.closure

    def measure(self, vertices):
        return float(self.mu[as_mask(self, vertices)].sum())

    @property
    def diam(self):
        return float(self.dist.max())

    @property
    def diam_domain(self):
        idx = np.flatnonzero(self.interior)
        return float(self.dist[np.ix_(idx, idx)].max())

    @property
    def domain_measure(self):
        return float(self.mu[self.interior].sum())

    def __repr__(self):
        return (f"MetricMeasureSpace(n={self.n}, interior={int(self.interior.sum())}, "
                f"boundary={int(self.boundary.sum())}, edges={len(self.lengths)})")


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float
    mask: np.ndarray = field(repr=False)

    @property
    def members(self):
        return np.flatnonzero(self.mask)

    def __contains__(self, x):
        return bool(self.mask[x])


def as_mask(space, vertices):
    """Turn a mask, a Ball or an iterable of vertex ids/indices into a boolean mask."""

    if isinstance(vertices, Ball):
        return vertices.mask
    if isinstance(vertices, np.ndarray) and vertices.dtype == bool:
        if vertices.shape != (space.n,):
            raise MalformedSpace("Vertex mask has the wrong length")
        return vertices

    mask = np.zeros(space.n, dtype=bool)
    for y in vertices:
        mask[space.vertex(y)] = True
    return mask


def _values(u):
    return np.asarray(getattr(u, "values", u), dtype=float)


def _positive(value, what):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise MalformedSpace(f"{what} is not a number: {value!r}")

    if not math.isfinite(value) or value <= 0:
        raise NonpositiveWeight(f"{what} must be positive and finite, got {value}")

    return value


def build_space(description):
    """Validate a space description and compute its metric.

    Args:
        description (dict): `{"vertices": [{id, mu, role, perimeter?, f?}],
        "edges": [{a, b, length}]}`.

    Returns:
        MetricMeasureSpace
    """

    if not isinstance(description, dict):
        raise MalformedSpace("Space description must be a JSON object")

    unknown = set(description) - SPACE_FIELDS
    if unknown:
        raise MalformedSpace(f"Unknown space fields: {sorted(unknown)}")

    vertices = description.get("vertices") or []
    edges = description.get("edges") or []

    ids, mu, roles, given_perimeter, f = [], [], [], {}, {}
    for entry in vertices:
        unknown = set(entry) - VERTEX_FIELDS
        if unknown:
            raise MalformedSpace(f"Unknown vertex fields: {sorted(unknown)}")
        if "id" not in entry or "mu" not in entry or "role" not in entry:
            raise MalformedSpace(f"Vertex entry {entry!r} needs id, mu and role")

        vid = str(entry["id"])
        if vid in ids:
            raise MalformedSpace(f"Duplicate vertex id {vid!r}")

        try:
            role = Role(entry["role"])
        except ValueError:
            raise MalformedSpace(f"Vertex {vid!r} has unknown role {entry['role']!r}")

        if role is not Role.BOUNDARY and ("perimeter" in entry or "f" in entry):
            raise MalformedSpace(f"Only boundary vertices carry perimeter or f ({vid!r})")

        ids.append(vid)
        mu.append(_positive(entry["mu"], f"mu of {vid!r}"))
        roles.append(role)

        if "perimeter" in entry:
            given_perimeter[vid] = _positive(entry["perimeter"], f"perimeter of {vid!r}")
        if "f" in entry:
            f[vid] = float(entry["f"])

    if not any(r is Role.INTERIOR for r in roles):
        raise EmptyDomain("The space has no interior vertex")
    if not any(r is Role.BOUNDARY for r in roles):
        raise EmptyBoundary("The space has no boundary vertex")

    index = {vid: i for i, vid in enumerate(ids)}
    pairs, lengths, seen = [], [], set()
    for entry in edges:
        if set(entry) != EDGE_FIELDS:
            raise MalformedSpace(f"Edge entry {entry!r} must have exactly a, b and length")

        a, b = str(entry["a"]), str(entry["b"])
        if a not in index or b not in index:
            raise MalformedSpace(f"Edge {a!r}-{b!r} references an unknown vertex")
        if a == b:
            raise MalformedSpace(f"Self loop at {a!r}")

        key = frozenset((a, b))
        if key in seen:
            raise MalformedSpace(f"Duplicate edge {a!r}-{b!r}")
        seen.add(key)

        pairs.append((index[a], index[b]))
        lengths.append(_positive(entry["length"], f"length of edge {a!r}-{b!r}"))

    n = len(ids)
    pairs = np.array(pairs, dtype=int).reshape(-1, 2)
    lengths = np.array(lengths, dtype=float)
    mu = np.array(mu, dtype=float)

    graph = sparse.csr_matrix((np.ones(len(lengths)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_components, _ = csgraph.connected_components(graph, directed=False)
    if n_components != 1:
        raise DisconnectedGraph(f"The graph has {n_components} connected components")

    interior = np.array([r is Role.INTERIOR for r in roles])
    boundary = np.array([r is Role.BOUNDARY for r in roles])

    # Edge-rule perimeter: P(y) = sum over edges (y, x), x in the domain, of min(mu)/length
    derived = np.zeros(n)
    for (x, y), length in zip(pairs.tolist(), lengths.tolist()):
        w = min(mu[x], mu[y]) / length
        if boundary[x] and interior[y]:
            derived[x] += w
        if boundary[y] and interior[x]:
            derived[y] += w

    perimeter = np.zeros(n)
    for i in np.flatnonzero(boundary):
        if derived[i] == 0:
            raise MalformedSpace(f"Boundary vertex {ids[i]!r} is not adjacent to the domain")
        perimeter[i] = given_perimeter.get(ids[i], derived[i])

    boundary_data = np.zeros(n)
    for vid, value in f.items():
        boundary_data[index[vid]] = value

    space = MetricMeasureSpace(ids, mu, roles, pairs, lengths, perimeter, boundary_data)
    logger.debug(f"Built {space}")

    return space


def load_space(path):
    with open(path) as json_file:
        return build_space(json.load(json_file))


def dump_space(description, path):
    """Validate a space description and write it as JSON."""

    space = build_space(description)

    with open(path, "w") as json_file:
        json.dump(description, json_file, indent=2)
        json_file.write("\n")

    return space


def ball(space, y, rho):
    """Closed metric ball B(y, rho)."""

    if rho < 0:
        raise SpaceError(f"Ball radius must be nonnegative, got {rho}")

    y = space.vertex(y)
    mask = space.dist[y] <= rho + constants.METRIC_TOL * max(1.0, rho)

    return Ball(center=y, radius=float(rho), mask=mask)


def mean(space, u, vertices):
    """The average of u over a vertex set, weighted by mu."""

    mask = as_mask(space, vertices)
    total = space.mu[mask].sum()

    if total <= 0:
        raise EmptySet("Cannot average over a set of zero measure")

    return float(_values(u)[mask] @ space.mu[mask] / total)


def perimeter(space, E, U=None):
    """Discrete perimeter of E in U: edges leaving E inside U weighted by
    min(mu(x), mu(y)) / length."""

    in_e = as_mask(space, E)
    in_u = np.ones(space.n, dtype=bool) if U is None else as_mask(space, U)

    a, b = space.edges[:, 0], space.edges[:, 1]
    crossing = (in_e[a] != in_e[b]) & in_u[a] & in_u[b]
    weights = np.minimum(space.mu[a], space.mu[b]) / space.lengths

    return float(weights[crossing].sum())


@dataclass
class HypothesisReport:
    K_D: float
    s: float
    K_H1: float
    K_H1_closure: float
    K_H2: float
    K_P: float
    poincare_raw: float
    diam: float
    p: float
    radius_grid: list
    sample_grid: list = field(repr=False)
    poincare_samples: list = field(default_factory=list, repr=False)
    flags: dict = field(default_factory=dict)

    def to_dict(self, space):
        return {
            "K_D": self.K_D,
            "s": self.s,
            "K_H1": self.K_H1,
            "K_H1_closure": self.K_H1_closure,
            "K_H2": self.K_H2,
            "K_P": self.K_P,
            "poincare_raw": self.poincare_raw,
            "diam": self.diam,
            "p": self.p,
            "radius_grid": list(self.radius_grid),
            "flags": dict(self.flags),
            "sample_grid": [[space.ids[c], r] for c, r in self.sample_grid],
        }


def _check_grid(space, radius_grid):
    grid = sorted({float(r) for r in radius_grid})

    if not grid:
        raise DegenerateGrid("The radius grid is empty")
    if any(not math.isfinite(r) or r <= 0 for r in grid):
        raise DegenerateGrid(f"Grid radii must be positive and finite: {grid}")
    if grid[-1] > space.diam * (1 + constants.METRIC_TOL):
        raise DegenerateGrid(f"Grid radius {grid[-1]} exceeds diam(X) = {space.diam}")

    return grid


def _ball_measures(space, radii):
    """mu(B(y, r)) for every vertex y (rows) and radius r (columns)."""

    out = np.empty((space.n, len(radii)))
    for k, r in enumerate(radii):
        inside = space.dist <= r + constants.METRIC_TOL * max(1.0, r)
        out[:, k] = inside @ space.mu
    return out


def structural_constants(space, radius_grid, p=2.0, *, starts=constants.POINCARE_STARTS,
                         seed=0, threads=constants.THREADS):
    """Empirical doubling, lower-mass, (H1), (H2) and Poincare constants on a
    radius grid. Every value is a grid-and-sample maximum, so a lower bound
    on the true constant.

    Args:
        space (MetricMeasureSpace): The space to scan.
        radius_grid (list of float): Positive radii no larger than diam(X).
        p (float): Exponent of the (1, p)-Poincare inequality.
        starts (int): Ratio-ascent starts per Poincare ball.
        seed (int): Seed of the Poincare search.

    Returns:
        HypothesisReport
    """

    # Imported here since calculus itself builds on this module
    from calculus import poincare_constant

    grid = _check_grid(space, radius_grid)
    radii = np.array(grid)

    m = _ball_measures(space, radii)
    m2 = _ball_measures(space, 2 * radii)
    K_D = float((m2 / m).max())

    # Lower-mass exponent: log(mu(B(x,R)) / mu(B(y,rho))) / log(R / rho), y in B(x,R)
    s = -math.inf
    for iR, R in enumerate(grid):
        near = space.dist <= R + constants.METRIC_TOL * max(1.0, R)
        for irho, rho in enumerate(grid[:iR]):
            logs = np.log(m[:, iR])[:, None] - np.log(m[:, irho])[None, :]
            s = max(s, float(logs[near].max()) / math.log(R / rho))

    flags = {"lower_mass_forced": s > 0}
    if s <= 0:
        logger.warning("No grid tuple forces a positive lower-mass exponent; using the floor")
        s = constants.S_FLOOR

    diam_domain = space.diam_domain
    h1_radii = [k for k, r in enumerate(grid) if r <= diam_domain * (1 + constants.METRIC_TOL)]
    m_dom = np.empty((space.n, len(grid)))
    for k, r in enumerate(grid):
        inside = space.dist <= r + constants.METRIC_TOL * max(1.0, r)
        m_dom[:, k] = inside @ (space.mu * space.interior)

    def h1_scan(centers):
        ratios = [m[y, k] / m_dom[y, k]
                  for y in np.flatnonzero(centers) for k in h1_radii if m_dom[y, k] > 0]
        return max(ratios, default=1.0)

    K_H1 = float(h1_scan(space.interior))
    K_H1_closure = float(h1_scan(space.closure))
    flags["h1_scanned"] = bool(h1_radii)

    K_H2 = 1.0
    for k, r in enumerate(grid):
        inside = space.dist <= r + constants.METRIC_TOL * max(1.0, r)
        per = inside @ space.perimeter
        for y in np.flatnonzero(space.boundary):
            a = r * per[y] / m[y, k]
            K_H2 = max(K_H2, a, 1 / a)

    poincare_raw, samples = poincare_constant(space, grid, p, starts=starts, seed=seed, threads=threads)
    flags["poincare_finite"] = math.isfinite(poincare_raw)

    sample_grid = [(int(y), r) for y in range(space.n) for r in grid]

    report = HypothesisReport(K_D=K_D, s=float(s), K_H1=K_H1, K_H1_closure=K_H1_closure,
                              K_H2=float(K_H2), K_P=max(1.0, poincare_raw),
                              poincare_raw=poincare_raw, diam=diam_domain, p=float(p),
                              radius_grid=grid, sample_grid=sample_grid,
                              poincare_samples=samples, flags=flags)
    logger.info(f"Structural constants: K_D={K_D:.4g} s={report.s:.4g} K_H1={K_H1:.4g} "
                f"K_H2={report.K_H2:.4g} K_P={report.K_P:.4g}")

    return report


def audit_hypotheses(space, report, tol=1e-9):
    """Re-check every reported inequality with fresh ball computations.

    Returns:
        list of str: One message per violated inequality, empty on success.
    """

    from calculus import poincare_ratio

    violations = []
    d = space.dist

    if not np.allclose(d, d.T, rtol=0, atol=constants.METRIC_TOL):
        violations.append("metric is not symmetric")
    if np.any(np.diag(d) != 0):
        violations.append("metric has a nonzero diagonal")
    for k in range(space.n):
        slack = d[:, [k]] + d[[k], :] - d
        if slack.min() < -constants.METRIC_TOL * max(1.0, space.diam):
            violations.append(f"triangle inequality fails through {space.ids[k]!r}")
            break

    grid = report.radius_grid
    mass = {(y, r): space.measure(ball(space, y, r)) for y in range(space.n) for r in grid}

    for y in range(space.n):
        for r in grid:
            if space.measure(ball(space, y, 2 * r)) > report.K_D * mass[(y, r)] * (1 + tol):
                violations.append(f"doubling fails at ({space.ids[y]!r}, {r})")

    for x in range(space.n):
        for R in grid:
            members = ball(space, x, R).members
            for rho in [r for r in grid if r < R]:
                floor = (rho / R) ** report.s
                for y in members:
                    if mass[(y, rho)] / mass[(x, R)] < floor * (1 - tol):
                        violations.append(f"lower-mass bound fails at ({space.ids[x]!r}, "
                                          f"{space.ids[y]!r}, {rho}, {R})")

    for y in np.flatnonzero(space.interior):
        for r in grid:
            if r > space.diam_domain * (1 + constants.METRIC_TOL):
                continue
            b = ball(space, y, r)
            if space.measure(b.mask & space.interior) * report.K_H1 < mass[(y, r)] * (1 - tol):
                violations.append(f"(H1) fails at ({space.ids[y]!r}, {r})")

    for y in np.flatnonzero(space.boundary):
        for r in grid:
            b = ball(space, y, r)
            per = float(space.perimeter[b.mask].sum())
            low, high = mass[(y, r)] / (report.K_H2 * r), report.K_H2 * mass[(y, r)] / r
            if per < low * (1 - tol) or per > high * (1 + tol):
                violations.append(f"(H2) fails at ({space.ids[y]!r}, {r})")

    for sample in report.poincare_samples:
        ratio = poincare_ratio(space, sample.values, sample.center, sample.radius, report.p)
        if ratio > report.K_P * (1 + tol):
            violations.append(f"Poincare fails at ({space.ids[sample.center]!r}, {sample.radius})")

    return violations
