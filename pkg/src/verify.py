"""Checks on computed minimizers: the De Giorgi inequality at the boundary,
De Giorgi class membership inside the domain, boundedness near the
boundary, the hole-filling iteration and the lower bounds on the energy."""

import math

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from scipy import optimize

# Local imports
import constants
import log

from calculus import SlopeOperator, energy_operator
from energy import Energy, Variant, check_radii, cutoff, lower_bounds, truncation
from errors import BallNotInterior, BadRadius, HypothesisFails, VerifyError
from space import ball

logger = log.create_logger(name="Verify")

PASS = "pass"
NOT_APPLICABLE = "not_applicable"
FAIL = "fail"

DEGIORGI_COLUMNS = ("y", "rho", "R", "alpha", "lhs", "volume_term", "boundary_term_p",
                    "boundary_term_1", "K_required_p", "K_required_1", "status")
DGCLASS_COLUMNS = ("sign", "y", "rho", "R", "alpha", "lhs", "rhs_core", "K", "status")


def _required(lhs, denominator):
    """K = lhs / denominator, or None when the denominator vanishes."""

    if denominator > 0:
        return lhs / denominator
    return None


def _status(lhs, *required):
    if all(k is None for k in required):
        return NOT_APPLICABLE if lhs == 0 else FAIL
    return PASS


@dataclass
class DeGiorgiSample:
    y: int
    rho: float
    R: float
    alpha: float
    lhs: float
    volume_term: float
    boundary_term_p: float
    boundary_term_1: float
    K_required_p: float = None
    K_required_1: float = None
    status: str = PASS

    def to_row(self, space):
        row = dict(self.__dict__)
        row["y"] = space.ids[self.y]
        return row


def _levels(values, quantiles=constants.LEVEL_QUANTILES):
    low, high = float(values.min()), float(values.max())
    return [low + q * (high - low) for q in quantiles]


def _radius_pairs(space, fraction):
    radii = [q * space.diam_domain * fraction for q in constants.RADIUS_QUANTILES]
    return [(rho, R) for i, R in enumerate(radii) for rho in radii[:i]]


def _separated(space, y, rho, R):
    """No edge leaves B(y, R) from a domain vertex of B(y, rho)."""

    if R - rho >= float(space.lengths.max()):
        return True
    return not np.any(ball(space, y, rho).mask & space.interior)


def default_degiorgi_samples(space, u, *, relax=False):
    """(y, rho, R, alpha) over boundary vertices, radius pairs at fixed quantiles
    of diam/10 (diam/2 when relaxed) and levels at quantiles of u's range.

    Pairs closer than the longest edge are kept only when B(y, rho) misses the
    domain.
    """

    values = np.asarray(getattr(u, "values", u), dtype=float)[space.closure]
    fraction = constants.RELAXED_RADIUS_FRACTION if relax else constants.DEGIORGI_RADIUS_FRACTION

    return [(int(y), rho, R, alpha)
            for y in np.flatnonzero(space.boundary)
            for rho, R in _radius_pairs(space, fraction) if _separated(space, y, rho, R)
            for alpha in _levels(values)]


def _degiorgi_one(space, values, problem, op, sample, relax):
    y, rho, R, alpha = sample
    y = space.vertex(y)
    if not space.boundary[y]:
        raise VerifyError(f"De Giorgi samples are centred on the boundary, not {space.ids[y]!r}")
    check_radii(space, rho, R, relax)

    p = problem.p
    v = truncation(space, values, alpha).values
    g = op.exact(v)

    small = ball(space, y, rho).mask
    big = ball(space, y, R).mask
    tau = cutoff(space, y, rho, R)
    f = np.abs(problem.f)
    on_boundary = big & space.boundary

    lhs = float(space.mu[small & space.interior] @ g[small & space.interior] ** p)
    volume = float(space.mu[big & space.interior] @ v[big & space.interior] ** p)
    term_p = float((f * v ** p * space.perimeter)[on_boundary].sum())
    term_1 = float((tau * v * f * space.perimeter)[on_boundary].sum())

    k_p = _required(lhs, volume / (R - rho) ** p + term_p)
    k_1 = _required(lhs, volume / (R - rho) ** p + term_1)

    return DeGiorgiSample(y=y, rho=float(rho), R=float(R), alpha=float(alpha), lhs=lhs,
                          volume_term=volume, boundary_term_p=term_p, boundary_term_1=term_1,
                          K_required_p=k_p, K_required_1=k_1, status=_status(lhs, k_p, k_1))


def de_giorgi_check(space, u, problem, samples, *, relax=False, threads=constants.THREADS):
    """Required constants of the boundary De Giorgi inequality per sample.

    The volume term runs over the domain part of B(y, R). Both boundary
    terms are reported: sum |f| (u - alpha)_+^p P and sum tau (u - alpha)_+ |f| P
    over the boundary part of B(y, R).
    """

    values = np.asarray(getattr(u, "values", u), dtype=float)
    op = energy_operator(space)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(lambda s: _degiorgi_one(space, values, problem, op, s, relax), samples))


def degiorgi_summary(samples):
    finite_p = [s.K_required_p for s in samples if s.K_required_p is not None]
    finite_1 = [s.K_required_1 for s in samples if s.K_required_1 is not None]

    return {
        "K_max_p": max(finite_p, default=0.0),
        "K_max_1": max(finite_1, default=0.0),
        "pass_counts": {status: sum(s.status == status for s in samples)
                        for status in (PASS, NOT_APPLICABLE, FAIL)},
    }


@dataclass
class DGSample:
    sign: int
    y: int
    rho: float
    R: float
    alpha: float
    lhs: float
    rhs_core: float
    K: float = None
    status: str = PASS

    def to_row(self, space):
        row = dict(self.__dict__)
        row["y"] = space.ids[self.y]
        return row


@dataclass
class DGClassReport:
    K_u: float
    K_neg: float
    passed: bool
    samples: list = field(repr=False)

    def to_dict(self):
        return {"K_u": self.K_u, "K_neg": self.K_neg, "passed": self.passed,
                "pass_counts": {status: sum(s.status == status for s in self.samples)
                                for status in (PASS, NOT_APPLICABLE, FAIL)}}


def _inside(space, y, R):
    b = ball(space, y, R).mask
    return not np.any(b & ~space.interior)


def default_dgclass_samples(space, u, *, relax=False):
    """Interior samples whose outer ball stays inside the domain, radii at least
    an edge apart."""

    values = np.asarray(getattr(u, "values", u), dtype=float)[space.interior]
    fraction = constants.RELAXED_RADIUS_FRACTION if relax else constants.DEGIORGI_RADIUS_FRACTION

    return [(int(y), rho, R, alpha)
            for y in np.flatnonzero(space.interior)
            for rho, R in _radius_pairs(space, fraction)
            if _inside(space, y, R) and _separated(space, y, rho, R)
            for alpha in _levels(values)]


def dg_class_check(space, u, p, samples, *, threads=constants.THREADS):
    """De Giorgi class constant K = max lhs / rhs_core for u and for -u with
    lhs = sum_{B(y, rho)} g^p mu and rhs_core = sum_{B(y, R)} (u - alpha)_+^p mu / (R - rho)^p,
    using the gradient of the domain as a space of its own."""

    values = np.asarray(getattr(u, "values", u), dtype=float)
    op = SlopeOperator(space, space.interior, space.interior, allow_isolated=True)

    for y, rho, R, _ in samples:
        if not 0 < rho < R:
            raise VerifyError(f"Radii must satisfy 0 < rho < R, got rho={rho}, R={R}")
        if not _inside(space, y, R):
            raise BallNotInterior(f"B({y}, {R}) leaves the domain")

    def one(job):
        sign, (y, rho, R, alpha) = job
        y = space.vertex(y)
        v = np.where(space.interior, np.maximum(sign * values - alpha, 0.0), 0.0)
        g = op.exact(v)

        small = ball(space, y, rho).mask
        big = ball(space, y, R).mask
        lhs = float(space.mu[small] @ g[small] ** p)
        rhs = float(space.mu[big] @ v[big] ** p) / (R - rho) ** p

        k = _required(lhs, rhs)
        return DGSample(sign=sign, y=y, rho=float(rho), R=float(R), alpha=float(alpha),
                        lhs=lhs, rhs_core=rhs, K=k, status=_status(lhs, k))

    jobs = [(sign, s) for sign in (1, -1) for s in samples]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, jobs))

    def worst(sign):
        return max((r.K for r in results if r.sign == sign and r.K is not None), default=0.0)

    return DGClassReport(K_u=worst(1), K_neg=worst(-1),
                         passed=all(r.status != FAIL for r in results), samples=results)


@dataclass
class BoundednessReport:
    R: float
    sup_interior: float
    sup_trace: float
    omega_R: list
    mesh: str = None

    def to_dict(self, space):
        return {"R": self.R, "sup_interior": self.sup_interior, "sup_trace": self.sup_trace,
                "omega_R": [space.ids[i] for i in self.omega_R], "mesh": self.mesh}


def boundedness_report(space, u, R, *, relax=False, mesh=None):
    """sup |u| over the vertices of the domain within R/2 of the boundary, and
    sup |Tu| over the whole boundary."""

    limit = space.diam_domain * constants.BOUNDEDNESS_RADIUS_FRACTION
    if not R > 0:
        raise BadRadius(f"R must be positive, got {R}")
    if not relax and R >= limit:
        raise BadRadius(f"R = {R} is not below diam/4 = {limit:.4g}")

    values = np.abs(np.asarray(getattr(u, "values", u), dtype=float))
    to_boundary = space.dist[:, space.boundary].min(axis=1)
    omega = space.interior & (to_boundary < R / 2)

    return BoundednessReport(R=float(R),
                             sup_interior=float(values[omega].max()) if omega.any() else 0.0,
                             sup_trace=float(values[space.boundary].max()),
                             omega_R=np.flatnonzero(omega).tolist(), mesh=mesh)


@dataclass
class MeshReport:
    meshes: list
    sups: list
    ratios: list
    max_ratio: float
    stable: bool

    def to_dict(self):
        return dict(self.__dict__)


def mesh_stability(reports, factor=constants.MESH_FACTOR):
    """Ratios of sup_interior between consecutive refinement levels."""

    sups = [r.sup_interior for r in reports]
    ratios = []
    for a, b in zip(sups[:-1], sups[1:]):
        if min(a, b) > 0:
            ratios.append(max(a, b) / min(a, b))
        else:
            ratios.append(1.0 if a == b else math.inf)

    max_ratio = max(ratios, default=1.0)
    stable = max_ratio < factor
    if not stable:
        logger.warning(f"sup over Omega_R changes by a factor {max_ratio:.3g} between refinements")

    return MeshReport(meshes=[r.mesh for r in reports], sups=sups, ratios=ratios,
                      max_ratio=max_ratio, stable=stable)


def giusti_bound(lam, theta, p):
    return (1 - lam) ** -p / (1 - theta * lam ** -p)


def giusti_constant(theta, p):
    """c(theta, p) such that phi(rho) <= theta phi(R) + A/(R - rho)^p + B for all
    rho0 <= rho < R <= R0 gives phi(rho0) <= c (A/(R0 - rho0)^p + B).

    Iterating on rho_k = rho0 + (1 - lam^k)(R0 - rho0) sums two geometric
    series, so any lam in (theta^(1/p), 1) gives (1 - lam)^-p / (1 - theta lam^-p).
    """

    if not 0 <= theta < 1:
        raise VerifyError(f"theta must lie in [0, 1), got {theta}")
    if theta == 0:
        return 1.0

    low = theta ** (1 / p)
    res = optimize.minimize_scalar(giusti_bound, bounds=(low, 1.0), args=(theta, p),
                                   method="bounded", options={"xatol": 1e-12})

    return float(res.fun)


@dataclass
class GiustiReport:
    holds: bool
    constant: float
    lhs: float
    rhs: float


def giusti_iteration_check(radii, phi, theta, A, B, p, tol=1e-12):
    """Check the hole-filling hypothesis on every sampled pair, then its conclusion.

    Args:
        radii (array): Sample radii covering [rho0, R0].
        phi (array): Nonnegative finite values of phi at the radii.

    Raises:
        HypothesisFails: When some pair rho < R violates the hypothesis.
    """

    radii = np.asarray(radii, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if radii.shape != phi.shape or len(radii) < 2:
        raise VerifyError("phi needs a value per radius and at least two radii")
    if np.any(phi < 0) or not np.all(np.isfinite(phi)):
        raise VerifyError("phi must be nonnegative and finite")

    order = np.argsort(radii)
    radii, phi = radii[order], phi[order]

    for i in range(len(radii)):
        for j in range(i + 1, len(radii)):
            if radii[j] <= radii[i]:
                continue
            bound = theta * phi[j] + A / (radii[j] - radii[i]) ** p + B
            if phi[i] > bound + tol * max(1.0, bound):
                raise HypothesisFails(f"phi({radii[i]:.4g}) = {phi[i]:.4g} exceeds {bound:.4g} "
                                      f"against R = {radii[j]:.4g}")

    c = giusti_constant(theta, p)
    rhs = c * (A / (radii[-1] - radii[0]) ** p + B)

    return GiustiReport(holds=bool(phi[0] <= rhs + tol * max(1.0, rhs)), constant=c,
                        lhs=float(phi[0]), rhs=float(rhs))


@dataclass
class LowerBoundReport:
    fields: int
    holder_violations: int
    floor_violations: int
    worst_holder_margin: float
    worst_floor_margin: float
    explicit_floor: float

    def to_dict(self):
        return dict(self.__dict__)


def lower_bound_check(space, problem, K_T, fields, variant=Variant.J, tol=1e-9):
    """J(u) >= holder_curve(||g_u||_p) and J(u) >= explicit_floor on every field."""

    energy = Energy(space, problem, variant)
    bounds = lower_bounds(space, problem, K_T)
    floor = bounds.explicit_floor

    holder_margins, floor_margins = [], []
    for u in fields:
        values = np.asarray(getattr(u, "values", u), dtype=float)
        value = energy.value(values)
        g = energy.op.exact(values)
        t = float(energy.mu @ g ** problem.p) ** (1 / problem.p)

        scale = max(1.0, abs(value))
        holder_margins.append((value - bounds.holder_curve(t)) / scale)
        floor_margins.append((value - floor) / scale)

    holder_margins = np.array(holder_margins)
    floor_margins = np.array(floor_margins)

    return LowerBoundReport(fields=len(holder_margins),
                            holder_violations=int((holder_margins < -tol).sum()),
                            floor_violations=int((floor_margins < -tol).sum()),
                            worst_holder_margin=float(holder_margins.min(initial=math.inf)),
                            worst_floor_margin=float(floor_margins.min(initial=math.inf)),
                            explicit_floor=floor)
