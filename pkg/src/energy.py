"""The energy J(u) = sum_domain g_u^p mu - sum_domain G(u) mu + sum_boundary Tu f P,
its variants I and J_minus, the reaction term G(t) = c - |t|^gamma, the
lower bounds on J and the competitor used by the De Giorgi estimate.
"""

import json
import math

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Local imports
import constants
import log

from calculus import ScalarField, energy_operator, lp_norm
from errors import (NotMeanZero, BadRadii, UnbalancedData, BadExponent, EnergyError,
                    BadParams)
from space import Support, ball, mean

logger = log.create_logger(name="Energy")

PROBLEM_FIELDS = {"p", "c", "gamma", "q", "f"}


class Variant(Enum):
    J = "J"
    I = "I"
    J_MINUS = "J_minus"


@dataclass(frozen=True)
class ReactionParams:
    c: float
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise EnergyError(f"The reaction constant c must be positive, got {self.c}")
        if not self.gamma > 1:
            raise BadExponent(f"The reaction exponent must exceed 1, got {self.gamma}")

    def check(self, p_star):
        """gamma must stay below the Sobolev exponent (and be finite when p* is)."""

        if not (self.gamma < p_star and math.isfinite(self.gamma)):
            raise BadExponent(f"gamma = {self.gamma} is not below p* = {p_star}")


@dataclass(frozen=True)
class ProblemSpec:
    p: float
    reaction: ReactionParams
    f: np.ndarray = field(repr=False)
    q: float = math.inf

    def q_admissible(self, s):
        """Smallest admissible boundary exponent for the lower bound on J.

        Returns:
            (float, bool): The threshold and whether q clears it. For p > s
            every q >= 1 is admissible, otherwise q must be strictly above
            p(s-1) / (s(p-1)).
        """

        if self.p > s:
            return 1.0, self.q >= 1

        threshold = self.p * (s - 1) / (s * (self.p - 1))
        return threshold, self.q > threshold

    def with_c(self, c):
        return ProblemSpec(self.p, ReactionParams(c, self.reaction.gamma), self.f, self.q)

    def to_dict(self, space):
        return {
            "p": self.p,
            "c": self.reaction.c,
            "gamma": self.reaction.gamma,
            "q": self.q,
            "f": {space.ids[i]: float(self.f[i]) for i in np.flatnonzero(space.boundary)},
        }


def make_problem(space, p, c, gamma, f=None, q=math.inf):
    """Validate the problem data against a space.

    Args:
        f (dict or array, optional): Boundary data keyed by vertex id, or one
        value per vertex. Defaults to the f carried by the space file.
    """

    p, q = float(p), float(q)
    if not (1 < p < math.inf):
        raise BadExponent(f"p must lie in (1, inf), got {p}")
    if not q >= 1:
        raise BadExponent(f"q must be at least 1, got {q}")

    reaction = ReactionParams(float(c), float(gamma))

    if f is None:
        values = np.array(space.boundary_data, dtype=float)
    elif isinstance(f, dict):
        values = np.zeros(space.n)
        for vid, value in f.items():
            y = space.vertex(vid)
            if not space.boundary[y]:
                raise UnbalancedData(f"f is only defined on the boundary, not on {vid!r}")
            values[y] = float(value)
    else:
        values = np.array(f, dtype=float)
        if values.shape != (space.n,):
            raise UnbalancedData("f needs one value per vertex")
        values = np.where(space.boundary, values, 0.0)

    if not np.all(np.isfinite(values)):
        raise UnbalancedData("f must be bounded")

    weighted = values * space.perimeter
    if abs(weighted.sum()) > constants.BALANCE_TOL * max(1.0, float(np.abs(weighted).sum())):
        raise UnbalancedData(f"sum of f P over the boundary is {weighted.sum():.3g}, not 0")

    values.setflags(write=False)
    return ProblemSpec(p=p, reaction=reaction, f=values, q=q)


def _exponent(value):
    if value is None or value in ("inf", "Infinity"):
        return math.inf
    return float(value)


def load_problem(space, path):
    """Read `{p, c, gamma, q, f}` from JSON; q may be "inf", f may be omitted."""

    with open(path) as json_file:
        data = json.load(json_file)

    return problem_from_dict(space, data)


def problem_from_dict(space, data):
    unknown = set(data) - PROBLEM_FIELDS
    if unknown:
        raise BadParams(f"Unknown problem fields: {sorted(unknown)}")

    missing = {"p", "c", "gamma"} - set(data)
    if missing:
        raise BadParams(f"Missing problem fields: {sorted(missing)}")

    return make_problem(space, data["p"], data["c"], data["gamma"], f=data.get("f"),
                        q=_exponent(data.get("q")))


def reaction_value(t, params):
    """G(t) = c - |t|^gamma, elementwise on arrays."""

    return params.c - np.abs(t) ** params.gamma


class Energy:
    """Vectorized evaluation of one variant of the energy on raw value arrays.

    Values live on the closure of the domain; exterior entries are ignored.
    """

    SIGN = {Variant.J: 1.0, Variant.I: 0.0, Variant.J_MINUS: -1.0}

    def __init__(self, space, problem, variant=Variant.J):
        self.space = space
        self.problem = problem
        self.variant = variant

        self.op = energy_operator(space)
        self.p = problem.p
        self.gamma = problem.reaction.gamma
        self.reaction = problem.reaction
        self.mu = space.mu * space.interior
        self.coupling = self.SIGN[variant] * problem.f * space.perimeter * space.boundary

    def parts(self, values):
        g = self.op.exact(values)
        gradient = float(self.mu @ g ** self.p)
        reaction = float(self.mu @ reaction_value(values, self.reaction))
        boundary = float(self.coupling @ values)

        return {
            "gradient": gradient,
            "reaction": reaction,
            "boundary": boundary,
            "value": gradient - reaction + boundary,
        }

    def value(self, values):
        return self.parts(values)["value"]

    def value_batch(self, batch):
        """J for every row of a (m, n) batch."""

        g = self.op.exact_batch(batch)
        return ((g ** self.p) @ self.mu - reaction_value(batch, self.reaction) @ self.mu
                + batch @ self.coupling)

    def smoothed(self, values, eps):
        """The energy with the eps-softmax gradient, and its derivative."""

        g, cache = self.op.smoothed(values, eps)
        value = (float(self.mu @ g ** self.p) - float(self.mu @ reaction_value(values, self.reaction))
                 + float(self.coupling @ values))

        grad = self.op.adjoint(cache, self.p * self.mu * g ** (self.p - 1))
        grad += self.gamma * self.mu * np.abs(values) ** (self.gamma - 1) * np.sign(values)
        grad += self.coupling

        return value, grad * self.space.closure


def check_mean_zero(space, u):
    values = getattr(u, "values", u)
    scale = max(1.0, float(np.abs(values[space.closure]).max()))
    avg = mean(space, values, space.interior)

    if abs(avg) > constants.MEAN_TOL * scale:
        raise NotMeanZero(f"The domain average is {avg:.3g}, not 0")


def energy_J(space, u, problem, variant=Variant.J):
    """J(u), I(u) or J_minus(u) for a mean-zero field on the closure of the domain."""

    check_mean_zero(space, u)
    return Energy(space, problem, variant).value(np.asarray(getattr(u, "values", u), dtype=float))


def energy_gradient(space, u):
    """g_u on the domain, with slopes towards boundary neighbours included."""

    values = np.asarray(getattr(u, "values", u), dtype=float)
    return ScalarField(energy_operator(space).exact(values), Support.INTERIOR)


@dataclass
class LowerBounds:
    K_T: float
    f_norm: float
    p: float
    constant: float

    def holder_curve(self, t):
        return t * (t ** (self.p - 1) - self.K_T * self.f_norm) - self.constant

    @property
    def explicit_floor(self):
        a = self.K_T * self.f_norm
        return -(self.p - 1) * (a / self.p) ** (self.p / (self.p - 1)) - self.constant


def lower_bounds(space, problem, K_T):
    f_norm = lp_norm(problem.f, space.perimeter, space.boundary, problem.q)
    return LowerBounds(K_T=float(K_T), f_norm=f_norm, p=problem.p,
                       constant=problem.reaction.c * space.domain_measure)


def truncation(space, u, alpha):
    """(u - alpha)_+ on the closure of the domain."""

    values = np.asarray(getattr(u, "values", u), dtype=float)
    return ScalarField(np.where(space.closure, np.maximum(values - alpha, 0.0), 0.0), Support.CLOSURE)


def check_radii(space, rho, R, relax=False):
    if not 0 < rho < R:
        raise BadRadii(f"Radii must satisfy 0 < rho < R, got rho={rho}, R={R}")

    limit = space.diam_domain * constants.DEGIORGI_RADIUS_FRACTION
    if not relax and R >= limit:
        raise BadRadii(f"R = {R} is not below diam/10 = {limit:.4g}")


def cutoff(space, y, rho, R):
    """tau(x) = (1 - d(x, B(y, rho)) / (R - rho))_+, equal to 1 on B(y, rho)."""

    members = ball(space, y, rho).members
    distance = space.dist[:, members].min(axis=1)
    return np.maximum(1.0 - distance / (R - rho), 0.0)


@dataclass
class CompetitorBundle:
    tau: ScalarField
    level_set: np.ndarray = field(repr=False)
    level_set_rho: np.ndarray = field(repr=False)
    boundary_part: np.ndarray = field(repr=False)
    w: ScalarField = None
    g_w: ScalarField = None
    g_w_bound: ScalarField = None
    abs_bound_holds: bool = None


def competitor(space, u, y, rho, R, alpha, p=2.0, *, relax=False):
    """w = u - tau (u - alpha)_+ with its level sets and the pointwise bound
    g_w^p <= 2^p (g_u^p + (u - alpha)_+^p / (R - rho)^p) on the domain.

    The bound follows from g_w <= g_u + (u - alpha)_+ / (R - rho): tau is
    1/(R - rho)-Lipschitz and truncation is monotone and 1-Lipschitz.
    """

    y = space.vertex(y)
    if not space.boundary[y]:
        raise EnergyError(f"The competitor is centred on a boundary vertex, not {space.ids[y]!r}")
    check_radii(space, rho, R, relax)

    values = np.where(space.closure, np.asarray(getattr(u, "values", u), dtype=float), 0.0)
    tau = np.where(space.closure, cutoff(space, y, rho, R), 0.0)
    v = truncation(space, values, alpha).values
    w = values - tau * v

    above = values > alpha
    big = ball(space, y, R).mask & above
    small = ball(space, y, rho).mask & above

    op = energy_operator(space)
    g_u = op.exact(values)
    g_w = op.exact(w)
    bound = np.where(space.interior, 2 ** p * (g_u ** p + v ** p / (R - rho) ** p), 0.0)

    abs_bound = None
    if alpha >= 0:
        abs_bound = bool(np.all(np.abs(w) <= np.abs(values) + constants.ADMISSIBILITY_TOL))
    else:
        logger.info(f"alpha = {alpha:.4g} < 0 at {space.ids[y]!r}: |w| <= |u| is not asserted")

    return CompetitorBundle(tau=ScalarField(tau, Support.CLOSURE),
                            level_set=big & space.interior,
                            level_set_rho=small & space.interior,
                            boundary_part=big & space.boundary,
                            w=ScalarField(w, Support.CLOSURE),
                            g_w=ScalarField(g_w, Support.INTERIOR),
                            g_w_bound=ScalarField(bound, Support.INTERIOR),
                            abs_bound_holds=abs_bound)
