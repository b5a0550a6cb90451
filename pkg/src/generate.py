"""Generators of space descriptions (lattice grids, paths and annuli) with
balanced boundary data profiles."""

import math

import numpy as np

# Local imports
import constants
import log

from errors import BadParams
from space import build_space

logger = log.create_logger(name="Generate")

PROFILES = ("zero", "dipole", "linear")


def _positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise BadParams(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _positive(value, name):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise BadParams(f"{name} must be a number, got {value!r}")
    if not (math.isfinite(value) and value > 0):
        raise BadParams(f"{name} must be positive, got {value}")
    return value


def profile_values(profile, xs, perimeter, amplitude=1.0):
    """Boundary data with sum f P = 0 from x coordinates of the boundary vertices.

    dipole puts +a on the leftmost side and balances it with a constant on the
    rightmost side; linear is a (x - mean of x against P).
    """

    xs = np.asarray(xs, dtype=float)
    perimeter = np.asarray(perimeter, dtype=float)

    if profile == "zero":
        return np.zeros(len(xs))

    if profile == "dipole":
        left = np.isclose(xs, xs.min())
        right = np.isclose(xs, xs.max())
        values = np.zeros(len(xs))
        values[left] = amplitude
        values[right] = -amplitude * perimeter[left].sum() / perimeter[right].sum()
        return values

    if profile == "linear":
        center = float(xs @ perimeter) / float(perimeter.sum())
        return amplitude * (xs - center)

    raise BadParams(f"Unknown profile {profile!r}, expected one of {PROFILES}")


def _lattice(points, h, profile, amplitude, diagonals=()):
    """Description of a lattice subset.

    Args:
        points (dict): Lattice (i, j) -> (vertex id, role).
        diagonals (list): Extra ((i, j), (k, l)) pairs joined with length h*sqrt(2).
    """

    keys = sorted(points)
    vertices = []
    for key in keys:
        vid, role = points[key]
        entry = {"id": vid, "mu": h * h, "role": role}
        if role == constants.ROLE_BOUNDARY:
            entry["perimeter"] = h
        vertices.append(entry)

    edges = []
    for i, j in keys:
        for di, dj in ((1, 0), (0, 1)):
            other = (i + di, j + dj)
            if other in points:
                edges.append({"a": points[(i, j)][0], "b": points[other][0], "length": h})
    for a, b in diagonals:
        edges.append({"a": points[a][0], "b": points[b][0], "length": h * math.sqrt(2)})

    boundary = [k for k, entry in zip(keys, vertices) if entry["role"] == constants.ROLE_BOUNDARY]
    values = profile_values(profile, [i * h for i, _ in boundary], [h] * len(boundary), amplitude)
    for key, value in zip(boundary, values):
        vertices[keys.index(key)]["f"] = float(value)

    return {"vertices": vertices, "edges": edges}


def grid(n, h=None, profile="zero", amplitude=1.0, corners=False):
    """n x n interior lattice with spacing h (default 1/(n+1)) and its boundary ring.

    Corners are left out unless `corners` is set, in which case each one is
    joined diagonally to the nearest interior vertex.
    """

    n = _positive_int(n, "n")
    h = 1.0 / (n + 1) if h is None else _positive(h, "h")

    points = {}
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            points[(i, j)] = (f"i{i}_{j}", constants.ROLE_INTERIOR)
    for k in range(1, n + 1):
        for i, j in ((0, k), (n + 1, k), (k, 0), (k, n + 1)):
            points[(i, j)] = (f"b{i}_{j}", constants.ROLE_BOUNDARY)

    diagonals = []
    if corners:
        for (i, j), (a, b) in (((0, 0), (1, 1)), ((0, n + 1), (1, n)),
                               ((n + 1, 0), (n, 1)), ((n + 1, n + 1), (n, n))):
            points[(i, j)] = (f"b{i}_{j}", constants.ROLE_BOUNDARY)
            diagonals.append(((i, j), (a, b)))

    return _lattice(points, h, profile, amplitude, diagonals)


def path(n, h=1.0, profile="zero", amplitude=1.0):
    """n vertices on a line, both ends on the boundary; mu = h, perimeter by the edge rule."""

    n = _positive_int(n, "n", minimum=3)
    h = _positive(h, "h")

    vertices = []
    for k in range(n):
        role = constants.ROLE_BOUNDARY if k in (0, n - 1) else constants.ROLE_INTERIOR
        vertices.append({"id": f"v{k}", "mu": h, "role": role})

    edges = [{"a": f"v{k}", "b": f"v{k + 1}", "length": h} for k in range(n - 1)]

    values = profile_values(profile, [0.0, (n - 1) * h], [1.0, 1.0], amplitude)
    vertices[0]["f"] = float(values[0])
    vertices[-1]["f"] = float(values[1])

    return {"vertices": vertices, "edges": edges}


def annulus(r_in, r_out, h=1.0, profile="zero", amplitude=1.0):
    """Lattice points h*(i, j) with r_in <= |z| <= r_out form the domain; lattice
    neighbours outside it form the boundary."""

    r_out = _positive(r_out, "r_out")
    h = _positive(h, "h")
    r_in = float(r_in)
    if not 0 <= r_in < r_out:
        raise BadParams(f"Annulus radii must satisfy 0 <= r_in < r_out, got {r_in}, {r_out}")

    m = int(math.ceil(r_out / h)) + 1
    inside = set()
    for i in range(-m, m + 1):
        for j in range(-m, m + 1):
            if r_in <= h * math.hypot(i, j) <= r_out:
                inside.add((i, j))

    if not inside:
        raise BadParams(f"No lattice point of spacing {h} lies in the annulus")

    points = {key: (f"i{key[0]}_{key[1]}", constants.ROLE_INTERIOR) for key in inside}
    for i, j in inside:
        for key in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if key not in inside:
                points[key] = (f"b{key[0]}_{key[1]}", constants.ROLE_BOUNDARY)

    return _lattice(points, h, profile, amplitude)


GENERATORS = {"grid": grid, "path": path, "annulus": annulus}


def generate(kind, params):
    """Build and validate a description with the named generator."""

    if kind not in GENERATORS:
        raise BadParams(f"Unknown generator {kind!r}, expected one of {sorted(GENERATORS)}")

    try:
        description = GENERATORS[kind](**params)
    except TypeError as err:
        raise BadParams(f"Bad parameters for {kind}: {err}")

    space = build_space(description)
    logger.info(f"Generated {kind} space {space}")

    return description
