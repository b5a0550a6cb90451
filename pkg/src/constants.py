""" This module defines constants and defaults that are used throughout the project. """

import os

from dotenv import load_dotenv

# Load the env variables
load_dotenv()

# Parallelism degree for multi-start solves, ratio ascent and sample scans
THREADS = max(1, int(os.getenv("PLAP_THREADS", "1")))
LOG_LEVEL = os.getenv("PLAP_LOG_LEVEL", "INFO").upper()
OUTPUT_DIR = os.getenv("PLAP_OUTPUT_DIR", "out")

ROLE_INTERIOR = "interior"
ROLE_BOUNDARY = "boundary"
ROLE_EXTERIOR = "exterior"

# Tolerances
METRIC_TOL = 1e-12
BALANCE_TOL = 1e-12
MEAN_TOL = 1e-9
PROGRAM_TOL = 1e-8
JENSEN_TOL = 1e-9
ADMISSIBILITY_TOL = 1e-12

# Smoothed descent
MAX_ITERS = 6000
STALL_TOL = 1e-10
STALL_WINDOW = 50
EPS_RANGE_FACTOR = 0.1
EPS_DECAY = 0.5
EPS_EVERY = 200
EPS_FLOOR = 1e-6
POLISH_ITERS = 300
ARMIJO = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60

# Exact finish: the energy as a smooth program over values and slope bounds
REFINE_MAX_VARS = 400
REFINE_ROUNDS = 3
REFINE_ITERS = 500
REFINE_FTOL = 1e-15

# Ratio ascent for K_P, K_S, K_T
RATIO_STARTS = 64
POINCARE_STARTS = 8
RATIO_ITERS = 40
RATIO_EPS = 1e-3

PATH_CAP = 12
ORACLE_MAX_DOF = 4

# De Giorgi radii stay below diam/10, boundedness radii below diam/4
DEGIORGI_RADIUS_FRACTION = 0.1
RELAXED_RADIUS_FRACTION = 0.5
BOUNDEDNESS_RADIUS_FRACTION = 0.25
RADIUS_QUANTILES = (0.2, 0.35, 0.5)
LEVEL_QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

# Regression thresholds checked by `run`
UNIQUENESS_GRADIENT_TOL = 1e-4
UNIQUENESS_DATA_TOL = 1e-6
MESH_FACTOR = 2.0

# Lower-mass exponent used when no grid tuple forces a positive one
S_FLOOR = 1e-12
