#!/usr/bin/python3
"""
This module defines defaults for the desk-scale experiments and output names.
- GRID_NZ, GRID_NX, GRID_H: Model grid dimensions and spacing (meters).
- MODEL_SPEC: Synthetic truth description understood by experiment.make_truth.
- VMIN, VMAX: Velocity range (m/s) of synthetic models.
- N_SHOTS: Number of co-located sources/receivers along the surface.
- FREQUENCIES, BANDS: Frequencies (Hz) and their continuation bands.
- F_PEAK: Ricker peak frequency (Hz).
- KEEP_RATIO, MASK_PATTERN: Observed fraction and sampling pattern.
- N_PROBES, PROBE_DIST: Simultaneous shots per outer iteration and their law.
- RANK_MIN, RANK_FRACTION: Rank cap rule, max(RANK_MIN, ceil(RANK_FRACTION * min(Ns, Nr))).
- LAMBDA, EPS_REL: Shot-term weight and residual budget rule eps = (EPS_REL * ||D_s||_F)**2.
- OUTER_ITERS, LASSO_ITERS, ROOT_ITERS, ROOT_TOL, LBFGS_ITERS, LBFGS_MEM: Iteration caps.
- SPG_*: Spectral projected gradient constants.
- WOLFE_C1, WOLFE_C2: Line search constants.
- SEED: Master seed.
- ODIR_NAME: Default output directory.
- *_FNAME: Output file names and templates.
"""

GRID_NZ = 60
GRID_NX = 120
GRID_H = 20.0
MODEL_SPEC = "lens:3:-400"
VMIN = 1500.0
VMAX = 4500.0

N_SHOTS = 40
SOURCE_ROW = 1

FREQUENCIES = (3.0, 5.0, 7.0, 10.0)
BANDS = ((3.0, 5.0), (5.0, 7.0, 10.0))
F_PEAK = 10.0

KEEP_RATIO = 0.5
MASK_PATTERN = "entry"

N_PROBES = 4
PROBE_DIST = "gaussian"

RANK_MIN = 5
RANK_FRACTION = 0.1
LAMBDA = 1.0
EPS_REL = 1e-3

OUTER_ITERS = 10
LASSO_ITERS = 200
ROOT_ITERS = 10
ROOT_TOL = 1e-2
ROOT_GROWTH = 10.0
LBFGS_ITERS = 5
LBFGS_MEM = 5

SPG_MEMORY = 10
SPG_GAMMA = 1e-4
SPG_STEP_MIN = 1e-10
SPG_STEP_MAX = 1e10
SPG_MAX_BACKTRACK = 30

WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
LBFGS_GTOL = 1e-6

PIVOT_TOL = 1e-14
SNR_CAP = 300.0

SEED = 20240917
WORKERS = 1

ODIR_NAME = "output"
TRUTH_FNAME = "truth.jfm"
INITIAL_FNAME = "initial.jfm"
FINAL_TEMPLATE = "final_{pipeline}.jfm"
SLICE_TEMPLATE = "slice_{omega:.3f}_{kind}.jfm"
RECOVERED_TEMPLATE = "slice_{omega:.3f}_recovered_{pipeline}.jfm"
HISTORY_FNAME = "history.csv"
COMPARISON_FNAME = "comparison.csv"
CONVERGENCE_TEMPLATE = "convergence_{pipeline}_{omega:.3f}.csv"
SURVEY_FNAME = "survey.csv"
