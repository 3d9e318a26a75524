#!/usr/bin/python3
"""
Defines the experiment harness behind the `invert` command.
- ExperimentConfig: Every knob of a run, defaulting to the values in `constants`.
- load_config: Builds an ExperimentConfig from a key=value file and flag overrides.
- joint_config: Translates an ExperimentConfig into the pipeline JointConfig.
- make_truth: Deterministic synthetic velocity model (layered, lens, or read from file).
- make_initial: Depth-linear starting model between the truth's top and bottom row means.
- generate_slices: Simulates every frequency slice and applies the observation mask.
- run_pipeline: Runs one named pipeline (observed, full, disjoint, joint).
- run_experiment: Generates data, runs the selected pipelines and writes every artifact.
"""

from joint_fwi import constants
from joint_fwi.acquisition import (
    RickerSource, Survey, apply_mask, forward_data, make_mask, ricker_amplitude, surface_survey,
)
from joint_fwi.core import Domain, ModelGrid
from joint_fwi.errors import BadRatio, BadSpec, JointFWIError
from joint_fwi.helmholtz import PDECounter, assemble
from joint_fwi.joint import JointConfig, JointState, SliceData, disjoint_invert, joint_invert, observed_invert
from joint_fwi.matfile import read_matrix, write_index_csv, write_matrix, write_pgm, write_rows_csv
from joint_fwi.metrics import model_error
from joint_fwi.probes import Distribution

import numpy as np

from dataclasses import dataclass, fields, replace
from pathlib import Path
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

PIPELINES = ("observed", "full", "disjoint", "joint", "both")
DOMAINS = {"midoff": Domain.MIDPOINT_OFFSET, "sr": Domain.SOURCE_RECEIVER}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    - nz, nx, h: Grid size and spacing (meters).
    - model: Truth spec for make_truth.
    - n_shots, source_row: Co-located surface survey.
    - frequencies: Frequencies in Hz; bands group them for continuation.
    - f_peak: Ricker peak frequency (Hz).
    - keep_ratio, mask_pattern: Observation mask.
    - k_probes, probe_dist: Simultaneous shots per outer iteration.
    - rank_cap: 0 applies the default rank rule.
    - lam, eps_rel, domain: Completion settings ("midoff" or "sr").
    - outer_iters, lbfgs_iters, lbfgs_mem, lasso_iters, root_iters, root_tol: Iteration caps.
    - continuation: Whether the pipelines sweep the bands.
    - clamp: Keep velocities within [VMIN, VMAX] during inversion.
    - seed, workers: Master seed and per-frequency threads.
    - pipeline: observed, full, disjoint, joint or both.
    - odir: Output directory.
    """
    nz: int = constants.GRID_NZ
    nx: int = constants.GRID_NX
    h: float = constants.GRID_H
    model: str = constants.MODEL_SPEC
    n_shots: int = constants.N_SHOTS
    source_row: int = constants.SOURCE_ROW
    frequencies: Tuple[float, ...] = constants.FREQUENCIES
    bands: Tuple[Tuple[float, ...], ...] = constants.BANDS
    f_peak: float = constants.F_PEAK
    keep_ratio: float = constants.KEEP_RATIO
    mask_pattern: str = constants.MASK_PATTERN
    k_probes: int = constants.N_PROBES
    probe_dist: str = constants.PROBE_DIST
    rank_cap: int = 0
    lam: float = constants.LAMBDA
    eps_rel: float = constants.EPS_REL
    domain: str = "midoff"
    outer_iters: int = constants.OUTER_ITERS
    lbfgs_iters: int = constants.LBFGS_ITERS
    lbfgs_mem: int = constants.LBFGS_MEM
    lasso_iters: int = constants.LASSO_ITERS
    root_iters: int = constants.ROOT_ITERS
    root_tol: float = constants.ROOT_TOL
    continuation: bool = True
    clamp: bool = False
    seed: int = constants.SEED
    workers: int = constants.WORKERS
    pipeline: str = "both"
    odir: str = constants.ODIR_NAME

    def __post_init__(self):
        if not 0 < self.keep_ratio <= 1:
            raise BadRatio("keep_ratio must lie in (0, 1], got %r" % self.keep_ratio)
        if self.pipeline not in PIPELINES:
            raise BadSpec("pipeline must be one of %r, got %r" % (PIPELINES, self.pipeline))
        if self.domain not in DOMAINS:
            raise BadSpec("domain must be one of %r, got %r" % (tuple(DOMAINS), self.domain))
        if not self.frequencies or any(not f > 0 for f in self.frequencies):
            raise BadSpec("frequencies must be positive, got %r" % (self.frequencies,))
        for band in self.bands:
            if any(f not in self.frequencies for f in band):
                raise BadSpec("band %r uses frequencies outside %r" % (band, self.frequencies))
        for name in ("nz", "nx", "n_shots", "k_probes", "lbfgs_mem", "lasso_iters", "root_iters", "workers"):
            if getattr(self, name) < 1:
                raise BadSpec("%s must be at least 1, got %r" % (name, getattr(self, name)))
        if self.probe_dist not in {dist.value for dist in Distribution}:
            raise BadSpec("probe_dist must be gaussian or rademacher, got %r" % self.probe_dist)
        if self.mask_pattern not in ("entry", "source"):
            raise BadSpec("mask_pattern must be entry or source, got %r" % self.mask_pattern)


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _bands(text: str) -> Tuple[Tuple[float, ...], ...]:
    return tuple(_floats(part) for part in text.split(";") if part.strip())


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


PARSERS = {"frequencies": _floats, "bands": _bands}
TYPE_PARSERS = {int: int, float: float, str: str, bool: _bool}


def _parse_value(name: str, text: str):
    if name in PARSERS:
        return PARSERS[name](text)
    default = getattr(ExperimentConfig, name)
    return TYPE_PARSERS[type(default)](text.strip())


def load_config(ipath: Optional[Path] = None, overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    """
    Reads `key = value` lines (UTF-8, `#` starts a comment, keys case-sensitive), then applies overrides.

    - ipath: Config file; None uses the defaults.
    - overrides: Typed values from command-line flags; they win over the file.
    """
    logging.info("ipath = %r", ipath)
    known = {item.name for item in fields(ExperimentConfig)}
    values = {}
    if ipath is not None:
        ipath = Path(ipath)
        if not ipath.is_file():
            raise BadSpec("config file %s does not exist" % ipath)
        for lineno, line in enumerate(ipath.read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise BadSpec("%s:%d: expected key=value, got %r" % (ipath, lineno, line))
            key, text = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise BadSpec("%s:%d: unknown key %r" % (ipath, lineno, key))
            try:
                values[key] = _parse_value(key, text)
            except ValueError as err:
                raise BadSpec("%s:%d: bad value for %s: %s" % (ipath, lineno, key, err)) from err
    for key, value in (overrides or {}).items():
        if key not in known:
            raise BadSpec("unknown override %r" % key)
        values[key] = value
    logging.info("Config keys set: %r", sorted(values))
    return ExperimentConfig(**values)


def joint_config(cfg: ExperimentConfig, counter: Optional[PDECounter] = None) -> JointConfig:
    clamp = dict(vmin=constants.VMIN, vmax=constants.VMAX) if cfg.clamp else {}
    return JointConfig(
        k_probes=cfg.k_probes,
        probe_dist=Distribution(cfg.probe_dist),
        rank_cap=cfg.rank_cap or None,
        lam=cfg.lam,
        eps_rel=cfg.eps_rel,
        domain=DOMAINS[cfg.domain],
        outer_iters=cfg.outer_iters,
        lbfgs_iters=cfg.lbfgs_iters,
        lbfgs_mem=cfg.lbfgs_mem,
        lasso_iters=cfg.lasso_iters,
        root_iters=cfg.root_iters,
        root_tol=cfg.root_tol,
        bands=tuple(tuple(2 * math.pi * f for f in band) for band in cfg.bands),
        continuation=cfg.continuation,
        seed=cfg.seed,
        workers=cfg.workers,
        counter=counter,
        **clamp,
    )


def _layers(count: int, nz: int) -> np.ndarray:
    if count < 1:
        raise BadSpec("need at least one layer, got %d" % count)
    speeds = np.linspace(constants.VMIN, constants.VMAX, count) if count > 1 else np.array([constants.VMIN])
    layer_of_row = np.minimum(np.arange(nz) * count // nz, count - 1)
    return speeds[layer_of_row]


def lens_region(nz: int, nx: int) -> np.ndarray:
    """
    Boolean (nz, nx) ellipse centred mid-grid with semi-axes nz/6 and nx/8.
    """
    iz, ix = np.meshgrid(np.arange(nz), np.arange(nx), indexing="ij")
    return ((iz - (nz - 1) / 2) / (nz / 6)) ** 2 + ((ix - (nx - 1) / 2) / (nx / 8)) ** 2 <= 1


def make_truth(spec: str, nz: int = constants.GRID_NZ, nx: int = constants.GRID_NX,
               h: float = constants.GRID_H) -> ModelGrid:
    """
    Returns the squared-slowness truth for `spec`:
    "layered:N" (N equal-thickness layers from VMIN to VMAX), "lens:N:contrast"
    (the layered model plus `contrast` m/s inside lens_region) or "file:path"
    (a JFM1 velocity image, whose own shape wins over nz and nx). Every velocity must lie in [VMIN, VMAX].

    - spec: Model description.
    - nz, nx, h: Grid of the synthetic models.
    """
    logging.info("spec = %r", spec)
    kind, _, rest = spec.partition(":")
    try:
        if kind == "layered":
            velocity = np.repeat(_layers(int(rest), nz)[:, None], nx, axis=1)
        elif kind == "lens":
            count, contrast = rest.split(":")
            velocity = np.repeat(_layers(int(count), nz)[:, None], nx, axis=1)
            velocity[lens_region(nz, nx)] += float(contrast)
        elif kind == "file":
            if not Path(rest).is_file():
                raise BadSpec("model file %s does not exist" % rest)
            velocity = read_matrix(Path(rest)).real
        else:
            raise BadSpec("unknown model spec %r" % spec)
    except ValueError as err:
        if isinstance(err, JointFWIError):
            raise
        raise BadSpec("malformed model spec %r: %s" % (spec, err)) from err
    if not np.all((velocity >= constants.VMIN) & (velocity <= constants.VMAX)):
        logging.critical("Model spec %r leaves [%r, %r] m/s", spec, constants.VMIN, constants.VMAX)
        raise BadSpec("model spec %r spans [%r, %r] m/s, beyond [%r, %r]"
                      % (spec, float(velocity.min()), float(velocity.max()), constants.VMIN, constants.VMAX))
    return ModelGrid.from_velocity(velocity, h)


def make_initial(truth: ModelGrid) -> ModelGrid:
    """
    Returns velocity linear in depth from the mean of the truth's top row to the mean of its bottom row.

    - truth: True model.
    """
    velocity = truth.velocity
    column = np.linspace(velocity[0].mean(), velocity[-1].mean(), truth.nz)
    return ModelGrid.from_velocity(np.repeat(column[:, None], truth.nx, axis=1), truth.h)


def generate_slices(cfg: ExperimentConfig, truth: ModelGrid, survey: Survey,
                    mask: np.ndarray) -> List[SliceData]:
    """
    Simulates each configured frequency on the truth and keeps the entries under `mask`.

    Data generation is charged to its own ledger, not to the pipelines'.

    - cfg: Experiment configuration.
    - truth: True model.
    - survey: Acquisition geometry.
    - mask: Boolean ns-by-nr observation mask.
    """
    wavelet = RickerSource(cfg.f_peak)
    ledger = PDECounter()
    slices = []
    for frequency in cfg.frequencies:
        omega = 2 * math.pi * frequency
        amp = ricker_amplitude(wavelet, frequency)
        data = forward_data(truth, survey, omega, amp, assemble(truth, omega, counter=ledger))
        slices.append(SliceData(amp, apply_mask(mask, data), data))
    logging.info("Generated %d slice(s) with %d PDE solve(s).", len(slices), ledger.total)
    return slices


def run_pipeline(name: str, config: JointConfig, survey: Survey, slices: Sequence[SliceData],
                 m0: ModelGrid, truth: Optional[ModelGrid] = None) -> JointState:
    """
    Runs pipeline `name` ("observed", "full", "disjoint" or "joint").

    "full" discards the mask and inverts every entry, the baseline of the comparisons.
    """
    logging.info("name = %r", name)
    if name == "full":
        full = [replace(data, acquisition=apply_mask(np.ones(data.truth.shape, dtype=bool), data.truth))
                for data in slices]
        return disjoint_invert(config, survey, full, m0, truth)
    runners = {"observed": observed_invert, "disjoint": disjoint_invert, "joint": joint_invert}
    if name not in runners:
        raise BadSpec("unknown pipeline %r" % name)
    return runners[name](config, survey, slices, m0, truth)


def _snr_key(omega: float) -> str:
    return "snr_{:.3f}".format(omega)


def _write_state(odir: Path, name: str, state: JointState) -> None:
    write_matrix(odir.joinpath(constants.FINAL_TEMPLATE.format(pipeline=name)), state.m.image)
    write_pgm(odir.joinpath("final_{}.pgm".format(name)), state.m.velocity)
    for omega, recovered in sorted(state.recovered.items()):
        write_matrix(odir.joinpath(constants.RECOVERED_TEMPLATE.format(omega=omega, pipeline=name)), recovered.data)
    for omega, trace in sorted(state.traces.items()):
        opath = odir.joinpath(constants.CONVERGENCE_TEMPLATE.format(pipeline=name, omega=omega))
        write_rows_csv(opath, trace.rows, ("iter", "tau", "v_tau", "grad_norm"))


def _run(cfg: ExperimentConfig) -> None:
    odir = Path(cfg.odir)
    truth = make_truth(cfg.model, cfg.nz, cfg.nx, cfg.h)
    initial = make_initial(truth)
    for fname, model in ((constants.TRUTH_FNAME, truth), (constants.INITIAL_FNAME, initial)):
        write_matrix(odir.joinpath(fname), model.image)
        write_pgm(odir.joinpath(fname).with_suffix(".pgm"), model.velocity)
    survey = surface_survey(truth, cfg.n_shots, cfg.source_row)
    write_index_csv(odir.joinpath(constants.SURVEY_FNAME), {"src_idx": survey.src_idx, "rcv_idx": survey.rcv_idx})
    mask = make_mask(survey.ns, survey.nr, cfg.keep_ratio, cfg.seed, cfg.mask_pattern)
    slices = generate_slices(cfg, truth, survey, mask)
    for data in slices:
        write_matrix(odir.joinpath(constants.SLICE_TEMPLATE.format(omega=data.omega, kind="true")), data.truth.data)
        write_matrix(odir.joinpath(constants.SLICE_TEMPLATE.format(omega=data.omega, kind="observed")),
                     data.acquisition.observed.data)
    snr_keys = [_snr_key(data.omega) for data in slices]
    names = ("disjoint", "joint") if cfg.pipeline == "both" else (cfg.pipeline,)
    history, comparison = [], []
    for name in names:
        ledger = PDECounter()
        state = run_pipeline(name, joint_config(cfg, ledger), survey, slices, initial, truth)
        _write_state(odir, name, state)
        for record in state.history:
            row = {
                "iter": record.iteration, "pipeline": name, "band": record.band, "phi": record.phi,
                "model_error": record.model_error, "pde_solves": record.pde_solves, "pde_count": record.pde_total,
                "lbfgs_iters": record.lbfgs_iters, "lbfgs_evals": record.lbfgs_evals, "relaxed": record.relaxed,
                "failed": record.failed, "line_search_failed": int(record.line_search_failed),
            }
            row.update({_snr_key(omega): value for omega, value in record.snr.items()})
            history.append(row)
        final = {
            "pipeline": name, "seed": cfg.seed, "keep_ratio": cfg.keep_ratio, "k_probes": cfg.k_probes,
            "outer_iters": cfg.outer_iters, "model_error": model_error(truth, state.m), "pde_count": ledger.total,
        }
        if state.history:
            final.update({_snr_key(omega): value for omega, value in state.history[-1].snr.items()})
        comparison.append(final)
        logging.info("Pipeline %s: model error %.6f with %d PDE solve(s).", name, final["model_error"], ledger.total)
    write_rows_csv(odir.joinpath(constants.HISTORY_FNAME), history,
                   ["iter", "pipeline", "band", "phi", "model_error"] + snr_keys
                   + ["pde_solves", "pde_count", "lbfgs_iters", "lbfgs_evals", "relaxed", "failed",
                      "line_search_failed"])
    write_rows_csv(odir.joinpath(constants.COMPARISON_FNAME), comparison,
                   ["pipeline", "seed", "keep_ratio", "k_probes", "outer_iters", "model_error"] + snr_keys
                   + ["pde_count"])


def run_experiment(cfg: ExperimentConfig) -> int:
    """
    Runs the configured experiment; returns 0 on success, else the failure class's exit code.

    - cfg: Experiment configuration.
    """
    logging.info("cfg = %r", cfg)
    try:
        _run(cfg)
    except JointFWIError as err:
        logging.critical("%s: %s", type(err).__name__, err)
        return err.exit_code
    except OSError as err:
        logging.critical("%s: %s", type(err).__name__, err)
        return 4
    logging.info("All artifacts written to %r", cfg.odir)
    return 0
