#!/usr/bin/python3
"""
Defines the inversion pipelines built on completion and the model subproblem.
- JointConfig: Knobs shared by every pipeline.
- SliceData: Observed slice of one frequency with its source weight and, if known, the true slice.
- IterationRecord: Metrics of one outer iteration.
- JointState: Model, factor pairs, recovered slices, probe block and history.
- expected_pde_count: PDE solves one outer iteration should cost.
- frequency_continuation: Runs a per-band inversion over bands from low to high.
- joint_invert: Alternates completion (with the simultaneous-shot term) and model updates.
- disjoint_invert: Completes every slice first, then inverts the completed data.
- observed_invert: Classical FWI with all shots on observed entries only.
"""

from joint_fwi.acquisition import Survey, restrict
from joint_fwi.constants import (
    EPS_REL, LAMBDA, LASSO_ITERS, LBFGS_ITERS, LBFGS_MEM, N_PROBES, OUTER_ITERS, ROOT_ITERS,
    ROOT_TOL, SEED, WORKERS,
)
from joint_fwi.core import AcquisitionMask, Domain, Factorization, FrequencySlice, ModelGrid
from joint_fwi.errors import BadSpec, BudgetTooTight, EmptySchedule, ShapeMismatch
from joint_fwi.helmholtz import COUNTER, PDECounter
from joint_fwi.inversion import (
    ForwardCache, LBFGSResult, ShotMisfitSpec, forward_fields, map_frequencies, solve_m_subproblem,
)
from joint_fwi.lowrank import (
    CompletionProblem, ParetoTrace, default_epsilon, default_rank, recovered_slice, solve_completion,
)
from joint_fwi.metrics import model_error, snr_db
from joint_fwi.probes import Distribution, ProbeBlock, draw_probes

import numpy as np

from dataclasses import dataclass, field, replace
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

PROBE_STREAM = 2

Runner = Callable[[Tuple[float, ...], ModelGrid], ModelGrid]


@dataclass(frozen=True)
class JointConfig:
    """
    - k_probes: Simultaneous shots K per outer iteration.
    - probe_dist: Law of the probe entries.
    - rank_cap: Columns of L; None applies lowrank.default_rank.
    - lam: Weight of the simultaneous-shot term in joint completion.
    - eps_rel: Residual budget epsilon = (eps_rel * ||D_s||)^2 per slice.
    - domain: Domain completion runs in.
    - outer_iters: Total outer iterations, split across bands.
    - lbfgs_iters, lbfgs_mem: Model subproblem cap and memory.
    - lasso_iters, root_iters, root_tol: Completion caps.
    - bands: Angular-frequency bands, low to high; None puts every slice in one band.
    - continuation: False ignores `bands`.
    - seed: Master seed; W^k comes from the stream (seed, PROBE_STREAM, k).
    - absorbing: Boundary condition of the Helmholtz operator.
    - workers: Threads for per-frequency work.
    - vmin, vmax: Optional velocity clamp of the model subproblem.
    - counter: PDE ledger; defaults to helmholtz.COUNTER.
    """
    k_probes: int = N_PROBES
    probe_dist: Distribution = Distribution.GAUSSIAN
    rank_cap: Optional[int] = None
    lam: float = LAMBDA
    eps_rel: float = EPS_REL
    domain: Domain = Domain.MIDPOINT_OFFSET
    outer_iters: int = OUTER_ITERS
    lbfgs_iters: int = LBFGS_ITERS
    lbfgs_mem: int = LBFGS_MEM
    lasso_iters: int = LASSO_ITERS
    root_iters: int = ROOT_ITERS
    root_tol: float = ROOT_TOL
    bands: Optional[Tuple[Tuple[float, ...], ...]] = None
    continuation: bool = True
    seed: int = SEED
    absorbing: bool = True
    workers: int = WORKERS
    vmin: Optional[float] = None
    vmax: Optional[float] = None
    counter: Optional[PDECounter] = field(default=None, compare=False)

    def __post_init__(self):
        if self.outer_iters < 0:
            raise BadSpec("outer_iters must be nonnegative, got %d" % self.outer_iters)
        if self.k_probes < 1:
            raise BadSpec("need at least one probe, got %d" % self.k_probes)
        if self.lam < 0 or self.eps_rel < 0:
            raise BadSpec("lam and eps_rel must be nonnegative")

    @property
    def ledger(self) -> PDECounter:
        return COUNTER if self.counter is None else self.counter


@dataclass(frozen=True)
class SliceData:
    amp: float
    acquisition: AcquisitionMask
    truth: Optional[FrequencySlice] = None

    @property
    def omega(self) -> float:
        return self.acquisition.omega

    @property
    def complete(self) -> bool:
        return bool(self.acquisition.mask.all())


@dataclass
class IterationRecord:
    iteration: int
    band: int
    omegas: Tuple[float, ...]
    phi: float
    model_error: float
    snr: Dict[float, float]
    pde_solves: int
    pde_total: int
    lbfgs_iters: int
    lbfgs_evals: int
    relaxed: int = 0
    failed: int = 0
    line_search_failed: bool = False


@dataclass
class JointState:
    """
    Iterate of a pipeline; `k` equals the number of history records.
    """
    m: ModelGrid
    factorizations: Dict[float, Optional[Factorization]] = field(default_factory=dict)
    recovered: Dict[float, FrequencySlice] = field(default_factory=dict)
    traces: Dict[float, ParetoTrace] = field(default_factory=dict)
    W: Optional[ProbeBlock] = None
    history: List[IterationRecord] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.history)


def expected_pde_count(k: int, n_omegas: int, n_evals: int, cached: bool = True) -> int:
    """
    Returns the Helmholtz column solves of one outer iteration.

    Every misfit evaluation costs K forward and K adjoint solves per frequency. With
    `cached`, the K forward solves for FW are paid up front and reused by the first evaluation.

    - k: Simultaneous shots K (Ns for all-shots FWI).
    - n_omegas: Frequencies in the band.
    - n_evals: Misfit evaluations that solved PDEs.
    - cached: Whether FW was precomputed.
    """
    per_omega = 2 * k * n_evals
    if cached and n_evals == 0:
        per_omega = k
    return per_omega * n_omegas


def frequency_continuation(bands: Sequence[Sequence[float]], runner: Runner, m0: ModelGrid) -> ModelGrid:
    """
    Calls runner(band, m) for each band in order, warm-starting from the previous model.

    - bands: Nonempty frequency lists ordered from low to high.
    - runner: Per-band inversion.
    - m0: Starting model.
    """
    if not bands or any(len(band) == 0 for band in bands):
        raise EmptySchedule("frequency continuation needs nonempty bands")
    lows = [min(band) for band in bands]
    if lows != sorted(lows):
        raise BadSpec("bands must run from low to high frequency, got lows %r" % lows)
    m = m0
    for number, band in enumerate(bands):
        logging.info("Band %d: omegas = %r", number, tuple(band))
        m = runner(tuple(band), m)
    return m


def _check_inputs(survey: Survey, slices: Sequence[SliceData], m0: ModelGrid) -> None:
    if not slices:
        raise EmptySchedule("no frequency slices to invert")
    omegas = [data.omega for data in slices]
    if len(set(omegas)) != len(omegas):
        raise BadSpec("frequencies must be distinct, got %r" % omegas)
    for data in slices:
        if data.acquisition.observed.shape != (survey.ns, survey.nr):
            raise ShapeMismatch("slice at omega=%r is %r, survey is %r"
                                % (data.omega, data.acquisition.observed.shape, (survey.ns, survey.nr)))
    if max(survey.src_idx.max(), survey.rcv_idx.max()) >= m0.n:
        raise ShapeMismatch("survey indices exceed the %d-node model" % m0.n)


def _schedule(config: JointConfig, slices: Sequence[SliceData]) -> List[Tuple[Tuple[float, ...], int]]:
    omegas = [data.omega for data in slices]
    if config.continuation and config.bands:
        bands = []
        for band in config.bands:
            chosen = []
            for omega in band:
                hits = [candidate for candidate in omegas if math.isclose(candidate, omega, rel_tol=1e-9)]
                if not hits:
                    raise BadSpec("band frequency omega=%r has no data slice" % omega)
                chosen.append(hits[0])
            bands.append(tuple(chosen))
    else:
        bands = [tuple(omegas)]
    base, extra = divmod(config.outer_iters, len(bands))
    return [(band, base + (1 if number < extra else 0)) for number, band in enumerate(bands)]


def _rank(config: JointConfig, P_shape: Tuple[int, int], ns: int, nr: int) -> int:
    rank = config.rank_cap if config.rank_cap is not None else default_rank(ns, nr)
    return min(rank, min(P_shape))


def _complete(P: CompletionProblem, F0: Optional[Factorization],
              config: JointConfig) -> Tuple[Factorization, ParetoTrace, str]:
    """
    solve_completion with a single 2x relaxation of epsilon; the best factor pair is kept on failure.
    """
    options = dict(root_tol=config.root_tol, max_root_iter=config.root_iters, max_iter=config.lasso_iters)
    try:
        F, trace = solve_completion(P, F0, **options)
        return F, trace, "ok"
    except BudgetTooTight as err:
        logging.warning("Relaxing epsilon to %.6e at omega=%r", 2 * P.epsilon, P.acquisition.omega)
        best = err.factorization
    try:
        F, trace = solve_completion(replace(P, epsilon=2 * P.epsilon), best, **options)
        return F, trace, "relaxed"
    except BudgetTooTight as err:
        logging.warning("Completion at omega=%r kept its best iterate", P.acquisition.omega)
        return err.factorization, err.trace, "failed"


def _completion_problem(config: JointConfig, data: SliceData, sim_data: Optional[np.ndarray] = None,
                        probes: Optional[ProbeBlock] = None) -> CompletionProblem:
    acquisition = data.acquisition
    ns, nr = acquisition.observed.shape
    shape = (ns + nr - 1,) * 2 if config.domain is Domain.MIDPOINT_OFFSET else (ns, nr)
    lam = config.lam if sim_data is not None else 0.0
    if lam == 0:
        sim_data, probes = None, None
    return CompletionProblem(acquisition, default_epsilon(acquisition, config.eps_rel),
                             _rank(config, shape, ns, nr), lam, sim_data, probes, config.domain)


def _shot_spec(config: JointConfig, survey: Survey, m: ModelGrid, chosen: Sequence[SliceData],
               probes, targets=None, masks=None) -> ShotMisfitSpec:
    W = probes.W if isinstance(probes, ProbeBlock) else np.asarray(probes)
    if targets is None:
        targets = [np.zeros((survey.nr, W.shape[1]), dtype=np.complex128)] * len(chosen)
    return ShotMisfitSpec(m, survey, tuple(data.omega for data in chosen), tuple(data.amp for data in chosen),
                          probes, tuple(targets), masks, config.absorbing, config.workers, config.counter)


def _record(config: JointConfig, state: JointState, slices: Sequence[SliceData], band_number: int,
            band: Tuple[float, ...], result: LBFGSResult, before: int, statuses: Sequence[str],
            truth: Optional[ModelGrid]) -> IterationRecord:
    ledger = config.ledger
    snr = {}
    for data in slices:
        if data.truth is not None and data.omega in state.recovered:
            snr[data.omega] = snr_db(data.truth.data, state.recovered[data.omega].data)
    record = IterationRecord(
        iteration=state.k + 1,
        band=band_number,
        omegas=band,
        phi=result.f,
        model_error=model_error(truth, state.m) if truth is not None else math.nan,
        snr=snr,
        pde_solves=ledger.total - before,
        pde_total=ledger.total,
        lbfgs_iters=result.n_iter,
        lbfgs_evals=result.pde_evals,
        relaxed=sum(status == "relaxed" for status in statuses),
        failed=sum(status == "failed" for status in statuses),
        line_search_failed=result.line_search_failed,
    )
    state.history.append(record)
    logging.info("Outer iteration %d (band %d): phi = %.6e, model error = %.6f, PDE solves = %d",
                 record.iteration, band_number, record.phi, record.model_error, record.pde_solves)
    return record


Step = Callable[[int, Tuple[SliceData, ...]], Tuple[LBFGSResult, List[str]]]


def _outer_loop(config: JointConfig, slices: Sequence[SliceData], state: JointState, step: Step,
                truth: Optional[ModelGrid]) -> JointState:
    schedule = _schedule(config, slices)
    by_omega = {data.omega: data for data in slices}
    plan = iter(enumerate(schedule))

    def run_band(band, m):
        number, (_, count) = next(plan)
        chosen = tuple(by_omega[omega] for omega in band)
        for _ in range(count):
            before = config.ledger.total
            result, statuses = step(state.k + 1, chosen)
            _record(config, state, slices, number, band, result, before, statuses, truth)
        return state.m

    frequency_continuation([band for band, _ in schedule], run_band, state.m)
    return state


def joint_invert(config: JointConfig, survey: Survey, slices: Sequence[SliceData], m0: ModelGrid,
                 truth: Optional[ModelGrid] = None) -> JointState:
    """
    Alternates completion and model updates for config.outer_iters outer iterations.

    Each iteration draws W^k, computes FW = P H(m^k)^-1 Q W^k once per frequency, completes
    every slice of the band against M*D and FW, then runs the model subproblem against
    T*(L R)^T W^k, reusing the FW wavefields for its first evaluation.

    - config: Pipeline knobs.
    - survey: Acquisition geometry.
    - slices: Observed data per frequency.
    - m0: Starting model.
    - truth: True model, for the model-error history.
    """
    logging.info("outer_iters = %r", config.outer_iters)
    _check_inputs(survey, slices, m0)
    state = JointState(m0)
    if config.outer_iters == 0:
        return state

    def step(k, chosen):
        W = draw_probes(survey.ns, config.k_probes, config.probe_dist, config.seed, keys=(PROBE_STREAM, k))
        spec = _shot_spec(config, survey, state.m, chosen, W)
        cache: ForwardCache = forward_fields(spec, state.m.m)

        def complete(index):
            data = chosen[index]
            if data.complete:
                return None, data.acquisition.observed, None, "skipped"
            P = _completion_problem(config, data, restrict(survey, cache.fields[index]), W)
            F, trace, status = _complete(P, state.factorizations.get(data.omega), config)
            return F, recovered_slice(P, F), trace, status

        outcomes = map_frequencies(complete, range(len(chosen)), config.workers)
        targets, statuses = [], []
        for data, (F, recovered, trace, status) in zip(chosen, outcomes):
            state.factorizations[data.omega] = F
            state.recovered[data.omega] = recovered
            if trace is not None:
                state.traces[data.omega] = trace
            targets.append(recovered.data.T @ W.W)
            statuses.append(status)
        spec = replace(spec, targets=tuple(targets))
        state.m, result = solve_m_subproblem(spec, state.m, config.lbfgs_iters, config.lbfgs_mem,
                                             cache, config.vmin, config.vmax, label=k)
        state.W = W
        return result, statuses

    return _outer_loop(config, slices, state, step, truth)


def disjoint_invert(config: JointConfig, survey: Survey, slices: Sequence[SliceData], m0: ModelGrid,
                    truth: Optional[ModelGrid] = None) -> JointState:
    """
    Stage 1 completes every slice with lambda = 0 (complete slices pass through);
    stage 2 runs the model subproblem against D~^T W^k with the same probe schedule as joint_invert.

    - config: Pipeline knobs.
    - survey: Acquisition geometry.
    - slices: Observed data per frequency.
    - m0: Starting model.
    - truth: True model, for the model-error history.
    """
    logging.info("outer_iters = %r", config.outer_iters)
    _check_inputs(survey, slices, m0)
    state = JointState(m0)

    def complete(data):
        if data.complete:
            return None, data.acquisition.observed, None, "skipped"
        P = _completion_problem(config, data)
        F, trace, status = _complete(P, None, config)
        return F, recovered_slice(P, F), trace, status

    statuses = {}
    for data, (F, recovered, trace, status) in zip(slices, map_frequencies(complete, slices, config.workers)):
        state.factorizations[data.omega] = F
        state.recovered[data.omega] = recovered
        if trace is not None:
            state.traces[data.omega] = trace
        statuses[data.omega] = status
    if config.outer_iters == 0:
        return state

    def step(k, chosen):
        W = draw_probes(survey.ns, config.k_probes, config.probe_dist, config.seed, keys=(PROBE_STREAM, k))
        targets = [state.recovered[data.omega].data.T @ W.W for data in chosen]
        spec = _shot_spec(config, survey, state.m, chosen, W, targets)
        state.m, result = solve_m_subproblem(spec, state.m, config.lbfgs_iters, config.lbfgs_mem,
                                             None, config.vmin, config.vmax, label=k)
        state.W = W
        # stage-1 outcome is reported on the first iteration only
        reported = [statuses.pop(data.omega, "ok") for data in chosen]
        return result, reported

    return _outer_loop(config, slices, state, step, truth)


def observed_invert(config: JointConfig, survey: Survey, slices: Sequence[SliceData], m0: ModelGrid,
                    truth: Optional[ModelGrid] = None) -> JointState:
    """
    Minimizes sum 0.5||M^T * (P H^-1 Q - D_s^T)||^2 with every physical shot; no interpolation.

    - config: Pipeline knobs; probe settings are unused.
    - survey: Acquisition geometry.
    - slices: Observed data per frequency.
    - m0: Starting model.
    - truth: True model, for the model-error history.
    """
    logging.info("outer_iters = %r", config.outer_iters)
    _check_inputs(survey, slices, m0)
    state = JointState(m0)
    if config.outer_iters == 0:
        return state
    identity = np.eye(survey.ns)

    def step(k, chosen):
        targets = [data.acquisition.observed.data.T for data in chosen]
        masks = tuple(data.acquisition.mask.T.astype(np.float64) for data in chosen)
        spec = _shot_spec(config, survey, state.m, chosen, identity, targets, masks)
        state.m, result = solve_m_subproblem(spec, state.m, config.lbfgs_iters, config.lbfgs_mem,
                                             None, config.vmin, config.vmax, label=k)
        return result, []

    return _outer_loop(config, slices, state, step, truth)
