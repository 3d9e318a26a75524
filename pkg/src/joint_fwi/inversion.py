#!/usr/bin/python3
"""
Defines the model subproblem: simultaneous-shot misfit, adjoint-state gradient and L-BFGS.
- ShotMisfitSpec: Frequencies, source weights and targets of the misfit.
- ForwardCache: Wavefields already computed at a given model, reused on first evaluation.
- LBFGSResult: Outcome of lbfgs_minimize.
- map_frequencies: Runs a per-frequency function serially or on a thread pool, in order.
- forward_fields: H(m)^-1 (amp Q W) for each frequency.
- misfit_and_gradient: phi = sum 0.5||P H^-1 amp Q W - target||^2 and its gradient in m.
- lbfgs_minimize: Two-loop L-BFGS with a strong Wolfe line search.
- solve_m_subproblem: Capped L-BFGS run on misfit_and_gradient.
"""

from joint_fwi.acquisition import Survey, source_matrix, restrict, restrict_adjoint
from joint_fwi.constants import LBFGS_GTOL, LBFGS_ITERS, LBFGS_MEM, WOLFE_C1, WOLFE_C2
from joint_fwi.core import ModelGrid
from joint_fwi.errors import LineSearchFailure, ShapeMismatch, NonPositiveSlowness
from joint_fwi.probes import ProbeBlock
from joint_fwi import helmholtz

import numpy as np

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

Oracle = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass(frozen=True)
class ShotMisfitSpec:
    """
    - grid: Geometry (nz, nx, h); its model values are not used.
    - survey: Sources and receivers.
    - omegas: Angular frequencies.
    - amps: Source weight per frequency.
    - probes: Ns-by-K simultaneous-shot weights (a ProbeBlock, or the identity for all shots).
    - targets: Nr-by-K target per frequency, e.g. D^T W or T*(LR)^T W.
    - masks: Optional Nr-by-K residual masks per frequency (observed-entries misfit).
    - absorbing: Boundary condition passed to helmholtz.assemble.
    - workers: Threads for per-frequency work.
    - counter: PDE ledger; defaults to helmholtz.COUNTER.
    """
    grid: ModelGrid
    survey: Survey
    omegas: Tuple[float, ...]
    amps: Tuple[float, ...]
    probes: Union[ProbeBlock, np.ndarray]
    targets: Tuple[np.ndarray, ...]
    masks: Optional[Tuple[np.ndarray, ...]] = None
    absorbing: bool = True
    workers: int = 1
    counter: Optional[helmholtz.PDECounter] = None

    def __post_init__(self):
        object.__setattr__(self, "omegas", tuple(float(omega) for omega in self.omegas))
        object.__setattr__(self, "amps", tuple(float(amp) for amp in self.amps))
        targets = tuple(np.asarray(target, dtype=np.complex128) for target in self.targets)
        object.__setattr__(self, "targets", targets)
        if not len(self.omegas) == len(self.amps) == len(targets):
            raise ShapeMismatch("need one amp and one target per omega")
        if self.W.shape[0] != self.survey.ns:
            raise ShapeMismatch("weights have %d rows, survey has %d sources" % (self.W.shape[0], self.survey.ns))
        for omega, target in zip(self.omegas, targets):
            if target.shape != (self.survey.nr, self.k):
                raise ShapeMismatch("target at omega=%r must be %r, got %r"
                                    % (omega, (self.survey.nr, self.k), target.shape))
        if self.masks is not None:
            masks = tuple(np.asarray(mask, dtype=np.float64) for mask in self.masks)
            if len(masks) != len(targets) or any(m.shape != t.shape for m, t in zip(masks, targets)):
                raise ShapeMismatch("residual masks must match the targets")
            object.__setattr__(self, "masks", masks)

    @property
    def W(self) -> np.ndarray:
        return self.probes.W if isinstance(self.probes, ProbeBlock) else np.asarray(self.probes)

    @property
    def k(self) -> int:
        return self.W.shape[1]


@dataclass
class ForwardCache:
    """
    Fields computed at model `m`, one n-by-K block per frequency of the spec.
    """
    m: np.ndarray
    fields: List[np.ndarray]


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    grad_norm: float
    n_iter: int = 0
    n_evals: int = 0
    pde_evals: int = 0
    converged: bool = False
    line_search_failed: bool = False
    history: List[float] = field(default_factory=list)


def map_frequencies(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """
    Returns [fn(item) for item in items], using `workers` threads when > 1.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def forward_fields(spec: ShotMisfitSpec, m: np.ndarray) -> ForwardCache:
    """
    Solves for the simultaneous-shot wavefields of every frequency at model m.

    - spec: Misfit description.
    - m: Squared slowness vector.
    """
    grid = spec.grid.with_model(m)
    QW = source_matrix(grid, spec.survey, spec.W)

    def one(index):
        H = helmholtz.assemble(grid, spec.omegas[index], spec.absorbing, spec.counter)
        return helmholtz.solve(H, spec.amps[index] * QW)

    fields = map_frequencies(one, range(len(spec.omegas)), spec.workers)
    return ForwardCache(np.array(grid.m), fields)


def misfit_and_gradient(spec: ShotMisfitSpec, m: np.ndarray,
                        forward_cache: Optional[ForwardCache] = None) -> Tuple[float, np.ndarray]:
    """
    Returns (phi, g): phi = sum_omega 0.5||P u - target||^2 and g = dphi/dm by the adjoint-state method.

    g = -Re(dH/dm * sum_k conj(v_k) u_k) with H^H v_k = P^T r_k, so -g is a descent direction.

    - spec: Misfit description.
    - m: Squared slowness vector.
    - forward_cache: Wavefields at exactly this m; their solves are not repeated.
    """
    grid = spec.grid.with_model(m)
    reuse = forward_cache is not None and np.array_equal(forward_cache.m, grid.m)
    QW = None if reuse else source_matrix(grid, spec.survey, spec.W)

    def one(index):
        H = helmholtz.assemble(grid, spec.omegas[index], spec.absorbing, spec.counter)
        if reuse:
            fields = forward_cache.fields[index]
        else:
            fields = helmholtz.solve(H, spec.amps[index] * QW)
        residual = restrict(spec.survey, fields) - spec.targets[index]
        if spec.masks is not None:
            residual = spec.masks[index] * residual
        phi = 0.5 * float(np.vdot(residual, residual).real)
        adjoint = helmholtz.solve_adjoint(H, restrict_adjoint(spec.survey, grid.n, residual))
        correlation = np.sum(np.conj(adjoint) * fields, axis=1)
        return phi, -np.real(helmholtz.model_derivative(H) * correlation)

    contributions = map_frequencies(one, range(len(spec.omegas)), spec.workers)
    phi = 0.0
    gradient = np.zeros(grid.n)
    for value, part in contributions:
        phi += value
        gradient += part
    return phi, gradient


def _two_loop(g: np.ndarray, S: deque, Y: deque) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / np.dot(y, s)
        alpha = rho * np.dot(s, q)
        q -= alpha * y
        alphas.append((rho, alpha))
    if S:
        q *= np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
    for (s, y), (rho, alpha) in zip(zip(S, Y), reversed(alphas)):
        beta = rho * np.dot(y, q)
        q += (alpha - beta) * s
    return q


def _interpolate(lo, f_lo, dphi_lo, hi, f_hi):
    """
    Minimizer of the quadratic through (lo, f_lo, dphi_lo) and (hi, f_hi), kept inside the bracket.
    """
    width = hi - lo
    trial = lo + 0.5 * width
    if math.isfinite(f_hi):
        curvature = f_hi - f_lo - dphi_lo * width
        if curvature > 0:
            trial = lo - dphi_lo * width**2 / (2.0 * curvature)
    low, high = sorted((lo + 0.1 * width, hi - 0.1 * width))
    return min(max(trial, low), high)


def _strong_wolfe(fg: Oracle, x: np.ndarray, f0: float, g0: np.ndarray, d: np.ndarray, alpha: float,
                  c1: float, c2: float, max_evals: int = 25):
    """
    Returns (alpha, f, g, n_evals) meeting the strong Wolfe conditions along d.
    Falls back to the best sufficient-decrease point; raises LineSearchFailure without one.
    """
    dphi0 = float(np.dot(g0, d))
    evals = 0
    lo, f_lo, dphi_lo, g_lo = 0.0, f0, dphi0, g0
    hi, f_hi = None, math.inf
    while evals < max_evals:
        if hi is not None:
            alpha = _interpolate(lo, f_lo, dphi_lo, hi, f_hi)
        f, g = fg(x + alpha * d)
        evals += 1
        if not math.isfinite(f) or f > f0 + c1 * alpha * dphi0 or (f >= f_lo and alpha != lo):
            hi, f_hi = alpha, f
            continue
        dphi = float(np.dot(g, d))
        if abs(dphi) <= -c2 * dphi0:
            return alpha, f, g, evals
        if (hi is None and dphi >= 0) or (hi is not None and dphi * (hi - lo) >= 0):
            hi, f_hi = lo, f_lo
        lo, f_lo, dphi_lo, g_lo = alpha, f, dphi, g
        if hi is None:
            alpha *= 2.0
    if lo > 0:
        logging.debug("Wolfe curvature not met; taking sufficient-decrease step %.3e", lo)
        return lo, f_lo, g_lo, evals
    raise LineSearchFailure("no step with sufficient decrease after %d evaluations" % evals, evals)


def lbfgs_minimize(f_and_g: Oracle, m0: np.ndarray, max_iter: int, mem: int = LBFGS_MEM,
                   gtol: float = LBFGS_GTOL, c1: float = WOLFE_C1, c2: float = WOLFE_C2,
                   label: Optional[int] = None) -> LBFGSResult:
    """
    Minimizes f by L-BFGS; stops after max_iter iterations or once ||g|| <= gtol * max(1, ||g0||).

    A failed line search keeps the best iterate and sets `line_search_failed`.

    - f_and_g: Oracle returning (f, gradient).
    - m0: Starting point.
    - max_iter: Iteration cap.
    - mem: Number of stored (s, y) pairs.
    - gtol: Relative gradient tolerance.
    - c1, c2: Wolfe constants.
    - label: Outer iteration shown in log lines.
    """
    x = np.array(m0, dtype=np.float64)
    f, g = f_and_g(x)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonPositiveSlowness("oracle is not finite at the starting point")
    result = LBFGSResult(x, f, float(np.linalg.norm(g)), n_evals=1, history=[f])
    stop = gtol * max(1.0, result.grad_norm)
    if result.grad_norm <= stop:
        result.converged = True
        return result
    S, Y = deque(maxlen=mem), deque(maxlen=mem)
    for iterno in range(1, max_iter + 1):
        d = -_two_loop(g, S, Y)
        if not np.dot(g, d) < 0:
            S.clear()
            Y.clear()
            d = -g
        alpha = 1.0 if S else 1.0 / float(np.linalg.norm(d))
        try:
            alpha, f_new, g_new, evals = _strong_wolfe(f_and_g, x, f, g, d, alpha, c1, c2)
        except LineSearchFailure as err:
            logging.warning("L-BFGS line search failed at iteration %d: %s", iterno, err)
            result.line_search_failed = True
            result.n_evals += err.evaluations
            break
        result.n_evals += evals
        s = alpha * d
        y = g_new - g
        if np.dot(s, y) > 1e-12 * np.dot(y, y):
            S.append(s)
            Y.append(y)
        x, f, g = x + s, f_new, g_new
        result.x, result.f, result.grad_norm, result.n_iter = x, f, float(np.linalg.norm(g)), iterno
        result.history.append(f)
        logging.info("outer = %r, L-BFGS iter %d: phi = %.6e, |g| = %.3e, step = %.3e, evals = %d",
                     label, iterno, f, result.grad_norm, alpha, evals)
        if result.grad_norm <= stop:
            result.converged = True
            break
    return result


def _power_of_two(value: float) -> float:
    return 2.0 ** round(math.log2(value))


def solve_m_subproblem(spec: ShotMisfitSpec, m0: ModelGrid, iter_cap: int = LBFGS_ITERS,
                       mem: int = LBFGS_MEM, forward_cache: Optional[ForwardCache] = None,
                       vmin: Optional[float] = None, vmax: Optional[float] = None,
                       label: Optional[int] = None) -> Tuple[ModelGrid, LBFGSResult]:
    """
    Runs at most `iter_cap` L-BFGS iterations on misfit_and_gradient from m0.

    The optimizer sees m divided by a power of two near max(m0), so the first evaluation
    lands exactly on m0 (for forward_cache reuse), and phi divided by the target energy.
    The returned result reports phi unscaled; `pde_evals` counts evaluations that solved PDEs.

    - spec: Misfit description.
    - m0: Starting model.
    - iter_cap: Partial-solve cap; 0 returns m0.
    - mem: L-BFGS memory.
    - forward_cache: Fields at m0 from the completion step.
    - vmin, vmax: Optional velocity clamp (m/s).
    - label: Outer iteration for log lines.
    """
    logging.info("iter_cap = %r", iter_cap)
    if iter_cap <= 0:
        return m0, LBFGSResult(np.array(m0.m), math.nan, math.nan)
    scale = _power_of_two(float(np.max(m0.m)))
    energy = 0.5 * sum(float(np.vdot(target, target).real) for target in spec.targets) or 1.0
    m_lo = 1.0 / vmax**2 if vmax else None
    m_hi = 1.0 / vmin**2 if vmin else None
    solved = [0]

    def clamp(m):
        return np.clip(m, m_lo, m_hi) if (m_lo is not None or m_hi is not None) else m

    def oracle(x):
        m = clamp(x * scale)
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            return math.inf, np.zeros_like(m)
        solved[0] += 1
        phi, g = misfit_and_gradient(spec, m, forward_cache)
        return phi / energy, g * (scale / energy)

    result = lbfgs_minimize(oracle, m0.m / scale, iter_cap, mem, label=label)
    result.f *= energy
    result.history = [value * energy for value in result.history]
    result.pde_evals = solved[0]
    m = clamp(result.x * scale)
    logging.info("outer = %r: phi %.6e -> %.6e after %d iteration(s), %d evaluation(s)",
                 label, result.history[0], result.f, result.n_iter, result.n_evals)
    return m0.with_model(m), result
