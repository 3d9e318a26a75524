#!/usr/bin/python3
"""
Defines residual-constrained factorized low-rank completion.
- CompletionProblem: Observed data, budget epsilon, rank cap and the optional shot term.
- ParetoTrace: (tau, v_tau) pairs visited by the root finder, plus SPG log rows.
- default_rank: Rank-cap rule used when none is configured.
- default_epsilon: Residual budget rule (EPS_REL * ||D_s||_F)^2.
- residual: ||M * T*(LR) - D_s||^2 + (lambda/2) ||FW - T*(LR)^T W||^2.
- residual_gradient: Gradient of `residual` in (L, R).
- project_ball: Scales (L, R) onto 0.5||L||^2 + 0.5||R||^2 <= tau.
- solve_lasso: v(tau) by spectral projected gradient with a nonmonotone line search.
- solve_completion: Secant root finding on v(tau) = epsilon.
- init_factors: L = U sqrt(S), R = sqrt(S) V^H from a truncated SVD.
- recovered_slice: Maps a factor pair back to a source-receiver data slice.
"""

from joint_fwi.core import AcquisitionMask, Factorization, FrequencySlice, Domain
from joint_fwi.constants import (
    EPS_REL, LASSO_ITERS, RANK_FRACTION, RANK_MIN, ROOT_GROWTH, ROOT_ITERS, ROOT_TOL,
    SPG_GAMMA, SPG_MAX_BACKTRACK, SPG_MEMORY, SPG_STEP_MAX, SPG_STEP_MIN,
)
from joint_fwi.errors import BadShape, BudgetTooTight, InconsistentProblem, ShapeMismatch
from joint_fwi.midoff import midoff_map
from joint_fwi.probes import ProbeBlock

import numpy as np
import scipy.linalg

from collections import deque
from dataclasses import dataclass, field
import logging
import math
from typing import List, Optional, Tuple, Union


@dataclass(frozen=True)
class CompletionProblem:
    """
    One frequency slice to complete.

    - acquisition: Mask M and observed data D_s (source-receiver).
    - epsilon: Residual budget.
    - rank_cap: Number of columns k of L.
    - lam: Weight of the simultaneous-shot term; 0 means pure interpolation.
    - sim_data: FW, the Nr-by-K simultaneous data modeled at the current model.
    - probes: W used to form sim_data.
    - domain: Domain the factor product L R lives in.
    """
    acquisition: AcquisitionMask
    epsilon: float
    rank_cap: int
    lam: float = 0.0
    sim_data: Optional[np.ndarray] = None
    probes: Optional[ProbeBlock] = None
    domain: Domain = Domain.MIDPOINT_OFFSET
    _mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise InconsistentProblem("epsilon must be nonnegative, got %r" % self.epsilon)
        if self.lam < 0:
            raise InconsistentProblem("lambda must be nonnegative, got %r" % self.lam)
        if (self.lam > 0) != (self.sim_data is not None):
            raise InconsistentProblem("lambda > 0 exactly when simultaneous data are given")
        if self.sim_data is not None:
            if self.probes is None:
                raise InconsistentProblem("simultaneous data need their probe block")
            sim_data = np.asarray(self.sim_data, dtype=np.complex128)
            if sim_data.shape != (self.nr, self.probes.k) or self.probes.ns != self.ns:
                raise ShapeMismatch("FW must be %r, got %r" % ((self.nr, self.probes.k), sim_data.shape))
            object.__setattr__(self, "sim_data", sim_data)
        rows, cols = self.shape
        if not 1 <= self.rank_cap <= min(rows, cols):
            raise BadShape("rank cap %d outside [1, %d]" % (self.rank_cap, min(rows, cols)))
        object.__setattr__(self, "_mask", self.acquisition.mask.astype(np.float64))

    @property
    def ns(self) -> int:
        return self.acquisition.observed.ns

    @property
    def nr(self) -> int:
        return self.acquisition.observed.nr

    @property
    def observed(self) -> np.ndarray:
        return self.acquisition.observed.data

    @property
    def shape(self) -> Tuple[int, int]:
        if self.domain is Domain.MIDPOINT_OFFSET:
            size = self.ns + self.nr - 1
            return size, size
        return self.ns, self.nr

    def to_data(self, X: np.ndarray) -> np.ndarray:
        """
        T*(X) in the midpoint-offset domain, X itself otherwise.
        """
        if self.domain is Domain.MIDPOINT_OFFSET:
            return midoff_map(self.ns, self.nr).adjoint(X)
        return X

    def from_data(self, Z: np.ndarray) -> np.ndarray:
        if self.domain is Domain.MIDPOINT_OFFSET:
            return midoff_map(self.ns, self.nr).forward(Z)
        return np.asarray(Z, dtype=np.complex128)


@dataclass
class ParetoTrace:
    """
    Points (tau, v_tau) in the order visited, and per-SPG-iteration log rows.
    """
    points: List[Tuple[float, float]] = field(default_factory=list)
    rows: List[dict] = field(default_factory=list)

    def add(self, tau: float, v_tau: float) -> None:
        logging.info("Pareto point: tau = %.6e, v = %.6e", tau, v_tau)
        self.points.append((float(tau), float(v_tau)))

    def lower(self, tau: float, v_tau: float) -> None:
        """
        Caps v at every recorded point with radius >= tau.
        """
        self.points = [(t, min(v, float(v_tau)) if t >= tau else v) for t, v in self.points]

    def is_monotone(self, rtol: float = 1e-9) -> bool:
        """
        True if v_tau does not increase with tau.
        """
        ordered = sorted(self.points)
        return all(b[1] <= a[1] * (1 + rtol) + rtol for a, b in zip(ordered, ordered[1:]))


def default_rank(ns: int, nr: int) -> int:
    return max(RANK_MIN, math.ceil(RANK_FRACTION * min(ns, nr)))


def default_epsilon(acquisition: AcquisitionMask, eps_rel: float = EPS_REL) -> float:
    norm = float(np.linalg.norm(acquisition.observed.data))
    return (eps_rel * norm) ** 2


def _misfits(P: CompletionProblem, X: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
    D = P.to_data(X)
    masked = P._mask * D - P.observed
    shots = None
    if P.lam > 0:
        shots = P.sim_data - D.T @ P.probes.W
    return masked, shots, D


def _value(masked: np.ndarray, shots: Optional[np.ndarray], lam: float) -> float:
    value = float(np.vdot(masked, masked).real)
    if shots is not None:
        value += 0.5 * lam * float(np.vdot(shots, shots).real)
    return value


def _objective(P: CompletionProblem, L: np.ndarray, R: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    masked, shots, _ = _misfits(P, L @ R)
    value = _value(masked, shots, P.lam)
    Z = 2.0 * P._mask * masked
    if shots is not None:
        Z = Z - P.lam * (P.probes.W @ shots.T)
    G = P.from_data(Z)
    return value, G @ R.conj().T, L.conj().T @ G


def residual(P: CompletionProblem, F: Factorization) -> float:
    """
    Returns the constraint value at L R.

    - P: Completion problem.
    - F: Factor pair whose product has P.shape.
    """
    if F.shape != P.shape:
        raise ShapeMismatch("factor product %r does not match problem %r" % (F.shape, P.shape))
    masked, shots, _ = _misfits(P, F.product())
    return _value(masked, shots, P.lam)


def residual_gradient(P: CompletionProblem, F: Factorization) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns (gL, gR) = (T(Z) R^H, L^H T(Z)) with Z = 2 M*(masked misfit) - lambda W (shot misfit)^T.

    For a perturbation (dL, dR) the residual changes by Re<gL, dL> + Re<gR, dR>.

    - P: Completion problem.
    - F: Factor pair.
    """
    if F.shape != P.shape:
        raise ShapeMismatch("factor product %r does not match problem %r" % (F.shape, P.shape))
    _, gL, gR = _objective(P, F.L, F.R)
    return gL, gR


def _ball(L: np.ndarray, R: np.ndarray) -> float:
    return 0.5 * float(np.vdot(L, L).real) + 0.5 * float(np.vdot(R, R).real)


def _project(L: np.ndarray, R: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    radius = _ball(L, R)
    if radius <= tau:
        return L, R
    scale = math.sqrt(tau / radius)
    return scale * L, scale * R


def project_ball(F: Factorization, tau: float) -> Factorization:
    """
    Returns (L, R) unchanged if inside the ball, otherwise both scaled by sqrt(tau / ball).

    - F: Factor pair.
    - tau: Radius, tau >= 0.
    """
    if tau < 0:
        raise BadShape("tau must be nonnegative, got %r" % tau)
    L, R = _project(F.L, F.R, tau)
    return F.replace(L, R, tau)


def solve_lasso(P: CompletionProblem, tau: float, F0: Factorization, max_iter: int = LASSO_ITERS,
                trace: Optional[ParetoTrace] = None, opt_tol: float = 1e-12) -> Tuple[Factorization, float]:
    """
    Minimizes the residual over the ball of radius tau by spectral projected gradient.

    Barzilai-Borwein steps, nonmonotone Armijo search over the last SPG_MEMORY values;
    the best iterate seen is returned with its residual v(tau).

    - P: Completion problem.
    - tau: Ball radius.
    - F0: Warm start, projected onto the ball first.
    - max_iter: Iteration cap, at least 1.
    - trace: Receives one log row per iteration when given.
    - opt_tol: Stop once the projected step is this small relative to the iterate.
    """
    if max_iter < 1:
        raise BadShape("max_iter must be at least 1, got %d" % max_iter)
    L, R = _project(np.array(F0.L), np.array(F0.R), tau)
    f, gL, gR = _objective(P, L, R)
    recent = deque([f] * SPG_MEMORY, maxlen=SPG_MEMORY)
    gnorm = math.sqrt(float(np.vdot(gL, gL).real + np.vdot(gR, gR).real))
    step = 1.0 / gnorm if gnorm > 0 else 1.0
    best_f, best_L, best_R = f, L, R
    for iterno in range(1, max_iter + 1):
        pL, pR = _project(L - step * gL, R - step * gR, tau)
        dL, dR = pL - L, pR - R
        gtd = float(np.vdot(gL, dL).real + np.vdot(gR, dR).real)
        dnorm = math.sqrt(float(np.vdot(dL, dL).real + np.vdot(dR, dR).real))
        xnorm = math.sqrt(2.0 * _ball(L, R))
        if dnorm <= opt_tol * (1.0 + xnorm) or gtd >= 0:
            logging.debug("SPG stationary at iteration %d: |d| = %.3e", iterno, dnorm)
            break
        fmax = max(recent)
        alpha = 1.0
        for _ in range(SPG_MAX_BACKTRACK):
            nL, nR = L + alpha * dL, R + alpha * dR
            fn, gnL, gnR = _objective(P, nL, nR)
            if fn <= fmax + SPG_GAMMA * alpha * gtd:
                break
            # safeguarded quadratic backtrack
            curvature = fn - f - alpha * gtd
            trial = -gtd * alpha**2 / (2.0 * curvature) if curvature > 0 else 0.5 * alpha
            alpha = trial if 0.1 * alpha <= trial <= 0.5 * alpha else 0.5 * alpha
        else:
            logging.debug("SPG line search stalled at iteration %d", iterno)
            break
        sL, sR = nL - L, nR - R
        yL, yR = gnL - gL, gnR - gR
        sts = float(np.vdot(sL, sL).real + np.vdot(sR, sR).real)
        sty = float(np.vdot(sL, yL).real + np.vdot(sR, yR).real)
        step = min(max(sts / sty, SPG_STEP_MIN), SPG_STEP_MAX) if sty > 0 else SPG_STEP_MAX
        L, R, f, gL, gR = nL, nR, fn, gnL, gnR
        recent.append(f)
        if f < best_f:
            best_f, best_L, best_R = f, L, R
        if trace is not None:
            grad_norm = math.sqrt(float(np.vdot(gL, gL).real + np.vdot(gR, gR).real))
            trace.rows.append({"iter": iterno, "tau": float(tau), "v_tau": f, "grad_norm": grad_norm})
        if f == 0:
            break
    return F0.replace(best_L, best_R, tau), best_f


def _zero_factors(P: CompletionProblem) -> Factorization:
    rows, cols = P.shape
    k = P.rank_cap
    return Factorization(np.zeros((rows, k)), np.zeros((k, cols)), 0.0, P.domain)


def _balanced(F: Factorization) -> Factorization:
    """
    Same product with L = U sqrt(S) and R = sqrt(S) V^H, so the ball equals its nuclear norm.
    """
    QL, TL = np.linalg.qr(F.L)
    QR, TR = np.linalg.qr(F.R.conj().T)
    U, s, Vh = scipy.linalg.svd(TL @ TR.conj().T)
    root = np.sqrt(s)
    return F.replace((QL @ U) * root, root[:, None] * (Vh @ QR.conj().T))


def _initial_factors(P: CompletionProblem) -> Factorization:
    F = init_factors(P.from_data(P.observed), P.rank_cap, P.domain)
    if F.ball() == 0 and P.lam > 0:
        # steepest descent direction of the residual at zero factors
        direction = 2.0 * P.observed + P.lam * (P.probes.W.conj() @ P.sim_data.T)
        F = init_factors(P.from_data(direction), P.rank_cap, P.domain)
    return F


def _gap(v: float, epsilon: float) -> float:
    return math.sqrt(max(v, 0.0)) - math.sqrt(epsilon)


def _secant(a: list, b: list, epsilon: float) -> float:
    """
    Zero of the line through (tau, gap) at a and b; nan unless the line decreases.
    """
    if a[0] == b[0]:
        return math.nan
    slope = (_gap(b[1], epsilon) - _gap(a[1], epsilon)) / (b[0] - a[0])
    if not slope < 0:
        return math.nan
    return b[0] - _gap(b[1], epsilon) / slope


def _start_for(P: CompletionProblem, known: List[list], tau: float) -> Factorization:
    """
    Lowest known pair inside the ball of radius tau, or the next larger pair shrunk onto it if lower.
    """
    value, start = min(((point[1], point[2]) for point in known if point[0] <= tau), key=lambda item: item[0])
    outside = [point for point in known if point[0] > tau]
    if outside:
        nearest = min(outside, key=lambda point: point[0])[2]
        shrunk = project_ball(_balanced(nearest), tau)
        if residual(P, shrunk) < value:
            start = shrunk
    return _balanced(start)


def _remember(known: List[list], trace: ParetoTrace, tau: float, v: float, F: Factorization) -> list:
    """
    Records [tau, v, F] with v no larger than at any smaller known radius; every known radius >= tau is capped at v.
    """
    smaller = min((point for point in known if point[0] <= tau), key=lambda point: point[1], default=None)
    if smaller is not None and smaller[1] < v:
        v, F = smaller[1], smaller[2]
    for point in known:
        if point[0] >= tau and point[1] > v:
            point[1], point[2] = v, F
    trace.add(tau, v)
    trace.lower(tau, v)
    point = [tau, v, F]
    known.append(point)
    return point


def solve_completion(P: CompletionProblem, F0: Optional[Factorization] = None, root_tol: float = ROOT_TOL,
                     max_root_iter: int = ROOT_ITERS,
                     max_iter: int = LASSO_ITERS) -> Tuple[Factorization, ParetoTrace]:
    """
    Finds tau with v(tau) = epsilon by secant steps from tau_0 = 0 and tau_1 = ball(F0),
    taken on sqrt(v) - sqrt(epsilon).

    Each Lasso solve starts from the best pair known to fit its ball, and its result caps v at
    every larger radius, so the recorded points never increase with tau. Once a radius meets the
    budget, later radii stay inside the bracket. Stops when |v - epsilon| <= root_tol * max(1, epsilon)
    or after max_root_iter Lasso solves; a bracketed search that runs out returns the smallest radius
    known to meet the budget.

    Raises BudgetTooTight with the best pair and the trace when no radius meets the budget, or when
    two growth steps in a row each close less than 2% of the remaining gap.

    - P: Completion problem.
    - F0: Starting factor pair; defaults to init_factors of the observed data.
    - root_tol: Relative root tolerance.
    - max_root_iter: Cap on Lasso solves.
    - max_iter: SPG iteration cap per Lasso solve.
    """
    logging.info("epsilon = %r", P.epsilon)
    logging.info("lam = %r", P.lam)
    trace = ParetoTrace()
    zero = _zero_factors(P)
    v_zero = residual(P, zero)
    trace.add(0.0, v_zero)
    if v_zero <= P.epsilon:
        logging.info("Zero factors already meet the budget.")
        return zero, trace
    tolerance = root_tol * max(1.0, P.epsilon)
    if F0 is None or F0.ball() == 0:
        F0 = _initial_factors(P)
    if F0.ball() == 0:
        logging.critical("No descent direction from zero factors; v(0) = %.6e", v_zero)
        raise BudgetTooTight("no descent direction from zero factors", zero, trace)
    known = [[0.0, v_zero, zero]]
    tau = F0.ball()
    F, v = solve_lasso(P, tau, F0, max_iter, trace)
    previous, latest = known[0], _remember(known, trace, tau, v, F)
    flat = 0
    for _ in range(max_root_iter - 1):
        if any(abs(point[1] - P.epsilon) <= tolerance for point in known):
            break
        lo = max((point for point in known if point[1] > P.epsilon), key=lambda point: point[0])
        below = [point for point in known if point[1] < P.epsilon]
        if below:
            hi = min(below, key=lambda point: point[0])
            width = hi[0] - lo[0]
            if width <= 1e-12 * hi[0]:
                break
            tau = _secant(previous, latest, P.epsilon)
            if not lo[0] + 0.05 * width <= tau <= hi[0] - 0.05 * width:
                tau = min(max(_secant(lo, hi, P.epsilon), lo[0] + 0.05 * width), hi[0] - 0.05 * width)
        else:
            tau = _secant(previous, latest, P.epsilon)
            if not tau > lo[0]:
                tau = ROOT_GROWTH * lo[0]
            tau = min(tau, ROOT_GROWTH * lo[0])
        F, v = solve_lasso(P, tau, _start_for(P, known, tau), max_iter, trace)
        previous, latest = latest, _remember(known, trace, tau, v, F)
        if not below:
            flat = flat + 1 if lo[1] - latest[1] < 0.02 * (lo[1] - P.epsilon) else 0
            if flat >= 2:
                logging.critical("Residual %.6e stays above epsilon %.6e while tau grows to %.6e",
                                 latest[1], P.epsilon, tau)
                raise BudgetTooTight("v(tau) = %.6e > epsilon = %.6e and tau stalled" % (latest[1], P.epsilon),
                                     latest[2], trace)
    met = [point for point in known if abs(point[1] - P.epsilon) <= tolerance]
    if met:
        tau, v, F = min(met, key=lambda point: point[0])
        return F.replace(F.L, F.R, tau), trace
    below = [point for point in known if point[1] < P.epsilon]
    if below:
        tau, v, F = min(below, key=lambda point: point[0])
        logging.warning("Root finder stopped with v = %.6e under epsilon = %.6e at tau = %.6e", v, P.epsilon, tau)
        return F.replace(F.L, F.R, tau), trace
    _, v, F = min(known, key=lambda point: point[1])
    logging.critical("Residual %.6e stays above epsilon %.6e after %d Lasso solve(s)", v, P.epsilon, max_root_iter)
    raise BudgetTooTight("v(tau) = %.6e > epsilon = %.6e after %d Lasso solve(s)" % (v, P.epsilon, max_root_iter),
                         F, trace)


def init_factors(D_s: Union[FrequencySlice, np.ndarray], k: int,
                 domain: Domain = Domain.MIDPOINT_OFFSET) -> Factorization:
    """
    Returns L = U_k sqrt(S_k), R = sqrt(S_k) V_k^H from the SVD of the zero-filled data.

    - D_s: Observed data, usually in the midpoint-offset domain.
    - k: Rank cap, at most min(D_s.shape).
    - domain: Domain tag for a raw array input; a slice carries its own.
    """
    if isinstance(D_s, FrequencySlice):
        domain = D_s.domain
        D_s = D_s.data
    D_s = np.asarray(D_s, dtype=np.complex128)
    if not 1 <= k <= min(D_s.shape):
        raise BadShape("rank cap %d outside [1, %d]" % (k, min(D_s.shape)))
    U, s, Vh = scipy.linalg.svd(D_s, full_matrices=False)
    root = np.sqrt(s[:k])
    L = U[:, :k] * root
    R = root[:, None] * Vh[:k]
    return Factorization(L, R, float(s[:k].sum()), domain)


def recovered_slice(P: CompletionProblem, F: Factorization) -> FrequencySlice:
    """
    Returns T*(L R) (or L R) as a source-receiver slice.

    - P: Problem that produced F.
    - F: Factor pair.
    """
    return FrequencySlice(P.acquisition.omega, Domain.SOURCE_RECEIVER, P.to_data(F.product()))
