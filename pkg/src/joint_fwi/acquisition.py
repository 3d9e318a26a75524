#!/usr/bin/python3
"""
Defines acquisition geometry, sampling operators and synthetic data generation.
- Survey: Source and receiver grid indices.
- RickerSource: Ricker wavelet with a peak frequency.
- surface_survey: Evenly spaced sources/receivers one row below the top edge.
- validate_survey: Checks survey indices against a grid.
- source_matrix: Q W, i.e. weighted 1/h^2-scaled deltas scattered onto the grid.
- restrict: P U, i.e. fields gathered at receiver nodes.
- restrict_adjoint: P^T R, receiver residuals scattered back onto the grid.
- ricker_amplitude: Fourier magnitude of the Ricker wavelet at frequency f.
- forward_data: Ns-by-Nr data slice P H(m)^-1 Q scaled by amp.
- make_mask: Random observation mask with an exact number of kept entries.
- apply_mask: Zero-fills unobserved entries of a data slice.
"""

from joint_fwi.core import ModelGrid, FrequencySlice, AcquisitionMask, Domain, make_rng
from joint_fwi.constants import SOURCE_ROW
from joint_fwi.errors import BadRatio, BadSpec, ShapeMismatch, WrongDomain
from joint_fwi import helmholtz

import numpy as np

from dataclasses import dataclass
import logging
import math
from typing import Optional

MASK_STREAM = 1


@dataclass(frozen=True)
class Survey:
    """
    Sources at src_idx and receivers at rcv_idx (flat grid indices).
    """
    src_idx: np.ndarray
    rcv_idx: np.ndarray
    colocated: bool = False

    def __post_init__(self):
        for name in ("src_idx", "rcv_idx"):
            values = np.array(getattr(self, name), dtype=np.int64).ravel()
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        if len(set(self.rcv_idx.tolist())) != self.rcv_idx.size:
            raise BadSpec("receiver indices must be unique")
        if self.colocated and not np.array_equal(self.src_idx, self.rcv_idx):
            raise BadSpec("colocated survey needs identical source and receiver indices")

    @property
    def ns(self) -> int:
        return self.src_idx.size

    @property
    def nr(self) -> int:
        return self.rcv_idx.size


@dataclass(frozen=True)
class RickerSource:
    f_peak: float

    def __post_init__(self):
        if not self.f_peak > 0:
            raise BadSpec("Ricker peak frequency must be positive, got %r" % self.f_peak)


def surface_survey(g: ModelGrid, n_shots: int, row: int = SOURCE_ROW) -> Survey:
    """
    Places `n_shots` co-located sources and receivers evenly along depth row `row`.

    - g: Model grid.
    - n_shots: Number of positions; at most nx - 2.
    - row: Depth index; row 1 keeps positions off the boundary stencil.
    """
    logging.info("n_shots = %r", n_shots)
    logging.info("row = %r", row)
    if n_shots < 1 or n_shots > g.nx - 2:
        raise BadSpec("n_shots must lie in [1, %d], got %d" % (g.nx - 2, n_shots))
    if not 0 <= row < g.nz:
        raise BadSpec("row %d outside the grid" % row)
    columns = np.unique(np.rint(np.linspace(1, g.nx - 2, n_shots)).astype(int))
    if columns.size != n_shots:
        raise BadSpec("%d shots do not fit on %d columns" % (n_shots, g.nx - 2))
    positions = columns * g.nz + row
    return Survey(positions, positions, colocated=True)


def validate_survey(s: Survey, g: ModelGrid) -> bool:
    """
    Returns True if every index lies on the grid; raises BadSpec otherwise.

    - s: Survey.
    - g: Model grid.
    """
    for name, values in (("src_idx", s.src_idx), ("rcv_idx", s.rcv_idx)):
        if values.size == 0 or values.min() < 0 or values.max() >= g.n:
            raise BadSpec("%s must lie in [0, %d)" % (name, g.n))
    return True


def source_matrix(g: ModelGrid, s: Survey, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Returns the n-by-K block Q W; without weights, Q itself (one column per source).

    - g: Model grid (for n and the 1/h^2 delta scaling).
    - s: Survey.
    - weights: Ns-by-K source weights, e.g. a probe block.
    """
    if weights is None:
        weights = np.eye(s.ns)
    weights = np.asarray(weights)
    if weights.ndim != 2 or weights.shape[0] != s.ns:
        raise ShapeMismatch("weights must have %d rows, got %r" % (s.ns, weights.shape))
    block = np.zeros((g.n, weights.shape[1]), dtype=np.complex128)
    np.add.at(block, s.src_idx, weights / g.h**2)
    return block


def restrict(s: Survey, fields: np.ndarray) -> np.ndarray:
    """
    Returns P U, the rows of `fields` at receiver nodes.

    - s: Survey.
    - fields: n-by-K wavefields.
    """
    return fields[s.rcv_idx]


def restrict_adjoint(s: Survey, n: int, residual: np.ndarray) -> np.ndarray:
    """
    Returns P^T R, an n-by-K block that is zero away from receivers.

    - s: Survey.
    - n: Number of grid nodes.
    - residual: Nr-by-K receiver values.
    """
    residual = np.asarray(residual)
    block = np.zeros((n,) + residual.shape[1:], dtype=np.complex128)
    np.add.at(block, s.rcv_idx, residual)
    return block


def ricker_amplitude(w: RickerSource, f: float) -> float:
    """
    Returns (2/sqrt(pi)) (f^2/f_p^3) exp(-f^2/f_p^2), the spectrum of
    r(t) = (1 - 2 pi^2 f_p^2 t^2) exp(-pi^2 f_p^2 t^2).

    - w: Wavelet.
    - f: Frequency in Hz, f >= 0.
    """
    if f < 0:
        raise BadSpec("frequency must be nonnegative, got %r" % f)
    fp = w.f_peak
    return 2.0 / math.sqrt(math.pi) * f**2 / fp**3 * math.exp(-(f**2) / fp**2)


def forward_data(g: ModelGrid, s: Survey, omega: float, amp: float,
                 H: Optional[helmholtz.HelmholtzOperator] = None) -> FrequencySlice:
    """
    Simulates the Ns-by-Nr slice whose row i is P solve(H, amp q_i).

    - g: Model grid.
    - s: Survey.
    - omega: Angular frequency.
    - amp: Source weight for this frequency.
    - H: Operator already assembled for (g, omega), if available.
    """
    logging.info("Simulating %d shot(s) at omega = %r, amp = %r", s.ns, omega, amp)
    validate_survey(s, g)
    if H is None:
        H = helmholtz.assemble(g, omega)
    fields = helmholtz.solve(H, amp * source_matrix(g, s))
    return FrequencySlice(omega, Domain.SOURCE_RECEIVER, restrict(s, fields).T)


def make_mask(ns: int, nr: int, keep_ratio: float, seed: int, pattern: str = "entry") -> np.ndarray:
    """
    Returns a boolean ns-by-nr mask with exactly round(keep_ratio * count) kept items.

    - ns, nr: Mask shape.
    - keep_ratio: Observed fraction in (0, 1].
    - seed: Master seed; the same seed gives the same mask.
    - pattern: "entry" keeps random entries, "source" keeps whole random source rows.
    """
    logging.info("keep_ratio = %r", keep_ratio)
    logging.info("pattern = %r", pattern)
    if not 0 < keep_ratio <= 1:
        raise BadRatio("keep_ratio must lie in (0, 1], got %r" % keep_ratio)
    rng = make_rng(seed, MASK_STREAM)
    mask = np.zeros((ns, nr), dtype=bool)
    if pattern == "entry":
        count = int(round(keep_ratio * ns * nr))
        mask.flat[rng.permutation(ns * nr)[:count]] = True
    elif pattern == "source":
        count = int(round(keep_ratio * ns))
        mask[rng.permutation(ns)[:count], :] = True
    else:
        raise BadSpec("unknown mask pattern %r" % pattern)
    logging.info("Kept %d of %d entries.", int(mask.sum()), ns * nr)
    return mask


def apply_mask(mask: np.ndarray, data: FrequencySlice) -> AcquisitionMask:
    """
    Returns the AcquisitionMask holding D_s = M * D.

    - mask: Boolean ns-by-nr indicator.
    - data: Fully sampled source-receiver slice.
    """
    mask = np.asarray(mask, dtype=bool)
    if data.domain is not Domain.SOURCE_RECEIVER:
        raise WrongDomain("masks apply to source-receiver slices")
    if mask.shape != data.shape:
        raise ShapeMismatch("mask %r does not match data %r" % (mask.shape, data.shape))
    observed = FrequencySlice(data.omega, Domain.SOURCE_RECEIVER, np.where(mask, data.data, 0))
    return AcquisitionMask(mask, observed)
