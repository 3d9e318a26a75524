#!/usr/bin/python3
"""
Defines simultaneous-shot probes and randomized misfit estimates.
- Distribution: Probe law, Gaussian or Rademacher (zero mean, unit covariance).
- ProbeBlock: Ns-by-K real probe matrix W with its law and seed.
- draw_probes: Draws a reproducible probe block.
- simultaneous_data: D^T W, the Nr-by-K simultaneous-shot data of an Ns-by-Nr slice.
- randomized_misfit: (1/K) sum_j ||B w_j||^2, an unbiased estimate of ||B||_F^2.
- masked_misfit_counterexample: Masking-then-probing vs probing-then-masking.
"""

from joint_fwi.core import make_rng
from joint_fwi.errors import ShapeMismatch, BadSpec

import numpy as np

from dataclasses import dataclass
import enum
import logging
from typing import Tuple


class Distribution(enum.Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


@dataclass(frozen=True)
class ProbeBlock:
    W: np.ndarray
    distribution: Distribution
    seed: int

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2:
            raise ShapeMismatch("probe block must be a matrix, got ndim=%d" % W.ndim)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def ns(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]


def draw_probes(ns: int, k: int, dist: Distribution = Distribution.GAUSSIAN, seed: int = 0,
                keys: Tuple[int, ...] = ()) -> ProbeBlock:
    """
    Returns an ns-by-k probe block; the same seed returns the same block.

    - ns: Number of physical sources.
    - k: Number of simultaneous shots, k >= 1.
    - dist: Gaussian or Rademacher.
    - seed: Master seed.
    - keys: Stream keys, e.g. (outer iteration,); distinct keys give independent blocks.
    """
    if k < 1:
        raise BadSpec("need at least one probe, got k=%d" % k)
    dist = Distribution(dist)
    rng = make_rng(seed, *keys)
    if dist is Distribution.GAUSSIAN:
        W = rng.standard_normal((ns, k))
    else:
        W = 2.0 * rng.integers(0, 2, size=(ns, k)) - 1.0
    logging.debug("Drew %d %s probe(s) for %d source(s), seed=%r, keys=%r", k, dist.value, ns, seed, keys)
    return ProbeBlock(W, dist, seed)


def simultaneous_data(data: np.ndarray, probes: ProbeBlock) -> np.ndarray:
    """
    Returns D^T W for an Ns-by-Nr data matrix D (rows indexed by source).

    - data: Ns-by-Nr matrix.
    - probes: Probe block with Ns rows.
    """
    data = np.asarray(data)
    if data.shape[0] != probes.ns:
        raise ShapeMismatch("data has %d sources, probes have %d" % (data.shape[0], probes.ns))
    return data.T @ probes.W


def randomized_misfit(B: np.ndarray, probes: ProbeBlock) -> float:
    """
    Returns (1/K) ||B W||_F^2, whose expectation over W is ||B||_F^2.

    - B: Matrix with Ns columns (receivers-by-sources).
    - probes: Probe block.
    """
    B = np.asarray(B)
    if B.ndim != 2 or B.shape[1] != probes.ns:
        raise ShapeMismatch("B needs %d columns, got shape %r" % (probes.ns, B.shape))
    BW = B @ probes.W
    return float(np.vdot(BW, BW).real) / probes.k


def masked_misfit_counterexample(B: np.ndarray, M: np.ndarray, probes: ProbeBlock) -> Tuple[float, float]:
    """
    Returns (lhs, rhs) with lhs = (1/K)||(M * B) W||^2 (mask, then probe) and
    rhs = ||M * (B W W^T / K)||^2 (probe, then mask). They agree only as K grows.

    - B: Receivers-by-sources matrix.
    - M: Mask of the same shape as B.
    - probes: Probe block.
    """
    B = np.asarray(B)
    M = np.asarray(M, dtype=float)
    if M.shape != B.shape:
        raise ShapeMismatch("mask %r and matrix %r differ" % (M.shape, B.shape))
    lhs = randomized_misfit(M * B, probes)
    sketch = (B @ probes.W) @ probes.W.T / probes.k
    masked = M * sketch
    rhs = float(np.vdot(masked, masked).real)
    return lhs, rhs
