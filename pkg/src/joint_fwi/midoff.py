#!/usr/bin/python3
"""
Defines the midpoint-offset transform T and its adjoint T*.
- MidOffMap: Index bookkeeping (r, c) -> (r + c, r - c + nr - 1) for ns-by-nr slices.
- to_midoff: Embeds a source-receiver slice into the (ns+nr-1)-square midpoint-offset grid.
- from_midoff: Reads a source-receiver slice back off the checkerboard support.
- singular_values: Singular values of a data matrix, largest first.
- energy_rank: Number of singular values holding a given share of the spectral energy.

Integer coordinates stand in for the half-integer midpoint (r + c)/2 and offset
(r - c)/2, so T is an exact permutation into its support.
"""

from joint_fwi.core import FrequencySlice, Domain
from joint_fwi.errors import WrongDomain, ShapeMismatch

import numpy as np
import scipy.linalg

from dataclasses import dataclass, field
import functools


@dataclass(frozen=True)
class MidOffMap:
    ns: int
    nr: int
    rows: np.ndarray = field(init=False, repr=False, compare=False)
    cols: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r, c = np.meshgrid(np.arange(self.ns), np.arange(self.nr), indexing="ij")
        rows = r + c
        cols = r - c + self.nr - 1
        rows.setflags(write=False)
        cols.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def size(self) -> int:
        return self.ns + self.nr - 1

    @property
    def support(self) -> np.ndarray:
        """
        Boolean checkerboard of midpoint-offset cells hit by some (r, c).
        """
        support = np.zeros((self.size, self.size), dtype=bool)
        support[self.rows, self.cols] = True
        return support

    def forward(self, data: np.ndarray) -> np.ndarray:
        """
        T applied to an ns-by-nr array.
        """
        data = np.asarray(data)
        if data.shape != (self.ns, self.nr):
            raise ShapeMismatch("expected %r, got %r" % ((self.ns, self.nr), data.shape))
        out = np.zeros((self.size, self.size), dtype=np.result_type(data, np.complex128))
        out[self.rows, self.cols] = data
        return out

    def adjoint(self, image: np.ndarray) -> np.ndarray:
        """
        T* applied to a midpoint-offset array; off-support cells are ignored.
        """
        image = np.asarray(image)
        if image.shape != (self.size, self.size):
            raise ShapeMismatch("expected %r, got %r" % ((self.size, self.size), image.shape))
        return image[self.rows, self.cols]


@functools.lru_cache(maxsize=32)
def midoff_map(ns: int, nr: int) -> MidOffMap:
    return MidOffMap(ns, nr)


def to_midoff(D: FrequencySlice) -> FrequencySlice:
    """
    Returns the midpoint-offset slice with out[r+c, r-c+nr-1] = D[r, c], zero elsewhere.

    - D: Source-receiver slice.
    """
    if D.domain is not Domain.SOURCE_RECEIVER:
        raise WrongDomain("to_midoff needs a source-receiver slice, got %s" % D.domain.value)
    mapping = midoff_map(D.ns, D.nr)
    return FrequencySlice(D.omega, Domain.MIDPOINT_OFFSET, mapping.forward(D.data), D.ns, D.nr)


def from_midoff(Y: FrequencySlice) -> FrequencySlice:
    """
    Returns the source-receiver slice D[r, c] = Y[r+c, r-c+nr-1].

    - Y: Midpoint-offset slice.
    """
    if Y.domain is not Domain.MIDPOINT_OFFSET:
        raise WrongDomain("from_midoff needs a midpoint-offset slice, got %s" % Y.domain.value)
    mapping = midoff_map(Y.ns, Y.nr)
    return FrequencySlice(Y.omega, Domain.SOURCE_RECEIVER, mapping.adjoint(Y.data), Y.ns, Y.nr)


def singular_values(A: np.ndarray) -> np.ndarray:
    return scipy.linalg.svd(np.asarray(A), compute_uv=False)


def energy_rank(A: np.ndarray, fraction: float = 0.95) -> int:
    """
    Returns the fewest leading singular values whose squares hold `fraction` of ||A||_F^2.

    - A: Data matrix.
    - fraction: Energy share in (0, 1].
    """
    energy = singular_values(A) ** 2
    total = energy.sum()
    if total == 0:
        return 0
    cumulative = np.cumsum(energy) / total
    return int(np.searchsorted(cumulative, fraction - 1e-12) + 1)
