#!/usr/bin/python3
"""
Defines the shared domain types and their validation.
- Domain: Tags a data matrix as source-receiver or midpoint-offset.
- ModelGrid: Squared-slowness model on a regular 2-D grid, z-fastest ordering.
- FrequencySlice: Complex data matrix for one angular frequency.
- AcquisitionMask: Observation indicator plus the zero-filled observed data.
- Factorization: Rank-k factor pair (L, R) with its ball radius tau.
- validate_model: Checks every ModelGrid invariant.
- frobenius_norm: Frobenius norm of a finite matrix.
- make_rng: Seeded generator for a (seed, key...) stream.
"""

from joint_fwi.errors import BadShape, NonPositiveSlowness, NonFiniteEntry, ShapeMismatch

import numpy as np

from dataclasses import dataclass
import enum
import logging
from typing import Optional, Tuple


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class Domain(enum.Enum):
    SOURCE_RECEIVER = "source-receiver"
    MIDPOINT_OFFSET = "midpoint-offset"


@dataclass(frozen=True)
class ModelGrid:
    """
    Squared slowness m (s^2/m^2) on an nz-by-nx grid with spacing h (meters).

    Node (iz, ix) lives at index ix * nz + iz, so z is the fast axis.
    """
    nz: int
    nx: int
    h: float
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).ravel()
        object.__setattr__(self, "m", _frozen(m))

    @property
    def n(self) -> int:
        return self.nz * self.nx

    @property
    def image(self) -> np.ndarray:
        """
        The model as an (nz, nx) array.
        """
        return self.m.reshape(self.nx, self.nz).T

    @property
    def velocity(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.image)

    def index(self, iz: int, ix: int) -> int:
        return ix * self.nz + iz

    def with_model(self, m: np.ndarray) -> "ModelGrid":
        """
        Same geometry, new squared slowness vector.
        """
        return ModelGrid(self.nz, self.nx, self.h, m)

    @classmethod
    def from_image(cls, image: np.ndarray, h: float) -> "ModelGrid":
        image = np.asarray(image, dtype=np.float64)
        nz, nx = image.shape
        return cls(nz, nx, h, image.T.ravel())

    @classmethod
    def from_velocity(cls, velocity: np.ndarray, h: float) -> "ModelGrid":
        velocity = np.asarray(velocity, dtype=np.float64)
        return cls.from_image(1.0 / velocity**2, h)


def validate_model(g: ModelGrid) -> bool:
    """
    Returns True when every ModelGrid invariant holds; raises otherwise.

    - g: Grid to check.
    """
    if g.nz < 3 or g.nx < 3:
        raise BadShape("grid must be at least 3x3, got nz=%d, nx=%d" % (g.nz, g.nx))
    if not g.h > 0:
        raise BadShape("grid spacing h must be positive, got %r" % g.h)
    if g.m.size != g.nz * g.nx:
        raise BadShape("model length %d does not equal nz*nx=%d" % (g.m.size, g.nz * g.nx))
    if not np.all(np.isfinite(g.m)):
        raise NonPositiveSlowness("squared slowness must be finite")
    if np.any(g.m <= 0):
        raise NonPositiveSlowness(
            "squared slowness must be strictly positive, min is %r" % float(g.m.min())
        )
    return True


def frobenius_norm(A: np.ndarray) -> float:
    """
    Returns sqrt(sum |a_ij|^2) of a finite matrix.

    - A: Real or complex array.
    """
    A = np.asarray(A)
    if not np.all(np.isfinite(A)):
        raise NonFiniteEntry("matrix holds non-finite entries")
    return float(np.linalg.norm(A.ravel()))


@dataclass(frozen=True)
class FrequencySlice:
    """
    Complex data for angular frequency omega.

    Source-receiver slices are ns-by-nr with rows indexed by source;
    midpoint-offset slices are (ns+nr-1)-square.
    """
    omega: float
    domain: Domain
    data: np.ndarray
    ns: Optional[int] = None
    nr: Optional[int] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise BadShape("frequency slice must be a matrix, got ndim=%d" % data.ndim)
        if not np.all(np.isfinite(data)):
            raise NonFiniteEntry("frequency slice at omega=%r holds non-finite entries" % self.omega)
        ns, nr = self.ns, self.nr
        if self.domain is Domain.SOURCE_RECEIVER:
            ns = data.shape[0] if ns is None else ns
            nr = data.shape[1] if nr is None else nr
            expected = (ns, nr)
        else:
            if ns is None or nr is None:
                raise BadShape("midpoint-offset slice needs ns and nr")
            expected = (ns + nr - 1, ns + nr - 1)
        if data.shape != expected:
            raise BadShape("%s slice must be %r, got %r" % (self.domain.value, expected, data.shape))
        object.__setattr__(self, "ns", int(ns))
        object.__setattr__(self, "nr", int(nr))
        object.__setattr__(self, "data", _frozen(data))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class AcquisitionMask:
    """
    Observation indicator Omega and the subsampled data D_s = M * D.
    """
    mask: np.ndarray
    observed: FrequencySlice

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if self.observed.domain is not Domain.SOURCE_RECEIVER:
            raise BadShape("observed data must live in the source-receiver domain")
        if mask.shape != self.observed.shape:
            raise ShapeMismatch("mask %r and data %r differ" % (mask.shape, self.observed.shape))
        if np.any(self.observed.data[~mask] != 0):
            raise BadShape("unobserved entries must be exactly zero")
        object.__setattr__(self, "mask", _frozen(mask))

    @property
    def keep_ratio(self) -> float:
        return float(self.mask.mean())

    @property
    def omega(self) -> float:
        return self.observed.omega


@dataclass(frozen=True)
class Factorization:
    """
    Factor pair with L rows-by-k and R k-by-cols; the iterate is L @ R.

    - tau: radius of the ball 0.5*||L||^2 + 0.5*||R||^2 <= tau.
    - domain: domain of the product L @ R.
    """
    L: np.ndarray
    R: np.ndarray
    tau: float
    domain: Domain = Domain.MIDPOINT_OFFSET

    def __post_init__(self):
        L = np.array(self.L, dtype=np.complex128)
        R = np.array(self.R, dtype=np.complex128)
        if L.ndim != 2 or R.ndim != 2 or L.shape[1] != R.shape[0]:
            raise ShapeMismatch("factor shapes %r and %r do not chain" % (L.shape, R.shape))
        k = L.shape[1]
        if k < 1 or k > min(L.shape[0], R.shape[1]):
            raise BadShape("rank cap %d outside [1, %d]" % (k, min(L.shape[0], R.shape[1])))
        object.__setattr__(self, "L", _frozen(L))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def rank_cap(self) -> int:
        return self.L.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.L.shape[0], self.R.shape[1]

    def ball(self) -> float:
        """
        Returns 0.5*||L||_F^2 + 0.5*||R||_F^2.
        """
        return 0.5 * float(np.vdot(self.L, self.L).real) + 0.5 * float(np.vdot(self.R, self.R).real)

    def product(self) -> np.ndarray:
        return self.L @ self.R

    def replace(self, L: np.ndarray, R: np.ndarray, tau: Optional[float] = None) -> "Factorization":
        return Factorization(L, R, self.tau if tau is None else tau, self.domain)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Returns a PCG64 generator for the stream named by (seed, *keys).

    - seed: Master seed.
    - keys: Stream identifiers, e.g. an outer iteration number.
    """
    logging.debug("seed = %r, keys = %r", seed, keys)
    sequence = np.random.SeedSequence([int(seed), *[int(key) for key in keys]])
    return np.random.Generator(np.random.PCG64(sequence))
