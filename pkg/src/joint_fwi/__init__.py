"""
Joint low-rank seismic data completion and simultaneous-shot waveform inversion.

Modules:
- core: grids, frequency slices, masks, factor pairs and their validation.
- matfile: JFM1 matrix files, CSV logs and PGM images.
- helmholtz: discrete Helmholtz operator and its cached LU solves.
- acquisition: survey geometry, Ricker weights, synthetic data and masks.
- probes: simultaneous-shot probe blocks and randomized misfits.
- midoff: midpoint-offset transform and singular-value diagnostics.
- lowrank: residual-constrained factorized completion (SPG + Pareto root).
- inversion: adjoint-state misfit/gradient and the L-BFGS driver.
- joint: unified and stage-wise inversion loops, frequency continuation.
- metrics: SNR and relative model error.
- experiment: configuration, synthetic truth and the run harness.
"""

from importlib.metadata import PackageNotFoundError, version  # pragma: no cover

try:
    # Change here if project is renamed and does not equal the package name
    dist_name = __name__
    __version__ = version(dist_name)
except PackageNotFoundError:  # pragma: no cover
    __version__ = "unknown"
finally:
    del version, PackageNotFoundError
