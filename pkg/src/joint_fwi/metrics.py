#!/usr/bin/python3
"""
Defines the quality measures reported by the pipelines.
- snr_db: -20 log10(||estimate - truth|| / ||truth||), capped at SNR_CAP.
- model_error: ||estimate - truth|| / ||truth|| on squared slowness.
"""

from joint_fwi.constants import SNR_CAP
from joint_fwi.core import ModelGrid, frobenius_norm
from joint_fwi.errors import ShapeMismatch, ZeroReference

import numpy as np

import math
from typing import Tuple, Union

Operand = Union[np.ndarray, ModelGrid]


def _pair(truth: Operand, estimate: Operand) -> Tuple[np.ndarray, np.ndarray, float]:
    truth = truth.m if isinstance(truth, ModelGrid) else np.asarray(truth)
    estimate = estimate.m if isinstance(estimate, ModelGrid) else np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ShapeMismatch("truth %r and estimate %r differ" % (truth.shape, estimate.shape))
    reference = frobenius_norm(truth)
    if reference == 0:
        raise ZeroReference("reference has zero norm")
    return truth, estimate, reference


def snr_db(truth: Operand, estimate: Operand) -> float:
    """
    Returns the signal-to-noise ratio of an estimate in decibels.

    - truth: Reference matrix, nonzero.
    - estimate: Matrix of the same shape.
    """
    truth, estimate, reference = _pair(truth, estimate)
    error = frobenius_norm(estimate - truth)
    if error == 0:
        return SNR_CAP
    return min(-20.0 * math.log10(error / reference), SNR_CAP)


def model_error(truth: Operand, estimate: Operand) -> float:
    truth, estimate, reference = _pair(truth, estimate)
    return frobenius_norm(estimate - truth) / reference
