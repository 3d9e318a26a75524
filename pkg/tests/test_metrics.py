#!/usr/bin/python3
"""
Contains tests for the functions defined in the 'metrics' module.
- snr_db
- model_error
"""

from joint_fwi.constants import SNR_CAP
from joint_fwi.core import ModelGrid
from joint_fwi.errors import ShapeMismatch, ZeroReference
from joint_fwi.metrics import model_error, snr_db

import numpy as np

import unittest


class MetricsTest(unittest.TestCase):
    """
    Contains tests to see that the reported quality measures are computed as intended.
    """

    def setUp(self):
        """
        Contains objects meant as essential parameters for 'metrics' functions.

        truth: Complex 3x4 matrix.
        model: 3x3 grid of squared slowness.
        """
        rng = np.random.default_rng(2)
        self.truth = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        self.model = ModelGrid(3, 3, 10.0, rng.uniform(1e-7, 4e-7, 9))

    def test_snr_db(self):
        """
        Tests the cap, the 0 dB point and a tenfold error reduction.
        """
        self.assertEqual(snr_db(self.truth, self.truth), SNR_CAP)
        self.assertEqual(snr_db(self.truth, np.zeros_like(self.truth)), 0.0)
        self.assertAlmostEqual(snr_db(self.truth, 1.1 * self.truth), 20.0, places=10)
        ones = np.ones(4)
        self.assertEqual(snr_db(ones, ones * (1 + 2.0**-52)), SNR_CAP)

    def test_snr_db_errors(self):
        """
        Tests that an all-zero reference and mismatched shapes raise.
        """
        with self.assertRaises(ZeroReference):
            snr_db(np.zeros((2, 2)), np.ones((2, 2)))
        with self.assertRaises(ShapeMismatch):
            snr_db(self.truth, self.truth[:, :3])

    def test_model_error(self):
        """
        Tests identical models, a doubled model and sign symmetry of the perturbation.
        """
        self.assertEqual(model_error(self.model, self.model), 0.0)
        doubled = self.model.with_model(2 * self.model.m)
        self.assertAlmostEqual(model_error(self.model, doubled), 1.0, places=14)
        bump = np.zeros(9)
        bump[4] = 1e-8
        up = model_error(self.model, self.model.m + bump)
        down = model_error(self.model, self.model.m - bump)
        self.assertAlmostEqual(up, down, places=14)
        with self.assertRaises(ShapeMismatch):
            model_error(self.model, np.ones(8))
