#!/usr/bin/python3
"""
Contains tests for the functions defined in the 'joint' module.
- JointConfig
- expected_pde_count
- frequency_continuation
- joint_invert
- disjoint_invert
- observed_invert
"""

from joint_fwi import joint
from joint_fwi.acquisition import apply_mask, forward_data, make_mask, surface_survey
from joint_fwi.constants import ROOT_TOL, SNR_CAP
from joint_fwi.core import ModelGrid
from joint_fwi.errors import BadSpec, EmptySchedule, ShapeMismatch
from joint_fwi.helmholtz import PDECounter
from joint_fwi.lowrank import residual
from joint_fwi.probes import draw_probes

import numpy as np

from dataclasses import replace
import math
import unittest
from unittest.mock import patch


class JointTest(unittest.TestCase):
    """
    Contains tests to see that the inversion pipelines alternate and account as intended.
    """

    def setUp(self):
        """
        Contains objects meant as essential parameters for 'joint' functions.

        background, truth: 16x20 models at h=10, the truth holding a 2300 m/s block.
        survey: 6 co-located surface positions.
        omegas: 8 Hz and 12 Hz.
        full, masked: SliceData lists with all entries and with half of them.
        counter: Private PDE ledger.
        """
        velocity = np.full((16, 20), 2000.0)
        self.background = ModelGrid.from_velocity(velocity, 10.0)
        velocity[6:10, 8:12] = 2300.0
        self.truth = ModelGrid.from_velocity(velocity, 10.0)
        self.survey = surface_survey(self.truth, 6)
        self.omegas = (2 * math.pi * 8, 2 * math.pi * 12)
        self.full, self.masked = [], []
        for number, omega in enumerate(self.omegas):
            data = forward_data(self.truth, self.survey, omega, 1.0)
            self.full.append(joint.SliceData(1.0, apply_mask(np.ones((6, 6), dtype=bool), data), data))
            mask = make_mask(6, 6, 0.5, seed=number)
            self.masked.append(joint.SliceData(1.0, apply_mask(mask, data), data))
        self.counter = PDECounter()

    def config(self, **changes):
        options = dict(k_probes=2, outer_iters=2, lbfgs_iters=2, lasso_iters=50, root_iters=4,
                       seed=5, counter=self.counter)
        options.update(changes)
        return joint.JointConfig(**options)

    def test_config_validation(self):
        """
        Tests that negative iteration counts, empty probe blocks and negative weights are rejected.
        """
        with self.assertRaises(BadSpec):
            joint.JointConfig(outer_iters=-1)
        with self.assertRaises(BadSpec):
            joint.JointConfig(k_probes=0)
        with self.assertRaises(BadSpec):
            joint.JointConfig(lam=-1.0)
        self.assertIs(self.config().ledger, self.counter)

    def test_expected_pde_count(self):
        """
        Tests the per-iteration cost formula and its K/Ns ratio to all-shots FWI.
        """
        self.assertEqual(joint.expected_pde_count(4, 3, 2), 48)
        self.assertEqual(joint.expected_pde_count(4, 3, 0), 12)
        self.assertEqual(joint.expected_pde_count(4, 3, 0, cached=False), 0)
        self.assertEqual(joint.expected_pde_count(2, 2, 3) * 6, joint.expected_pde_count(6, 2, 3) * 2)

    def test_frequency_continuation(self):
        """
        Tests band order, warm starts and schedule errors.
        """
        calls = []

        def runner(band, m):
            calls.append((band, m))
            return m.with_model(m.m * 0.5)

        final = joint.frequency_continuation([(1.0, 2.0), (2.0, 3.0)], runner, self.background)
        self.assertEqual([band for band, _ in calls], [(1.0, 2.0), (2.0, 3.0)])
        self.assertIs(calls[0][1], self.background)
        np.testing.assert_array_equal(calls[1][1].m, self.background.m * 0.5)
        np.testing.assert_array_equal(final.m, self.background.m * 0.25)
        calls.clear()
        joint.frequency_continuation([(4.0,)], runner, self.background)
        self.assertEqual(len(calls), 1)
        with self.assertRaises(EmptySchedule):
            joint.frequency_continuation([], runner, self.background)
        with self.assertRaises(EmptySchedule):
            joint.frequency_continuation([()], runner, self.background)
        with self.assertRaises(BadSpec):
            joint.frequency_continuation([(5.0,), (3.0,)], runner, self.background)

    def test_input_checks(self):
        """
        Tests that empty, duplicated and mismatched slices are rejected.
        """
        config = self.config()
        with self.assertRaises(EmptySchedule):
            joint.joint_invert(config, self.survey, [], self.background)
        with self.assertRaises(BadSpec):
            joint.joint_invert(config, self.survey, [self.full[0], self.full[0]], self.background)
        with self.assertRaises(ShapeMismatch):
            joint.observed_invert(config, surface_survey(self.truth, 5), self.full, self.background)
        with self.assertRaises(BadSpec):
            joint.joint_invert(self.config(bands=((1.0,),)), self.survey, self.full, self.background)

    def test_zero_outer_iterations(self):
        """
        Tests that outer_iters = 0 returns the starting model with an empty history.
        """
        config = self.config(outer_iters=0)
        for pipeline in (joint.joint_invert, joint.observed_invert, joint.disjoint_invert):
            state = pipeline(config, self.survey, self.masked, self.background)
            self.assertIs(state.m, self.background)
            self.assertEqual(state.k, 0)

    def test_truth_fixed_point(self):
        """
        Tests that fully sampled data at the true model leave the model and the slices unchanged.
        """
        state = joint.joint_invert(self.config(), self.survey, self.full, self.truth, truth=self.truth)
        np.testing.assert_array_equal(state.m.m, self.truth.m)
        self.assertEqual(state.k, 2)
        for record in state.history:
            self.assertEqual(record.model_error, 0.0)
            self.assertEqual(record.lbfgs_iters, 0)
            self.assertEqual(record.snr, {omega: SNR_CAP for omega in self.omegas})
            self.assertEqual(record.pde_solves, joint.expected_pde_count(2, 2, 1))
        for data in self.full:
            self.assertIsNone(state.factorizations[data.omega])
            np.testing.assert_array_equal(state.recovered[data.omega].data, data.truth.data)

    def test_joint_pde_budget(self):
        """
        Tests that every joint iteration costs exactly expected_pde_count solves.
        """
        state = joint.joint_invert(self.config(), self.survey, self.masked, self.background, truth=self.truth)
        self.assertEqual(state.k, 2)
        for record in state.history:
            self.assertEqual(record.pde_solves, joint.expected_pde_count(2, 2, record.lbfgs_evals))
            self.assertLessEqual(record.lbfgs_iters, 2)
            self.assertTrue(math.isfinite(record.model_error))
            self.assertEqual(set(record.snr), set(self.omegas))
            self.assertLessEqual(record.relaxed + record.failed, 2)
        self.assertEqual(state.history[-1].pde_total, self.counter.total)
        for data in self.masked:
            self.assertEqual(state.recovered[data.omega].shape, (6, 6))
            self.assertTrue(state.traces[data.omega].points)

    def test_probe_schedule(self):
        """
        Tests that iteration k draws W from the (seed, PROBE_STREAM, k) stream.
        """
        state = joint.joint_invert(self.config(lbfgs_iters=1), self.survey, self.full, self.background)
        last = draw_probes(6, 2, seed=5, keys=(joint.PROBE_STREAM, 2))
        first = draw_probes(6, 2, seed=5, keys=(joint.PROBE_STREAM, 1))
        np.testing.assert_array_equal(state.W.W, last.W)
        self.assertFalse(np.array_equal(first.W, last.W))

    def test_band_split(self):
        """
        Tests that the outer iterations are split across bands, earlier bands first.
        """
        config = self.config(outer_iters=3, lbfgs_iters=1, bands=((self.omegas[0],), self.omegas))
        state = joint.joint_invert(config, self.survey, self.full, self.background)
        self.assertEqual([record.band for record in state.history], [0, 0, 1])
        self.assertEqual(state.history[0].omegas, (self.omegas[0],))
        self.assertEqual(state.history[2].omegas, self.omegas)
        flat = joint.joint_invert(replace(config, continuation=False), self.survey, self.full, self.background)
        self.assertEqual([record.band for record in flat.history], [0, 0, 0])

    def test_disjoint(self):
        """
        Tests that complete slices pass through stage 1 and masked ones are completed once.
        """
        state = joint.disjoint_invert(self.config(outer_iters=0), self.survey, self.full, self.background)
        for data in self.full:
            np.testing.assert_array_equal(state.recovered[data.omega].data, data.acquisition.observed.data)
            self.assertIsNone(state.factorizations[data.omega])
        self.counter.reset()
        state = joint.disjoint_invert(self.config(), self.survey, self.masked, self.background, truth=self.truth)
        self.assertEqual(state.k, 2)
        for data in self.masked:
            self.assertIsNotNone(state.factorizations[data.omega])
        for record in state.history:
            self.assertEqual(record.pde_solves, joint.expected_pde_count(2, 2, record.lbfgs_evals, cached=False))
        self.assertEqual(state.history[1].relaxed + state.history[1].failed, 0)

    def test_observed(self):
        """
        Tests all-shots FWI on observed entries: full cost per evaluation and a lower misfit.
        """
        state = joint.observed_invert(self.config(), self.survey, self.masked, self.background, truth=self.truth)
        self.assertEqual(state.k, 2)
        for record in state.history:
            self.assertEqual(record.pde_solves, joint.expected_pde_count(6, 2, record.lbfgs_evals, cached=False))
            self.assertEqual(record.snr, {})
        self.assertFalse(np.array_equal(state.m.m, self.background.m))

    def test_block_descent(self):
        """
        Tests that every completion block meets its budget on the joint residual and every model block lowers phi.
        """
        complete_once, solve_once = joint._complete, joint.solve_m_subproblem
        completions, updates = [], []

        def complete(P, F0, config):
            F, trace, status = complete_once(P, F0, config)
            completions.append((P, F, status))
            return F, trace, status

        def update(*args, **kwargs):
            m, result = solve_once(*args, **kwargs)
            updates.append(result)
            return m, result

        with patch("joint_fwi.joint._complete", side_effect=complete), \
                patch("joint_fwi.joint.solve_m_subproblem", side_effect=update):
            joint.joint_invert(self.config(root_iters=10, lasso_iters=300), self.survey, self.masked,
                               self.background)
        self.assertEqual(len(completions), 4)
        self.assertEqual(len(updates), 2)
        for P, F, status in completions:
            self.assertGreater(P.lam, 0.0)
            value = residual(P, F)
            self.assertTrue(math.isfinite(value))
            if status != "failed":
                budget = P.epsilon if status == "ok" else 2 * P.epsilon
                self.assertLessEqual(value, budget + ROOT_TOL * max(1.0, budget))
        for result in updates:
            self.assertLessEqual(result.f, result.history[0])
