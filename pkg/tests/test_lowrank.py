#!/usr/bin/python3
"""
Contains tests for the functions defined in the 'lowrank' module.
- CompletionProblem
- ParetoTrace
- default_rank
- default_epsilon
- residual
- residual_gradient
- project_ball
- solve_lasso
- solve_completion
- init_factors
- recovered_slice
"""

from joint_fwi import lowrank
from joint_fwi.acquisition import apply_mask, make_mask
from joint_fwi.core import Domain, Factorization, FrequencySlice
from joint_fwi.errors import BadShape, BudgetTooTight, InconsistentProblem, ShapeMismatch
from joint_fwi.metrics import snr_db
from joint_fwi.midoff import midoff_map
from joint_fwi.probes import draw_probes

import numpy as np
import pytest

import unittest

SR = Domain.SOURCE_RECEIVER
MH = Domain.MIDPOINT_OFFSET


class LowrankTest(unittest.TestCase):
    """
    Contains tests to see that the factorized completion solvers behave as intended.
    """

    def setUp(self):
        """
        Contains objects meant as essential parameters for 'lowrank' functions.

        rng: Seeded generator.
        X: Complex 6x6 full-rank slice.
        full: All-ones 6x6 mask.
        half: 6x6 mask keeping 18 entries.
        """
        self.rng = np.random.default_rng(21)
        self.X = self.rng.standard_normal((6, 6)) + 1j * self.rng.standard_normal((6, 6))
        self.full = np.ones((6, 6), dtype=bool)
        self.half = make_mask(6, 6, 0.5, seed=2)

    def _acquisition(self, X, mask):
        return apply_mask(mask, FrequencySlice(2.0, SR, X))

    def _factors(self, rows, cols, k, domain):
        L = self.rng.standard_normal((rows, k)) + 1j * self.rng.standard_normal((rows, k))
        R = self.rng.standard_normal((k, cols)) + 1j * self.rng.standard_normal((k, cols))
        return Factorization(L, R, 0.0, domain)

    def test_problem_validation(self):
        """
        Tests that inconsistent budgets, weights and rank caps are rejected.
        """
        acq = self._acquisition(self.X, self.full)
        self.assertEqual(lowrank.CompletionProblem(acq, 0.0, 2).shape, (11, 11))
        self.assertEqual(lowrank.CompletionProblem(acq, 0.0, 2, domain=SR).shape, (6, 6))
        with self.assertRaises(InconsistentProblem):
            lowrank.CompletionProblem(acq, -1.0, 2)
        with self.assertRaises(InconsistentProblem):
            lowrank.CompletionProblem(acq, 0.0, 2, lam=1.0)
        block = draw_probes(6, 2, seed=1)
        with self.assertRaises(InconsistentProblem):
            lowrank.CompletionProblem(acq, 0.0, 2, sim_data=np.zeros((6, 2)), probes=block)
        with self.assertRaises(ShapeMismatch):
            lowrank.CompletionProblem(acq, 0.0, 2, lam=1.0, sim_data=np.zeros((6, 3)), probes=block)
        with self.assertRaises(BadShape):
            lowrank.CompletionProblem(acq, 0.0, 0)
        with self.assertRaises(BadShape):
            lowrank.CompletionProblem(acq, 0.0, 7, domain=SR)

    def test_defaults(self):
        """
        Tests the rank-cap rule and the residual budget rule.
        """
        self.assertEqual(lowrank.default_rank(40, 40), 5)
        self.assertEqual(lowrank.default_rank(100, 120), 10)
        acq = self._acquisition(self.X, self.half)
        expected = (1e-3 * np.linalg.norm(acq.observed.data)) ** 2
        self.assertAlmostEqual(lowrank.default_epsilon(acq, 1e-3), expected, places=15)

    def test_residual_zero_factors(self):
        """
        Tests that zero factors leave the whole observed energy.
        """
        acq = self._acquisition(self.X, self.half)
        P = lowrank.CompletionProblem(acq, 0.0, 2)
        zero = Factorization(np.zeros((11, 2)), np.zeros((2, 11)), 0.0)
        energy = float(np.linalg.norm(acq.observed.data) ** 2)
        self.assertAlmostEqual(lowrank.residual(P, zero), energy, places=10)
        with self.assertRaises(ShapeMismatch):
            lowrank.residual(P, Factorization(np.zeros((6, 2)), np.zeros((2, 6)), 0.0, SR))

    def test_residual_truncated_svd(self):
        """
        Tests that a rank-2 truncated SVD leaves the tail singular energy.
        """
        acq = self._acquisition(self.X, self.full)
        s = np.linalg.svd(self.X, compute_uv=False)
        P = lowrank.CompletionProblem(acq, 0.0, 2, domain=SR)
        F = lowrank.init_factors(self.X, 2, SR)
        self.assertAlmostEqual(lowrank.residual(P, F), float(np.sum(s[2:] ** 2)), places=9)
        Y = midoff_map(6, 6).forward(self.X)
        tail = np.linalg.svd(Y, compute_uv=False)[2:]
        P = lowrank.CompletionProblem(acq, 0.0, 2)
        F = lowrank.init_factors(Y, 2, MH)
        self.assertLessEqual(lowrank.residual(P, F), float(np.sum(tail**2)) + 1e-9)

    def test_residual_consistent_shots(self):
        """
        Tests that the shot term vanishes when FW is modeled from the same factors.
        """
        acq = self._acquisition(self.X, self.half)
        block = draw_probes(6, 3, seed=4)
        F = self._factors(11, 11, 2, MH)
        plain = lowrank.CompletionProblem(acq, 0.0, 2)
        sim_data = plain.to_data(F.product()).T @ block.W
        weighted = lowrank.CompletionProblem(acq, 0.0, 2, lam=2.5, sim_data=sim_data, probes=block)
        self.assertEqual(lowrank.residual(weighted, F), lowrank.residual(plain, F))

    def test_gradient_finite_difference(self):
        """
        Tests the gradient against central differences in both domains, with and without shots.
        """
        block = draw_probes(6, 3, seed=5)
        acq = self._acquisition(self.X, self.half)
        sim_data = self.rng.standard_normal((6, 3)) + 1j * self.rng.standard_normal((6, 3))
        h = 1e-5
        for domain, size in ((SR, 6), (MH, 11)):
            for lam in (0.0, 0.7):
                extra = dict(lam=lam, sim_data=sim_data, probes=block) if lam else {}
                P = lowrank.CompletionProblem(acq, 0.0, 2, domain=domain, **extra)
                F = self._factors(size, size, 2, domain)
                dF = self._factors(size, size, 2, domain)
                gL, gR = lowrank.residual_gradient(P, F)
                predicted = float(np.vdot(gL, dF.L).real + np.vdot(gR, dF.R).real)
                up = lowrank.residual(P, F.replace(F.L + h * dF.L, F.R + h * dF.R))
                down = lowrank.residual(P, F.replace(F.L - h * dF.L, F.R - h * dF.R))
                measured = (up - down) / (2 * h)
                self.assertLess(abs(measured - predicted), 1e-6 * abs(predicted))

    def test_gradient_structure(self):
        """
        Tests a vanishing gradient at an exact fit and the bilinear scaling in (L, R).
        """
        U = self.rng.standard_normal((6, 2)) + 1j * self.rng.standard_normal((6, 2))
        X = U @ U.conj().T
        acq = self._acquisition(X, self.full)
        P = lowrank.CompletionProblem(acq, 0.0, 2, domain=SR)
        F = lowrank.init_factors(X, 2, SR)
        gL, gR = lowrank.residual_gradient(P, F)
        self.assertLess(np.linalg.norm(gL) + np.linalg.norm(gR), 1e-9)
        P = lowrank.CompletionProblem(self._acquisition(self.X, self.half), 0.0, 2, domain=SR)
        F = self._factors(6, 6, 2, SR)
        gL, gR = lowrank.residual_gradient(P, F)
        gL2, gR2 = lowrank.residual_gradient(P, F.replace(F.L / 2, F.R * 2))
        np.testing.assert_allclose(gL2, 2 * gL, rtol=1e-12)
        np.testing.assert_allclose(gR2, gR / 2, rtol=1e-12)

    def test_project_ball(self):
        """
        Tests scaling onto the ball and the identity inside it.
        """
        F = Factorization(np.full((2, 1), 2.0), np.full((1, 2), 2.0), 8.0, SR)
        self.assertEqual(F.ball(), 8.0)
        projected = lowrank.project_ball(F, 2.0)
        np.testing.assert_array_equal(projected.L, F.L * 0.5)
        np.testing.assert_array_equal(projected.R, F.R * 0.5)
        self.assertAlmostEqual(projected.ball(), 2.0, places=12)
        inside = lowrank.project_ball(F, 10.0)
        np.testing.assert_array_equal(inside.L, F.L)
        G = self._factors(5, 4, 2, SR)
        self.assertAlmostEqual(lowrank.project_ball(G, 0.3).ball(), 0.3, places=12)
        with self.assertRaises(BadShape):
            lowrank.project_ball(F, -1.0)

    def test_lasso_zero_radius(self):
        """
        Tests that tau = 0 returns zero factors and v(0) = ||D_s||^2.
        """
        acq = self._acquisition(self.X, self.half)
        P = lowrank.CompletionProblem(acq, 0.0, 2, domain=SR)
        F, v = lowrank.solve_lasso(P, 0.0, self._factors(6, 6, 2, SR))
        self.assertFalse(np.any(F.L) or np.any(F.R))
        self.assertAlmostEqual(v, float(np.linalg.norm(acq.observed.data) ** 2), places=10)

    def test_lasso_rank_one(self):
        """
        Tests recovery of a rank-1 5x5 matrix from 15 entries with a generous radius.
        """
        x = self.rng.uniform(1.0, 2.0, 5)
        y = self.rng.uniform(1.0, 2.0, 5)
        X = np.outer(x, y)
        mask = np.zeros((5, 5), dtype=bool)
        for i in range(5):
            mask[i, [i, (i + 1) % 5, (i + 2) % 5]] = True
        acq = self._acquisition(X, mask)
        P = lowrank.CompletionProblem(acq, 0.0, 1, domain=SR)
        tau = 2 * np.linalg.norm(x) * np.linalg.norm(y)
        F0 = lowrank.init_factors(acq.observed, 1)
        F, v = lowrank.solve_lasso(P, tau, F0, max_iter=3000)
        self.assertLessEqual(F.ball(), tau * (1 + 1e-12))
        self.assertLess(np.linalg.norm(F.product() - X) / np.linalg.norm(X), 1e-4)
        self.assertLess(v, 1e-6)

    def test_lasso_warm_start(self):
        """
        Tests that a larger radius warm-started from the smaller one never raises v.
        """
        acq = self._acquisition(self.X, self.half)
        P = lowrank.CompletionProblem(acq, 0.0, 2, domain=SR)
        F0 = lowrank.init_factors(acq.observed, 2)
        trace = lowrank.ParetoTrace()
        F1, v1 = lowrank.solve_lasso(P, 0.5 * F0.ball(), F0, trace=trace)
        F2, v2 = lowrank.solve_lasso(P, F0.ball(), F1)
        self.assertLessEqual(v2, v1)
        self.assertLessEqual(F1.ball(), 0.5 * F0.ball() * (1 + 1e-12))
        self.assertTrue(trace.rows)
        self.assertEqual(set(trace.rows[0]), {"iter", "tau", "v_tau", "grad_norm"})
        with self.assertRaises(BadShape):
            lowrank.solve_lasso(P, 1.0, F0, max_iter=0)

    def test_completion_budget_met_by_zero(self):
        """
        Tests that a budget above ||D_s||^2 returns zero factors at once.
        """
        acq = self._acquisition(self.X, self.half)
        energy = float(np.linalg.norm(acq.observed.data) ** 2)
        P = lowrank.CompletionProblem(acq, energy * 1.01, 2)
        F, trace = lowrank.solve_completion(P)
        self.assertEqual(F.ball(), 0.0)
        self.assertEqual(len(trace.points), 1)
        self.assertAlmostEqual(trace.points[0][1], energy, places=10)

    def test_completion_exact(self):
        """
        Tests rank-1 and rank-3 30x30 completions from 60% of the entries.
        """
        for rank in (1, 3):
            X = 1e3 * self.rng.standard_normal((30, rank)) @ self.rng.standard_normal((rank, 30))
            acq = self._acquisition(X, make_mask(30, 30, 0.6, seed=rank))
            epsilon = 1e-8 * float(np.linalg.norm(acq.observed.data) ** 2)
            P = lowrank.CompletionProblem(acq, epsilon, rank, domain=SR)
            F, trace = lowrank.solve_completion(P, max_iter=3000)
            self.assertTrue(trace.is_monotone())
            self.assertLessEqual(abs(lowrank.residual(P, F) - epsilon), 1e-2 * epsilon)
            recovered = lowrank.recovered_slice(P, F)
            self.assertIs(recovered.domain, SR)
            self.assertLess(np.linalg.norm(recovered.data - X) / np.linalg.norm(X), 1e-3)
            nuclear = np.linalg.svd(F.product(), compute_uv=False).sum()
            self.assertLessEqual(nuclear, F.ball() * (1 + 1e-12) + 1e-8)

    def test_completion_midpoint_offset(self):
        """
        Tests completion of data that are rank 1 in the midpoint-offset domain.
        """
        mapping = midoff_map(20, 20)
        x = self.rng.uniform(1.0, 2.0, 39)
        y = self.rng.uniform(1.0, 2.0, 39)
        X = 1e3 * mapping.adjoint(np.outer(x, y))
        acq = self._acquisition(X, make_mask(20, 20, 0.6, seed=7))
        epsilon = 1e-8 * float(np.linalg.norm(acq.observed.data) ** 2)
        P = lowrank.CompletionProblem(acq, epsilon, 1)
        F, trace = lowrank.solve_completion(P, max_iter=3000)
        self.assertTrue(trace.is_monotone())
        recovered = lowrank.recovered_slice(P, F)
        self.assertLess(np.linalg.norm(recovered.data - X) / np.linalg.norm(X), 1e-2)

    def test_completion_budget_too_tight(self):
        """
        Tests that a rank-1 cap against full-rank data and a tiny budget raises.
        """
        acq = self._acquisition(self.X, self.full)
        epsilon = 1e-12 * float(np.linalg.norm(self.X) ** 2)
        P = lowrank.CompletionProblem(acq, epsilon, 1, domain=SR)
        with self.assertRaises(BudgetTooTight) as context:
            lowrank.solve_completion(P)
        self.assertIsNotNone(context.exception.factorization)
        self.assertGreaterEqual(len(context.exception.trace.points), 2)

    def test_completion_midpoint_offset_rank_three(self):
        """
        Tests that a rank-3 midpoint-offset completion meets its budget with a monotone trace.
        """
        mapping = midoff_map(16, 16)
        U = self.rng.standard_normal((31, 3))
        V = self.rng.standard_normal((3, 31))
        X = 1e3 * mapping.adjoint(U @ V)
        acq = self._acquisition(X, make_mask(16, 16, 0.6, seed=1))
        epsilon = 1e-6 * float(np.linalg.norm(acq.observed.data) ** 2)
        P = lowrank.CompletionProblem(acq, epsilon, 3)
        F, trace = lowrank.solve_completion(P, max_iter=5000, max_root_iter=30)
        self.assertLessEqual(abs(lowrank.residual(P, F) - epsilon), 1e-2 * epsilon)
        self.assertTrue(trace.is_monotone())

    def test_completion_exhausted_raises(self):
        """
        Tests that running out of root iterations above the budget raises instead of returning.
        """
        X = 1e3 * self.rng.standard_normal((12, 2)) @ self.rng.standard_normal((2, 12))
        acq = self._acquisition(X, make_mask(12, 12, 0.6, seed=4))
        epsilon = 1e-10 * float(np.linalg.norm(acq.observed.data) ** 2)
        P = lowrank.CompletionProblem(acq, epsilon, 2, domain=SR)
        with self.assertRaises(BudgetTooTight) as context:
            lowrank.solve_completion(P, max_root_iter=1, max_iter=20)
        self.assertIsNotNone(context.exception.factorization)
        self.assertEqual(len(context.exception.trace.points), 2)
        self.assertGreater(lowrank.residual(P, context.exception.factorization), epsilon)

    def test_completion_zero_data_with_shots(self):
        """
        Tests that zero observed data with lambda > 0 starts from the shot term instead of a zero radius.
        """
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 2] = True
        acq = self._acquisition(np.zeros((4, 4)), mask)
        block = draw_probes(4, 2, seed=3)
        sim_data = np.ones((4, 2))
        epsilon = 1e-6 * 0.5 * float(np.linalg.norm(sim_data) ** 2)
        P = lowrank.CompletionProblem(acq, epsilon, 2, lam=1.0, sim_data=sim_data, probes=block, domain=SR)
        F, trace = lowrank.solve_completion(P, max_iter=2000, max_root_iter=30)
        self.assertLessEqual(lowrank.residual(P, F), epsilon + 1e-2 * max(1.0, epsilon))
        self.assertGreater(trace.points[1][0], 0.0)
        self.assertTrue(trace.is_monotone())

    @pytest.mark.slow
    def test_completion_snr_by_keep_ratio(self):
        """
        Tests that the mean recovery SNR over five seeds does not drop as more entries are kept.
        """
        mean = {}
        for keep in (0.5, 0.25, 0.15):
            snrs = []
            for seed in range(5):
                rng = np.random.default_rng(seed)
                X = 1e3 * rng.standard_normal((30, 3)) @ rng.standard_normal((3, 30))
                acq = self._acquisition(X, make_mask(30, 30, keep, seed=seed))
                P = lowrank.CompletionProblem(acq, lowrank.default_epsilon(acq), 3, domain=SR)
                F, _ = lowrank.solve_completion(P, max_iter=3000, max_root_iter=20)
                snrs.append(snr_db(X, lowrank.recovered_slice(P, F).data))
            mean[keep] = float(np.mean(snrs))
        self.assertGreaterEqual(mean[0.5], mean[0.25])
        self.assertGreaterEqual(mean[0.25], mean[0.15])

    def test_init_factors(self):
        """
        Tests zero input, full-rank reconstruction and the rank-cap bound.
        """
        zero = lowrank.init_factors(np.zeros((4, 5)), 2, SR)
        self.assertFalse(np.any(zero.L) or np.any(zero.R))
        self.assertEqual(zero.ball(), 0.0)
        F = lowrank.init_factors(self.X, 6, SR)
        np.testing.assert_allclose(F.product(), self.X, atol=1e-9)
        s = np.linalg.svd(self.X, compute_uv=False)
        self.assertAlmostEqual(F.ball(), float(s.sum()), places=9)
        self.assertAlmostEqual(F.tau, float(s.sum()), places=9)
        u = self.rng.standard_normal((4, 1))
        F = lowrank.init_factors(u @ u.T, 1, SR)
        np.testing.assert_allclose(F.product(), u @ u.T, atol=1e-12)
        sliced = lowrank.init_factors(FrequencySlice(1.0, SR, self.X), 2)
        self.assertIs(sliced.domain, SR)
        with self.assertRaises(BadShape):
            lowrank.init_factors(self.X, 7)

    def test_pareto_trace(self):
        """
        Tests the monotonicity check of a trace.
        """
        trace = lowrank.ParetoTrace()
        for point in ((0.0, 10.0), (2.0, 3.0), (1.0, 5.0)):
            trace.add(*point)
        self.assertTrue(trace.is_monotone())
        trace.add(3.0, 4.0)
        self.assertFalse(trace.is_monotone())
        trace.lower(2.0, 1.0)
        self.assertEqual(trace.points, [(0.0, 10.0), (2.0, 1.0), (1.0, 5.0), (3.0, 1.0)])
        self.assertTrue(trace.is_monotone())
