import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import InvalidStepError, SingularLocalJacobianError
from src.localdiff import build_local_kkt, compute_local_jacobians, finite_diff_local, local_jacobian
from src.model import generate_random
from src.solver import solve
from tests.helpers import consensus_problem, counterexample_problem, scalar_box_problem


class TestLocalKkt(unittest.TestCase):
    def test_consensus_matrices(self):
        problem = consensus_problem()
        kkt = build_local_kkt(problem, 0, solve(problem))
        assert_allclose(kkt.dz_G, [[1.0]])
        # columns: θ_1 (through c = −θ), d, ν
        assert_allclose(kkt.dtheta_G, [[-1.0, 0.0, 1.0]])

    def test_active_box_matrices(self):
        problem = scalar_box_problem(2.0)
        kkt = build_local_kkt(problem, 0, solve(problem))
        assert_allclose(kkt.dz_G, [[1.0, 1.0], [1.0, 0.0]], atol=1e-9)

    def test_inactive_row_has_no_primal_entries(self):
        problem = scalar_box_problem(0.5)
        kkt = build_local_kkt(problem, 0, solve(problem))
        assert_allclose(kkt.dz_G[1], [0.0, -0.5], atol=1e-9)


class TestLocalJacobian(unittest.TestCase):
    def test_unconstrained_scalar(self):
        problem = consensus_problem()
        lj = local_jacobian(build_local_kkt(problem, 0, solve(problem)))
        assert_allclose(lj.d_theta_i, [[1.0]])
        assert_allclose(lj.d_nu, [[-1.0]])
        self.assertEqual(lj.d_lambda.shape, (1, 0))
        assert_allclose(lj.d_theta_bar, [[1.0, 0.0, -1.0]])

    def test_active_box(self):
        problem = scalar_box_problem(2.0)
        lj = local_jacobian(build_local_kkt(problem, 0, solve(problem)))
        assert_allclose(lj.d_theta_i, [[0.0, 1.0]], atol=1e-9)

    def test_inactive_box(self):
        problem = scalar_box_problem(0.5)
        lj = local_jacobian(build_local_kkt(problem, 0, solve(problem)))
        assert_allclose(lj.d_theta_i, [[1.0, 0.0]], atol=1e-9)

    def test_singular_local_system_names_subproblem(self):
        problem = counterexample_problem()
        with self.assertRaises(SingularLocalJacobianError) as ctx:
            compute_local_jacobians(problem, solve(problem))
        self.assertEqual(ctx.exception.subproblem, 1)

    def test_primal_block_inverse_is_symmetric_psd(self):
        for seed in range(5):
            with self.subTest(seed=seed):
                problem = generate_random(3, 4, l=2, k=1, n_eq=1, n_ineq=1, seed=seed)
                solution = solve(problem)
                for i, lj in enumerate(compute_local_jacobians(problem, solution)):
                    G = lj.primal_block_inv
                    assert_allclose(G, G.T, atol=1e-12)
                    n = problem.subproblems[i].n
                    direct = np.linalg.inv(build_local_kkt(problem, i, solution).dz_G)[:n, :n]
                    assert_allclose(G, direct, rtol=1e-8, atol=1e-10)
                    self.assertGreaterEqual(np.linalg.eigvalsh(0.5 * (G + G.T)).min(), -1e-9)

    def test_coupling_sparsity_follows_blocks(self):
        problem = generate_random(6, 3, n_eq=2, n_ineq=2, structure="banded(1)", seed=4)
        for lj in compute_local_jacobians(problem, solve(problem)):
            block = problem.coupling.block(lj.subproblem)
            untouched = ~np.any(block != 0.0, axis=1)
            assert_array_equal(lj.d_coupling[:, untouched], 0.0)

    def test_parallel_matches_serial(self):
        problem = generate_random(5, 3, l=1, n_eq=1, n_ineq=1, seed=1)
        solution = solve(problem)
        serial = compute_local_jacobians(problem, solution)
        parallel = compute_local_jacobians(problem, solution, parallel=True, threads=3)
        for a, b in zip(serial, parallel):
            assert_allclose(a.d_theta_bar, b.d_theta_bar)


class TestFiniteDiffLocal(unittest.TestCase):
    def test_matches_unconstrained_scalar(self):
        problem = consensus_problem()
        solution = solve(problem)
        est = finite_diff_local(problem, 0, solution, h=1e-5)
        exact = local_jacobian(build_local_kkt(problem, 0, solution))
        assert_allclose(est.d_theta_bar, exact.d_theta_bar, atol=1e-8)

    def test_active_box_offset(self):
        problem = scalar_box_problem(2.0)
        est = finite_diff_local(problem, 0, solve(problem))
        assert_allclose(est.d_theta_i[0, 1], 1.0, atol=1e-6)

    def test_random_subproblems(self):
        for seed in range(5):
            with self.subTest(seed=seed):
                problem = generate_random(3, 3, l=2, n_eq=1, n_ineq=1, seed=seed)
                solution = solve(problem)
                for i in range(problem.N):
                    est = finite_diff_local(problem, i, solution)
                    exact = local_jacobian(build_local_kkt(problem, i, solution))
                    assert_allclose(est.d_theta_bar, exact.d_theta_bar, atol=1e-5)

    def test_invalid_step(self):
        problem = consensus_problem()
        with self.assertRaises(InvalidStepError):
            finite_diff_local(problem, 0, solve(problem), h=0.0)


if __name__ == '__main__':
    unittest.main()
