import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from src.coupling import build_coupling_system
from src.errors import InvalidDimensionsError, InvalidSingularValuesError
from src.graph import (
    build_graph, block_norm_profile, c_node, constraint_partition, decay_bound, decompose_dC,
    extreme_singular_values, graph_induced_bandwidth, neighborhood, p_node, project_system,
    subproblem_partition, summarize,
)
from src.localdiff import compute_local_jacobians
from src.model import generate_chain, generate_random
from src.solver import solve
from tests.helpers import chain_incidence_problem, consensus_problem, branching_graph, scalar_box_problem


def _system(problem):
    solution = solve(problem)
    local = compute_local_jacobians(problem, solution)
    return solution, local, build_coupling_system(problem, solution, local)


class TestBipartiteGraph(unittest.TestCase):
    def test_branching_neighborhoods(self):
        graph = branching_graph()
        self.assertEqual(neighborhood(graph, 1, 0).projected, [5])
        self.assertEqual(neighborhood(graph, 1, 1).projected, [5, 6, 7])
        self.assertEqual(neighborhood(graph, 2, 0).projected, [5, 6, 7])
        self.assertEqual(graph.two_hop_neighbors(1), [2])
        self.assertEqual(graph.degree(5), 2)

    def test_chain_is_a_path(self):
        graph = build_graph(chain_incidence_problem(4))
        self.assertEqual(graph.adjacency(), {0: [0], 1: [0, 1], 2: [1, 2], 3: [2]})
        self.assertEqual(graph.distance(p_node(0), p_node(3)), 6)
        self.assertEqual(graph.distance(p_node(0), c_node(2)), 5)

    def test_no_coupling(self):
        graph = build_graph(scalar_box_problem(2.0))
        self.assertEqual(graph.constraint_nodes, [])
        proj = neighborhood(graph, 0, 3)
        self.assertEqual((proj.interior, proj.projected, proj.members, proj.exterior), ([], [], [], []))

    def test_chain_middle_node(self):
        graph = build_graph(chain_incidence_problem(5))
        proj = neighborhood(graph, 2, 0)
        self.assertEqual(proj.interior, [1, 2])
        self.assertEqual(proj.projected, [1, 2])
        self.assertEqual(proj.members, [1, 2, 3])
        self.assertEqual(proj.exterior, [0, 3])

    def test_saturation_and_nesting(self):
        graph = build_graph(chain_incidence_problem(8))
        for k in range(8):
            previous = None
            for omega in range(8):
                proj = neighborhood(graph, k, omega)
                if previous is not None:
                    self.assertTrue(set(previous.projected) <= set(proj.projected))
                    self.assertTrue(set(previous.members) <= set(proj.members))
                previous = proj
            self.assertEqual(previous.projected, list(range(7)))
            self.assertEqual(previous.exterior, [])

    def test_exterior_modes(self):
        graph = build_graph(chain_incidence_problem(6))
        omega_mode = neighborhood(graph, 2, 1, exterior="omega")
        own_mode = neighborhood(graph, 2, 1, exterior="own")
        self.assertEqual(omega_mode.exterior, [j for j in range(5) if j not in omega_mode.projected])
        self.assertEqual(own_mode.exterior, [j for j in range(5) if j not in own_mode.interior])

    def test_invalid_neighborhood_arguments(self):
        graph = branching_graph()
        with self.assertRaises(InvalidDimensionsError):
            neighborhood(graph, 0, -1)
        with self.assertRaises(InvalidDimensionsError):
            neighborhood(graph, 9, 0)
        with self.assertRaises(InvalidDimensionsError):
            neighborhood(graph, 0, 0, exterior="all")


class TestProjection(unittest.TestCase):
    def test_consensus_projection(self):
        problem = consensus_problem()
        _, _, system = _system(problem)
        graph = build_graph(problem)
        for k in range(2):
            dC_k, dC_out, q_k = project_system(system.local_terms, neighborhood(graph, k, 0))
            assert_allclose(dC_k, [[2.0]])
            self.assertEqual(dC_out.shape, (1, 0))
            assert_allclose(q_k, [[1.0, 1.0, -1.0]])

    def test_projection_matches_slicing(self):
        for seed in range(3):
            problem = generate_random(8, 3, l=1, n_eq=4, n_ineq=3, structure="banded(2)", seed=seed)
            _, _, system = _system(problem)
            graph = build_graph(problem)
            for k in range(problem.N):
                for omega in range(3):
                    with self.subTest(seed=seed, node=k, omega=omega):
                        proj = neighborhood(graph, k, omega)
                        dC_k, dC_out, q_k = project_system(system.local_terms, proj)
                        V, X = proj.projected, proj.exterior
                        assert_allclose(dC_k, system.dC[np.ix_(V, V)], atol=1e-14)
                        assert_allclose(dC_out, system.dC[np.ix_(V, X)], atol=1e-14)
                        assert_allclose(q_k, system.q[V], atol=1e-14)

    def test_decomposition_matches_assembly(self):
        for seed in range(5):
            with self.subTest(seed=seed):
                problem = generate_random(5, 3, l=2, n_eq=2, n_ineq=2, seed=seed)
                solution, local, system = _system(problem)
                assert_allclose(decompose_dC(problem, local, solution), system.dC, atol=1e-10)

    def test_consensus_decomposition(self):
        problem = consensus_problem()
        solution, local, _ = _system(problem)
        assert_allclose(decompose_dC(problem, local, solution), [[2.0]])


class TestBandwidthAndDecay(unittest.TestCase):
    def test_chain_bandwidths(self):
        problem = generate_chain(8, 2, seed=0)
        _, _, system = _system(problem)
        graph = build_graph(problem)
        rows = constraint_partition(range(problem.n_coupling))
        b_mc = graph_induced_bandwidth(problem.coupling_matrix(), graph, rows, subproblem_partition(problem))
        b_dc = graph_induced_bandwidth(system.dC, graph, rows, rows)
        self.assertEqual(b_mc, 1)
        self.assertLessEqual(b_dc, 2 * b_mc)

    def test_dc_bandwidth_at_most_twice_coupling_bandwidth(self):
        for seed in range(10):
            with self.subTest(seed=seed):
                problem = generate_random(8, 3, n_eq=3, n_ineq=2, structure="banded(2)", seed=seed)
                _, _, system = _system(problem)
                graph = build_graph(problem)
                rows = constraint_partition(range(problem.n_coupling))
                b_mc = graph_induced_bandwidth(problem.coupling_matrix(), graph, rows,
                                               subproblem_partition(problem))
                self.assertLessEqual(graph_induced_bandwidth(system.dC, graph, rows, rows), 2 * b_mc)

    def test_zero_matrix_has_zero_bandwidth(self):
        problem = chain_incidence_problem(4)
        graph = build_graph(problem)
        rows = constraint_partition(range(3))
        self.assertEqual(graph_induced_bandwidth(np.zeros((3, 3)), graph, rows, rows), 0)

    def test_decay_bound_edge_cases(self):
        self.assertEqual(decay_bound(2.0, 2.0, 1, 0), 0.5)
        self.assertEqual(decay_bound(2.0, 2.0, 1, 5), 0.0)
        self.assertEqual(decay_bound(3.0, 1.0, 2, 2), 3.0)
        self.assertEqual(decay_bound(3.0, 1.0, 2, math.inf), 0.0)
        with self.assertRaises(InvalidSingularValuesError):
            decay_bound(1.0, 2.0, 1, 0)
        with self.assertRaises(InvalidSingularValuesError):
            decay_bound(1.0, 0.0, 1, 0)
        with self.assertRaises(InvalidDimensionsError):
            decay_bound(2.0, 1.0, 0, 1)

    def test_inverse_blocks_respect_decay_bound(self):
        for seed in range(10):
            with self.subTest(seed=seed):
                problem = generate_chain(10, 2, buffer=0.6, seed=seed)
                _, _, system = _system(problem)
                graph = build_graph(problem)
                rows = constraint_partition(range(problem.n_coupling))
                bandwidth = max(graph_induced_bandwidth(system.dC, graph, rows, rows), 1)
                s_max, s_min = extreme_singular_values(system.dC)
                inverse = np.linalg.inv(system.dC)
                for distance, norm in block_norm_profile(inverse, graph, rows):
                    self.assertLessEqual(norm, decay_bound(s_max, s_min, bandwidth, distance) * (1 + 1e-9))


class TestSummary(unittest.TestCase):
    def test_chain_summary(self):
        summary = summarize(chain_incidence_problem(5), omega=1)
        self.assertEqual(summary.bandwidth_mc, 1)
        self.assertEqual(summary.bandwidth_dc_structural, 2)
        self.assertEqual(summary.degrees, [2, 2, 2, 2])
        self.assertEqual(summary.projected_sizes, [2, 3, 4, 3, 2])


if __name__ == '__main__':
    unittest.main()
