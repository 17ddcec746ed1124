import unittest
from unittest.mock import patch

from fastapi.testclient import TestClient
from numpy.testing import assert_allclose

from backend import app
from src.errors import SingularCouplingError
from src.schemas import problem_to_document
from tests.helpers import CONSENSUS_JACOBIAN, chain_incidence_problem, consensus_problem, counterexample_problem


def _doc(problem) -> dict:
    return problem_to_document(problem).model_dump(mode="json")


class TestBackend(unittest.TestCase):
    def setUp(self):
        self.client = TestClient(app)

    def test_root(self):
        response = self.client.get("/")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["status"], "running")

    def test_generate(self):
        response = self.client.post("/api/generate", json={"N": 3, "n": 2, "n_eq": 1, "seed": 4})
        self.assertEqual(response.status_code, 200)
        self.assertEqual(len(response.json()["subproblems"]), 3)

        chain = self.client.post("/api/generate", json={"kind": "chain", "T": 5, "n": 2})
        self.assertEqual(chain.status_code, 200)
        self.assertEqual(len(chain.json()["subproblems"]), 5)

    def test_solve_uses_lambda_key(self):
        response = self.client.post("/api/solve", json={"problem": _doc(consensus_problem())})
        self.assertEqual(response.status_code, 200)
        body = response.json()
        self.assertIn("lambda", body)
        assert_allclose(body["nu"], [1.0], atol=1e-9)
        self.assertTrue(body["assumptions"]["all_ok"])

    def test_diff_modes(self):
        problem = _doc(consensus_problem())
        solution = self.client.post("/api/solve", json={"problem": problem}).json()
        for mode in ("central", "decentralized", "finite-difference"):
            with self.subTest(mode=mode):
                response = self.client.post("/api/diff", json={"problem": problem, "solution": solution,
                                                               "mode": mode})
                self.assertEqual(response.status_code, 200)
                assert_allclose(response.json()["assembled"], CONSENSUS_JACOBIAN, atol=1e-8)

    def test_diff_solves_when_solution_missing(self):
        response = self.client.post("/api/diff", json={"problem": _doc(consensus_problem())})
        self.assertEqual(response.status_code, 200)
        assert_allclose(response.json()["coupling_jacobian"], [[0.5, 0.5, -0.5]], atol=1e-9)

    def test_diff_rejects_assumption_violation(self):
        problem = _doc(counterexample_problem())
        self.assertEqual(self.client.post("/api/diff", json={"problem": problem}).status_code, 422)
        unchecked = self.client.post("/api/diff", json={"problem": problem, "mode": "central", "check": False})
        self.assertEqual(unchecked.status_code, 200)

    def test_invalid_mode(self):
        response = self.client.post("/api/diff", json={"problem": _doc(consensus_problem()), "mode": "adjoint"})
        self.assertEqual(response.status_code, 422)

    @patch('backend.differentiate')
    def test_numerical_failure_is_500(self, mock_diff):
        mock_diff.side_effect = SingularCouplingError("coupling system is singular")
        response = self.client.post("/api/diff", json={"problem": _doc(consensus_problem())})
        self.assertEqual(response.status_code, 500)

    def test_graph(self):
        response = self.client.post("/api/graph", json={"problem": _doc(chain_incidence_problem(5)), "omega": 1})
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["projected_sizes"], [2, 3, 4, 3, 2])

    def test_dist_diff(self):
        response = self.client.post("/api/dist-diff", json={"problem": _doc(chain_incidence_problem(5)),
                                                            "omega": 10, "rounds": 5})
        self.assertEqual(response.status_code, 200)
        body = response.json()
        self.assertTrue(body["converged"])
        self.assertEqual(body["alpha"], 0.0)
        self.assertEqual(body["rounds"][0]["t"], 0)
        self.assertLess(body["rounds"][1]["err_inf"], 1e-10)

    def test_complexity(self):
        response = self.client.get("/api/complexity", params={"rho": 1.0, "n_subproblems": 1})
        self.assertEqual(response.status_code, 200)
        self.assertAlmostEqual(response.json()["eta"], 0.25)
        bad = self.client.get("/api/complexity", params={"rho": -1.0, "n_subproblems": 1})
        self.assertEqual(bad.status_code, 422)


if __name__ == '__main__':
    unittest.main()
