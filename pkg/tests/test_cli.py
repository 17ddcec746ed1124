import json
import os
import tempfile
import unittest
from unittest.mock import patch

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from src.cli import main, parse_sweep
from src.errors import SingularCouplingError
from src.schemas import problem_to_document
from tests.helpers import CONSENSUS_JACOBIAN, consensus_problem, counterexample_problem


@patch('builtins.print')
class TestCli(unittest.TestCase):
    def setUp(self):
        self.folder = tempfile.TemporaryDirectory()
        self.addCleanup(self.folder.cleanup)

    def path(self, name: str) -> str:
        return os.path.join(self.folder.name, name)

    def write_problem(self, problem, name="problem.json") -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(problem_to_document(problem).model_dump_json())
        return path

    def test_pipeline_on_consensus(self, _print):
        problem = self.write_problem(consensus_problem())
        solution = self.path("solution.json")
        self.assertEqual(main(["solve", problem, "-o", solution]), 0)
        with open(solution, "r", encoding="utf-8") as f:
            doc = json.load(f)
        assert_allclose(doc["nu"], [1.0], atol=1e-9)
        self.assertIn("lambda", doc)
        self.assertTrue(doc["assumptions"]["all_ok"])

        for mode in ("central", "decentralized", "finite-difference"):
            with self.subTest(mode=mode):
                out = self.path(f"jac-{mode}.json")
                self.assertEqual(main(["diff", problem, solution, "--mode", mode, "-o", out]), 0)
                with open(out, "r", encoding="utf-8") as f:
                    assert_allclose(json.load(f)["assembled"], CONSENSUS_JACOBIAN, atol=1e-8)

    def test_generate_graph_and_distributed(self, _print):
        problem = self.path("chain.json")
        self.assertEqual(main(["gen", "--kind", "chain", "--T", "6", "--n", "2", "--seed", "3", "-o", problem]), 0)
        solution = self.path("solution.json")
        self.assertEqual(main(["solve", problem, "-o", solution]), 0)

        graph = self.path("graph.json")
        self.assertEqual(main(["graph", problem, "--omega", "1", "-o", graph]), 0)
        with open(graph, "r", encoding="utf-8") as f:
            doc = json.load(f)
        self.assertEqual(doc["bandwidth_mc"], 1)
        self.assertEqual(len(doc["projected_sizes"]), 6)

        run = self.path("run.json")
        rounds = self.path("rounds.csv")
        code = main(["dist-diff", problem, solution, "--omega", "10", "--rounds", "5", "--csv", rounds, "-o", run])
        self.assertEqual(code, 0)
        with open(run, "r", encoding="utf-8") as f:
            doc = json.load(f)
        self.assertTrue(doc["converged"])
        self.assertEqual(doc["alpha"], 0.0)
        df = pd.read_csv(rounds)
        for column in ("t", "err_inf", "alpha_bound_t", "msgs", "scalars_moved"):
            self.assertIn(column, df.columns)
        self.assertEqual(df["t"].iloc[0], 0)

    def test_random_generation_options(self, _print):
        out = self.path("random.json")
        code = main(["gen", "--N", "4", "--n", "3", "--l", "1", "--n-eq", "1", "--n-ineq", "2",
                     "--structure", "banded(1)", "-o", out])
        self.assertEqual(code, 0)
        with open(out, "r", encoding="utf-8") as f:
            doc = json.load(f)
        self.assertEqual(len(doc["subproblems"]), 4)
        self.assertEqual(len(doc["coupling"]["f"]), 2)

    def test_assumption_violation_exit_code(self, _print):
        problem = self.write_problem(counterexample_problem())
        solution = self.path("solution.json")
        self.assertEqual(main(["solve", problem, "-o", solution]), 0)
        self.assertEqual(main(["diff", problem, solution, "--mode", "central"]), 2)
        self.assertEqual(main(["diff", problem, solution, "--mode", "central", "--no-check"]), 0)

    def test_missing_file_exit_code(self, _print):
        self.assertEqual(main(["solve", self.path("missing.json")]), 2)

    def test_malformed_document_exit_code(self, _print):
        path = self.path("bad.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"subproblems": "nope"}, f)
        self.assertEqual(main(["solve", path]), 2)

    @patch('src.cli.differentiate')
    def test_numerical_failure_exit_code(self, mock_diff, _print):
        mock_diff.side_effect = SingularCouplingError("coupling system is singular")
        problem = self.write_problem(consensus_problem())
        solution = self.path("solution.json")
        main(["solve", problem, "-o", solution])
        self.assertEqual(main(["diff", problem, solution]), 3)

    @patch('src.cli.differentiate')
    def test_linear_algebra_failure_exit_code(self, mock_diff, _print):
        mock_diff.side_effect = np.linalg.LinAlgError("Singular matrix")
        problem = self.write_problem(consensus_problem())
        solution = self.path("solution.json")
        main(["solve", problem, "-o", solution])
        self.assertEqual(main(["diff", problem, solution]), 3)

    def test_bench_chain(self, _print):
        out = self.path("decay.csv")
        code = main(["bench-chain", "--sweep", "omega=0,1", "--T", "4", "--n", "2", "--stiffness", "0.5",
                     "-o", out])
        self.assertEqual(code, 0)
        with open(out, "r", encoding="utf-8") as f:
            self.assertTrue(f.readline().startswith("# config-hash: "))

    def test_parse_sweep(self, _print):
        self.assertEqual(parse_sweep("N=2,5,10"), [2.0, 5.0, 10.0])
        self.assertEqual(parse_sweep("0.1,0.2"), [0.1, 0.2])
        self.assertIsNone(parse_sweep(None))


if __name__ == '__main__':
    unittest.main()
