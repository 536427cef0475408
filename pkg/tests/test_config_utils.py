import csv
import json
import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from scripts.config import Config
from scripts.utils import (
    ConfigError,
    ConvergenceError,
    DegenerateSurfaceError,
    InvalidParameterError,
    NumericalError,
    SingularParameterError,
    WillmoreLabError,
    fit_decay_exponent,
    gauss_legendre,
    run_jobs,
    sanitize_name,
    write_csv,
    write_json,
)


class TestConfig(unittest.TestCase):
    def test_defaults(self):
        self.assertEqual(Config.LMAX, 32)
        self.assertEqual(Config.LMAX_VERIFY, 64)
        self.assertEqual(Config.EXCLUSION_DELTA, 0.1)
        self.assertAlmostEqual(Config.xi_max(), 11.0)

    def test_to_dict_keys(self):
        data = Config.to_dict()
        for key in ("lmax", "tol_res", "tol_area", "seed", "output_dir", "workers"):
            self.assertIn(key, data)
        self.assertEqual(data["seed"], Config.SEED)

    def test_xi_max_follows_delta(self):
        with patch.object(Config, "EXCLUSION_DELTA", 0.25):
            self.assertAlmostEqual(Config.xi_max(), 5.0)


class TestErrors(unittest.TestCase):
    def test_hierarchy(self):
        self.assertTrue(issubclass(SingularParameterError, InvalidParameterError))
        self.assertTrue(issubclass(InvalidParameterError, ValueError))
        self.assertTrue(issubclass(ConvergenceError, NumericalError))
        self.assertTrue(issubclass(ConfigError, WillmoreLabError))

    def test_payloads(self):
        err = ConvergenceError("stalled", trace=[1.0, 0.5])
        self.assertEqual(err.trace, [1.0, 0.5])
        err = DegenerateSurfaceError("flat", worst_node=(3, 4))
        self.assertEqual(err.worst_node, (3, 4))
        err = NumericalError("bad", estimate=2.5)
        self.assertEqual(err.estimate, 2.5)


class TestSanitizeName(unittest.TestCase):
    def test_plain(self):
        self.assertEqual(sanitize_name("ls-orders"), "ls-orders")

    def test_symbols_replaced(self):
        self.assertEqual(sanitize_name("g2 λ=1e3"), "g2__1e3")

    def test_leading_digit(self):
        self.assertEqual(sanitize_name("2d"), "run_2d")

    def test_empty(self):
        self.assertEqual(sanitize_name(""), "run")


class TestNumerics(unittest.TestCase):
    def test_gauss_legendre_polynomial(self):
        x, w = gauss_legendre(8, 1.0, 3.0)
        self.assertAlmostEqual(float(np.sum(w * x**5)), (3.0**6 - 1.0) / 6.0, places=10)

    def test_fit_decay_exponent(self):
        xs = [100.0, 200.0, 400.0, 800.0]
        ys = [3.0 * x**-3 for x in xs]
        self.assertAlmostEqual(fit_decay_exponent(xs, ys), 3.0, places=10)

    def test_fit_decay_exponent_exact(self):
        self.assertIsNone(fit_decay_exponent([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]))

    def test_run_jobs_order(self):
        jobs = [(k, k + 1) for k in range(10)]
        self.assertEqual(run_jobs(pow, jobs, workers=4), [k ** (k + 1) for k in range(10)])
        self.assertEqual(run_jobs(pow, jobs, workers=1), [k ** (k + 1) for k in range(10)])


class TestWriters(unittest.TestCase):
    def test_write_json_numpy(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "sub" / "report.json"
            write_json(path, {"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True)})
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
            self.assertEqual(data, {"a": 1.5, "b": [0, 1, 2], "c": True})

    def test_write_csv_full_precision(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "table.csv"
            write_csv(path, ["lambda", "value"], [[100.0, math.pi], [200.0, "x"]])
            with open(path, encoding="utf-8") as f:
                rows = list(csv.reader(f))
            self.assertEqual(rows[0], ["lambda", "value"])
            self.assertEqual(float(rows[1][1]), math.pi)
            self.assertEqual(rows[2][1], "x")


if __name__ == "__main__":
    unittest.main()
