import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import run as cli
from scripts.ambient_metric import PulseSpec
from scripts.scenarios import (
    EXIT_ACCEPTANCE,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    SCENARIOS,
    SQRT8,
    ExperimentConfig,
    RunReport,
    ScenarioRunner,
    calibrate_pulse_amplitude,
    config_error_report,
)
from scripts.utils import ConfigError, ConvergenceError, InvalidParameterError


class TestExperimentConfig(unittest.TestCase):
    def test_defaults_merged(self):
        config = ExperimentConfig.default("solve")
        self.assertEqual(config.lambdas, [100.0])
        self.assertEqual(config.xi_seeds, [[0.0, 0.0, 0.0]])
        self.assertEqual(config.name, "solve")
        self.assertEqual(config.metric["variant"], "schwarzschild")

    def test_every_scenario_has_defaults(self):
        for scenario in SCENARIOS:
            self.assertEqual(ExperimentConfig.default(scenario).scenario, scenario)

    def test_rejects_bad_input(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"scenario": "warp-drive"})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"scenario": "solve", "colour": "red"})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"scenario": "solve", "lambdas": [-1.0]})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"scenario": "solve", "xi_seeds": [[0.1, 0.2]]})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"scenario": "solve", "metric": {"mass": 2.0}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict(["solve"])

    def test_overrides(self):
        config = ExperimentConfig.default("solve").with_overrides(
            {"lambda": "1e3", "xi": "[0.5, 0, 0]", "metric.mass": "4", "solver.lmax": "12", "name": "g2 run"}
        )
        self.assertEqual(config.lambdas, [1000.0])
        self.assertEqual(config.xi_seeds, [[0.5, 0.0, 0.0]])
        self.assertEqual(config.metric, {"variant": "schwarzschild", "mass": 4})
        self.assertEqual(config.solver_config().lmax, 12)
        self.assertEqual(config.name, "g2_run")
        self.assertEqual(config.family().mass, 4.0)

    def test_bad_overrides(self):
        config = ExperimentConfig.default("solve")
        with self.assertRaises(ConfigError):
            config.with_overrides({"bogus.key": "1"})
        with self.assertRaises(ConfigError):
            config.with_overrides({"metric.variant": "kerr"}).family()
        with self.assertRaises(ConfigError):
            config.with_overrides({"solver.colour": "red"}).solver_config()
        with self.assertRaises(ConfigError):
            config.with_overrides({"solver.delta": "0.9"}).solver_config()

    def test_load_yaml(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "exp.yaml"
            path.write_text("scenario: energy\nlambdas: [50]\nmetric:\n  variant: euclidean\n", encoding="utf-8")
            config = ExperimentConfig.load(path)
            self.assertEqual(config.scenario, "energy")
            self.assertEqual(config.lambdas, [50.0])

            broken = Path(tmp) / "broken.yaml"
            broken.write_text("scenario: [energy\n", encoding="utf-8")
            with self.assertRaises(ConfigError):
                ExperimentConfig.load(broken)
        with self.assertRaises(ConfigError):
            ExperimentConfig.load(Path("/nonexistent/exp.yaml"))

    def test_shipped_configs_load(self):
        configs = sorted(Path(__file__).resolve().parents[1].joinpath("configs").glob("*.yaml"))
        self.assertTrue(configs)
        for path in configs:
            config = ExperimentConfig.load(path)
            config.family()
            config.solver_config()


class TestRunReport(unittest.TestCase):
    def test_passed_and_serialization(self):
        rep = RunReport(scenario="solve", config={})
        self.assertTrue(rep.passed)
        rep.check(5, "ok", True, 1e-7, 1e-6)
        rep.add_table("ls", ["lambda", "kappa"], [[100.0, 4e-6], [200.0, 5e-7]])
        data = rep.to_dict()
        self.assertTrue(data["passed"])
        self.assertEqual(data["tables"]["ls"], {"header": ["lambda", "kappa"], "rows": 2})
        rep.check(5, "bad", False)
        self.assertFalse(rep.passed)

    def test_config_error_report(self):
        rep = config_error_report("solve", ConfigError("bad"))
        self.assertEqual(rep.exit_code, EXIT_CONFIG)
        self.assertFalse(rep.passed)


class TestCalibration(unittest.TestCase):
    def test_unsupported_shape(self):
        with self.assertRaises(InvalidParameterError):
            calibrate_pulse_amplitude("g4", 1000.0)

    def test_zero_profile_fails(self):
        # S ≡ 0 时径向导数恒为正, 任何幅度都不满足符号条件
        result = calibrate_pulse_amplitude("g2", 1000.0, b_max=8.0, profile_scale=0.0)
        self.assertEqual(result["status"], "calibration-failure")
        self.assertIsNone(result["amplitude"])

    def test_g2_sign_pattern(self):
        result = calibrate_pulse_amplitude("g2", 1000.0)
        self.assertEqual(result["status"], "calibrated")
        self.assertLess(result["radial_derivatives"][str(SQRT8)], 0.0)
        self.assertGreater(result["radial_derivatives"]["5.0"], 0.0)
        # |ξ| = 5 的球只接触支集外边界, 脉冲项为零
        self.assertLessEqual(abs(result["pulse_terms"]["5.0"]), 1e-6 * result["radial_derivatives"]["5.0"])

    def test_g2_requires_vanishing_pulse_at_five(self):
        # 支集伸到 4.5 时 |ξ| = 5 的球与脉冲带相交
        wide = classmethod(lambda cls, amplitude: cls(amplitude=amplitude, support=(3.0, 4.5), name="g2"))
        with patch.object(PulseSpec, "g2", wide):
            result = calibrate_pulse_amplitude("g2", 1000.0, b_max=64.0)
        self.assertEqual(result["status"], "calibration-failure")


class TestScenarioRunner(unittest.TestCase):
    def runner(self, scenario="solve", **kwargs):
        config = ExperimentConfig.from_dict({"scenario": scenario, **kwargs})
        return ScenarioRunner(config, verbose=False, write_outputs=False)

    def test_numerical_failure_exit_code(self):
        with patch.object(ScenarioRunner, "_run_solve", side_effect=ConvergenceError("stalled", trace=[3.0, 2.0])):
            rep = self.runner().run()
        self.assertEqual(rep.exit_code, EXIT_NUMERICAL)
        self.assertEqual(rep.error["type"], "ConvergenceError")
        self.assertEqual(rep.error["estimate"], 2.0)
        self.assertEqual(rep.error["trace"], [3.0, 2.0])

    def test_config_failure_exit_code(self):
        with patch.object(ScenarioRunner, "_run_solve", side_effect=InvalidParameterError("|ξ| in annulus")):
            rep = self.runner().run()
        self.assertEqual(rep.exit_code, EXIT_CONFIG)

    def test_acceptance_failure_exit_code(self):
        with patch.object(ScenarioRunner, "_run_solve", side_effect=lambda rep: rep.check(5, "fails", False)):
            rep = self.runner().run()
        self.assertEqual(rep.exit_code, EXIT_ACCEPTANCE)

    def test_outputs_written(self):
        def fake(rep):
            rep.add_table("ls", ["lambda", "kappa"], [[100.0, 4e-6]])
            rep.check(5, "ok", True)

        with tempfile.TemporaryDirectory() as tmp:
            config = ExperimentConfig.from_dict({"scenario": "solve", "output_dir": tmp, "name": "demo"})
            with patch.object(ScenarioRunner, "_run_solve", side_effect=fake):
                rep = ScenarioRunner(config, verbose=False).run()
            self.assertEqual(rep.exit_code, EXIT_OK)
            self.assertTrue((Path(tmp) / "demo_ls.csv").exists())
            with open(Path(tmp) / "demo_report.json", encoding="utf-8") as f:
                data = json.load(f)
            self.assertEqual(data["exit_code"], EXIT_OK)
            self.assertEqual(data["tables"]["ls"]["rows"], 1)

    def test_energy_scenario_euclidean(self):
        rep = self.runner(
            "energy", metric={"variant": "euclidean"}, lambdas=[50.0], xi_seeds=[[0.2, 0.0, 0.0]], options={"lmax": 12}
        ).run()
        self.assertEqual(rep.exit_code, EXIT_OK, rep.error)
        self.assertEqual(len(rep.tables["surfaces"]["rows"]), 1)


class TestCommandLine(unittest.TestCase):
    def test_split_args(self):
        positional, overrides = cli.split_args(["solve", "--lambda=400", "--xi=[0.5,0,0]"])
        self.assertEqual(positional, ["solve"])
        self.assertEqual(overrides, {"lambda": "400", "xi": "[0.5,0,0]"})
        with self.assertRaises(ConfigError):
            cli.split_args(["solve", "--lambda"])

    def test_resolve_config(self):
        config = cli.resolve_config(["counterexample", "g2"], {})
        self.assertEqual(config.scenario, "counterexample-g2")
        config = cli.resolve_config(["scenario", "far-outlying"], {"lambda": "2000"})
        self.assertEqual(config.lambdas, [2000.0])
        with self.assertRaises(ConfigError):
            cli.resolve_config(["counterexample", "g9"], {})
        with self.assertRaises(ConfigError):
            cli.resolve_config(["run"], {})

    def test_resolve_yaml_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "exp.yaml"
            path.write_text("scenario: energy\nmetric:\n  variant: euclidean\n", encoding="utf-8")
            config = cli.resolve_config(["run", str(path)], {"lambda": "40", "output_dir": tmp})
        self.assertEqual(config.scenario, "energy")
        self.assertEqual(config.lambdas, [40.0])
        self.assertEqual(config.metric["variant"], "euclidean")

    def test_unknown_mode_exits(self):
        with patch("sys.argv", ["run.py", "teleport"]), patch("builtins.print"):
            with self.assertRaises(SystemExit) as ctx:
                cli.main()
        self.assertEqual(ctx.exception.code, 1)

    def test_config_error_exits_four(self):
        with patch("sys.argv", ["run.py", "solve", "--bogus.key=1"]), patch("builtins.print"):
            with self.assertRaises(SystemExit) as ctx:
                cli.main()
        self.assertEqual(ctx.exception.code, EXIT_CONFIG)


if __name__ == "__main__":
    unittest.main()
