import unittest
import os
import io
import json
import tempfile
import contextlib
import spectralrank
import spectralrank.__main__
from spectralrank.exceptions import ExperimentLoadError
from spectralrank.exceptions import ConfigContentError


SMALL = {
    "rf1": ["d=5", "k=8", "m=4", "n=20", "steps=5"],
    "rf2": ["d=5", "k=8", "m=4", "n=20", "steps=5", "share_features=true"],
    "rf_gated": ["d=5", "k=8", "m=4", "n=20", "steps=3",
                 "batch_sizes=[10, 20]"],
    "mlp_sparse": ["d=6", "n=20", "width_factor=2", "steps=3"],
    "propagation": ["d=8", "n=12", "quadratic_depth=2",
                    'stages=["pointwise:16:relu", "rmsnorm", "attention"]'],
    "transformer_block": ["d=8", "T=12", "hidden=16", "vocab=4",
                          'activations=["relu", "gelu"]'],
    "shardwise": ["d=5", "k=8", "m=4", "n=20", "steps=3",
                  "partition=grid:2x2"],
    "polar_bench": ["matrices=5", "max_rows=6", "max_cols=7",
                    "max_cond=100"],
    "cost_table": [],
}


class TestRegistry(unittest.TestCase):

    def test_every_experiment_registered(self):
        self.assertEqual(set(spectralrank.experiments.by_name), set(SMALL))

    def test_unknown(self):
        with self.assertRaises(ExperimentLoadError):
            spectralrank.experiments.load_by_name("rf3")

    def test_validate(self):
        class Nameless(spectralrank.experiments.Experiment):
            def run(self):
                return [], {}

        class NoRun(spectralrank.experiments.Experiment):
            name = "norun"

        with self.assertRaises(ExperimentLoadError):
            spectralrank.experiments.validate(Nameless)
        with self.assertRaises(ExperimentLoadError):
            spectralrank.experiments.validate(NoRun)
        with self.assertRaises(ExperimentLoadError):
            spectralrank.experiments.validate(dict)

    def test_templates_extend_common_keys(self):
        for experiment in spectralrank.experiments.by_name.values():
            template = spectralrank.experiments.template_for(experiment)
            for key in spectralrank.config.commontemplate:
                self.assertIn(key, template)


class TestRuns(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.directory.cleanup()

    def run_small(self, name, extra=()):
        path = os.path.join(self.directory.name, "{}.csv".format(name))
        overrides = SMALL[name] + list(extra) + \
            ["output_path={}".format(json.dumps(path))]
        sidecar = spectralrank.harness.run_experiment(name,
                                                      overrides=overrides)
        return path, sidecar

    def header(self, path):
        with open(path, 'r') as fd:
            return fd.readline().strip().split(',')

    def test_all_experiments(self):
        for name in SMALL:
            path, sidecar = self.run_small(name)
            experiment = spectralrank.experiments.load_by_name(name)
            self.assertEqual(self.header(path),
                             list(experiment.layout(sidecar["config"])))
            with open(path + ".json", 'r') as fd:
                stored = json.load(fd)
            self.assertEqual(stored["experiment"], name)
            self.assertEqual(stored["version"], spectralrank.__version__)
            self.assertEqual(stored["records"], sidecar["records"])
            self.assertGreater(sidecar["records"], 0)

    def test_rf1_schema_and_steps(self):
        path, sidecar = self.run_small("rf1")
        self.assertEqual(self.header(path), ["step", "loss_gd", "loss_spec",
                                             "nr_gd", "nr_spec", "st_A"])
        self.assertEqual(sidecar["records"], 6)
        self.assertIn("optimal_loss", sidecar["extras"])

    def test_mlp_columns(self):
        path, _ = self.run_small("mlp_sparse")
        self.assertEqual(self.header(path)[:6],
                         ["step", "loss_gd", "loss_spec", "nr_gd_l1",
                          "nr_spec_l1", "st_l1"])
        self.assertEqual(len(self.header(path)), 3 + 3 * 3)

    def test_mlp_layout_follows_depth(self):
        path, sidecar = self.run_small("mlp_sparse", ["layers=4"])
        experiment = spectralrank.experiments.load_by_name("mlp_sparse")
        self.assertEqual(self.header(path),
                         list(experiment.layout(sidecar["config"])))
        self.assertEqual(self.header(path)[-1], "st_l4")

    def test_propagation_rows(self):
        path, sidecar = self.run_small("propagation")
        rows = spectralrank.records.load_records(path)
        self.assertEqual([row["name"] for row in rows],
                         ["input", "pointwise(relu)", "rmsnorm",
                          "attention"])
        self.assertEqual(len(sidecar["extras"]
                             ["quadratic_depth_stable_ranks"]), 3)

    def test_transformer_rows(self):
        path, _ = self.run_small("transformer_block")
        rows = spectralrank.records.load_records(path)
        self.assertEqual({row["activation"] for row in rows},
                         {"relu", "gelu"})
        self.assertIn("W_2", {row["block"] for row in rows})

    def test_rf_gated_crossover(self):
        _, sidecar = self.run_small("rf_gated")
        self.assertEqual(list(sidecar["extras"]["batch_sweep"]),
                         ["10", "20"])
        self.assertIn(sidecar["extras"]["crossover"], (None, 10, 20))

    def test_shardwise_decrease(self):
        _, sidecar = self.run_small("shardwise")
        self.assertEqual(sidecar["extras"]["decrease_violations"], 0)

    def test_cost_table_rows(self):
        path, _ = self.run_small("cost_table")
        rows = spectralrank.records.load_records(path)
        self.assertEqual([row["method"] for row in rows],
                         list(spectralrank.cost.METHODS))

    def test_polar_bench(self):
        _, sidecar = self.run_small("polar_bench")
        self.assertLess(sidecar["extras"]["max_ns_error"], 1e-6)
        self.assertIn("ns_seconds", sidecar["extras"])

    def test_deterministic(self):
        path, _ = self.run_small("rf2")
        with open(path, 'rb') as fd:
            first = fd.read()
        self.run_small("rf2")
        with open(path, 'rb') as fd:
            self.assertEqual(fd.read(), first)

    def test_seed_changes_output(self):
        path, _ = self.run_small("rf1")
        with open(path, 'rb') as fd:
            first = fd.read()
        self.run_small("rf1", ["seed=1"])
        with open(path, 'rb') as fd:
            self.assertNotEqual(fd.read(), first)

    def test_trials(self):
        path, sidecar = self.run_small("rf1", ["trials=3", "workers=2"])
        self.assertEqual(len(sidecar["outputs"]), 3)
        for index, output in enumerate(sidecar["outputs"]):
            self.assertEqual(output, spectralrank.harness.trial_path(path,
                                                                     index))
            self.assertTrue(os.path.isfile(output))
        self.assertEqual(len(set(sidecar["trial_seeds"])), 3)
        self.assertEqual(len(sidecar["extras"]), 3)
        self.assertFalse(os.path.isfile(path))

    def test_config_file(self):
        config_path = os.path.join(self.directory.name, "rf1.json")
        with open(config_path, 'w') as fd:
            json.dump({"d": 5, "k": 8, "m": 4, "n": 20, "steps": 50}, fd)
        path = os.path.join(self.directory.name, "out.csv")
        sidecar = spectralrank.harness.run_experiment(
            "rf1", config_path, ["steps=2", "output_path={}".format(
                json.dumps(path))])
        self.assertEqual(sidecar["config"]["steps"], 2)
        self.assertEqual(sidecar["config"]["d"], 5)

    def test_runner_lifecycle(self):
        path = os.path.join(self.directory.name, "runner.csv")
        runner = spectralrank.harness.Runner(
            "cost_table", overrides=["output_path={}".format(
                json.dumps(path))])
        with self.assertRaises(spectralrank.exceptions.ExperimentError):
            runner.run()
        runner.load()
        self.assertEqual(runner.config["output_path"], path)
        runner.run()
        progress = runner.get_progress()
        self.assertEqual((progress["count"], progress["finished"],
                          progress["failed"]), (1, 1, 0))
        self.assertEqual(progress["failures"], [])
        runner.unload()
        self.assertIsNone(runner.config)

    def test_default_output_path(self):
        runner = spectralrank.harness.Runner("cost_table")
        runner.load()
        self.assertEqual(runner.config["output_path"], "cost_table.csv")

    def test_invalid_config(self):
        with self.assertRaises(ConfigContentError):
            spectralrank.harness.run_experiment("rf1", overrides=["k=0"])


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.directory.name, "cli.csv")

    def tearDown(self):
        self.directory.cleanup()

    def main(self, argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), \
                contextlib.redirect_stderr(stderr):
            status = spectralrank.__main__.main(argv)
        return status, stdout.getvalue(), stderr.getvalue()

    def test_success(self):
        status, out, _ = self.main(["rf1"] + SMALL["rf1"]
                                   + ["--seed", "4", "--out", self.path])
        self.assertEqual(status, 0)
        self.assertEqual(out.strip(), self.path)
        with open(self.path + ".json", 'r') as fd:
            self.assertEqual(json.load(fd)["seed"], 4)

    def test_config_error(self):
        status, _, err = self.main(["rf1", "bogus=1", "--out", self.path])
        self.assertEqual(status, 2)
        self.assertIn("spectralrank error:", err)
        self.assertIn("bogus", err)

    def test_write_error(self):
        missing = os.path.join(self.directory.name, "none", "cli.csv")
        status, _, err = self.main(["cost_table", "--out", missing])
        self.assertEqual(status, 1)
        self.assertIn("spectralrank error:", err)

    def test_help_lists_columns(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            with self.assertRaises(SystemExit):
                spectralrank.__main__.parse(["shardwise", "--help"])
        self.assertIn("loss_shard,loss_spec,loss_gd", stdout.getvalue())

    def test_help_lists_layer_columns(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            with self.assertRaises(SystemExit):
                spectralrank.__main__.parse(["mlp_sparse", "--help"])
        text = " ".join(stdout.getvalue().split())
        self.assertIn("nr_gd_l1,nr_spec_l1,st_l1", text)
        self.assertIn("st_l3", text)
        self.assertNotIn("<l>", text)


if __name__ == '__main__':
    unittest.main()
