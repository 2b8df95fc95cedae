"""Experiment registry.

An experiment is a subclass of `Experiment` registered under its `name`.
It declares a configuration template (merged over the common keys of
`spectralrank.config.commontemplate`), the CSV columns it emits and a
`run` method turning a resolved configuration into records.
"""
from collections import OrderedDict
import math
import time
import numpy as np
from spectralrank import config as configuration
from spectralrank import cost
from spectralrank import linalg
from spectralrank import models
from spectralrank import nets
from spectralrank import propagation
from spectralrank import rng
from spectralrank.config import Configrule
from spectralrank.config import positive
from spectralrank.config import non_negative
from spectralrank.logging import Logger
from spectralrank.records import Record
from spectralrank.exceptions import ExperimentLoadError


by_name = OrderedDict()


def register(experiment):
    """Class decorator adding `experiment` to the registry.
    """
    validate(experiment)
    by_name[experiment.name] = experiment
    return experiment


def load_by_name(name):
    """Returns the experiment class registered as `name`.

    Raises:
        ExperimentLoadError: No such experiment.
    """
    if name not in by_name:
        raise ExperimentLoadError(name, "Experiment does not exist (known: {})"
                                  .format(", ".join(by_name)))
    return by_name[name]


def validate(experiment):
    """Checks an experiment class is well formed.

    Raises:
        ExperimentLoadError: It is not an `Experiment` subclass or misses
            its name or `run`.
    """
    name = getattr(experiment, "name", None)
    if not isinstance(experiment, type) or not issubclass(experiment,
                                                          Experiment):
        raise ExperimentLoadError(name, "Experiment is not an Experiment "
                                  "subclass")
    if not name:
        raise ExperimentLoadError(None, "Experiment has no name")
    if experiment.run is Experiment.run:
        raise ExperimentLoadError(name, "Experiment does not define run()")


def template_for(experiment):
    """The full configuration template of an experiment class.
    """
    template = OrderedDict(configuration.commontemplate)
    template.update(experiment.template)
    return template


class Experiment:
    """The experiment base class.
    """

    name = None
    description = ""
    template = OrderedDict()
    columns = None

    def __init__(self, config):
        """Initializes the experiment.

        The following members are created:
            self.config: The resolved configuration (dict).
            self.logger: A `spectralrank.logging.Logger` object.

        Arguments:
            config (dict): Resolved configuration.
        """
        self.config = config
        self.logger = Logger("experiment", self.name)

    def run(self):
        """Runs the experiment.

        Returns:
            Tuple as:
                [0]: list: Records to emit.
                [1]: dict: Extra values for the JSON sidecar.
        """
        raise NotImplementedError()

    @classmethod
    def layout(cls, config):
        """CSV columns emitted under the resolved `config`.
        """
        return cls.columns

    def optimizer(self, method, partition="whole"):
        cfg = self.config
        return nets.OptimizerConfig(
            method=method, spectral_blocks=cfg["spectral_blocks"],
            c_op=cfg.get("c_op", 0.0), alpha=cfg["alpha"],
            polar_mode=cfg["polar_mode"], ns_max_iters=cfg["ns_max_iters"],
            ns_tol=cfg["ns_tol"], partition=partition,
            workers=cfg["workers"])


def _rf_template(d, k, m, n):
    return OrderedDict([
        ("d", Configrule(types=[int, ], default=d, test=positive)),
        ("k", Configrule(types=[int, ], default=k, test=positive)),
        ("m", Configrule(types=[int, ], default=m, test=positive)),
        ("n", Configrule(types=[int, ], default=n, test=positive)),
        ("truth_variance", Configrule(types=[str, ], default="1/m",
                                      test=lambda x: x in ("1/m", "unit"))),
    ])


def optimal_loss(inst):
    """min_W L(W), reached at W* = T B⁺.
    """
    W = inst.target @ np.linalg.pinv(inst.B, hermitian=True)
    return models.rf_loss(W, inst)


class RFComparison(Experiment):
    """GD against spectral GD on one random-feature instance, W₀ = 0.
    """

    columns = ("step", "loss_gd", "loss_spec", "nr_gd", "nr_spec", "st_A")

    def instance(self, n=None):
        raise NotImplementedError()

    def compare(self, inst):
        steps = self.config["steps"]
        gd = nets.train(nets.RFModel(inst), self.optimizer("gd"), steps)
        spec = nets.train(nets.RFModel(inst), self.optimizer("spec"), steps)
        rows = [Record([("step", a.step),
                        ("loss_gd", a.loss),
                        ("loss_spec", b.loss),
                        ("nr_gd", a.fields["nr_l1"]),
                        ("nr_spec", b.fields["nr_l1"]),
                        ("st_A", a.fields["st_l1"])])
                for a, b in zip(gd, spec)]
        return rows, gd, spec

    def run(self):
        inst = self.instance()
        rows, gd, spec = self.compare(inst)
        best = optimal_loss(inst)
        extras = OrderedDict([
            ("optimal_loss", best),
            ("final_suboptimality_gd", gd[-1].loss - best),
            ("final_suboptimality_spec", spec[-1].loss - best),
            ("st_A", gd[0].fields["st_l1"]),
            ("criterion_after_step1_gd",
             all(r.fields["favored_l1"] for r in gd[1:] if r.fields["nr_l1"])),
            ("criterion_after_step1_spec",
             all(r.fields["favored_l1"] for r in spec[1:]
                 if r.fields["nr_l1"])),
        ])
        self.logger.info("final loss: gd {:.4g}, spec {:.4g}".format(
            gd[-1].loss, spec[-1].loss))
        return rows, extras


@register
class Realizable(RFComparison):
    name = "rf1"
    description = "Realizable ReLU random features, Y = W♯σ(VX)."
    template = _rf_template(50, 100, 100, 400)

    def instance(self, n=None):
        cfg = self.config
        return models.gen_realizable(cfg["d"], cfg["k"], cfg["m"],
                                     n or cfg["n"], cfg["seed"],
                                     cfg["truth_variance"])


@register
class TeacherStudent(RFComparison):
    name = "rf2"
    description = "Teacher-student ReLU random features, Y = W̄σ(V̄X)."
    template = OrderedDict(_rf_template(64, 128, 100, 512))
    template["share_features"] = Configrule(types=[bool, ], default=False,
                                            test=lambda x: True)

    def instance(self, n=None):
        cfg = self.config
        return models.gen_teacher_student(cfg["d"], cfg["k"], cfg["m"],
                                          n or cfg["n"], cfg["seed"],
                                          cfg["truth_variance"],
                                          cfg["share_features"])


@register
class GatedFeatures(RFComparison):
    name = "rf_gated"
    description = ("Gated features σ(VX)⊙(WX); sweeps the sample count and "
                   "reports the first one where spectral GD wins.")
    template = OrderedDict(_rf_template(50, 200, 100, 400))
    template["activation"] = Configrule(types=[str, ], default="silu",
                                        test=lambda x: len(x) > 0)
    template["batch_sizes"] = Configrule(
        types=[list, ], default=[100, 200, 400, 800],
        test=lambda x: all(isinstance(v, int) and v > 0 for v in x))

    def instance(self, n=None):
        cfg = self.config
        return models.gated_instance(cfg["d"], cfg["k"], cfg["m"],
                                     n or cfg["n"], cfg["seed"],
                                     cfg["activation"])

    def run(self):
        rows, extras = super().run()
        sweep = OrderedDict()
        crossover = None
        for n in self.config["batch_sizes"]:
            inst = self.instance(n)
            _, gd, spec = self.compare(inst)
            sweep[str(n)] = OrderedDict([
                ("st_A", gd[0].fields["st_l1"]),
                ("final_loss_gd", gd[-1].loss),
                ("final_loss_spec", spec[-1].loss)])
            if crossover is None and spec[-1].loss < gd[-1].loss:
                crossover = n
        extras["batch_sweep"] = sweep
        extras["crossover"] = crossover
        return rows, extras


@register
class SparseRegressionMLP(Experiment):
    name = "mlp_sparse"
    description = ("L-layer MLP on the sparse target x₁x₂x₃; per-layer "
                   "nr(G) and st(A) under GD and spectral GD.")
    template = OrderedDict([
        ("d", Configrule(types=[int, ], default=128, test=positive)),
        ("n", Configrule(types=[int, ], default=512, test=positive)),
        ("width_factor", Configrule(types=[int, ], default=4, test=positive)),
        ("layers", Configrule(types=[int, ], default=3,
                              test=lambda x: x >= 2)),
        ("activation", Configrule(types=[str, ], default="squared_relu",
                                  test=lambda x: len(x) > 0)),
        ("curvature", Configrule(types=[float, ], default=4.0,
                                 test=positive)),
        ("init_scale", Configrule(types=[float, ], default=1.0,
                                  test=positive)),
        ("c_op", Configrule(types=[float, ], default=0.0,
                            test=non_negative)),
    ])

    @classmethod
    def layout(cls, config):
        columns = ["step", "loss_gd", "loss_spec"]
        for layer in range(1, config["layers"] + 1):
            columns += ["nr_gd_l{}".format(layer),
                        "nr_spec_l{}".format(layer),
                        "st_l{}".format(layer)]
        return tuple(columns)

    def data(self):
        cfg = self.config
        X = rng.stream(cfg["seed"], "mlp.X").standard_normal((cfg["d"],
                                                             cfg["n"]))
        return X, (X[0] * X[1] * X[2])[np.newaxis, :]

    def run(self):
        cfg = self.config
        hidden = cfg["width_factor"] * cfg["d"]
        widths = [cfg["d"]] + [hidden] * (cfg["layers"] - 1) + [1]
        spec = nets.MLPSpec(widths, cfg["activation"])
        X, Y = self.data()
        runs = OrderedDict()
        for method in ("gd", "spec"):
            weights = nets.init_mlp(spec, cfg["seed"], cfg["init_scale"])
            model = nets.MLPModel(spec, X, Y, weights, cfg["curvature"])
            runs[method] = nets.train(model, self.optimizer(method),
                                      cfg["steps"])
        rows = []
        for a, b in zip(runs["gd"], runs["spec"]):
            values = [("step", a.step), ("loss_gd", a.loss),
                      ("loss_spec", b.loss)]
            for layer in range(1, spec.depth + 1):
                values += [
                    ("nr_gd_l{}".format(layer), a.fields["nr_l{}"
                                                         .format(layer)]),
                    ("nr_spec_l{}".format(layer), b.fields["nr_l{}"
                                                           .format(layer)]),
                    ("st_l{}".format(layer), a.fields["st_l{}"
                                                      .format(layer)])]
            rows.append(Record(values))
        hidden_st = [r.fields["st_l{}".format(layer)]
                     for r in runs["gd"] + runs["spec"]
                     for layer in range(2, spec.depth + 1)]
        extras = OrderedDict([("widths", widths),
                              ("max_hidden_stable_rank", max(hidden_st)),
                              ("final_loss_gd", runs["gd"][-1].loss),
                              ("final_loss_spec", runs["spec"][-1].loss)])
        return rows, extras


@register
class Propagation(Experiment):
    name = "propagation"
    description = ("Stable rank and column-norm envelope after every stage "
                   "of a random network chain.")
    columns = ("stage", "name", "stable_rank", "frob", "op_norm", "col_min",
               "col_max")
    template = OrderedDict([
        ("d", Configrule(types=[int, ], default=256, test=positive)),
        ("n", Configrule(types=[int, ], default=512, test=positive)),
        ("input", Configrule(types=[str, ], default="gaussian",
                             test=lambda x: x in ("gaussian", "tokens"))),
        ("vocab", Configrule(types=[int, ], default=8, test=positive)),
        ("stages", Configrule(
            types=[list, ],
            default=["pointwise:1024:relu", "pointwise:1024:relu",
                     "pointwise:1024:relu"],
            test=lambda x: len(x) > 0)),
        ("quadratic_depth", Configrule(types=[int, ], default=0,
                                       test=non_negative)),
    ])

    def initial(self):
        cfg = self.config
        if cfg["input"] == "tokens":
            counts = uniform_counts(cfg["n"], cfg["vocab"])
            return propagation.token_indicator(counts, cfg["seed"])
        return rng.stream(cfg["seed"], "propagation.X0") \
            .standard_normal((cfg["d"], cfg["n"]))

    def run(self):
        cfg = self.config
        X0 = self.initial()
        stages = [propagation.ChainStage.parse(text) for text in cfg["stages"]]
        chain = propagation.propagate_chain(stages, X0, cfg["seed"])
        entries = [("input", linalg.spectral_summary(X0),
                    propagation.column_envelope(X0))] + list(chain)
        rows = [Record([("stage", index), ("name", name),
                        ("stable_rank", summary.stable_rank),
                        ("frob", summary.frob), ("op_norm", summary.op_norm),
                        ("col_min", envelope[0]), ("col_max", envelope[1])])
                for index, (name, summary, envelope) in enumerate(entries)]
        extras = OrderedDict()
        if cfg["quadratic_depth"] > 0:
            extras["quadratic_depth_stable_ranks"] = \
                propagation.quadratic_depth_experiment(
                    cfg["quadratic_depth"], cfg["d"], cfg["seed"], cfg["n"])
        return rows, extras


def uniform_counts(n, vocab):
    """Token counts spreading n tokens as evenly as possible over `vocab`.
    """
    counts = np.full(vocab, n // vocab, dtype=np.int64)
    counts[:n % vocab] += 1
    return counts


@register
class TransformerBlock(Experiment):
    name = "transformer_block"
    description = ("Per-block nr(G) against st(A) in one attention + MLP "
                   "block at Gaussian initialization.")
    columns = ("block", "activation", "nr_gradient", "st_activation",
               "ratio", "favored")
    template = OrderedDict([
        ("d", Configrule(types=[int, ], default=128, test=positive)),
        ("T", Configrule(types=[int, ], default=256, test=positive)),
        ("hidden", Configrule(types=[int, ], default=512, test=positive)),
        ("heads", Configrule(types=[int, ], default=1, test=positive)),
        ("vocab", Configrule(types=[int, ], default=8, test=positive)),
        ("causal", Configrule(types=[bool, ], default=False,
                              test=lambda x: True)),
        ("activations", Configrule(types=[list, ],
                                   default=["relu", "gelu", "silu"],
                                   test=lambda x: len(x) > 0)),
    ])

    def run(self):
        cfg = self.config
        tokens = propagation.token_indicator(
            uniform_counts(cfg["T"], cfg["vocab"]), cfg["seed"])
        Y = rng.stream(cfg["seed"], "transformer.Y") \
            .standard_normal((cfg["d"], cfg["T"]))
        rows = []
        extras = OrderedDict()
        for activation in cfg["activations"]:
            params = nets.init_attention_block(
                cfg["d"], cfg["hidden"], cfg["seed"], cfg["heads"],
                activation, vocab=cfg["vocab"], causal=cfg["causal"])
            _, capture = nets.attention_block_backward(params, tokens, Y)
            reports = nets.attention_block_criteria(capture, cfg["alpha"])
            for block, report in reports.items():
                rows.append(Record([
                    ("block", block), ("activation", activation),
                    ("nr_gradient", report.nr_gradient),
                    ("st_activation", report.st_activation),
                    ("ratio", report.ratio),
                    ("favored", report.spectral_favored)]))
            extras[activation] = OrderedDict([
                ("st_A_rms", linalg.stable_rank(capture.named["A_rms"])),
                ("st_B", linalg.stable_rank(capture.named["B"]))])
        return rows, extras


@register
class Shardwise(Experiment):
    name = "shardwise"
    description = ("Shardwise spectral GD against whole-matrix spectral GD "
                   "and GD on a realizable random-feature instance.")
    columns = ("step", "loss_shard", "loss_spec", "loss_gd", "kappa",
               "nr_part", "st_part", "guaranteed", "realized")
    template = OrderedDict(_rf_template(50, 100, 100, 400))
    template["partition"] = Configrule(types=[str, ], default="rows:4",
                                       test=lambda x: len(x) > 0)
    template["steps"] = Configrule(types=[int, ], default=100, test=positive)

    def run(self):
        cfg = self.config
        inst = models.gen_realizable(cfg["d"], cfg["k"], cfg["m"], cfg["n"],
                                     cfg["seed"], cfg["truth_variance"])
        runs = OrderedDict()
        for method in ("shardwise", "spec", "gd"):
            runs[method] = nets.train(nets.RFModel(inst),
                                      self.optimizer(method,
                                                     cfg["partition"]),
                                      cfg["steps"])
        rows = [Record([("step", s.step), ("loss_shard", s.loss),
                        ("loss_spec", p.loss), ("loss_gd", g.loss),
                        ("kappa", s.fields["kappa"]),
                        ("nr_part", s.fields["nr_part"]),
                        ("st_part", s.fields["st_part"]),
                        ("guaranteed", s.fields["guaranteed"]),
                        ("realized", s.fields["realized"])])
                for s, p, g in zip(runs["shardwise"], runs["spec"],
                                   runs["gd"])]
        violations = sum(1 for s in runs["shardwise"][:-1]
                         if s.fields["realized"] < s.fields["guaranteed"]
                         - 1e-10 * max(1.0, abs(s.loss)))
        extras = OrderedDict([("decrease_violations", violations),
                              ("final_loss_shard", runs["shardwise"][-1].loss),
                              ("final_loss_spec", runs["spec"][-1].loss),
                              ("final_loss_gd", runs["gd"][-1].loss)])
        return rows, extras


@register
class PolarBench(Experiment):
    name = "polar_bench"
    description = ("Newton-Schulz polar factor against the SVD polar factor "
                   "on random matrices of controlled condition number.")
    columns = ("trial", "rows", "cols", "cond", "ns_iters", "ns_error",
               "orth_residual")
    template = OrderedDict([
        ("matrices", Configrule(types=[int, ], default=100, test=positive)),
        ("max_rows", Configrule(types=[int, ], default=64,
                                test=lambda x: x >= 2)),
        ("max_cols", Configrule(types=[int, ], default=96,
                                test=lambda x: x >= 2)),
        ("max_cond", Configrule(types=[float, ], default=1e4,
                                test=lambda x: x >= 1)),
    ])

    def matrix(self, index):
        cfg = self.config
        generator = rng.stream(cfg["seed"], "polar_bench.{}".format(index))
        rows = int(generator.integers(2, cfg["max_rows"] + 1))
        cols = int(generator.integers(2, cfg["max_cols"] + 1))
        cond = math.exp(generator.uniform(0.0, math.log(cfg["max_cond"])))
        rank = min(rows, cols)
        U, _ = np.linalg.qr(generator.standard_normal((rows, rank)))
        V, _ = np.linalg.qr(generator.standard_normal((cols, rank)))
        s = np.geomspace(1.0, 1.0 / cond, rank)
        return (U * s) @ V.T, cond

    def run(self):
        cfg = self.config
        rows = []
        ns_seconds = 0.0
        exact_seconds = 0.0
        for index in range(cfg["matrices"]):
            M, cond = self.matrix(index)
            begin = time.perf_counter()
            P, iters = linalg.polar_newton_schulz(M, cfg["ns_max_iters"],
                                                  cfg["ns_tol"])
            ns_seconds += time.perf_counter() - begin
            begin = time.perf_counter()
            exact = linalg.polar_exact(M)
            exact_seconds += time.perf_counter() - begin
            rows.append(Record([
                ("trial", index), ("rows", M.shape[0]), ("cols", M.shape[1]),
                ("cond", cond), ("ns_iters", iters),
                ("ns_error", float(np.linalg.norm(P - exact))),
                ("orth_residual", linalg.orthogonality_residual(P))]))
        extras = OrderedDict([("ns_seconds", ns_seconds),
                              ("exact_seconds", exact_seconds),
                              ("max_ns_error", max(r["ns_error"]
                                                   for r in rows))])
        return rows, extras


@register
class CostTable(Experiment):
    name = "cost_table"
    description = ("Per-device communication and flops of four ways to "
                   "orthogonalize a sharded gradient (unit constants).")
    columns = ("method", "collectives", "comm_entries", "comm_bytes",
               "per_device_flops")
    template = OrderedDict([
        ("P", Configrule(types=[int, ], default=4096, test=positive)),
        ("Q", Configrule(types=[int, ], default=16384, test=positive)),
        ("S", Configrule(types=[int, ], default=8, test=positive)),
        ("iters", Configrule(types=[int, ], default=5, test=positive)),
        ("bytes_per_entry", Configrule(types=[int, ], default=2,
                                       test=positive)),
    ])

    def run(self):
        cfg = self.config
        table = cost.cost_table(cfg["P"], cfg["Q"], cfg["S"], cfg["iters"],
                                cfg["bytes_per_entry"])
        return [Record(row._asdict()) for row in table], OrderedDict()
