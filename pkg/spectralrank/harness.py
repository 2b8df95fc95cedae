import os
import json
import copy
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
import numpy as np
import spectralrank
from spectralrank import experiments
from spectralrank import records
from spectralrank import rng
from spectralrank.config import Config
from spectralrank.logging import Logger
from spectralrank.progress import Progress
from spectralrank.exceptions import ExperimentError
from spectralrank.exceptions import EmitError


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError("{} is not JSON serializable".format(type(value)
                                                          .__name__))


def trial_path(output_path, index):
    """`<stem>.trial<index><ext>` next to `output_path`.
    """
    stem, ext = os.path.splitext(output_path)
    return "{}.trial{}{}".format(stem, index, ext or ".csv")


class Runner:

    def __init__(self, name, config_path=None, overrides=(), progress=None):
        """Initializes object.

        Arguments:
            name (str): Experiment name.
            config_path (str, optional): JSON configuration file.
            overrides (list, optional): 'key=value' overrides.
            progress (Progress, optional): Progress object to update; a
                private one is created when missing.
        """
        self.__name = name
        self.__config = Config(path=config_path, logname=name)
        self.__overrides = list(overrides)
        self.__progress = progress is not None and progress or Progress()
        self.__logger = Logger(family="harness", name=name)
        self.__experiment = None
        self.__values = None
        self.__is_loaded = False

    def __assert_loaded(call):
        """Asserts the runner has been loaded.
        """
        def caller(self, *args, **kwargs):
            if self.__is_loaded is not True:
                raise ExperimentError(self.__name, "Runner not loaded")
            return call(self, *args, **kwargs)
        return caller

    def load(self):
        """Resolves the experiment and its configuration.

        Raises:
            ExperimentLoadError: Unknown experiment.
            ConfigError: Invalid configuration.
        """
        if self.__is_loaded is True:
            return
        self.__experiment = experiments.load_by_name(self.__name)
        self.__config.load()
        self.__config.override(self.__overrides)
        values = self.__config.validate(
            experiments.template_for(self.__experiment))
        if values["output_path"] is None:
            values["output_path"] = "{}.csv".format(self.__name)
        self.__values = values
        self.__is_loaded = True
        self.__logger.info("Runner loaded")

    def unload(self):
        if self.__is_loaded is False:
            return
        self.__experiment = None
        self.__values = None
        self.__is_loaded = False
        self.__logger.info("Runner unloaded")

    @property
    def config(self):
        return copy.deepcopy(self.__values)

    def get_progress(self):
        """Returns progress information.
        """
        total = self.__progress.total
        return {
            "name": self.__progress.name,
            "percentage": total.percentage,
            "count": total.count,
            "finished": total.finished,
            "failed": total.failed,
            "failures": self.__progress.failed
        }

    def __trial(self, index, seed):
        values = copy.deepcopy(self.__values)
        values["seed"] = seed
        self.__progress.start(index)
        try:
            rows, extras = self.__experiment(values).run()
        except Exception as error:
            self.__progress.mark_failed(index, str(error))
            raise
        self.__progress.mark_finished(index)
        return rows, extras

    @__assert_loaded
    def run(self):
        """Runs every trial, then writes the CSV files and the JSON sidecar.

        Returns:
            dict: The sidecar content.
        """
        values = self.__values
        trials = values["trials"]
        output_path = values["output_path"]
        seeds = [values["seed"]] if trials == 1 else \
            [rng.trial_seed(values["seed"], index) for index in range(trials)]
        self.__progress.reset()
        self.__progress.name = self.__name
        self.__progress.count = trials
        self.__logger.info("Running {} trial(s)".format(trials))
        begin = time.perf_counter()
        if trials == 1:
            results = [self.__trial(0, seeds[0])]
        else:
            with ThreadPoolExecutor(max_workers=values["workers"]) as pool:
                results = list(pool.map(self.__trial, range(trials), seeds))
        wall_time = time.perf_counter() - begin
        columns = self.__experiment.layout(values)
        paths = [output_path] if trials == 1 else \
            [trial_path(output_path, index) for index in range(trials)]
        for path, (rows, _) in zip(paths, results):
            records.emit_records(rows, path, "csv", columns)
        sidecar = OrderedDict([
            ("experiment", self.__name),
            ("config", values),
            ("seed", values["seed"]),
            ("version", spectralrank.__version__),
            ("wall_time", wall_time),
            ("records", sum(len(rows) for rows, _ in results)),
        ])
        if trials == 1:
            sidecar["extras"] = results[0][1]
        else:
            sidecar["trial_seeds"] = seeds
            sidecar["outputs"] = paths
            sidecar["extras"] = [extras for _, extras in results]
        sidecar_path = "{}.json".format(output_path)
        try:
            with open(sidecar_path, 'w', encoding="utf-8") as fd:
                json.dump(sidecar, fd, indent=2, default=_jsonable)
                fd.write('\n')
        except OSError as error:
            raise EmitError(sidecar_path, str(error)) from error
        self.__progress.name = None
        self.__logger.info("Done in {:.2f}s, wrote {}".format(
            wall_time, ", ".join(paths + [sidecar_path])))
        return sidecar


def run_experiment(name, config_path=None, overrides=(), progress=None):
    """Loads, runs and unloads one experiment.

    Arguments:
        name (str): Experiment name.
        config_path (str, optional): JSON configuration file.
        overrides (list, optional): 'key=value' overrides; they win over
            the file.
        progress (Progress, optional): Progress object to update.

    Returns:
        dict: The JSON sidecar content.
    """
    runner = Runner(name, config_path, overrides, progress)
    runner.load()
    try:
        return runner.run()
    finally:
        runner.unload()
