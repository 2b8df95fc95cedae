import sys
import json
import time
import threading
import argparse
import spectralrank
import spectralrank.experiments
import spectralrank.harness
import spectralrank.exceptions
from spectralrank.progress import Progress


LOGLEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


# =============================================================================
# UTILITY & GENERIC FUNCTIONS
# =============================================================================

def run_in_thread(method, progress):
    """Runs `method` in a thread while printing `progress` on stderr.

    Returns:
        Tuple as:
            [0]: The value returned by `method`, or `None`.
            [1]: The exception it raised, or `None`.
    """
    outcome = {"value": None, "error": None}

    def run():
        try:
            outcome["value"] = method()
        except Exception as error:
            outcome["error"] = error

    def print_progress(state):
        print("\r{:.0f}% (trials: {}, finished: {}, failed: {})"
              .format(state.percentage, state.count, state.finished,
                      state.failed), end='', file=sys.stderr)

    thread = threading.Thread(target=run)
    thread.start()
    while thread.is_alive():
        print_progress(progress.total)
        time.sleep(0.05)
    thread.join()
    print_progress(progress.total)
    print(file=sys.stderr)
    return outcome["value"], outcome["error"]


def describe(experiment):
    """Help text: the description and the CSV columns under the default
    configuration.
    """
    defaults = {key: rule.default for key, rule in
                spectralrank.experiments.template_for(experiment).items()}
    return "{}\n\nCSV columns: {}".format(
        experiment.description, ",".join(experiment.layout(defaults)))


# =============================================================================
# PARSING & COMMAND PROCESSING
# =============================================================================

def parse(argv=None):
    """Parse arguments.

    Returns:
        An argparse.Namespace object with the parsed arguments.
    """
    parser = argparse.ArgumentParser(prog="spectralrank")
    parser.add_argument("--version", action="version",
                        version=spectralrank.__version__)
    subparsers = parser.add_subparsers(dest="command", title="experiment")
    subparsers.required = True
    for name, experiment in spectralrank.experiments.by_name.items():
        _p = subparsers.add_parser(
            name, description=describe(experiment),
            formatter_class=argparse.RawDescriptionHelpFormatter)
        _p.add_argument("overrides", type=str, nargs='*', metavar="key=value",
                        help="Configuration overrides")
        _p.add_argument("--config", type=str, default=None,
                        help="JSON configuration file")
        _p.add_argument("--seed", type=int, default=None, help="Seed")
        _p.add_argument("--out", type=str, default=None,
                        help="Output CSV path (default: <experiment>.csv)")
        _p.add_argument("--trials", type=int, default=None,
                        help="Number of seeded trials")
        _p.add_argument("--loglevel", type=str, default="WARNING",
                        choices=LOGLEVELS)
    return parser.parse_args(argv)


def overrides_of(args):
    """Folds the dedicated options into the override list; they win over
    positional overrides.
    """
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append("seed={}".format(args.seed))
    if args.trials is not None:
        overrides.append("trials={}".format(args.trials))
    if args.out is not None:
        overrides.append("output_path={}".format(
            json.dumps(args.out)))
    return overrides


def run_command(args):
    """Runs the selected experiment.

    Returns:
        int: Exit status.
    """
    progress = Progress()
    try:
        runner = spectralrank.harness.Runner(args.command, args.config,
                                             overrides_of(args), progress)
        runner.load()
        sidecar, error = run_in_thread(runner.run, progress)
        runner.unload()
        if error is not None:
            raise error
    except spectralrank.exceptions.ConfigError as error:
        print("spectralrank error: {}".format(str(error)), file=sys.stderr)
        return 2
    except (spectralrank.exceptions.SpectralRankError, OSError) as error:
        print("spectralrank error: {}".format(str(error)), file=sys.stderr)
        return 1
    print(sidecar["config"]["output_path"])
    return 0


# =============================================================================
# MAIN
# =============================================================================

def main(argv=None):
    # Parse arguments.
    args = parse(argv)
    # Setup log handler.
    handler = spectralrank.logging.attach_stream_handler(args.loglevel)
    # Run selected experiment.
    try:
        return run_command(args)
    finally:
        spectralrank.logging.detach_handler(handler)


if __name__ == "__main__":
    sys.exit(main())
