import logging


ROOT = "spectralrank"

FAMILIES = ("linalg", "optim", "models", "propagation", "nets", "records",
            "config", "experiment", "harness")
"""Component families; a logger is named 'spectralrank.<family>.<name>'."""


class Logger:
    """spectralrank logger facility.
    """

    def __init__(self, family, name):
        """Initializes the logger object.

        Arguments:
            family: One of `FAMILIES`, the emitting module.
            name: The component name (ex: experiment name, operation name).

        Raises:
            ValueError: `family` is not a known component family.
        """
        if family not in FAMILIES:
            raise ValueError("unknown logger family '{}'".format(family))
        self.family = family
        self.logger = logging.getLogger("{}.{}.{}".format(ROOT, family,
                                                          name))
        self.logger.addHandler(logging.NullHandler())
        self.name = name

    @property
    def name(self):
        return self.__name

    @name.setter
    def name(self, value):
        self.__name = value

    def child(self, name):
        """A logger of the same family for the sub-component `name`.
        """
        return Logger(self.family, "{}.{}".format(self.name, name))

    def debug(self, message):
        self.logger.debug(message)

    def info(self, message):
        self.logger.info(message)

    def warning(self, message):
        self.logger.warning(message)

    def error(self, message):
        self.logger.error(message)

    def critical(self, message):
        self.logger.critical(message)


def attach_stream_handler(level):
    """Routes every spectralrank record at `level` or above to stderr.

    Arguments:
        level (str): Level name ('DEBUG', 'INFO', ...).

    Returns:
        logging.Handler: The handler, for `detach_handler`.
    """
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(
        "{levelname} - {name} - {message}", style='{'))
    root = logging.getLogger(ROOT)
    root.addHandler(handler)
    root.setLevel(logging.getLevelName(level))
    return handler


def detach_handler(handler):
    logging.getLogger(ROOT).removeHandler(handler)
