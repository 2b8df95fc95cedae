import os
import json
import copy
from collections import namedtuple
from collections import OrderedDict
import spectralrank.logging
from spectralrank.exceptions import ConfigError
from spectralrank.exceptions import ConfigContentError


Configrule = namedtuple("Configrule", ["types", "default", "test"])


def positive(x):
    return x > 0


def non_negative(x):
    return x >= 0


def index_list(x):
    return x is None or all(isinstance(i, int) and i >= 0 for i in x)


POLAR_MODES = ("exact", "newton_schulz", "pure_newton_schulz")


commontemplate = OrderedDict([
    ("seed", Configrule(types=[int, ], default=0, test=non_negative)),
    ("steps", Configrule(types=[int, ], default=300, test=positive)),
    ("trials", Configrule(types=[int, ], default=1, test=positive)),
    ("workers", Configrule(types=[int, ], default=1, test=positive)),
    ("output_path", Configrule(types=[str, type(None)], default=None,
                               test=lambda x: x is None or len(x) > 0)),
    ("polar_mode", Configrule(types=[str, ], default="newton_schulz",
                              test=lambda x: x in POLAR_MODES)),
    ("ns_max_iters", Configrule(types=[int, ], default=100, test=positive)),
    ("ns_tol", Configrule(types=[float, ], default=1e-9, test=positive)),
    ("alpha", Configrule(types=[float, ], default=0.0, test=non_negative)),
    ("spectral_blocks", Configrule(types=[list, type(None)], default=None,
                                   test=index_list)),
])


def parse_assignment(text):
    """Splits 'key=value'; the value is read as a JSON literal when
    possible, else kept as a string.

    Raises:
        ConfigError: `text` has no '='.
    """
    key, sep, raw = text.partition('=')
    if not sep or not key:
        raise ConfigError(None, "override '{}' is not key=value"
                          .format(text))
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip(), value


def _type_matches(value, types):
    for expected in types:
        if expected is float and isinstance(value, (int, float)) \
                and not isinstance(value, bool):
            return True
        if expected is int and isinstance(value, bool):
            continue
        if isinstance(value, expected):
            return True
    return False


class Config:

    def __init__(self, path=None, logname=None):
        """Initializes object.

        Arguments:
            path (str, optional): JSON configuration file; `None` starts
                from an empty configuration.
            logname (str, optional): Log name. Default is `path`.
        """
        self.__path = path
        self.__raw = OrderedDict()
        self.__resolved = None
        self.__logger = spectralrank.logging.Logger(
            "config", logname is not None and logname or path or "cli")

    @property
    def path(self):
        return self.__path

    def load(self):
        """Reads the configuration file, a flat JSON object.

        Raises:
            ConfigError: The file cannot be read or is not a JSON object.
        """
        if self.__path is None:
            return self
        try:
            with open(self.__path, 'r') as fd:
                raw = json.load(fd, object_pairs_hook=OrderedDict)
        except json.decoder.JSONDecodeError as error:
            raise ConfigError(self.__path, "Configuration format error: {}"
                              .format(str(error))) from error
        except OSError as error:
            raise ConfigError(self.__path, str(error)) from error
        if not isinstance(raw, dict):
            raise ConfigError(self.__path, "expected a JSON object")
        self.__raw.update(raw)
        self.__resolved = None
        self.__logger.info("Configuration loaded")
        return self

    def override(self, assignments):
        """Applies 'key=value' overrides; they win over the file.
        """
        for text in assignments:
            key, value = parse_assignment(text)
            self.__raw[key] = value
        self.__resolved = None
        return self

    def set(self, key, value):
        self.__raw[key] = value
        self.__resolved = None
        return self

    def validate(self, template):
        """Checks the configuration against `template` and fills missing
        keys from the defaults.

        Arguments:
            template (dict): key -> `Configrule`.

        Returns:
            dict: The resolved configuration.

        Raises:
            ConfigContentError: Unknown key, wrong type or invalid value.
        """
        path = self.__path
        for key in self.__raw:
            if key not in template:
                raise ConfigContentError(path, key, "unknown key")
        resolved = OrderedDict()
        for key, rule in template.items():
            if key not in self.__raw:
                resolved[key] = copy.deepcopy(rule.default)
                continue
            value = self.__raw[key]
            if not _type_matches(value, rule.types):
                raise ConfigContentError(
                    path, key, "invalid type: expecting {}, got {}"
                    .format(" or ".join([t.__name__ for t in rule.types]),
                            type(value).__name__))
            if float in rule.types and isinstance(value, int):
                value = float(value)
            if not rule.test(value):
                raise ConfigContentError(path, key, "invalid value {!r}"
                                         .format(value))
            resolved[key] = value
        self.__resolved = resolved
        self.__logger.info("Configuration validated")
        return copy.deepcopy(resolved)

    @property
    def values(self):
        if self.__resolved is None:
            raise ConfigError(self.__path, "configuration not validated")
        return copy.deepcopy(self.__resolved)

    def commit(self, path):
        """Writes the resolved configuration as JSON.
        """
        directory = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(directory):
            raise ConfigError(path, "directory doesn't exist")
        with open(path, 'w') as fd:
            json.dump(self.values, fd, indent=2)
        self.__logger.info("Configuration committed to {}".format(path))
