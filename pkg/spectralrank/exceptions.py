# General exceptions
# ==================


class SpectralRankError(Exception):
    def __init__(self, message=""):
        super().__init__(message)
        self.message = message


# Linear algebra exceptions
# =========================


class LinalgError(SpectralRankError):
    """Base class for matrix-level exceptions.
    """
    def __init__(self, operation, message=""):
        operation = operation is not None and operation or "<unknown>"
        super().__init__("{}: {}".format(operation, message))
        self.operation = operation


class ZeroMatrix(LinalgError):
    def __init__(self, operation, message="matrix is identically zero"):
        super().__init__(operation, message)


class ZeroVector(LinalgError):
    def __init__(self, operation, message="vector is identically zero"):
        super().__init__(operation, message)


class NonFinite(LinalgError):
    def __init__(self, operation, message="matrix has NaN or Inf entries"):
        super().__init__(operation, message)


class Diverged(LinalgError):
    def __init__(self, operation, iteration, residual):
        super().__init__(operation,
                         "orthogonality residual grew for 3 iterations "
                         "(iteration {}, residual {:.3e})"
                         .format(iteration, residual))
        self.iteration = iteration
        self.residual = residual


class ShapeMismatch(LinalgError):
    def __init__(self, operation, message=""):
        super().__init__(operation, message)


# Diagnostics exceptions
# ======================


class DiagnosticsError(SpectralRankError):
    def __init__(self, operation, message=""):
        super().__init__("{}: {}".format(operation, message))
        self.operation = operation


class ZeroMean(DiagnosticsError):
    def __init__(self, operation, message="column mean is zero"):
        super().__init__(operation, message)


class EmptySequence(DiagnosticsError):
    def __init__(self, operation, message="all counts are zero"):
        super().__init__(operation, message)


# Model exceptions
# ================


class ModelError(SpectralRankError):
    def __init__(self, operation, message=""):
        super().__init__("{}: {}".format(operation, message))
        self.operation = operation


class DomainError(ModelError):
    def __init__(self, operation, value):
        super().__init__(operation, "argument {!r} outside [-1, 1]"
                         .format(value))
        self.value = value


class ZeroRow(ModelError):
    def __init__(self, operation, row):
        super().__init__(operation, "row {} is zero".format(row))
        self.row = row


class InvalidSpec(ModelError):
    def __init__(self, operation, message=""):
        super().__init__(operation, message)


# Optimizer exceptions
# ====================


class OptimError(SpectralRankError):
    def __init__(self, operation, message=""):
        super().__init__("{}: {}".format(operation, message))
        self.operation = operation


class NonPositiveConstant(OptimError):
    def __init__(self, operation, name, value):
        super().__init__(operation, "{} must be positive, got {!r}"
                         .format(name, value))
        self.name = name
        self.value = value


class ZeroGradient(OptimError):
    def __init__(self, operation, message="gradient is identically zero"):
        super().__init__(operation, message)


class InvalidScheme(OptimError):
    def __init__(self, operation, message=""):
        super().__init__(operation, message)


# Propagation exceptions
# ======================


class PropagationError(SpectralRankError):
    def __init__(self, operation, message=""):
        super().__init__("{}: {}".format(operation, message))
        self.operation = operation


class CenteredActivation(PropagationError):
    def __init__(self, operation, activation):
        super().__init__(operation, "{} has zero Gaussian mean"
                         .format(activation))
        self.activation = activation


class ZeroColumn(PropagationError):
    def __init__(self, operation, column):
        super().__init__(operation, "column {} is zero".format(column))
        self.column = column


# Config exceptions
# =================


class ConfigError(SpectralRankError):
    def __init__(self, path, message=""):
        path = path is not None and path or "<command line>"
        super().__init__("{}: {}".format(path, message))
        self.path = path


class ConfigContentError(ConfigError):
    def __init__(self, path, key, message=""):
        message = "Configuration key '{}': {}".format(key, message)
        super().__init__(path, message)
        self.key = key


# Experiment exceptions
# =====================


class ExperimentError(SpectralRankError):
    """Base class for experiment exceptions.
    """
    def __init__(self, experiment_name, message=""):
        if experiment_name is None or len(experiment_name) < 1:
            experiment_name = "<unknown>"
        super().__init__("{}: {}".format(experiment_name, message))
        self.experiment_name = experiment_name


class ExperimentLoadError(ExperimentError):
    def __init__(self, experiment_name, message=""):
        super().__init__(experiment_name, message)


# Records exceptions
# ==================


class EmitError(SpectralRankError):
    def __init__(self, path, message=""):
        super().__init__("{}: {}".format(path, message))
        self.path = path
