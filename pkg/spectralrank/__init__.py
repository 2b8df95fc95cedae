__version__ = "0.3.0"

from . import exceptions
from . import logging
from . import rng
from . import linalg
from . import diagnostics
from . import propagation
from . import models
from . import optim
from . import records
from . import nets
from . import cost
from . import config
from . import progress
from . import experiments
from . import harness
