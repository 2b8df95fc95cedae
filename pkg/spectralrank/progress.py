import threading
import copy
import time
from collections import namedtuple


ProgressState = namedtuple("ProgressState", ["count", "finished", "failed",
                                             "percentage"])


class Progress:
    """Thread-safe state of a batch of trials.
    """

    def __init__(self, count=0, name=None):
        """Initializes object.

        Arguments:
            count (int, optional): Number of trials.
            name (str, optional): Name of the current experiment.
        """
        self.__lock = threading.Lock()
        self.reset()
        self.__count = count
        self.__name = name

    def reset(self):
        """Reset progress state.
        """
        with self.__lock:
            self.__entries = {}
            self.__finished = []
            self.__failed = []
            self.__count = 0
            self.__name = None

    @property
    def count(self):
        with self.__lock:
            return copy.copy(self.__count)

    @count.setter
    def count(self, value):
        with self.__lock:
            self.__count = value

    @property
    def name(self):
        with self.__lock:
            return copy.copy(self.__name)

    @name.setter
    def name(self, value):
        with self.__lock:
            self.__name = value

    def start(self, trial):
        """Marks `trial` as running.
        """
        with self.__lock:
            self.__entries[trial] = {"trial": trial, "begin": time.time(),
                                     "end": None, "error": None}

    def __mark(self, trial, container, error=None):
        with self.__lock:
            entry = self.__entries.setdefault(
                trial, {"trial": trial, "begin": None, "end": None,
                        "error": None})
            entry["end"] = time.time()
            entry["error"] = error
            container.append(trial)

    def mark_finished(self, trial):
        self.__mark(trial, self.__finished)

    def mark_failed(self, trial, error=None):
        self.__mark(trial, self.__failed, error)

    @property
    def total(self):
        """Returns global state.
        """
        with self.__lock:
            done = len(self.__finished) + len(self.__failed)
            if self.__count > 0:
                percentage = done / self.__count * 100
            else:
                percentage = 0
            return ProgressState(count=self.__count,
                                 finished=len(self.__finished),
                                 failed=len(self.__failed),
                                 percentage=percentage)

    @property
    def failed(self):
        with self.__lock:
            return [copy.copy(self.__entries[trial])
                    for trial in sorted(self.__failed)]
