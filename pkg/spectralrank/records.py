import csv
import json
import math
from collections import OrderedDict
from spectralrank.logging import Logger
from spectralrank.exceptions import EmitError


FORMATS = ("csv", "json")


class TraceRecord:
    """Measurements of one optimization step.
    """

    def __init__(self, step, loss, fields=None):
        """Initializes object.

        Arguments:
            step (int): Step index.
            loss (float): Loss at this step.
            fields (dict, optional): Named measurements (nr_l1, st_l1, ...).
        """
        self.__step = int(step)
        self.__loss = float(loss)
        self.__fields = OrderedDict(fields or {})

    @property
    def step(self):
        return self.__step

    @property
    def loss(self):
        return self.__loss

    @property
    def fields(self):
        return self.__fields

    def __getitem__(self, key):
        return self.as_row()[key]

    def as_row(self):
        row = OrderedDict([("step", self.__step), ("loss", self.__loss)])
        row.update(self.__fields)
        return row

    def __eq__(self, other):
        return isinstance(other, TraceRecord) \
            and self.as_row() == other.as_row()

    def __repr__(self):
        return "TraceRecord(step={}, loss={:.6g})".format(self.__step,
                                                          self.__loss)


class Record:
    """One row of a tabular experiment output.
    """

    def __init__(self, values):
        self.__values = OrderedDict(values)

    def __getitem__(self, key):
        return self.__values[key]

    def as_row(self):
        return OrderedDict(self.__values)

    def __eq__(self, other):
        return isinstance(other, Record) and self.as_row() == other.as_row()

    def __repr__(self):
        return "Record({})".format(dict(self.__values))


def format_value(value):
    """Text form of one CSV cell; floats keep 17 significant digits so they
    parse back bitwise.
    """
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        number = float(value)
        if number.is_integer() and hasattr(value, "dtype") \
                and value.dtype.kind in "iub":
            return str(int(number))
        return format(number, ".17g")
    return str(value)


def parse_value(text):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _json_value(value):
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def emit_records(records, path, format="csv", columns=None):
    """Writes records to `path`.

    Arguments:
        records (list): `TraceRecord` or `Record` entries (non-empty).
        path (str): Output path.
        format (str, optional): 'csv' (header row, '\\n' line endings) or
            'json' (a list of objects).
        columns (list, optional): Column order; defaults to the first
            record's keys. Missing cells are left empty.

    Raises:
        ValueError: `records` is empty or the format is unknown.
        EmitError: The file cannot be written.
    """
    records = list(records)
    if len(records) < 1:
        raise ValueError("no records to emit")
    if format not in FORMATS:
        raise ValueError("unknown format '{}'".format(format))
    rows = [record.as_row() for record in records]
    if columns is None:
        columns = list(rows[0].keys())
    try:
        with open(path, 'w', newline='', encoding="utf-8") as fd:
            if format == "csv":
                writer = csv.writer(fd, lineterminator='\n')
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([format_value(row.get(column))
                                     for column in columns])
            else:
                json.dump([OrderedDict((column, _json_value(row.get(column)))
                                       for column in columns)
                           for row in rows], fd, indent=1)
                fd.write('\n')
    except OSError as error:
        raise EmitError(path, str(error)) from error
    Logger("records", "emit").info("Wrote {} records to {}"
                                   .format(len(rows), path))


def load_records(path, format="csv"):
    """Reads back a file written by `emit_records` as a list of ordered
    column → value mappings.
    """
    try:
        with open(path, 'r', newline='', encoding="utf-8") as fd:
            if format == "csv":
                return [OrderedDict((key, parse_value(value))
                                    for key, value in row.items())
                        for row in csv.DictReader(fd)]
            return [OrderedDict(row) for row in
                    json.load(fd, object_pairs_hook=OrderedDict)]
    except OSError as error:
        raise EmitError(path, str(error)) from error
