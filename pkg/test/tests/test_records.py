import unittest
import os
import json
import tempfile
import numpy as np
import spectralrank
from spectralrank.records import Record
from spectralrank.records import TraceRecord
from spectralrank.exceptions import EmitError


class TestEmit(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.directory.name, "trace.csv")

    def tearDown(self):
        self.directory.cleanup()

    def test_single_record(self):
        spectralrank.records.emit_records(
            [TraceRecord(0, 1.0, {"nr_l1": 2.5})], self.path)
        with open(self.path, 'r', newline='') as fd:
            text = fd.read()
        self.assertEqual(text, "step,loss,nr_l1\n0,1,2.5\n")

    def test_float_round_trip(self):
        values = [1.0, 0.1, 1.0 / 3.0, 2.0 ** -1074, 1e308, -np.pi]
        rows = [Record([("index", i), ("value", v)])
                for i, v in enumerate(values)]
        spectralrank.records.emit_records(rows, self.path)
        loaded = spectralrank.records.load_records(self.path)
        self.assertEqual([row["value"] for row in loaded], values)
        self.assertEqual([row["index"] for row in loaded],
                         list(range(len(values))))

    def test_numpy_and_bool_cells(self):
        rows = [Record([("a", np.float64(0.25)), ("b", np.int64(3)),
                        ("c", True), ("d", None), ("e", "relu")])]
        spectralrank.records.emit_records(rows, self.path)
        with open(self.path, 'r') as fd:
            self.assertEqual(fd.read().splitlines()[1], "0.25,3,1,,relu")

    def test_json(self):
        path = os.path.join(self.directory.name, "trace.json")
        records = [TraceRecord(t, 1.0 / (t + 1), {"favored_l1": t % 2})
                   for t in range(3)]
        spectralrank.records.emit_records(records, path, format="json")
        loaded = spectralrank.records.load_records(path, format="json")
        self.assertEqual([dict(row) for row in loaded],
                         [dict(record.as_row()) for record in records])
        with open(path, 'r') as fd:
            self.assertEqual(len(json.load(fd)), 3)

    def test_columns(self):
        rows = [Record([("a", 1), ("b", 2)]), Record([("a", 3)])]
        spectralrank.records.emit_records(rows, self.path, columns=["b", "a"])
        with open(self.path, 'r') as fd:
            self.assertEqual(fd.read(), "b,a\n2,1\n,3\n")

    def test_errors(self):
        with self.assertRaises(ValueError):
            spectralrank.records.emit_records([], self.path)
        with self.assertRaises(ValueError):
            spectralrank.records.emit_records([Record([("a", 1)])],
                                              self.path, format="xml")
        missing = os.path.join(self.directory.name, "missing", "trace.csv")
        with self.assertRaises(EmitError):
            spectralrank.records.emit_records([Record([("a", 1)])], missing)


class TestTraceRecord(unittest.TestCase):

    def test_access(self):
        record = TraceRecord(4, 0.5, {"nr_l1": 3.0})
        self.assertEqual(record["step"], 4)
        self.assertEqual(record["nr_l1"], 3.0)
        self.assertEqual(list(record.as_row()), ["step", "loss", "nr_l1"])
        self.assertEqual(record, TraceRecord(4, 0.5, {"nr_l1": 3.0}))
        self.assertNotEqual(record, TraceRecord(4, 0.5))


if __name__ == '__main__':
    unittest.main()
