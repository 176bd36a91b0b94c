"""End-to-end checks of the micloc command-line tool.

usage: cli_test.py <micloc binary> <data dir>
"""

import csv
import json
import math
import os
import subprocess
import sys
import tempfile
import unittest

BIN = None
DATA = None

EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_FORMAT = 5
EXIT_DIMENSION = 6
EXIT_RANGE = 7


def run(*args, ok=True):
    proc = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True)
    if ok and proc.returncode != 0:
        raise AssertionError(f"{args} failed ({proc.returncode}): {proc.stderr}")
    return proc


def stdout_json(proc):
    return json.loads(proc.stdout)


def read_map(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [float(r["value"]) for r in rows]


def write_json_csm(path, entries, m, freq):
    header = {"format": "micloc-csm", "version": 1, "m": m, "frequency_hz": freq, "encoding": "json",
              "entries": entries}
    with open(path, "w") as f:
        json.dump(header, f)


def steering_norm2(index, freq):
    """|e|^2 for a grid point, from the array file and the grid formulas."""
    mics = []
    with open(os.path.join(DATA, "array30.txt")) as f:
        for line in f:
            line = line.split("#")[0].strip()
            if line:
                mics.append([float(v) for v in line.split()])
    n, z0, alpha = 15, 2.0, math.radians(45.0)
    side = 2 * z0 * math.tan(alpha / 2)
    dx = side / (n - 1)
    r, c = divmod(index, n)
    p = (-side / 2 + c * dx, -side / 2 + r * dx, z0)
    centre = [sum(m[k] for m in mics) / len(mics) for k in range(3)]
    r0 = math.dist(p, centre)
    return sum((math.dist(p, m) / r0) ** 2 for m in mics)


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory(prefix="micloc-cli-")
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.dir, name)

    def assert_error(self, proc, code, kind=None):
        self.assertEqual(proc.returncode, code, proc.stderr)
        lines = proc.stderr.strip().splitlines()
        self.assertEqual(len(lines), 1, proc.stderr)
        err = json.loads(lines[0])
        self.assertIn("message", err)
        if kind:
            self.assertEqual(err["error"], kind)
        return err

    def test_synth_single_source_trace(self):
        out = stdout_json(run("synth-csm", "--sources", "112:1.0", "--out", self.path("c.csm")))
        self.assertEqual(out["m"], 30)
        self.assertEqual(out["sources"], [{"index": 112, "power": 1.0}])
        self.assertAlmostEqual(out["trace"], steering_norm2(112, 8000.0), delta=1e-9)

    def test_synth_random_is_deterministic(self):
        a = stdout_json(run("synth-csm", "--random-k", 3, "--seed", 7, "--out", self.path("a.csm")))
        b = stdout_json(run("synth-csm", "--random-k", 3, "--seed", 7, "--out", self.path("b.csm")))
        c = stdout_json(run("synth-csm", "--random-k", 3, "--seed", 8, "--out", self.path("c.csm")))
        with open(self.path("a.csm"), "rb") as fa, open(self.path("b.csm"), "rb") as fb:
            self.assertEqual(fa.read(), fb.read())
        self.assertEqual(a["sources"], b["sources"])
        self.assertNotEqual(a["sources"], c["sources"])
        self.assertEqual(len({s["index"] for s in a["sources"]}), 3)

    def test_synth_errors(self):
        err = self.assert_error(run("synth-csm", "--sources", "999:1.0", "--out", self.path("x.csm"), ok=False),
                                EXIT_RANGE, "out-of-range")
        self.assertIn("999", err["message"])
        err = self.assert_error(run("synth-csm", "--sources", "12:1.0,abc", "--out", self.path("x.csm"), ok=False),
                                EXIT_USAGE)
        self.assertIn("abc", err["message"])
        self.assert_error(run("synth-csm", "--out", self.path("x.csm"), ok=False), EXIT_USAGE)
        self.assertFalse(os.path.exists(self.path("x.csm")))

    def test_beamform_peak_matches_source(self):
        run("synth-csm", "--sources", "37:1.0", "--out", self.path("c.csm"))
        out = stdout_json(run("beamform", "--csm", self.path("c.csm"), "--out", self.path("m.csv"),
                              "--pgm", self.path("m.pgm")))
        values = read_map(self.path("m.csv"))
        self.assertEqual(len(values), 225)
        self.assertEqual(out["peak_index"], 37)
        self.assertEqual(max(range(225), key=values.__getitem__), 37)
        with open(self.path("m.pgm"), "rb") as f:
            self.assertTrue(f.read().startswith(b"P5\n# micloc min="))

    def test_beamform_zero_csm(self):
        write_json_csm(self.path("z.csm"), [[0.0, 0.0]] * 900, 30, 5000.0)
        run("beamform", "--csm", self.path("z.csm"), "--out", self.path("m.csv"))
        self.assertTrue(all(v == 0.0 for v in read_map(self.path("m.csv"))))

    def test_beamform_diagonal_removal_cancels_white_noise(self):
        entries = [[0.37, 0.0] if i % 31 == 0 else [0.0, 0.0] for i in range(900)]
        write_json_csm(self.path("n.csm"), entries, 30, 5000.0)
        run("beamform", "--csm", self.path("n.csm"), "--diagonal-removal", "--out", self.path("dr.csv"))
        self.assertTrue(all(abs(v) < 1e-12 for v in read_map(self.path("dr.csv"))))
        run("beamform", "--csm", self.path("n.csm"), "--out", self.path("plain.csv"))
        self.assertTrue(all(v > 0.0 for v in read_map(self.path("plain.csv"))))

    def test_beamform_size_mismatch_names_both(self):
        write_json_csm(self.path("s.csm"), [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]], 2, 5000.0)
        err = self.assert_error(run("beamform", "--csm", self.path("s.csm"), "--out", self.path("m.csv"), ok=False),
                                EXIT_DIMENSION)
        self.assertIn("2", err["message"])
        self.assertIn("30", err["message"])

    def test_damas_support_equals_truth(self):
        echo = stdout_json(run("synth-csm", "--sources", "48:1,56:1,172:1", "--out", self.path("c.csm")))
        truth = sorted(s["index"] for s in echo["sources"])
        out = stdout_json(run("damas", "--csm", self.path("c.csm"), "--out", self.path("d.csv"),
                              "--residuals", self.path("r.csv"), "--propagation-cache", self.path("a.bin")))
        self.assertEqual(out["support"], truth)
        values = read_map(self.path("d.csv"))
        peak = max(values)
        self.assertEqual([i for i, v in enumerate(values) if v > 1e-6 * peak], truth)
        for i in truth:
            self.assertAlmostEqual(values[i], 1.0, delta=1e-6)
        self.assertFalse(out["propagation_cached"])
        again = stdout_json(run("damas", "--csm", self.path("c.csm"), "--out", self.path("d2.csv"),
                                "--propagation-cache", self.path("a.bin")))
        self.assertTrue(again["propagation_cached"])
        self.assertEqual(read_map(self.path("d2.csv")), values)

    def test_damas_residual_falls(self):
        run("synth-csm", "--sources", "64:1,65:1,160:1", "--freq", 3000, "--out", self.path("c.csm"))
        one = stdout_json(run("damas", "--csm", self.path("c.csm"), "--iterations", 1,
                              "--out", self.path("d1.csv")))
        many = stdout_json(run("damas", "--csm", self.path("c.csm"), "--iterations", 1000,
                               "--out", self.path("d2.csv"), "--residuals", self.path("r.csv")))
        self.assertLessEqual(many["residual"], one["residual"])
        with open(self.path("r.csv"), newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["iteration", "residual"])
        self.assertEqual(rows[1][0], "1")
        self.assertEqual(rows[-1][0], "1000")

    def test_damas_missing_csm(self):
        self.assert_error(run("damas", "--csm", self.path("missing.csm"), "--out", self.path("d.csv"), ok=False),
                          EXIT_NOT_FOUND, "file-not-found")

    def test_corrupt_csm_is_a_format_error(self):
        with open(self.path("bad.csm"), "w") as f:
            f.write("{\"format\":\"micloc-csm\"\n")
        self.assert_error(run("beamform", "--csm", self.path("bad.csm"), "--out", self.path("m.csv"), ok=False),
                          EXIT_FORMAT, "format")

    def test_train_and_eval(self):
        ds = self.path("d.bin")
        run("gen-data", "--count", 100, "--seed", 3, "--out", ds)
        run("gen-data", "--count", 100, "--seed", 3, "--out", self.path("d2.bin"))
        with open(ds, "rb") as a, open(self.path("d2.bin"), "rb") as b:
            self.assertEqual(a.read(), b.read())

        run("train", "--data", ds, "--epochs", 2, "--seed", 1, "--out", self.path("w.bin"),
            "--history", self.path("h.csv"), "--quiet")
        with open(self.path("h.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 2)
        self.assertEqual([r["epoch"] for r in rows], ["1", "2"])
        self.assertLess(float(rows[1]["train_loss"]), float(rows[0]["train_loss"]))

        report = stdout_json(run("eval", "--data", ds, "--weights", self.path("w.bin"),
                                 "--out", self.path("report.json")))
        self.assertEqual(report["total"], 10)
        with open(self.path("report.json")) as f:
            full = json.load(f)
        self.assertIn("failure_breakdown", full)
        self.assertIn("seconds_per_sample", full)

        oracle = stdout_json(run("eval", "--data", ds, "--oracle", "--out", self.path("oracle.json")))
        self.assertEqual(oracle["accuracy"], 1.0)

    def test_eval_rejects_mismatched_weights(self):
        run("gen-data", "--count", 20, "--n", 11, "--out", self.path("small.bin"))
        run("gen-data", "--count", 20, "--out", self.path("big.bin"))
        run("train", "--data", self.path("small.bin"), "--epochs", 1, "--out", self.path("w.bin"), "--quiet")
        err = self.assert_error(run("eval", "--data", self.path("big.bin"), "--weights", self.path("w.bin"),
                                    "--out", self.path("r.json"), ok=False), EXIT_DIMENSION)
        self.assertIn("121", err["message"])

    def test_config_file_and_flag_override(self):
        cfg = self.path("cfg.json")
        with open(cfg, "w") as f:
            json.dump({"freq": 5000, "sources": "12:2.0", "out": self.path("cfg.csm"), "unused_key": 1}, f)
        from_file = stdout_json(run("synth-csm", "--config", cfg))
        self.assertEqual(from_file["frequency_hz"], 5000.0)
        self.assertEqual(from_file["sources"], [{"index": 12, "power": 2.0}])
        overridden = stdout_json(run("synth-csm", "--config", cfg, "--freq", 3000))
        self.assertEqual(overridden["frequency_hz"], 3000.0)
        self.assertEqual(overridden["sources"], [{"index": 12, "power": 2.0}])

    def test_unknown_subcommand_is_a_usage_error(self):
        self.assert_error(run("frobnicate", ok=False), EXIT_USAGE)


if __name__ == "__main__":
    BIN, DATA = sys.argv[1], sys.argv[2]
    unittest.main(argv=sys.argv[:1], verbosity=2)
