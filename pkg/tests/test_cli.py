import csv
import io
import json
import math

import pytest

from swarmphase import cli
from swarmphase.evaluation import REPORT_COLUMNS
from swarmphase.protocol import load_policy


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestParsing:
    @pytest.mark.parametrize("text,expected", [("3", [3]), ("1,2, 5", [1, 2, 5]), ("1..4", [1, 2, 3, 4]), ("", []), (7, [7])])
    def test_int_list(self, text, expected):
        assert cli.parse_int_list(text) == expected

    def test_bad_seed(self, capsys):
        code, _, err = run(capsys, "evaluate", "--seed", -1)
        assert code == cli.EXIT_CONFIG and "seed" in err

    def test_unknown_protocol(self, capsys):
        assert run(capsys, "evaluate", "--protocol", "bogus")[0] == cli.EXIT_CONFIG

    def test_missing_policy_file(self, capsys, tmp_path):
        assert run(capsys, "evaluate", "--policy-file", tmp_path / "nope.json")[0] == cli.EXIT_CONFIG

    def test_unknown_config_key(self, capsys, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("fd: 0.9\nbogus: 1\n")
        assert run(capsys, "evaluate", "--config", path)[0] == cli.EXIT_CONFIG

    def test_invalid_model(self, capsys):
        assert run(capsys, "evaluate", "--fd", 1.5)[0] == cli.EXIT_CONFIG


class TestEvaluate:
    def test_largest_scale(self, capsys):
        code, out, _ = run(capsys, "evaluate", "--k", 9, "--trials", 512)
        assert code == 0
        (row,) = rows(out)
        assert row["N"] == "8164" and row["protocol"] == "cappellaro" and row["f_d"] == "0.85"
        assert set(row) == set(REPORT_COLUMNS)

    def test_k_list(self, capsys):
        code, out, _ = run(capsys, "evaluate", "--k", "1..9", "--trials", 256)
        n = [int(r["N"]) for r in rows(out)]
        assert code == 0 and len(n) == 9 and all(a < b for a, b in zip(n, n[1:]))

    def test_exact_cap_is_runtime_error(self, capsys):
        code, _, err = run(capsys, "evaluate", "--k", 3, "--method", "exact")
        assert code == cli.EXIT_RUNTIME and "cap" in err

    def test_exact(self, capsys):
        code, out, _ = run(capsys, "evaluate", "--g", 1, "--f", 0, "--k", 0, "--fd", 1, "--t2", "inf", "--method", "exact")
        (row,) = rows(out)
        assert code == 0 and float(row["V_H"]) == pytest.approx(3.0, abs=1e-12) and row["t2_over_tau"] == "inf"

    def test_byte_identical_and_sidecar(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert run(capsys, "evaluate", "--k", "2,3", "--trials", 1000, "--seed", 9, "--out", out)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
        assert meta["command"] == "evaluate" and meta["workers"] == 1 and "timestamp" in meta
        assert meta["config"]["seed"] == 9 and meta["config"]["trials"] == 1000 and meta["config"]["k"] == [2, 3]

    def test_config_file_and_override(self, capsys, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("fd: 0.95\nk: '1,2'\ntrials: 300\nprotocol: nonadaptive\n")
        code, out, _ = run(capsys, "evaluate", "--config", path, "--fd", 0.7)
        got = rows(out)
        assert code == 0 and len(got) == 2
        assert all(r["f_d"] == "0.7" and r["trials"] == "300" and r["protocol"] == "nonadaptive" for r in got)

    def test_workers_env(self, capsys, monkeypatch):
        monkeypatch.setenv("SWARMPHASE_WORKERS", "2")
        _, out, _ = run(capsys, "evaluate", "--k", 1, "--trials", 500)
        _, out1, _ = run(capsys, "evaluate", "--k", 1, "--trials", 500, "--workers", 1)
        (r2,), (r1,) = rows(out), rows(out1)
        assert r2["workers"] == "2" and r1["workers"] == "1" and r1["V_H"] == r2["V_H"]


class TestOptimize:
    ARGS = ("optimize", "--g", 2, "--f", 1, "--k", 1, "--protocol", "hybrid", "--iterations", 5,
            "--train-trials", 512, "--trials", 1024, "--fd", 0.95)

    def test_policy_file(self, capsys, tmp_path):
        out = tmp_path / "p.json"
        assert run(capsys, *self.ARGS, "--out", out)[0] == 0
        policy, sched = load_policy(out)
        assert (sched.G, sched.F, sched.K) == (2, 1, 1) and policy.increments.size == 10
        doc = json.loads(out.read_text())
        assert doc["training"]["seed"] == 1 and doc["validation"]["seed"] == 2
        assert doc["validation"]["std_error"] > 0
        trace = rows((tmp_path / "p.json.trace.csv").read_text())
        assert [int(r["iteration"]) for r in trace] == list(range(6))
        (report,) = rows((tmp_path / "p.json.report.csv").read_text())
        assert float(report["V_H"]) == doc["validation"]["V_H"]

        # the saved policy evaluates to the recorded validation score
        code, text, _ = run(capsys, "evaluate", "--policy-file", out, "--fd", 0.95, "--trials", 1024, "--seed", 2)
        assert code == 0 and float(rows(text)[0]["V_H"]) == doc["validation"]["V_H"]

    def test_deterministic(self, capsys, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            run(capsys, *self.ARGS, "--out", out)
        for suffix in ("", ".trace.csv", ".report.csv"):
            assert (tmp_path / f"a.json{suffix}").read_bytes() == (tmp_path / f"b.json{suffix}").read_bytes()

    @pytest.mark.parametrize("extra", [("--protocol", "cappellaro"), ("--k", "1,2"), ()])
    def test_config_errors(self, capsys, tmp_path, extra):
        args = list(self.ARGS)
        if extra:
            args += [*extra, "--out", tmp_path / "x.json"]
        assert run(capsys, *args)[0] == cli.EXIT_CONFIG


class TestSweep:
    def test_shape(self, capsys):
        code, out, _ = run(capsys, "sweep", "--k", "1..6", "--trials", 256, "--g", 2, "--f", 1)
        got = rows(out)
        assert code == 0 and len(got) == 6
        assert list(got[0]) == [
            "K", "N",
            "nonadaptive_V_H", "nonadaptive_V_H_N", "nonadaptive_std_error",
            "cappellaro_V_H", "cappellaro_V_H_N", "cappellaro_std_error",
            "holevo_bound_N", "equal_time_N",
        ]
        for r in got:
            n = int(r["N"])
            assert float(r["holevo_bound_N"]) == pytest.approx(n * math.tan(math.pi / (n + 2)) ** 2, rel=1e-14)
            assert float(r["equal_time_N"]) == 1.0


class TestBounds:
    def test_values(self, capsys):
        code, out, _ = run(capsys, "bounds", "--n", "1,100,8164")
        r1, r100, r8164 = rows(out)
        assert code == 0
        assert float(r1["holevo_bound"]) == pytest.approx(3.0)
        assert float(r100["equal_time_variance"]) == 0.01
        assert float(r100["equal_time_dynamic_range"]) == pytest.approx(math.pi / 10)
        assert float(r100["multi_time_dynamic_range"]) == 0.01
        assert float(r8164["holevo_bound"]) == pytest.approx((math.pi / 8166) ** 2, rel=1e-3)

    def test_empty(self, capsys):
        code, out, _ = run(capsys, "bounds")
        assert code == 0 and out.strip() == ",".join(cli.BOUNDS_HEADER)

    def test_rejects_zero(self, capsys):
        assert run(capsys, "bounds", "--n", "0")[0] == cli.EXIT_CONFIG
