import hashlib
import json
import math

import numpy as np
import pytest

from lab.clt import run_theorem21, run_theorem32
from lab.reports import RunManifest, config_hash, csv_text, format_value, write_atomic, write_csv, write_json
from lab.runs import CLT_COLUMNS
from model.errors import IoError
from model.plans import plan_from_dict


class TestFormatValue:
    def test_values(self):
        assert format_value(None) == ""
        assert format_value(True) == "true"
        assert format_value(np.int64(7)) == "7"
        assert format_value(0.1) == "0.10000000000000001"
        assert format_value(math.nan) == "nan"
        assert format_value(-math.inf) == "-inf"
        assert format_value("GEM(1)") == "GEM(1)"

    def test_float_round_trip(self):
        x = 1.0 / 3.0
        assert float(format_value(x)) == x


class TestWriters:
    def test_csv_uses_lf(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["j", "K"], [[1, 2], {"j": 2, "K": None}])
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.decode("utf-8") == "j,K\n1,2\n2,\n"

    def test_csv_text_dict_rows(self):
        assert csv_text(["a"], [{"a": 0.5, "b": 9}]) == "a\n0.5\n"

    def test_json_nan_is_null(self, tmp_path):
        path = write_json(tmp_path / "r.json", {"x": math.nan, "y": np.array([1.0, np.inf]), "ok": np.bool_(True)})
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data == {"x": None, "y": [1.0, None], "ok": True}

    def test_atomic_replace(self, tmp_path):
        target = tmp_path / "out.txt"
        write_atomic(target, "first")
        write_atomic(target, "second")
        assert target.read_text(encoding="utf-8") == "second"
        assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]

    def test_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x", encoding="utf-8")
        with pytest.raises(IoError):
            write_atomic(blocker / "inner.json", "{}")


class TestRunManifest:
    def test_hash(self):
        config = {"seed": 1, "law": {"kind": "gem", "theta": 1.0}}
        expected = hashlib.sha256(b'{"law":{"kind":"gem","theta":1.0},"seed":1}').hexdigest()
        assert config_hash(config) == expected
        assert RunManifest("renewal", config, 1).config_hash == expected

    def test_passed_and_seal(self, tmp_path):
        manifest = RunManifest("brw", {"seed": 3}, 3)
        assert manifest.passed
        manifest.results["brw"] = False
        assert not manifest.passed
        manifest.add_output("brw_report", tmp_path / "brw_report.json")
        path = manifest.seal(tmp_path)
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["passed"] is False
        assert data["finished"] is not None
        assert data["outputs"] == {"brw_report": str(tmp_path / "brw_report.json")}


class TestReportDeterminism:
    @pytest.mark.parametrize("command,payload,runner", [
        ("clt21", {"log_n": [5.0], "u_list": [0.5, 1.0]}, run_theorem21),
        ("clt32", {"t_list": [10.0], "u_list": [1.0]}, run_theorem32),
    ])
    def test_thread_count_does_not_change_bytes(self, tmp_path, command, payload, runner):
        plan = plan_from_dict({"law": {"kind": "gem", "theta": 1.0}, "j_rule": {"kind": "fixed", "j": 2},
                               "replicates": 40, "h": 0.01, "seed": 13, **payload}, command)
        outputs = []
        for threads in (1, 2):
            report = runner(plan, threads)
            json_path = write_json(tmp_path / f"{command}_{threads}.json", report.to_dict())
            csv_path = write_csv(tmp_path / f"{command}_{threads}.csv", CLT_COLUMNS, report.rows())
            outputs.append((json_path.read_bytes(), csv_path.read_bytes()))
        assert outputs[0] == outputs[1]
        assert outputs[0][1].count(b"\n") == 1 + 40 * len(plan.u_list)
