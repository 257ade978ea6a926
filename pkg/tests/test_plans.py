import json
import math

import pytest

from model.errors import ConfigInvalid, DomainError, IoError
from model.plans import JRule, canonical_json, load_plan, parse_plan, plan_from_dict

GEM1 = {"kind": "gem", "theta": 1.0}


def _occupancy(**extra):
    d = {"law": GEM1, "n": 100, "j_max": 3, "replicates": 10}
    d.update(extra)
    return d


class TestParsePlan:
    def test_malformed_json_reports_byte_offset(self):
        text = '{"law": {"kind": "gem"}, "n": é'
        with pytest.raises(ConfigInvalid) as info:
            parse_plan(text, "occupancy")
        # é is two bytes in UTF-8
        assert info.value.offset == len(text.encode("utf-8")) - 2
        assert "byte offset" in str(info.value)

    def test_missing_field_names_path(self):
        with pytest.raises(ConfigInvalid) as info:
            parse_plan(json.dumps({"law": GEM1, "n": 10, "j_max": 2}), "occupancy")
        assert info.value.path == "replicates"

    def test_valid(self):
        plan = parse_plan(json.dumps(_occupancy(seed=5)), "occupancy")
        assert (plan.n, plan.j_max, plan.replicates, plan.seed) == (100, 3, 10, 5)
        assert plan.weight.theta == 1.0

    def test_unknown_command(self):
        with pytest.raises(ConfigInvalid):
            plan_from_dict(_occupancy(), "histogram")


class TestFields:
    def test_schema(self):
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(_occupancy(schema=2), "occupancy")
        assert info.value.path == "schema"

    def test_cascade_needs_weight_law(self):
        law = {"kind": "independent", "xi": {"kind": "exponential", "rate": 1.0},
               "eta": {"kind": "exponential", "rate": 1.0}}
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(_occupancy(law=law), "occupancy")
        assert info.value.path == "law.kind"
        assert plan_from_dict({"law": law}, "renewal").weight is None

    def test_bad_law(self):
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(_occupancy(law={"kind": "gem", "theta": -1}), "occupancy")
        assert info.value.path == "law"

    def test_integer_fields(self):
        for bad in (0, 2.5, True, "3"):
            with pytest.raises(ConfigInvalid) as info:
                plan_from_dict(_occupancy(n=bad), "occupancy")
            assert info.value.path == "n"

    def test_list_entries(self):
        d = {"law": GEM1, "t_list": [10.0, 5.0], "j_rule": {"kind": "fixed", "j": 2},
             "u_list": [1.0], "replicates": 5}
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "clt32")
        assert info.value.path == "t_list"
        d["t_list"] = [10.0, -1.0]
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "clt32")
        assert info.value.path == "t_list[1]"

    def test_j_rule_paths(self):
        d = {"law": GEM1, "n_list": [100.0], "j_rule": {"kind": "power", "alpha": 0.7}, "replicates": 5}
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "wlln")
        assert info.value.path == "j_rule"
        d["j_rule"] = {"kind": "fixed", "j": 0}
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "wlln")
        assert info.value.path == "j_rule.j"
        d["j_rule"] = {"kind": "cubic"}
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "wlln")
        assert info.value.path == "j_rule.kind"

    def test_log_n(self):
        d = {"law": GEM1, "log_n": [5.0, 10.0], "j_rule": {"kind": "power", "alpha": 0.4}, "replicates": 5}
        plan = plan_from_dict(d, "wlln")
        assert plan.n_list == pytest.approx((math.exp(5.0), math.exp(10.0)))

    def test_levels_floor_at_zero(self):
        d = {"law": GEM1, "log_n": [5.0], "j_rule": {"kind": "power", "alpha": 0.4},
             "u_list": [0.1, 1.0], "replicates": 5}
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "clt21")
        assert info.value.path == "u_list"

    def test_vanish_needs_matching_list(self):
        d = {"law": GEM1, "j_rule": {"kind": "fixed", "j": 2}, "replicates": 5}
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "vanish")
        assert info.value.path == "t_list"
        d["statistic"] = "Y1"
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict(d, "vanish")
        assert info.value.path == "n_list"

    def test_checks(self):
        plan = plan_from_dict({"law": GEM1}, "renewal")
        assert "lorden" in plan.checks and "correction_factors" in plan.checks
        with pytest.raises(ConfigInvalid) as info:
            plan_from_dict({"law": GEM1, "checks": ["lorden", "bogus"]}, "renewal")
        assert info.value.path == "checks"


class TestJRule:
    def test_levels(self):
        rule = JRule.power(0.5 - 1e-9)
        assert rule.level(100.0) == 9
        assert JRule.fixed(3).level(1e6, 0.5) == 1
        # 100 * 0.29 is 28.999999999999996 in floating point
        assert JRule.fixed(100).level(1.0, 0.29) == 29
        assert JRule.fixed(2)(5.0) == 2

    def test_invalid(self):
        with pytest.raises(DomainError):
            JRule.power(0.5)
        with pytest.raises(DomainError):
            JRule.fixed(1.5)


class TestSeedAndIo:
    def test_with_seed_updates_config(self):
        plan = plan_from_dict(_occupancy(seed=1), "occupancy").with_seed(9)
        assert plan.seed == 9
        assert plan.effective_config()["seed"] == 9

    def test_load_plan(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps(_occupancy()), encoding="utf-8")
        assert load_plan(path, "occupancy").n == 100
        with pytest.raises(IoError):
            load_plan(tmp_path / "missing.json", "occupancy")

    def test_canonical_json(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
