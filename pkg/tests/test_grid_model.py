import csv
import json
import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from flexgrid.fixtures import fixture_dir, network_path
from flexgrid.grid_model import (
    Bus,
    Demand,
    Generator,
    Line,
    Network,
    NetworkError,
    demand_distribution,
    load_network,
    save_network,
    to_per_unit,
    to_physical,
    validate_network,
)

T0 = datetime(2020, 6, 1, tzinfo=timezone.utc)


def tiny(lines=None, buses=None, demands=None, series=None, gens=()):
    buses = buses or [Bus("s", 11.0, is_slack=True), Bus("a", 11.0), Bus("b", 11.0)]
    lines = lines if lines is not None else [Line("sa", "s", "a", 1.0, 2.0, 5.0), Line("ab", "a", "b", 1.0, 2.0, 5.0)]
    demands = demands or [Demand("a", "la"), Demand("b", "lb")]
    series = series or {"la": np.array([1.0, 2.0]), "lb": np.array([1.0, 2.0])}
    stamps = [T0, T0 + timedelta(minutes=30)]
    return Network("tiny", buses, lines, list(gens), demands, series, stamps, 10.0)


class TestLoad:
    def test_two_bus(self):
        net = load_network(network_path("two_bus"))
        assert [b.id for b in net.buses] == ["1", "2"] and net.slack.id == "1"
        (ln,) = net.lines
        assert (ln.from_bus, ln.to_bus) == ("1", "2")
        assert net.horizon == 4 and net.timestep_hours == 0.5
        assert net.slack_export_limit_mw == 3.0 and math.isinf(net.slack_import_limit_mw)

    def test_five_bus_counts(self):
        net = load_network(network_path("five_bus"))
        assert len(net.buses) == 5 and len(net.lines) == 4 and len(net.generators) == 1
        assert net.generators[0].kind == "wind_curtailable"

    def test_reorients_lines(self, tmp_path):
        net = tiny(lines=[Line("as", "a", "s", 1.0, 2.0, 5.0), Line("ba", "b", "a", 1.0, 2.0, 5.0)])
        save_network(net, tmp_path / "n.json")
        loaded = load_network(tmp_path / "n.json")
        assert [(ln.from_bus, ln.to_bus) for ln in loaded.lines] == [("s", "a"), ("a", "b")]

    def test_cycle_named(self):
        net = tiny(lines=[Line("sa", "s", "a", 1, 1, 5), Line("ab", "a", "b", 1, 1, 5), Line("bs", "b", "s", 1, 1, 5)])
        with pytest.raises(NetworkError, match=r"cycle .*sa.*ab.*bs|cycle .*bs.*ab.*sa") as e:
            validate_network(net)
        for lid in ("sa", "ab", "bs"):
            assert lid in str(e.value)

    def test_parallel_lines_are_a_cycle(self):
        net = tiny(lines=[Line("sa", "s", "a", 1, 1, 5), Line("sa2", "s", "a", 1, 1, 5), Line("ab", "a", "b", 1, 1, 5)])
        with pytest.raises(NetworkError, match="cycle"):
            validate_network(net)

    def test_disconnected_bus_named(self):
        net = tiny(lines=[Line("sa", "s", "a", 1, 1, 5)])
        with pytest.raises(NetworkError, match=r"\['b'\]"):
            validate_network(net)

    @pytest.mark.parametrize("mutate, msg", [
        (lambda n: n.buses.append(Bus("s2", 11.0, is_slack=True)), "slack"),
        (lambda n: n.demands.append(Demand("zz", "la")), "unknown bus"),
        (lambda n: n.demands.append(Demand("a", "nope")), "missing profile"),
        (lambda n: n.series.__setitem__("la", np.ones(3)), "horizon"),
        (lambda n: n.generators.append(Generator("g", "a", "solar", "la")), "kind"),
    ])
    def test_invalid(self, mutate, msg):
        net = tiny()
        mutate(net)
        with pytest.raises(NetworkError, match=msg):
            validate_network(net)

    def test_missing_profile_file(self, tmp_path):
        save_network(tiny(), tmp_path / "n.json")
        (tmp_path / "profiles" / "lb.csv").unlink()
        with pytest.raises(NetworkError, match="missing profile"):
            load_network(tmp_path / "n.json")

    def test_horizon_mismatch(self, tmp_path):
        save_network(tiny(), tmp_path / "n.json")
        p = tmp_path / "profiles" / "lb.csv"
        p.write_text(p.read_text().replace("2020-06-01T00:30:00Z", "2020-06-01T01:00:00Z"))
        with pytest.raises(NetworkError, match="horizon"):
            load_network(tmp_path / "n.json")

    def test_schema_and_json_errors(self, tmp_path):
        (tmp_path / "a.json").write_text("{not json")
        with pytest.raises(NetworkError, match="invalid JSON"):
            load_network(tmp_path / "a.json")
        (tmp_path / "b.json").write_text(json.dumps({"schema": "x"}))
        with pytest.raises(NetworkError, match="schema"):
            load_network(tmp_path / "b.json")

    def test_save_load_round_trip(self, tmp_path):
        src = load_network(network_path("five_bus"))
        save_network(src, tmp_path / "n.json")
        again = load_network(tmp_path / "n.json")
        assert again.buses == src.buses and again.lines == src.lines
        for k in src.series:
            np.testing.assert_array_equal(again.series[k], src.series[k])


class TestPerUnit:
    def test_impedance_base(self, two_bus):
        assert two_bus.z_base_ohm[0] == pytest.approx(12.1, rel=1e-15)
        assert two_bus.r_pu[0] == pytest.approx(0.1, rel=1e-12)
        assert two_bus.x_pu[0] == pytest.approx(0.2, rel=1e-12)

    def test_base_change_scales_impedance(self):
        net = load_network(network_path("five_bus"))
        a, b = to_per_unit(net, 10.0), to_per_unit(net, 100.0)
        np.testing.assert_allclose(b.r_pu, 10 * a.r_pu, rtol=1e-12)
        np.testing.assert_allclose(b.demand_p, a.demand_p / 10, rtol=1e-12)

    @pytest.mark.parametrize("name", ["two_bus", "five_bus", "oversupply_week"])
    def test_round_trip(self, name):
        net = load_network(network_path(name))
        back = to_physical(to_per_unit(net, 7.0))
        for ln, ln2 in zip(net.lines, back.lines):
            assert ln2.r_ohm == pytest.approx(ln.r_ohm, rel=1e-12)
            assert ln2.x_ohm == pytest.approx(ln.x_ohm, rel=1e-12)
            assert ln2.s_max_mva == pytest.approx(ln.s_max_mva, rel=1e-12)
        for k, v in net.series.items():
            np.testing.assert_allclose(back.series[k], v, rtol=1e-12, atol=0)

    def test_mixed_voltage_line_rejected(self):
        net = tiny(buses=[Bus("s", 33.0, is_slack=True), Bus("a", 11.0), Bus("b", 11.0)])
        with pytest.raises(NetworkError, match="transformers"):
            to_per_unit(net)


class TestDemandDistribution:
    def test_equal_and_single(self):
        w = demand_distribution(tiny())
        assert w == {"s": 0.0, "a": 0.5, "b": 0.5}
        one = tiny(demands=[Demand("a", "la")], series={"la": np.array([1.0, 3.0])})
        assert demand_distribution(one)["a"] == 1.0

    def test_five_bus_by_hand(self):
        root = fixture_dir("five_bus")
        doc = json.loads((root / "network.json").read_text())
        energy = {}
        for d in doc["demands"]:
            with open(root / doc["profiles"][d["profile"]], newline="") as fh:
                energy[d["bus"]] = energy.get(d["bus"], 0.0) + sum(float(r["value_mw"]) for r in csv.DictReader(fh))
        total = sum(energy.values())
        w = demand_distribution(load_network(root / "network.json"))
        for bus, e in energy.items():
            assert w[bus] == pytest.approx(e / total, rel=1e-12)
        assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)

    def test_scale_invariant(self):
        net = load_network(network_path("oversupply_week"))
        w = demand_distribution(net)
        net.series = {k: v * 3.7 for k, v in net.series.items()}
        for bus, x in demand_distribution(net).items():
            assert x == pytest.approx(w[bus], rel=1e-12, abs=1e-15)

    def test_zero_demand(self):
        with pytest.raises(NetworkError, match="zero"):
            demand_distribution(tiny(series={"la": np.zeros(2), "lb": np.zeros(2)}))
