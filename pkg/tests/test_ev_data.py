from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexgrid.ev_data import (
    Archetype,
    ChargingSession,
    SessionDataError,
    SynthSpec,
    average_profile,
    build_profile,
    max_charging_power,
    parse_sessions,
    rasterize_user,
    robust_peak,
    synth_archetypes,
    synth_sessions,
    write_sessions,
)

UTC = timezone.utc
MONDAY = datetime(2020, 6, 1, tzinfo=UTC)


def sess(start, minutes, kw, uid="a"):
    return ChargingSession(uid, start, start + timedelta(minutes=minutes), kw)


def write_csv(path, rows):
    path.write_text("user_id,start,end,avg_power_kw\n" + "".join(r + "\n" for r in rows))
    return path


class TestParse:
    def test_counts_users(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", [
            "b,2020-06-01T10:00:00Z,2020-06-01T11:00:00Z,7.0",
            "a,2020-06-01T12:00:00Z,2020-06-01T13:00:00Z,3.6",
            "a,2020-06-02T12:00:00Z,2020-06-02T13:30:00Z,3.6",
        ])
        sessions, summary = parse_sessions(p)
        assert len(sessions) == 3 and summary.n_users == 2
        assert [s.user_id for s in sessions] == ["a", "a", "b"]
        assert summary.total_energy_kwh == pytest.approx(7.0 + 3.6 + 5.4)

    def test_bad_row_counted_or_fatal(self, tmp_path):
        p = write_csv(tmp_path / "s.csv", [
            "a,2020-06-01T10:00:00Z,2020-06-01T09:00:00Z,7.0",
            "a,2020-06-01T12:00:00Z,2020-06-01T13:00:00Z,3.6",
        ])
        sessions, summary = parse_sessions(p)
        assert len(sessions) == 1 and summary.n_rejected == 1
        with pytest.raises(SessionDataError, match=":2:"):
            parse_sessions(p, strict=True)

    def test_empty_and_zero_power(self, tmp_path):
        sessions, summary = parse_sessions(write_csv(tmp_path / "e.csv", []))
        assert sessions == [] and summary.n_users == 0
        sessions, summary = parse_sessions(write_csv(tmp_path / "z.csv", ["a,2020-06-01T10:00:00Z,2020-06-01T11:00:00Z,0"]))
        assert sessions == [] and summary.n_zero_power == 1 and summary.n_rejected == 0

    def test_header_and_missing_file(self, tmp_path):
        bad = tmp_path / "h.csv"
        bad.write_text("user,start,end,kw\n")
        with pytest.raises(SessionDataError, match="header"):
            parse_sessions(bad)
        with pytest.raises(FileNotFoundError):
            parse_sessions(tmp_path / "nope.csv")

    def test_long_session_rejected(self, tmp_path):
        p = write_csv(tmp_path / "l.csv", ["a,2020-06-01T10:00:00Z,2020-06-09T10:00:00Z,7.0"])
        assert parse_sessions(p)[1].n_rejected == 1

    def test_round_trip(self, tmp_path):
        spec = SynthSpec(5, 10, {"night": 0.5, "day": 0.5}, seed=3)
        sessions = synth_sessions(spec)
        write_sessions(sessions, tmp_path / "rt.csv")
        assert parse_sessions(tmp_path / "rt.csv")[0] == sessions


class TestRaster:
    def test_single_session(self):
        r = rasterize_user([sess(MONDAY + timedelta(hours=10), 60, 7.0)], "weekdays")
        assert r.shape == (1, 1440)
        assert np.all(r[0, 600:660] == 7.0) and r.sum() == 7.0 * 60

    def test_midnight_split(self):
        r = rasterize_user([sess(MONDAY + timedelta(hours=23, minutes=30), 60, 3.0)])
        assert r.shape == (2, 1440)
        assert np.all(r[0, -30:] == 3.0) and np.all(r[1, :30] == 3.0) and r.sum() == 3.0 * 60

    def test_overlap_adds(self):
        r = rasterize_user([sess(MONDAY, 10, 2.0), sess(MONDAY + timedelta(minutes=5), 10, 3.0)])
        assert r[0, 5] == 5.0 and r[0, 0] == 2.0 and r[0, 14] == 3.0

    def test_idle_days_and_filter(self):
        s = [sess(MONDAY, 60, 7.0), sess(MONDAY + timedelta(days=6), 60, 7.0)]  # Monday and Sunday
        assert rasterize_user(s, "all").shape[0] == 7
        assert rasterize_user(s, "weekdays").shape[0] == 5
        assert rasterize_user(s, "weekends").shape[0] == 2

    def test_partial_minutes_round_outwards(self):
        s = ChargingSession("a", MONDAY + timedelta(seconds=30), MONDAY + timedelta(minutes=2, seconds=1), 1.0)
        assert rasterize_user([s])[0, :4].tolist() == [1.0, 1.0, 1.0, 0.0]

    def test_errors(self):
        with pytest.raises(SessionDataError):
            rasterize_user([])
        with pytest.raises(SessionDataError):
            rasterize_user([sess(MONDAY, 5, 1.0, "a"), sess(MONDAY, 5, 1.0, "b")])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 20000), st.integers(1, 3000), st.floats(0.1, 50)), min_size=1, max_size=8))
    def test_energy_conserved(self, spans):
        sessions = [sess(MONDAY + timedelta(minutes=a), d, p) for a, d, p in spans]
        r = rasterize_user(sessions)
        expected = sum(p * d / 60 for _, d, p in spans)
        assert r.sum() / 60 == pytest.approx(expected, rel=1e-9)


class TestAverage:
    def test_two_days(self):
        raster = np.zeros((2, 1440))
        raster[0, 600] = 7.0
        avg, frac, n = average_profile(raster)
        assert avg[600] == 3.5 and frac[600] == 0.5 and n == 2

    def test_zero_and_identical_days(self):
        avg, frac, _ = average_profile(np.zeros((3, 1440)))
        assert not avg.any() and not frac.any()
        day = np.zeros(1440)
        day[60:120] = 7.0
        avg, _, n = average_profile(np.tile(day, (365, 1)))
        assert n == 365 and np.array_equal(avg, day)

    def test_scaling(self):
        s = [sess(MONDAY + timedelta(hours=h), 90, 2.5) for h in (1, 30, 55)]
        base = build_profile("a", s, "all")
        scaled = build_profile("a", [sess(x.start, 90, 2.5 * 3) for x in s], "all")
        np.testing.assert_allclose(scaled.avg_profile_kw, 3 * base.avg_profile_kw, rtol=1e-15)
        assert np.array_equal(scaled.frac_charging, base.frac_charging)

    def test_profile_bounded_by_observed_peak(self):
        s = synth_sessions(SynthSpec(3, 20, {"night": 1.0}, seed=1))
        for uid in {x.user_id for x in s}:
            mine = [x for x in s if x.user_id == uid]
            p = build_profile(uid, mine, "all")
            assert p.avg_profile_kw.max() <= rasterize_user(mine).max() + 1e-12
            assert 0 <= p.frac_charging.min() and p.frac_charging.max() <= 1


class TestPeak:
    def test_constant(self):
        assert robust_peak([7.0] * 13) == 7.0

    def test_outliers_dropped(self):
        assert robust_peak([7.0] * 90 + [50.0] * 10) == 7.0

    def test_one_to_ten(self):
        samples = list(range(1, 11))
        # drop the top ceil(0.1 n) values and take the max of the rest
        assert robust_peak(samples) == sorted(samples)[: 10 - 1][-1] == 9.0
        assert robust_peak(samples) == np.percentile(samples, 90, method="inverted_cdf")

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.1, 100), min_size=1, max_size=60), st.integers(1, 4), st.randoms())
    def test_order_and_duplication_invariant(self, samples, reps, rnd):
        shuffled = list(samples)
        rnd.shuffle(shuffled)
        assert robust_peak(shuffled) == robust_peak(samples) == robust_peak(samples * reps)
        assert robust_peak(samples) == np.percentile(samples, 90, method="inverted_cdf")

    def test_from_sessions(self):
        s = [sess(MONDAY, 90, 7.0), sess(MONDAY + timedelta(days=1), 10, 22.0)]
        assert max_charging_power(s) == 7.0
        assert max_charging_power([sess(MONDAY, 5, 3.0)]) == 3.0


class TestSynth:
    def test_degenerate_archetype(self):
        fixed = Archetype("fixed", 0.0, 0.0, 4.0, 0.0, 7.0, 1.0)
        spec = SynthSpec(1, 10, {"fixed": 1.0}, seed=0, archetypes={"fixed": fixed})
        s = synth_sessions(spec)
        assert len(s) == 10
        assert {(x.start.time(), x.end - x.start, x.avg_power_kw) for x in s} == {
            (datetime.min.time(), timedelta(hours=4), 7.0)}

    def test_deterministic(self, tmp_path):
        spec = SynthSpec(20, 14, {"night": 0.3, "day": 0.7}, seed=42)
        write_sessions(synth_sessions(spec), tmp_path / "a.csv")
        write_sessions(synth_sessions(spec), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_mix_counts(self):
        tags = synth_archetypes(SynthSpec(100, 1, {"night": 0.5, "day": 0.5}, seed=7))
        n_night = sum(t == "night" for t in tags.values())
        # 99 % binomial interval for n=100, p=0.5 is [37, 63]
        assert 37 <= n_night <= 63

    def test_invalid_mix(self):
        with pytest.raises(ValueError):
            synth_sessions(SynthSpec(5, 5, {"night": 0.5}, seed=0))
        with pytest.raises(ValueError):
            synth_sessions(SynthSpec(5, 5, {"nope": 1.0}, seed=0))

    def test_sessions_valid_and_start_date(self):
        spec = SynthSpec(10, 7, {"night": 0.5, "day_fast": 0.5}, seed=2, start_date=date(2021, 1, 4))
        s = synth_sessions(spec)
        assert s and all(x.end > x.start and x.avg_power_kw > 0 for x in s)
        assert min(x.start for x in s).date() >= date(2021, 1, 4)
