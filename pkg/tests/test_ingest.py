"""CSV parsing, inference, filtering, and densification tests."""
import pytest

from kharita.geo import GpsPoint, angle_diff_deg, vincenty_m
from kharita.ingest import (
    EmptyInputError,
    IngestConfig,
    Trajectory,
    densify,
    filter_slow_points,
    infer_speed_heading,
    parse_trajectories,
    prepare_trajectories,
)

CFG = IngestConfig()

HEADER = "vehicle_id,timestamp,lat,lon,speed_kmh,heading_deg\n"


def write_csv(tmp_path, body, name="in.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return str(p)


def north_of(lat, lon, meters):
    """Roughly `meters` north of (lat, lon)."""
    return lat + meters / 111319.49, lon


class TestParse:
    def test_basic_grouping_and_order(self, tmp_path):
        path = write_csv(tmp_path, (
            "a,100,25.0,51.0,30,0\n"
            "b,100,25.1,51.1,30,90\n"
            "a,110,25.001,51.0,30,0\n"
            "a,105,25.0005,51.0,30,0\n"
        ))
        trs = parse_trajectories(path, CFG)
        assert [t.vehicle_id for t in trs] == ["a", "b"]
        assert [p.timestamp for p in trs[0].points] == [100.0, 105.0, 110.0]

    def test_gap_splits_trajectory(self, tmp_path):
        path = write_csv(tmp_path, (
            "a,100,25.0,51.0,30,0\n"
            "a,200,25.001,51.0,30,0\n"
            "a,900,25.002,51.0,30,0\n"   # 700 s gap > 300 s
        ))
        trs = parse_trajectories(path, CFG)
        assert len(trs) == 2
        assert len(trs[0]) == 2 and len(trs[1]) == 1
        assert trs[0].vehicle_id == trs[1].vehicle_id == "a"

    def test_iso_timestamps(self, tmp_path):
        path = write_csv(tmp_path, (
            "a,2023-05-01T00:00:00Z,25.0,51.0,30,0\n"
            "a,2023-05-01T00:01:00+00:00,25.001,51.0,30,0\n"
        ))
        trs = parse_trajectories(path, CFG)
        assert trs[0].points[1].timestamp - trs[0].points[0].timestamp == 60.0

    def test_missing_optional_fields(self, tmp_path):
        path = write_csv(tmp_path, "a,100,25.0,51.0,,\n")
        trs = parse_trajectories(path, CFG)
        p = trs[0].points[0]
        assert p.speed_kmh is None and p.heading_deg is None

    def test_malformed_rows_skipped_and_counted(self, tmp_path, caplog):
        path = write_csv(tmp_path, (
            "a,100,25.0,51.0,30,0\n"
            "a,notatime,25.0,51.0,30,0\n"
            "a,101,91.5,51.0,30,0\n"      # lat out of range
            "a,102,25.0,51.0,-4,0\n"      # negative speed
            "a,103,25.0\n"                # wrong column count
        ))
        with caplog.at_level("WARNING"):
            trs = parse_trajectories(path, CFG)
        assert sum(len(t) for t in trs) == 1
        assert "4" in caplog.text

    def test_heading_normalized(self, tmp_path):
        path = write_csv(tmp_path, "a,100,25.0,51.0,30,361.5\n")
        trs = parse_trajectories(path, CFG)
        assert trs[0].points[0].heading_deg == pytest.approx(1.5)

    def test_empty_input_raises(self, tmp_path):
        path = write_csv(tmp_path, "")
        with pytest.raises(EmptyInputError):
            parse_trajectories(path, CFG)
        path = write_csv(tmp_path, "a,bad,25.0,51.0,,\n", name="allbad.csv")
        with pytest.raises(EmptyInputError):
            parse_trajectories(path, CFG)

    def test_wrong_header_raises(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("foo,bar\n1,2\n")
        with pytest.raises(ValueError):
            parse_trajectories(str(p), CFG)


class TestInferSpeedHeading:
    def test_complete_trajectory_unchanged(self):
        tr = Trajectory("a", [
            GpsPoint("a", 0.0, 25.0, 51.0, 30.0, 0.0),
            GpsPoint("a", 10.0, 25.001, 51.0, 30.0, 0.0),
        ])
        assert infer_speed_heading(tr) is tr

    def test_speed_and_heading_filled(self):
        lat2, lon2 = north_of(25.0, 51.0, 100.0)
        tr = Trajectory("a", [
            GpsPoint("a", 0.0, 25.0, 51.0, None, None),
            GpsPoint("a", 10.0, lat2, lon2, None, None),
        ])
        got = infer_speed_heading(tr)
        d = vincenty_m(25.0, 51.0, lat2, lon2)
        assert got.points[0].speed_kmh == pytest.approx(d / 10.0 * 3.6)
        assert got.points[0].heading_deg == pytest.approx(0.0, abs=1e-6)
        # last point copies its predecessor's heading
        assert got.points[1].heading_deg == got.points[0].heading_deg
        assert got.points[1].speed_kmh == got.points[0].speed_kmh

    def test_zero_dt_point_dropped(self):
        lat2, lon2 = north_of(25.0, 51.0, 50.0)
        tr = Trajectory("a", [
            GpsPoint("a", 0.0, 25.0, 51.0, None, None),
            GpsPoint("a", 0.0, 25.00001, 51.0, None, None),
            GpsPoint("a", 10.0, lat2, lon2, None, None),
        ])
        got = infer_speed_heading(tr)
        assert len(got) == 2

    def test_short_trajectory_dropped(self):
        tr = Trajectory("a", [GpsPoint("a", 0.0, 25.0, 51.0, None, None)])
        assert infer_speed_heading(tr) is None


class TestFilterSlow:
    def test_threshold_inclusive(self):
        tr = Trajectory("a", [
            GpsPoint("a", 0.0, 25.0, 51.0, 5.0, 0.0),    # == min_speed: dropped
            GpsPoint("a", 1.0, 25.0, 51.0, 5.1, 0.0),
            GpsPoint("a", 2.0, 25.0, 51.0, 0.0, 0.0),
        ])
        got = filter_slow_points(tr, CFG)
        assert [p.timestamp for p in got.points] == [1.0]


class TestDensify:
    def make_pair(self, meters, h1=0.0, h2=0.0, speed=40.0):
        lat2, lon2 = north_of(25.0, 51.0, meters)
        return Trajectory("a", [
            GpsPoint("a", 0.0, 25.0, 51.0, speed, h1),
            GpsPoint("a", 10.0, lat2, lon2, speed, h2),
        ])

    def test_short_gap_untouched(self):
        got = densify(self.make_pair(15.0), CFG)
        assert len(got) == 2

    def test_170m_gap_gets_8_points(self):
        got = densify(self.make_pair(170.1), CFG)
        assert len(got) == 10
        # inserted points are equidistant and ordered in time
        ts = [p.timestamp for p in got.points]
        assert ts == sorted(ts)
        gaps = [vincenty_m(a.lat, a.lon, b.lat, b.lon)
                for a, b in zip(got.points, got.points[1:])]
        assert max(gaps) - min(gaps) < 0.01
        assert all(g < CFG.sampling_rate_m for g in gaps)

    def test_heading_gate_blocks_curved_gap(self):
        got = densify(self.make_pair(170.0, h1=0.0, h2=20.0), CFG)
        assert len(got) == 2

    def test_gate_boundary_is_exclusive(self):
        assert len(densify(self.make_pair(100.0, h1=0.0, h2=5.0), CFG)) == 2
        assert len(densify(self.make_pair(100.0, h1=0.0, h2=4.9), CFG)) > 2

    def test_inserted_points_carry_pair_bearing(self):
        got = densify(self.make_pair(100.0), CFG)
        for p in got.points[1:-1]:
            assert angle_diff_deg(p.heading_deg, 0.0) < 1e-6

    def test_idempotent(self):
        once = densify(self.make_pair(170.0), CFG)
        twice = densify(once, CFG)
        assert len(twice) == len(once)

    def test_preserves_endpoints_and_order(self):
        tr = self.make_pair(100.0)
        got = densify(tr, CFG)
        assert got.points[0] == tr.points[0]
        assert got.points[-1] == tr.points[-1]


def test_prepare_pipeline(tmp_path):
    lat2, lon2 = north_of(25.0, 51.0, 100.0)
    lat3, lon3 = north_of(25.0, 51.0, 200.0)
    trs = [
        Trajectory("a", [
            GpsPoint("a", 0.0, 25.0, 51.0, None, None),
            GpsPoint("a", 10.0, lat2, lon2, None, None),
            GpsPoint("a", 20.0, lat3, lon3, None, None),
        ]),
        Trajectory("b", [GpsPoint("b", 0.0, 25.0, 51.0, None, None)]),
    ]
    out, dropped = prepare_trajectories(trs, CFG)
    assert dropped == 1
    assert len(out) == 1
    # 100 m at 10 s is 36 km/h: survives filtering, both gaps densified
    assert len(out[0]) == 3 + 2 * 4
