#!/usr/bin/env python3
"""
Tests for geometry, TLE parsing and orbit propagation.

Usage:
    python test_geo.py
"""

import math
import sys
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

# Add app to path
sys.path.insert(0, str(Path(__file__).parent))

from app.errors import DomainError, GeoError, InvalidElementsError, TleParseError
from app.geo import (
    EARTH_ROTATION_RAD_S,
    POSITION_CACHE_SIZE,
    Constellation,
    GeoCoord,
    OrbitalElements,
    SatState,
    assign_planes,
    format_tle,
    haversine_km,
    parse_tle,
    parse_tle_report,
    propagate,
    slant_geometry,
    slant_geometry_many,
    tle_checksum,
)

FIXTURES = Path(__file__).parent / "fixtures"
SIDEREAL_DAY_S = 86164.0905
EPOCH = 1_775_000_000.0

LONDON = GeoCoord(51.5074, -0.1278)
PARIS = GeoCoord(48.8566, 2.3522)

lats = st.floats(min_value=-90, max_value=90, allow_nan=False)
lons = st.floats(min_value=-180, max_value=180, allow_nan=False, exclude_max=True)


def _offset_east(distance_km: float) -> GeoCoord:
    """Point on the equator ``distance_km`` east of (0, 0)."""
    return GeoCoord(0.0, math.degrees(distance_km / 6371.0))


# ---------------------------------------------------------------------------
#  Coordinates and distances
# ---------------------------------------------------------------------------


def test_haversine_london_paris():
    assert haversine_km(LONDON, PARIS) == pytest.approx(343.5, abs=1.0)


def test_haversine_zero_for_same_point():
    assert haversine_km(LONDON, LONDON) == 0.0


@given(lats, lons, lats, lons)
def test_haversine_symmetric_and_bounded(lat1, lon1, lat2, lon2):
    a, b = GeoCoord(lat1, lon1), GeoCoord(lat2, lon2)
    d = haversine_km(a, b)
    assert d == pytest.approx(haversine_km(b, a), abs=1e-6)
    assert 0.0 <= d <= math.pi * 6371.0 + 1e-6


def test_longitude_normalised():
    assert GeoCoord(10.0, 190.0).lon == pytest.approx(-170.0)
    assert GeoCoord(10.0, 180.0).lon == pytest.approx(-180.0)


@pytest.mark.parametrize("lat", [90.5, -91.0, float("nan")])
def test_invalid_latitude_rejected(lat):
    with pytest.raises(GeoError):
        GeoCoord(lat, 0.0)


# ---------------------------------------------------------------------------
#  Slant range and elevation
# ---------------------------------------------------------------------------


def test_satellite_overhead_is_at_zenith():
    sat = SatState("S1", GeoCoord(10.0, 20.0), 550.0, EPOCH)
    geometry = slant_geometry(GeoCoord(10.0, 20.0), sat)
    assert geometry.elevation_deg == pytest.approx(90.0)
    assert geometry.slant_km == pytest.approx(550.0)


def test_far_satellite_below_visibility_threshold():
    sat = SatState("S1", GeoCoord(0.0, 0.0), 550.0, EPOCH)
    at_2311 = slant_geometry(_offset_east(2311.0), sat)
    at_3000 = slant_geometry(_offset_east(3000.0), sat)
    assert at_2311.elevation_deg < 25.0
    assert at_3000.elevation_deg < 0.0


def test_slant_geometry_many_matches_scalar():
    ground = GeoCoord(45.0, 7.0)
    sats = [SatState(f"S{i}", GeoCoord(40.0 + i, 5.0 + 2 * i), 540.0 + 5 * i, EPOCH) for i in range(5)]
    slant, elevation = slant_geometry_many(
        ground,
        [s.position.lat for s in sats],
        [s.position.lon for s in sats],
        [s.altitude_km for s in sats],
    )
    for i, sat in enumerate(sats):
        scalar = slant_geometry(ground, sat)
        assert slant[i] == pytest.approx(scalar.slant_km)
        assert elevation[i] == pytest.approx(scalar.elevation_deg)


def test_non_positive_altitude_rejected():
    with pytest.raises(GeoError):
        SatState("S1", GeoCoord(0.0, 0.0), 0.0, EPOCH)


# ---------------------------------------------------------------------------
#  TLE records
# ---------------------------------------------------------------------------


def _elements(sat_id="00001", **overrides) -> OrbitalElements:
    values = dict(
        sat_id=sat_id,
        inclination=53.0,
        raan=40.0,
        mean_anomaly_epoch=10.0,
        mean_motion=15.05,
        epoch=EPOCH,
        eccentricity=0.0001,
    )
    values.update(overrides)
    return OrbitalElements(**values)


def test_fixture_tle_parses():
    elements = parse_tle((FIXTURES / "tle.txt").read_text(), source="tle.txt")
    assert len(elements) == 324
    assert {e.inclination for e in elements} == {53.0}
    assert all(540.0 < e.altitude_km < 570.0 for e in elements)


def test_formatted_record_parses_back():
    record = format_tle(_elements(name="TEST-1"), catnum=1)
    lines = record.splitlines()
    assert [len(line) for line in lines[1:]] == [69, 69]
    assert int(lines[1][68]) == tle_checksum(lines[1])

    parsed = parse_tle(record)[0]
    assert parsed.sat_id == "00001"
    assert parsed.name == "TEST-1"
    assert parsed.inclination == pytest.approx(53.0)
    assert parsed.raan == pytest.approx(40.0)
    assert parsed.mean_motion == pytest.approx(15.05)
    assert parsed.epoch == pytest.approx(EPOCH, abs=1e-2)


def test_checksum_mismatch_reported_with_line():
    name, line1, line2 = format_tle(_elements(), catnum=1).splitlines()
    bad = line2[:68] + str((int(line2[68]) + 1) % 10)
    text = "\n".join([name, line1, bad])

    with pytest.raises(TleParseError) as exc:
        parse_tle(text, source="bad.tle")
    diag = exc.value.diagnostics[0]
    assert diag.record_index == 0
    assert diag.line_no == 3
    assert "checksum" in diag.message
    assert "bad.tle" in str(exc.value)


def test_lenient_parse_skips_bad_records():
    good = format_tle(_elements("00001"), catnum=1)
    name, line1, line2 = format_tle(_elements("00002"), catnum=2).splitlines()
    bad = "\n".join([name, line1, line2[:60]])
    report = parse_tle_report(good + "\n" + bad)
    assert [e.sat_id for e in report.elements] == ["00001"]
    assert len(report.rejected) == 1
    assert parse_tle(good + "\n" + bad, strict=False)[0].sat_id == "00001"


def test_truncated_record_raises():
    name, line1, _ = format_tle(_elements(), catnum=1).splitlines()
    with pytest.raises(TleParseError):
        parse_tle("\n".join([name, line1]))


def test_name_line_optional():
    _, line1, line2 = format_tle(_elements(), catnum=7).splitlines()
    elements = parse_tle("\n".join([line1, line2]))
    assert elements[0].sat_id == "00007"


@pytest.mark.parametrize("overrides", [{"mean_motion": 0.0}, {"eccentricity": 1.0}, {"eccentricity": -0.1}])
def test_invalid_elements_rejected(overrides):
    with pytest.raises(InvalidElementsError):
        _elements(**overrides)


# ---------------------------------------------------------------------------
#  Propagation
# ---------------------------------------------------------------------------


def test_negative_time_rejected():
    with pytest.raises(DomainError):
        propagate(_elements(), -1.0)


@settings(max_examples=50)
@given(st.floats(min_value=0, max_value=86400 * 3, allow_nan=False))
def test_latitude_bounded_by_inclination(dt):
    state = propagate(_elements(), EPOCH + dt)
    assert abs(state.position.lat) <= 53.0 + 1e-9
    assert state.altitude_km == pytest.approx(_elements().altitude_km)


def test_half_period_reaches_opposite_latitude():
    elem = _elements(mean_anomaly_epoch=0.0, arg_perigee=0.0)
    quarter = propagate(elem, EPOCH + elem.period_s / 4)
    three_quarters = propagate(elem, EPOCH + 3 * elem.period_s / 4)
    assert quarter.position.lat == pytest.approx(53.0, abs=1e-6)
    assert three_quarters.position.lat == pytest.approx(-53.0, abs=1e-6)


def test_repeat_orbit_ground_track_returns_after_sidereal_day():
    # 15 revolutions per sidereal day: the ground track closes on itself
    mean_motion = 15.0 * 86400.0 / SIDEREAL_DAY_S
    elements = [
        _elements(f"{i:05d}", mean_motion=mean_motion, raan=30.0 * i, mean_anomaly_epoch=17.0 * i) for i in range(6)
    ]
    ground = GeoCoord(48.0, 11.0)
    for elem in elements:
        before = propagate(elem, EPOCH + 1234.0)
        after = propagate(elem, EPOCH + 1234.0 + SIDEREAL_DAY_S)
        assert haversine_km(before.position, after.position) < 1.0

    def visible(t):
        return {e.sat_id for e in elements if slant_geometry(ground, propagate(e, t)).elevation_deg >= 25.0}

    for offset in (0.0, 600.0, 4000.0):
        assert visible(EPOCH + offset) == visible(EPOCH + offset + SIDEREAL_DAY_S)


def test_one_period_shifts_longitude_by_earth_rotation():
    elem = _elements()
    for start in (EPOCH, EPOCH + 777.0):
        before = propagate(elem, start)
        after = propagate(elem, start + elem.period_s)
        assert after.position.lat == pytest.approx(before.position.lat, abs=1e-6)
        shift = (after.position.lon - before.position.lon + 180.0) % 360.0 - 180.0
        assert shift == pytest.approx(-math.degrees(EARTH_ROTATION_RAD_S * elem.period_s), abs=1e-6)


def test_period_and_altitude_from_mean_motion():
    elem = _elements(mean_motion=15.05)
    assert elem.period_s / 60.0 == pytest.approx(95.68, abs=0.01)
    assert elem.altitude_km == pytest.approx(560.0, abs=15.0)


def test_equatorial_orbit_stays_on_equator():
    elem = _elements(inclination=0.0)
    for dt in (0.0, 100.0, 1500.0, 4000.0, 86400.0):
        assert propagate(elem, EPOCH + dt).position.lat == pytest.approx(0.0, abs=1e-9)


def test_elevation_falls_with_ground_distance():
    sat = SatState("S1", GeoCoord(0.0, 0.0), 550.0, EPOCH)
    elevations = [slant_geometry(_offset_east(d), sat).elevation_deg for d in range(0, 3001, 100)]
    assert all(a > b for a, b in zip(elevations, elevations[1:]))


# ---------------------------------------------------------------------------
#  Constellations
# ---------------------------------------------------------------------------


def test_fixture_planes():
    elements = parse_tle((FIXTURES / "tle.txt").read_text())
    planes = assign_planes(elements)
    assert len(set(planes.values())) == 18
    sizes = {}
    for plane in planes.values():
        sizes[plane] = sizes.get(plane, 0) + 1
    assert set(sizes.values()) == {18}


def test_planes_wrap_around_raan_zero():
    elements = [_elements("00001", raan=359.5), _elements("00002", raan=0.5), _elements("00003", raan=180.0)]
    planes = assign_planes(elements)
    assert planes["00001"] == planes["00002"]
    assert planes["00003"] != planes["00001"]


def test_adjacent_plane_is_cyclic():
    constellation = Constellation([_elements(f"{i:05d}", raan=90.0 * i) for i in range(4)])
    order = sorted(set(constellation.planes.values()))
    assert constellation.adjacent_plane(order[-1]) == order[0]
    assert constellation.adjacent_plane(order[0]) == order[1]


def test_positions_cached_per_time():
    constellation = Constellation([_elements(f"{i:05d}", raan=90.0 * i) for i in range(4)])
    first = constellation.positions_at(EPOCH + 60)
    assert constellation.positions_at(EPOCH + 60) is first
    assert [s.sat_id for s in first] == sorted(s.sat_id for s in first)
    assert all(s.plane is not None for s in first)


def test_position_cache_keeps_recent_snapshots():
    constellation = Constellation([_elements(f"{i:05d}", raan=90.0 * i) for i in range(2)])
    first = constellation.positions_at(EPOCH)
    for step in range(1, 300):
        constellation.positions_at(EPOCH + 300.0 * step)
    assert constellation.positions_at(EPOCH) is first
    for step in range(300, 300 + POSITION_CACHE_SIZE):
        constellation.positions_at(EPOCH + 300.0 * step)
    assert constellation.positions_at(EPOCH) is not first


def test_duplicate_satellite_ids_rejected():
    with pytest.raises(InvalidElementsError):
        Constellation([_elements("00001"), _elements("00001", raan=10.0)])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
