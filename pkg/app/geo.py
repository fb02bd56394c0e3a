"""
Geodesy and orbital mechanics.

Spherical Earth (R = 6371.0 km) everywhere. Satellites follow circular
two-body Keplerian orbits; no J2, drag or SGP4 corrections.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, GeoError, InvalidElementsError, TleDiagnostic, TleParseError
from .logger import get_logger

logger = get_logger(__name__)

EARTH_RADIUS_KM = 6371.0
EARTH_MU_KM3_S2 = 398600.4418
EARTH_ROTATION_RAD_S = 7.2921159e-5
SPEED_OF_LIGHT_KM_S = 299792.458
SECONDS_PER_DAY = 86400.0

# Greenwich sidereal angle at J2000 (2000-01-01T12:00:00Z)
_J2000_UNIX = 946728000.0
_GMST_J2000_RAD = math.radians(280.46061837)

TLE_STALE_SECONDS = 30 * SECONDS_PER_DAY
LEO_ALTITUDE_RANGE_KM = (100.0, 3000.0)
MAX_NEAR_CIRCULAR_ECCENTRICITY = 0.05
# snapshots kept by Constellation.positions_at; a default day has 288 steps
POSITION_CACHE_SIZE = 512

_warned: set = set()


def _warn_once(key: Tuple, message: str, **context) -> None:
    if key in _warned:
        return
    _warned.add(key)
    logger.warning(message, extra={"context": context} if context else None)


@dataclass(frozen=True)
class GeoCoord:
    """Point on the sphere. Longitude is normalised to [-180, 180)."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise GeoError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise GeoError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", normalize_lon(self.lon))


def normalize_lon(lon: float) -> float:
    return ((lon + 180.0) % 360.0) - 180.0


def haversine_km(a: GeoCoord, b: GeoCoord) -> float:
    """Great-circle distance in kilometres."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def central_angle_many(ground: GeoCoord, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Central angle (radians) between one ground point and arrays of points."""
    phi1 = math.radians(ground.lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlmb = np.radians(lons) - math.radians(ground.lon)
    h = np.sin(dphi / 2) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def haversine_km_many(ground: GeoCoord, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    return EARTH_RADIUS_KM * central_angle_many(ground, lats, lons)


def to_cartesian(lat_deg, lon_deg, radius_km) -> np.ndarray:
    """Earth-fixed cartesian coordinates (km), shape (..., 3)."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    return np.stack(
        [
            radius_km * np.cos(lat) * np.cos(lon),
            radius_km * np.cos(lat) * np.sin(lon),
            radius_km * np.sin(lat),
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
#  Orbital elements and TLE records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitalElements:
    sat_id: str
    inclination: float  # deg
    raan: float  # deg
    mean_anomaly_epoch: float  # deg
    mean_motion: float  # rev/day
    epoch: float  # unix seconds
    eccentricity: float = 0.0
    arg_perigee: float = 0.0  # deg
    name: str = ""

    def __post_init__(self):
        if not self.mean_motion > 0:
            raise InvalidElementsError(f"{self.sat_id}: mean_motion must be > 0 (got {self.mean_motion})")
        if not 0.0 <= self.eccentricity < 1.0:
            raise InvalidElementsError(f"{self.sat_id}: eccentricity {self.eccentricity} outside [0, 1)")
        if self.eccentricity > MAX_NEAR_CIRCULAR_ECCENTRICITY:
            _warn_once(
                ("ecc", self.sat_id),
                f"{self.sat_id}: eccentricity {self.eccentricity} above near-circular limit; "
                "propagation treats the orbit as circular",
            )

    @property
    def mean_motion_rad_s(self) -> float:
        return self.mean_motion * 2 * math.pi / SECONDS_PER_DAY

    @property
    def period_s(self) -> float:
        return SECONDS_PER_DAY / self.mean_motion

    @property
    def semi_major_axis_km(self) -> float:
        return (EARTH_MU_KM3_S2 / self.mean_motion_rad_s ** 2) ** (1.0 / 3.0)

    @property
    def altitude_km(self) -> float:
        return self.semi_major_axis_km - EARTH_RADIUS_KM

    def to_dict(self) -> dict:
        return {
            "sat_id": self.sat_id,
            "name": self.name,
            "inclination": self.inclination,
            "raan": self.raan,
            "eccentricity": self.eccentricity,
            "arg_perigee": self.arg_perigee,
            "mean_anomaly_epoch": self.mean_anomaly_epoch,
            "mean_motion": self.mean_motion,
            "epoch": self.epoch,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OrbitalElements":
        return cls(**data)


def tle_checksum(line: str) -> int:
    """Modulo-10 checksum over the first 68 columns ('-' counts as 1)."""
    total = 0
    for c in line[:68]:
        if c.isdigit():
            total += int(c)
        elif c == "-":
            total += 1
    return total % 10


def _tle_epoch_to_unix(field_year: str, field_day: str) -> float:
    year = int(field_year)
    year += 2000 if year < 57 else 1900
    start = datetime(year, 1, 1, tzinfo=timezone.utc)
    return (start + timedelta(days=float(field_day) - 1.0)).timestamp()


def _unix_to_tle_epoch(epoch: float) -> Tuple[int, float]:
    dt = datetime.fromtimestamp(epoch, tz=timezone.utc)
    start = datetime(dt.year, 1, 1, tzinfo=timezone.utc)
    return dt.year % 100, (epoch - start.timestamp()) / SECONDS_PER_DAY + 1.0


def _check_line(line: str, expected: str) -> Optional[str]:
    if len(line) != 69:
        return f"line {expected} has length {len(line)}, expected 69"
    if line[0] != expected:
        return f"line should start with '{expected}'"
    if not line[68].isdigit():
        return "checksum column is not a digit"
    computed = tle_checksum(line)
    if computed != int(line[68]):
        return f"checksum mismatch (computed {computed}, found {line[68]})"
    return None


def _decode_record(name: str, line1: str, line2: str) -> OrbitalElements:
    catnum = line1[2:7].strip()
    if catnum != line2[2:7].strip():
        raise ValueError(f"catalog numbers differ ({catnum} vs {line2[2:7].strip()})")
    return OrbitalElements(
        sat_id=catnum,
        name=name or catnum,
        inclination=float(line2[8:16]),
        raan=float(line2[17:25]),
        eccentricity=float("0." + line2[26:33].strip()),
        arg_perigee=float(line2[34:42]),
        mean_anomaly_epoch=float(line2[43:51]),
        mean_motion=float(line2[52:63]),
        epoch=_tle_epoch_to_unix(line1[18:20], line1[20:32]),
    )


@dataclass
class TleParseReport:
    elements: List[OrbitalElements] = field(default_factory=list)
    rejected: List[TleDiagnostic] = field(default_factory=list)


def parse_tle_report(text: str, source: str = "<text>") -> TleParseReport:
    """
    Parse NORAD TLE text, keeping valid records and collecting rejections.

    Records are a name line followed by lines 1 and 2 (the name line may be
    omitted). A record cut short raises TleParseError immediately.
    """
    numbered = [(i + 1, raw.rstrip()) for i, raw in enumerate(text.splitlines())]
    numbered = [(n, line) for n, line in numbered if line.strip()]

    report = TleParseReport()
    idx = 0
    record_index = 0
    while idx < len(numbered):
        line_no, first = numbered[idx]
        if first.startswith("1 "):
            name, body = "", numbered[idx : idx + 2]
            idx += 2
        else:
            name, body = first.strip(), numbered[idx + 1 : idx + 3]
            idx += 3
        if len(body) < 2 or not body[0][1].startswith("1 ") or not body[1][1].startswith("2 "):
            raise TleParseError(
                [TleDiagnostic(record_index, line_no, "truncated record (expected name, line 1, line 2)")],
                source,
            )
        (n1, line1), (n2, line2) = body

        problem = None
        problem_line = n1
        for n, line, expected in ((n1, line1, "1"), (n2, line2, "2")):
            problem = _check_line(line, expected)
            if problem:
                problem_line = n
                break
        if problem is None:
            try:
                report.elements.append(_decode_record(name, line1, line2))
            except (ValueError, InvalidElementsError) as e:
                problem = str(e)
        if problem:
            report.rejected.append(TleDiagnostic(record_index, problem_line, problem))
        record_index += 1

    return report


def parse_tle(text: str, source: str = "<text>", strict: bool = True) -> List[OrbitalElements]:
    """
    Parse TLE text into orbital elements.

    Args:
        text: Zero or more 3-line records
        source: Name used in diagnostics (usually the file path)
        strict: Raise if any record is rejected; otherwise log and skip it

    Raises:
        TleParseError: truncated record, or rejected records when strict
    """
    report = parse_tle_report(text, source)
    if report.rejected:
        if strict:
            raise TleParseError(report.rejected, source)
        for diag in report.rejected:
            logger.warning(f"TLE record rejected in {source}: {diag}")
    return report.elements


def format_tle(elem: OrbitalElements, catnum: int, element_set: int = 999, rev_number: int = 0) -> str:
    """Render elements as a checksummed 3-line TLE record."""
    year, day = _unix_to_tle_epoch(elem.epoch)
    ecc = f"{elem.eccentricity:.7f}"[2:]
    line1 = (
        f"1 {catnum:05d}U 00000A   {year:02d}{day:012.8f}  .00000000  00000-0  00000-0 0 {element_set:4d}"
    )
    line2 = (
        f"2 {catnum:05d} {elem.inclination:8.4f} {elem.raan % 360:8.4f} {ecc} "
        f"{elem.arg_perigee % 360:8.4f} {elem.mean_anomaly_epoch % 360:8.4f} "
        f"{elem.mean_motion:11.8f}{rev_number % 100000:5d}"
    )
    line1 += str(tle_checksum(line1))
    line2 += str(tle_checksum(line2))
    return "\n".join([elem.name or str(catnum), line1, line2])


# ---------------------------------------------------------------------------
#  Propagation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SatState:
    sat_id: str
    position: GeoCoord
    altitude_km: float
    epoch: float
    plane: Optional[int] = None
    arg_latitude_deg: Optional[float] = None

    def __post_init__(self):
        if not self.altitude_km > 0:
            raise GeoError(f"{self.sat_id}: altitude must be positive (got {self.altitude_km})")
        low, high = LEO_ALTITUDE_RANGE_KM
        if not low < self.altitude_km < high:
            _warn_once(
                ("alt", self.sat_id),
                f"{self.sat_id}: altitude {self.altitude_km:.1f} km outside LEO range {LEO_ALTITUDE_RANGE_KM}",
            )


def greenwich_angle_rad(t: float) -> float:
    return _GMST_J2000_RAD + EARTH_ROTATION_RAD_S * (t - _J2000_UNIX)


def propagate(elem: OrbitalElements, t: float, plane: Optional[int] = None) -> SatState:
    """
    Sub-satellite point and altitude at unix time ``t``.

    Circular orbit: the argument of latitude advances at the mean motion from
    (arg_perigee + mean_anomaly) at the element epoch; the Earth rotates under
    it at 7.2921159e-5 rad/s.
    """
    if t < 0:
        raise DomainError(f"propagation time must be >= 0 (got {t})")
    dt = t - elem.epoch
    if abs(dt) > TLE_STALE_SECONDS:
        _warn_once(
            ("stale", elem.sat_id),
            f"{elem.sat_id}: propagating {abs(dt) / SECONDS_PER_DAY:.1f} days from TLE epoch",
        )

    u = math.radians(elem.arg_perigee + elem.mean_anomaly_epoch) + elem.mean_motion_rad_s * dt
    inc = math.radians(elem.inclination)
    lat = math.asin(max(-1.0, min(1.0, math.sin(inc) * math.sin(u))))
    lon_inertial = math.radians(elem.raan) + math.atan2(math.cos(inc) * math.sin(u), math.cos(u))
    lon = math.degrees(lon_inertial - greenwich_angle_rad(t))

    return SatState(
        sat_id=elem.sat_id,
        position=GeoCoord(math.degrees(lat), lon),
        altitude_km=elem.altitude_km,
        epoch=t,
        plane=plane,
        arg_latitude_deg=math.degrees(u) % 360.0,
    )


@dataclass(frozen=True)
class SlantGeometry:
    slant_km: float
    elevation_deg: float


def slant_geometry(ground: GeoCoord, sat: SatState) -> SlantGeometry:
    """Line-of-sight distance and elevation of a satellite seen from the ground."""
    gamma = haversine_km(ground, sat.position) / EARTH_RADIUS_KM
    slant, elevation = _slant_from_angle(gamma, sat.altitude_km)
    return SlantGeometry(slant_km=float(slant), elevation_deg=float(elevation))


def _slant_from_angle(gamma, altitude_km):
    r_sat = EARTH_RADIUS_KM + altitude_km
    slant = np.sqrt(altitude_km ** 2 + 4 * EARTH_RADIUS_KM * r_sat * np.sin(gamma / 2) ** 2)
    elevation = np.degrees(np.arctan2(r_sat * np.cos(gamma) - EARTH_RADIUS_KM, r_sat * np.sin(gamma)))
    return slant, elevation


def slant_geometry_many(
    ground: GeoCoord, lats: np.ndarray, lons: np.ndarray, altitudes: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised slant_geometry: (slant_km, elevation_deg) arrays."""
    gamma = central_angle_many(ground, lats, lons)
    return _slant_from_angle(gamma, np.asarray(altitudes, dtype=float))


# ---------------------------------------------------------------------------
#  Constellations
# ---------------------------------------------------------------------------


def assign_planes(elements: Sequence[OrbitalElements], tolerance_deg: float = 2.0) -> Dict[str, int]:
    """
    Cluster satellites into orbital planes by inclination, then RAAN.

    Plane indices are ordered by (inclination group, RAAN) so that planes
    ``p`` and ``p + 1`` of one group are neighbours.
    """
    planes: Dict[str, int] = {}
    groups: List[List[OrbitalElements]] = []
    for elem in sorted(elements, key=lambda e: (e.inclination, e.sat_id)):
        if groups and abs(groups[-1][0].inclination - elem.inclination) <= tolerance_deg:
            groups[-1].append(elem)
        else:
            groups.append([elem])

    next_plane = 0
    for group in groups:
        members = sorted(group, key=lambda e: (e.raan % 360.0, e.sat_id))
        clusters: List[List[OrbitalElements]] = [[members[0]]]
        for prev, elem in zip(members, members[1:]):
            if (elem.raan - prev.raan) % 360.0 > tolerance_deg:
                clusters.append([])
            clusters[-1].append(elem)
        if len(clusters) > 1 and (members[0].raan - members[-1].raan) % 360.0 <= tolerance_deg:
            clusters[0] = clusters.pop() + clusters[0]
        for cluster in clusters:
            for elem in cluster:
                planes[elem.sat_id] = next_plane
            next_plane += 1
    return planes


class Constellation:
    """
    Satellites with plane assignment and cached positions per snapshot time.

    Satellites with identical elements produce identical states, so the cache
    can be shared by every pair simulated at the same step.
    """

    def __init__(self, elements: Iterable[OrbitalElements], plane_tolerance_deg: float = 2.0):
        self.elements: List[OrbitalElements] = sorted(elements, key=lambda e: e.sat_id)
        ids = [e.sat_id for e in self.elements]
        if len(set(ids)) != len(ids):
            raise InvalidElementsError("duplicate satellite ids in constellation")
        self.planes = assign_planes(self.elements, plane_tolerance_deg) if self.elements else {}
        self.plane_groups: Dict[int, float] = {
            self.planes[e.sat_id]: e.inclination for e in self.elements
        }
        self._cache: "OrderedDict[float, List[SatState]]" = OrderedDict()

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def latest_epoch(self) -> float:
        return max(e.epoch for e in self.elements)

    def positions_at(self, t: float) -> List[SatState]:
        states = self._cache.get(t)
        if states is not None:
            self._cache.move_to_end(t)
            return states
        states = [propagate(e, t, plane=self.planes[e.sat_id]) for e in self.elements]
        self._cache[t] = states
        if len(self._cache) > POSITION_CACHE_SIZE:
            self._cache.popitem(last=False)
        return states

    def adjacent_plane(self, plane: int) -> Optional[int]:
        """Next plane of the same inclination group (cyclic), or None."""
        group = [p for p, inc in self.plane_groups.items() if abs(inc - self.plane_groups[plane]) < 1e-9]
        if len(group) < 2:
            return None
        group.sort()
        return group[(group.index(plane) + 1) % len(group)]

    def to_dict(self) -> dict:
        return {
            "satellites": [e.to_dict() for e in self.elements],
            "planes": {sid: self.planes[sid] for sid in sorted(self.planes)},
        }
