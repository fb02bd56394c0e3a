"""
Input file loaders.

Every loader reports problems as DatasetError naming the file and, where it
applies, the line. Lines starting with '#' and blank lines are ignored.
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DatasetError, GeoError
from .geo import GeoCoord, OrbitalElements, parse_tle
from .models import HOSTING_CLASSES, Circuit, GroundSite, Interface, Relay
from .sim import LatencySeries
from .speeds import BaselineSample, SampleKind, TerrestrialProbe


def _read_table(path: Path, required: Sequence[str], numeric: Sequence[str] = ()) -> Tuple[pd.DataFrame, List[int]]:
    """CSV with comment lines stripped; returns the frame and each row's line number."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(str(path), "file not found")
    kept: List[str] = []
    line_numbers: List[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            kept.append(line)
            line_numbers.append(no)
    if not kept:
        raise DatasetError(str(path), "file is empty (expected a header row)")

    try:
        frame = pd.read_csv(io.StringIO("".join(kept)), dtype=str, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise DatasetError(str(path), f"malformed CSV: {e}") from e
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DatasetError(str(path), f"missing column(s) {', '.join(missing)}", line_numbers[0])

    rows = line_numbers[1:]
    for col in numeric:
        converted = pd.to_numeric(frame[col], errors="coerce")
        bad = np.flatnonzero(converted.isna().to_numpy())
        if bad.size:
            i = int(bad[0])
            raise DatasetError(str(path), f"column '{col}' is not a number: {frame[col].iloc[i]!r}", rows[i])
        frame[col] = converted
    return frame, rows


def _coord(path: Path, line: int, lat: float, lon: float) -> GeoCoord:
    try:
        return GeoCoord(float(lat), float(lon))
    except GeoError as e:
        raise DatasetError(str(path), str(e), line) from e


def load_terrestrial_baseline(path) -> List[TerrestrialProbe]:
    """``src_lat,src_lon,dst_lat,dst_lon,rtt_ms``"""
    cols = ["src_lat", "src_lon", "dst_lat", "dst_lon", "rtt_ms"]
    frame, lines = _read_table(path, cols, cols)
    return [
        TerrestrialProbe(
            src=_coord(path, line, row.src_lat, row.src_lon),
            dst=_coord(path, line, row.dst_lat, row.dst_lon),
            rtt_ms=float(row.rtt_ms),
        )
        for row, line in zip(frame.itertuples(index=False), lines)
    ]


def load_satellite_baseline(path) -> List[BaselineSample]:
    """``site_id,route_len_km,rtt_ms``"""
    frame, _ = _read_table(path, ["site_id", "route_len_km", "rtt_ms"], ["route_len_km", "rtt_ms"])
    return [
        BaselineSample(route_len_km=float(row.route_len_km), rtt_ms=float(row.rtt_ms), kind=SampleKind.SATELLITE)
        for row in frame.itertuples(index=False)
    ]


def load_sites(path) -> List[GroundSite]:
    """Ground stations or PoPs: ``id,lat,lon[,extra...]``"""
    frame, lines = _read_table(path, ["id", "lat", "lon"], ["lat", "lon"])
    seen: Dict[str, int] = {}
    sites = []
    for row, line in zip(frame.itertuples(index=False), lines):
        site_id = str(row.id).strip()
        if site_id in seen:
            raise DatasetError(str(path), f"duplicate id '{site_id}' (first on line {seen[site_id]})", line)
        seen[site_id] = line
        sites.append(GroundSite(site_id, _coord(path, line, row.lat, row.lon)))
    return sites


def load_relays(path) -> List[Relay]:
    """``fingerprint,lat,lon,bandwidth_weight[,hosting]``"""
    frame, lines = _read_table(path, ["fingerprint", "lat", "lon", "bandwidth_weight"], ["lat", "lon", "bandwidth_weight"])
    has_hosting = "hosting" in frame.columns
    seen: Dict[str, int] = {}
    relays = []
    for row, line in zip(frame.itertuples(index=False), lines):
        fp = str(row.fingerprint).strip()
        if fp in seen:
            raise DatasetError(str(path), f"duplicate fingerprint '{fp}' (first on line {seen[fp]})", line)
        seen[fp] = line
        hosting = None
        if has_hosting and isinstance(row.hosting, str) and row.hosting.strip():
            hosting = row.hosting.strip().lower()
            if hosting not in HOSTING_CLASSES:
                raise DatasetError(
                    str(path), f"unknown hosting '{hosting}' (expected one of {', '.join(HOSTING_CLASSES)})", line
                )
        try:
            relays.append(Relay(fp, _coord(path, line, row.lat, row.lon), float(row.bandwidth_weight), hosting))
        except ValueError as e:
            raise DatasetError(str(path), str(e), line) from e
    return relays


def load_circuits(path, relays: Sequence[Relay]) -> List[Circuit]:
    """``entry_fp,middle_fp,exit_fp``; every fingerprint must be a known relay."""
    frame, lines = _read_table(path, ["entry_fp", "middle_fp", "exit_fp"])
    known = {r.fingerprint for r in relays}
    circuits = []
    for row, line in zip(frame.itertuples(index=False), lines):
        fps = [str(v).strip() for v in (row.entry_fp, row.middle_fp, row.exit_fp)]
        unknown = [fp for fp in fps if fp not in known]
        if unknown:
            raise DatasetError(str(path), f"unknown relay fingerprint(s): {', '.join(unknown)}", line)
        try:
            circuits.append(Circuit(*fps))
        except ValueError as e:
            raise DatasetError(str(path), str(e), line) from e
    return circuits


def load_tle(path, strict: bool = True) -> List[OrbitalElements]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(str(path), "file not found")
    return parse_tle(path.read_text(encoding="utf-8"), source=str(path), strict=strict)


def load_measured(path) -> Dict[Interface, Dict[str, LatencySeries]]:
    """
    ``circuit_id,interface,rtt_ms[,t]``; repeated rows form one series.

    Without a ``t`` column samples are indexed 0, 1, 2, ... in file order.
    """
    frame, lines = _read_table(path, ["circuit_id", "interface", "rtt_ms"], ["rtt_ms"])
    if "t" in frame.columns:
        frame["t"] = pd.to_numeric(frame["t"], errors="coerce")
    frame["_line"] = lines
    out: Dict[Interface, Dict[str, LatencySeries]] = {}
    for (cid, iface), group in frame.groupby(["circuit_id", "interface"], sort=True):
        try:
            interface = Interface(str(iface).strip().lower())
        except ValueError:
            raise DatasetError(str(path), f"unknown interface '{iface}'", int(group["_line"].iloc[0])) from None
        if "t" in group.columns and not group["t"].isna().any():
            group = group.sort_values("t", kind="stable")
            times = group["t"].to_numpy(dtype=float)
        else:
            times = np.arange(len(group), dtype=float)
        samples = group["rtt_ms"].to_numpy(dtype=float)
        if np.any(samples <= 0):
            bad = int(group["_line"].to_numpy()[np.flatnonzero(samples <= 0)[0]])
            raise DatasetError(str(path), "rtt_ms must be > 0", bad)
        try:
            series = LatencySeries(str(cid).strip(), interface, times, samples)
        except ValueError as e:
            raise DatasetError(str(path), f"{cid}: {e}", int(group["_line"].iloc[0])) from e
        out.setdefault(interface, {})[series.series_id] = series
    return out
