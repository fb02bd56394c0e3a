"""
Artifact files and the resumable series store.

Every artifact carries the config hash and seed that produced it: CSV files
on a leading ``# config_hash=...,seed=...`` line, JSON files as top-level
keys. Readers refuse artifacts from another config. Writes go through a
temporary file and an atomic rename, so an interrupted stage never leaves a
half-written file behind.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import pandas as pd

from .errors import StageError
from .models import Interface
from .sim import LatencySeries, Timeline

FLOAT_FORMAT = "%.6f"
_META_RE = re.compile(r"^#\s*config_hash=([0-9a-f]+),seed=(\d+)\s*$")


@dataclass(frozen=True)
class ArtifactMeta:
    config_hash: str
    seed: int

    def header(self) -> str:
        return f"# config_hash={self.config_hash},seed={self.seed}\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _clean(value: Any) -> Any:
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python ones."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_csv(path: Path, frame: pd.DataFrame, meta: ArtifactMeta, index: bool = False) -> Path:
    body = frame.to_csv(index=index, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    _atomic_write(Path(path), meta.header() + body)
    return Path(path)


def write_json(path: Path, data: dict, meta: ArtifactMeta) -> Path:
    payload = {"config_hash": meta.config_hash, "seed": meta.seed, **_clean(data)}
    _atomic_write(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return Path(path)


def _check(path: Path, found: ArtifactMeta, expected: Optional[ArtifactMeta], stage: str) -> None:
    if expected is not None and found != expected:
        raise StageError(
            stage,
            f"{path} was produced by config {found.config_hash} (seed {found.seed}), "
            f"current config is {expected.config_hash} (seed {expected.seed}); "
            f"re-run '{stage}' or point --out at a fresh directory",
        )


def read_csv_meta(path: Path, stage: str) -> ArtifactMeta:
    path = Path(path)
    if not path.is_file():
        raise StageError(stage, f"missing artifact {path}; run '{stage}' first")
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
    match = _META_RE.match(first.strip())
    if not match:
        raise StageError(stage, f"{path} has no config_hash header; re-run '{stage}'")
    return ArtifactMeta(match.group(1), int(match.group(2)))


def read_csv(path: Path, expected: Optional[ArtifactMeta], stage: str, **kwargs) -> pd.DataFrame:
    """Read a CSV artifact produced by ``stage`` and check its config hash."""
    _check(Path(path), read_csv_meta(path, stage), expected, stage)
    return pd.read_csv(path, comment="#", **kwargs)


def read_json(path: Path, expected: Optional[ArtifactMeta], stage: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise StageError(stage, f"missing artifact {path}; run '{stage}' first")
    data = json.loads(path.read_text(encoding="utf-8"))
    found = ArtifactMeta(str(data.get("config_hash", "")), int(data.get("seed", -1)))
    _check(path, found, expected, stage)
    return data


def pair_filename(pid: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", pid.replace(">", "__"))
    digest = hashlib.sha256(pid.encode("utf-8")).hexdigest()[:8]
    return f"{safe[:80]}-{digest}.csv"


class SeriesStore:
    """
    Per-pair series files under ``<out>/series`` plus ``manifest.json``
    listing completed pairs.

    Each pair file holds rows ``id,interface,k,t,rtt_ms``; the satellite
    interface carries one series per simulated K. The combined
    ``series_store.csv`` keeps only the analysis K.
    """

    STAGE = "simulate"

    def __init__(self, out_dir: Path, meta: ArtifactMeta):
        self.out_dir = Path(out_dir)
        self.meta = meta
        self.series_dir = self.out_dir / "series"
        self.manifest_path = self.series_dir / "manifest.json"
        self.combined_path = self.out_dir / "series_store.csv"

    # ---- writing ----

    def load_completed(self) -> Set[str]:
        """Completed pair ids whose files still exist; refuses another config's manifest."""
        if not self.manifest_path.is_file():
            return set()
        data = read_json(self.manifest_path, self.meta, self.STAGE)
        return {pid for pid in data.get("completed", []) if (self.series_dir / pair_filename(pid)).is_file()}

    def write_manifest(self, completed: Iterable[str], pairs_total: int, timeline: Timeline) -> None:
        write_json(
            self.manifest_path,
            {
                "completed": sorted(completed),
                "pairs_total": pairs_total,
                "timeline": {"start": timeline.start, "step_s": timeline.step_s, "duration_s": timeline.duration_s},
            },
            self.meta,
        )

    def timeline(self) -> Timeline:
        """Timeline the stored series were simulated on."""
        data = read_json(self.manifest_path, self.meta, self.STAGE)
        window = data["timeline"]
        return Timeline(float(window["start"]), float(window["step_s"]), float(window["duration_s"]))

    def write_pair(self, pid: str, satellite: Dict[int, LatencySeries], terrestrial: LatencySeries, k: int) -> Path:
        frames = [_frame(terrestrial, k)]
        frames += [_frame(series, kk) for kk, series in sorted(satellite.items())]
        return write_csv(self.series_dir / pair_filename(pid), pd.concat(frames, ignore_index=True), self.meta)

    def write_combined(self, pair_ids: Iterable[str], k: int) -> Path:
        frames = []
        for pid in sorted(pair_ids):
            frame = self._read_pair_frame(pid)
            frames.append(frame[frame["k"] == k][["id", "interface", "t", "rtt_ms"]])
        combined = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["id", "interface", "t", "rtt_ms"])
        return write_csv(self.combined_path, combined, self.meta)

    # ---- reading ----

    def _read_pair_frame(self, pid: str) -> pd.DataFrame:
        return read_csv(self.series_dir / pair_filename(pid), self.meta, self.STAGE, dtype={"id": str, "interface": str})

    def read_pair(self, pid: str, k: int) -> Tuple[LatencySeries, LatencySeries]:
        """(satellite, terrestrial) series of one pair at ``k``."""
        frame = self._read_pair_frame(pid)
        sat = frame[(frame["interface"] == Interface.SATELLITE.value) & (frame["k"] == k)]
        ter = frame[frame["interface"] == Interface.TERRESTRIAL.value]
        if sat.empty or ter.empty:
            raise StageError(self.STAGE, f"series for {pid} (K={k}) not found; re-run 'simulate'")
        return _series(pid, Interface.SATELLITE, sat), _series(pid, Interface.TERRESTRIAL, ter)

    def read_satellite_k(self, pid: str) -> Dict[int, LatencySeries]:
        frame = self._read_pair_frame(pid)
        sat = frame[frame["interface"] == Interface.SATELLITE.value]
        return {int(k): _series(pid, Interface.SATELLITE, group) for k, group in sat.groupby("k", sort=True)}

    def pairs(self, pair_ids: Iterable[str], k: int) -> Dict[str, Tuple[LatencySeries, LatencySeries]]:
        """pair id -> (satellite, terrestrial); every pair must be present."""
        if not self.manifest_path.is_file():
            raise StageError(self.STAGE, f"missing artifact {self.manifest_path}; run 'simulate' first")
        completed = self.load_completed()
        wanted = sorted(set(pair_ids))
        missing = [pid for pid in wanted if pid not in completed]
        if missing:
            raise StageError(
                self.STAGE, f"{len(missing)} pair(s) not simulated yet (e.g. {missing[0]}); re-run 'simulate'"
            )
        return {pid: self.read_pair(pid, k) for pid in wanted}


def _frame(series: LatencySeries, k: int) -> pd.DataFrame:
    frame = series.to_frame()
    frame.insert(2, "k", k)
    return frame


def _series(pid: str, interface: Interface, frame: pd.DataFrame) -> LatencySeries:
    frame = frame.sort_values("t", kind="stable")
    return LatencySeries(pid, interface, frame["t"].to_numpy(dtype=float), frame["rtt_ms"].to_numpy(dtype=float))


def series_frame(series: Iterable[LatencySeries]) -> pd.DataFrame:
    frames: List[pd.DataFrame] = [s.to_frame() for s in series]
    if not frames:
        return pd.DataFrame(columns=["id", "interface", "t", "rtt_ms"])
    return pd.concat(frames, ignore_index=True)
