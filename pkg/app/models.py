from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from .geo import GeoCoord

PAIR_SEPARATOR = ">"

HOSTING_CLASSES = ("cloud", "isp", "business", "education")


class Interface(str, Enum):
    SATELLITE = "satellite"
    TERRESTRIAL = "terrestrial"
    DUAL = "dual"  # dual-homed: per-peer choice of the faster interface

    @property
    def other(self) -> "Interface":
        if self is Interface.DUAL:
            raise ValueError("a dual-homed series has no opposite interface")
        return Interface.TERRESTRIAL if self is Interface.SATELLITE else Interface.SATELLITE


@dataclass(frozen=True)
class Relay:
    fingerprint: str
    position: GeoCoord
    bandwidth_weight: float = 0.0
    hosting: Optional[str] = None

    def __post_init__(self):
        if not self.fingerprint:
            raise ValueError("relay fingerprint must be non-empty")
        if PAIR_SEPARATOR in self.fingerprint:
            raise ValueError(f"relay fingerprint may not contain '{PAIR_SEPARATOR}': {self.fingerprint}")
        if not self.bandwidth_weight >= 0:
            raise ValueError(f"{self.fingerprint}: bandwidth_weight must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fingerprint": self.fingerprint,
            "lat": self.position.lat,
            "lon": self.position.lon,
            "bandwidth_weight": self.bandwidth_weight,
            "hosting": self.hosting,
        }


@dataclass(frozen=True)
class GroundSite:
    """Ground station or PoP."""

    site_id: str
    position: GeoCoord


@dataclass(frozen=True)
class Circuit:
    entry: str
    middle: str
    exit: str

    def __post_init__(self):
        if len({self.entry, self.middle, self.exit}) != 3:
            raise ValueError(f"circuit relays must be distinct: {self.circuit_id}")

    @property
    def circuit_id(self) -> str:
        return PAIR_SEPARATOR.join((self.entry, self.middle, self.exit))

    def hops(self) -> List[Tuple[str, str]]:
        """The two inter-relay hops, entry->middle and middle->exit."""
        return [(self.entry, self.middle), (self.middle, self.exit)]

    def hop_ids(self) -> List[str]:
        return [pair_id(src, dst) for src, dst in self.hops()]

    @classmethod
    def from_id(cls, circuit_id: str) -> "Circuit":
        parts = circuit_id.split(PAIR_SEPARATOR)
        if len(parts) != 3:
            raise ValueError(f"not a circuit id: {circuit_id}")
        return cls(*parts)


def pair_id(src: str, dst: str) -> str:
    return f"{src}{PAIR_SEPARATOR}{dst}"


def split_pair_id(pid: str) -> Tuple[str, str]:
    parts = pid.split(PAIR_SEPARATOR)
    if len(parts) != 2:
        raise ValueError(f"not a pair id: {pid}")
    return parts[0], parts[1]


def unique_pairs(circuits: List[Circuit]) -> List[Tuple[str, str]]:
    """Directed hops of all circuits, deduplicated and sorted."""
    return sorted({hop for circuit in circuits for hop in circuit.hops()})
