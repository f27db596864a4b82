"""Reading and writing two-section ride log files.

A ride file carries two CSV sections separated by a line of ``=`` characters
(at least ten). The first section holds user-annotated incidents, the second
the raw sensor rows (timestamp, GPS fix, accelerometer, gyroscope). Each
section starts with a version header line followed by a CSV column header.

The canonical layout written by :func:`write_ride` looks like::

    v1#a72
    timestamp,lat,lon,incident_type,description
    1577836800000,52.52,13.405,1,close pass
    =========================
    v1#a72
    timestamp,lat,lon,gps_accuracy,acc_x,acc_y,acc_z,gyr_a,gyr_b,gyr_c
    1577836800000,52.5200,13.4050,4.0,0.12,-0.05,0.4,0.01,0.0,-0.02
    ...

Files collected in the field use varying column names; a configurable column
map translates those to the canonical names above. Unknown columns are
ignored. Parsing is tolerant row by row: a malformed row is recorded and
skipped, only a missing separator or an unusable header aborts the whole
file.
"""
from __future__ import annotations

import csv
import io
import json
import re
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "DatasetPartition",
    "IncidentRecord",
    "SensorRecord",
    "RawRide",
    "RideFormatError",
    "MissingSeparatorError",
    "MissingHeaderError",
    "ColumnMap",
    "ScanResult",
    "parse_ride",
    "write_ride",
    "partition_dataset",
]

# Tolerance for attaching an incident annotation to the sensor stream.
INCIDENT_MATCH_TOLERANCE_MS = 10_000

_SEPARATOR_RE = re.compile(r"^={10,}\s*$")
_CANONICAL_HEADER_RE = re.compile(r"^v(\d+)#([ai])(\d+)$")
# Field recordings ship a bare "<fileversion>#<appversion>" header.
_NUMERIC_HEADER_RE = re.compile(r"^(\d+)#(\d+)$")


class RideFormatError(ValueError):
    """A ride file cannot be parsed at all."""


class MissingSeparatorError(RideFormatError):
    pass


class MissingHeaderError(RideFormatError):
    pass


class DatasetPartition(Enum):
    """Recording pipeline generation a ride belongs to.

    The three generations differ in sensor rates and axis conventions, so
    rides are processed and evaluated per partition rather than pooled.
    """

    ANDROID_OLD = "android-old"
    ANDROID_NEW = "android-new"
    IOS = "ios"


@dataclass(frozen=True)
class IncidentRecord:
    """One user-annotated incident.

    ``timestamp`` is epoch milliseconds and must line up with the sensor
    stream of the same ride (within :data:`INCIDENT_MATCH_TOLERANCE_MS`).
    ``incident_type`` is an opaque integer category code.
    """

    timestamp: int
    lat: float
    lon: float
    incident_type: int
    description: str | None = None

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError(f"incident timestamp must be positive, got {self.timestamp}")


@dataclass(frozen=True)
class SensorRecord:
    """One sensor row. GPS and gyroscope fields are optional per row.

    A GPS fix is all-or-nothing: ``lat``, ``lon`` and ``gps_accuracy`` are
    either all present or all ``None``. Same for the gyroscope triple.
    """

    timestamp: int
    acc_x: float
    acc_y: float
    acc_z: float
    lat: float | None = None
    lon: float | None = None
    gps_accuracy: float | None = None
    gyr_a: float | None = None
    gyr_b: float | None = None
    gyr_c: float | None = None

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        gps = (self.lat, self.lon, self.gps_accuracy)
        if any(v is None for v in gps) != all(v is None for v in gps):
            raise ValueError("partial GPS fix: lat, lon, gps_accuracy must come together")
        gyr = (self.gyr_a, self.gyr_b, self.gyr_c)
        if any(v is None for v in gyr) != all(v is None for v in gyr):
            raise ValueError("partial gyroscope triple")

    @property
    def has_gps(self) -> bool:
        return self.lat is not None

    @property
    def has_gyro(self) -> bool:
        return self.gyr_a is not None


@dataclass
class RawRide:
    """A parsed ride: incident annotations plus the raw sensor rows.

    Parse bookkeeping (dropped row counts, per-row errors, warnings) is
    carried along but excluded from equality so a written-and-reparsed ride
    compares equal to the original.
    """

    ride_id: str
    incidents: list[IncidentRecord]
    records: list[SensorRecord]
    partition: DatasetPartition
    dropped_rows: int = field(default=0, compare=False)
    row_errors: list[tuple[int, str]] = field(default_factory=list, compare=False)
    warnings: list[str] = field(default_factory=list, compare=False)


_DEFAULT_INCIDENT_ALIASES = {
    "timestamp": ("timestamp", "ts"),
    "lat": ("lat",),
    "lon": ("lon",),
    "incident_type": ("incident_type", "incident"),
    "description": ("description", "desc", "comment"),
}

_DEFAULT_SENSOR_ALIASES = {
    "timestamp": ("timestamp", "timeStamp", "ts"),
    "lat": ("lat",),
    "lon": ("lon",),
    "gps_accuracy": ("gps_accuracy", "acc", "accuracy"),
    "acc_x": ("acc_x", "X", "x"),
    "acc_y": ("acc_y", "Y", "y"),
    "acc_z": ("acc_z", "Z", "z"),
    "gyr_a": ("gyr_a", "a"),
    "gyr_b": ("gyr_b", "b"),
    "gyr_c": ("gyr_c", "c"),
}


@dataclass(frozen=True)
class ColumnMap:
    """Maps canonical column names to the aliases accepted in input files.

    ``android_new_min_version`` sets the app version from which an Android
    ride counts as the newer recording pipeline. ``platform_hint`` forces the
    platform for bare numeric version headers that do not encode it
    ("android" or "ios").
    """

    incident: dict = field(default_factory=lambda: dict(_DEFAULT_INCIDENT_ALIASES))
    sensor: dict = field(default_factory=lambda: dict(_DEFAULT_SENSOR_ALIASES))
    android_new_min_version: int = 50
    platform_hint: str = "android"

    @classmethod
    def from_json(cls, path) -> "ColumnMap":
        """Load a map from JSON, overlaying the built-in defaults."""
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        allowed = {"incident", "sensor", "android_new_min_version", "platform_hint"}
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown column map keys: {sorted(unknown)}")
        incident = dict(_DEFAULT_INCIDENT_ALIASES)
        for key, aliases in raw.get("incident", {}).items():
            if key not in incident:
                raise ValueError(f"unknown canonical incident column {key!r}")
            incident[key] = tuple(aliases)
        sensor = dict(_DEFAULT_SENSOR_ALIASES)
        for key, aliases in raw.get("sensor", {}).items():
            if key not in sensor:
                raise ValueError(f"unknown canonical sensor column {key!r}")
            sensor[key] = tuple(aliases)
        return cls(
            incident=incident,
            sensor=sensor,
            android_new_min_version=int(raw.get("android_new_min_version", 50)),
            platform_hint=str(raw.get("platform_hint", "android")),
        )


DEFAULT_COLUMN_MAP = ColumnMap()


def partition_from_header(header: str, column_map: ColumnMap = DEFAULT_COLUMN_MAP) -> DatasetPartition:
    """Derive the dataset partition from a section version header line."""
    header = header.strip()
    m = _CANONICAL_HEADER_RE.match(header)
    if m is not None:
        platform, version = m.group(2), int(m.group(3))
        if platform == "i":
            return DatasetPartition.IOS
        if version >= column_map.android_new_min_version:
            return DatasetPartition.ANDROID_NEW
        return DatasetPartition.ANDROID_OLD
    m = _NUMERIC_HEADER_RE.match(header)
    if m is not None:
        # bare numeric form: app version first, file format second
        if column_map.platform_hint == "ios":
            return DatasetPartition.IOS
        if int(m.group(1)) >= column_map.android_new_min_version:
            return DatasetPartition.ANDROID_NEW
        return DatasetPartition.ANDROID_OLD
    raise MissingHeaderError(f"unrecognized version header: {header!r}")


def _resolve_columns(header_fields: Sequence[str], aliases: dict, section: str) -> dict:
    """Map canonical names to column indices; unknown columns are ignored."""
    stripped = [h.strip() for h in header_fields]
    out = {}
    for canonical, names in aliases.items():
        for name in names:
            if name in stripped:
                out[canonical] = stripped.index(name)
                break
    if "timestamp" not in out:
        raise MissingHeaderError(f"{section} section header lacks a timestamp column")
    return out


def _get(row: Sequence[str], cols: dict, key: str) -> str | None:
    idx = cols.get(key)
    if idx is None or idx >= len(row):
        return None
    value = row[idx].strip()
    return value if value else None


def _split_sections(text: str) -> tuple[list[str], list[str]]:
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if _SEPARATOR_RE.match(line):
            return lines[:i], lines[i + 1:]
    raise MissingSeparatorError("no section separator line (>= 10 '=' characters)")


def _section_parts(lines: list[str], section: str) -> tuple[str, str, list[tuple[int, str]]]:
    """Return (version header, CSV header, numbered data lines)."""
    rows = [(i, line) for i, line in enumerate(lines) if line.strip()]
    if len(rows) < 2:
        raise MissingHeaderError(f"{section} section is missing its headers")
    version = rows[0][1].strip()
    header = rows[1][1]
    return version, header, rows[2:]


def parse_ride(
    text: str,
    ride_id: str = "",
    column_map: ColumnMap = DEFAULT_COLUMN_MAP,
) -> RawRide:
    """Parse one ride file into a :class:`RawRide`.

    Malformed rows are collected in ``row_errors`` and skipped; sensor rows
    missing the accelerometer triple are dropped and counted. Incident rows
    whose timestamp matches no sensor row exactly are attached to the nearest
    row within 10 s, otherwise dropped with a warning. Raises a
    :class:`RideFormatError` subclass only when the file as a whole is
    unusable.
    """
    incident_lines, sensor_lines = _split_sections(text)
    inc_version, inc_header, inc_rows = _section_parts(incident_lines, "incident")
    sen_version, sen_header, sen_rows = _section_parts(sensor_lines, "sensor")
    partition_from_header(inc_version, column_map)  # validate both headers
    partition = partition_from_header(sen_version, column_map)

    inc_cols = _resolve_columns(next(csv.reader([inc_header])), column_map.incident, "incident")
    sen_cols = _resolve_columns(next(csv.reader([sen_header])), column_map.sensor, "sensor")

    row_errors: list[tuple[int, str]] = []
    warnings: list[str] = []
    dropped = 0

    incidents: list[IncidentRecord] = []
    for line_no, line in inc_rows:
        try:
            row = next(csv.reader([line]))
        except csv.Error as exc:
            row_errors.append((line_no + 1, f"bad CSV row: {exc}"))
            continue
        try:
            ts = _get(row, inc_cols, "timestamp")
            lat = _get(row, inc_cols, "lat")
            lon = _get(row, inc_cols, "lon")
            if ts is None or lat is None or lon is None:
                raise ValueError("incident row needs timestamp, lat, lon")
            kind = _get(row, inc_cols, "incident_type")
            incidents.append(
                IncidentRecord(
                    timestamp=int(float(ts)),
                    lat=float(lat),
                    lon=float(lon),
                    incident_type=int(float(kind)) if kind is not None else 1,
                    description=_get(row, inc_cols, "description"),
                )
            )
        except (ValueError, TypeError) as exc:
            row_errors.append((line_no + 1, str(exc)))

    offset = len(incident_lines) + 1
    records: list[SensorRecord] = []
    for line_no, line in sen_rows:
        try:
            row = next(csv.reader([line]))
        except csv.Error as exc:
            row_errors.append((offset + line_no + 1, f"bad CSV row: {exc}"))
            dropped += 1
            continue
        try:
            ts = _get(row, sen_cols, "timestamp")
            if ts is None:
                raise ValueError("missing timestamp")
            ax, ay, az = (_get(row, sen_cols, k) for k in ("acc_x", "acc_y", "acc_z"))
            if ax is None or ay is None or az is None:
                dropped += 1
                continue
            gps = [_get(row, sen_cols, k) for k in ("lat", "lon", "gps_accuracy")]
            if any(v is not None for v in gps) and not all(v is not None for v in gps):
                warnings.append(f"line {offset + line_no + 1}: partial GPS fix ignored")
                gps = [None, None, None]
            gyr = [_get(row, sen_cols, k) for k in ("gyr_a", "gyr_b", "gyr_c")]
            if any(v is not None for v in gyr) and not all(v is not None for v in gyr):
                warnings.append(f"line {offset + line_no + 1}: partial gyroscope row ignored")
                gyr = [None, None, None]
            records.append(
                SensorRecord(
                    timestamp=int(float(ts)),
                    acc_x=float(ax),
                    acc_y=float(ay),
                    acc_z=float(az),
                    lat=float(gps[0]) if gps[0] is not None else None,
                    lon=float(gps[1]) if gps[1] is not None else None,
                    gps_accuracy=float(gps[2]) if gps[2] is not None else None,
                    gyr_a=float(gyr[0]) if gyr[0] is not None else None,
                    gyr_b=float(gyr[1]) if gyr[1] is not None else None,
                    gyr_c=float(gyr[2]) if gyr[2] is not None else None,
                )
            )
        except (ValueError, TypeError) as exc:
            row_errors.append((offset + line_no + 1, str(exc)))
            dropped += 1

    incidents = _attach_incidents(incidents, records, warnings)
    return RawRide(
        ride_id=ride_id,
        incidents=incidents,
        records=records,
        partition=partition,
        dropped_rows=dropped,
        row_errors=row_errors,
        warnings=warnings,
    )


def _attach_incidents(
    incidents: list[IncidentRecord],
    records: list[SensorRecord],
    warnings: list[str],
) -> list[IncidentRecord]:
    """Snap incident timestamps onto the sensor stream.

    Exact matches pass through; near misses are moved to the nearest sensor
    timestamp within the tolerance; anything farther is dropped.
    """
    if not incidents:
        return incidents
    if not records:
        warnings.append(f"{len(incidents)} incident(s) dropped: no sensor rows")
        return []
    ts = np.array(sorted(r.timestamp for r in records), dtype=np.int64)
    out = []
    for inc in incidents:
        pos = int(np.searchsorted(ts, inc.timestamp))
        candidates = [c for c in (pos - 1, pos) if 0 <= c < len(ts)]
        nearest = min(candidates, key=lambda c: abs(int(ts[c]) - inc.timestamp))
        delta = abs(int(ts[nearest]) - inc.timestamp)
        if delta == 0:
            out.append(inc)
        elif delta <= INCIDENT_MATCH_TOLERANCE_MS:
            out.append(
                IncidentRecord(
                    timestamp=int(ts[nearest]),
                    lat=inc.lat,
                    lon=inc.lon,
                    incident_type=inc.incident_type,
                    description=inc.description,
                )
            )
        else:
            warnings.append(
                f"incident at {inc.timestamp} dropped: {delta} ms from nearest sensor row"
            )
    return out


_PARTITION_HEADERS = {
    DatasetPartition.ANDROID_OLD: "v1#a35",
    DatasetPartition.ANDROID_NEW: "v1#a72",
    DatasetPartition.IOS: "v1#i5",
}

_INCIDENT_COLUMNS = ("timestamp", "lat", "lon", "incident_type", "description")
_SENSOR_COLUMNS = (
    "timestamp", "lat", "lon", "gps_accuracy",
    "acc_x", "acc_y", "acc_z", "gyr_a", "gyr_b", "gyr_c",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_ride(ride: RawRide) -> str:
    """Serialize a ride to canonical text form.

    Uses the canonical column order, ``repr`` float formatting (which
    round-trips exactly) and empty strings for absent optional fields, so
    ``parse_ride(write_ride(r))`` reproduces ``r``.
    """
    header = _PARTITION_HEADERS[ride.partition]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    buf.write(header + "\n")
    writer.writerow(_INCIDENT_COLUMNS)
    for inc in ride.incidents:
        writer.writerow([
            _fmt(inc.timestamp), _fmt(inc.lat), _fmt(inc.lon),
            _fmt(inc.incident_type), _fmt(inc.description),
        ])
    buf.write("=" * 25 + "\n")
    buf.write(header + "\n")
    writer.writerow(_SENSOR_COLUMNS)
    for rec in ride.records:
        writer.writerow([
            _fmt(rec.timestamp), _fmt(rec.lat), _fmt(rec.lon), _fmt(rec.gps_accuracy),
            _fmt(rec.acc_x), _fmt(rec.acc_y), _fmt(rec.acc_z),
            _fmt(rec.gyr_a), _fmt(rec.gyr_b), _fmt(rec.gyr_c),
        ])
    return buf.getvalue()


@dataclass
class ScanResult:
    """Outcome of a directory scan: parsable rides and per-file errors."""

    entries: list[tuple[str, DatasetPartition]]
    errors: list[tuple[str, str]]

    def counts(self) -> dict:
        out: dict = {}
        for _, part in self.entries:
            out[part] = out.get(part, 0) + 1
        return out


def _scan_one(root: Path, path: Path, column_map: ColumnMap):
    ride_id = str(path.relative_to(root).with_suffix("")).replace("\\", "/")
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
        _, sensor_lines = _split_sections(text)
        version, _, _ = _section_parts(sensor_lines, "sensor")
        partition = partition_from_header(version, column_map)
    except (RideFormatError, OSError) as exc:
        return None, (ride_id, str(exc))
    return (ride_id, partition), None


def partition_dataset(
    root,
    region: str | None = None,
    column_map: ColumnMap = DEFAULT_COLUMN_MAP,
    max_workers: int = 1,
) -> ScanResult:
    """Scan a dataset directory and partition every ride file found.

    Ride files are ``*.csv`` anywhere under ``root``. A ``region`` filter
    keeps files inside a so-named subdirectory or whose name starts with the
    region. Unreadable files land in ``errors`` instead of aborting the scan.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    files = sorted(root.rglob("*.csv"))
    if region is not None:
        files = [
            p for p in files
            if region in p.relative_to(root).parts[:-1] or p.name.startswith(region)
        ]
    entries: list[tuple[str, DatasetPartition]] = []
    errors: list[tuple[str, str]] = []
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(lambda p: _scan_one(root, p, column_map), files))
    else:
        results = [_scan_one(root, p, column_map) for p in files]
    for entry, error in results:
        if entry is not None:
            entries.append(entry)
        else:
            errors.append(error)
    return ScanResult(entries=entries, errors=errors)


def load_ride_file(root, ride_id: str, column_map: ColumnMap = DEFAULT_COLUMN_MAP) -> RawRide:
    """Read and parse one ride addressed by its id relative to ``root``."""
    path = Path(root) / f"{ride_id}.csv"
    text = path.read_text(encoding="utf-8", errors="replace")
    return parse_ride(text, ride_id=ride_id, column_map=column_map)
