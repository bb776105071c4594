"""Parse raw accident-event CSVs into validated geodetic events.

Municipal crash exports are dirty: blank coordinates, out-of-range values,
repeated collision ids. Rows that cannot yield a valid event are skipped and
counted, never fabricated or "repaired".
"""

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Optional, Union

from .errors import MalformedCsv, SchemaMismatch

# Column names of the NYC Motor Vehicle Collisions export; override via
# config or CLI flags for other sources. ``time`` may be a single column or a
# (date, time) column pair joined with a space before parsing.
DEFAULT_SCHEMA = {
    "lat": "LATITUDE",
    "lon": "LONGITUDE",
    "time": ["CRASH DATE", "CRASH TIME"],
    "id": "COLLISION_ID",
}

_TIME_FORMATS = (
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%m/%d/%Y",
    "%Y-%m-%d",
)


@dataclass(frozen=True)
class AccidentEvent:
    """One accident at a WGS84 location; timestamp optional (clustering is spatial)."""

    event_id: str
    latitude: float
    longitude: float
    timestamp: Optional[datetime] = None
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")


def _parse_timestamp(text: str) -> Optional[datetime]:
    text = text.strip()
    if not text:
        return None
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
    return None


def _coord(text: str, lo: float, hi: float) -> Optional[float]:
    try:
        value = float(text.strip())
    except (ValueError, AttributeError):
        return None
    if not lo <= value <= hi:
        return None
    return value


def parse_events(
    raw: Union[bytes, IO[bytes], IO[str]],
    schema: Optional[dict] = None,
) -> tuple[list[AccidentEvent], int]:
    """Parse a UTF-8 CSV with a header row into events.

    Returns ``(events, skipped_count)`` where skipped rows are those with
    missing/unparsable/out-of-range coordinates, a blank id, or an id already
    seen in this batch. ``len(events) + skipped_count`` equals the number of
    data rows. Deterministic: identical bytes give an identical event list.

    Raises MalformedCsv for a missing header or a row whose column count
    disagrees with the header; SchemaMismatch when a mapped column is absent.
    """
    schema = dict(DEFAULT_SCHEMA, **(schema or {}))

    if isinstance(raw, bytes):
        stream: IO[str] = io.StringIO(raw.decode("utf-8"))
    elif isinstance(raw, io.TextIOBase):
        stream = raw
    else:
        stream = io.TextIOWrapper(raw, encoding="utf-8")

    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedCsv("CSV has no header row") from None
    if not any(cell.strip() for cell in header):
        raise MalformedCsv("CSV header row is empty")

    col_index: dict[str, int] = {}
    for logical, column in schema.items():
        names = column if isinstance(column, (list, tuple)) else [column]
        for name in names:
            if name not in header:
                raise SchemaMismatch(f"column {name!r} (field {logical!r}) not in header")
        col_index[logical] = [header.index(n) for n in names] if isinstance(column, (list, tuple)) else header.index(column)

    mapped_cols = set()
    for value in col_index.values():
        mapped_cols.update(value if isinstance(value, list) else [value])

    events: list[AccidentEvent] = []
    skipped = 0
    seen_ids: set[str] = set()
    for row_num, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"row {row_num} has {len(row)} columns, header has {len(header)}")

        def cell(logical: str) -> str:
            idx = col_index[logical]
            if isinstance(idx, list):
                return " ".join(row[i].strip() for i in idx).strip()
            return row[idx]

        lat = _coord(cell("lat"), -90.0, 90.0)
        lon = _coord(cell("lon"), -180.0, 180.0)
        event_id = cell("id").strip()
        if lat is None or lon is None or not event_id or event_id in seen_ids:
            skipped += 1
            continue
        seen_ids.add(event_id)

        attributes = {
            header[i]: row[i].strip()
            for i in range(len(header))
            if i not in mapped_cols and row[i].strip()
        }
        events.append(
            AccidentEvent(
                event_id=event_id,
                latitude=lat,
                longitude=lon,
                timestamp=_parse_timestamp(cell("time")),
                attributes=attributes,
            )
        )
    return events, skipped
