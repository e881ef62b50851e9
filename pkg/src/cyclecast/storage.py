"""On-disk formats: the binary field file, the dataset manifest, and pairing.

Field file layout (all little-endian):

    offset  size  content
    0       4     magic "HSR1"
    4       4     format version, u32 (currently 1)
    8       4     grid height, u32
    12      4     grid width, u32
    16      4     resolution_km, f32
    20      4     cadence_minutes, u32
    24      8     timestamp, i64 Unix seconds UTC
    32      4     cap hint, f32
    36      4     reserved, zero
    40      -     payload: height*width f32 values, row-major, top-left origin;
                  missing cells are quiet NaN

Manifest files are UTF-8 text, one "ISO-8601-timestamp<TAB>relative-path" per
line; lines starting with '#' are comments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fields import DEFAULT_CAP, GridMeta, RainField

MAGIC = b"HSR1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIIfIqf4s")
HEADER_SIZE = HEADER.size  # 40 bytes

assert HEADER_SIZE == 40


class FieldFormatError(ValueError):
    """A field file violates the on-disk format."""


class ManifestError(ValueError):
    """A manifest is malformed or breaks the cadence contract."""


def write_field(rain: RainField, destination: Path | str, cap_hint: float = DEFAULT_CAP) -> None:
    """Write ``rain`` to ``destination`` in the binary field format."""
    meta = rain.meta
    if meta.height >= 2**32 or meta.width >= 2**32:
        raise FieldFormatError("grid dimensions overflow the u32 header fields")
    header = HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        meta.height,
        meta.width,
        meta.resolution_km,
        meta.cadence_minutes,
        int(rain.timestamp.timestamp()),
        cap_hint,
        b"\x00\x00\x00\x00",
    )
    payload = np.ascontiguousarray(rain.values, dtype="<f4").tobytes()
    Path(destination).write_bytes(header + payload)


def read_field(source: Path | str) -> RainField:
    """Read a field file written by :func:`write_field`."""
    raw = Path(source).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FieldFormatError(f"{source}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, height, width, resolution_km, cadence, ts, _cap_hint, _reserved = HEADER.unpack(
        raw[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise FieldFormatError(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"{source}: unsupported format version {version}")
    expected = height * width * 4
    payload = raw[HEADER_SIZE:]
    if len(payload) != expected:
        raise FieldFormatError(
            f"{source}: payload is {len(payload)} bytes, expected {expected} (truncated or trailing data)"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    finite = values[~np.isnan(values)]
    if np.any(finite < 0):
        raise FieldFormatError(f"{source}: payload contains negative rain rates")
    meta = GridMeta(
        height=height,
        width=width,
        resolution_km=resolution_km,
        cadence_minutes=cadence,
    )
    return RainField(
        meta=meta,
        timestamp=datetime.fromtimestamp(ts, tz=timezone.utc),
        values=values.copy(),
    )


@dataclass
class HsrPair:
    """Ordered training pair: a frame and its partner ``step`` frames later."""

    earlier: RainField
    later: RainField
    step: int

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.earlier.meta != self.later.meta:
            raise ValueError("pair members must share grid meta")
        expected = timedelta(minutes=self.step * self.earlier.meta.cadence_minutes)
        actual = self.later.timestamp - self.earlier.timestamp
        if actual != expected:
            raise ValueError(f"pair spans {actual}, expected {expected} for step={self.step}")


@dataclass
class DatasetManifest:
    """Ordered frame index: (timestamp, relative path) plus grid meta and step."""

    meta: GridMeta
    entries: list[tuple[datetime, str]] = field(default_factory=list)
    step: int = 2

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError("step must be >= 1")
        cadence = timedelta(minutes=self.meta.cadence_minutes)
        for (t0, p0), (t1, p1) in zip(self.entries, self.entries[1:]):
            if t1 <= t0:
                raise ValueError(f"timestamps must be strictly increasing ({p0} -> {p1})")
            delta = t1 - t0
            if delta % cadence != timedelta(0):
                raise ManifestError(f"gap {delta} between {p0} and {p1} is not a multiple of cadence")


def write_manifest(manifest: DatasetManifest, path: Path | str, comments: Sequence[str] = ()) -> None:
    lines = [f"# {c}" for c in comments]
    lines += [f"{ts.isoformat()}\t{rel}" for ts, rel in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: Path | str, step: int = 2) -> DatasetManifest:
    """Parse a manifest file; grid meta is taken from the first referenced field."""
    path = Path(path)
    entries: list[tuple[datetime, str]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            stamp, rel = line.split("\t")
            ts = datetime.fromisoformat(stamp)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad manifest line: {line!r}") from exc
        if ts.tzinfo is None:
            raise ManifestError(f"{path}:{lineno}: timestamp must carry a timezone")
        entries.append((ts.astimezone(timezone.utc), rel))
    if not entries:
        raise ManifestError(f"{path}: manifest lists no frames")
    first = read_field(path.parent / entries[0][1])
    return DatasetManifest(meta=first.meta, entries=entries, step=step)


def build_pairs(
    manifest: DatasetManifest,
    root: Path | str,
    strict_cadence: bool = False,
) -> list[HsrPair]:
    """Form every (t_i, t_{i+step}) pair, dropping bitwise-identical ones.

    Pairs spanning a cadence gap are skipped by default; with
    ``strict_cadence=True`` any gap rejects the whole manifest.
    """
    root = Path(root)
    cadence = timedelta(minutes=manifest.meta.cadence_minutes)
    stamps = [ts for ts, _ in manifest.entries]
    if strict_cadence:
        for (t0, p0), (t1, p1) in zip(manifest.entries, manifest.entries[1:]):
            if t1 - t0 != cadence:
                raise ManifestError(f"cadence gap between {p0} and {p1} (strict mode)")

    fields = [read_field(root / rel) for _, rel in manifest.entries]
    for got, (ts, rel) in zip(fields, manifest.entries):
        if got.timestamp != ts:
            raise ManifestError(f"{rel}: file timestamp {got.timestamp} disagrees with manifest {ts}")
        if got.meta != manifest.meta:
            raise ManifestError(f"{rel}: grid meta differs from the manifest's first frame")

    step = manifest.step
    pairs: list[HsrPair] = []
    for i in range(len(fields) - step):
        if stamps[i + step] - stamps[i] != step * cadence:
            continue  # spans a gap
        earlier, later = fields[i], fields[i + step]
        if earlier.same_values(later):
            continue  # static pair carries no temporal signal
        pairs.append(HsrPair(earlier=earlier, later=later, step=step))
    return pairs


def write_dataset(
    frames: Iterable[RainField],
    out_dir: Path | str,
    step: int = 2,
    comments: Sequence[str] = (),
) -> Path:
    """Write frames as field files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[datetime, str]] = []
    meta: GridMeta | None = None
    for frame in frames:
        meta = frame.meta if meta is None else meta
        rel = frame.timestamp.strftime("%Y%m%dT%H%M%SZ") + ".hsr"
        write_field(frame, out_dir / rel)
        entries.append((frame.timestamp, rel))
    if meta is None:
        raise ValueError("no frames to write")
    manifest = DatasetManifest(meta=meta, entries=entries, step=step)
    manifest_path = out_dir / "manifest.txt"
    write_manifest(manifest, manifest_path, comments=comments)
    return manifest_path
