"""64-bit little-endian packet stream between host and matcher.

Layouts (one packet = 8 bytes):

- flag:       u64, bit 0 reuse_map, bit 1 reuse_scan, other bits must be 0
- map header: u16 width, u16 height, f32 resolution; then f32 origin x, f32 origin y
- map body:   eight consecutive 8-bit cell values per packet, row-major,
              the last packet zero-padded
- scan header: u32 point count, u32 zero; then f32 range, f32 angle per point
- window:     i16 wx, i16 wy, i16 wtheta, u16 w; then f64 resolution,
              f64 delta_theta, f64 xi0.x, f64 xi0.y, f64 xi0.theta
- result:     i16 nx, i16 ny, i16 ntheta, u16 score

A ``.csmq`` file is ``CSMQv1\\0\\0`` + flag + window + map section (unless
reused) + scan section (unless reused). A ``.csmr`` file is ``CSMRv1\\0\\0`` +
result.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .csm import MatchQuery, MatchResult, SearchWindow
from .errors import MalformedPacket
from .fixedpoint import FixedScan, as_fixed_scan
from .geometry import MAX_SCAN_POINTS, Pose2D
from .gridmap import MAX_WINDOW_CELLS, QuantizedMap

PACKET_BYTES = 8
QUERY_MAGIC = b"CSMQv1\x00\x00"
RESULT_MAGIC = b"CSMRv1\x00\x00"
FLAG_REUSE_MAP = 1 << 0
FLAG_REUSE_SCAN = 1 << 1
_FLAG_MASK = FLAG_REUSE_MAP | FLAG_REUSE_SCAN


class PacketReader:
    def __init__(self, data: bytes, offset: int = 0) -> None:
        if (len(data) - offset) % PACKET_BYTES:
            raise MalformedPacket(f"stream length {len(data) - offset} is not a multiple of {PACKET_BYTES}")
        self.data = data
        self.offset = offset

    def take(self, count: int = 1) -> bytes:
        end = self.offset + count * PACKET_BYTES
        if end > len(self.data):
            raise MalformedPacket(
                f"truncated stream: need {count} packet(s) at byte {self.offset}, have {len(self.data) - self.offset} bytes"
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take())

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.data)


def encode_flags(reuse_map: bool, reuse_scan: bool) -> bytes:
    return struct.pack("<Q", (FLAG_REUSE_MAP if reuse_map else 0) | (FLAG_REUSE_SCAN if reuse_scan else 0))


def decode_flags(packet: bytes) -> Tuple[bool, bool]:
    (bits,) = struct.unpack("<Q", packet)
    if bits & ~_FLAG_MASK:
        raise MalformedPacket(f"undefined flag bits set: {bits:#018x}")
    return bool(bits & FLAG_REUSE_MAP), bool(bits & FLAG_REUSE_SCAN)


def encode_map(values8: np.ndarray, resolution: float, origin: Tuple[float, float]) -> bytes:
    values8 = np.ascontiguousarray(values8, dtype=np.uint8)
    height, width = values8.shape
    if width > MAX_WINDOW_CELLS or height > MAX_WINDOW_CELLS:
        raise ValueError(f"map {width}x{height} exceeds {MAX_WINDOW_CELLS}x{MAX_WINDOW_CELLS}")
    header = struct.pack("<HHf", width, height, resolution) + struct.pack("<ff", origin[0], origin[1])
    body = values8.tobytes()
    body += b"\x00" * (-len(body) % PACKET_BYTES)
    return header + body


def decode_map(reader: PacketReader) -> Tuple[np.ndarray, float, Tuple[float, float]]:
    """Returns the 8-bit values exactly as sent; 6-bit truncation happens on ingest."""
    width, height, resolution = reader.unpack("<HHf")
    origin = reader.unpack("<ff")
    if width > MAX_WINDOW_CELLS or height > MAX_WINDOW_CELLS:
        raise MalformedPacket(f"map header declares {width}x{height}")
    count = width * height
    body = reader.take(-(-count // PACKET_BYTES))
    values = np.frombuffer(body[:count], dtype=np.uint8).reshape(height, width).copy()
    return values, float(resolution), (float(origin[0]), float(origin[1]))


def ingest_map(values8: np.ndarray, resolution: float, origin: Tuple[float, float]) -> QuantizedMap:
    return QuantizedMap.from_uint8(values8, resolution, origin)


def encode_scan(scan) -> bytes:
    fs = as_fixed_scan(scan)
    if len(fs) > MAX_SCAN_POINTS:
        raise ValueError(f"scan has {len(fs)} points, buffer holds {MAX_SCAN_POINTS}")
    pairs = np.empty((len(fs), 2), dtype="<f4")
    pairs[:, 0] = fs.ranges32
    pairs[:, 1] = fs.angles32
    return struct.pack("<II", len(fs), 0) + pairs.tobytes()


def decode_scan(reader: PacketReader) -> FixedScan:
    count, pad = reader.unpack("<II")
    if pad != 0 or count > MAX_SCAN_POINTS:
        raise MalformedPacket(f"bad scan header: count={count} pad={pad}")
    pairs = np.frombuffer(reader.take(count), dtype="<f4").reshape(count, 2) if count else np.empty((0, 2), "<f4")
    return FixedScan(pairs[:, 0].copy(), pairs[:, 1].copy())


def encode_window(window: SearchWindow, xi0: Pose2D) -> bytes:
    return struct.pack("<hhhH", window.wx, window.wy, window.wtheta, window.w) + struct.pack(
        "<ddddd", window.resolution, window.delta_theta, xi0.x, xi0.y, xi0.theta
    )


def decode_window(reader: PacketReader) -> Tuple[SearchWindow, Pose2D]:
    wx, wy, wtheta, w = reader.unpack("<hhhH")
    resolution, delta_theta, x, y, theta = struct.unpack("<ddddd", reader.take(5))
    try:
        window = SearchWindow(wx, wy, wtheta, resolution, delta_theta, w)
    except ValueError as exc:
        raise MalformedPacket(f"invalid window packet: {exc}") from exc
    return window, Pose2D(x, y, theta)


def encode_result(result: MatchResult) -> bytes:
    nx, ny, nt = result.best_steps
    return struct.pack("<hhhH", nx, ny, nt, result.score)


def decode_result(packet: bytes) -> Tuple[int, int, int, int]:
    if len(packet) != PACKET_BYTES:
        raise MalformedPacket(f"result packet must be {PACKET_BYTES} bytes, got {len(packet)}")
    return struct.unpack("<hhhH", packet)


def encode_query(query: MatchQuery) -> bytes:
    parts: List[bytes] = [QUERY_MAGIC, encode_flags(query.reuse_map, query.reuse_scan)]
    parts.append(encode_window(query.window, query.xi0))
    if not query.reuse_map:
        if query.map is None:
            raise ValueError("query without reuse_map must carry a map")
        parts.append(encode_map(query.map.to_uint8(), query.map.resolution, query.map.origin))
    if not query.reuse_scan:
        if query.scan is None:
            raise ValueError("query without reuse_scan must carry a scan")
        parts.append(encode_scan(query.scan))
    return b"".join(parts)


def decode_query(data: bytes) -> MatchQuery:
    if data[: len(QUERY_MAGIC)] != QUERY_MAGIC:
        raise MalformedPacket("missing CSMQ magic")
    reader = PacketReader(data, len(QUERY_MAGIC))
    reuse_map, reuse_scan = decode_flags(reader.take())
    window, xi0 = decode_window(reader)
    qmap: Optional[QuantizedMap] = None
    scan: Optional[FixedScan] = None
    if not reuse_map:
        qmap = ingest_map(*decode_map(reader))
    if not reuse_scan:
        scan = decode_scan(reader)
    if not reader.exhausted:
        raise MalformedPacket(f"{len(data) - reader.offset} trailing bytes after query")
    return MatchQuery(map=qmap, scan=scan, xi0=xi0, window=window, reuse_map=reuse_map, reuse_scan=reuse_scan)


@dataclass(frozen=True)
class ResultRecord:
    nx: int
    ny: int
    ntheta: int
    score: int

    def line(self) -> str:
        return f"{self.nx} {self.ny} {self.ntheta} {self.score}"


def write_query(path: Path, query: MatchQuery) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_query(query))
    return path


def read_query(path: Path) -> MatchQuery:
    return decode_query(Path(path).read_bytes())


def write_result(path: Path, result: MatchResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(RESULT_MAGIC + encode_result(result))
    return path


def read_result(path: Path) -> ResultRecord:
    data = Path(path).read_bytes()
    if data[: len(RESULT_MAGIC)] != RESULT_MAGIC:
        raise MalformedPacket("missing CSMR magic")
    return ResultRecord(*decode_result(data[len(RESULT_MAGIC) :]))
