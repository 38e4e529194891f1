import struct

import numpy as np
import pytest

from corrslam import packets
from corrslam.csm import MatchQuery, SearchWindow, match_optimized, match_reference
from corrslam.errors import MalformedPacket
from corrslam.fixedpoint import FixedScan
from corrslam.geometry import Pose2D
from corrslam.gridmap import QuantizedMap


def _query(reuse_map: bool = False, reuse_scan: bool = False) -> MatchQuery:
    rng = np.random.default_rng(8)
    qmap = QuantizedMap(rng.integers(0, 64, size=(24, 40), dtype=np.uint8), resolution=0.0625, origin=(0.5, -1.25))
    scan = FixedScan(rng.uniform(0.2, 0.8, 30), rng.uniform(-3.0, 3.0, 30))
    window = SearchWindow(8, 4, 3, 0.0625, 0.015, w=8)
    return MatchQuery(
        map=None if reuse_map else qmap,
        scan=None if reuse_scan else scan,
        xi0=Pose2D(1.6, 0.2, 0.3),
        window=window,
        reuse_map=reuse_map,
        reuse_scan=reuse_scan,
    )


def test_query_file_answers_like_the_original(tmp_path):
    query = _query()
    path = packets.write_query(tmp_path / "q.csmq", query)
    loaded = packets.read_query(path)

    assert loaded.window == query.window
    assert loaded.xi0 == query.xi0
    assert loaded.map.origin == (0.5, -1.25)
    assert loaded.map.resolution == 0.0625
    assert np.array_equal(loaded.map.cells, query.map.cells)
    assert np.array_equal(loaded.scan.ranges32, query.scan.ranges32)
    assert match_optimized(loaded).best_steps == match_reference(query).best_steps


def test_result_file(tmp_path):
    query = _query()
    result = match_reference(query)
    path = packets.write_result(tmp_path / "golden.csmr", result)
    data = path.read_bytes()
    assert data[:8] == packets.RESULT_MAGIC
    assert len(data) == 16

    record = packets.read_result(path)
    assert (record.nx, record.ny, record.ntheta) == result.best_steps
    assert record.score == result.score
    assert record.line() == f"{record.nx} {record.ny} {record.ntheta} {record.score}"


def test_result_packet_layout():
    assert packets.decode_result(struct.pack("<hhhH", -3, 7, -1, 900)) == (-3, 7, -1, 900)
    with pytest.raises(MalformedPacket):
        packets.decode_result(b"\x00" * 6)


def test_map_values_truncate_to_six_bits_on_ingest():
    values8 = np.array([[0, 3, 4], [128, 254, 255]], dtype=np.uint8)
    data = packets.encode_map(values8, 0.05, (0.0, 0.0))
    # header packet, origin packet, one zero-padded body packet
    assert len(data) == 24
    assert data[16:22] == bytes([0, 3, 4, 128, 254, 255])
    assert data[22:] == b"\x00\x00"

    raw, resolution, origin = packets.decode_map(packets.PacketReader(data))
    assert np.array_equal(raw, values8)
    qmap = packets.ingest_map(raw, resolution, origin)
    assert qmap.cells.tolist() == [[0, 0, 1], [32, 63, 63]]


def test_scan_section_layout():
    scan = FixedScan([1.5, 2.0], [0.25, -0.5])
    data = packets.encode_scan(scan)
    assert struct.unpack("<II", data[:8]) == (2, 0)
    assert struct.unpack("<ff", data[8:16]) == (1.5, 0.25)
    decoded = packets.decode_scan(packets.PacketReader(data))
    assert decoded.ranges32.tolist() == [1.5, 2.0]
    assert decoded.angles32.tolist() == [0.25, -0.5]


def test_reuse_flags_omit_sections():
    full = packets.encode_query(_query())
    no_map = packets.encode_query(_query(reuse_map=True))
    neither = packets.encode_query(_query(reuse_map=True, reuse_scan=True))
    # magic, flags and six window packets
    assert len(neither) == 8 * 8
    assert len(no_map) == len(neither) + 8 + 30 * 8
    assert len(full) == len(no_map) + 16 + 24 * 40

    decoded = packets.decode_query(neither)
    assert decoded.reuse_map and decoded.reuse_scan
    assert decoded.map is None and decoded.scan is None


def test_flags_reject_undefined_bits():
    assert packets.decode_flags(packets.encode_flags(True, False)) == (True, False)
    with pytest.raises(MalformedPacket):
        packets.decode_flags(struct.pack("<Q", 0b100))


def test_malformed_queries():
    good = packets.encode_query(_query())
    with pytest.raises(MalformedPacket):
        packets.decode_query(b"CSMXv1\x00\x00" + good[8:])
    with pytest.raises(MalformedPacket):
        packets.decode_query(good[:-8])
    with pytest.raises(MalformedPacket):
        packets.decode_query(good + b"\x00" * 8)
    with pytest.raises(MalformedPacket):
        packets.decode_query(good + b"\x00" * 3)


def test_invalid_window_packet():
    bad = struct.pack("<hhhH", 3, 4, 0, 8) + struct.pack("<ddddd", 0.05, 0.01, 0.0, 0.0, 0.0)
    with pytest.raises(MalformedPacket):
        packets.decode_window(packets.PacketReader(bad))


def test_oversized_map_header():
    header = struct.pack("<HHf", 400, 10, 0.05) + struct.pack("<ff", 0.0, 0.0)
    with pytest.raises(MalformedPacket):
        packets.decode_map(packets.PacketReader(header + b"\x00" * 4000))


def test_scan_header_padding_must_be_zero():
    with pytest.raises(MalformedPacket):
        packets.decode_scan(packets.PacketReader(struct.pack("<II", 0, 1)))
    with pytest.raises(MalformedPacket):
        packets.decode_scan(packets.PacketReader(struct.pack("<II", 600, 0)))


def test_encode_requires_sections():
    query = _query()
    query.map = None
    with pytest.raises(ValueError):
        packets.encode_query(query)
