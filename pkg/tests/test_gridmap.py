import math

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from corrslam.errors import WindowTooLarge
from corrslam.geometry import Pose2D, Scan
from corrslam.gridmap import (
    LAYOUT_REARRANGED,
    GridMap,
    OccupancyModel,
    QuantizedMap,
    build_coarse,
    decode_pgm,
    encode_pgm,
    grid_from_gray,
    map_metadata,
    map_to_gray,
    probabilities_to_gray,
    quantize,
    quantize_probabilities,
    rearrange_coarse,
    rearrange_columns,
    restore_columns,
    to_uint8,
    update_map,
    write_pgm,
)
from corrslam.synthetic import sense


def direct_coarse(cells: np.ndarray, w: int) -> np.ndarray:
    """Block maxima over every w x w block that overlaps the map, low corner first."""
    padded = np.pad(cells.astype(np.int64), w - 1)
    return sliding_window_view(padded, (w, w)).max(axis=(2, 3))


def test_update_map_single_beam_along_axis():
    grid = GridMap.empty(40, 40, 0.05)
    model = OccupancyModel()
    update_map(grid, Scan([1.0], [0.0]), Pose2D(), model)
    assert grid.log_odds[0, 20] == pytest.approx(model.hit)
    assert np.allclose(grid.log_odds[0, :20], -model.miss)
    untouched = np.ones(grid.log_odds.shape, dtype=bool)
    untouched[0, :21] = False
    assert np.all(grid.log_odds[untouched] == 0.0)


def test_update_map_empty_scan_is_noop():
    grid = GridMap.empty(10, 10)
    before = grid.log_odds.copy()
    update_map(grid, Scan([], []), Pose2D(0.2, 0.2, 0.0))
    assert np.array_equal(grid.log_odds, before)


def test_update_map_converges_to_clamp():
    grid = GridMap.empty(40, 40, 0.05)
    model = OccupancyModel()
    values = []
    for _ in range(100):
        update_map(grid, Scan([1.0], [0.0]), Pose2D(), model)
        values.append(grid.probability(20, 0))
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert grid.log_odds[0, 20] == pytest.approx(model.l_max)
    assert grid.log_odds[0, 5] == pytest.approx(model.l_min)


def test_update_map_touches_only_traced_cells(room):
    grid = GridMap.centered(Pose2D(), 12.0, 0.05)
    pose = room.trajectory[0]
    scan = sense(room, pose)
    before = grid.log_odds.copy()
    update_map(grid, scan, pose)
    changed = grid.log_odds != before
    i, j = np.nonzero(changed.T)
    # every changed cell lies within max range of the sensor
    xs = grid.origin[0] + (i + 0.5) * grid.resolution
    ys = grid.origin[1] + (j + 0.5) * grid.resolution
    assert np.all(np.hypot(xs - pose.x, ys - pose.y) <= scan.max_range + grid.resolution)
    assert changed.sum() < changed.size / 2


def test_update_map_grows_and_keeps_world_coordinates():
    grid = GridMap.empty(8, 8, 0.05, origin=(0.0, 0.0))
    update_map(grid, Scan([0.1], [0.0]), Pose2D(0.075, 0.075, 0.0))
    marked = grid.log_odds.copy()
    assert marked[1, 3] > 0.0
    update_map(grid, Scan([2.0], [math.pi]), Pose2D(0.075, 0.075, 0.0))
    assert grid.origin == pytest.approx((-3.2, 0.0))
    assert (grid.width, grid.height) == (72, 8)
    i, j = grid.world_to_cell(0.175, 0.075)
    assert (i, j) == (67, 1)
    assert grid.log_odds[j, i] == pytest.approx(marked[1, 3])
    assert grid.probability(*grid.world_to_cell(-1.925, 0.075)) > 0.5


def test_grid_validation():
    with pytest.raises(ValueError):
        GridMap(np.zeros((4, 4)), resolution=0.0)
    with pytest.raises(ValueError):
        GridMap(np.zeros(4))
    with pytest.raises(ValueError):
        OccupancyModel(l_min=1.0, l_max=0.0)


def test_probabilities_stay_in_unit_interval(room_grid):
    p = room_grid.probabilities()
    assert p.min() >= 0.0 and p.max() <= 1.0
    assert room_grid.probability(-1, 0) == 0.0


def test_quantization_examples():
    assert int(to_uint8([1.0])[0]) == 255
    assert int(quantize_probabilities([1.0])[0]) == 63
    assert int(quantize_probabilities([0.0])[0]) == 0
    assert QuantizedMap.from_uint8(np.array([[0x07]]), 0.05).value(0, 0) == 1


def test_quantization_is_high_order_bits_for_every_byte():
    values = np.arange(256, dtype=np.uint8).reshape(16, 16)
    q = QuantizedMap.from_uint8(values, 0.05)
    assert np.array_equal(q.cells, values >> 2)


def test_quantization_monotone(rng):
    p = np.sort(rng.uniform(0.0, 1.0, 1000))
    q = quantize_probabilities(p)
    assert np.all(np.diff(q.astype(int)) >= 0)


def test_quantize_crops_centered_window():
    grid = GridMap.from_probabilities(np.full((400, 400), 0.5), 0.05, origin=(-10.0, -10.0))
    q = quantize(grid, (0.0, 0.0), 320, 320)
    assert (q.width, q.height) == (320, 320)
    assert q.origin == pytest.approx((-8.0, -8.0))
    clamped = quantize(grid, (-9.9, -9.9), 100, 100)
    assert clamped.origin == pytest.approx((-10.0, -10.0))
    assert clamped.value(500, 0) == 0


def test_quantize_rejects_oversized_windows():
    grid = GridMap.empty(10, 10)
    with pytest.raises(WindowTooLarge):
        quantize(grid, (0.0, 0.0), 321, 10)
    with pytest.raises(WindowTooLarge):
        QuantizedMap(np.zeros((10, 321), dtype=np.uint8), 0.05)


def test_build_coarse_examples():
    const = QuantizedMap(np.full((12, 10), 17, dtype=np.uint8), 0.05)
    assert np.all(build_coarse(const, 4).cells == 17)
    small = QuantizedMap(np.array([[1, 2], [3, 4]], dtype=np.uint8), 0.05)
    assert build_coarse(small, 2).value(0, 0) == 4


@pytest.mark.parametrize("w", [2, 4, 8])
def test_build_coarse_matches_direct_block_maximum(rng, w):
    for _ in range(10):
        h, wd = rng.integers(1, 129, 2)
        cells = rng.integers(0, 64, (h, wd), dtype=np.uint8)
        coarse = build_coarse(QuantizedMap(cells, 0.05), w)
        assert np.array_equal(coarse.cells.astype(np.int64), direct_coarse(cells, w))


def test_coarse_dominates_fine_blocks(rng):
    w = 4
    cells = rng.integers(0, 64, (30, 25), dtype=np.uint8)
    q = QuantizedMap(cells, 0.05)
    coarse = build_coarse(q, w)
    for i in range(-w + 1, q.width):
        for j in range(-w + 1, q.height):
            block = [q.value(i + a, j + b) for a in range(w) for b in range(w)]
            assert coarse.value(i, j) >= max(block)


def test_rearrange_columns_example():
    row = np.array([[0, 1, 2, 3, 4, 5]])
    assert rearrange_columns(row, 3).tolist() == [[0, 3, 1, 4, 2, 5]]
    assert restore_columns(rearrange_columns(row, 3), 3, 6).tolist() == row.tolist()


def test_rearranged_coarse_reads_identical_values(rng):
    q = QuantizedMap(rng.integers(0, 64, (40, 37), dtype=np.uint8), 0.05)
    coarse = build_coarse(q, 8)
    rearranged = rearrange_coarse(coarse)
    assert rearranged.layout == LAYOUT_REARRANGED
    ii, jj = np.meshgrid(np.arange(-10, 50), np.arange(-10, 50))
    assert np.array_equal(coarse.values(ii, jj), rearranged.values(ii, jj))
    with pytest.raises(ValueError):
        rearrange_coarse(rearranged)


def test_gray_conversion_example():
    gray = probabilities_to_gray(np.array([[0.0, 1.0], [0.5, 0.5]]))
    assert gray.tolist() == [[255, 0], [127, 127]]


def test_empty_map_renders_mid_gray():
    gray = map_to_gray(GridMap.empty(7, 5))
    assert gray.shape == (5, 7)
    assert np.all(gray == 127)


def test_map_to_gray_puts_highest_row_first():
    probs = np.zeros((3, 2))
    probs[2, :] = 1.0
    gray = map_to_gray(GridMap.from_probabilities(probs))
    assert np.all(gray[0] == 0)
    assert np.all(gray[1:] > 250)


def test_pgm_header_and_payload(tmp_path):
    gray = np.array([[255, 0], [127, 127]], dtype=np.uint8)
    data = encode_pgm(gray)
    assert data.startswith(b"P5\n2 2\n255\n")
    assert np.array_equal(decode_pgm(data), gray)
    first = write_pgm(tmp_path / "a.pgm", gray).read_bytes()
    second = write_pgm(tmp_path / "b.pgm", gray).read_bytes()
    assert first == second
    with pytest.raises(ValueError):
        decode_pgm(b"P2\n1 1\n255\n\x00")


def test_grid_from_gray_round_trip(room_grid):
    gray = map_to_gray(room_grid)
    meta = map_metadata(room_grid)
    rebuilt = grid_from_gray(gray, meta["resolution"], tuple(meta["origin"]))
    assert (rebuilt.width, rebuilt.height) == (meta["width"], meta["height"])
    assert np.max(np.abs(map_to_gray(rebuilt).astype(int) - gray.astype(int))) <= 1
