from dataclasses import replace

import pytest

from corrslam import slam_hector
from corrslam.config import RunConfig
from corrslam.csm import CsmEngine, MatchQuery, SearchWindow, default_delta_theta
from corrslam.errors import EmptyScan
from corrslam.geometry import Pose2D, Scan
from corrslam.gridmap import OccupancyModel, quantize
from corrslam.metrics import evaluate
from corrslam.pipeline import run_hector
from corrslam.synthetic import corridor_world, room_world, simulate

# wide enough along x for the step plus the 0.5 m jump
ROBUST_WINDOW = (0.8, 0.4, 0.25)


def _corridor_errors():
    world = corridor_world()
    sim = simulate(world)
    config = RunConfig(laser=world.lidar.preset())
    config.hector = replace(config.hector, window=ROBUST_WINDOW)
    original = run_hector(sim.entries, config, robust=False)
    robust = run_hector(sim.entries, config, robust=True)
    return evaluate(original.trajectory, sim.relations), evaluate(robust.trajectory, sim.relations), robust


def test_config_validation():
    with pytest.raises(ValueError):
        slam_hector.HectorConfig(levels=0)
    with pytest.raises(ValueError):
        slam_hector.HectorConfig(levels=8)
    with pytest.raises(ValueError):
        slam_hector.HectorConfig(window=(0.1, 0.1))
    assert slam_hector.HectorConfig(robust=True).effective_levels == 1
    assert slam_hector.HectorConfig(levels=4).effective_levels == 4


def test_pyramid_levels_share_origin():
    pyramid = slam_hector.MapPyramid.create(Pose2D(1.0, -2.0, 0.0), size_m=8.0, resolution=0.05, n=3)
    assert len(pyramid) == 3
    assert [pyramid.resolution(k) for k in range(3)] == pytest.approx([0.05, 0.1, 0.2])
    origins = {grid.origin for grid in pyramid.levels}
    assert len(origins) == 1
    sizes = [grid.width * grid.resolution for grid in pyramid.levels]
    assert sizes == pytest.approx([sizes[0]] * 3)


def test_pyramid_origins_stay_equal_after_growth(room_scan):
    pyramid = slam_hector.MapPyramid.create(Pose2D(), size_m=1.6, resolution=0.05, n=3)
    pyramid.update(room_scan, Pose2D(), OccupancyModel())
    origins = [grid.origin for grid in pyramid.levels]
    for origin in origins[1:]:
        assert origin == pytest.approx(origins[0])
    extents = [grid.width * grid.resolution for grid in pyramid.levels]
    assert extents == pytest.approx([extents[0]] * 3)


def test_original_step_tracks_small_motion():
    world = room_world()
    sim = simulate(world)
    config = RunConfig(laser=world.lidar.preset())
    result = run_hector(sim.entries[:12], config)
    report = evaluate(result.trajectory, sim.relations)
    assert report.eps_trans < 0.05
    assert result.summary["levels"] == 3


def test_robust_step_records_csm_seed(room_scan):
    state = slam_hector.init_hector(slam_hector.HectorConfig(robust=True), room_scan)
    assert len(state.engines) == 2
    assert len(state.pyramid) == 1
    slam_hector.hector_step(state, room_scan)
    stats = state.last_stats
    assert stats.csm_score > 0
    assert stats.num_score_evals > 0
    assert stats.cost_final <= stats.cost_seed
    assert set(stats.phase_seconds) >= {"scan_matching", "refinement", "map_update"}
    assert len(state.trajectory) == 2


def test_robust_step_needs_engines(room_scan):
    state = slam_hector.init_hector(slam_hector.HectorConfig(), room_scan)
    with pytest.raises(ValueError):
        slam_hector.hector_robust_step(state, room_scan)
    with pytest.raises(EmptyScan):
        slam_hector.hector_step(state, Scan([], []))


def test_split_window_matches_single_engine(room, room_grid, room_scan):
    truth = room.trajectory[0]
    xi0 = Pose2D(truth.x + 0.07, truth.y + 0.04, truth.theta - 0.05)
    window = SearchWindow.from_metric(0.2, 0.2, 0.15, 0.05, default_delta_theta(0.05, room_scan.max_range))
    query = MatchQuery(quantize(room_grid, (xi0.x, xi0.y)), room_scan, xi0, window)
    single = CsmEngine().match(query)
    split = slam_hector.split_window_match([CsmEngine(), CsmEngine()], query)
    assert split.best_steps == single.best_steps
    assert split.score == single.score
    with pytest.raises(ValueError):
        slam_hector.split_window_match([CsmEngine()], query)


def test_robust_variant_survives_the_corridor_jump():
    original, robust, result = _corridor_errors()
    assert robust.eps_trans <= 0.5 * original.eps_trans
    assert result.summary["robust"] is True
    assert all(check["ok"] for check in result.invariants())
