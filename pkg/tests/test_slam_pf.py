import math
from dataclasses import replace

import numpy as np
import pytest

from corrslam import slam_pf
from corrslam.config import RunConfig
from corrslam.errors import EmptyScan
from corrslam.geometry import Pose2D, Scan
from corrslam.metrics import evaluate
from corrslam.pipeline import run_pf
from corrslam.synthetic import loop_world, room_world, simulate


def _room_run(seed: int = 0, **pf):
    world = room_world(steps=20)
    sim = simulate(world)
    config = RunConfig(seed=seed, laser=world.lidar.preset())
    config.pf = replace(config.pf, num_particles=4, window=(0.15, 0.15, 0.1), **pf)
    return sim, run_pf(sim.entries, config)


def test_effective_sample_size():
    assert slam_pf.effective_sample_size([0.25] * 4) == pytest.approx(4.0)
    assert slam_pf.effective_sample_size([1.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_systematic_resampling_example():
    assert slam_pf.resample_systematic([0.1, 0.2, 0.7], u=0.5).tolist() == [1, 2, 2]
    assert slam_pf.resample_systematic([0.5, 0.5], u=0.0).tolist() == [0, 1]
    assert slam_pf.resample_systematic([0.0, 0.0, 1.0], u=0.0).tolist() == [2, 2, 2]


def test_systematic_resampling_counts_follow_weights(rng):
    weights = rng.random(50)
    counts = np.bincount(slam_pf.resample_systematic(weights, rng), minlength=50)
    expected = weights / weights.sum() * 50
    assert np.all(np.abs(counts - expected) < 1.0 + 1e-9)


def test_resampling_validation():
    with pytest.raises(ValueError):
        slam_pf.resample_systematic([])
    with pytest.raises(ValueError):
        slam_pf.resample_systematic([0.0, 0.0])
    with pytest.raises(ValueError):
        slam_pf.resample_systematic([0.5, 0.5], u=1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        slam_pf.PfConfig(num_particles=0)
    with pytest.raises(ValueError):
        slam_pf.PfConfig(resample_threshold=1.5)
    with pytest.raises(ValueError):
        slam_pf.PfConfig(engines=3)
    with pytest.raises(ValueError):
        slam_pf.PfConfig(window=(0.1, 0.1))
    assert slam_pf.PfConfig.from_dict(slam_pf.PfConfig().to_dict()) == slam_pf.PfConfig()


def test_init_builds_identical_particles(room_scan):
    state = slam_pf.init_pf(slam_pf.PfConfig(num_particles=3), room_scan)
    assert len(state.particles) == 3
    assert state.weights.sum() == pytest.approx(1.0)
    assert len(state.engines) == 2
    maps = [p.map.log_odds for p in state.particles]
    assert all(np.array_equal(maps[0], m) for m in maps[1:])
    assert maps[0] is not maps[1]


def test_step_keeps_weights_normalized(room_scan):
    state = slam_pf.init_pf(slam_pf.PfConfig(num_particles=5, window=(0.1, 0.1, 0.05)), room_scan, seed=3)
    slam_pf.pf_step(state, room_scan, Pose2D())
    assert state.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert all(len(p.trajectory) == 2 for p in state.particles)
    assert state.last_stats.best_score > 0
    assert not state.last_stats.all_zero
    assert state.last_stats.num_score_evals > 0
    assert "scan_matching" in state.last_stats.phase_seconds


def test_step_rejects_empty_scan(room_scan):
    state = slam_pf.init_pf(slam_pf.PfConfig(num_particles=2), room_scan)
    with pytest.raises(EmptyScan):
        slam_pf.pf_step(state, Scan([], []), Pose2D())


def test_resampling_triggers_on_degenerate_weights(room_scan):
    state = slam_pf.init_pf(slam_pf.PfConfig(num_particles=4, resample_threshold=1.0), room_scan)
    state.particles[0].weight = 1.0 - 3e-12
    for particle in state.particles[1:]:
        particle.weight = 1e-12
    slam_pf.pf_step(state, room_scan, Pose2D())
    assert state.last_stats.resampled
    assert state.resamples == 1
    assert state.weights == pytest.approx([0.25] * 4)
    assert len({id(p.map) for p in state.particles}) == 4


def test_mean_pose_wraps_heading(room_scan):
    state = slam_pf.init_pf(slam_pf.PfConfig(num_particles=2), room_scan)
    state.particles[0].pose = Pose2D(1.0, 0.0, math.pi - 0.1)
    state.particles[1].pose = Pose2D(3.0, 0.0, -math.pi + 0.1)
    mean = slam_pf.mean_pose(state)
    assert mean.x == pytest.approx(2.0)
    assert abs(abs(mean.theta) - math.pi) < 1e-9


def test_room_run_tracks_ground_truth():
    sim, result = _room_run()
    assert len(result.trajectory) == len(sim.ground_truth)
    assert [t for t, _ in result.trajectory] == [t for t, _ in sim.ground_truth]
    report = evaluate(result.trajectory, sim.relations)
    assert report.eps_trans < 0.08
    assert report.eps_rot < 0.05
    assert all(check["ok"] for check in result.invariants())


def test_same_seed_same_trajectory():
    _, first = _room_run(seed=5)
    _, second = _room_run(seed=5)
    assert [p.as_array().tolist() for p in first.poses] == [p.as_array().tolist() for p in second.poses]


def test_single_engine_matches_two_engines():
    _, one = _room_run(seed=2, engines=1)
    _, two = _room_run(seed=2, engines=2)
    assert [p.as_array().tolist() for p in one.poses] == [p.as_array().tolist() for p in two.poses]


@pytest.mark.slow
def test_loop_world_translation_error():
    world = loop_world()
    sim = simulate(world)
    config = RunConfig(seed=world.seed, laser=world.lidar.preset())
    result = run_pf(sim.entries, config)
    report = evaluate(result.trajectory, sim.relations)
    assert report.eps_trans < 0.10


def test_all_zero_scores_reset_weights_to_uniform(room_scan):
    state = slam_pf.init_pf(slam_pf.PfConfig(num_particles=4, window=(0.1, 0.1, 0.05)), room_scan)
    state.particles[0].weight = 0.7
    for particle in state.particles[1:]:
        particle.weight = 0.1
    angles = np.linspace(-math.pi, math.pi, 36, endpoint=False)
    far = Scan(np.full(36, 20.0), angles)
    slam_pf.pf_step(state, far, Pose2D())
    assert state.last_stats.all_zero
    assert state.last_stats.best_score == 0
    assert state.weights == pytest.approx([0.25] * 4)
    assert not state.last_stats.resampled
