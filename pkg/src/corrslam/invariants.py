import math
from typing import Dict, List, Optional, Sequence, Tuple

from .geometry import Pose2D

TimedPose = Tuple[float, Pose2D]


def check_theta_normalized(trajectory: Sequence[TimedPose]) -> int:
    return sum(1 for _, p in trajectory if not (-math.pi < p.theta <= math.pi))


def check_poses_finite(trajectory: Sequence[TimedPose]) -> int:
    return sum(1 for t, p in trajectory if not (math.isfinite(t) and p.is_finite()))


def check_timestamps_nondecreasing(trajectory: Sequence[TimedPose]) -> int:
    times = [t for t, _ in trajectory]
    return sum(1 for a, b in zip(times, times[1:]) if b < a)


def check_weights_normalized(weights: Sequence[float]) -> float:
    """Absolute deviation of the weight sum from 1."""
    return abs(math.fsum(weights) - 1.0)


def check_chi2_non_increasing(histories: Sequence[Sequence[float]], tolerance: float = 1e-9) -> int:
    violations = 0
    for history in histories:
        for a, b in zip(history, history[1:]):
            if b > a * (1.0 + tolerance) + tolerance:
                violations += 1
    return violations


def run_invariants(
    trajectory: Sequence[TimedPose],
    expected_length: Optional[int] = None,
    weights: Optional[Sequence[float]] = None,
    chi2_histories: Optional[Sequence[Sequence[float]]] = None,
) -> List[Dict[str, object]]:
    results = []

    unnormalized = check_theta_normalized(trajectory)
    results.append({"name": "theta_normalized", "ok": unnormalized == 0, "detail": unnormalized})

    non_finite = check_poses_finite(trajectory)
    results.append({"name": "poses_finite", "ok": non_finite == 0, "detail": non_finite})

    backwards = check_timestamps_nondecreasing(trajectory)
    results.append({"name": "timestamps_nondecreasing", "ok": backwards == 0, "detail": backwards})

    if expected_length is not None:
        results.append(
            {
                "name": "trajectory_length",
                "ok": len(trajectory) == expected_length,
                "detail": f"{len(trajectory)} poses, expected {expected_length}",
            }
        )

    if weights is not None:
        deviation = check_weights_normalized(weights)
        results.append({"name": "particle_weights_sum", "ok": deviation <= 1e-9, "detail": f"{deviation:.3g}"})

    if chi2_histories is not None:
        increases = check_chi2_non_increasing(chi2_histories)
        results.append({"name": "chi2_non_increasing", "ok": increases == 0, "detail": increases})

    return results


def failed(results: Sequence[Dict[str, object]]) -> List[Dict[str, object]]:
    return [r for r in results if not r["ok"]]
