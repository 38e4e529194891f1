import math

import numpy as np
import pytest

from corrslam.errors import ConfigError
from corrslam.presets import PRESETS, LaserPreset, get_preset


def test_odd_count_spans_the_field_of_view():
    angles = get_preset("sick_lms").angles(361)
    assert angles[0] == pytest.approx(-math.pi / 2)
    assert angles[-1] == pytest.approx(math.pi / 2)
    assert np.diff(angles) == pytest.approx(np.full(360, math.radians(0.5)))


def test_even_count_leaves_last_interval_open():
    angles = get_preset("sick_lms").angles(360)
    assert angles[0] == pytest.approx(-math.pi / 2)
    assert angles[-1] == pytest.approx(math.radians(89.5))


def test_fixed_resolution_ignores_count_parity():
    hokuyo = get_preset("hokuyo_urg_04lx")
    assert np.diff(hokuyo.angles(682)) == pytest.approx(np.full(681, math.radians(0.36)))
    assert get_preset("revo_lds").angles(360)[-1] == pytest.approx(math.radians(359.0))


def test_degenerate_counts():
    preset = get_preset("sick_lms")
    assert preset.angles(0).size == 0
    assert preset.angles(1).tolist() == pytest.approx([-math.pi / 2])


def test_from_dict_starts_from_named_preset():
    preset = LaserPreset.from_dict({"name": "hokuyo_urg_04lx", "r_max": 4.0})
    assert preset.fov_deg == 240.0
    assert preset.r_max == 4.0
    assert LaserPreset.from_dict(PRESETS["revo_lds"].to_dict()) == PRESETS["revo_lds"]
    with pytest.raises(ConfigError):
        LaserPreset.from_dict({"beams": 3})


def test_validation():
    with pytest.raises(ValueError):
        LaserPreset(fov_deg=0.0)
    with pytest.raises(ValueError):
        LaserPreset(resolution_deg=-1.0)
    with pytest.raises(ValueError):
        LaserPreset(r_min=2.0, r_max=1.0)
    with pytest.raises(ConfigError, match="sick_lms"):
        get_preset("velodyne")
