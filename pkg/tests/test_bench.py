import math

import pandas as pd
import pytest

from corrslam import bench


def test_standard_query_shape():
    query = bench.standard_query(num_points=90, window=(0.1, 0.1, 0.05))
    assert query.map.cells.shape == (320, 320)
    assert len(query.scan) == 90
    assert query.window.w == 8


def test_benchmark_rows_agree():
    query = bench.standard_query(num_points=90, window=(0.1, 0.1, 0.05))
    table = bench.benchmark(query, repeats=1, methods=("optimized", "reference"))
    assert list(table.columns) == bench.BENCH_COLUMNS
    assert table["method"].tolist() == ["optimized", "reference"]
    assert bench.results_agree(table)
    assert all(math.isnan(v) for v in table["speedup"])
    assert (table["median_s"] > 0).all()


def test_results_agree_detects_disagreement():
    table = pd.DataFrame(
        [
            {"method": "optimized", "score": 900, "nx": 1, "ny": 0, "ntheta": 0},
            {"method": "oracle", "score": 900, "nx": 0, "ny": 0, "ntheta": 0},
        ]
    )
    assert not bench.results_agree(table)
    assert bench.results_agree(table.iloc[:1])


def test_time_method_needs_a_run():
    with pytest.raises(ValueError):
        bench.time_method("optimized", bench.standard_query(num_points=30), repeats=0)


@pytest.mark.slow
def test_optimized_outpaces_oracle_on_standard_query():
    query = bench.standard_query()
    assert len(query.scan) == 360
    table = bench.benchmark(query, repeats=20, methods=("oracle", "optimized"))
    assert bench.results_agree(table)
    optimized = table.set_index("method").loc["optimized"]
    assert optimized["speedup"] >= 5.0
