"""Operation counting and memory-traffic model."""
import numpy as np
import pytest

from hhgscale.coefficients import TensorCoefficient, catalog, sample_nodal
from hhgscale.costmodel import (OpCount, analytic_count, measured_count,
                                operations_table, replay_node, traffic,
                                traffic_table)
from hhgscale.mesh import RefinedGrid, unit_cube_6, unit_cube_12, unit_square
from hhgscale.operators import Operator


@pytest.fixture(scope="module")
def grid2():
    return RefinedGrid(unit_square(), 3)


@pytest.fixture(scope="module")
def grid3():
    return RefinedGrid(unit_cube_6(), 3)


def _make(grid, variant):
    if variant == "const":
        return Operator(grid, "const", 2.5)
    field = catalog("sin2d", m=2) if grid.dim == 2 else catalog("cos3d", m=2)
    op = Operator(grid, variant if variant != "stored" else "scaling",
                  sample_nodal(field, grid))
    return op.store_stencils() if variant == "stored" else op


def test_analytic_totals_match_budget_table():
    assert analytic_count("scaling", 3).total == 69
    assert analytic_count("nodal", 3).total == 211
    assert analytic_count("const", 3).total == 29
    assert analytic_count("stored", 3).total == 29
    assert analytic_count("scaling", 2).total == 29
    assert analytic_count("nodal", 2).total == 44
    assert analytic_count("const", 2).total == 13
    assert analytic_count("stored", 2).total == 13


def test_rebuild_overhead_ratio_in_band():
    ratio = analytic_count("nodal", 3).total / analytic_count("scaling", 3).total
    assert 3.0 <= ratio <= 3.1


def test_analytic_count_unknown_variant():
    with pytest.raises(KeyError, match="hybrid"):
        analytic_count("hybrid", 3)


@pytest.mark.parametrize("variant", ["scaling", "nodal", "const", "stored"])
@pytest.mark.parametrize("dim", [2, 3])
def test_measured_equals_analytic(grid2, grid3, variant, dim):
    op = _make(grid2 if dim == 2 else grid3, variant)
    assert measured_count(op) == analytic_count(variant, dim)


@pytest.mark.parametrize("variant", ["scaling", "nodal", "const", "stored"])
def test_replay_is_bitwise_the_kernel(grid3, variant):
    op = _make(grid3, variant)
    rng = np.random.default_rng(7)
    u = rng.normal(size=grid3.n_nodes)
    out = op.apply(u)
    vol0 = grid3.vol_start[2]
    for c in (0, 3, op._nvol - 1):
        val, _ = replay_node(op, u, 2, c)
        assert val == out[vol0 + c]


def test_replay_2d_bitwise(grid2):
    op = _make(grid2, "scaling")
    rng = np.random.default_rng(8)
    u = rng.normal(size=grid2.n_nodes)
    out = op.apply(u)
    vol0 = grid2.vol_start[1]
    for c in range(op._nvol):
        val, _ = replay_node(op, u, 1, c)
        assert val == out[vol0 + c]


def test_measured_needs_volume_nodes():
    grid = RefinedGrid(unit_square(), 1)
    op = Operator(grid, "const")
    with pytest.raises(ValueError, match="volume"):
        measured_count(op)


def test_tensor_has_no_scalar_count():
    grid = RefinedGrid(unit_cube_12(), 3)
    K = TensorCoefficient(grid, catalog("tensor3d_poly"))
    op = Operator(grid, "scaling", K)
    u = np.zeros(grid.n_nodes)
    with pytest.raises(ValueError, match="tensor"):
        replay_node(op, u, 0, 0)


def test_traffic_formulas_exact():
    from hhgscale.costmodel import Traffic
    assert traffic("stored", 100) == Traffic(12000, 12000)
    assert traffic("nodal", 100) == Traffic(1568, 12768)
    assert traffic("scaling", 100) == Traffic(912, 12112)


def test_traffic_crossover_favors_scaling():
    # past the fixed table cost the on-the-fly variants move far less data
    n = 10 ** 6
    assert traffic("scaling", n).optimistic < traffic("stored", n).optimistic / 10
    assert traffic("scaling", n).pessimistic <= traffic("stored", n).pessimistic + 112


def test_traffic_unknown_variant():
    with pytest.raises(KeyError):
        traffic("const", 10)


def test_operations_table_covers_all_variants():
    rows = operations_table()
    assert len(rows) == 8
    assert all(row["total"] == row["adds"] + row["mults"] for row in rows)
    assert rows[0]["dim"] == 3


def test_traffic_table_rows():
    rows = traffic_table(100)
    by = {r["variant"]: r for r in rows}
    assert by["scaling"]["bytes_optimistic"] == 912
    assert by["scaling"]["bytes_pessimistic"] == 12112
    assert by["stored"]["bytes_optimistic"] == 12000


def test_opcount_total():
    assert OpCount(3, 4).total == 7
