import numpy as np
import pytest

from ddptycho.errors import DimensionError, PlanError
from ddptycho.forward import ScanGeometry
from ddptycho.grid import Region
from ddptycho.plan import merge, plan_stripes, restrict_overlap, split

from conftest import random_complex


@pytest.fixture(scope="module")
def geom():
    return ScanGeometry.raster((256, 256), 64, 8)


def test_two_stripes(geom):
    plan = plan_stripes(geom, 2)
    assert plan.D == 2
    assert [len(plan.frames_of(d)) for d in range(2)] == [325, 300]
    assert plan.subdomains[0] == Region(0, 256, 0, 160)
    assert plan.subdomains[1] == Region(0, 256, 104, 256)
    assert plan.overlap(0, 1) == Region(0, 256, 104, 160)
    assert plan.overlap(1, 0) == plan.overlap(0, 1)
    assert plan.neighbor_set == [(0, 1)]


def test_every_frame_inside_its_subdomain(geom):
    for D in (1, 2, 3, 5, 25):
        plan = plan_stripes(geom, D)
        for j, d in enumerate(plan.frame_assignment):
            assert plan.subdomains[d].contains(geom.window(j))
        assert sum(g.n_frames for g in plan.local_geometries) == geom.n_frames


def test_ten_stripes_only_adjacent_neighbors():
    g = ScanGeometry.raster((512, 512), 64, 16)
    plan = plan_stripes(g, 10)
    assert [len(plan.frames_of(d)) for d in range(10)] == [87] * 9 + [58]
    assert plan.neighbor_set == [(d, d + 1) for d in range(9)]
    assert all(plan.overlap(d, d + 1).shape == (512, 48) for d in range(9))
    assert plan.neighbors_of(4) == [3, 5]
    with pytest.raises(PlanError):
        plan.overlap(0, 2)


def test_infeasible_plans(geom):
    with pytest.raises(PlanError):
        plan_stripes(geom, 0)
    with pytest.raises(PlanError):
        plan_stripes(geom, 26)
    with pytest.raises(PlanError):
        plan_stripes(geom, 2, axis="diagonal")


def test_row_stripes():
    g = ScanGeometry.raster((96, 64), 16, 8)
    plan = plan_stripes(g, 3)
    assert plan.axis == "rows"
    assert plan.subdomains[0].col_start == 0 and plan.subdomains[0].col_end == 64


def test_overlap_count(geom):
    plan = plan_stripes(geom, 3)
    c = plan.overlap_count(1)
    assert c.max() == 1
    assert c.sum() == plan.overlap(0, 1).shape[0] * (
        plan.overlap(0, 1).shape[1] + plan.overlap(1, 2).shape[1])


def test_split_merge_round_trip(geom, rng):
    plan = plan_stripes(geom, 4)
    u = random_complex(rng, geom.image_shape)
    subs = split(u, plan)
    assert np.array_equal(merge(subs, plan), u)
    for d, e in plan.neighbor_set:
        a = restrict_overlap(subs[d], plan, d, e)
        b = restrict_overlap(subs[e], plan, e, d)
        assert np.array_equal(a, b)
        assert np.array_equal(a, u[plan.overlap(d, e).slices])


def test_merge_averages_overlap(geom):
    plan = plan_stripes(geom, 2)
    subs = [np.full(r.shape, float(d), dtype=complex) for d, r in enumerate(plan.subdomains)]
    out = merge(subs, plan)
    assert np.all(out[:, :104] == 0)
    assert np.all(out[:, 104:160] == 0.5)
    assert np.all(out[:, 160:] == 1)


def test_merge_shape_errors(geom):
    plan = plan_stripes(geom, 2)
    with pytest.raises(DimensionError):
        merge([np.zeros((3, 3))], plan)
    with pytest.raises(DimensionError):
        merge([np.zeros((3, 3)), np.zeros((3, 3))], plan)
    with pytest.raises(DimensionError):
        restrict_overlap(np.zeros((4, 4)), plan, 0, 1)


def test_plan_serializes(geom):
    d = plan_stripes(geom, 3).to_dict()
    assert d["D"] == 3
    assert len(d["overlaps"]) == 2
    assert len(d["frame_assignment"]) == geom.n_frames
