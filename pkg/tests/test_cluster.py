import math

import numpy as np
import pytest

from precipeval import ClusterConfig, label_components, main_cluster
from precipeval.cluster import all_cluster_stats, principal_orientation
from precipeval.errors import InvalidConfig

from conftest import make_frame


def flood_fill_components(values, threshold, connectivity):
    """Independent oracle: BFS flood fill in row-major discovery order."""
    rows, cols = values.shape
    if connectivity == 8:
        offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        offsets = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    seen = np.zeros(values.shape, dtype=bool)
    comps = []
    for r in range(rows):
        for c in range(cols):
            if values[r, c] >= threshold and not seen[r, c]:
                comp = set()
                queue = [(r, c)]
                seen[r, c] = True
                while queue:
                    y, x = queue.pop()
                    comp.add((y, x))
                    for dy, dx in offsets:
                        ny, nx = y + dy, x + dx
                        if (
                            0 <= ny < rows
                            and 0 <= nx < cols
                            and not seen[ny, nx]
                            and values[ny, nx] >= threshold
                        ):
                            seen[ny, nx] = True
                            queue.append((ny, nx))
                comps.append(comp)
    return comps


def test_config_validation():
    with pytest.raises(InvalidConfig):
        ClusterConfig(rain_threshold=0.0)
    with pytest.raises(InvalidConfig):
        ClusterConfig(connectivity=6)
    with pytest.raises(InvalidConfig):
        ClusterConfig(main_by="area")


def test_all_dry_frame():
    f = make_frame(np.zeros((5, 5)))
    assert label_components(f) == []
    assert main_cluster(f) is None


def test_two_separated_blocks():
    v = np.zeros((7, 7))
    v[0:3, 0:3] = 5.0
    v[4:7, 4:7] = 5.0
    comps = label_components(make_frame(v), ClusterConfig(connectivity=8))
    assert len(comps) == 2
    assert comps == flood_fill_components(v, 1.0, 8)


def test_diagonal_pair_connectivity():
    v = np.zeros((4, 4))
    v[1, 1] = 2.0
    v[2, 2] = 2.0
    assert len(label_components(make_frame(v), ClusterConfig(connectivity=8))) == 1
    assert len(label_components(make_frame(v), ClusterConfig(connectivity=4))) == 2


@pytest.mark.parametrize("connectivity", [4, 8])
def test_labeling_matches_flood_fill(rng, connectivity):
    config = ClusterConfig(rain_threshold=0.5, connectivity=connectivity)
    for _ in range(40):
        v = rng.random((20, 20)) * 2
        v[v < 1.0] = 0.0
        frame = make_frame(v)
        assert label_components(frame, config) == flood_fill_components(v, 0.5, connectivity)


def test_single_pixel_stats():
    v = np.zeros((5, 5))
    v[2, 3] = 7.0
    cs = main_cluster(make_frame(v, pixel_size_km=4.0))
    assert cs.centroid_km == (12.0, 8.0)
    assert cs.orientation_rad == 0.0
    assert cs.orientation_degenerate
    assert cs.mass == 7.0 and cs.pixel_count == 1


def test_line_orientations():
    v = np.zeros((7, 7))
    v[3, 1:6] = 2.0
    assert main_cluster(make_frame(v)).orientation_rad == 0.0
    v = np.zeros((7, 7))
    v[1:6, 3] = 2.0
    assert main_cluster(make_frame(v)).orientation_rad == pytest.approx(math.pi / 2)


def test_main_cluster_by_mass():
    v = np.zeros((5, 9))
    v[1, 1:3] = 5.0  # mass 10, 2 pixels
    v[3, 5:9] = 1.75  # mass 7, 4 pixels
    cs = main_cluster(make_frame(v))
    assert cs.mass == pytest.approx(10.0)
    assert cs.pixel_count == 2
    by_count = main_cluster(make_frame(v), ClusterConfig(main_by="pixel_count"))
    assert by_count.pixel_count == 4


def test_mass_tie_broken_by_pixel_count_then_position():
    v = np.zeros((5, 9))
    v[1, 0:2] = 2.0  # mass 4, 2 px, first
    v[3, 4:8] = 1.0  # mass 4, 4 px
    cs = main_cluster(make_frame(v))
    assert cs.pixel_count == 4
    v2 = np.zeros((5, 9))
    v2[1, 0:2] = 2.0
    v2[3, 4:6] = 2.0  # identical mass and count; earlier first pixel wins
    cs2 = main_cluster(make_frame(v2))
    assert cs2.centroid_km[1] == pytest.approx(1 * 4.0)


def _gaussian_blob(rows, cols, cy, cx, syy, sxx, sxy, amp=20.0):
    y, x = np.mgrid[0:rows, 0:cols].astype(float)
    det = sxx * syy - sxy**2
    q = (syy * (x - cx) ** 2 - 2 * sxy * (x - cx) * (y - cy) + sxx * (y - cy) ** 2) / det
    return amp * np.exp(-0.5 * q)


def test_orientation_scale_invariance(rng):
    # membership must not change, so the threshold scales with the values
    v = _gaussian_blob(30, 30, 14.0, 16.0, 22.0, 6.0, 4.0)
    base = main_cluster(make_frame(v), ClusterConfig(rain_threshold=1.0))
    exact = main_cluster(make_frame(v * 4.0), ClusterConfig(rain_threshold=4.0))
    assert exact.orientation_rad == base.orientation_rad  # power of two: bit-exact
    approx = main_cluster(make_frame(v * 3.0), ClusterConfig(rain_threshold=3.0))
    assert approx.orientation_rad == pytest.approx(base.orientation_rad, abs=1e-12)
    assert approx.centroid_km == pytest.approx(base.centroid_km, abs=1e-9)


def test_rot90_maps_orientation_and_centroid(rng):
    for trial in range(5):
        cy, cx = rng.uniform(12, 18, 2)
        sxx, syy = rng.uniform(4, 10), rng.uniform(14, 25)
        sxy = rng.uniform(-3, 3)
        v = _gaussian_blob(31, 31, cy, cx, syy, sxx, sxy)
        a = main_cluster(make_frame(v, pixel_size_km=4.0))
        b = main_cluster(make_frame(np.rot90(v).copy(), pixel_size_km=4.0))
        expected = (a.orientation_rad + math.pi / 2) % math.pi
        diff = abs(b.orientation_rad - expected)
        assert min(diff, math.pi - diff) < 1e-6
        # rot90: (r', c') = (cols-1-c, r), so x' = y and y' = extent - x
        extent = (31 - 1) * 4.0
        assert b.centroid_km[0] == pytest.approx(a.centroid_km[1], abs=1e-6)
        assert b.centroid_km[1] == pytest.approx(extent - a.centroid_km[0], abs=1e-6)


def test_symmetric_blob_centroid():
    v = _gaussian_blob(21, 21, 10.0, 10.0, 9.0, 9.0, 0.0)
    cs = main_cluster(make_frame(v, pixel_size_km=4.0))
    assert cs.centroid_km[0] == pytest.approx(40.0, abs=1e-9)
    assert cs.centroid_km[1] == pytest.approx(40.0, abs=1e-9)


def test_isotropic_covariance_pinned_to_zero():
    theta, degen = principal_orientation(5.0, 5.0, 0.0)
    assert theta == 0.0 and degen
    theta, degen = principal_orientation(0.0, 0.0, 0.0)
    assert theta == 0.0 and degen
    theta, degen = principal_orientation(9.0, 4.0, 0.0)
    assert theta == 0.0 and not degen


def test_all_cluster_stats_order(rng):
    v = rng.random((15, 15)) * 3
    v[v < 1.5] = 0.0
    frame = make_frame(v)
    comps = label_components(frame, ClusterConfig(rain_threshold=1.0))
    stats = all_cluster_stats(frame, ClusterConfig(rain_threshold=1.0))
    assert len(comps) == len(stats)
    for comp, cs in zip(comps, stats):
        assert cs.pixel_count == len(comp)
        assert cs.mass == pytest.approx(sum(v[r, c] for r, c in comp), rel=1e-12)
