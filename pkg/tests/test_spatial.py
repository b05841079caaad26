import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from aro.spatial import DEFAULT_HALF_ANGLE, DEFAULT_K, ConeQuery, SpatialIndex, build_index, cone_top_k

from oracles import cone_rank_reference

THETA = np.deg2rad(24)
CLOUD = np.array([(1, 0, 0), (2, 0, 0), (0, 1, 0)], float)


def test_defaults():
    assert DEFAULT_K == 16
    assert np.degrees(DEFAULT_HALF_ANGLE) == pytest.approx(24.0)


def test_in_cone_points_suffice():
    hits = cone_top_k(build_index(CLOUD), ConeQuery([0, 0, 0], [1, 0, 0], THETA, 2))
    np.testing.assert_array_equal(hits.points, [(1, 0, 0), (2, 0, 0)])
    assert hits.in_cone.all()


def test_fallback_pads():
    hits = cone_top_k(build_index(CLOUD), ConeQuery([0, 0, 0], [1, 0, 0], THETA, 3))
    np.testing.assert_array_equal(hits.indices, [0, 1, 2])
    assert hits.in_cone.tolist() == [True, True, False]
    assert hits.angles[2] == pytest.approx(np.pi / 2)


def test_single_point_cloud():
    idx = build_index([[0.1, 0.2, 0.3]])
    for axis in ([1, 0, 0], [0, -1, 0], [0.3, 0.3, -1]):
        assert cone_top_k(idx, ConeQuery([0, 0, 0], axis, THETA, 5)).indices.tolist() == [0]


def test_point_at_apex_has_zero_deviation():
    hits = cone_top_k(build_index([[0, 0, 0], [1, 0, 0]]), ConeQuery([0, 0, 0], [0, 0, 1], THETA, 1))
    assert hits.indices.tolist() == [0] and hits.angles[0] == 0.0


@pytest.mark.parametrize("bad", [dict(half_angle=0.0), dict(half_angle=np.pi / 2), dict(k=0),
                                 dict(axis=[0, 0, 0])])
def test_query_validation(bad):
    kw = dict(apex=[0, 0, 0], axis=[1, 0, 0], half_angle=THETA, k=4) | bad
    with pytest.raises(ValueError):
        ConeQuery(**kw)


def test_every_point_reachable(rng):
    pts = rng.uniform(-0.5, 0.5, (2048, 3))
    idx = build_index(pts)
    seen = set()
    for i, p in enumerate(pts):
        off = rng.normal(size=3)
        apex = p + 1e-7 * off / np.linalg.norm(off)
        seen.update(cone_top_k(idx, ConeQuery(apex, p - apex, THETA, 1)).indices.tolist())
    assert seen == set(range(2048))


def test_rebuild_is_deterministic(rng):
    pts = rng.uniform(-0.5, 0.5, (500, 3))
    q = ConeQuery([0.6, 0, 0], [-1, 0.1, 0], THETA, 16)
    np.testing.assert_array_equal(cone_top_k(build_index(pts), q).indices,
                                  cone_top_k(build_index(pts), q).indices)


def _random_query(rng, k=16):
    apex = rng.uniform(-0.6, 0.6, 3)
    return ConeQuery(apex, rng.normal(size=3), THETA, k)


@pytest.mark.parametrize("quantize", [False, True], ids=["continuous", "ties"])
def test_kd_path_matches_reference(rng, quantize):
    for trial in range(4):
        pts = rng.uniform(-0.5, 0.5, (2048, 3))
        if quantize:
            pts = np.round(pts * 8) / 8  # many duplicate points and equal distances
        index = SpatialIndex(pts)
        for _ in range(60):
            q = _random_query(rng, k=int(rng.integers(1, 40)))
            if quantize:
                q = ConeQuery(np.round(q.apex * 8) / 8, np.round(q.axis * 2), THETA, q.k) \
                    if np.any(np.round(q.axis * 2)) else q
            want = cone_rank_reference(pts, q.apex, q.axis, q.half_angle, q.k)
            assert index.query(q).indices.tolist() == want


@pytest.mark.parametrize("quantize", [False, True], ids=["continuous", "ties"])
def test_apex_view_matches_reference(rng, quantize):
    pts = rng.uniform(-0.5, 0.5, (2048, 3))
    if quantize:
        pts = np.round(pts * 8) / 8
    index = SpatialIndex(pts)
    for apex in rng.uniform(-0.6, 0.6, (4, 3)):
        if quantize:
            apex = np.round(apex * 8) / 8
        raw = rng.normal(size=(50, 3))
        if quantize:
            raw = np.round(raw * 2) + [0.5, 0, 0]
        # same normalization as the reference, so both sides share one unit axis
        axes = raw / np.sqrt(raw[:, 0] * raw[:, 0] + raw[:, 1] * raw[:, 1] + raw[:, 2] * raw[:, 2])[:, None]
        for k in (1, 16, 300):
            got, n_in = index.view(apex, THETA).top_k(axes, k)
            for j, u in enumerate(axes):
                want = cone_rank_reference(pts, apex, raw[j], THETA, k)
                assert got[j].tolist() == want
                assert n_in[j] == sum(
                    1 for i in want if np.dot(pts[i] - apex, u) >= np.cos(THETA) * np.linalg.norm(pts[i] - apex))


def test_sparse_cloud_needs_padding(rng):
    pts = rng.uniform(-0.5, 0.5, (40, 3))
    index = SpatialIndex(pts)
    for _ in range(100):
        q = _random_query(rng, k=30)
        assert index.query(q).indices.tolist() == cone_rank_reference(pts, q.apex, q.axis, THETA, 30)


def test_monotone_in_k(rng):
    pts = rng.uniform(-0.5, 0.5, (1000, 3))
    index = SpatialIndex(pts)
    for _ in range(50):
        q = _random_query(rng, k=40)
        full = index.query(q).indices
        for k in (1, 5, 16, 39):
            np.testing.assert_array_equal(index.query(ConeQuery(q.apex, q.axis, THETA, k)).indices, full[:k])


def test_rotation_equivariance(rng):
    pts = rng.uniform(-0.5, 0.5, (1500, 3))
    R = Rotation.random(random_state=3).as_matrix()
    a, b = SpatialIndex(pts), SpatialIndex(pts @ R.T)
    for _ in range(100):
        q = _random_query(rng)
        h1 = a.query(q)
        h2 = b.query(ConeQuery(R @ q.apex, R @ q.axis, THETA, q.k))
        np.testing.assert_array_equal(h1.indices, h2.indices)
        np.testing.assert_allclose(h1.distances, h2.distances, atol=1e-9)
        np.testing.assert_allclose(h1.angles, h2.angles, atol=1e-7)
