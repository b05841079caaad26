import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aro.anchors import ring_anchors_2d
from aro.field import OccupancyGrid, marching_squares
from aro.nn2d import (DEFAULT_BOX, AttentionNetParams, NetConfig, Shape2D, TrainConfig,
                      anchor_activation_map, bce, disk, disk_visible_region, features_2d, forward,
                      hit_distance_2d, hit_distances, image_iou, letter_g, load_model,
                      loss_and_gradients, pixel_centers, rasterize, read_shape,
                      reconstruct_image, sample_training_set, save_model, train, write_shape)
from aro.nn2d.train import mean_bce

from oracles import central_difference_gradient, max_relative_error, segment_hit_2d

SQUARE = Shape2D(np.array([[-0.25, -0.25], [0.25, -0.25], [0.25, 0.25], [-0.25, 0.25]]))
TOY = NetConfig(d_in=4, d_model=8, n_heads=2, d_ff=16, n_layers=3)
ANCHORS7 = ring_anchors_2d(7).positions


def random_features(rng, n, m):
    return rng.normal(size=(n, m, 4))


# ---------------------------------------------------------------------------
# shapes


def signed_area(v):
    return 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])


def test_shape_is_stored_counterclockwise():
    s = Shape2D(SQUARE.vertices[::-1])
    assert signed_area(s.vertices) > 0
    assert signed_area(letter_g().vertices) > 0


def test_shape_drops_repeated_closing_vertex():
    v = np.vstack([SQUARE.vertices, SQUARE.vertices[:1]])
    assert len(Shape2D(v).vertices) == 4


@pytest.mark.parametrize("verts, msg", [
    ([[0, 0], [0.1, 0]], "three"),
    ([[0, 0], [0.1, 0], [0.2, 0]], "zero area"),
    ([[0, 0], [0.6, 0], [0, 0.2]], r"\[-0.5, 0.5\]"),
    ([[-0.2, -0.2], [0.2, 0.3], [0.2, -0.2], [-0.2, 0.2]], "not simple"),
])
def test_shape_validation(verts, msg):
    with pytest.raises(ValueError, match=msg):
        Shape2D(np.array(verts, float))


def test_contains_and_perimeter():
    assert SQUARE.contains(np.array([[0, 0], [0.3, 0], [-0.2, 0.2]])).tolist() == [True, False, True]
    assert SQUARE.perimeter() == pytest.approx(2.0)
    assert disk(0.3, 512).perimeter() == pytest.approx(2 * np.pi * 0.3, rel=1e-4)


def test_letter_is_simple_and_nonconvex():
    g = letter_g()
    assert g.contains(np.array([[-0.3, 0.0], [0.0, 0.0], [0.1, 0.0]])).tolist() == [True, False, True]


def test_shape_file_roundtrip(tmp_path):
    write_shape(tmp_path / "g.poly", letter_g())
    (tmp_path / "c.poly").write_text("# comment\n" + (tmp_path / "g.poly").read_text())
    assert np.array_equal(read_shape(tmp_path / "c.poly").vertices, letter_g().vertices)


# ---------------------------------------------------------------------------
# hit distances


def test_axis_aligned_hit():
    assert hit_distance_2d(SQUARE, (0, -0.45), (0, 0)) == pytest.approx(0.2, abs=1e-15)


def test_miss_gives_box_exit():
    # ray straight up along x = 0.4 never meets the square
    assert hit_distance_2d(SQUARE, (0.4, -0.45), (0.4, 0.0)) == pytest.approx(0.95)


def test_interior_anchor_hits_from_inside():
    assert hit_distance_2d(SQUARE, (0, 0), (0.1, 0)) == pytest.approx(0.25)


def test_hit_distance_matches_edge_loop_oracle(rng):
    shapes = [SQUARE, letter_g(), disk(0.3, 64)]
    for i in range(1000):
        s = shapes[i % 3]
        a = rng.uniform(-0.5, 0.5, 2)
        x = rng.uniform(-0.5, 0.5, 2)
        want = segment_hit_2d(a, x, s.vertices, DEFAULT_BOX.min, DEFAULT_BOX.max)
        assert abs(hit_distance_2d(s, a, x) - want) <= 1e-9


def test_hit_distance_errors():
    with pytest.raises(ValueError, match="coincides"):
        hit_distance_2d(SQUARE, (0.1, 0.1), (0.1, 0.1))
    with pytest.raises(ValueError, match="inside the box"):
        hit_distance_2d(SQUARE, (0.9, 0.0), (0.0, 0.0))


def test_features_layout(rng):
    A = np.array([[0, -0.45], [0.4, -0.45], [0, 0]])
    X = np.array([[0.0, 0.0001], [0.4, 0.0]])
    F = features_2d(SQUARE, A, X)
    assert F.shape == (2, 3, 4)
    assert np.allclose(F[..., :2], X[:, None] - A[None])
    assert np.allclose(F[..., 2], np.linalg.norm(X[:, None] - A[None], axis=-1))
    assert np.allclose(F[..., 3], hit_distances(SQUARE, A, X))
    assert F[0, 0, 3] == pytest.approx(0.2) and F[1, 1, 3] == pytest.approx(0.95)
    assert np.all(F[..., 3] > 0)


def test_training_samples(rng):
    X, y = sample_training_set(letter_g(), 1001, rng)
    assert X.shape == (1001, 2) and np.all(np.abs(X) <= 0.5)
    assert np.array_equal(y, letter_g().contains(X).astype(float))


def test_disk_visible_region():
    X = np.array([[0.0, -0.4], [0.0, 0.4], [0.0, 0.0], [0.45, 0.0]])
    assert disk_visible_region((0, 0), 0.3, (0.0, -0.45), X).tolist() == [True, False, False, True]


# ---------------------------------------------------------------------------
# forward


def test_parameter_count_is_function_of_config():
    D, F = 64, 128
    per_layer = 4 * (D * D + D) + 2 * 2 * D + (D * F + F) + (F * D + D)
    assert NetConfig().n_params() == (4 * D + D) + 3 * per_layer + D + 1
    assert len(AttentionNetParams.init(NetConfig(), 0)) == NetConfig().n_params()


def test_config_validation():
    with pytest.raises(ValueError):
        NetConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        NetConfig(n_layers=0)
    with pytest.raises(ValueError):
        AttentionNetParams(TOY, np.zeros(3))
    flat = np.zeros(TOY.n_params())
    flat[0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        AttentionNetParams(TOY, flat)


@given(st.integers(0, 2 ** 32 - 1))
def test_output_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    p = forward(AttentionNetParams.init(TOY, seed), 3 * random_features(rng, 16, 3))
    assert np.all((p > 0) & (p < 1))


@given(st.integers(0, 2 ** 32 - 1), st.permutations(range(7)))
def test_permutation_invariance(seed, perm):
    rng = np.random.default_rng(seed)
    params = AttentionNetParams.init(NetConfig(), seed)
    F = random_features(rng, 8, 7)
    mask = np.array([0, 2, 3, 6])
    inv = np.argsort(perm)
    a = forward(params, F, mask)
    b = forward(params, F[:, perm], inv[mask])
    assert np.allclose(a, b, rtol=0, atol=1e-12)
    assert np.allclose(forward(params, F), forward(params, F[:, perm]), rtol=0, atol=1e-12)


def test_single_anchor_mask_ignores_other_features(rng):
    params = AttentionNetParams.init(NetConfig(), 1)
    F = random_features(rng, 20, 7)
    G = F.copy()
    G[:, [0, 1, 3, 4, 5, 6]] += rng.normal(size=(20, 6, 4))
    assert np.array_equal(forward(params, F, [2]), forward(params, G, [2]))
    H = F.copy()
    H[:, 2] += 0.5
    assert not np.allclose(forward(params, F, [2]), forward(params, H, [2]))


def test_full_mask_equals_no_mask(rng):
    params = AttentionNetParams.init(NetConfig(), 2)
    F = random_features(rng, 10, 7)
    assert np.array_equal(forward(params, F, np.ones(7, bool)), forward(params, F))
    assert np.array_equal(forward(params, F, list(range(7))), forward(params, F))


def test_mask_errors(rng):
    params = AttentionNetParams.init(TOY, 0)
    F = random_features(rng, 2, 3)
    with pytest.raises(ValueError, match="empty"):
        forward(params, F, [])
    with pytest.raises(ValueError, match="empty"):
        forward(params, F, np.zeros(3, bool))
    with pytest.raises(ValueError):
        forward(params, F, [3])
    with pytest.raises(ValueError):
        forward(params, F[..., :3])


def test_single_query_shape(rng):
    params = AttentionNetParams.init(TOY, 0)
    F = random_features(rng, 1, 3)
    assert forward(params, F[0]).shape == (1,)


# ---------------------------------------------------------------------------
# loss and gradients


def test_bce_values():
    assert bce(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(np.log(2))
    lo, hi = 1e-7, 1 - 1e-7
    assert np.all(bce(np.array([lo, hi]), np.array([0.0, 1.0])) < 1e-6)
    assert np.isfinite(bce(np.array([0.0, 1.0]), np.array([1.0, 0.0]))).all()


def test_zero_logit_gives_ln2(rng):
    params = AttentionNetParams.init(TOY, 0)
    params.tensors["head.w"][...] = 0.0
    loss, _ = loss_and_gradients(params, random_features(rng, 4, 3), np.ones(4))
    assert loss == pytest.approx(np.log(2), abs=1e-15)


def test_empty_batch_rejected():
    with pytest.raises(ValueError, match="empty"):
        loss_and_gradients(AttentionNetParams.init(TOY, 0), np.zeros((0, 3, 4)), np.zeros(0))


@pytest.mark.parametrize("mask", [None, [1]])
def test_gradients_match_central_differences(mask):
    rng = np.random.default_rng(7)
    params = AttentionNetParams.init(TOY, 3)
    F = random_features(rng, 5, 2)
    y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    _, g = loss_and_gradients(params, F, y, mask)
    num = central_difference_gradient(
        lambda x: loss_and_gradients(AttentionNetParams(TOY, x), F, y, mask)[0], params.flat)
    assert max_relative_error(g, num) < 1e-4


# ---------------------------------------------------------------------------
# training


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert cfg.learning_rate(0) == 3e-4
    assert cfg.learning_rate(99) == 3e-4
    assert cfg.learning_rate(100) == 1.5e-4
    assert cfg.learning_rate(250) == pytest.approx(7.5e-5, rel=1e-15)


@pytest.mark.parametrize("kw", [dict(lr=0), dict(epochs=0), dict(decay=1.5), dict(beta1=1.0),
                                dict(batch_size=0), dict(subset_prob=2.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


SMALL = TrainConfig(epochs=2, n_samples=300, batch_size=64, seed=5, net=TOY)


def test_training_is_deterministic():
    a = train(disk(), ANCHORS7, SMALL)
    b = train(disk(), ANCHORS7, SMALL)
    assert a.params.flat.tobytes() == b.params.flat.tobytes()
    assert a.losses == b.losses and len(a.losses) == 2
    c = train(disk(), ANCHORS7, TrainConfig(epochs=2, n_samples=300, batch_size=64, seed=6, net=TOY))
    assert c.params.flat.tobytes() != a.params.flat.tobytes()


def test_training_with_subsets_and_several_shapes():
    cfg = TrainConfig(epochs=1, n_samples=300, batch_size=64, seed=5, net=TOY, subset_prob=0.5)
    res = train([disk(), letter_g()], ANCHORS7, cfg)
    assert np.all(np.isfinite(res.params.flat))


def test_divergence_reports_epoch():
    cfg = TrainConfig(epochs=3, n_samples=100, batch_size=50, seed=0, net=TOY, lr=1e300)
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError, match="epoch"):
        train(disk(), ANCHORS7, cfg)


def test_training_callback_and_empty_input():
    seen = []
    train(disk(), ANCHORS7, SMALL, callback=lambda e, l: seen.append(e))
    assert seen == [0, 1]
    with pytest.raises(ValueError):
        train([], ANCHORS7, SMALL)


def test_disk_training_reaches_low_bce():
    cfg = TrainConfig(epochs=3, n_samples=20_000, seed=0)
    res = train(disk(), ANCHORS7, cfg)
    assert res.losses[-1] < 0.1
    rng = np.random.default_rng(99)
    X, y = sample_training_set(disk(), 2000, rng)
    assert mean_bce(res.params, features_2d(disk(), ANCHORS7, X), y) < 0.1


# ---------------------------------------------------------------------------
# images


def test_pixel_centers_orientation():
    P = pixel_centers(4).reshape(4, 4, 2)
    assert np.allclose(P[0, 0], [-0.375, -0.375])
    assert np.allclose(P[3, 0], [0.375, -0.375])
    assert np.allclose(P[0, 3], [-0.375, 0.375])


def test_rasterize_and_iou():
    img = rasterize(disk(), 128)
    frac = img.mean()
    assert frac == pytest.approx(np.pi * 0.09, rel=0.02)
    assert image_iou(img, img) == 1.0
    assert image_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_untrained_image_and_activation_are_valid():
    params = AttentionNetParams.init(TOY, 0)
    img = reconstruct_image(params, disk(), ANCHORS7, 32)
    assert img.shape == (32, 32) and np.all((img > 0) & (img < 1))
    act = anchor_activation_map(params, disk(), ANCHORS7, 3, 32)
    assert np.all((act > 0) & (act < 1))


def test_activation_errors():
    params = AttentionNetParams.init(TOY, 0)
    for bad in (-1, 7, 1.5):
        with pytest.raises(ValueError, match="out of range"):
            anchor_activation_map(params, disk(), ANCHORS7, bad, 8)


def test_trained_image_contour_closes():
    res = train(disk(), ANCHORS7, TrainConfig(epochs=3, n_samples=4000, batch_size=128, seed=1))
    img = reconstruct_image(res.params, disk(), ANCHORS7, 64)
    h = 1.0 / 64
    loops = marching_squares(OccupancyGrid(DEFAULT_BOX.min + h / 2, h, img))
    assert loops and all(p.closed for p in loops)


def test_model_roundtrip(tmp_path):
    params = AttentionNetParams.init(TOY, 4)
    save_model(tmp_path / "m.bin", params, ANCHORS7)
    p2, A, box = load_model(tmp_path / "m.bin")
    assert p2.config == TOY and p2.flat.tobytes() == params.flat.tobytes()
    assert np.array_equal(A, ANCHORS7)
    assert np.array_equal(box.min, DEFAULT_BOX.min) and np.array_equal(box.max, DEFAULT_BOX.max)


def test_model_bad_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage\n")
    with pytest.raises(ValueError, match="not an"):
        load_model(tmp_path / "x.bin")
    params = AttentionNetParams.init(TOY, 4)
    save_model(tmp_path / "m.bin", params, ANCHORS7)
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="declares"):
        load_model(tmp_path / "t.bin")
