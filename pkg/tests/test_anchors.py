import itertools

import numpy as np
import pytest

from aro.anchors import (AnchorSet, Strategy, fibonacci_sphere_directions, grid_points, grid_sample,
                         layered_fibonacci, make_anchors, read_anchors, ring_anchors_2d,
                         uniform_ball, write_anchors)

# 5^3 lattice points with norm <= 0.5, counted by brute enumeration
IN_SPHERE_COUNT = 33


def in_sphere_grid():
    lv = (-0.5, -0.25, 0.0, 0.25, 0.5)
    return {p for p in itertools.product(lv, lv, lv) if sum(c * c for c in p) <= 0.25}


def test_in_sphere_count_frozen():
    assert len(in_sphere_grid()) == IN_SPHERE_COUNT


class TestFibonacci:
    def test_single(self):
        d = fibonacci_sphere_directions(1)
        assert d.shape == (1, 3) and np.linalg.norm(d[0]) == pytest.approx(1.0, abs=1e-12)

    def test_unit_norms(self):
        np.testing.assert_allclose(np.linalg.norm(fibonacci_sphere_directions(48), axis=1), 1.0, atol=1e-12)

    def test_min_pairwise_angle(self):
        d = fibonacci_sphere_directions(48)
        worst = min(np.degrees(np.arccos(np.clip(d[i] @ d[j], -1, 1)))
                    for i in range(48) for j in range(i + 1, 48))
        assert worst > 15.0

    def test_formula(self):
        m, i = 48, np.arange(48)
        z = 1 - (2 * i + 1) / m
        phi = i * np.pi * (3 - np.sqrt(5))
        rho = np.sqrt(1 - z * z)
        np.testing.assert_allclose(fibonacci_sphere_directions(m),
                                   np.stack([rho * np.cos(phi), rho * np.sin(phi), z], 1), atol=1e-15)

    def test_zero_is_an_error(self):
        with pytest.raises(ValueError):
            fibonacci_sphere_directions(0)


class TestLayered:
    def test_six(self):
        n = np.linalg.norm(layered_fibonacci(6).positions, axis=1)
        assert n.tolist() == [0.5, 0.25, 0.125, 0.5, 0.25, 0.125]

    def test_48_has_16_per_radius(self):
        n = np.linalg.norm(layered_fibonacci(48).positions, axis=1)
        for r in (0.5, 0.25, 0.125):
            assert np.count_nonzero(np.abs(n - r) <= 1e-12) == 16

    def test_one(self):
        a = layered_fibonacci(1)
        assert a.m == 1 and np.linalg.norm(a.positions[0]) == pytest.approx(0.5, abs=1e-15)


class TestUniform:
    def test_containment_and_determinism(self):
        a = uniform_ball(1000, 3)
        assert np.all(np.linalg.norm(a.positions, axis=1) <= 0.5)
        np.testing.assert_array_equal(a.positions, uniform_ball(1000, 3).positions)
        assert a.seed == 3

    def test_volume_fraction(self):
        n = np.linalg.norm(uniform_ball(10_000, 0).positions, axis=1)
        assert abs(np.mean(n <= 0.25) - 1 / 8) <= 0.02


class TestGrid:
    def test_full_grid(self):
        a = grid_sample(125, 0)
        assert {tuple(p) for p in a.positions} == {tuple(p) for p in grid_points()}

    @pytest.mark.parametrize("m", [33, 40, 48, 100])
    def test_in_sphere_subset_included(self, m):
        got = {tuple(p) for p in grid_sample(m, 7).positions}
        assert in_sphere_grid() <= got and len(got) == m

    def test_deterministic(self):
        np.testing.assert_array_equal(grid_sample(48, 5).positions, grid_sample(48, 5).positions)

    def test_too_many(self):
        with pytest.raises(ValueError):
            grid_sample(126, 0)


class TestRing:
    def test_three(self):
        np.testing.assert_allclose(np.linalg.norm(ring_anchors_2d(3).positions, axis=1), [0.5, 0.25, 0.125], rtol=1e-15)

    def test_twelve_gap(self):
        p = ring_anchors_2d(12).positions
        for r in range(3):
            ang = np.sort(np.degrees(np.arctan2(p[r::3, 1], p[r::3, 0])) % 360)
            np.testing.assert_allclose(np.diff(ang), 90.0, atol=1e-9)

    def test_seven_distinct(self):
        p = ring_anchors_2d(7).positions
        assert len({tuple(np.round(x, 12)) for x in p}) == 7


@pytest.mark.parametrize("strategy", ["fibonacci", "uniform", "grid", "ring2d"])
def test_pairwise_distinct(strategy):
    p = make_anchors(strategy, 48, seed=1).positions
    d = np.linalg.norm(p[:, None] - p[None], axis=-1) + np.eye(48)
    assert d.min() > 0


@pytest.mark.parametrize("a", [layered_fibonacci(48), uniform_ball(20, 9), ring_anchors_2d(7)])
def test_file_round_trip(tmp_path, a):
    write_anchors(tmp_path / "a.txt", a)
    lines = (tmp_path / "a.txt").read_text().splitlines()
    assert len(lines) == a.m + 1
    b = read_anchors(tmp_path / "a.txt")
    np.testing.assert_array_equal(a.positions, b.positions)
    assert (b.strategy, b.seed) == (a.strategy, a.seed)


def test_header_mismatch(tmp_path):
    (tmp_path / "a.txt").write_text("3 fibonacci -\n0 0 0\n")
    with pytest.raises(ValueError, match="declares 3"):
        read_anchors(tmp_path / "a.txt")


def test_anchor_set_validation():
    with pytest.raises(ValueError):
        AnchorSet(np.zeros((0, 3)), Strategy.CUSTOM)
    with pytest.raises(ValueError):
        make_anchors("custom", 4)
