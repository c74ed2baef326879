import math

import numpy as np
import pytest

from protoseg.attribution import aggregate_attention, bilinear_upsample, binarize
from protoseg.errors import DegenerateMapError
from protoseg.tensorio import AttentionEntry, AttentionStack

from conftest import random_stack_maps


def bilinear_ref(src, th, tw):
    """Independent scalar oracle using the weight-product formulation."""
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape
    out = np.zeros((th, tw))
    for i in range(th):
        sy = min(max((i + 0.5) * h / th - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(tw):
            sx = min(max((j + 0.5) * w / tw - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[i, j] = (src[y0, x0] * (1 - fy) * (1 - fx)
                         + src[y0, x1] * (1 - fy) * fx
                         + src[y1, x0] * fy * (1 - fx)
                         + src[y1, x1] * fy * fx)
    return out


def make_stack(maps, image_hw, n_tokens):
    entries = [AttentionEntry(t=t, l=l, h=h, token=tok,
                              map=np.asarray(m, dtype=np.float64))
               for (t, l, h, tok), m in maps.items()]
    return AttentionStack(entries=entries, image_hw=image_hw,
                          n_tokens=n_tokens)


class TestBilinearUpsample:
    def test_constant_exact(self):
        out = bilinear_upsample(np.full((4, 4), 0.5), 64, 64)
        assert out.shape == (64, 64)
        assert (out == 0.5).all()

    def test_one_by_one(self):
        out = bilinear_upsample(np.array([[3.25]]), 5, 7)
        assert (out == 3.25).all()

    def test_column_ramp_against_hand_weights(self):
        src = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = bilinear_upsample(src, 4, 4)
        # sample x-coords for 2 -> 4: -0.25, 0.25, 0.75, 1.25 (clamped)
        expected_cols = np.array([0.0, 0.25, 0.75, 1.0])
        np.testing.assert_allclose(out, np.tile(expected_cols, (4, 1)),
                                   atol=1e-15)
        np.testing.assert_allclose(out, bilinear_ref(src, 4, 4), atol=1e-15)

    def test_matches_oracle_random(self, rng):
        for _ in range(20):
            h, w = rng.integers(1, 9, size=2)
            th, tw = rng.integers(1, 33, size=2)
            src = rng.random((h, w))
            np.testing.assert_allclose(
                bilinear_upsample(src, th, tw), bilinear_ref(src, th, tw),
                atol=1e-12)

    def test_downscale_matches_oracle(self, rng):
        src = rng.random((16, 24))
        np.testing.assert_allclose(bilinear_upsample(src, 5, 7),
                                   bilinear_ref(src, 5, 7), atol=1e-12)

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError):
            bilinear_upsample(np.ones((2, 2)), 0, 4)


class TestAggregateAttention:
    def test_single_entry_identity(self, rng):
        m = rng.random((8, 8))
        stack = make_stack({(0, 0, 0, 0): m}, (8, 8), 1)
        out = aggregate_attention(stack, [0], 8, 8)
        np.testing.assert_allclose(out.values, m, atol=1e-15)

    def test_mean_of_constants(self):
        maps = {(0, 0, 0, 0): np.full((4, 4), 0.2),
                (1, 0, 0, 0): np.full((4, 4), 0.6)}
        stack = make_stack(maps, (16, 16), 1)
        out = aggregate_attention(stack, [0], 16, 16)
        np.testing.assert_allclose(out.values, 0.4, atol=1e-15)

    def test_brute_force_oracle(self, rng):
        maps = random_stack_maps(rng, 3, 2, 2, n_tokens=2)
        stack = make_stack(maps, (64, 64), 2)
        out = aggregate_attention(stack, [0, 1], 64, 64)
        acc = np.zeros((64, 64))
        count = 0
        for t in range(3):
            for l in range(2):
                for h in range(2):
                    token_mean = (maps[(t, l, h, 0)] + maps[(t, l, h, 1)]) / 2
                    acc += bilinear_ref(token_mean, 64, 64)
                    count += 1
        assert count == 12
        np.testing.assert_allclose(out.values, acc / 12, atol=1e-6)

    def test_entry_order_invariance(self, rng):
        maps = random_stack_maps(rng, 2, 2, 2, n_tokens=1)
        items = list(maps.items())
        stack_a = make_stack(dict(items), (32, 32), 1)
        shuffled = list(items)
        rng.shuffle(shuffled)
        stack_b = make_stack(dict(shuffled), (32, 32), 1)
        a = aggregate_attention(stack_a, [0], 32, 32).values
        b = aggregate_attention(stack_b, [0], 32, 32).values
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_identical_maps_equal_single(self, rng):
        m = rng.random((6, 6))
        maps = {(t, 0, h, 0): m for t in range(2) for h in range(2)}
        stack = make_stack(maps, (24, 24), 1)
        out = aggregate_attention(stack, [0], 24, 24)
        single = bilinear_upsample(m, 24, 24)
        np.testing.assert_allclose(out.values, single, atol=1e-12)

    def test_bad_tokens(self, rng):
        stack = make_stack({(0, 0, 0, 0): rng.random((4, 4))}, (8, 8), 1)
        with pytest.raises(ValueError):
            aggregate_attention(stack, [], 8, 8)
        with pytest.raises(ValueError):
            aggregate_attention(stack, [3], 8, 8)


class TestBinarize:
    def test_midpoint_rule_at_half(self):
        values = np.linspace(0.0, 2.0, 101).reshape(1, -1)
        mask = binarize(values, gamma=0.5)
        midpoint = 1.0
        np.testing.assert_array_equal(mask.values, values > midpoint)

    def test_gamma_045_threshold(self, rng):
        # sigma(x) > 0.45  <=>  x > ln(0.45/0.55)
        values = rng.random((20, 20))
        mask = binarize(values, gamma=0.45)
        lo, hi = values.min(), values.max()
        rescaled = -1.0 + 2.0 * (values - lo) / (hi - lo)
        cut = math.log(0.45 / 0.55)
        assert math.isclose(cut, -0.2006707, abs_tol=1e-6)
        np.testing.assert_array_equal(mask.values, rescaled > cut)

    def test_single_peak(self):
        values = np.zeros((5, 5))
        values[2, 3] = 1.0
        mask = binarize(values, gamma=0.5)
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[2, 3] = 1  # only the peak exceeds the value midpoint
        np.testing.assert_array_equal(mask.values, expected)

    def test_elementwise_oracle(self, rng):
        values = rng.random((13, 9))
        gamma = 0.3
        mask = binarize(values, gamma)
        lo, hi = values.min(), values.max()
        ref = np.zeros_like(values, dtype=np.uint8)
        for i in range(13):
            for j in range(9):
                x = -1.0 + 2.0 * (values[i, j] - lo) / (hi - lo)
                ref[i, j] = 1 / (1 + math.exp(-x)) > gamma
        np.testing.assert_array_equal(mask.values, ref)

    def test_constant_map_rejected(self):
        with pytest.raises(DegenerateMapError):
            binarize(np.full((4, 4), 0.7), 0.5)

    def test_gamma_monotonicity(self, rng):
        values = rng.random((16, 16))
        low = binarize(values, 0.3).values
        high = binarize(values, 0.7).values
        assert (high <= low).all()  # high-gamma mask is a subset

    def test_gamma_range_checked(self):
        with pytest.raises(ValueError):
            binarize(np.eye(3), 0.0)
        with pytest.raises(ValueError):
            binarize(np.eye(3), 1.0)
