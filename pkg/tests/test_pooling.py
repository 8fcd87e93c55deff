"""Pooling mechanism tests: kernels, decomposition, polyphase sampling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftpool.oracles import (
    check_gradient,
    maxpool_reference,
    polyphase_reference,
)
from shiftpool.pooling import (
    FilterKernel,
    PolyphaseIndex,
    PoolingSpec,
    aps_subsample,
    binomial1d,
    binomial2d,
    binomial_kernel,
    dense_maxpool,
    kernel_softmax,
    lpf_subsample,
    naive_subsample,
    polyphase_components,
    pooling_layer,
    tlpf_materialize,
)
from shiftpool.tensor import Tensor


class TestBinomialKernels:
    def test_base_averaging_mask(self):
        np.testing.assert_array_equal(binomial1d(0), [0.5, 0.5])

    def test_classic_masks(self):
        np.testing.assert_array_equal(binomial1d(1) * 4, [1, 2, 1])
        np.testing.assert_array_equal(binomial1d(2) * 8, [1, 3, 3, 1])
        np.testing.assert_array_equal(binomial1d(3) * 16, [1, 4, 6, 4, 1])

    @pytest.mark.parametrize("order", range(9))
    def test_entries_are_binomial_coefficients(self, order):
        mask = binomial1d(order)
        assert len(mask) == order + 2
        coeffs = [math.comb(order + 1, k) for k in range(order + 2)]
        np.testing.assert_allclose(mask, np.array(coeffs) / sum(coeffs), rtol=0, atol=0)

    def test_negative_order_rejected(self):
        with pytest.raises(ValueError):
            binomial1d(-1)

    def test_size3_outer_product(self):
        k = binomial2d(3)
        expected = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 16.0
        np.testing.assert_array_equal(k.weights.data, expected)
        assert k.kind == "binomial"

    def test_size5_center_weight(self):
        k = binomial2d(5)
        assert k.weights.data[2, 2] == np.float32(36.0 / 256.0)

    @pytest.mark.parametrize("size", range(2, 9))
    def test_symmetry_and_unit_sum(self, size):
        w = binomial2d(size).weights.data
        np.testing.assert_array_equal(w, w.T)
        np.testing.assert_array_equal(w, np.rot90(w, 2))
        assert abs(w.sum(dtype=np.float64) - 1.0) < 1e-9
        assert np.all(w >= 0)

    def test_degenerate_shapes(self):
        row = binomial_kernel(1, 5)
        assert row.weights.data.shape == (1, 5)
        np.testing.assert_array_equal(row.weights.data[0] * 16, [1, 4, 6, 4, 1])
        col = binomial_kernel(4, 1)
        assert col.weights.data.shape == (4, 1)

    def test_size_below_two_rejected(self):
        with pytest.raises(ValueError):
            binomial2d(1)


class TestTrainableKernels:
    def test_zero_logits_give_uniform(self):
        k = tlpf_materialize(Tensor(np.zeros((3, 3))))
        np.testing.assert_allclose(k.weights.data, np.full((3, 3), 1 / 9), rtol=1e-6)
        assert k.kind == "trainable"

    def test_softmax_arithmetic(self):
        k = tlpf_materialize(Tensor(np.array([[0.0, np.log(2.0)]])))
        np.testing.assert_allclose(k.weights.data, [[1 / 3, 2 / 3]], rtol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(0, 2 ** 32 - 1),
        st.sampled_from([(3, 3), (4, 4), (5, 5), (1, 5), (6, 1)]),
    )
    def test_constraint_holds_for_any_logits(self, seed, shape):
        rng = np.random.default_rng(seed)
        logits = rng.normal(scale=4.0, size=shape)
        w = tlpf_materialize(Tensor(logits)).weights.data
        assert np.all(w > 0)
        assert abs(w.sum(dtype=np.float64) - 1.0) < 1e-6

    def test_gradient_through_softmax(self):
        rng = np.random.default_rng(10)
        raw = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        t = rng.normal(size=(3, 3)).astype(np.float32)

        def loss():
            return (kernel_softmax(raw) * t).sum()

        assert check_gradient(loss, [raw], h=1e-2) < 1e-3

    def test_per_channel_softmax_normalizes_each_channel(self):
        rng = np.random.default_rng(11)
        raw = Tensor(rng.normal(size=(4, 3, 3)))
        w = kernel_softmax(raw).data
        np.testing.assert_allclose(w.sum(axis=(1, 2)), np.ones(4), rtol=1e-6)


class TestFilterKernelInvariants:
    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError, match="non-negative"):
            FilterKernel(1, 2, Tensor(np.array([[1.5, -0.5]])), kind="binomial")

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError, match="sum"):
            FilterKernel(1, 2, Tensor(np.array([[0.7, 0.7]])), kind="binomial")


class TestDenseMaxpool:
    def test_k1_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 4, 4)))
        out = dense_maxpool(x, 1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_k2_window_anchored_top_left(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = dense_maxpool(x, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[4.0, 4.0], [4.0, 4.0]])

    def test_output_dominates_input(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 7, 7)).astype(np.float32)
        out = dense_maxpool(Tensor(x), 3)
        assert np.all(out.data >= x)

    def test_all_negative_input_unaffected_by_padding(self):
        x = Tensor(np.full((1, 1, 3, 3), -5.0))
        out = dense_maxpool(x, 3)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), -5.0))

    def test_gradient_routes_to_first_max(self):
        x = Tensor(np.array([[[[2.0, 2.0], [2.0, 2.0]]]]), requires_grad=True)
        dense_maxpool(x, 2).sum().backward()
        # four windows all tie on whichever bin scans first in row-major order
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 1.0], [1.0, 1.0]])

    def test_gradient_matches_selection(self):
        x = Tensor(np.array([[[[1.0, 5.0], [3.0, 2.0]]]]), requires_grad=True)
        dense_maxpool(x, 2).sum().backward()
        # 5 wins windows (0,0),(0,1); 3 wins (1,0); 2 wins (1,1)
        np.testing.assert_array_equal(x.grad[0, 0], [[0.0, 2.0], [1.0, 1.0]])


class TestLpfSubsample:
    def test_one_point_kernel_equals_naive(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(2, 3, 6, 6)))
        k = FilterKernel(1, 1, Tensor(np.ones((1, 1))), kind="binomial")
        out = lpf_subsample(x, k, (2, 2))
        np.testing.assert_array_equal(out.data, x.data[:, :, ::2, ::2])

    def test_checkerboard_cancels_in_interior(self):
        h = w = 8
        board = np.fromfunction(lambda i, j: (-1.0) ** (i + j), (h, w))
        x = Tensor(board[None, None])
        out = lpf_subsample(x, binomial2d(3), (1, 1))
        np.testing.assert_array_equal(out.data[0, 0, 1:-1, 1:-1], np.zeros((h - 2, w - 2)))

    def test_constant_input_preserved(self):
        x = Tensor(np.full((1, 2, 6, 6), 3.25))
        out = lpf_subsample(x, binomial2d(3), (1, 1))
        np.testing.assert_allclose(out.data[:, :, 1:-1, 1:-1], 3.25, rtol=1e-6)

    def test_geometry_matches_naive(self):
        x = Tensor(np.zeros((1, 1, 7, 9)))
        lpf = lpf_subsample(x, binomial2d(5), (2, 2))
        naive = naive_subsample(x, (2, 2))
        assert lpf.shape == naive.shape == (1, 1, 4, 5)

    def test_smoothing_reduces_high_frequency_energy(self):
        def hf_energy(a):
            dt = np.diff(a, axis=2)
            df = np.diff(a, axis=3)
            return float((dt ** 2).mean() + (df ** 2).mean())

        for seed in range(5):
            rng = np.random.default_rng(30 + seed)
            x = Tensor(rng.normal(size=(1, 2, 16, 16)))
            blurred = lpf_subsample(x, binomial2d(3), (2, 2))
            naive = naive_subsample(x, (2, 2))
            assert hf_energy(blurred.data) <= hf_energy(naive.data)


class TestPolyphaseComponents:
    def test_enumeration_example(self):
        x = Tensor(np.array([[[[1.0, 0.0], [0.0, 0.0]]]]))
        comps = polyphase_components(x, (2, 2))
        assert comps[PolyphaseIndex(0, 0)].data.tolist() == [[[[1.0]]]]
        for idx in [(0, 1), (1, 0), (1, 1)]:
            assert comps[PolyphaseIndex(*idx)].data.tolist() == [[[[0.0]]]]

    def test_constant_input_components_equal(self):
        x = Tensor(np.full((1, 1, 4, 4), 2.5))
        comps = polyphase_components(x, (2, 2))
        for c in comps.values():
            np.testing.assert_array_equal(c.data, np.full((1, 1, 2, 2), 2.5))

    def test_matches_index_enumeration_oracle(self):
        rng = np.random.default_rng(3)
        for h, w, s in [(6, 6, (2, 2)), (7, 5, (2, 2)), (9, 9, (3, 3)), (5, 8, (3, 2))]:
            x = rng.normal(size=(2, 2, h, w)).astype(np.float32)
            comps = polyphase_components(Tensor(x), s)
            ref = polyphase_reference(x, s)
            assert set(comps) == set(PolyphaseIndex(*k) for k in ref)
            for key, val in ref.items():
                np.testing.assert_array_equal(comps[PolyphaseIndex(*key)].data, val)

    def test_ragged_tails(self):
        x = Tensor(np.zeros((1, 1, 5, 5)))
        comps = polyphase_components(x, (2, 2))
        assert comps[PolyphaseIndex(0, 0)].shape == (1, 1, 3, 3)
        assert comps[PolyphaseIndex(1, 1)].shape == (1, 1, 2, 2)

    def test_circular_shift_permutes_component_set(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 1, 8, 6)).astype(np.float32)
        orig = polyphase_components(Tensor(x), (2, 2))
        shifted = polyphase_components(Tensor(np.roll(x, 1, axis=3)), (2, 2))
        orig_sets = sorted(
            tuple(sorted(c.data.ravel().tolist())) for c in orig.values()
        )
        shifted_sets = sorted(
            tuple(sorted(c.data.ravel().tolist())) for c in shifted.values()
        )
        assert orig_sets == shifted_sets

    def test_components_differentiable(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4), requires_grad=True)
        comps = polyphase_components(x, (2, 2))
        comps[PolyphaseIndex(1, 0)].sum().backward()
        expected = np.zeros((4, 4))
        expected[1::2, 0::2] = 1.0
        np.testing.assert_array_equal(x.grad[0, 0], expected)


class TestApsSubsample:
    def test_selects_max_l1_component(self):
        x = Tensor(np.array([[[[1.0, 0.0], [0.0, 0.0]]]]))
        out, idx = aps_subsample(x, (2, 2), p=1)
        assert idx == [PolyphaseIndex(0, 0)]
        assert out.data.tolist() == [[[[1.0]]]]

    def test_tracks_circular_shift(self):
        x = np.array([[[[1.0, 0.0], [0.0, 0.0]]]])
        shifted = np.roll(x, 1, axis=3)
        out, idx = aps_subsample(Tensor(shifted), (2, 2), p=1)
        assert idx == [PolyphaseIndex(0, 1)]
        assert out.data.tolist() == [[[[1.0]]]]

    def test_constant_input_ties_break_to_origin(self):
        x = Tensor(np.full((3, 2, 4, 4), 1.5))
        out, idx = aps_subsample(x, (2, 2), p=2)
        assert idx == [PolyphaseIndex(0, 0)] * 3
        np.testing.assert_array_equal(out.data, np.full((3, 2, 2, 2), 1.5))

    @pytest.mark.parametrize("p", [1, 2])
    @pytest.mark.parametrize("shift", [(0, 1), (1, 0), (1, 1)])
    def test_shift_invariance_small_sweep(self, p, shift):
        rng = np.random.default_rng(5)
        for _ in range(25):
            h = 2 * int(rng.integers(2, 9))
            w = 2 * int(rng.integers(2, 9))
            c = int(rng.choice([1, 4]))
            x = rng.normal(size=(1, c, h, w)).astype(np.float32)
            out, idx = aps_subsample(Tensor(x), (2, 2), p=p)
            xs = np.roll(x, shift, axis=(2, 3))
            out_s, idx_s = aps_subsample(Tensor(xs), (2, 2), p=p)
            i, j = idx[0]
            assert idx_s[0] == PolyphaseIndex((i + shift[0]) % 2, (j + shift[1]) % 2)
            aligned = np.roll(
                out.data, ((i + shift[0]) // 2, (j + shift[1]) // 2), axis=(2, 3)
            )
            np.testing.assert_array_equal(out_s.data, aligned)

    def test_selection_is_per_batch_element(self):
        a = np.zeros((1, 1, 4, 4), dtype=np.float32)
        a[0, 0, 0, 0] = 9.0
        b = np.zeros((1, 1, 4, 4), dtype=np.float32)
        b[0, 0, 1, 1] = 9.0
        out, idx = aps_subsample(Tensor(np.concatenate([a, b])), (2, 2), p=1)
        assert idx == [PolyphaseIndex(0, 0), PolyphaseIndex(1, 1)]
        assert out.data[0, 0, 0, 0] == 9.0 and out.data[1, 0, 0, 0] == 9.0

    def test_gradient_flows_to_selected_bins_only(self):
        x = np.zeros((1, 1, 4, 4), dtype=np.float32)
        x[0, 0, 1, 1] = 4.0
        t = Tensor(x, requires_grad=True)
        out, idx = aps_subsample(t, (2, 2), p=1)
        assert idx == [PolyphaseIndex(1, 1)]
        out.sum().backward()
        expected = np.zeros((4, 4))
        expected[1::2, 1::2] = 1.0
        np.testing.assert_array_equal(t.grad[0, 0], expected)

    def test_odd_sizes_pad_to_consistent_shape(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(2, 3, 5, 7)))
        out, _ = aps_subsample(x, (2, 2), p=1)
        assert out.shape == (2, 3, 3, 4)

    def test_rejects_bad_norm(self):
        with pytest.raises(ValueError):
            aps_subsample(Tensor(np.zeros((1, 1, 2, 2))), (2, 2), p=3)


class TestPoolingLayer:
    def test_naive_spec_equals_conventional_maxpool(self):
        rng = np.random.default_rng(7)
        spec = PoolingSpec.naive(dense_k=2, stride=(2, 2))
        for _ in range(100):
            h = 2 * int(rng.integers(2, 8))
            w = 2 * int(rng.integers(2, 8))
            x = rng.normal(size=(1, 2, h, w)).astype(np.float32)
            out = pooling_layer(Tensor(x), spec)
            ref = maxpool_reference(x, 2, (2, 2))
            np.testing.assert_array_equal(out.data, ref)

    def test_decomposition_on_overlapping_grid_odd_sizes(self):
        rng = np.random.default_rng(8)
        spec = PoolingSpec.naive(dense_k=2, stride=(2, 2))
        x = rng.normal(size=(1, 1, 7, 9)).astype(np.float32)
        out = pooling_layer(Tensor(x), spec)
        ref = maxpool_reference(x, 2, (2, 2))
        np.testing.assert_array_equal(out.data[:, :, : ref.shape[2], : ref.shape[3]], ref)

    def test_unit_spec_is_identity(self):
        x = Tensor(np.random.default_rng(9).normal(size=(1, 1, 5, 5)))
        spec = PoolingSpec.naive(dense_k=1, stride=(1, 1))
        out = pooling_layer(x, spec)
        np.testing.assert_array_equal(out.data, x.data)

    def test_aps_constant_input_stays_constant(self):
        spec = PoolingSpec.aps(p=1, dense_k=2, stride=(2, 2))
        x = Tensor(np.full((1, 2, 6, 6), 0.75))
        out = pooling_layer(x, spec)
        np.testing.assert_array_equal(out.data, np.full((1, 2, 3, 3), 0.75))

    def test_blurpool_spec_runs(self):
        spec = PoolingSpec.blurpool(size=3)
        x = Tensor(np.random.default_rng(10).normal(size=(1, 2, 8, 8)))
        assert pooling_layer(x, spec).shape == (1, 2, 4, 4)

    def test_trainable_spec_requires_kernel(self):
        spec = PoolingSpec.tlpf(shape=(3, 3))
        with pytest.raises(ValueError, match="kernel"):
            pooling_layer(Tensor(np.zeros((1, 1, 4, 4))), spec)

    def test_stride_constraint(self):
        with pytest.raises(ValueError, match="stride"):
            PoolingSpec(dense_k=2, subsampler="aps", stride=(1, 1))

    def test_spec_roundtrips_through_dict(self):
        spec = PoolingSpec.tlpf(shape=(1, 5), dense_k=3, shared=True)
        assert PoolingSpec.from_dict(spec.to_dict()) == spec

    def test_tlpf_layer_gradient(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(1, 2, 8, 8)))
        raw = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        t = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        spec = PoolingSpec.tlpf(shape=(3, 3))

        def loss():
            return (pooling_layer(x, spec, lpf_kernel=kernel_softmax(raw)) * t).sum()

        assert check_gradient(loss, [raw], h=5e-2) < 1e-3
