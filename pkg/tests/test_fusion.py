import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslse import autodiff as ad
from sslse import fusion
from sslse.encoder import LayerStack
from sslse.errors import ShapeError, UnsupportedStride


def make_stack(rng, L=5, T=8, D=6):
    return LayerStack(rng.standard_normal((L, T, D)))


class TestLayerWeights:
    def test_zero_init_is_uniform(self):
        w = fusion.LayerWeights(5).weights
        assert np.allclose(w, 0.2, atol=1e-15)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
    @settings(max_examples=30, deadline=None)
    def test_simplex_property(self, logits):
        lw = fusion.LayerWeights(len(logits))
        lw.logits.data = np.array(logits)
        w = lw.weights
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all(w >= 0.0)

    def test_json_roundtrip(self, tmp_path):
        lw = fusion.LayerWeights(3)
        lw.logits.data = np.array([0.0, 1.0, -1.0])
        lw.to_json(tmp_path / "w.json")
        loaded = fusion.LayerWeights.load_weight_values(tmp_path / "w.json")
        assert np.allclose(loaded, lw.weights, atol=1e-15)


class TestWeightedSum:
    def test_one_hot_reproduces_layer_bitwise(self, rng):
        stack = make_stack(rng)
        for layer in range(stack.num_layers):
            onehot = np.zeros(stack.num_layers)
            onehot[layer] = 1.0
            out = fusion.weighted_sum(stack, onehot)
            assert np.array_equal(out, stack.layers[layer])

    def test_uniform_is_mean(self, rng):
        stack = make_stack(rng)
        out = fusion.weighted_sum(stack, np.full(5, 0.2))
        assert np.allclose(out, stack.layers.mean(axis=0), atol=1e-14)

    def test_graph_matches_numpy(self, rng):
        stack = make_stack(rng)
        lw = fusion.LayerWeights(5)
        lw.logits.data = rng.standard_normal(5)
        layers = [ad.Tensor(stack.layers[i]) for i in range(5)]
        graph = fusion.weighted_sum_graph(layers, lw)
        assert np.allclose(graph.data, fusion.weighted_sum(stack, lw), atol=1e-12)

    def test_weight_count_mismatch(self, rng):
        with pytest.raises(ShapeError):
            fusion.weighted_sum(make_stack(rng), np.ones(4))


class TestAlignDuplicate:
    def test_exact_double(self, rng):
        latent = rng.standard_normal((64, 6))
        out = fusion.align_duplicate(latent, 128)
        assert out.shape == (128, 6)
        assert np.array_equal(out[0::2], latent)
        assert np.array_equal(out[1::2], latent)

    def test_truncate(self, rng):
        latent = rng.standard_normal((64, 6))
        out = fusion.align_duplicate(latent, 127)
        assert out.shape == (127, 6)
        assert np.array_equal(out, np.repeat(latent, 2, axis=0)[:127])

    def test_pad_with_last_frame(self, rng):
        latent = rng.standard_normal((63, 6))
        out = fusion.align_duplicate(latent, 128)
        assert out.shape == (128, 6)
        assert np.array_equal(out[126], latent[-1])
        assert np.array_equal(out[127], latent[-1])

    def test_unsupported_stride(self, rng):
        with pytest.raises(UnsupportedStride):
            fusion.align_duplicate(rng.standard_normal((4, 6)), 8, stride_samples=480, hop=160)

    def test_graph_matches_numpy(self, rng):
        latent = rng.standard_normal((1, 10, 6))
        for frames in (20, 17, 23):
            graph = fusion.align_duplicate_graph(ad.Tensor(latent), frames)
            plain = fusion.align_duplicate(latent[0], frames)
            assert np.array_equal(graph.data[0], plain)


class TestConcat:
    def test_width_and_order(self, rng):
        latent = rng.standard_normal((12, 6))
        spec = rng.standard_normal((12, 201))
        out = fusion.concat_cross_domain(latent, spec)
        assert out.shape == (12, 207)
        assert np.array_equal(out[:, :6], latent)
        assert np.array_equal(out[:, 6:], spec)

    def test_frame_mismatch(self, rng):
        with pytest.raises(ShapeError):
            fusion.concat_cross_domain(rng.standard_normal((12, 6)), rng.standard_normal((11, 201)))
