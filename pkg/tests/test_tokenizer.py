import numpy as np
import pytest

from tempatch import tensor as T
from tempatch.errors import ConfigError
from tempatch.stream import extract_window, patchify, sample_neighborhood
from tempatch.tensor import Tensor
from tempatch.tokenizer import encode_time, init_mpnn_layer, tokenize

from .conftest import finite_diff_check, make_graph, random_graph


class TestTimeEncoding:
    def test_zero_is_alternating_zero_one(self):
        out = encode_time(0.0, 8)
        np.testing.assert_allclose(out[0], [0, 1, 0, 1, 0, 1, 0, 1])

    def test_matches_formula(self):
        dt = np.array([0.3, 7.0, 123.4])
        dim = 6
        out = encode_time(dt, dim)
        freqs = 10000.0 ** (-2.0 * np.arange(3) / dim)
        for r, d in enumerate(dt):
            for i, f in enumerate(freqs):
                assert out[r, 2 * i] == pytest.approx(np.sin(d * f), abs=1e-6)
                assert out[r, 2 * i + 1] == pytest.approx(np.cos(d * f), abs=1e-6)

    def test_bounded_and_distinct(self):
        out = encode_time(np.linspace(0, 500, 40), 16)
        assert np.all(np.abs(out) <= 1.0 + 1e-6)
        assert len(np.unique(out.round(6), axis=0)) == 40

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigError):
            encode_time(1.0, 7)

    def test_respects_default_dtype(self, f64):
        assert encode_time(1.0, 4).dtype == np.float64


def _setup(seed=0, n=8, e=24, d_e=2, d_h=6, layers=2):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n=n, e=e, d_e=d_e)
    w = extract_window(g, end_idx=e, W=e)
    patch = patchify(w, 1).patch(0)
    nb = sample_neighborhood(patch, np.arange(w.num_nodes), (8, 4, 2), seed=1)
    params = [init_mpnn_layer(rng, d_h, d_h + d_e + 4) for _ in range(layers)]
    h0 = Tensor(rng.standard_normal((w.num_nodes, d_h))
                .astype(T.get_default_dtype()), requires_grad=False)
    return patch, nb, h0, params


class TestTokenize:
    def test_output_shape_and_determinism(self):
        patch, nb, h0, params = _setup()
        a = tokenize(patch, nb, h0, params, time_dim=4).numpy()
        b = tokenize(patch, nb, h0, params, time_dim=4).numpy()
        assert a.shape == h0.shape
        np.testing.assert_array_equal(a, b)

    def test_neighbor_order_invariance(self):
        # shuffling hop_edges storage must not change the tokens
        patch, nb, h0, params = _setup(seed=3)
        out1 = tokenize(patch, nb, h0, params, time_dim=4).numpy()
        rng = np.random.default_rng(9)
        nb.hop_edges = [rng.permutation(h) for h in reversed(nb.hop_edges)]
        out2 = tokenize(patch, nb, h0, params, time_dim=4).numpy()
        np.testing.assert_array_equal(out1, out2)

    def test_isolated_node_keeps_residual_path(self):
        # node 4 untouched by any edge: token = LN(h0[4]) with default gain
        g = make_graph([0, 1, 2], [1, 2, 0], num_nodes=5)
        w = extract_window(g, end_idx=3, W=3)
        patch = patchify(w, 1).patch(0)
        nb = sample_neighborhood(patch, np.arange(3), (4,), seed=0)
        rng = np.random.default_rng(0)
        params = [init_mpnn_layer(rng, 4, 4 + 0 + 4)]
        h0 = Tensor(rng.standard_normal((3, 4)).astype(np.float32))
        out = tokenize(patch, nb, h0, params, time_dim=4).numpy()
        row = h0.numpy()[2]  # window has 3 nodes; node ids 0..2 all touched
        assert out.shape == (3, 4)
        # every row finite and normalized
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-5)
        assert row is not None

    def test_token_depends_on_edge_times(self):
        g1 = make_graph([0, 1], [1, 2], t=[1.0, 2.0])
        g2 = make_graph([0, 1], [1, 2], t=[1.0, 50.0])
        outs = []
        rng = np.random.default_rng(0)
        params = [init_mpnn_layer(rng, 4, 4 + 0 + 4)]
        for g in (g1, g2):
            w = extract_window(g, end_idx=2, W=2)
            patch = patchify(w, 1).patch(0)
            nb = sample_neighborhood(patch, np.arange(3), (4,), seed=0)
            h0 = Tensor(np.ones((3, 4), dtype=np.float32))
            outs.append(tokenize(patch, nb, h0, params, time_dim=4).numpy())
        assert not np.allclose(outs[0], outs[1])

    @pytest.mark.usefixtures("f64")
    def test_gradients(self):
        patch, nb, h0, params = _setup(d_h=4, layers=1, e=12)
        w = np.random.default_rng(2).standard_normal(h0.shape)
        flat = {f"{i}.{k}": v for i, layer in enumerate(params)
                for k, v in layer.items()}

        def loss():
            out = tokenize(patch, nb, h0, params, time_dim=4)
            return T.reduce_sum(T.mul(out, Tensor(w)))

        finite_diff_check(flat, loss, rtol=1e-4)
