import numpy as np
import pytest

from tempatch.data import (chronological_split, dataset_hash, inductive_split,
                           load_edge_stream, sample_negatives)
from tempatch.errors import ConfigError, DataError, SchemaError

from .conftest import make_graph


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoader:
    def test_basic_load_sorts_and_compacts(self, tmp_path):
        p = _write(tmp_path, "src,dst,timestamp,label\n"
                             "10,30,5.0,-1\n"
                             "30,20,1.0,2\n"
                             "20,10,3.0,-1\n")
        g = load_edge_stream(p)
        assert g.num_nodes == 3 and g.num_edges == 3
        # time-sorted; original ids 10,20,30 -> 0,1,2
        np.testing.assert_array_equal(g.t, [1.0, 3.0, 5.0])
        np.testing.assert_array_equal(g.src, [2, 1, 0])
        np.testing.assert_array_equal(g.dst, [1, 0, 2])
        np.testing.assert_array_equal(g.labels, [2, -1, -1])
        np.testing.assert_array_equal(g.orig_ids, [10, 20, 30])

    def test_stable_sort_preserves_file_order_on_ties(self, tmp_path):
        p = _write(tmp_path, "src,dst,timestamp,label\n"
                             "0,1,7.0,-1\n0,2,7.0,-1\n0,3,7.0,-1\n")
        g = load_edge_stream(p)
        np.testing.assert_array_equal(g.dst, [1, 2, 3])

    def test_edge_features(self, tmp_path):
        p = _write(tmp_path, "src,dst,timestamp,label,f1,f2\n"
                             "0,1,1.0,-1,0.5,-2.0\n"
                             "1,2,2.0,-1,1.5,3.0\n")
        g = load_edge_stream(p)
        assert g.edge_dim == 2
        np.testing.assert_allclose(g.edge_feats, [[0.5, -2.0], [1.5, 3.0]])

    def test_missing_header(self, tmp_path):
        p = _write(tmp_path, "0,1,1.0,-1\n")
        with pytest.raises(SchemaError, match=":1:"):
            load_edge_stream(p)

    def test_malformed_row_reports_line(self, tmp_path):
        p = _write(tmp_path, "src,dst,timestamp,label\n"
                             "0,1,1.0,-1\n"
                             "0,banana,2.0,-1\n")
        with pytest.raises(SchemaError, match=":3:"):
            load_edge_stream(p)

    def test_inconsistent_arity(self, tmp_path):
        p = _write(tmp_path, "src,dst,timestamp,label,f1\n"
                             "0,1,1.0,-1,0.5\n"
                             "0,2,2.0,-1\n")
        with pytest.raises(SchemaError, match="arity"):
            load_edge_stream(p)

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError):
            load_edge_stream(_write(tmp_path, ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(DataError, match="no edges"):
            load_edge_stream(_write(tmp_path, "src,dst,timestamp,label\n"))

    def test_dataset_hash_changes_with_content(self, tmp_path):
        a = _write(tmp_path, "src,dst,timestamp,label\n0,1,1.0,-1\n", "a.csv")
        b = _write(tmp_path, "src,dst,timestamp,label\n0,1,2.0,-1\n", "b.csv")
        assert dataset_hash(a) != dataset_hash(b)
        assert len(dataset_hash(a)) == 64


class TestSplits:
    def test_chronological_70_15_15(self):
        g = make_graph(np.zeros(100, int), np.ones(100, int))
        sp = chronological_split(g)
        assert (len(sp.train_idx), len(sp.val_idx), len(sp.test_idx)) == (70, 15, 15)
        assert sp.boundaries == (70, 85)

    def test_boundaries_use_floor(self):
        # 59835 edges: train ends at 41884, val at 50859
        g = make_graph(np.zeros(59835, int), np.ones(59835, int))
        sp = chronological_split(g)
        assert sp.boundaries == (41884, 50859)
        assert len(sp.train_idx) == 41884
        assert sp.val_idx[0] == 41884 and sp.test_idx[0] == 50859

    def test_bad_ratios(self):
        g = make_graph([0, 1, 2], [1, 2, 0])
        with pytest.raises(ConfigError):
            chronological_split(g, ratios=(0.5, 0.2, 0.2))

    def test_inductive_masks_nodes(self):
        rng = np.random.default_rng(0)
        src = rng.integers(0, 40, 400)
        dst = (src + 1 + rng.integers(0, 39, 400)) % 40
        g = make_graph(src, dst, num_nodes=40)
        sp = inductive_split(g, frac=0.25, seed=3)
        assert len(sp.masked_nodes) == 10
        masked = np.array(sorted(sp.masked_nodes))
        # no train edge touches a masked node
        assert not np.any(np.isin(g.src[sp.train_idx], masked) |
                          np.isin(g.dst[sp.train_idx], masked))
        # every test edge touches one
        assert np.all(np.isin(g.src[sp.test_idx], masked) |
                      np.isin(g.dst[sp.test_idx], masked))
        # deterministic in the seed
        sp2 = inductive_split(g, frac=0.25, seed=3)
        assert sp.masked_nodes == sp2.masked_nodes

    def test_inductive_rejects_bad_frac(self):
        g = make_graph(np.arange(12), np.roll(np.arange(12), 1))
        with pytest.raises(ConfigError):
            inductive_split(g, frac=1.5)


class TestNegativeSampling:
    def test_shape_determinism_exclusion(self):
        g = make_graph([0, 1, 2, 3], [1, 2, 3, 0], num_nodes=8)
        pairs = np.array([[0, 1], [2, 3]])
        a = sample_negatives(pairs, g, k=5, seed=11)
        b = sample_negatives(pairs, g, k=5, seed=11)
        c = sample_negatives(pairs, g, k=5, seed=12)
        assert a.shape == (2, 5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        assert np.all(a[0] != 1) and np.all(a[1] != 3)
        assert np.all((a >= 0) & (a < 8))

    def test_uniformity(self):
        # chi-square-ish sanity: candidate frequencies close to uniform
        g = make_graph([0], [1], num_nodes=6)
        pairs = np.tile([[0, 1]], (6000, 1))
        negs = sample_negatives(pairs, g, k=1, seed=0).reshape(-1)
        counts = np.bincount(negs, minlength=6)
        assert counts[1] == 0
        expected = 6000 / 5
        assert np.all(np.abs(counts[[0, 2, 3, 4, 5]] - expected) < 5 * np.sqrt(expected))

    def test_bipartite_pool(self):
        g = make_graph([0, 1], [5, 6], num_nodes=8)
        negs = sample_negatives(np.array([[0, 5]]), g, k=50, seed=1,
                                bipartite_dst=np.array([5, 6, 7]))
        assert set(np.unique(negs)) <= {6, 7}
