import numpy as np
import pytest

import meshdenoise.autodiff as ad
from meshdenoise.autodiff import Tensor
from meshdenoise.gcn import (
    REST_CHANNELS,
    STAGE1_CHANNELS,
    BatchNorm,
    Cascade,
    GcnConfig,
    GcnModel,
    Linear,
    dynamic_edge_conv,
    edge_conv,
    gcn_forward,
    knn_indices,
    load_cascade,
    predict_normal,
    prepare_batch,
    save_cascade,
    stage_config,
)
from meshdenoise.patches import build_graph, PatchGraph


def make_linear(w, b):
    lin = Linear.__new__(Linear)
    lin.weight = Tensor(np.asarray(w, dtype=float), True)
    lin.bias = Tensor(np.asarray(b, dtype=float), True)
    return lin


def identity_bn(channels):
    """BN in inference mode with unit running stats acts as x / sqrt(1 + eps)."""
    return BatchNorm(channels, eps=1e-5, momentum=0.1)


def leaky(x, slope=0.01):
    return np.where(x >= 0, x, slope * x)


class TestStaticEdgeConv:
    def test_path_graph_hand_oracle(self):
        # nodes 0-1-2-3 in a path; inference-mode BN is a pure 1/sqrt(1+eps) scale
        x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, -1.0], [-1.0, 0.5]])
        edges = np.array([[0, 1], [1, 2], [2, 3]])
        w = np.array(
            [[0.5, -0.2, 0.1], [0.3, 0.4, -0.5], [-0.1, 0.2, 0.6], [0.7, -0.3, 0.2]]
        )
        b = np.array([0.05, -0.1, 0.2])
        lin = make_linear(w, b)
        bn = identity_bn(3)
        out = edge_conv(x, edges, lin, bn, slope=0.01, training=False)
        scale = 1.0 / np.sqrt(1.0 + 1e-5)
        nbrs = {0: [1], 1: [0, 2], 2: [1, 3], 3: [2]}
        expected = np.zeros((4, 3))
        for i in range(4):
            cands = []
            for j in [i] + nbrs[i]:
                e = np.concatenate([x[i], x[j] - x[i]])
                cands.append(leaky((e @ w + b) * scale))
            expected[i] = np.max(cands, axis=0)
        assert np.abs(out.data - expected).max() < 1e-12

    def test_equal_neighbors_reduce_to_self_formula(self):
        x = np.tile([0.7, -0.3], (5, 1))
        edges = np.array([[0, 1], [1, 2], [2, 3], [3, 4], [0, 4]])
        w = np.arange(12, dtype=float).reshape(4, 3) / 10
        lin = make_linear(w, np.zeros(3))
        out = edge_conv(x, edges, lin, identity_bn(3), training=False)
        e = np.concatenate([x[0], [0.0, 0.0]])
        expected = leaky((e @ w) / np.sqrt(1 + 1e-5))
        assert np.allclose(out.data, expected[None, :].repeat(5, 0), atol=1e-12)

    def test_isolated_node_self_pair(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        edges = np.zeros((0, 2), dtype=int)
        w = np.ones((4, 2))
        lin = make_linear(w, np.zeros(2))
        out = edge_conv(x, edges, lin, identity_bn(2), training=False)
        expected = leaky(
            np.concatenate([x, np.zeros_like(x)], axis=1) @ w / np.sqrt(1 + 1e-5)
        )
        assert np.allclose(out.data, expected, atol=1e-12)


class TestKnnIndices:
    def test_line_features_match_brute_force(self):
        rng = np.random.Generator(np.random.PCG64(3))
        t = np.cumsum(rng.uniform(0.1, 1.0, 9))
        feats = t[None, :, None]
        valid = np.ones((1, 9), dtype=bool)
        k = 3
        nbr = knn_indices(feats, valid, k)
        for i in range(9):
            order = sorted(range(9), key=lambda j: (abs(t[j] - t[i]), j) if j != i else (np.inf, j))
            expected = order[:k]
            assert nbr[0, i, 0] == i
            assert nbr[0, i, 1:].tolist() == expected

    def test_two_valid_nodes_clamp(self):
        # K clamps to 1: the only real neighbor is the other valid node;
        # surplus slots self-pad, which max aggregation ignores
        feats = np.array([[[0.0], [1.0], [5.0]]])
        valid = np.array([[True, True, False]])
        nbr = knn_indices(feats, valid, 8)
        assert nbr[0, 0, 0] == 0 and nbr[0, 1, 0] == 1
        assert set(nbr[0, 0, 1:].tolist()) == {0, 1}
        assert 1 in nbr[0, 0, 1:]
        assert set(nbr[0, 1, 1:].tolist()) == {0, 1}
        assert 0 in nbr[0, 1, 1:]

    def test_single_valid_node_all_self(self):
        feats = np.zeros((1, 4, 2))
        valid = np.array([[True, False, False, False]])
        nbr = knn_indices(feats, valid, 8)
        assert (nbr[0, 0] == 0).all()

    def test_invalid_nodes_never_selected(self):
        rng = np.random.Generator(np.random.PCG64(4))
        feats = rng.normal(size=(2, 6, 3))
        valid = np.array([[True, True, False, True, False, True]] * 2)
        nbr = knn_indices(feats, valid, 3)
        for b in range(2):
            for i in range(6):
                for j in nbr[b, i, 1:]:
                    assert valid[b, j] or j == i


class TestDynamicEdgeConv:
    def test_padding_outputs_zero(self):
        rng = np.random.Generator(np.random.PCG64(5))
        x = rng.normal(size=(5, 3))
        valid = np.array([True, True, True, False, False])
        w = rng.normal(size=(6, 4))
        lin = make_linear(w, rng.normal(size=4))
        out = dynamic_edge_conv(x, 2, valid, lin, identity_bn(4), training=False)
        assert np.allclose(out.data[3:], 0.0)
        assert not np.allclose(out.data[:3], 0.0)

    def test_all_invalid_rejected(self):
        x = np.zeros((3, 2))
        lin = make_linear(np.ones((4, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            dynamic_edge_conv(x, 2, np.zeros(3, dtype=bool), lin, identity_bn(2))


class TestGcnForward:
    def test_stage_channel_lists(self):
        assert stage_config(0).channels == (64, 128, 128, 256, 256, 256, 1024, 512, 256, 64)
        assert stage_config(1).channels == (64, 128, 256, 256, 512, 256, 64)
        assert STAGE1_CHANNELS[-1] == 64 and REST_CHANNELS[-1] == 64

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GcnConfig(2, 2, 2, (8, 8, 8), knn=8, node_budget=16)

    def test_all_padding_except_center(self):
        cfg = stage_config(1, node_budget=16, knn=8, width_divisor=8)
        model = GcnModel(cfg, seed=0)
        attrs = np.zeros((1, 16, 8))
        attrs[0, 0] = [0, 0, 0, 1, 0, 0, 0.5, 3]
        nbr = np.zeros((1, 16, 4), dtype=int) + np.arange(16)[None, :, None]
        valid = np.zeros((1, 16), dtype=bool)
        valid[0, 0] = True
        out = gcn_forward(model, attrs, nbr, valid, training=False)
        assert np.isfinite(out.data).all()

    def test_permutation_contract(self, box444):
        cfg = stage_config(1, node_budget=32, knn=4, width_divisor=8)
        model = GcnModel(cfg, seed=1)
        graph = build_graph(box444, 40, 3.0, 32, seed=0)
        attrs, nbr, valid = prepare_batch([graph])
        base = gcn_forward(model, attrs, nbr, valid, training=False).data

        rng = np.random.Generator(np.random.PCG64(7))
        perm = np.concatenate([[0], 1 + rng.permutation(31)])
        inverse = np.argsort(perm)
        p_attrs = attrs[:, perm]
        p_valid = valid[:, perm]
        remapped_edges = np.array(
            [sorted((inverse[i], inverse[j])) for i, j in graph.edges], dtype=np.int64
        )
        permuted = PatchGraph(
            p_attrs[0], remapped_edges, 0, graph.rotation, graph.scale, graph.face_ids[perm]
        )
        pa, pn, pv = prepare_batch([permuted])
        out = gcn_forward(model, pa, pn, pv, training=False).data
        assert np.abs(out - base).max() < 1e-9

    def test_shape_mismatch_rejected(self):
        cfg = stage_config(1, node_budget=16, knn=4, width_divisor=8)
        model = GcnModel(cfg, seed=0)
        with pytest.raises(ValueError):
            gcn_forward(model, np.zeros((1, 8, 8)), np.zeros((1, 8, 4), dtype=int),
                        np.ones((1, 8), dtype=bool))

    def test_batch_equals_single(self, box444):
        cfg = stage_config(1, node_budget=32, knn=4, width_divisor=8)
        model = GcnModel(cfg, seed=3)
        graphs = [build_graph(box444, f, 3.0, 32, seed=0) for f in range(6)]
        attrs, nbr, valid = prepare_batch(graphs)
        batched = gcn_forward(model, attrs, nbr, valid, training=False).data
        for i, g in enumerate(graphs):
            a, n, v = prepare_batch([g])
            single = gcn_forward(model, a, n, v, training=False).data
            assert np.abs(single[0] - batched[i]).max() < 1e-10


class TestPredictNormal:
    def test_inverse_of_mapping(self):
        n, flag = predict_normal(np.array([0.5, 0.5, 1.0]), np.eye(3), np.array([1.0, 0, 0]))
        assert not flag
        assert np.allclose(n, [0, 0, 1])

    def test_round_trip_with_rotation(self):
        rng = np.random.Generator(np.random.PCG64(8))
        for _ in range(20):
            q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
            target = rng.normal(size=3)
            target /= np.linalg.norm(target)
            mapped = 0.5 * (q.T @ target + 1.0)
            n, flag = predict_normal(mapped, q, np.zeros(3))
            assert not flag
            assert np.abs(n - target).max() < 1e-9

    def test_degenerate_fallback(self):
        fallback = np.array([0.0, 1.0, 0.0])
        n, flag = predict_normal(np.full(3, 0.5), np.eye(3), fallback)
        assert flag
        assert np.array_equal(n, fallback)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg0 = stage_config(0, node_budget=16, knn=4, width_divisor=8)
        cfg1 = stage_config(1, node_budget=16, knn=4, width_divisor=8)
        cascade = Cascade([GcnModel(cfg0, seed=5), GcnModel(cfg1, seed=6)], k=3.5)
        cascade.models[0].step_count = 77
        states = [
            {"t": np.array([77.0]), "m:x": np.arange(3.0)},
            {"t": np.array([0.0])},
        ]
        path = tmp_path / "model.bin"
        save_cascade(path, cascade, states)
        loaded, loaded_states = load_cascade(path)
        assert loaded.k == 3.5
        assert loaded.models[0].step_count == 77
        for (na, pa), (nb, pb) in zip(
            cascade.models[0].named_parameters(), loaded.models[0].named_parameters()
        ):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)
        assert np.array_equal(loaded_states[0]["m:x"], np.arange(3.0))
        # byte-stable writes
        path2 = tmp_path / "model2.bin"
        save_cascade(path2, loaded, loaded_states)
        assert path.read_bytes() == path2.read_bytes()

    def test_forward_identical_after_reload(self, tmp_path, box444):
        cfg = stage_config(1, node_budget=32, knn=4, width_divisor=8)
        cascade = Cascade([GcnModel(cfg, seed=9)], k=3.0)
        graph = build_graph(box444, 12, 3.0, 32, seed=0)
        attrs, nbr, valid = prepare_batch([graph])
        before = gcn_forward(cascade.models[0], attrs, nbr, valid, training=False).data
        path = tmp_path / "m.bin"
        save_cascade(path, cascade)
        loaded, _ = load_cascade(path)
        after = gcn_forward(loaded.models[0], attrs, nbr, valid, training=False).data
        assert np.array_equal(before, after)

    def test_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"garbage")
        with pytest.raises(ValueError):
            load_cascade(p)
