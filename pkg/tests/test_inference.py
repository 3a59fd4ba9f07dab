"""Keypoint-0 sampling and autoregressive rollout."""

import numpy as np
import pytest

from geomatch import errors
from geomatch.dataset import generate_toy_dataset, load_records
from geomatch.geometry import GeometryGraph, PointCloud, normalize_adjacency
from geomatch.inference import (load_proposals, propose_grasps, rollout,
                                sample_keypoint0, save_proposals)
from geomatch.model import GeoMatchModel, ModelConfig

TINY = ModelConfig(gcn_hidden=(6, 6, 6), gcn_out=8, proj_dim=4,
                   ar_hidden=(6, 6, 6))


@pytest.fixture(scope="module")
def small_world(tmp_path_factory):
    out = tmp_path_factory.mktemp("infer")
    man = generate_toy_dataset(seed=21, out_dir=out, s_o=48, s_g=48,
                               object_ids=["sphere_small"])
    samples = load_records(man, split="all", m=8)
    model = GeoMatchModel(TINY, seed=6)
    return model, samples


class TestSampleKeypoint0:
    def test_rank_ordering(self):
        picked = sample_keypoint0(np.array([0.1, 0.9, 0.5]), [0, 1, 2])
        assert picked == [1, 2, 0]

    def test_tie_break_lowest_index(self):
        picked = sample_keypoint0(np.zeros(5), [0, 1])
        assert picked == [0, 1]

    def test_default_ranks(self):
        from geomatch.inference import DEFAULT_RANKS
        assert DEFAULT_RANKS == (0, 20, 50, 100)

    def test_clamping_warns(self, caplog):
        with caplog.at_level("WARNING"):
            picked = sample_keypoint0(np.array([3.0, 1.0, 2.0]), [0, 10])
        assert picked[1] == 1      # worst vertex after clamping to rank 2
        assert "clamped" in caplog.text

    def test_empty_scores(self):
        with pytest.raises(errors.EmptyScores):
            sample_keypoint0(np.array([]), [0])


class TestRollout:
    def test_deterministic(self, small_world):
        model, samples = small_world
        s = samples[0]
        a = rollout(model, s.object_graph, s.ee, 3)
        b = rollout(model, s.object_graph, s.ee, 3)
        assert np.array_equal(a.contacts, b.contacts)
        assert a.score == b.score

    def test_six_contacts_valid(self, small_world):
        model, samples = small_world
        s = samples[0]
        prop = rollout(model, s.object_graph, s.ee, 0)
        assert prop.contacts.shape == (6,)
        assert prop.contacts.min() >= 0
        assert prop.contacts.max() < len(s.object_graph.cloud)
        assert np.allclose(prop.contact_points,
                           s.object_graph.cloud.points[prop.contacts])

    def test_argmax_recomputation(self, small_world):
        # every c_n equals the literal argmax of its logit vector
        model, samples = small_world
        s = samples[0]
        prop = rollout(model, s.object_graph, s.ee, 5)
        v_o, v_g = model.encode(s.object_graph, s.ee.rest_graph)
        kp = s.ee.keypoint_vertices
        pts = s.object_graph.cloud.points
        for n in range(1, 6):
            logits = model.ar_logits(n, v_o, v_g, int(kp[n]),
                                     prop.contacts[:n], pts).data
            assert prop.contacts[n] == int(np.argmax(logits))

    def test_out_of_range_c0(self, small_world):
        model, samples = small_world
        with pytest.raises(errors.IndexOutOfRange):
            rollout(model, samples[0].object_graph, samples[0].ee, 48)


class TestProposeGrasps:
    def test_one_proposal_per_rank(self, small_world):
        model, samples = small_world
        s = samples[0]
        props = propose_grasps(model, s.object_graph, s.ee, ranks=(0, 5, 11),
                               object_id="obj")
        assert len(props) == 3
        assert [p.keypoint0_rank for p in props] == [0, 5, 11]
        assert all(p.object_id == "obj" for p in props)

    def test_single_rank_best_chain(self, small_world):
        model, samples = small_world
        s = samples[0]
        v_o, v_g = model.encode(s.object_graph, s.ee.rest_graph)
        scores = model.score_map(v_o, v_g, s.ee.keypoint_vertices).data
        best = int(np.lexsort((np.arange(scores.shape[0]), -scores[:, 0]))[0])
        props = propose_grasps(model, s.object_graph, s.ee, ranks=(0,))
        assert props[0].contacts[0] == best

    def test_permutation_consistency(self, small_world, rng_np):
        model, samples = small_world
        s = samples[0]
        graph = s.object_graph
        perm = rng_np.permutation(len(graph.cloud))
        inv = np.argsort(perm)
        permuted = normalize_adjacency(GeometryGraph(
            cloud=PointCloud(graph.cloud.points[perm]),
            edges=np.stack([inv[graph.edges[:, 0]], inv[graph.edges[:, 1]]],
                           axis=1),
            knn_k=graph.knn_k))
        base = propose_grasps(model, graph, s.ee, ranks=(0, 3))
        moved = propose_grasps(model, permuted, s.ee, ranks=(0, 3))
        for a, b in zip(base, moved):
            assert np.array_equal(perm[b.contacts], a.contacts)
            assert np.allclose(a.contact_points, b.contact_points)

    def test_jsonl_roundtrip(self, small_world, tmp_path):
        model, samples = small_world
        s = samples[0]
        props = propose_grasps(model, s.object_graph, s.ee, ranks=(0, 2),
                               object_id="sph")
        path = tmp_path / "proposals.jsonl"
        save_proposals(props, path)
        back = load_proposals(path)
        assert len(back) == 2
        for a, b in zip(props, back):
            assert np.array_equal(a.contacts, b.contacts)
            assert a.score == pytest.approx(b.score)
            assert a.keypoint0_rank == b.keypoint0_rank
