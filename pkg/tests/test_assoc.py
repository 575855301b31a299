import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instassoc.assoc import (
    AssociationConfig,
    Detection,
    MemoryBank,
    OnlineAssociator,
    OutOfOrderFrameError,
    TrackedInstance,
    associate_frame,
    similarity_from_embeddings,
    similarity_matrix,
    similarity_terms,
    temporal_embedding,
    temporal_weights,
)
from instassoc.geometry import Box


def unit(i, dim=8):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def det(emb, score=0.9, x=0.0, class_id=0, gt=None):
    return Detection(Box(x, 0.0, x + 0.05, 0.05), class_id, score, emb, gt)


def instance(track_id, embeddings, sigma=1, window=3):
    return TrackedInstance(track_id, deque(embeddings, maxlen=window), sigma, 0, 0)


def bank_of(instances, window=3):
    bank = MemoryBank(window)
    bank.instances = list(instances)
    bank.next_id = max((i.track_id for i in instances), default=0) + 1
    return bank


class TestTemporalEmbedding:
    def test_weights_example(self):
        np.testing.assert_allclose(temporal_weights(3, 0.5), [3.5 / 7, 2.0 / 7, 1.5 / 7], atol=1e-15)
        np.testing.assert_allclose(temporal_weights(3, 0.5), [0.5, 0.285714, 0.214286], atol=1e-6)

    def test_three_frame_example(self):
        inst = instance(1, [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(temporal_embedding(inst, 0.5), [0.5, 0.285714], atol=1e-6)

    def test_identical_history(self):
        e = np.array([0.3, -0.4, 0.5])
        inst = instance(1, [e, e, e])
        np.testing.assert_allclose(temporal_embedding(inst, 0.7), e, atol=1e-15)

    @pytest.mark.parametrize("tau", [0.0, 0.5, 3.0])
    def test_single_entry(self, tau):
        inst = instance(1, [[0.2, 0.9]])
        np.testing.assert_allclose(temporal_embedding(inst, tau), [0.2, 0.9])

    @given(st.integers(1, 30), st.floats(0, 100))
    def test_weights_are_convex_and_decreasing(self, length, tau):
        w = temporal_weights(length, tau)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w > 0)
        assert np.all(np.diff(w) <= 1e-15)

    def test_push_is_most_recent_first(self):
        inst = instance(1, [unit(0)])
        inst.push(unit(1))
        inst.push(unit(2))
        inst.push(unit(3))
        # window 3: oldest (unit 0) evicted, most recent first
        assert [int(np.argmax(h)) for h in inst.history] == [3, 2, 1]
        np.testing.assert_allclose(inst.temporal_embedding(0.5)[[3, 2, 1]], temporal_weights(3, 0.5))


class TestSimilarity:
    def test_single_pair_is_one(self):
        for dot, sigma in [(0.3, 0.0), (-5.0, 7.0), (40.0, 1e4)]:
            f = similarity_from_embeddings([[dot, 0.0]], [[1.0, 0.0]], [sigma])
            assert f[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_two_track_example(self):
        f = similarity_from_embeddings([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
        e = math.e
        assert f[0, 0] == pytest.approx((e / (e + 1) + 1) / 2, abs=1e-12)
        assert f[0, 1] == pytest.approx((1 / (e + 1) + 1) / 2, abs=1e-12)
        np.testing.assert_allclose(f[0], [0.865529, 0.634471], atol=1e-6)

    def test_sigma_added_to_numerator_and_denominator(self):
        dets = np.array([[0.2, 0.1], [-0.3, 0.4]])
        tracks = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        sigma = np.array([2.0, 5.0, 1.0])
        first, second = similarity_terms(dets, tracks, sigma)
        e = np.exp(dets @ tracks.T)
        for i in range(2):
            for j in range(3):
                assert first[i, j] == pytest.approx((e[i, j] + sigma[j]) / (e[i].sum() + sigma.sum()))
                assert second[i, j] == pytest.approx(e[i, j] / e[:, j].sum())

    @settings(max_examples=50)
    @given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 2**32 - 1), st.floats(0, 1e4))
    def test_rows_and_columns_normalize(self, n, m, seed, sigma_max):
        rng = np.random.default_rng(seed)
        dets = rng.normal(size=(n, 16))
        tracks = rng.normal(size=(m, 16))
        sigma = rng.uniform(0, sigma_max, size=m)
        first, second = similarity_terms(dets, tracks, sigma)
        np.testing.assert_allclose(first.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(second.sum(axis=0), 1.0, atol=1e-9)
        f = (first + second) / 2
        assert np.all(f > 0) and np.all(f <= 1 + 1e-12)

    def test_empty(self):
        assert similarity_from_embeddings(np.zeros((0, 4)), np.ones((2, 4)), [1, 1]).shape == (0, 2)
        assert similarity_matrix([det(unit(0))], MemoryBank()).shape == (1, 0)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            similarity_terms(np.ones((1, 3)), np.ones((1, 4)), [1])

    def test_scale_sharpens(self):
        dets = [[1.0, 0.0, 0.0]]
        tracks = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        low = similarity_from_embeddings(dets, tracks, [1, 1, 1], scale=1.0)
        high = similarity_from_embeddings(dets, tracks, [1, 1, 1], scale=10.0)
        assert high[0, 0] > low[0, 0]
        assert low[0].argmax() == high[0].argmax() == 0


class TestAssociateFrame:
    def test_bootstrap(self):
        bank = MemoryBank()
        res = associate_frame([det(unit(0))], bank)
        assert res.assignments[0].track_id == 1
        assert res.assignments[0].match_score is None
        assert len(bank) == 1 and bank.instances[0].sigma == 1

    def test_argmax_before_threshold(self):
        bank = bank_of([instance(1, [[1.0, 0.0]], sigma=0), instance(2, [[0.0, 1.0]], sigma=0)])
        res = associate_frame([det([1.0, 0.0])], bank, AssociationConfig())
        a = res.assignments[0]
        assert a.track_id == 1
        assert a.match_score == pytest.approx(0.865529, abs=1e-6)

    def test_both_thresholds_fail(self):
        # track 2 and 3 see det B alongside a confident det A; B's best f stays below 0.5
        tracks = [instance(k + 1, [unit(k)], sigma=0) for k in range(3)]
        bank = bank_of(tracks)
        cfg = AssociationConfig(similarity_scale=10.0)
        dets = [det(unit(0), 0.9, x=0.0), det(unit(4), 0.1, x=0.5)]
        f = similarity_matrix(dets, bank, cfg)
        assert f[1].max() < 0.5
        res = associate_frame(dets, bank, cfg)
        assert res.track_of(1) is None
        assert res.track_of(0) == 1
        assert len(bank) == 3

    def test_conflict_goes_to_higher_score_and_loser_spawns(self):
        bank = MemoryBank()
        associate_frame([det(unit(0))], bank)
        cfg = AssociationConfig(similarity_scale=10.0)
        near = normalize_vec(unit(0) + 0.05 * unit(1))
        res = associate_frame([det(near, x=0.0), det(unit(0), x=0.5)], bank, cfg)
        assert res.track_of(1) == 1
        assert res.track_of(0) == 2

    def test_nms_assignments_refer_to_raw_indices(self):
        bank = MemoryBank()
        dets = [det(unit(0), 0.5), det(unit(1), 0.9), det(unit(2), 0.7, x=0.5)]
        res = associate_frame(dets, bank)
        assert [a.det_index for a in res.assignments] == [1, 2]

    def test_empty_frame_still_ages_sigma(self):
        bank = MemoryBank()
        associate_frame([det(unit(0))], bank)
        res = associate_frame([], bank)
        assert res.assignments == []
        assert bank.instances[0].sigma == 2

    def test_out_of_order(self):
        bank = MemoryBank()
        associate_frame([det(unit(0))], bank, frame_index=5)
        with pytest.raises(OutOfOrderFrameError):
            associate_frame([det(unit(0))], bank, frame_index=5)
        with pytest.raises(OutOfOrderFrameError):
            associate_frame([det(unit(0))], bank, frame_index=2)

    def test_max_age_evicts(self):
        eng = OnlineAssociator(AssociationConfig(max_age=1, similarity_scale=10.0))
        eng.step([det(unit(0))])
        eng.step([])
        assert len(eng.bank) == 1
        eng.step([])
        assert len(eng.bank) == 0
        assert eng.step([det(unit(0))]).assignments[0].track_id == 2

    def test_matched_sigma_mode(self):
        eng = OnlineAssociator(AssociationConfig(sigma_mode="matched", similarity_scale=10.0))
        eng.step([det(unit(0)), det(unit(1), x=0.5)])
        eng.step([det(unit(0))])
        sig = {i.track_id: i.sigma for i in eng.bank.instances}
        assert sig == {1: 2, 2: 1}

    def test_config_validation(self):
        for bad in (dict(match_threshold=1.5), dict(window_T=0), dict(tau=-1), dict(max_age=-1),
                    dict(similarity_scale=0), dict(sigma_mode="bogus")):
            with pytest.raises(ValueError):
                AssociationConfig(**bad)


def normalize_vec(v):
    return v / np.linalg.norm(v)


def random_stream(seed, n_frames=15, dim=8):
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(n_frames):
        k = int(rng.integers(0, 7))
        frames.append([
            Detection(Box(*(lambda x, y: (x, y, x + 0.05, y + 0.05))(*rng.uniform(0, 0.9, 2))),
                      0, float(rng.uniform(0, 1)), normalize_vec(rng.normal(size=dim)))
            for _ in range(k)
        ])
    return frames


class TestInvariants:
    @pytest.mark.parametrize("seed", range(10))
    def test_stream_invariants(self, seed):
        eng = OnlineAssociator(AssociationConfig(similarity_scale=float(1 + seed)))
        seen_ids = set()
        sigma_before = {}
        for frame in random_stream(seed):
            res = eng.step(frame)
            ids = [a.track_id for a in res.assignments if a.track_id is not None]
            assert len(ids) == len(set(ids))
            new = {a.track_id for a in res.assignments if a.track_id is not None and a.match_score is None}
            assert not new & seen_ids
            seen_ids |= set(ids)
            for inst in eng.bank.instances:
                if inst.track_id in sigma_before:
                    assert inst.sigma == sigma_before[inst.track_id] + 1
                else:
                    assert inst.sigma == 1
            sigma_before = {i.track_id: i.sigma for i in eng.bank.instances}
        # unbounded max_age keeps every created track as a candidate
        assert eng.bank.track_ids() == list(range(1, eng.bank.next_id))

    def test_determinism(self):
        runs = []
        for _ in range(2):
            eng = OnlineAssociator(AssociationConfig(similarity_scale=5.0))
            runs.append([eng.step(f) for f in random_stream(42)])
        assert runs[0] == runs[1]
