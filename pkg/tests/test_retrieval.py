import numpy as np
import pytest

from togpipe.errors import EmptyInput, EmptyMask, EmptyStore
from togpipe.features import EmbeddingVector, FeatureMap, normalize_rows
from togpipe.memory import MemoryStore
from togpipe.retrieval import (
    Query,
    RankedCandidate,
    compute_imd,
    geometric_select,
    identity_reranker,
    rerank,
    semantic_coarse_rank,
)

from conftest import random_feature_map
from test_memory import make_instance


def make_store_with_embeddings(rng, n=5, dim=8):
    store = MemoryStore()
    for i in range(n):
        inst = make_instance(f"inst{i}")
        inst.image_embedding = EmbeddingVector(rng.normal(size=dim), "image")
        inst.text_embedding = EmbeddingVector(rng.normal(size=dim), "text")
        store.add(inst)
    return store


def make_query(img, txt, fm=None):
    if fm is None:
        fm = random_feature_map(np.random.default_rng(99))
    return Query(
        image_embedding=EmbeddingVector(img, "image"),
        text_embedding=EmbeddingVector(txt, "text"),
        target_feature_map=fm,
    )


class TestSemanticCoarseRank:
    def test_self_similarity_first(self):
        rng = np.random.default_rng(0)
        store = make_store_with_embeddings(rng)
        target = store.instances[2]
        q = make_query(target.image_embedding.values, target.text_embedding.values)
        ranked = semantic_coarse_rank(q, store, m=5)
        assert ranked[0].instance_id == "inst2"
        assert ranked[0].semantic_score == pytest.approx(1.0, abs=1e-6)

    def test_alpha_weighting(self):
        rng = np.random.default_rng(1)
        store = MemoryStore()
        inst = make_instance("only")
        inst.image_embedding = EmbeddingVector([1, 0, 0, 0], "image")
        inst.text_embedding = EmbeddingVector([0, 1, 0, 0], "text")
        store.add(inst)
        # image sim 1.0, text sim 0.0 -> score 0.5
        q = make_query([1, 0, 0, 0], [0, 0, 1, 0])
        ranked = semantic_coarse_rank(q, store, m=1)
        assert ranked[0].semantic_score == pytest.approx(0.5, abs=1e-6)

    def test_orthogonal_all_zero_ordered_by_id(self):
        store = MemoryStore()
        for i in [2, 0, 1]:
            inst = make_instance(f"i{i}")
            e = np.zeros(4)
            e[i] = 1.0
            inst.image_embedding = EmbeddingVector(e, "image")
            inst.text_embedding = EmbeddingVector(e, "text")
            store.add(inst)
        q = make_query([0, 0, 0, 1], [0, 0, 0, 1])
        ranked = semantic_coarse_rank(q, store, m=3)
        assert [c.instance_id for c in ranked] == ["i0", "i1", "i2"]
        assert all(abs(c.semantic_score) < 1e-6 for c in ranked)

    def test_sorted_and_deterministic(self):
        rng = np.random.default_rng(2)
        store = make_store_with_embeddings(rng, n=20)
        q = make_query(rng.normal(size=8), rng.normal(size=8))
        r1 = semantic_coarse_rank(q, store, m=10)
        r2 = semantic_coarse_rank(q, store, m=10)
        scores = [c.semantic_score for c in r1]
        assert scores == sorted(scores, reverse=True)
        assert [c.instance_id for c in r1] == [c.instance_id for c in r2]

    def test_empty_store(self):
        q = make_query([1, 0], [1, 0])
        with pytest.raises(EmptyStore):
            semantic_coarse_rank(q, MemoryStore(), m=1)


class TestRerank:
    def _cands(self, n=10):
        return [RankedCandidate(f"c{i:02d}", 1.0 - i * 0.1) for i in range(n)]

    def test_identity_passthrough(self):
        cands = self._cands(10)
        out = rerank(identity_reranker, "task", cands, k=5)
        assert [c.instance_id for c in out] == [c.instance_id for c in cands[:5]]

    def test_unknown_id_falls_back(self):
        cands = self._cands(4)

        def bad(task_text, candidates, k):
            return ["nonexistent"]

        out = rerank(bad, "task", cands, k=2)
        assert [c.instance_id for c in out] == ["c00", "c01"]

    def test_k_larger_than_count(self):
        cands = self._cands(3)
        out = rerank(identity_reranker, "task", cands, k=10)
        assert len(out) == 3

    def test_oversized_reply_falls_back(self):
        cands = self._cands(5)

        def greedy(task_text, candidates, k):
            return [c.instance_id for c in candidates]

        out = rerank(greedy, "task", cands, k=2)
        assert len(out) == 2

    def test_empty_candidates(self):
        with pytest.raises(EmptyInput):
            rerank(identity_reranker, "task", [], k=3)


class TestIMD:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            fm = random_feature_map(rng, 6, 6, 5, full_mask=False)
            imd = compute_imd(fm, fm)
            assert 0.0 <= imd < 1e-6

    def test_orthogonal_distance_one(self):
        a = np.zeros((1, 2, 4), dtype=np.float32)
        a[0, 0] = [1, 0, 0, 0]
        a[0, 1] = [0, 1, 0, 0]
        b = np.zeros((1, 2, 4), dtype=np.float32)
        b[0, 0] = [0, 0, 1, 0]
        b[0, 1] = [0, 0, 0, 1]
        mask = np.ones((1, 2), dtype=bool)
        src = FeatureMap(1, 2, 4, a, mask)
        tgt = FeatureMap(1, 2, 4, b, mask)
        assert compute_imd(src, tgt) == pytest.approx(1.0, abs=1e-9)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            src = random_feature_map(rng, 2, 2, 4, full_mask=False)
            tgt = random_feature_map(rng, 2, 2, 4, full_mask=False)
            # brute-force oracle
            fs = src.masked_features().astype(np.float64)
            ft = tgt.masked_features().astype(np.float64)
            total = 0.0
            for f in fs:
                best = -np.inf
                for g in ft:
                    best = max(best, float(np.dot(f, g)))
                total += 1.0 - best
            oracle = total / len(fs)
            assert compute_imd(src, tgt) == pytest.approx(oracle, abs=1e-6)

    def test_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = random_feature_map(rng, 4, 4, 3, full_mask=False)
            b = random_feature_map(rng, 4, 4, 3, full_mask=False)
            imd = compute_imd(a, b)
            assert 0.0 <= imd <= 2.0

    def test_empty_mask(self):
        rng = np.random.default_rng(6)
        fm = random_feature_map(rng, 3, 3, 3)
        empty = FeatureMap(3, 3, 3, fm.data, np.zeros((3, 3), dtype=bool))
        with pytest.raises(EmptyMask):
            compute_imd(empty, fm)


class TestGeometricSelect:
    def test_exact_duplicate_wins(self):
        rng = np.random.default_rng(7)
        target = random_feature_map(rng, 6, 6, 5)
        q = make_query(rng.normal(size=4), rng.normal(size=4), fm=target)
        cands = [
            (RankedCandidate("other", 0.5), random_feature_map(rng, 6, 6, 5)),
            (RankedCandidate("dup", 0.5), target),
        ]
        best = geometric_select(cands, q)
        assert best.instance_id == "dup"
        assert best.imd == pytest.approx(0.0, abs=1e-6)

    def test_single_candidate(self):
        rng = np.random.default_rng(8)
        fm = random_feature_map(rng)
        q = make_query(rng.normal(size=4), rng.normal(size=4), fm=fm)
        best = geometric_select([(RankedCandidate("solo", 0.1), fm)], q)
        assert best.instance_id == "solo"

    def test_distortion_ranking_matches_oracle(self):
        rng = np.random.default_rng(9)
        target = random_feature_map(rng, 6, 6, 5)
        cands = []
        for i, scale in enumerate([0.05, 0.2, 0.6]):
            noisy = normalize_rows(
                target.data + scale * rng.normal(size=target.data.shape).astype(np.float32)
            )
            cands.append(
                (RankedCandidate(f"c{i}", 0.5), FeatureMap(6, 6, 5, noisy, target.mask))
            )
        q = make_query(rng.normal(size=4), rng.normal(size=4), fm=target)
        best = geometric_select(cands, q)
        oracle = min(cands, key=lambda cf: compute_imd(cf[1], target))[0]
        assert best.instance_id == oracle.instance_id == "c0"

    def test_permutation_invariance(self):
        rng = np.random.default_rng(10)
        target = random_feature_map(rng, 5, 5, 4)
        cands = [
            (RankedCandidate(f"c{i}", 0.5), random_feature_map(rng, 5, 5, 4))
            for i in range(4)
        ]
        q = make_query(rng.normal(size=4), rng.normal(size=4), fm=target)
        a = geometric_select(list(cands), q)
        b = geometric_select(list(reversed(cands)), q)
        assert a.instance_id == b.instance_id

    def test_empty(self):
        rng = np.random.default_rng(11)
        q = make_query(rng.normal(size=4), rng.normal(size=4))
        with pytest.raises(EmptyInput):
            geometric_select([], q)
