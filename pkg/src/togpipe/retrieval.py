"""Two-stage retrieval: semantic coarse ranking, pluggable re-ranking, then
geometric selection by instance matching distance (IMD).

IMD between a memory candidate and the query object is the mean, over the
candidate's masked feature pixels, of the nearest-neighbour cosine distance
into the query's masked pixels; lower means a more similar viewpoint.
"""
from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import EmptyInput, EmptyMask, EmptyStore, ReRankerFailure
from .features import EmbeddingVector, FeatureMap, cosine_similarity
from .memory import MemoryInstance, MemoryStore

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5
DEFAULT_COARSE_M = 20
DEFAULT_TOP_K = 5


@dataclass
class Query:
    image_embedding: EmbeddingVector
    text_embedding: EmbeddingVector
    target_feature_map: FeatureMap
    target_image_ref: str = ""


@dataclass
class RankedCandidate:
    instance_id: str
    semantic_score: float
    imd: float | None = None


class ReRanker(Protocol):
    def __call__(
        self, task_text: str, candidates: Sequence[RankedCandidate], k: int
    ) -> list[str]:
        """Return an ordered list of at most k candidate ids (subset of input)."""
        ...


def identity_reranker(
    task_text: str, candidates: Sequence[RankedCandidate], k: int
) -> list[str]:
    """Default re-ranker: pass the first k candidates through unchanged."""
    return [c.instance_id for c in candidates[:k]]


class SubprocessReRanker:
    """Out-of-process re-ranker speaking the JSON plug-in contract.

    Request on stdin: {task_text, candidates:[{id, image_ref, task_text}...], k};
    reply on stdout: {ordered_ids:[...]}. Any malformed reply raises
    ReRankerFailure (callers fall back to the identity pass-through).
    """

    def __init__(self, command: Sequence[str], store: MemoryStore, timeout: float = 60.0):
        self.command = list(command)
        self.store = store
        self.timeout = timeout

    def __call__(
        self, task_text: str, candidates: Sequence[RankedCandidate], k: int
    ) -> list[str]:
        request = {
            "task_text": task_text,
            "candidates": [
                {
                    "id": c.instance_id,
                    "image_ref": self.store.get(c.instance_id).image_ref,
                    "task_text": self.store.get(c.instance_id).task_text,
                }
                for c in candidates
            ],
            "k": k,
        }
        try:
            proc = subprocess.run(
                self.command,
                input=json.dumps(request).encode(),
                capture_output=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise ReRankerFailure(f"re-ranker process failed: {e}") from e
        if proc.returncode != 0:
            raise ReRankerFailure(
                f"re-ranker exited {proc.returncode}: {proc.stderr.decode(errors='replace')[:500]}"
            )
        try:
            reply = json.loads(proc.stdout.decode())
            ordered = list(reply["ordered_ids"])
        except (ValueError, KeyError, TypeError) as e:
            raise ReRankerFailure(f"malformed re-ranker reply: {e}") from e
        return ordered


def semantic_coarse_rank(
    q: Query, store: MemoryStore, m: int, alpha: float = DEFAULT_ALPHA,
    embedding_loader: Callable[[MemoryInstance], tuple[np.ndarray, np.ndarray]] | None = None,
) -> list[RankedCandidate]:
    """Rank by alpha*cos(image) + (1-alpha)*cos(text), descending.

    Ties break by ascending instance id. ``embedding_loader`` maps an
    instance to its (image, text) embedding arrays; by default instances
    must carry embeddings in-memory.
    """
    if len(store) == 0:
        raise EmptyStore("cannot rank against an empty store")
    if m < 1:
        raise ValueError("m must be >= 1")

    def default_loader(inst: MemoryInstance):
        if inst.image_embedding is None or inst.text_embedding is None:
            raise ValueError(f"instance {inst.instance_id} has no loaded embeddings")
        return inst.image_embedding.values, inst.text_embedding.values

    loader = embedding_loader or default_loader
    scored = []
    for inst in store.instances:
        img_emb, txt_emb = loader(inst)
        s = alpha * cosine_similarity(q.image_embedding.values, img_emb) + (
            1.0 - alpha
        ) * cosine_similarity(q.text_embedding.values, txt_emb)
        scored.append(RankedCandidate(inst.instance_id, s))
    scored.sort(key=lambda c: (-c.semantic_score, c.instance_id))
    return scored[:m]


def rerank(
    rr: ReRanker,
    task_text: str,
    candidates: Sequence[RankedCandidate],
    k: int,
) -> list[RankedCandidate]:
    """Apply a re-ranker; on any contract violation fall back to the first k."""
    if not candidates:
        raise EmptyInput("no candidates to re-rank")
    by_id = {c.instance_id: c for c in candidates}
    try:
        ordered = rr(task_text, candidates, k)
        if len(ordered) > k or len(set(ordered)) != len(ordered):
            raise ReRankerFailure("reply has too many or duplicate ids")
        missing = [i for i in ordered if i not in by_id]
        if missing:
            raise ReRankerFailure(f"reply contains unknown ids {missing}")
    except ReRankerFailure as e:
        log.warning("re-ranker failed (%s); falling back to identity top-%d", e, k)
        ordered = [c.instance_id for c in candidates[:k]]
    return [by_id[i] for i in ordered]


def compute_imd(source: FeatureMap, target: FeatureMap) -> float:
    """Mean nearest-neighbour cosine distance from source mask into target mask."""
    if source.mask is None or not source.mask.any():
        raise EmptyMask("source feature map has no masked pixels")
    if target.mask is None or not target.mask.any():
        raise EmptyMask("target feature map has no masked pixels")
    fs = source.masked_features().astype(np.float64)
    ft = target.masked_features().astype(np.float64)
    # renormalize in double precision so self-distance vanishes to roundoff,
    # and clip so the distance stays in [0, 2]
    fs /= np.linalg.norm(fs, axis=1, keepdims=True)
    ft /= np.linalg.norm(ft, axis=1, keepdims=True)
    sims = np.clip(fs @ ft.T, -1.0, 1.0)
    return float(np.mean(1.0 - sims.max(axis=1)))


def geometric_select(
    candidates: Sequence[tuple[RankedCandidate, FeatureMap]], q: Query
) -> RankedCandidate:
    """Pick the candidate whose feature map is nearest the query by IMD."""
    if not candidates:
        raise EmptyInput("no candidates for geometric selection")
    best = None
    for cand, fm in sorted(candidates, key=lambda cf: cf[0].instance_id):
        imd = compute_imd(fm, q.target_feature_map)
        cand.imd = imd
        if best is None or imd < best.imd:
            best = cand
    return best


def resolve_ref(base: Path, ref: str) -> Path:
    """Resolve a store-relative file reference against the index location."""
    p = Path(ref)
    return p if p.is_absolute() else base / p
