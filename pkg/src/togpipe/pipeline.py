"""Stage orchestration shared by the CLI: retrieval -> transfer -> alignment.

Each stage reads and writes plain files so any stage can be resumed from a
previous invocation's output.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

from .alignment import (
    GraspCandidate,
    ScoringParams,
    load_candidates,
    select_grasp,
    selection_to_json,
)
from .config import PipelineConfig
from .errors import TogError
from .features import FeatureMap, load_embedding, load_feature_map
from .geometry import CameraIntrinsics, load_intrinsics
from .memory import MemoryInstance, MemoryStore, load_store
from .retrieval import (
    Query,
    RankedCandidate,
    SubprocessReRanker,
    geometric_select,
    identity_reranker,
    rerank,
    resolve_ref,
    semantic_coarse_rank,
)
from .transfer import (
    DepthMap,
    TOGConstraint3D,
    constraint_to_json,
    load_depth_map,
    transfer_constraints,
)

REPORT_SCHEMA_VERSION = 1


class StageError(TogError):
    """Wraps a stage failure with the stage name for CLI reporting."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class QueryInputs:
    query: Query
    depth: DepthMap
    intrinsics: CameraIntrinsics
    candidates_path: Path
    task_text: str


def load_query_inputs(manifest_path) -> QueryInputs:
    """Read a query manifest JSON; refs resolve relative to the manifest."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    base = manifest_path.parent

    def ref(key: str) -> Path:
        return resolve_ref(base, doc[key])

    query = Query(
        image_embedding=load_embedding(ref("image_embedding_ref")),
        text_embedding=load_embedding(ref("text_embedding_ref")),
        target_feature_map=load_feature_map(ref("target_feature_map_ref")),
        target_image_ref=doc.get("target_image_ref", ""),
    )
    return QueryInputs(
        query=query,
        depth=load_depth_map(ref("depth_ref")),
        intrinsics=load_intrinsics(ref("intrinsics_ref")),
        candidates_path=ref("candidates_ref"),
        task_text=doc.get("task_text", ""),
    )


class StoreAssets:
    """Lazy, cached loading of per-instance files referenced by a store index."""

    def __init__(self, store: MemoryStore):
        self.store = store
        self.base = Path(store.index_path).parent if store.index_path else Path(".")
        self._emb_cache: dict[str, object] = {}
        self._fm_cache: dict[str, FeatureMap] = {}

    def embedding(self, ref: str):
        if ref not in self._emb_cache:
            self._emb_cache[ref] = load_embedding(resolve_ref(self.base, ref))
        return self._emb_cache[ref]

    def embeddings(self, inst: MemoryInstance):
        return (
            self.embedding(inst.image_embedding_ref).values,
            self.embedding(inst.text_embedding_ref).values,
        )

    def feature_map(self, inst: MemoryInstance) -> FeatureMap:
        ref = inst.feature_map_ref
        if ref not in self._fm_cache:
            self._fm_cache[ref] = load_feature_map(resolve_ref(self.base, ref))
        return self._fm_cache[ref]


def run_retrieval(
    store: MemoryStore, assets: StoreAssets, q: Query, task_text: str, cfg: PipelineConfig
) -> dict:
    """Coarse semantic ranking, re-ranking, and geometric selection."""
    rc = cfg.retrieval
    coarse = semantic_coarse_rank(
        q, store, rc.coarse_m, alpha=rc.alpha, embedding_loader=assets.embeddings
    )
    if rc.reranker_cmd:
        rr = SubprocessReRanker(rc.reranker_cmd, store)
    else:
        rr = identity_reranker
    topk = rerank(rr, task_text, coarse, rc.top_k)
    if rc.imd_enabled:
        with_maps = [(c, assets.feature_map(store.get(c.instance_id))) for c in topk]
        selected = geometric_select(with_maps, q)
    else:
        selected = topk[0]
    return {
        "selected_id": selected.instance_id,
        "semantic_ranking": [
            {"id": c.instance_id, "semantic_score": c.semantic_score} for c in coarse
        ],
        "top_k": [c.instance_id for c in topk],
        "imd_table": {
            c.instance_id: c.imd for c in topk if c.imd is not None
        },
    }


def run_transfer(
    store: MemoryStore,
    assets: StoreAssets,
    instance_id: str,
    inputs: QueryInputs,
    cfg: PipelineConfig,
) -> TOGConstraint3D:
    inst = store.get(instance_id)
    tc = cfg.transfer
    return transfer_constraints(
        inst,
        assets.feature_map(inst),
        inputs.query.target_feature_map,
        inputs.depth,
        inputs.intrinsics,
        tau=tc.softargmax_tau,
        min_confidence=tc.match_confidence_min,
        depth_window=tc.depth_window,
        ransac_threshold_px=tc.ransac_threshold_px,
        ransac_iters=tc.ransac_iters,
        ransac_seed=tc.ransac_seed,
    )


def run_alignment(
    candidates: list[GraspCandidate], constraint: TOGConstraint3D, cfg: PipelineConfig
) -> dict:
    params = ScoringParams(
        sigma=cfg.scoring.sigma, w_task=cfg.scoring.w_task, w_geo=cfg.scoring.w_geo
    )
    cand, _score, index = select_grasp(candidates, constraint, params)
    return selection_to_json(cand, index, constraint, params)


def run_grasp(memory_index, query_manifest, cfg: PipelineConfig, out_dir) -> dict:
    """Full pipeline run; writes retrieval/constraint/selection/report JSON files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    warnings: list[str] = []

    try:
        store = load_store(memory_index)
        assets = StoreAssets(store)
        inputs = load_query_inputs(query_manifest)
    except (OSError, ValueError, KeyError, TogError) as e:
        raise StageError("input", e)

    t0 = time.perf_counter()
    try:
        retrieval = run_retrieval(store, assets, inputs.query, inputs.task_text, cfg)
    except Exception as e:
        raise StageError("retrieval", e)
    timings["retrieval"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        constraint = run_transfer(
            store, assets, retrieval["selected_id"], inputs, cfg
        )
    except Exception as e:
        raise StageError("transfer", e)
    timings["transfer"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        candidates = load_candidates(inputs.candidates_path)
        selection = run_alignment(candidates, constraint, cfg)
    except Exception as e:
        raise StageError("alignment", e)
    timings["alignment"] = time.perf_counter() - t0

    constraint_doc = constraint_to_json(constraint)
    (out / "retrieval.json").write_text(json.dumps(retrieval, indent=2, sort_keys=True))
    (out / "constraint.json").write_text(
        json.dumps(constraint_doc, indent=2, sort_keys=True)
    )
    (out / "selection.json").write_text(json.dumps(selection, indent=2, sort_keys=True))
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "timings_s": timings,
        "retrieved_id": retrieval["selected_id"],
        "imd_table": retrieval["imd_table"],
        "pnp": constraint_doc.get("pnp"),
        "selection": selection,
        "warnings": warnings,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    return {
        "retrieved_id": retrieval["selected_id"],
        "p_B": constraint_doc["p_B"],
        "p_B_px": constraint_doc["p_B_px"],
        "v_B": constraint_doc["v_B"],
        "pnp": constraint_doc.get("pnp"),
        "selected_index": selection["index"],
        "selection": selection,
        "report": report,
    }
