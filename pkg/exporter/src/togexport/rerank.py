"""Re-ranker plug-in logic for the engine's JSON subprocess contract.

Request (stdin): {"task_text": str, "candidates": [{"id", "image_ref",
"task_text"}, ...], "k": int}. Reply (stdout): {"ordered_ids": [...]}
where ordered_ids is a duplicate-free subset of the candidate ids of
length at most k. The default heuristic ranks candidates by token overlap
between the query task text and each candidate's task text, keeping the
input order on ties, so replies are deterministic.
"""
from __future__ import annotations

from typing import Any


def _tokens(text: str) -> set[str]:
    return {t for t in text.lower().split() if t}


def validate_request(doc: Any) -> tuple[str, list[dict], int]:
    if not isinstance(doc, dict):
        raise ValueError("request must be a JSON object")
    try:
        task_text = doc["task_text"]
        candidates = doc["candidates"]
        k = doc["k"]
    except (KeyError, TypeError) as e:
        raise ValueError(f"missing request field: {e}") from e
    if not isinstance(task_text, str):
        raise ValueError("task_text must be a string")
    if not isinstance(k, int) or k < 1:
        raise ValueError("k must be a positive integer")
    if not isinstance(candidates, list) or not candidates:
        raise ValueError("candidates must be a non-empty list")
    ids = []
    for c in candidates:
        if not isinstance(c, dict) or not isinstance(c.get("id"), str):
            raise ValueError("each candidate needs a string id")
        ids.append(c["id"])
    if len(set(ids)) != len(ids):
        raise ValueError("candidate ids must be unique")
    return task_text, candidates, k


def rank(task_text: str, candidates: list[dict], k: int) -> list[str]:
    """Ordered ids: best task-text token overlap first, stable on ties."""
    query = _tokens(task_text)

    def overlap(c: dict) -> float:
        cand = _tokens(str(c.get("task_text", "")))
        if not query or not cand:
            return 0.0
        return len(query & cand) / len(query | cand)

    order = sorted(range(len(candidates)), key=lambda i: (-overlap(candidates[i]), i))
    return [candidates[i]["id"] for i in order[:k]]


def handle_request(doc: Any) -> dict:
    task_text, candidates, k = validate_request(doc)
    return {"ordered_ids": rank(task_text, candidates, k)}
