"""Pipeline configuration: one TOML file, defaults matching the module defaults."""
from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field, asdict
from pathlib import Path


@dataclass
class RetrievalConfig:
    alpha: float = 0.5
    coarse_m: int = 20
    top_k: int = 5
    reranker_cmd: list[str] = field(default_factory=list)
    imd_enabled: bool = True

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("retrieval.alpha must be in [0,1]")
        if self.coarse_m < 1 or self.top_k < 1:
            raise ValueError("retrieval.coarse_m and top_k must be >= 1")


@dataclass
class TransferConfig:
    ransac_threshold_px: float = 8.0
    ransac_iters: int = 1000
    ransac_seed: int = 0
    match_confidence_min: float = 0.3
    depth_window: int = 5
    softargmax_tau: float = 0.05

    def __post_init__(self):
        if self.ransac_threshold_px <= 0:
            raise ValueError("transfer.ransac_threshold_px must be positive")
        if self.ransac_iters < 1:
            raise ValueError("transfer.ransac_iters must be >= 1")
        if self.depth_window < 1 or self.depth_window % 2 == 0:
            raise ValueError("transfer.depth_window must be a positive odd number")
        if self.softargmax_tau <= 0:
            raise ValueError("transfer.softargmax_tau must be positive")


@dataclass
class ScoringConfig:
    sigma: float = 0.1
    w_task: float = 0.95
    w_geo: float = 0.05

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("scoring.sigma must be positive")
        if abs(self.w_task + self.w_geo - 1.0) > 1e-9:
            raise ValueError("scoring weights must sum to 1")


@dataclass
class PipelineConfig:
    memory_index_path: str = ""
    output_dir: str = ""
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> PipelineConfig:
    doc = tomllib.loads(Path(path).read_text())
    retrieval = doc.get("retrieval", {})
    cmd = retrieval.get("reranker_cmd", [])
    if isinstance(cmd, str):
        cmd = cmd.split() if cmd else []
    retrieval = dict(retrieval, reranker_cmd=cmd)
    return PipelineConfig(
        memory_index_path=doc.get("memory_index_path", ""),
        output_dir=doc.get("output_dir", ""),
        retrieval=RetrievalConfig(**retrieval),
        transfer=TransferConfig(**doc.get("transfer", {})),
        scoring=ScoringConfig(**doc.get("scoring", {})),
    )
