"""Export jobs: run a backend over an image (and optional text) and write
the results in the engine's file formats, with a sidecar manifest pinning
what produced them."""
from __future__ import annotations

import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .backends import Backend
from .errors import InvalidJob
from .formats import write_embedding, write_feature_map

VALID_OUTPUTS = ("embedding", "feature_map", "mask")


@dataclass
class ExportJob:
    image_path: str
    out_dir: str
    text: str = ""
    outputs: tuple[str, ...] = ("embedding", "feature_map", "mask")

    def __post_init__(self):
        self.outputs = tuple(self.outputs)
        if not self.outputs:
            raise InvalidJob("job requests no outputs")
        unknown = [o for o in self.outputs if o not in VALID_OUTPUTS]
        if unknown:
            raise InvalidJob(f"unknown outputs {unknown}; valid: {VALID_OUTPUTS}")


def run_export(job: ExportJob, backend: Backend) -> dict:
    """Execute the job; returns the manifest that was written alongside."""
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(job.image_path).stem
    written: dict[str, str] = {}

    fm = mask = None
    if "feature_map" in job.outputs or "mask" in job.outputs:
        fm, mask = backend.feature_map(job.image_path)

    if "embedding" in job.outputs:
        img_path = out / f"{stem}.image.rtae"
        write_embedding(backend.embed_image(job.image_path), "image", img_path)
        written["image_embedding"] = img_path.name
        if job.text:
            txt_path = out / f"{stem}.text.rtae"
            write_embedding(backend.embed_text(job.text), "text", txt_path)
            written["text_embedding"] = txt_path.name

    if "feature_map" in job.outputs:
        fm_path = out / f"{stem}.rtaf"
        write_feature_map(fm, mask, fm_path)
        written["feature_map"] = fm_path.name

    if "mask" in job.outputs:
        mask_path = out / f"{stem}.mask.png"
        Image.fromarray((mask.astype(np.uint8)) * 255).save(mask_path)
        written["mask"] = mask_path.name

    manifest = {
        "tool": "togexport",
        "tool_version": __version__,
        "backend": backend.name,
        "fusion": "channel concatenation of per-stream-normalized feature streams",
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pillow": __import__("PIL").__version__,
        },
        "inputs": {"image": str(job.image_path), "text": job.text},
        "outputs": written,
    }
    (out / f"{stem}.manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True)
    )
    return manifest
