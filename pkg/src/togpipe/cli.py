"""Command-line interface for the grasp transfer pipeline.

Exit codes: 0 success, 2 usage error, 3 input error, 4 stage failure.
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click

from . import __version__
from .alignment import load_candidates
from .config import PipelineConfig, load_config
from .errors import TogError
from .memory import (
    MemoryStore,
    augment_flips,
    build_instance,
    load_record,
    load_store,
    save_store,
)
from .pipeline import (
    StageError,
    StoreAssets,
    load_query_inputs,
    run_alignment,
    run_grasp,
    run_retrieval,
    run_transfer,
)
from .synthetic import SceneSpec, generate_scene, verify_scene
from .transfer import constraint_from_json, constraint_to_json

EXIT_INPUT = 3
EXIT_STAGE = 4


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config_opt(config_path) -> PipelineConfig:
    if config_path is None:
        return PipelineConfig()
    try:
        return load_config(config_path)
    except (OSError, ValueError, TypeError) as e:
        _fail(EXIT_INPUT, f"cannot load config {config_path}: {e}")


@click.group()
@click.version_option(__version__)
def main():
    """Task-oriented grasp transfer: memory, retrieval, transfer, alignment."""


@main.command("version")
def version_cmd():
    """Print the package version."""
    click.echo(__version__)


@main.command("build-memory")
@click.argument("records_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(), help="Index JSON output path.")
@click.option("--no-flips", is_flag=True, help="Skip flip augmentation.")
def build_memory_cmd(records_dir, out_path, no_flips):
    """Build a memory index from demonstration record JSON files.

    Each RECORDS_DIR/<name>.json record is expected to sit beside its
    exporter outputs <name>.image.rtae, <name>.text.rtae, and <name>.rtaf.
    """
    records_dir = Path(records_dir)
    out_path = Path(out_path)
    store = MemoryStore(index_path=str(out_path))
    n_bad = 0
    for rec_path in sorted(records_dir.glob("*.json")):
        if rec_path.name == out_path.name:
            continue
        try:
            rec = load_record(rec_path)
            stem = rec_path.stem
            base = out_path.parent.resolve()

            def rel(p: Path) -> str:
                try:
                    return str(p.resolve().relative_to(base))
                except ValueError:
                    return str(p.resolve())

            inst = build_instance(
                rec,
                instance_id=stem,
                image_embedding_ref=rel(records_dir / f"{stem}.image.rtae"),
                text_embedding_ref=rel(records_dir / f"{stem}.text.rtae"),
                feature_map_ref=rel(records_dir / f"{stem}.rtaf"),
            )
            store.add(inst)
            if not no_flips:
                for flipped in augment_flips(inst):
                    store.add(flipped)
        except (TogError, ValueError, KeyError, OSError) as e:
            n_bad += 1
            click.echo(f"warning: skipping record {rec_path.name}: {e}", err=True)
    if len(store) == 0:
        _fail(EXIT_INPUT, f"no valid records in {records_dir}")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_store(store, out_path)
    click.echo(
        f"wrote {len(store)} instances to {out_path}"
        + (f" ({n_bad} records skipped)" if n_bad else "")
    )


def _common_pipeline_inputs(memory, query, config):
    cfg = _load_config_opt(config)
    try:
        store = load_store(memory)
        assets = StoreAssets(store)
        inputs = load_query_inputs(query)
    except (OSError, ValueError, KeyError, TogError) as e:
        _fail(EXIT_INPUT, f"cannot load inputs: {e}")
    return cfg, store, assets, inputs


@main.command("retrieve")
@click.option("--memory", required=True, type=click.Path(exists=True))
@click.option("--query", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="Print result JSON to stdout.")
def retrieve_cmd(memory, query, config, out_path, as_json):
    """Retrieve the best-matching memory instance for a query."""
    cfg, store, assets, inputs = _common_pipeline_inputs(memory, query, config)
    try:
        result = run_retrieval(store, assets, inputs.query, inputs.task_text, cfg)
    except TogError as e:
        _fail(EXIT_STAGE, f"stage 'retrieval' failed: {e}")
    doc = json.dumps(result, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(doc)
    if as_json or not out_path:
        click.echo(doc)


@main.command("transfer")
@click.option("--memory", required=True, type=click.Path(exists=True))
@click.option("--query", required=True, type=click.Path(exists=True))
@click.option("--instance", "instance_id", help="Memory instance id to transfer from.")
@click.option("--retrieval", "retrieval_path", type=click.Path(exists=True),
              help="retrieval.json from a previous `retrieve` run.")
@click.option("--config", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def transfer_cmd(memory, query, instance_id, retrieval_path, config, out_path, as_json):
    """Transfer grasp constraints from a memory instance onto the query object."""
    if not instance_id and not retrieval_path:
        raise click.UsageError("provide --instance or --retrieval")
    cfg, store, assets, inputs = _common_pipeline_inputs(memory, query, config)
    if not instance_id:
        try:
            instance_id = json.loads(Path(retrieval_path).read_text())["selected_id"]
        except (OSError, ValueError, KeyError) as e:
            _fail(EXIT_INPUT, f"cannot read retrieval result: {e}")
    try:
        constraint = run_transfer(store, assets, instance_id, inputs, cfg)
    except KeyError:
        _fail(EXIT_INPUT, f"unknown instance id {instance_id!r}")
    except TogError as e:
        _fail(EXIT_STAGE, f"stage 'transfer' failed: {e}")
    doc = json.dumps(constraint_to_json(constraint), indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(doc)
    if as_json or not out_path:
        click.echo(doc)


@main.command("align")
@click.option("--constraint", "constraint_path", required=True, type=click.Path(exists=True))
@click.option("--candidates", "candidates_path", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def align_cmd(constraint_path, candidates_path, config, out_path, as_json):
    """Score grasp candidates against a transferred constraint."""
    cfg = _load_config_opt(config)
    try:
        constraint = constraint_from_json(json.loads(Path(constraint_path).read_text()))
        candidates = load_candidates(candidates_path)
    except (OSError, ValueError, KeyError) as e:
        _fail(EXIT_INPUT, f"cannot load alignment inputs: {e}")
    try:
        selection = run_alignment(candidates, constraint, cfg)
    except TogError as e:
        _fail(EXIT_STAGE, f"stage 'alignment' failed: {e}")
    doc = json.dumps(selection, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(doc)
    if as_json or not out_path:
        click.echo(doc)


@main.command("grasp")
@click.option("--memory", required=True, type=click.Path(exists=True))
@click.option("--query", required=True, type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True))
@click.option("--seed", type=int, help="Override the RANSAC seed from the config.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def grasp_cmd(memory, query, config, seed, out_dir, as_json):
    """Run retrieval, transfer, and alignment end to end."""
    cfg = _load_config_opt(config)
    if seed is not None:
        cfg.transfer.ransac_seed = seed
    try:
        result = run_grasp(memory, query, cfg, out_dir)
    except StageError as e:
        _fail(EXIT_INPUT if e.stage == "input" else EXIT_STAGE, str(e))
    if as_json:
        click.echo(json.dumps(result["selection"], indent=2, sort_keys=True))
    else:
        click.echo(
            f"retrieved {result['retrieved_id']}; selected candidate "
            f"{result['selected_index']} (S={result['selection']['S']:.4f})"
        )


def _scene_spec_options(fn):
    opts = [
        click.option("--n-points", default=50, show_default=True, type=int),
        click.option("--noise-px", default=0.0, show_default=True, type=float),
        click.option("--outlier-fraction", default=0.0, show_default=True, type=float),
        click.option("--pose-magnitude", default=math.pi, show_default=True, type=float),
        click.option("--feature-dim", default=12, show_default=True, type=int),
        click.option("--distractors", default=2, show_default=True, type=int),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _make_spec(n_points, noise_px, outlier_fraction, pose_magnitude, feature_dim, distractors):
    try:
        return SceneSpec(
            n_points=n_points,
            noise_px=noise_px,
            outlier_fraction=outlier_fraction,
            pose_magnitude=pose_magnitude,
            feature_dim=feature_dim,
            n_distractors=distractors,
        )
    except TogError as e:
        _fail(EXIT_INPUT, f"invalid scene spec: {e}")


@main.command("synth")
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_scene_spec_options
def synth_cmd(seed, out_dir, **spec_kwargs):
    """Generate a synthetic ground-truth scene."""
    spec = _make_spec(**spec_kwargs)
    scene = generate_scene(seed, spec, out_dir)
    click.echo(f"scene written to {scene.root} (seed {seed})")


@main.command("verify")
@click.option("--seeds", required=True, help="Seed range START:END (END exclusive).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--rot-tol-deg", default=2.0, show_default=True, type=float)
@click.option("--dir-tol-deg", default=2.0, show_default=True, type=float)
@click.option("--px-tol", default=0.5, show_default=True, type=float)
@click.option("--json", "as_json", is_flag=True)
@_scene_spec_options
def verify_cmd(seeds, out_dir, rot_tol_deg, dir_tol_deg, px_tol, as_json, **spec_kwargs):
    """Generate scenes, run the pipeline, and check against ground truth."""
    try:
        start_s, _, end_s = seeds.partition(":")
        start, end = int(start_s), int(end_s)
    except ValueError:
        raise click.UsageError(f"bad --seeds value {seeds!r}; expected START:END")
    if end <= start:
        raise click.UsageError("empty seed range")
    spec = _make_spec(**spec_kwargs)
    out = Path(out_dir)
    reports = []
    n_pass = 0
    for seed in range(start, end):
        scene_dir = out / f"scene_{seed}"
        scene = generate_scene(seed, spec, scene_dir)
        try:
            result = run_grasp(
                scene.memory_index, scene.query_manifest, PipelineConfig(), scene_dir / "run"
            )
            report = verify_scene(scene_dir, result)
        except StageError as e:
            report = {"seed": seed, "error": str(e)}
        ok = (
            "error" not in report
            and report.get("selected_candidate_correct", False)
            and report.get("rotation_error_rad", math.inf) <= math.radians(rot_tol_deg)
            and report.get("direction_error_rad", math.inf) <= math.radians(dir_tol_deg)
            and report.get("p_B_px_error", math.inf) <= px_tol
        )
        report["pass"] = ok
        n_pass += ok
        reports.append(report)
    total = end - start
    aggregate = {
        "seeds": [start, end],
        "passed": n_pass,
        "total": total,
        "reports": reports,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify_report.json").write_text(json.dumps(aggregate, indent=2, sort_keys=True))
    if as_json:
        click.echo(json.dumps(aggregate, indent=2, sort_keys=True))
    else:
        click.echo(f"{n_pass}/{total} scenes passed")


if __name__ == "__main__":
    main()
