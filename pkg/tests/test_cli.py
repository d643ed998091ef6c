import json
import sys
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from togpipe import __version__
from togpipe.cli import main
from togpipe.config import load_config
from togpipe.features import EmbeddingVector, write_embedding, write_feature_map
from togpipe.geometry import CameraIntrinsics, save_intrinsics
from togpipe.memory import MemoryStore, load_store
from togpipe.retrieval import RankedCandidate, SubprocessReRanker, rerank
from togpipe.errors import ReRankerFailure
from togpipe.synthetic import SceneSpec, generate_scene

from conftest import random_feature_map


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def scene(tmp_path):
    return generate_scene(0, SceneSpec(n_points=20), tmp_path / "scene")


def write_record(records_dir: Path, stem: str, corrupt: bool = False):
    records_dir.mkdir(parents=True, exist_ok=True)
    K = CameraIntrinsics(500, 500, 320, 240, 640, 480)
    save_intrinsics(K, records_dir / f"{stem}.intrinsics.txt")
    doc = {
        "image_ref": f"{stem}.png",
        "contact_points": [[100, 100], [120, 110]],
        "contact_frame_index": 5,
        "wrist_trajectory": [[0, 0, 1 - 0.01 * k] for k in range(20)],
        "task_text": f"task {stem}",
        "intrinsics_ref": f"{stem}.intrinsics.txt",
    }
    if corrupt:
        del doc["contact_points"]
    (records_dir / f"{stem}.json").write_text(json.dumps(doc))
    rng = np.random.default_rng(hash(stem) % 2**32)
    write_embedding(EmbeddingVector(rng.normal(size=8), "image"), records_dir / f"{stem}.image.rtae")
    write_embedding(EmbeddingVector(rng.normal(size=8), "text"), records_dir / f"{stem}.text.rtae")
    write_feature_map(random_feature_map(rng, 8, 8, 4), records_dir / f"{stem}.rtaf")


class TestVersion:
    def test_version_command(self, runner):
        res = runner.invoke(main, ["version"])
        assert res.exit_code == 0
        assert res.output.strip() == __version__


class TestBuildMemory:
    def test_three_records_nine_instances(self, runner, tmp_path):
        rec = tmp_path / "records"
        for stem in ["a", "b", "c"]:
            write_record(rec, stem)
        out = tmp_path / "index.json"
        res = runner.invoke(main, ["build-memory", str(rec), "--out", str(out)])
        assert res.exit_code == 0, res.output
        store = load_store(out)
        assert len(store) == 9
        augs = sorted(i.augmentation for i in store.instances)
        assert augs.count("original") == 3
        assert augs.count("hflip") == 3
        assert augs.count("vflip") == 3

    def test_no_flips(self, runner, tmp_path):
        rec = tmp_path / "records"
        write_record(rec, "a")
        out = tmp_path / "index.json"
        res = runner.invoke(main, ["build-memory", str(rec), "--out", str(out), "--no-flips"])
        assert res.exit_code == 0
        assert len(load_store(out)) == 1

    def test_corrupt_record_skipped_with_warning(self, runner, tmp_path):
        rec = tmp_path / "records"
        write_record(rec, "a")
        write_record(rec, "b", corrupt=True)
        write_record(rec, "c")
        out = tmp_path / "index.json"
        res = runner.invoke(main, ["build-memory", str(rec), "--out", str(out)])
        assert res.exit_code == 0
        assert "skipping record b.json" in res.output
        assert len(load_store(out)) == 6

    def test_empty_dir_exit_3(self, runner, tmp_path):
        rec = tmp_path / "records"
        rec.mkdir()
        res = runner.invoke(main, ["build-memory", str(rec), "--out", str(tmp_path / "i.json")])
        assert res.exit_code == 3

    def test_missing_dir_exit_2(self, runner, tmp_path):
        res = runner.invoke(
            main, ["build-memory", str(tmp_path / "nope"), "--out", str(tmp_path / "i.json")]
        )
        assert res.exit_code == 2


class TestGrasp:
    def test_end_to_end(self, runner, scene, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(
            main,
            [
                "grasp",
                "--memory", str(scene.memory_index),
                "--query", str(scene.query_manifest),
                "--out", str(out),
            ],
        )
        assert res.exit_code == 0, res.output
        assert "retrieved instance0" in res.output
        for name in ["retrieval.json", "constraint.json", "selection.json", "report.json"]:
            assert (out / name).exists()
        sel = json.loads((out / "selection.json").read_text())
        assert sel["index"] == scene.ground_truth["best_candidate_index"]

    def test_selection_byte_identical_across_runs(self, runner, scene, tmp_path):
        outs = []
        for name in ["r1", "r2"]:
            out = tmp_path / name
            res = runner.invoke(
                main,
                [
                    "grasp",
                    "--memory", str(scene.memory_index),
                    "--query", str(scene.query_manifest),
                    "--seed", "7",
                    "--out", str(out),
                ],
            )
            assert res.exit_code == 0, res.output
            outs.append((out / "selection.json").read_bytes())
        assert outs[0] == outs[1]

    def test_missing_candidates_names_alignment_stage(self, runner, scene, tmp_path):
        (scene.root / "target" / "candidates.json").unlink()
        res = runner.invoke(
            main,
            [
                "grasp",
                "--memory", str(scene.memory_index),
                "--query", str(scene.query_manifest),
                "--out", str(tmp_path / "run"),
            ],
        )
        assert res.exit_code == 4
        assert "alignment" in res.output

    def test_missing_manifest_exit_3(self, runner, scene, tmp_path):
        res = runner.invoke(
            main,
            [
                "grasp",
                "--memory", str(scene.memory_index),
                "--query", str(scene.root / "target" / "nope.json"),
                "--out", str(tmp_path / "run"),
            ],
        )
        assert res.exit_code == 2  # click path existence check


class TestStageIsolation:
    def test_retrieve_transfer_align_chain(self, runner, scene, tmp_path):
        mem = str(scene.memory_index)
        query = str(scene.query_manifest)
        r_out = tmp_path / "retrieval.json"
        res = runner.invoke(main, ["retrieve", "--memory", mem, "--query", query, "--out", str(r_out)])
        assert res.exit_code == 0, res.output
        assert json.loads(r_out.read_text())["selected_id"] == "instance0"

        c_out = tmp_path / "constraint.json"
        res = runner.invoke(
            main,
            ["transfer", "--memory", mem, "--query", query,
             "--retrieval", str(r_out), "--out", str(c_out)],
        )
        assert res.exit_code == 0, res.output
        constraint = json.loads(c_out.read_text())
        assert np.allclose(constraint["p_B_px"], scene.ground_truth["p_B_px"], atol=1e-6)

        s_out = tmp_path / "selection.json"
        res = runner.invoke(
            main,
            ["align", "--constraint", str(c_out),
             "--candidates", str(scene.root / "target" / "candidates.json"),
             "--out", str(s_out)],
        )
        assert res.exit_code == 0, res.output
        sel = json.loads(s_out.read_text())
        assert sel["index"] == scene.ground_truth["best_candidate_index"]

    def test_transfer_requires_instance_or_retrieval(self, runner, scene):
        res = runner.invoke(
            main,
            ["transfer", "--memory", str(scene.memory_index),
             "--query", str(scene.query_manifest)],
        )
        assert res.exit_code == 2

    def test_transfer_unknown_instance_exit_3(self, runner, scene):
        res = runner.invoke(
            main,
            ["transfer", "--memory", str(scene.memory_index),
             "--query", str(scene.query_manifest), "--instance", "ghost"],
        )
        assert res.exit_code == 3


class TestSynthVerify:
    def test_synth_then_verify(self, runner, tmp_path):
        res = runner.invoke(
            main, ["synth", "--seed", "3", "--out", str(tmp_path / "s"), "--n-points", "20"]
        )
        assert res.exit_code == 0, res.output
        assert (tmp_path / "s" / "ground_truth.json").exists()

        res = runner.invoke(
            main,
            ["verify", "--seeds", "3:5", "--out", str(tmp_path / "v"), "--n-points", "20"],
        )
        assert res.exit_code == 0, res.output
        assert "2/2 scenes passed" in res.output
        report = json.loads((tmp_path / "v" / "verify_report.json").read_text())
        assert report["passed"] == 2

    def test_verify_empty_range_exit_2(self, runner, tmp_path):
        res = runner.invoke(main, ["verify", "--seeds", "5:5", "--out", str(tmp_path / "v")])
        assert res.exit_code == 2

    def test_synth_invalid_spec_exit_3(self, runner, tmp_path):
        res = runner.invoke(
            main, ["synth", "--seed", "0", "--out", str(tmp_path / "s"), "--n-points", "4"]
        )
        assert res.exit_code == 3


class TestConfig:
    def test_load_full_config(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(
            "\n".join(
                [
                    "[retrieval]",
                    "alpha = 0.7",
                    "coarse_m = 10",
                    "top_k = 3",
                    "[transfer]",
                    "ransac_seed = 9",
                    "depth_window = 7",
                    "[scoring]",
                    "sigma = 0.2",
                ]
            )
        )
        cfg = load_config(path)
        assert cfg.retrieval.alpha == 0.7
        assert cfg.retrieval.top_k == 3
        assert cfg.transfer.ransac_seed == 9
        assert cfg.transfer.depth_window == 7
        assert cfg.scoring.sigma == 0.2
        # unspecified sections keep defaults
        assert cfg.scoring.w_task == 0.95

    def test_invalid_values_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[retrieval]\nalpha = 1.5\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_reranker_cmd_string_split(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('[retrieval]\nreranker_cmd = "python3 rr.py --flag"\n')
        cfg = load_config(path)
        assert cfg.retrieval.reranker_cmd == ["python3", "rr.py", "--flag"]

    def test_grasp_honors_config(self, runner, scene, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[transfer]\nransac_seed = 11\n")
        res = runner.invoke(
            main,
            ["grasp", "--memory", str(scene.memory_index),
             "--query", str(scene.query_manifest),
             "--config", str(cfg), "--out", str(tmp_path / "run")],
        )
        assert res.exit_code == 0, res.output
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["config"]["transfer"]["ransac_seed"] == 11


class TestSubprocessReRanker:
    def _store(self):
        from test_memory import make_instance

        return MemoryStore(instances=[make_instance(f"c{i}") for i in range(3)])

    def _cands(self):
        return [RankedCandidate(f"c{i}", 1.0 - 0.1 * i) for i in range(3)]

    def test_reverse_reranker(self, tmp_path):
        script = tmp_path / "rr.py"
        script.write_text(
            "import json, sys\n"
            "req = json.load(sys.stdin)\n"
            "ids = [c['id'] for c in req['candidates']][::-1][: req['k']]\n"
            "print(json.dumps({'ordered_ids': ids}))\n"
        )
        rr = SubprocessReRanker([sys.executable, str(script)], self._store())
        out = rerank(rr, "task", self._cands(), k=2)
        assert [c.instance_id for c in out] == ["c2", "c1"]

    def test_malformed_reply_raises_and_rerank_falls_back(self, tmp_path):
        script = tmp_path / "rr.py"
        script.write_text("print('not json')\n")
        rr = SubprocessReRanker([sys.executable, str(script)], self._store())
        with pytest.raises(ReRankerFailure):
            rr("task", self._cands(), 2)
        out = rerank(rr, "task", self._cands(), k=2)
        assert [c.instance_id for c in out] == ["c0", "c1"]

    def test_nonzero_exit_raises(self, tmp_path):
        script = tmp_path / "rr.py"
        script.write_text("import sys; sys.exit(5)\n")
        rr = SubprocessReRanker([sys.executable, str(script)], self._store())
        with pytest.raises(ReRankerFailure):
            rr("task", self._cands(), 2)
