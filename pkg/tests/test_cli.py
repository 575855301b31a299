import json

import numpy as np
import pytest

from instassoc.cli import main
from instassoc.records import dumps


def read_jsonl(path):
    return [json.loads(line) for line in open(path) if line.strip()]


def one_object_config(tmp_path, extra=""):
    p = tmp_path / "one.ini"
    p.write_text("[scenario]\nn_objects = 1\nn_frames = 7\nembed_dim = 16\n" + extra)
    return str(p)


def simulate(tmp_path, *args, name="sim"):
    dets, gt = tmp_path / f"{name}_dets.jsonl", tmp_path / f"{name}_gt.jsonl"
    code = main(["simulate", *args, "--detections-out", str(dets), "--gt-out", str(gt)])
    return code, dets, gt


class TestSimulate:
    def test_minimal(self, tmp_path):
        code, dets, gt = simulate(tmp_path, "--config", one_object_config(tmp_path))
        assert code == 0
        assert len(read_jsonl(dets)) == 7 and len(read_jsonl(gt)) == 1

    def test_same_seed_same_files(self, tmp_path):
        _, d1, g1 = simulate(tmp_path, "--preset", "hard", "--seed", "4", name="a")
        _, d2, g2 = simulate(tmp_path, "--preset", "hard", "--seed", "4", name="b")
        assert d1.read_bytes() == d2.read_bytes() and g1.read_bytes() == g2.read_bytes()

    def test_occlusion_gap(self, tmp_path):
        cfg = one_object_config(tmp_path, "occlusion_events = [(0, 2, 5)]\n")
        _, dets, _ = simulate(tmp_path, "--config", cfg)
        counts = [len(r["detections"]) for r in read_jsonl(dets)]
        assert counts == [1, 1, 0, 0, 0, 1, 1]

    def test_needs_scenario(self, tmp_path, capsys):
        p = tmp_path / "empty.ini"
        p.write_text("[association]\ntau = 0.5\n")
        code, _, _ = simulate(tmp_path, "--config", str(p))
        assert code == 1
        assert "scenario" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path):
        code, _, _ = simulate(tmp_path, "--config", one_object_config(tmp_path, "n_frames = 0\n"))
        assert code == 1


class TestAssociate:
    def test_empty_input(self, tmp_path):
        src, out = tmp_path / "empty.jsonl", tmp_path / "out.jsonl"
        src.write_text("")
        assert main(["associate", "--detections", str(src), "--out", str(out)]) == 0
        assert out.read_text() == ""

    def test_single_detection(self, tmp_path):
        src, out = tmp_path / "one.jsonl", tmp_path / "out.jsonl"
        det = {"box": [0.1, 0.1, 0.2, 0.2], "class_id": 0, "score": 0.9, "embedding": [1.0, 0.0]}
        src.write_text(dumps({"video_id": "v", "frame_index": 0, "detections": [det]}) + "\n")
        assert main(["associate", "--detections", str(src), "--out", str(out)]) == 0
        recs = read_jsonl(out)
        assert len(recs) == 1 and recs[0]["detections"][0]["track_id"] == 1

    def test_out_of_order_names_line(self, tmp_path, capsys):
        src = tmp_path / "bad.jsonl"
        src.write_text("".join(dumps({"video_id": "v", "frame_index": t, "detections": []}) + "\n"
                               for t in (0, 1, 1)))
        assert main(["associate", "--detections", str(src), "--out", str(tmp_path / "o")]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["associate", "--detections", str(tmp_path / "nope.jsonl")]) == 2

    def test_jobs_match_sequential(self, tmp_path):
        srcs = []
        for vid in ("a", "b"):
            _, d, _ = simulate(tmp_path, "--preset", "occlusion", "--video-id", vid, name=vid)
            srcs.append(d.read_text())
        merged = tmp_path / "merged.jsonl"
        merged.write_text("".join(srcs))
        seq, par = tmp_path / "seq.jsonl", tmp_path / "par.jsonl"
        base = ["associate", "--detections", str(merged), "--similarity-scale", "10"]
        assert main(base + ["--out", str(seq)]) == 0
        assert main(base + ["--out", str(par), "--jobs", "2"]) == 0
        assert seq.read_text() == par.read_text()


class TestEvaluate:
    @pytest.fixture
    def pipeline(self, tmp_path):
        _, dets, gt = simulate(tmp_path, "--preset", "clean", "--seed", "0")
        tracks = tmp_path / "tracks.jsonl"
        assert main(["associate", "--detections", str(dets), "--out", str(tracks),
                     "--similarity-scale", "10"]) == 0
        return tracks, gt

    def test_clean_end_to_end(self, pipeline, tmp_path):
        tracks, gt = pipeline
        out = tmp_path / "m.json"
        assert main(["evaluate", "--tracks", str(tracks), "--gt", str(gt), "--out", str(out)]) == 0
        m = json.loads(out.read_text())
        assert m["id_switches"] == 0 and m["assoc_accuracy"] == 1.0

    def test_frame_oracle(self, pipeline, tmp_path):
        tracks, gt = pipeline
        out = tmp_path / "m.json"
        main(["evaluate", "--tracks", str(tracks), "--gt", str(gt), "--oracle", "frame", "--out", str(out)])
        assert json.loads(out.read_text())["assoc_accuracy"] == 1.0

    def test_clip_sweep_lines(self, pipeline, tmp_path):
        tracks, gt = pipeline
        out = tmp_path / "sweep.jsonl"
        assert main(["evaluate", "--tracks", str(tracks), "--gt", str(gt), "--clip-sweep", "1,3,5",
                     "--similarity-scale", "10", "--out", str(out)]) == 0
        assert [r["clip_length"] for r in read_jsonl(out)] == [1, 3, 5]

    def test_swapped_fixture(self, tmp_path):
        def det(gt, tid):
            return {"box": [0.1 * gt, 0, 0.1 * gt + 0.05, 0.05], "class_id": 0, "score": 0.9,
                    "embedding": [1.0, 0.0], "gt_instance_id": gt, "track_id": tid, "match_score": None}
        ids = [(1, 2), (1, 2), (2, 1), (2, 1)]
        tracks = tmp_path / "swap.jsonl"
        tracks.write_text("".join(
            dumps({"video_id": "v", "frame_index": t, "detections": [det(0, a), det(1, b)]}) + "\n"
            for t, (a, b) in enumerate(ids)))
        gt = tmp_path / "gt.jsonl"
        gt.write_text("")
        out = tmp_path / "m.json"
        assert main(["evaluate", "--tracks", str(tracks), "--gt", str(gt), "--out", str(out)]) == 0
        m = json.loads(out.read_text())
        assert m["id_switches"] == 2 and m["assoc_accuracy"] == 0.5


class TestOtherCommands:
    def test_grad_check(self, tmp_path):
        out = tmp_path / "g.json"
        assert main(["grad-check", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["passed"]
        assert main(["grad-check", "--dim", "1", "--trials", "1", "--out", str(out)]) == 0
        assert main(["grad-check", "--perturb", "0.01", "--out", str(out)]) == 3
        assert json.loads(out.read_text())["max_rel_error"] > 1e-6

    def test_select_samples(self, tmp_path):
        doc = {
            "predictions": [{"box": [0, 0, 1, 1], "class_probs": [0.9]},
                            {"box": [5, 5, 6, 6], "class_probs": [0.5]}],
            "ground_truths": [{"box": [0, 0, 1, 1], "class_id": 0}],
        }
        src, out = tmp_path / "in.json", tmp_path / "out.json"
        src.write_text(json.dumps(doc))
        assert main(["select-samples", "--input", str(src), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["selections"][0]["positive_indices"] == [0]
        assert rep["conflicts"] == 0
        src.write_text(json.dumps({"predictions": [], "ground_truths": []}))
        assert main(["select-samples", "--input", str(src), "--out", str(out)]) == 2

    def test_sweep(self, tmp_path):
        out = tmp_path / "s.json"
        assert main(["sweep", "--preset", "hard", "--seeds", "2", "--clip-lengths", "1,30",
                     "--similarity-scale", "10", "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert set(rep["mean_assoc_accuracy"]) == {"1", "30"}
        assert len(rep["per_seed"]["1"]) == 2

    def test_usage_errors(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["associate"])
        assert exc.value.code == 1

    def test_log_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("IDOL_LOG", "not-a-level")
        assert main(["grad-check", "--trials", "1", "--out", str(tmp_path / "g.json")]) == 0
