import csv
import json
from pathlib import Path

import pytest

from inscan import dataset_io as dio
from inscan.cli import main
from inscan.pipeline import parse_training_config

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = ["--width", "800", "--height", "800", "--cell", "300", "400"]


@pytest.fixture(autouse=True)
def single_job(monkeypatch):
    monkeypatch.setenv("INSCAN_JOBS", "1")


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "syn"
    assert main(["synth", "--count", "12", "--seed", "7", "--out", str(out), *SMALL]) == 0
    return out


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_layout(synth_dir):
    assert len(list((synth_dir / "images").glob("*.png"))) == 12
    assert len(list((synth_dir / "labels").glob("*.txt"))) == 12
    assert len(list((synth_dir / "regions").glob("*.regions.json"))) == 12
    m = dio.DatasetManifest.load(synth_dir / "manifest.json")
    assert len(m.entries) == 12
    assert json.loads((synth_dir / "run_config.json").read_text())["seed"] == 7


def test_synth_count_zero_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--count", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_synth_deterministic(tmp_path):
    args = ["synth", "--count", "3", "--seed", "1", *SMALL]
    main([*args, "--out", str(tmp_path / "a")])
    first = tree_bytes(tmp_path / "a")
    main([*args, "--out", str(tmp_path / "a")])
    assert tree_bytes(tmp_path / "a") == first


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("count: 2\nseed: 5\nwidth: 800\nheight: 800\ncell: [300, 400]\n")
    assert main(["synth", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    rc = json.loads((tmp_path / "o" / "run_config.json").read_text())
    assert (rc["seed"], rc["count"], rc["width"]) == (9, 2, 800)


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"count": 2, "bogus": 1}')
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2


def test_prep_counts_and_no_leakage(synth_dir, tmp_path):
    out = tmp_path / "prep"
    assert main(["prep", "--input", str(synth_dir), "--out", str(out)]) == 0
    m = dio.DatasetManifest.load(out / "manifest.json")
    assert len(m.entries) == 48
    m.check()
    for e in m.entries:
        assert (out / "images" / e.split / f"{e.image_id}.png").is_file()
        assert (out / "labels" / e.split / f"{e.image_id}.txt").is_file()
    cfg = parse_training_config((out / "train_detect.cfg").read_text())
    assert cfg.image_size == 4800
    assert dio.read_descriptor(out / "data.yaml")["nc"] == 1


def test_prep_no_augment(synth_dir, tmp_path):
    out = tmp_path / "prep"
    main(["prep", "--input", str(synth_dir), "--out", str(out), "--no-augment"])
    assert len(list((out / "images").rglob("*.png"))) == 12


def test_prep_missing_label(synth_dir, tmp_path, capsys):
    (synth_dir / "labels" / "bp_00003.txt").unlink()
    assert main(["prep", "--input", str(synth_dir), "--out", str(tmp_path / "p")]) == 1
    assert "bp_00003" in capsys.readouterr().err


def test_bridge_train_balanced(synth_dir, tmp_path):
    out = tmp_path / "br"
    assert main(["bridge", "--input", str(synth_dir), "--out", str(out)]) == 0
    m = dio.DatasetManifest.load(out / "manifest.json")
    labels = [e.label for e in m.entries]
    assert labels.count("present") == labels.count("missing") > 0
    for split in dio.SPLITS:
        sub = [e.label for e in m.entries if e.split == split]
        assert sub.count("present") == sub.count("missing")
    by_source = {}
    for e in m.entries:
        by_source.setdefault(e.source_id, set()).add(e.split)
    assert all(len(s) == 1 for s in by_source.values())
    assert parse_training_config((out / "train_classify.cfg").read_text()).epochs == 300


def test_bridge_patch_count_before_balancing(tmp_path):
    syn = tmp_path / "syn"
    main(["synth", "--count", "1", "--seed", "0", "--out", str(syn), *SMALL, "--regions", "3", "3", "--mix", "1", "0", "0"])
    out = tmp_path / "br"
    # single-class input: balancing keeps nothing, but every region was cut first
    assert main(["-v", "bridge", "--input", str(syn), "--out", str(out)]) == 0
    assert len(dio.DatasetManifest.load(out / "manifest.json").entries) == 0


def test_bridge_missing_sidecar(synth_dir, tmp_path):
    (synth_dir / "regions" / "bp_00000.regions.json").unlink()
    assert main(["bridge", "--input", str(synth_dir), "--out", str(tmp_path / "b")]) == 1


def test_bridge_infer_empty_detections(synth_dir, tmp_path, caplog):
    dets = tmp_path / "dets"
    dets.mkdir()
    for p in (synth_dir / "images").glob("*.png"):
        (dets / f"{p.stem}.txt").write_text("")
    assert main(["bridge", "--mode", "infer", "--input", str(synth_dir), "--detections", str(dets), "--out", str(tmp_path / "b")]) == 0
    assert "empty" in caplog.text


def test_run_and_eval(synth_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["run", "--input", str(synth_dir), "--out", str(run), "--overlays"]) == 0
    assert len(list((run / "reports").glob("*.report.json"))) == 12
    assert len(list((run / "overlays").glob("*.png"))) == 12
    summary = json.loads((run / "summary.json").read_text())
    assert summary["n_images"] == 12
    ev = tmp_path / "ev"
    assert main(["eval", "--pred", str(run / "reports"), "--gt", str(synth_dir / "regions"), "--out", str(ev)]) == 0
    doc = json.loads((ev / "eval_report.json").read_text())
    assert doc["map"] == 1.0 and doc["cls_accuracy"] == 1.0
    assert "mAP@0.5" in capsys.readouterr().out
    for name in ("curves.csv", "pr_curve.csv", "confusion_detection.csv", "confusion_classification.csv"):
        assert (ev / name).is_file()


def test_run_present_only_images(tmp_path):
    syn = tmp_path / "syn"
    main(["synth", "--count", "10", "--seed", "3", "--out", str(syn), *SMALL, "--mix", "1", "0", "0"])
    main(["run", "--input", str(syn), "--out", str(tmp_path / "run")])
    for p in (tmp_path / "run" / "reports").glob("*.json"):
        regions = json.loads(p.read_text())["regions"]
        assert regions and all(r["status"] == "present" for r in regions)


def test_run_deterministic(synth_dir, tmp_path):
    run = tmp_path / "run"
    main(["run", "--input", str(synth_dir), "--out", str(run)])
    first = tree_bytes(run)
    main(["run", "--input", str(synth_dir), "--out", str(run)])
    assert tree_bytes(run) == first


def test_run_with_external_detections(synth_dir, tmp_path):
    dets = tmp_path / "dets"
    dets.mkdir()
    (dets / "bp_00000.txt").write_text("0 0.5 0.5 0.2 0.2 0.9\n")
    run = tmp_path / "run"
    assert main(["run", "--input", str(synth_dir), "--detections-file", str(dets), "--out", str(run)]) == 0
    rep = json.loads((run / "reports" / "bp_00000.report.json").read_text())
    assert len(rep["regions"]) == 1
    assert json.loads((run / "reports" / "bp_00001.report.json").read_text())["regions"] == []


def test_run_missing_detections_dir(synth_dir, tmp_path):
    assert main(["run", "--input", str(synth_dir), "--detections-file", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == 1


def test_eval_ap_fixture(tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--pred", str(FIXTURES / "ap" / "pred"), "--gt", str(FIXTURES / "ap" / "gt"), "--out", str(out)]) == 0
    doc = json.loads((out / "eval_report.json").read_text())
    assert abs(doc["map"] - 5 / 6) < 1e-9


def test_eval_zero_gt(tmp_path):
    gt = tmp_path / "gt"
    gt.mkdir()
    (gt / "fixture.txt").write_text("")
    assert main(["eval", "--pred", str(FIXTURES / "ap" / "pred"), "--gt", str(gt), "--out", str(tmp_path / "ev")]) == 1


def test_eval_classification_labels(tmp_path):
    path = tmp_path / "cls.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true", "pred"])
        for i in range(100):
            t = "present" if i % 2 else "missing"
            p = t if i >= 2 else ("missing" if t == "present" else "present")
            w.writerow([t, p])
    out = tmp_path / "ev"
    assert main(["eval", "--cls-labels", str(path), "--out", str(out)]) == 0
    assert json.loads((out / "eval_report.json").read_text())["cls_accuracy"] == 0.98
