from __future__ import annotations

import json
import subprocess
import sys
from collections import Counter
from importlib import resources

import pytest

from lstail.cli import main

FIXTURE = str(resources.files("lstail").joinpath("fixtures/tiny_coco.json"))
SMALL = {
    "synth": {"num_classes": 12, "max_instances": 40, "feature_dim": 6},
    "b": 4,
    "phase_size": 4,
    "epochs_base": 3,
    "epochs_incremental": 2,
    "use_mwg": True,
}


def run(*argv) -> int:
    return main([str(a) for a in argv])


def load(path):
    return json.loads(path.read_text())


def test_gen_head_count_and_determinism(tmp_path):
    args = ["gen", "--classes", 60, "--zipf", 1.0, "--max-instances", 150, "--cooccur", 0]
    assert run(*args, "--out-dir", tmp_path / "a", "--seed", 3) == 0
    assert run(*args, "--out-dir", tmp_path / "b", "--seed", 3) == 0
    a, b = (tmp_path / "a" / "dataset.json").read_bytes(), (tmp_path / "b" / "dataset.json").read_bytes()
    assert a == b
    counts = Counter(r["class_id"] for r in json.loads(a)["annotations"])
    assert len(counts) == 60 and counts[0] == 150
    man = load(tmp_path / "a" / "gen.manifest.json")
    assert man["seed"] == 3 and man["config"]["synth"]["num_classes"] == 60
    assert set(man["versions"]) == {"lstail", "numpy", "python"}


@pytest.mark.parametrize(
    "argv",
    [["gen", "--classes", "1"], ["gen", "--zipf", "0"], ["gen", "--cooccur", "2"], ["gen", "--bogus"], ["plan", "--phase", "1"]],
)
def test_usage_errors_exit_2(argv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(argv + ["--out-dir", str(tmp_path)])
    assert exc.value.code == 2


def plan(tmp_path, *extra):
    code = run("plan", "--dataset", FIXTURE, "--b", 1, "--phase-size", 1, "--out-dir", tmp_path, *extra)
    return code


def test_plan_on_coco_fixture(tmp_path):
    assert plan(tmp_path, "--phase", 2, "--seed", 5) == 0
    doc = load(tmp_path / "plan_phase2.json")
    assert doc["new_images"] == [13, 16]
    assert Counter(r["valid_class"] for r in doc["replay"]) == {1: 1, 2: 2}
    assert plan(tmp_path, "--phase", 2, "--strategy", "full", "--out", tmp_path / "full.json") == 0
    full = load(tmp_path / "full.json")
    assert sorted(r["image_id"] for r in full["replay"]) == [10, 11, 11, 12, 13, 14, 15]


def test_plan_range_errors(tmp_path, capsys):
    assert plan(tmp_path, "--phase", 3) == 2
    assert "--phase 3" in capsys.readouterr().err
    assert run("plan", "--dataset", FIXTURE, "--b", 4, "--phase", 1, "--out-dir", tmp_path) == 2


def test_plan_missing_dataset(tmp_path):
    assert run("plan", "--dataset", tmp_path / "nope.json", "--phase", 1, "--out-dir", tmp_path) == 1


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"b": 2, "phase_size": 1}))
    assert plan(tmp_path, "--phase", 1, "--config", cfg) == 0
    doc = load(tmp_path / "plan_phase1.json")
    assert doc["new_classes"] == [3]  # b=2 from the file, not --b 1


def test_partition(tmp_path):
    assert run("partition", "--dataset", FIXTURE, "--b", 1, "--phase-size", 1, "--out-dir", tmp_path) == 0
    doc = load(tmp_path / "partition.json")
    assert doc["groups"] == [[1], [2], [3]] and doc["T"] == 2
    assert doc["subsets"] == [[10, 11, 12, 13], [11, 14, 15], [13, 16]]


def test_train_eval_report(tmp_path, capsys):
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out-dir", out, "-q") == 0
    ckpts = sorted(p.name for p in (out / "checkpoints").iterdir())
    assert ckpts == ["phase_0.json", "phase_1.json", "phase_2.json"]
    assert load(out / "checkpoints" / "phase_2.json")["mwg"] is not None
    man = load(out / "train.manifest.json")
    assert man["config"]["use_mwg"] is True and man["config"]["synth"]["seed"] == 0

    assert run("eval", "--phase", 0, "--out-dir", out) == 0
    ev, rep = load(out / "eval_phase0.json"), load(out / "report.json")["phases"][0]
    for key in ("overall", "old", "new", "buckets", "per_class"):
        assert ev[key] == rep[key]

    (out / "phases.csv").unlink()
    assert run("report", "--out-dir", out) == 0
    assert (out / "phases.csv").read_text().startswith("phase,metric,value")
    assert "overall" in capsys.readouterr().out

    again = tmp_path / "again"
    assert run("train", "--config", cfg, "--out-dir", again, "-q") == 0
    for name in ("report.json", "phases.csv", "buckets.tsv", "checkpoints/phase_2.json", "train.manifest.json"):
        a, b = (out / name).read_text(), (again / name).read_text()
        assert a.replace(str(out), "") == b.replace(str(again), ""), name


def test_report_on_empty_dir(tmp_path, capsys):
    assert run("report", "--out-dir", tmp_path) == 1
    assert "path error" in capsys.readouterr().err


def test_eval_missing_checkpoint(tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "c.json", "--out-dir", tmp_path) == 1


def test_train_missing_config(tmp_path):
    assert run("train", "--config", tmp_path / "c.json", "--out-dir", tmp_path) == 1


def test_train_reference_config_writes_all_phases(tmp_path):
    assert run("train", "--out-dir", tmp_path, "-q", "--seed", 1) == 0
    assert len(list((tmp_path / "checkpoints").iterdir())) == 5
    assert load(tmp_path / "train.manifest.json")["config"]["synth"]["num_classes"] == 60


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lstail", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("lstail ")
