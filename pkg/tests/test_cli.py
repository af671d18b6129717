import csv
import hashlib
import json
import math
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from fargan import cli

SMALL = {"iterations": 12, "snapshot_every": 6, "n_eval_samples": 300, "dataset": {"kind": "ring-8"}}


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_train_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["train", write_config(tmp_path, SMALL), "--out", str(out), "--seeds", "0,1"])
    assert code == cli.EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [0, 1] and man["status"] == "ok" and man["wall_clock"] >= 0
    for s in (0, 1):
        d = out / f"seed-{s}"
        trace = list(csv.reader((d / "trace.csv").open()))
        assert trace[0] == ["iter", "d_loss", "g_loss", "grad_norm_fake_mean", "modes_covered", "hq_ratio"]
        assert len(trace) == 13
        snaps = sorted(p.name for p in (d / "metrics").iterdir())
        assert snaps == ["snapshot-00000006.json", "snapshot-00000012.json"]
        snap = json.loads((d / "metrics" / snaps[-1]).read_text())
        assert set(cli.METRIC_KEYS) <= set(snap)
        samples = (d / "samples.csv").read_text().splitlines()
        assert len(samples) == 301
        svg = ET.parse(d / "scatter.svg").getroot()
        assert len(svg.findall(".//{http://www.w3.org/2000/svg}circle")) == 512 + 300
        ET.parse(d / "loss.svg")


def test_manifest_hash_is_git_blob_hash(tmp_path):
    out = tmp_path / "run"
    cli.main(["train", json.dumps({"iterations": 0}), "--out", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    text = cli.canonical_json(json.loads((out / "config.json").read_text())).encode()
    expect = hashlib.sha1(b"blob %d\0" % len(text) + text).hexdigest()
    assert man["config_hash"] == expect


def test_zero_iterations_exit_ok(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", json.dumps({"iterations": 0}), "--out", str(out)]) == 0
    assert (out / "seed-0" / "trace.csv").read_text().count("\n") == 1
    assert json.loads((out / "seed-0" / "metrics.json").read_text())["snapshots"] == []


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    cli.main(["train", cfg, "--out", str(tmp_path / "a")])
    cli.main(["train", cfg, "--out", str(tmp_path / "b")])
    for name in ("trace.csv", "samples.csv", "scatter.svg", "checkpoint.json"):
        assert (tmp_path / "a/seed-0" / name).read_bytes() == (tmp_path / "b/seed-0" / name).read_bytes()


def test_worker_pool_matches_serial(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    cli.main(["train", cfg, "--out", str(tmp_path / "a"), "--seeds", "3,4"])
    cli.main(["train", cfg, "--out", str(tmp_path / "b"), "--seeds", "3,4", "--workers", "2"])
    for s in (3, 4):
        assert (tmp_path / f"a/seed-{s}/trace.csv").read_bytes() == (tmp_path / f"b/seed-{s}/trace.csv").read_bytes()


def test_unknown_key_names_it(tmp_path, capsys):
    code = cli.main(["train", json.dumps({"iterationz": 5}), "--out", str(tmp_path / "x")])
    assert code == cli.EXIT_CONFIG
    assert "iterationz" in capsys.readouterr().err


def test_invalid_field_and_bad_json(tmp_path, capsys):
    assert cli.main(["train", json.dumps({"N0": 99}), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "N0" in capsys.readouterr().err
    assert cli.main(["train", "{not json", "--out", str(tmp_path / "y")]) == cli.EXIT_CONFIG


def test_nonempty_out_dir_rejected(tmp_path, capsys):
    out = tmp_path / "used"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert cli.main(["train", json.dumps({"iterations": 0}), "--out", str(out)]) == cli.EXIT_CONFIG
    assert (out / "keep.txt").read_text() == "x"


def test_divergence_exit_code(tmp_path):
    doc = dict(SMALL, lr_d=1e300, lr_g=1e300, iterations=30)
    with pytest.warns(RuntimeWarning):
        code = cli.main(["train", json.dumps(doc), "--out", str(tmp_path / "run")])
    assert code == cli.EXIT_DIVERGED
    assert json.loads((tmp_path / "run/manifest.json").read_text())["status"] == "diverged"
    assert json.loads((tmp_path / "run/seed-0/metrics.json").read_text())["status"] == "diverged"


def test_props_default_grid(tmp_path):
    out = tmp_path / "props"
    assert cli.main(["props", "--out", str(out)]) == cli.EXIT_OK
    summary = (out / "summary.txt").read_text()
    assert "FAIL" not in summary and summary.count("PASS") >= 3
    assert len((out / "sweep.csv").read_text().splitlines()) == 101


def test_props_single_cell(tmp_path):
    grid = json.dumps({"m0": [4], "k": [10], "lambda": [0]})
    assert cli.main(["props", "--grid", grid, "--out", str(tmp_path / "p")]) == 0
    assert len((tmp_path / "p/sweep.csv").read_text().splitlines()) == 2


def test_props_empty_grid(tmp_path):
    assert cli.main(["props", "--grid", json.dumps({"m0": []}), "--out", str(tmp_path / "p")]) == 0


def test_props_perturbed_solver_fails(tmp_path):
    def bad(prob):
        r = cli.theory.solve_prop3(prob)
        r.xi0 += 1e-3
        return r

    grid = cli.parse_grid({"m0": [2], "k": [1], "lambda": [0]})
    (tmp_path / "p").mkdir()
    report = cli.run_props(grid, tmp_path / "p", solver=bad)
    assert not report.passed
    assert "m0=2" in (tmp_path / "p/summary.txt").read_text()


def test_props_bad_grid_key(tmp_path, capsys):
    assert cli.main(["props", "--grid", json.dumps({"kk": [1]}), "--out", str(tmp_path / "p")]) == 1
    assert "kk" in capsys.readouterr().err


@pytest.mark.parametrize(
    "args, code, verdict",
    [
        ([], 0, "PASS"),
        (["--eps", "0"], 3, "BOUNDARY"),
        (["--sharpness", "10"], 3, "FAIL"),
    ],
)
def test_prop1(args, code, verdict, capsys, tmp_path):
    out = tmp_path / "p1.json"
    assert cli.main(["prop1", *args, "--out", str(out)]) == code
    assert verdict in capsys.readouterr().out
    assert json.loads(out.read_text())["verdict"] == verdict


def test_prop1_degenerate(capsys):
    # every point has a twin 1e-6 rad away, so no anchor can be isolated
    t = 1e-6
    pts = {"reals": [[1, 0], [math.cos(t), math.sin(t)]],
           "fakes": [[0, 1], [-math.sin(t), math.cos(t)]]}
    assert cli.main(["prop1", "--dataset", json.dumps(pts)]) == cli.EXIT_DEGENERATE
    assert "degenerate" in capsys.readouterr().err
    dup = {"reals": [[1, 0], [1, 0]], "fakes": [[0, 1], [0, 1]]}
    assert cli.main(["prop1", "--dataset", json.dumps(dup)]) == cli.EXIT_DEGENERATE


def test_prop1_bad_dataset(capsys):
    assert cli.main(["prop1", "--dataset", json.dumps({"size": 3})]) == cli.EXIT_CONFIG
    assert cli.main(["prop1", "--dataset", json.dumps({"reals": [[2, 0], [0, 1]]})]) == cli.EXIT_CONFIG
    assert "unit-norm" in capsys.readouterr().err


def test_report_aggregates(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    cli.main(["train", cfg, "--out", str(tmp_path / "a"), "--seeds", "0,1"])
    out = tmp_path / "summary.csv"
    assert cli.main(["report", str(tmp_path / "a"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert all(r["status"] == "ok" and r["modes_covered"] != "" for r in rows)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fargan.cli", "prop1"], capture_output=True, text=True)
    assert res.returncode == 0 and "PASS" in res.stdout
