import json
import logging
import subprocess
import sys

import pytest

from patgen import cli, deepsquish, geometry, patops

RECT = '{"units":"nm","extent":[2048,2048],"polygons":[[[500,500],[900,500],[900,900],[500,900]]]}\n'


@pytest.fixture
def toy_dir(tmp_path):
    out = tmp_path / "toy"
    assert cli.main(["toy", "--count", "8", "--seed", "3", "--out", str(out), "--channels", "4"]) == 0
    return out


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"schedule": {"K": 20, "m": 5}, "seed": 7}))
    return str(path)


def test_encode_rectangle_then_decode(tmp_path):
    src = tmp_path / "rect.json"
    src.write_text(RECT)
    assert cli.main(["encode", str(src), "-o", str(tmp_path / "r")]) == 0
    topo = geometry.topology_from_text((tmp_path / "r.topo").read_text())
    assert topo.shape == (3, 3)
    out = tmp_path / "back.json"
    assert cli.main(["decode", str(tmp_path / "r.dsqt"), "--deltas", str(tmp_path / "r.deltas.csv"),
                     "-o", str(out)]) == 0
    assert geometry.layout_from_json(out.read_text()) == geometry.layout_from_json(RECT)


def test_encode_padded_tensor(tmp_path):
    src = tmp_path / "rect.json"
    src.write_text(RECT)
    assert cli.main(["encode", str(src), "--size", "16", "--channels", "16", "-o", str(tmp_path / "r")]) == 0
    t = deepsquish.load(tmp_path / "r.dsqt")
    assert t.data.shape == (16, 4, 4)


@pytest.mark.parametrize("text", ["{not json", '{"units":"nm","extent":[10,10],"polygons":[[[0,0],[5,5],[0,5]]]}'])
def test_bad_layout_exits_1(tmp_path, capsys, text):
    src = tmp_path / "bad.json"
    src.write_text(text)
    assert cli.main(["encode", str(src)]) == 1
    assert "patgen:" in capsys.readouterr().err


def test_bad_deltas_name_the_line(tmp_path, capsys):
    (tmp_path / "t.topo").write_text("P-TOPO 1 1\n1\n")
    (tmp_path / "d.csv").write_text("axis,index,delta_nm\nx,0,5\ny,zero,5\n")
    assert cli.main(["decode", str(tmp_path / "t.topo"), "--deltas", str(tmp_path / "d.csv")]) == 1
    assert "d.csv:3" in capsys.readouterr().err


def test_unknown_config_key_exits_1(tmp_path, toy_dir):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"schedule": {"K": 10, "warp": 2}}')
    assert cli.main(["--config", str(cfg), "stats", str(toy_dir)]) == 1
    cfg.write_text('{"extra": 1}')
    assert cli.main(["--config", str(cfg), "stats", str(toy_dir)]) == 1


def test_sample_manifest_and_determinism(tmp_path, toy_dir, small_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["--config", small_cfg, "sample", "--bayes", str(toy_dir), "--count", "3",
                         "--out", str(out)]) == 0
    man = json.loads((a / "manifest.json").read_text())
    assert man["m"] == 5 and len(man["items"]) == 3
    assert all(it["denoiser_calls"] == 4 and it["wall_us"] > 0 for it in man["items"])
    for it in man["items"]:
        assert (a / it["file"]).read_bytes() == (b / it["file"]).read_bytes()


def test_sample_m_equals_k_and_empty(tmp_path, toy_dir, small_cfg):
    out = tmp_path / "s"
    assert cli.main(["--config", small_cfg, "sample", "--bayes", str(toy_dir), "--count", "2", "--m", "20",
                     "--out", str(out)]) == 0
    assert {it["denoiser_calls"] for it in json.loads((out / "manifest.json").read_text())["items"]} == {1}
    empty = tmp_path / "e"
    assert cli.main(["--config", small_cfg, "sample", "--bayes", str(toy_dir), "--count", "0",
                     "--out", str(empty)]) == 0
    assert json.loads((empty / "manifest.json").read_text())["items"] == []


def test_sample_jobs_keep_order(tmp_path, toy_dir, small_cfg):
    one, many = tmp_path / "one", tmp_path / "many"
    for out, jobs in ((one, "1"), (many, "3")):
        assert cli.main(["--config", small_cfg, "sample", "--bayes", str(toy_dir), "--count", "4",
                         "--jobs", jobs, "--out", str(out)]) == 0
    for i in range(4):
        name = f"sample_{i:05d}.dsqt"
        assert (one / name).read_bytes() == (many / name).read_bytes()


def test_seed_flag_and_env(tmp_path, toy_dir, monkeypatch):
    monkeypatch.setenv("PATGEN_SEED", "11")
    assert cli.main(["sample", "--bayes", str(toy_dir), "--count", "1", "--m", "1000",
                     "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "manifest.json").read_text())["seed"] == 11
    assert cli.main(["sample", "--bayes", str(toy_dir), "--count", "1", "--m", "1000", "--seed", "4",
                     "--out", str(tmp_path / "f")]) == 0
    assert json.loads((tmp_path / "f" / "manifest.json").read_text())["seed"] == 4


def test_legalize_report_and_drc(tmp_path, toy_dir, small_cfg):
    lay = tmp_path / "lay"
    assert cli.main(["--config", small_cfg, "legalize", str(toy_dir), "--strategy", "D", "--out", str(lay)]) == 0
    report = json.loads((lay / "_report.json").read_text())
    s = report["summary"]
    assert s["count"] == 8 and s["legality_rate"] == 1.0
    assert s["median_solve_us"] > 0
    assert all("solve_us" in r and "outcome" in r for r in report["items"])
    assert cli.main(["drc", str(lay)]) == 0


def test_legalize_e_without_library_warns(tmp_path, toy_dir, small_cfg, caplog):
    with caplog.at_level(logging.WARNING):
        assert cli.main(["--config", small_cfg, "legalize", str(toy_dir), "--strategy", "E",
                         "--out", str(tmp_path / "l")]) == 0
    assert "falling back" in caplog.text


def test_legalize_e_with_library(tmp_path, toy_dir, small_cfg):
    out = tmp_path / "l"
    assert cli.main(["--config", small_cfg, "legalize", str(toy_dir), "--strategy", "E",
                     "--library", str(toy_dir), "--out", str(out)]) == 0
    assert json.loads((out / "_report.json").read_text())["summary"]["legality_rate"] == 1.0


def test_drc_violation_exits_1(tmp_path, capsys):
    bad = tmp_path / "thin.json"
    bad.write_text('{"units":"nm","extent":[2048,2048],"polygons":[[[100,100],[120,100],[120,900],[100,900]]]}')
    assert cli.main(["drc", str(bad)]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert lines and json.loads(lines[0])["rule"] == "width"


def test_drc_clean_toy_layout(toy_dir):
    assert cli.main(["drc", str(toy_dir / "toy_00000.json")]) == 0


def test_stats_matches_diversity(tmp_path, toy_dir, capsys):
    csv_path = tmp_path / "h.csv"
    assert cli.main(["stats", str(toy_dir), "--csv", str(csv_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    topos = [deepsquish.unfold(deepsquish.load(p)) for p in sorted(toy_dir.glob("*.dsqt"))]
    assert doc["size"] == 8
    assert doc["diversity_bits"] == pytest.approx(patops.diversity(topos), abs=1e-15)
    assert csv_path.read_text().startswith("cx,cy,count\n")


def test_render_one_svg_per_layout(tmp_path, toy_dir):
    out = tmp_path / "svg"
    assert cli.main(["render", str(toy_dir), "--out", str(out)]) == 0
    assert len(list(out.glob("*.svg"))) == len(list(toy_dir.glob("*.json")))


def test_augment_and_train(tmp_path, toy_dir, small_cfg):
    aug = tmp_path / "aug"
    assert cli.main(["--config", small_cfg, "augment", str(toy_dir), "--out", str(aug)]) == 0
    for f in aug.glob("*.dsqt"):
        assert deepsquish.load(f).data.shape == (4, 8, 8)
    ck = tmp_path / "net.pgck"
    assert cli.main(["--config", small_cfg, "train", "--data", str(toy_dir), "--out", str(ck),
                     "--iterations", "5"]) == 0
    assert cli.main(["--config", small_cfg, "sample", "--checkpoint", str(ck), "--count", "1",
                     "--out", str(tmp_path / "s")]) == 0


def test_sample_needs_one_source(tmp_path):
    assert cli.main(["sample", "--count", "1", "--out", str(tmp_path)]) == 1


def test_console_script_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "patgen.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "legalize" in proc.stdout
