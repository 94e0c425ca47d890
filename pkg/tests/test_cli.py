import csv
import json

import jsonschema
import numpy as np
import pytest

from conftest import linear_data
from spinecurve.cli import main
from spinecurve.mask_io import load_scan, save_softmask
from spinecurve.pipeline import report_schema
from spinecurve.synth import SynthSpec, generate_softmask, vshape_for_angle

# V apex turn whose default-flag kappa maximum is 1.25 (solved with brentq)
KAPPA_125_ANGLE = 23.8356


def write_mask(tmp_path, name, spec):
    path = tmp_path / f"{name}.smask"
    save_softmask(generate_softmask(spec)[0], path)
    return path


def report_of(path):
    return json.loads(path.with_name(path.name + ".report.json").read_text())


def rank_rows(capsys, argv):
    capsys.readouterr()
    assert main(["rank", *map(str, argv)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    return [line.split("\t") for line in lines]


@pytest.fixture
def three_masks(tmp_path):
    return [
        write_mask(tmp_path, "flat", SynthSpec("straight")),
        write_mask(tmp_path, "mild", vshape_for_angle(8.0, 200)),
        write_mask(tmp_path, "severe", vshape_for_angle(25.0, 200)),
    ]


# analyze

def test_analyze_straight(tmp_path):
    path = write_mask(tmp_path, "s", SynthSpec("straight"))
    assert main(["analyze", str(path)]) == 0
    rep = report_of(path)
    assert rep["max_angle_deg"] == 0.0 and rep["noc_class"] == "0" and rep["scoliosis_flag"] is False
    assert rep["max_curvature"] == pytest.approx(1.0, abs=1e-9)


def test_analyze_c_curve(tmp_path):
    path = write_mask(tmp_path, "c", vshape_for_angle(10.0, 200, noise_sigma=0.3, seed=1))
    assert main(["analyze", str(path)]) == 0
    rep = report_of(path)
    assert abs(rep["max_angle_deg"] - 10.0) <= 0.5
    assert rep["noc_class"] == "1" and rep["scoliosis_flag"] is True


def test_corrupted_input_continues(tmp_path, capsys):
    good = [write_mask(tmp_path, f"g{i}", vshape_for_angle(5.0 + i, 200)) for i in range(2)]
    bad = tmp_path / "bad.smask"
    bad.write_bytes(b"SMASK 1\nnot really\n")
    assert main(["analyze", str(good[0]), str(bad), str(good[1])]) == 2
    assert "bad.smask" in capsys.readouterr().err
    assert sorted(p.name for p in tmp_path.glob("*.report.json")) == ["g0.smask.report.json",
                                                                      "g1.smask.report.json"]


def test_missing_input(tmp_path):
    assert main(["analyze", str(tmp_path / "nope.smask")]) == 2


def test_reports_validate_against_schema(three_masks, tmp_path):
    model = tmp_path / "m.json"
    from spinecurve.laplace_regressor import TrainConfig, train
    train(linear_data(200), TrainConfig(max_epochs=5))[0].save(model)
    assert main(["analyze", "--model", str(model), *map(str, three_masks)]) == 0
    schema = report_schema()
    for path in three_masks:
        rep = report_of(path)
        jsonschema.validate(rep, schema)
        assert rep["prediction"]["sigma2"] > 0
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({**report_of(three_masks[0]), "extra": 1}, schema)


def test_jobs_matches_sequential(three_masks, tmp_path):
    assert main(["analyze", *map(str, three_masks)]) == 0
    seq = [report_of(p) for p in three_masks]
    assert main(["analyze", "--jobs", "3", *map(str, three_masks)]) == 0
    assert [report_of(p) for p in three_masks] == seq


def test_jobs_from_environment(three_masks, monkeypatch, capsys):
    plain = rank_rows(capsys, three_masks)
    monkeypatch.setenv("SPINECURVE_JOBS", "2")
    assert rank_rows(capsys, three_masks) == plain


# heatmap

def test_heatmap_straight_black(tmp_path):
    path = write_mask(tmp_path, "s", SynthSpec("straight"))
    assert main(["heatmap", str(path)]) == 0
    assert load_scan(tmp_path / "s.smask.heatmap.pgm").values.max() == 0


def test_heatmap_absolute_scale(tmp_path):
    path = write_mask(tmp_path, "v", vshape_for_angle(KAPPA_125_ANGLE, 200))
    assert main(["analyze", str(path)]) == 0
    assert report_of(path)["max_curvature"] == pytest.approx(1.25, abs=1e-3)
    out = tmp_path / "v.pgm"
    assert main(["heatmap", "--absolute", "1,1.5", "-o", str(out), str(path)]) == 0
    assert abs(load_scan(out).values.max() - 128) <= 1


def test_heatmap_thoracic_band(tmp_path):
    path = write_mask(tmp_path, "t", vshape_for_angle(20.0, 120))
    out = tmp_path / "t.pgm"
    assert main(["heatmap", "-o", str(out), str(path)]) == 0
    rows = load_scan(out).values.max(axis=1)
    assert rows.max() == 255 and abs(int(np.argmax(rows)) - 120) <= 5
    assert rows[:208].sum() > rows[208:].sum()


def test_heatmap_ppm(tmp_path):
    path = write_mask(tmp_path, "p", vshape_for_angle(15.0, 200))
    assert main(["heatmap", "--ppm", str(path)]) == 0
    assert (tmp_path / "p.smask.heatmap.ppm").read_bytes().startswith(b"P6")


# rank

def test_rank_order(three_masks, capsys):
    rows = rank_rows(capsys, three_masks)
    assert rows[0] == ["scan_id", "max_curvature", "predicted_angle_deg", "scoliosis_flag"]
    assert [r[0] for r in rows[1:]] == ["severe", "mild", "flat"]
    assert [r[2] for r in rows[1:]] == ["NA"] * 3
    assert [r[3] for r in rows[1:]] == ["true", "true", "false"]


def test_rank_ties_by_id(tmp_path, capsys):
    paths = [write_mask(tmp_path, name, SynthSpec("straight")) for name in ("b", "c", "a")]
    assert [r[0] for r in rank_rows(capsys, paths)[1:]] == ["a", "b", "c"]


def test_rank_reuses_report_values(three_masks, capsys):
    assert main(["analyze", *map(str, three_masks)]) == 0
    reports = [p.with_name(p.name + ".report.json") for p in three_masks]
    from_reports = {r[0]: r[1] for r in rank_rows(capsys, reports)[1:]}
    from_masks = {r[0]: r[1] for r in rank_rows(capsys, three_masks)[1:]}
    assert from_reports == from_masks
    for path in three_masks:
        rep = report_of(path)
        assert float(from_reports[rep["scan_id"]]) == rep["max_curvature"]


def test_rank_json(three_masks, capsys):
    capsys.readouterr()
    assert main(["rank", "--format", "json", *map(str, three_masks)]) == 0
    entries = json.loads(capsys.readouterr().out)
    assert [e["scan_id"] for e in entries] == ["severe", "mild", "flat"]


# calibrate

def write_csv(path, x, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kappa", "angle_deg"])
        w.writerows(zip(x, y))


def test_calibrate_deterministic(tmp_path, capsys):
    x, y = linear_data(300)
    write_csv(tmp_path / "train.csv", x[:250], y[:250])
    write_csv(tmp_path / "val.csv", x[250:], y[250:])
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        argv = ["calibrate", str(tmp_path / "train.csv"), str(tmp_path / "val.csv"), "-o", str(out),
                "--seed", "3", "--max-epochs", "20"]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert (tmp_path / "a.log.csv").read_text().count("\n") == 21
    assert "val MAE" in capsys.readouterr().out


def test_calibrate_rejects_small_kappa(tmp_path, capsys):
    write_csv(tmp_path / "train.csv", [1.0, 0.95, 1.2], [0.0, 1.0, 6.0])
    write_csv(tmp_path / "val.csv", [1.1], [3.0])
    assert main(["calibrate", str(tmp_path / "train.csv"), str(tmp_path / "val.csv"),
                 "-o", str(tmp_path / "m.json")]) == 2
    assert "row 3" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_calibrate_empty_csv(tmp_path):
    (tmp_path / "e.csv").write_text("")
    assert main(["calibrate", str(tmp_path / "e.csv"), str(tmp_path / "e.csv"),
                 "-o", str(tmp_path / "m.json")]) == 2


# synth

def test_synth_straight(tmp_path):
    out = tmp_path / "o"
    assert main(["synth", "--shape", "straight", "-n", "1", "--out-dir", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    [entry] = manifest["samples"]
    assert entry["apex_angle_deg"] == 0.0
    assert (out / entry["mask"]).exists() and (out / entry["truth"]).exists()


def test_synth_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "-n", "4", "--seed", "9", "--out-dir", str(tmp_path / d)]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_synth_bad_shape_params(tmp_path):
    assert main(["synth", "--shape", "arc", "--arc-radius", "50", "--out-dir", str(tmp_path)]) == 2


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
