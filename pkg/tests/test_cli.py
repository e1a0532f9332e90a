import csv
import json
from importlib import resources

import numpy as np
import pytest

from homtrack.cli import main, preset_names
from homtrack.correlator import CorrelationConfig, CorrelationHistogram, cross_correlate
from homtrack.inference import fit_hom
from homtrack.sim import config_from_json, simulate
from homtrack.tagio import TimeTagStream, read_tags


def run(*argv):
    return main([str(a) for a in argv])


def preset(name):
    return json.loads(resources.files("homtrack").joinpath("presets", name + ".json").read_text())


@pytest.fixture(scope="module")
def beats(tmp_path_factory):
    d = tmp_path_factory.mktemp("beats354")
    assert run("simulate", "--preset", "beats354", "--out", d) == 0
    assert run("correlate", d, "--out", d) == 0
    assert run("fit", d, "--model", "hom") == 0
    return d


def test_presets_present():
    names = set(preset_names())
    assert {"hbt", "hom_single", "couple1", "couple2", "beats354", "beats630",
            "scan_0uW", "scan_2uW", "scan_5uW", "tune"} <= names


def test_couple1_preset_parameters():
    cfg = config_from_json(preset("couple1"))
    e1, e2 = cfg.emitters
    assert (e1.t1, e2.t1) == (4.25, 3.88)
    assert (e1.fwhm, e2.fwhm) == pytest.approx((59.0, 63.0))
    assert cfg.mode.value == "HOM_DISTINCT"


def test_zero_duration_gives_empty_valid_files(tmp_path):
    cfg = dict(preset("hbt"), duration=0.0)
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert run("simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "o") == 0
    for ch in (0, 1):
        raw = (tmp_path / "o" / f"tags_ch{ch}.ttag").read_bytes()
        assert len(raw) == 16 and raw[:4] == b"TTAG"
        assert len(read_tags(raw)) == 0
    man = json.loads((tmp_path / "o" / "manifest_simulate.json").read_text())
    assert man["rng_seed"] == cfg["rng_seed"]
    assert all(p.endswith((".ttag", ".csv")) for p in man["outputs"])


def test_same_seed_byte_identical(tmp_path, beats):
    assert run("simulate", "--preset", "beats354", "--out", tmp_path) == 0
    for f in ("tags_ch0.ttag", "tags_ch1.ttag", "truth.csv"):
        assert (tmp_path / f).read_bytes() == (beats / f).read_bytes()
    assert run("correlate", tmp_path, "--out", tmp_path) == 0
    assert (tmp_path / "histogram.csv").read_bytes() == (beats / "histogram.csv").read_bytes()
    assert run("fit", tmp_path, "--model", "hom") == 0
    assert (tmp_path / "fit_hom.csv").read_bytes() == (beats / "fit_hom.csv").read_bytes()
    assert run("simulate", "--preset", "beats354", "--seed", 5, "--out", tmp_path / "other") == 0
    assert (tmp_path / "other" / "tags_ch0.ttag").read_bytes() != (beats / "tags_ch0.ttag").read_bytes()


def test_file_pipeline_equals_in_process(beats):
    cfg = config_from_json(preset("beats354"))
    a, b = simulate(cfg)
    assert np.array_equal(read_tags(beats / "tags_ch0.ttag").timestamps, a.timestamps)
    h = cross_correlate(TimeTagStream.merge(a, b), CorrelationConfig(500, 700.0))
    back = CorrelationHistogram.from_csv(beats / "histogram.csv")
    assert np.array_equal(back.counts, h.counts) and back.origin == h.origin
    fit = fit_hom(h, cfg.period, jitter=cfg.detector_jitter)
    saved = json.loads((beats / "fit_hom.json").read_text())
    assert saved["detuning"] == fit.detuning and saved["v_factor"] == fit.v_factor


def test_beats354_fit_within_17(beats):
    fit = json.loads((beats / "fit_hom.json").read_text())
    assert abs(fit["detuning"] - 354.0) <= 17.0
    text = (beats / "fit_hom_report.txt").read_text()
    assert "detuning" in text
    man = json.loads((beats / "manifest_fit_hom.json").read_text())
    assert set(man["outputs"]) >= {str(beats / "fit_hom.json"), str(beats / "fit_hom.csv")}


def test_report_summary(beats):
    assert run("report", beats) == 0
    rows = list(csv.DictReader(open(beats / "summary.csv")))
    q = {r["quantity"]: r for r in rows}
    assert abs(float(q["fit_detuning"]["measured"]) - 354.0) <= 17.0
    assert float(q["fit_detuning"]["predicted"]) == 354.0
    assert "visibility" in q and q["visibility"]["predicted"]
    assert "quantity" in (beats / "report.txt").read_text()


@pytest.fixture(scope="module")
def couple1_track(tmp_path_factory):
    d = tmp_path_factory.mktemp("couple1")
    assert run("simulate", "--preset", "couple1", "--out", d) == 0
    assert run("track", d, "--out", d) == 0
    return d


def test_track_300s_gives_271_rows(couple1_track):
    lines = (couple1_track / "visibility.csv").read_text().splitlines()
    assert lines[0] == "window_start_s,visibility,visibility_err,v_factor,v_factor_err"
    assert len(lines) == 1 + 271
    starts = np.array([float(l.split(",")[0]) for l in lines[1:]])
    assert np.all(np.diff(starts) == 1.0)


def test_report_flags_no_anomalies(couple1_track):
    assert run("report", couple1_track) == 0
    q = {r["quantity"]: r for r in csv.DictReader(open(couple1_track / "summary.csv"))}
    assert q["track_anomalies_below_zero_3sigma"]["measured"] == "0"
    assert q["track_windows"]["measured"] == "271"


def test_report_lists_planted_anomaly(tmp_path):
    rows = ["window_start_s,visibility,visibility_err,v_factor,v_factor_err",
            "0.000000,0.300000,0.050000,0.8,0.1", "1.000000,-0.400000,0.100000,0.8,0.1"]
    (tmp_path / "visibility.csv").write_text("\n".join(rows) + "\n")
    assert run("report", tmp_path) == 0
    text = (tmp_path / "report.txt").read_text()
    assert "ANOMALY: window starting 1 s" in text


def test_tune_and_scan_pipelines(tmp_path):
    assert run("tune", "--preset", "tune", "--out", tmp_path / "t") == 0
    rows = list(csv.reader(open(tmp_path / "t" / "tuning.csv")))
    assert rows[0] == ["step", "dose", "nu1_MHz", "nu2_MHz", "measured_detuning_MHz"]
    assert abs(float(rows[-1][4])) < 50
    assert run("simulate", "--preset", "scan_2uW", "--out", tmp_path / "s") == 0
    assert run("fit", tmp_path / "s", "--model", "lorentz") == 0
    assert (tmp_path / "s" / "scan_fits.csv").exists()
    assert run("report", tmp_path / "s") == 0
    q = {r["quantity"]: r for r in csv.DictReader(open(tmp_path / "s" / "summary.csv"))}
    assert q["scan_rows"]["measured"] == "100"
    assert abs(float(q["scan_fwhm_MHz"]["measured"]) - float(q["scan_fwhm_MHz"]["predicted"])) < 6


def test_hbt_pipeline(tmp_path):
    cfg = dict(preset("hbt"), duration=20.0, emission_prob=5e-3)
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert run("simulate", "--config", tmp_path / "c.json", "--out", tmp_path) == 0
    assert run("correlate", tmp_path, "--out", tmp_path) == 0
    assert run("fit", tmp_path, "--model", "hbt") == 0
    fit = json.loads((tmp_path / "fit_hbt.json").read_text())
    assert abs(fit["g2_zero_area"]) < 0.02 and abs(fit["t1"] - 4.0) < 0.1


def test_fix_option(tmp_path, beats):
    assert run("fit", beats, "--fix", "v=0.96", "--fix", "detuning=354", "--out", tmp_path) == 0
    fit = json.loads((tmp_path / "fit_hom.json").read_text())
    assert fit["v_factor"] == 0.96 and fit["detuning"] == 354.0


def test_exit_codes(tmp_path, capsys, beats):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "mode": "HBT",\n  "emiters": []\n}\n')
    assert run("simulate", "--config", bad, "--out", tmp_path / "x") == 2
    assert "bad.json:3" in capsys.readouterr().err
    assert run("simulate", "--preset", "nope", "--out", tmp_path / "x") == 2
    assert run("fit", beats, "--fix", "nonsense=1", "--out", tmp_path / "f") == 2
    assert run("fit", beats, "--fix", "v", "--out", tmp_path / "f") == 2
    # numerical failure: the shift cannot reach the other emitter
    tune = tmp_path / "tune.json"
    tune.write_text(json.dumps(dict(preset("tune"), max_shift=10.0)))
    assert run("tune", "--config", tune, "--out", tmp_path / "t") == 3
    flat = tmp_path / "flat"
    flat.mkdir()
    freqs = range(-300, 301, 10)
    with open(flat / "scan.csv", "w") as fh:
        fh.write("row_time_s,true_center_MHz," + ",".join(map(str, freqs)) + "\n")
        fh.write("".join(f"{15 * r},0," + ",".join("5" for _ in freqs) + "\n" for r in range(12)))
    assert run("fit", flat, "--model", "lorentz") == 3
    # I/O: missing and truncated tag files
    assert run("correlate", tmp_path / "missing.ttag", tmp_path / "missing2.ttag", "--out", tmp_path / "c") == 4
    trunc = tmp_path / "trunc.ttag"
    trunc.write_bytes(b"TTAG\x01\x00\x00\x00" + (5).to_bytes(8, "little") + bytes(20))
    assert run("correlate", trunc, "--out", tmp_path / "c") == 4
    assert "byte offset" in capsys.readouterr().err
    assert run("simulate", "--config", tmp_path / "none.json", "--out", tmp_path / "x") == 4
