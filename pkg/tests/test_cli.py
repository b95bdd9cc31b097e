import csv
import json

import pytest

from rdcim.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_characterize_table(tmp_path):
    assert main(["characterize", "--exhaustive", "--out", str(tmp_path), "-q"]) == 0
    rows = {r["Adder Tree Structure"]: r for r in _rows(tmp_path / "table2.csv")}
    assert rows["Proposed"]["RMSE"] == "0.0" and rows["Conv-28T"]["Avg_Error"] == "0.0"
    assert float(rows["LOA (28T +OR)"]["RMSE"]) > 0
    assert float(rows["Conv-28T"]["Power(uW)"]) == pytest.approx(892)
    report = json.loads((tmp_path / "table2.json").read_text())
    assert report["manifest"]["command"] == "characterize"
    assert any("37%" in n for n in report["notes"])


def test_characterize_intractable_exits_2(tmp_path, capsys):
    assert main(["characterize", "--exhaustive", "--operands", "8", "--out", str(tmp_path)]) == 2
    assert "exhaustive" in capsys.readouterr().err


def test_map_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["map", "--prune", "0.4", "--out", str(a), "-q"]) == 0
    assert main(["map", "--prune", "0.4", "--out", str(b), "-q"]) == 0
    assert (a / "table3.csv").read_bytes() == (b / "table3.csv").read_bytes()
    rows = {r["Layer"]: r for r in _rows(a / "table3.csv")}
    assert rows["conv1"]["Banks Used"] == "6" and rows["conv2"]["Banks Used"] == "32"
    assert rows["fc1"]["Banks Match"] == "False"


def test_map_unknown_layer_kind(tmp_path, capsys):
    net = tmp_path / "net.json"
    net.write_text(json.dumps({"input_shape": [4], "layers": [{"name": "weird", "kind": "attention"}]}))
    assert main(["map", "--network", str(net), "--out", str(tmp_path)]) == 2
    assert "weird" in capsys.readouterr().err


def test_map_malformed_weights(tmp_path, capsys):
    w = tmp_path / "w.csv"
    w.write_text("layer,filter,index,value\nconv1,0,0,abc\n")
    assert main(["map", "--weights", str(w), "--out", str(tmp_path)]) == 2
    assert ":2:" in capsys.readouterr().err


def test_fixtures_infer_report(tmp_path, monkeypatch):
    monkeypatch.setenv("RDCIM_OUT", str(tmp_path))
    assert main(["fixtures", "--bits", "2", "4", "--count", "4", "-q"]) == 0
    args = ["infer", "--bits", "2", "4", "--weights", str(tmp_path / "weights.csv"),
            "--scales", str(tmp_path / "scales.json"), "--images", str(tmp_path / "images.csv"),
            "--check-reference", "--skip-zero", "-q"]
    assert main(args) == 0
    assert len(_rows(tmp_path / "predictions.csv")) == 4
    cost = json.loads((tmp_path / "cost.json").read_text())
    assert cost["matches_reference"] is True and cost["sparsity_credit"] > 0
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    assert "manifest" in json.loads(lines[0]) and json.loads(lines[-1])["layer"] == "fc2"
    assert main(["report", "-q"]) == 0
    assert (tmp_path / "layer_cycles.png").stat().st_size > 0
    t4 = _rows(tmp_path / "table4.csv")
    assert float(t4[0]["Throughput (TOPS)"]) == pytest.approx(2.31)


def test_infer_scheme_mismatch(tmp_path):
    assert main(["fixtures", "--bits", "2", "4", "--count", "2", "--out", str(tmp_path), "-q"]) == 0
    assert main(["infer", "--bits", "4", "4", "--scales", str(tmp_path / "scales.json"),
                 "--count", "2", "--out", str(tmp_path), "-q"]) == 2


def test_snn_infer(tmp_path):
    assert main(["infer", "--mode", "snn", "-T", "2", "--count", "3", "--check-reference",
                 "--out", str(tmp_path), "-q"]) == 0


def test_montecarlo_exit_codes(tmp_path):
    assert main(["montecarlo", "--trials", "2000", "--mac-trials", "20", "--out", str(tmp_path), "-q"]) == 0
    mc = json.loads((tmp_path / "mc.json").read_text())
    assert mc["failures"] == 0 and len(mc["read"]["per_corner"]) == 5
    assert main(["montecarlo", "--trials", "2000", "--r-hrs", "15000", "--allow-narrow-window",
                 "--out", str(tmp_path), "-q"]) == 3
    assert main(["montecarlo", "--trials", "10", "--r-hrs", "15000", "--out", str(tmp_path), "-q"]) == 2


def test_montecarlo_corner_file(tmp_path):
    f = tmp_path / "corners.json"
    f.write_text(json.dumps([{"corner": "SS", "sense_threshold_shift": 0.3}]))
    assert main(["montecarlo", "--trials", "500", "--corners", str(f), "--out", str(tmp_path), "-q"]) == 0
    mc = json.loads((tmp_path / "mc.json").read_text())
    assert [c["corner"] for c in mc["read"]["per_corner"]] == ["SS"]


def test_report_renders_all_figures(tmp_path):
    out = str(tmp_path)
    main(["characterize", "--out", out, "--samples", "2000", "-q"])
    main(["map", "--prune", "0.4", "--out", out, "-q"])
    main(["montecarlo", "--trials", "1000", "--out", out, "-q"])
    assert main(["report", out, "--sparsity", "0.3", "-q"]) == 0
    for name in ("adder_trees.png", "mapping.png", "margins.png", "peripheral_power.png"):
        assert (tmp_path / name).stat().st_size > 1000
    preset = json.loads((tmp_path / "cost_preset.json").read_text())
    assert preset["throughput_ratio"] == pytest.approx(1 / 0.7)
    periph = _rows(tmp_path / "peripheral_power.csv")
    assert sum(float(r["power_uW"]) for r in periph) == pytest.approx(1000)


def test_missing_fixture_file(tmp_path):
    assert main(["characterize", "--fixture", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_identity_network_cli(tmp_path):
    from rdcim.mapper import DATA_DIR
    w = tmp_path / "w.csv"
    w.write_text("layer,filter,index,value\n" + "".join(
        f"fc,{f},{i},{int(f == i)}\n" for f in range(4) for i in range(4)))
    imgs = tmp_path / "imgs.csv"
    imgs.write_text("# shape 1 1 4\n0.1,0.9,0.2,0.3\n0.7,0.1,0.0,0.2\n0,0.2,0.1,1\n")
    assert main(["infer", "--network", str(DATA_DIR / "identity.json"), "--weights", str(w),
                 "--images", str(imgs), "--bits", "4", "4", "--out", str(tmp_path), "-q"]) == 0
    assert [r["prediction"] for r in _rows(tmp_path / "predictions.csv")] == ["1", "0", "3"]


def test_snn_t1_trace_matches_cnn(tmp_path):
    def digests(d):
        lines = (d / "trace.jsonl").read_text().splitlines()[1:]
        return [(t["layer"], t["preact_digest"]) for t in map(json.loads, lines)]
    a, b = tmp_path / "cnn", tmp_path / "snn"
    assert main(["infer", "--bits", "1", "4", "--count", "4", "--out", str(a), "-q"]) == 0
    assert main(["infer", "--mode", "snn", "-T", "1", "--bits", "1", "4", "--count", "4",
                 "--out", str(b), "-q"]) == 0
    assert digests(a) == digests(b)


def test_montecarlo_byte_identical(tmp_path):
    args = ["montecarlo", "--trials", "3000", "--seed", "7", "--out", str(tmp_path), "-q"]
    main(args)
    first = (tmp_path / "mc.json").read_bytes(), (tmp_path / "margins.csv").read_bytes()
    main(args)
    assert first == ((tmp_path / "mc.json").read_bytes(), (tmp_path / "margins.csv").read_bytes())
