import json
import shutil
import subprocess

import pytest

from sosforge.cli import ConfigError, main, parse_config, resolve_threads

X2 = {"field": {"polynomial": {"2": 1}}, "box": [[-3, 3]], "k": 2, "grid": 400, "csv_samples": 20, "seed": "unit"}


def write(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_lemma_output(capsys):
    assert main(["lemma", "5"]) == 0
    assert capsys.readouterr().out.strip() == "eta=(1,-2,3) q=(1/24,1/30,1/120) PASS"


def test_bounds_table(capsys):
    assert main(["bounds", "--n", "1..4", "--k", "2..3"]) == 0
    row = next(line for line in capsys.readouterr().out.splitlines() if line.startswith("| 2 | 2 |"))
    cells = [c.strip() for c in row.strip("|").split("|")]
    assert cells[2] == "3/2" and cells[4] == "27"


def test_console_script():
    exe = shutil.which("sosforge")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "lemma", "3"], capture_output=True, text=True, check=True)
    assert out.stdout.strip().endswith("PASS")


def test_lambda_out_of_range_exits_2(tmp_path, capsys):
    assert main(["decompose", "--config", write(tmp_path, {**X2, "lambda": 1.6}), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "config"


@pytest.mark.parametrize(
    "doc",
    [
        {**X2, "box": [[1, 1]]},
        {**X2, "alpha": 0},
        {**X2, "field": {"polynomial": {"2,1": 1}}},
        {**X2, "field": {"plugin": "no.such.module:thing"}},
        {**X2, "colour": 3},
    ],
)
def test_bad_configs_exit_2(tmp_path, doc):
    assert main(["decompose", "--config", write(tmp_path, doc), "--out", str(tmp_path)]) == 2


def test_unparsable_and_usage(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["partition", "--config", str(bad)]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["decompose"]) == 2


def test_threads_resolution(monkeypatch):
    monkeypatch.setenv("SOSFORGE_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("SOSFORGE_THREADS", "many")
    with pytest.raises(ConfigError):
        resolve_threads(None)


def test_zero_field_empty_manifest(tmp_path):
    doc = {"field": {"polynomial": {}}, "box": [[-1, 1], [-1, 1]]}
    assert main(["decompose", "--config", write(tmp_path, doc), "--out", str(tmp_path / "out")]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["classes"] == []


def test_partition_and_color_constant_control(tmp_path, capsys):
    doc = {"box": [[0, 1], [0, 1]], "control": {"constant": 1}}
    path = write(tmp_path, doc)
    assert main(["partition", "--config", path, "--out", str(tmp_path / "p"), "--svg"]) == 0
    assert capsys.readouterr().out.strip() == "4096 cubes"
    assert json.loads((tmp_path / "p" / "partition.json").read_text())["cubes"] == 4096
    assert (tmp_path / "p" / "partition.svg").read_text().count("<rect") == 4096
    assert main(["color", "--config", path, "--out", str(tmp_path / "c")]) == 0
    colouring = json.loads((tmp_path / "c" / "coloring.json").read_text())
    assert colouring["proper"] and colouring["classes"] <= 9


def test_decompose_deterministic_and_verifiable(tmp_path, monkeypatch):
    monkeypatch.setenv("SOSFORGE_THREADS", "2")
    path = write(tmp_path, X2)
    assert main(["decompose", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["decompose", "--config", path, "--out", str(tmp_path / "b")]) == 0
    for name in ("manifest.json", "samples.csv", "verdict.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["verify", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "v")]) == 0
    result = json.loads((tmp_path / "v" / "verify.json").read_text())
    names = {c["check"] for c in result["checks"]}
    assert {"reconstruction", "manifest_match", "disjoint_supports"} <= names


def test_verify_detects_tampered_manifest(tmp_path):
    path = write(tmp_path, X2)
    assert main(["decompose", "--config", path, "--out", str(tmp_path / "a")]) == 0
    manifest_path = tmp_path / "a" / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    doc["classes"] = doc["classes"][:1]
    manifest_path.write_text(json.dumps(doc))
    assert main(["verify", str(manifest_path), "--out", str(tmp_path / "v"), "--quick"]) == 1


def test_plugin_field(tmp_path):
    doc = {**X2, "field": {"plugin": "conftest:square_plugin"}, "k": 1}
    assert main(["decompose", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["diagnostics"]["path"] == "sqrt"


def test_parse_config_defaults():
    cfg = parse_config({"field": {"polynomial": [[[2, 0], "1/2"], [[0, 2], 1]]}, "box": [[0, 1], [0, 1]]})
    assert cfg.n == 2 and cfg.k == 2 and cfg.lam == 1.25


def test_sum_of_squares_example(tmp_path):
    doc = {"field": {"polynomial": {"2,0": 1, "0,2": 1}}, "box": [[-5, 5], [-5, 5]], "csv_samples": 50}
    assert main(["decompose", "--config", write(tmp_path, doc), "--out", str(tmp_path), "--threads", "4"]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert 1 <= len(manifest["classes"]) <= 27
    assert (tmp_path / "partition.svg").exists()
