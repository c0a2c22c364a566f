import io
import json

import pytest

from specnet.bundle import serialize_bundle
from specnet.cli import main
from specnet.dom import write_manifest


def run(argv):
    out = io.StringIO()
    code = main(argv, out=out)
    return code, [json.loads(x) for x in out.getvalue().splitlines() if x.strip()]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, small_bundle):
    root = tmp_path_factory.mktemp("cli")
    code, _ = run(["synth", "--out", str(root / "data"), "--templates", "12", "--split", "12,6,6",
                   "--noise", "0.2", "--overlap", "0.5", "--seed", "2", "--quiet"])
    assert code == 0
    model = root / "model.bundle"
    serialize_bundle(small_bundle, model)
    return root, model


def test_train_eval_calibrate_flow(workspace):
    root, _ = workspace
    model = root / "trained.bundle"
    code, lines = run(["train", "--train", str(root / "data/train.jsonl"), "--val", str(root / "data/val.jsonl"),
                       "--model", str(model), "--epochs", "2", "--patience", "1", "--quiet"])
    assert code == 0 and lines[0]["n_train"] == 24
    code, lines = run(["eval", "--model", str(model), "--data", str(root / "data/test.jsonl"), "--quiet"])
    assert code == 0 and {"accuracy", "macro_f1", "confusion", "latency_ms_mean"} <= set(lines[0])
    taus = []
    for _ in range(2):
        code, lines = run(["calibrate", "--model", str(model), "--val", str(root / "data/val.jsonl"),
                           "--out", str(root / "recal.bundle"), "--quiet"])
        assert code == 0
        taus.append(lines[0]["tau"])
    assert taus[0] == taus[1]


def test_no_domain_model_on_null_domains(workspace, tmp_path):
    root, _ = workspace
    model = tmp_path / "nd.bundle"
    code, _ = run(["train", "--train", str(root / "data/train.jsonl"), "--val", str(root / "data/val.jsonl"),
                   "--model", str(model), "--epochs", "1", "--no-domain", "--quiet"])
    assert code == 0
    rows = [json.loads(x) for x in (root / "data/test.jsonl").read_text().splitlines()]
    for r in rows:
        r["domain"] = None
        r["html_path"] = str(root / "data" / r["html_path"])
    write_manifest(tmp_path / "nodomain.jsonl", rows)
    code, lines = run(["eval", "--model", str(model), "--data", str(tmp_path / "nodomain.jsonl"), "--quiet"])
    assert code == 0 and lines[0]["n"] == len(rows)


def test_predict_single_and_manifest_agree(workspace, tmp_path, capsys):
    root, model = workspace
    rows = [json.loads(x) for x in (root / "data/test.jsonl").read_text().splitlines()][:3]
    page = root / "data" / rows[0]["html_path"]
    code, single = run(["predict", "--model", str(model), "--html", str(page), "--domain", rows[0]["domain"], "--quiet"])
    assert code == 0 and set(single[0]) == {"epsilon", "prob1", "prob2", "verdict", "latency_ms"}
    manifest = [dict(r, html_path=str(root / "data" / r["html_path"])) for r in rows]
    manifest[1]["html_path"] = str(tmp_path / "missing.html")
    write_manifest(tmp_path / "m.jsonl", manifest)
    code, lines = run(["predict", "--model", str(model), "--manifest", str(tmp_path / "m.jsonl"), "--quiet"])
    assert code == 0 and len(lines) == 2
    assert "error" in capsys.readouterr().err
    for key in ("epsilon", "prob1", "prob2"):
        assert abs(lines[0][key] - single[0][key]) <= 1e-6
    assert lines[0]["verdict"] == single[0]["verdict"]


def test_bench_reports_buckets(workspace):
    _, model = workspace
    code, lines = run(["bench", "--model", str(model), "--synth-nodes", "300", "--pages", "4", "--quiet"])
    assert code == 0 and lines[0]["all"]["pages"] == 4 and lines[0]["all"]["p50_ms"] > 0


def test_perturb_command(workspace, tmp_path):
    root, _ = workspace
    code, lines = run(["perturb", "--data", str(root / "data/test.jsonl"), "--out", str(tmp_path / "p"),
                       "--kind", "insert_redundant,shuffle_siblings", "--intensity", "0.1", "--quiet"])
    assert code == 0 and lines[0]["pages"] == 12 and (tmp_path / "p/manifest.jsonl").exists()


def test_exit_codes(workspace, tmp_path):
    root, model = workspace
    test = str(root / "data/test.jsonl")
    # unreadable model
    assert run(["eval", "--model", str(tmp_path / "none.bundle"), "--data", test, "--quiet"])[0] == 2
    (tmp_path / "junk.bundle").write_bytes(b"junk")
    assert run(["predict", "--model", str(tmp_path / "junk.bundle"), "--manifest", test, "--quiet"])[0] == 2
    # nothing processable
    write_manifest(tmp_path / "empty.jsonl", [{"html_path": str(tmp_path / "x.html"), "domain": "a.com", "label": 0}])
    assert run(["predict", "--model", str(model), "--manifest", str(tmp_path / "empty.jsonl"), "--quiet"])[0] == 3
    assert run(["eval", "--model", str(model), "--data", str(tmp_path / "empty.jsonl"), "--quiet"])[0] == 3
    # usage and configuration problems
    assert run(["frobnicate"])[0] == 4
    assert run(["predict", "--model", str(model), "--quiet"])[0] == 4
    assert run(["train", "--train", test, "--val", test, "--model", str(tmp_path / "o"), "--ablation", "bogus",
                "--quiet"])[0] == 4
    (tmp_path / "bad.cfg").write_text("learning_rate = 3\n")
    assert run(["train", "--train", test, "--val", test, "--model", str(tmp_path / "o"),
                "--config", str(tmp_path / "bad.cfg"), "--quiet"])[0] == 4
    assert run(["perturb", "--data", test, "--out", str(tmp_path / "q"), "--kind", "explode",
                "--intensity", "0.1", "--quiet"])[0] == 4


def test_env_overrides(monkeypatch, workspace):
    _, model = workspace
    monkeypatch.setenv("SPECNET_THREADS", "zero")
    assert run(["bench", "--model", str(model), "--synth-nodes", "50", "--pages", "2", "--quiet"])[0] == 4
    monkeypatch.setenv("SPECNET_THREADS", "2")
    assert run(["bench", "--model", str(model), "--synth-nodes", "50", "--pages", "2", "--quiet"])[0] == 0
