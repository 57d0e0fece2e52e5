import json

import pytest
from click.testing import CliRunner

from dramap import traces
from dramap.cli import cli


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(cli, [str(a) for a in args])
    return invoke


def test_bound_worked_numbers(run):
    r = run("bound", "--n", 32, "--k", 4, "--theta", 0.05, "--epsilon", 0.01)
    assert r.exit_code == 0 and json.loads(r.stdout)["m"] == 584
    r = run("bound", "--n", 32, "--k", 4, "--k-prime", 4, "--theta", 0.05, "--epsilon", 0.01)
    assert r.exit_code == 0 and json.loads(r.stdout)["m_prime"] == 517


def test_bound_rejects_bad_input(run):
    assert run("bound", "--n", 32, "--k", 4, "--theta", 1.0).exit_code == 2
    assert run("bound", "--n", 4, "--k", 4).exit_code == 2
    assert run("bound", "--k", 4).exit_code == 2


def test_simulate_is_deterministic(run):
    a = json.loads(run("simulate", "--preset", "rpi3b+", "--pairs", 500, "--seed", 3, "-o", "a.trace").stdout)
    b = json.loads(run("simulate", "--preset", "rpi3b+", "--pairs", 500, "--seed", 3, "-o", "b.trace").stdout)
    c = json.loads(run("simulate", "--preset", "rpi3b+", "--pairs", 500, "--seed", 4, "-o", "c.trace").stdout)
    assert a["sha256"] == b["sha256"] != c["sha256"]
    assert a["pairs"] == 500


def test_simulate_same_bank(run, tmp_path):
    r = run("simulate", "--preset", "pixel3a", "--pairs", 300, "--constraint", "same-bank",
            "--with-labels", "-o", "s.trace")
    assert r.exit_code == 0
    tr = traces.read_trace(tmp_path / "s.trace")
    from dramap import mapping
    spec = mapping.load_preset("pixel3a")
    assert mapping.same_bank_array(spec.bank_masks, tr.addr_a, tr.addr_b).all()
    assert tr.has_label.all()


def test_usage_errors(run):
    assert run("simulate", "-o", "x.trace").exit_code == 2
    assert run("simulate", "--preset", "rpi3b+", "--spec", "s.json", "-o", "x.trace").exit_code == 2
    assert run("solve-banks", "missing.trace", "--q", 4).exit_code == 2
    assert run("frobnicate").exit_code == 2


def test_io_errors(run, tmp_path):
    assert run("solve-banks", "missing.trace").exit_code == 3
    (tmp_path / "bad.trace").write_text("# knock-trace v1 width=8\n0x01,zz,100,\n")
    r = run("threshold", "bad.trace")
    assert r.exit_code == 3 and "line 2" in r.output
    assert run("presets", "--show", "nonexistent").exit_code == 3


def test_closed_page_exit_code(run):
    run("simulate", "--preset", "rpi3b+", "--closed-page", "--pairs", 3000, "-o", "cp.trace")
    r = run("solve-banks", "cp.trace")
    assert r.exit_code == 4
    assert "single distribution" in r.output
    r = run("e2e", "--preset", "rpi3b+", "--closed-page", "--pairs", 2000)
    assert r.exit_code == 4 and "threshold" in r.output


def test_bank_then_row_then_evaluate(run):
    assert run("simulate", "--preset", "rpi3b+", "--pairs", 6000, "--seed", 1, "-o", "p1.trace").exit_code == 0
    r = run("solve-banks", "p1.trace", "--oracle-preset", "rpi3b+", "-o", "bank.json")
    assert r.exit_code == 0, r.output
    bank = json.load(open("bank.json"))
    assert bank["bank_masks"] == ["0x8000", "0x4000", "0x2000"]
    assert run("simulate", "--preset", "rpi3b+", "--pairs", 20000, "--seed", 2, "--constraint", "same-bank",
               "--bank-report", "bank.json", "-o", "p2.trace").exit_code == 0
    r = run("solve-rows", "p2.trace", "--bank-report", "bank.json", "--oracle-preset", "rpi3b+", "-o", "rows.json")
    assert r.exit_code == 0, r.output
    r = run("evaluate", "--bank-report", "bank.json", "--row-report", "rows.json",
            "--truth-preset", "rpi3b+", "--pairs", 5000)
    assert r.exit_code == 0, r.output
    ev = json.loads(r.stdout)
    assert ev["precision"] == 1.0 and ev["recall"] == 1.0 and ev["basis_match"]


def test_replay_writes_probe_request(run, tmp_path):
    run("simulate", "--preset", "rpi3b+", "--pairs", 6000, "--seed", 1, "-o", "p1.trace")
    run("solve-banks", "p1.trace", "-o", "bank.json")
    run("simulate", "--preset", "rpi3b+", "--pairs", 20000, "--seed", 2, "--constraint", "same-bank",
        "-o", "p2.trace")
    r = run("solve-rows", "p2.trace", "--bank-report", "bank.json", "--replay", "p1.trace",
            "--replay-threshold", 202.5, "--probe-out", "probe.trace", "--trials", 3)
    assert r.exit_code == 6
    probe = traces.read_trace(tmp_path / "probe.trace", allow_empty=True)
    assert len(probe) > 0 and len(probe) % 3 == 0
    assert not probe.has_latency.any()


def test_config_file_supplies_defaults(run, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"bound": {"theta": 0.05}}))
    r = run("--config", "cfg.json", "bound", "--n", 32, "--k", 4)
    assert json.loads(r.stdout)["m"] == 584
    r = run("--config", "cfg.json", "bound", "--n", 32, "--k", 4, "--theta", 0)
    assert json.loads(r.stdout)["m"] != 584
    (tmp_path / "broken.json").write_text("{")
    assert run("--config", "broken.json", "bound", "--n", 32, "--k", 4).exit_code == 3


def test_presets_listing(run):
    r = run("presets")
    assert r.exit_code == 0 and "rpi3b+" in r.output and "dgx-1" in r.output
    doc = json.loads(run("presets", "--show", "switch-p4").stdout)
    assert doc["address_bits"] > 0
