import importlib.resources
import json

import jsonschema
import numpy as np
import pytest

from hmqm import bounds
from hmqm.cli import _parse_n_list, _parse_sweep, main, parse_config
from hmqm.matchings import build_disjoint_set
from hmqm.protocol import HonestChannel, VerdictParameters, bank_mint, holder_verify
from hmqm.service import BankService


def load_schema(name):
    ref = importlib.resources.files("hmqm") / "schemas" / f"{name}.schema.json"
    return json.loads(ref.read_text())


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_bounds_csv_values(capsys):
    code, out, _ = run_cli(capsys, "bounds", "--n", "4,6,8")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "n,q_norm,fidelity_bound,pair_error_lower,e_min,e_max"
    assert len(lines) == 4
    row4 = lines[1].split(",")
    assert row4[0] == "4"
    assert float(row4[1]) == pytest.approx(0.1875, abs=1e-9)
    assert float(row4[2]) == pytest.approx(0.75, abs=1e-9)
    assert float(row4[4]) == bounds.e_min(4)
    assert float(row4[5]) == 0.2
    e_mins = [float(line.split(",")[4]) for line in lines[1:]]
    assert e_mins == sorted(e_mins)
    assert e_mins[0] < e_mins[1] < e_mins[2]


def test_bounds_rejects_bad_n(capsys):
    code, _, err = run_cli(capsys, "bounds", "--n", "5")
    assert code == 2
    assert "error:" in err
    code, _, _ = run_cli(capsys, "bounds", "--n", "18")
    assert code == 2


def test_bounds_unverified_note(capsys):
    code, out, err = run_cli(capsys, "bounds", "--n", "16", "--format", "json")
    assert code == 0
    assert "outside the numerically verified range" in err
    rows = json.loads(out)
    assert rows[0]["n"] == 16


def test_parse_n_list():
    assert _parse_n_list("4:9") == [4, 6, 8]
    assert _parse_n_list("4,6") == [4, 6]
    with pytest.raises(ValueError):
        _parse_n_list("3,4")
    with pytest.raises(ValueError):
        _parse_n_list("2:20")


def test_parse_sweep():
    assert list(_parse_sweep("0.1,0.5")) == [0.1, 0.5]
    grid = _parse_sweep("0.0:1.0:5")
    assert list(grid) == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ValueError):
        _parse_sweep("1:2")


def test_simulate_is_byte_deterministic(tmp_path, capsys):
    args = ("simulate", "--n", "4", "--q", "10000", "--l", "10",
            "--beta", "0.1", "--trials", "50", "--seed", "7")
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    assert main([*args, "--out", str(out1)]) == 0
    assert main([*args, "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    report = json.loads(out1.read_text())
    jsonschema.validate(report, load_schema("simulate_report"))
    assert report["trials"] == 50
    assert report["valid"] + report["invalid"] + report["aborted"] == 50


def test_simulate_noiseless_always_valid(capsys):
    code, out, _ = run_cli(capsys, "simulate", "--n", "8", "--q", "10000", "--l", "10",
                           "--trials", "20", "--seed", "0")
    assert code == 0
    report = json.loads(out)
    assert report["valid_rate"] == 1.0
    jsonschema.validate(report, load_schema("simulate_report"))


def test_simulate_csv_header(capsys):
    code, out, _ = run_cli(capsys, "simulate", "--n", "4", "--q", "10000", "--l", "10",
                           "--trials", "5", "--format", "csv")
    assert code == 0
    header = out.split("\n", 1)[0]
    assert header == ("n,q,l,beta,eta,epsilon,trials,valid,invalid,aborted,"
                      "valid_rate,invalid_rate,abort_rate,reject_bound,abort_bound")


def test_parse_config_casts_and_comments(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 4  # dimension\nbeta = 0.1\n\n# full-line comment\nstrategy = symmetric_clone\n")
    values = parse_config(str(cfg))
    assert values == {"n": 4, "beta": 0.1, "strategy": "symmetric_clone"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("just words\n")
    with pytest.raises(ValueError, match="expected key=value"):
        parse_config(str(bad))


def test_config_file_drives_simulate(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("n = 4\nq = 10000\nl = 10\nbeta = 0.1\ntrials = 50\nseed = 3\n")
    from_config, from_flags = tmp_path / "c.json", tmp_path / "f.json"
    assert main(["simulate", "--config", str(cfg), "--out", str(from_config)]) == 0
    assert main(["simulate", "--n", "4", "--q", "10000", "--l", "10", "--beta", "0.1",
                 "--trials", "50", "--seed", "3", "--out", str(from_flags)]) == 0
    assert from_config.read_bytes() == from_flags.read_bytes()


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("n = 4\nq = 10000\nl = 10\ntrials = 5\n")
    code, out, _ = run_cli(capsys, "simulate", "--config", str(cfg), "--trials", "2")
    assert code == 0
    assert json.loads(out)["trials"] == 2


def test_unknown_config_keys_rejected(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("n = 4\nwarp_factor = 9\n")
    code, _, err = run_cli(capsys, "simulate", "--config", str(cfg))
    assert code == 2
    assert "unknown config keys" in err
    assert "warp_factor" in err


def test_plan_json(capsys):
    code, out, _ = run_cli(capsys, "plan", "--n", "8", "--beta", "0.1", "--security", "1e-6")
    assert code == 0
    plan = json.loads(out)
    jsonschema.validate(plan, load_schema("plan"))
    assert plan["l"] == 2132
    assert plan["q_min"] == 2_132_000
    assert plan["achieved"] <= 1e-6


def test_plan_csv_header(capsys):
    code, out, _ = run_cli(capsys, "plan", "--n", "8", "--beta", "0.1",
                           "--security", "1e-6", "--format", "csv")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "n,beta,eta,epsilon,c,delta,l,q_min,T,error_floor,target,achieved"
    assert lines[1].split(",")[6] == "2132"


def test_plan_near_floor_needs_tens_of_thousands(capsys):
    code, out, _ = run_cli(capsys, "plan", "--n", "8", "--beta", "0.17", "--security", "1e-6")
    assert code == 0
    l = json.loads(out)["l"]
    assert l == 14366
    assert 10_000 < l < 100_000


def test_plan_infeasible_exit_code(capsys):
    code, _, err = run_cli(capsys, "plan", "--n", "8", "--beta", "0.3", "--security", "1e-6")
    assert code == 3
    assert "infeasible" in err


def test_forge_json(capsys):
    code, out, _ = run_cli(capsys, "forge", "--n", "4", "--l", "200", "--trials", "5", "--seed", "1")
    assert code == 0
    report = json.loads(out)
    jsonschema.validate(report, load_schema("forge_report"))
    assert report["strategy"] == "symmetric_clone"
    assert report["q"] == 400_000  # default q = 2000 * l, so T = 2
    assert report["both_accept_rate"] == 0.0
    assert abs(report["mean_white_error1"] - bounds.e_max(4)) < 0.05


def test_forge_csv(capsys):
    code, out, _ = run_cli(capsys, "forge", "--n", "4", "--l", "50", "--trials", "3",
                           "--seed", "2", "--format", "csv")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "strategy,n,q,l,trials,accept1_rate,accept2_rate,both_accept_rate,analytic_bound"
    assert lines[1].startswith("symmetric_clone,4,100000,50,3,")


def test_forge_rejects_unknown_strategy():
    with pytest.raises(SystemExit) as exc_info:
        main(["forge", "--strategy", "bogus"])
    assert exc_info.value.code == 2


def test_coherent_single_point(capsys):
    code, out, _ = run_cli(capsys, "coherent", "--alpha-sq", "0.25")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "alpha_sq,p0,p1,p2plus,effective_eta,effective_adversary_error"
    fields = lines[1].split(",")
    assert float(fields[0]) == 0.25
    assert float(fields[1]) == 0.7788007830714049
    assert float(fields[2]) == 0.19470019576785122
    assert float(fields[3]) == 0.026499021160743902
    assert float(fields[4]) == 0.13271953015715707
    assert 0.0 < float(fields[5]) < 0.25


def test_coherent_default_sweep(capsys):
    code, out, _ = run_cli(capsys, "coherent")
    assert code == 0
    lines = out.strip().split("\n")
    assert len(lines) == 21  # header + 20 sweep points
    values = [float(line.split(",")[0]) for line in lines[1:]]
    assert values[0] == 0.05
    assert values[-1] == 1.0


def test_out_to_missing_directory_is_io_error(capsys):
    code, _, err = run_cli(capsys, "bounds", "--n", "4", "--out", "/nonexistent/dir/x.csv")
    assert code == 4
    assert "i/o error" in err


def test_bad_listen_address(capsys):
    code, _, err = run_cli(capsys, "serve", "--listen", "nocolon")
    assert code == 2
    code, _, err = run_cli(capsys, "verify", "--connect", "nocolon")
    assert code == 2


def test_verify_against_live_service(tmp_path, capsys):
    svc = BankService(journal_path=str(tmp_path / "j.ndjson"))
    svc.start()
    try:
        host, port = svc.address
        out_file = tmp_path / "verdict.json"
        code = main(["verify", "--connect", f"{host}:{port}", "--n", "8",
                     "--q", "10000", "--l", "10", "--seed", "5", "--out", str(out_file)])
        assert code == 0
        report = json.loads(out_file.read_text())
        assert report["verdict"] == "valid"
        assert report["valid"] is True
        assert report["s"] == 1
        jsonschema.validate({k: v for k, v in report.items() if k != "verdict"},
                            load_schema("verdict"))
    finally:
        svc.stop()


def test_verify_connection_refused(capsys):
    code, _, err = run_cli(capsys, "verify", "--connect", "127.0.0.1:1")
    assert code == 4
    assert "i/o error" in err


def test_shipped_schemas_cover_wire_objects():
    mset = build_disjoint_set(6)
    jsonschema.validate(json.loads(mset.to_json()), load_schema("matching_set"))
    rng = np.random.default_rng(61)
    coin, db = bank_mint(8, 10_000, 10, rng)
    params = VerdictParameters.from_noise(8, 0.0)
    outcome = holder_verify(coin, db, params, HonestChannel(0.0), rng)
    jsonschema.validate(json.loads(outcome.transcript.to_json()), load_schema("transcript"))
    jsonschema.validate(json.loads(outcome.check.to_json()), load_schema("verdict"))
