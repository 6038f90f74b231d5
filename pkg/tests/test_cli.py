import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from morse_spectra.cli import (
    DEFAULT_TOL,
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    _clean,
    main,
    run,
    validate,
    write_csv,
)

REPO = Path(__file__).resolve().parents[1]


def invoke(tmp_path, experiment, cfg, *args):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    res = CliRunner().invoke(main, [experiment, "--config", str(p), "--out", str(tmp_path / "out"), *args])
    return res


def test_moments_pass_exit_zero(tmp_path):
    res = invoke(tmp_path, "moments", {"ks": [0, 1, 2, 3]}, "--serial")
    assert res.exit_code == 0, res.output
    summary = json.loads(res.stdout)
    assert summary["status"] == "pass"
    assert summary["artifacts"][0].startswith("moments-")
    for name in summary["artifacts"]:
        assert (tmp_path / "out" / name).exists()


def test_failed_check_exit_one_names_it(tmp_path, caplog):
    cfg = {"weight": {"family": "bump-offset", "params": {"c": 2.0}}, "ks": [1], "tail_ks": [60]}
    res = invoke(tmp_path, "moments", cfg, "--serial")
    assert res.exit_code == 1
    summary = json.loads(res.stdout)
    failed = [c["name"] for c in summary["checks"] if not c["pass"]]
    assert failed == ["tail_asymptote[k=60]"]
    assert "tail_asymptote[k=60]" in caplog.text


def test_invalid_config_exit_two_lists_fields(tmp_path):
    cfg = {"eps": [0.1, -1], "trials": 0, "bogus": 1, "weight": {"family": "nope"}}
    res = invoke(tmp_path, "simulate", cfg)
    assert res.exit_code == 2
    summary = json.loads(res.stdout)
    assert summary["status"] == "invalid-config"
    joined = " ".join(summary["errors"])
    for field in ("eps[1]", "trials", "bogus", "weight"):
        assert field in joined
    assert not (tmp_path / "out").exists()


def test_bad_json_and_bad_seed(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    res = CliRunner().invoke(main, ["moments", "--config", str(p)])
    assert res.exit_code == 2
    res = invoke(tmp_path, "moments", {}, "--seed", "-3")
    assert res.exit_code == 2
    res = invoke(tmp_path, "moments", {}, "--seed", "abc")
    assert res.exit_code == 2 and "seed" in res.stdout


def test_experiment_mismatch(tmp_path):
    res = invoke(tmp_path, "moments", {"experiment": "clt"})
    assert res.exit_code == 2


def test_serial_runs_byte_identical(tmp_path):
    cfg = {"manifold": "torus", "m": 2, "eps": [0.25], "trials": 3}
    outs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        status, summary = run("simulate", dict(cfg), d, jobs=1)
        outs.append({n: (d / n).read_bytes() for n in summary["artifacts"] if "manifest" not in n})
    assert outs[0] == outs[1]
    assert len(outs[0]) >= 2


def test_parallel_matches_serial(tmp_path):
    cfg = {"manifold": "torus", "m": 2, "eps": [0.25], "trials": 4}
    s1 = run("simulate", dict(cfg), tmp_path / "s", jobs=1)[1]
    s2 = run("simulate", dict(cfg), tmp_path / "p", jobs=2)[1]
    for n in s1["artifacts"]:
        if "manifest" not in n:
            assert (tmp_path / "s" / n).read_bytes() == (tmp_path / "p" / n).read_bytes()


def test_timestamp_only_in_manifest(tmp_path):
    status, summary = run("moments", {"ks": [0, 1]}, tmp_path, jobs=1)
    for n in summary["artifacts"]:
        text = (tmp_path / n).read_text()
        assert ("timestamp" in text) == n.endswith("manifest.json")


def test_config_hash_stable_and_sensitive():
    a = validate({"eps": [0.1]}, "simulate").hash()
    b = validate({"eps": [0.1]}, "simulate").hash()
    c = validate({"eps": [0.2]}, "simulate").hash()
    d = validate({"eps": [1]}, "simulate").hash()
    e = validate({"eps": [1.0]}, "simulate").hash()
    assert a == b != c
    assert d == e
    assert len(a) == 12


def test_csv_rfc4180(tmp_path):
    rows = [{"name": 'a "quoted", value', "x": 1.5, "flag": True, "lst": [1, 2]}]
    p = tmp_path / "t.csv"
    write_csv(p, rows, "abc", 7)
    raw = p.read_bytes()
    assert raw.count(b"\r\n") == 2
    assert b'"a ""quoted"", value"' in raw
    parsed = list(csv.reader(io.StringIO(raw.decode(), newline="")))
    assert parsed[0] == ["config_hash", "seed", "name", "x", "flag", "lst"]
    assert parsed[1] == ["abc", "7", 'a "quoted", value', "1.5", "true", "[1, 2]"]


def test_clean_nonfinite():
    assert _clean({"a": float("nan"), "b": [float("inf")], 1: 2}) == {"a": "nan", "b": ["inf"], "1": 2}


def test_tolerance_override():
    cfg = validate({"tolerances": {"ks": 0.1}}, "simulate")
    assert cfg.tol("ks") == 0.1 and cfg.tol("exponent") == DEFAULT_TOL["exponent"]
    with pytest.raises(ConfigError) as exc:
        validate({"tolerances": {"nope": 1}}, "simulate")
    assert "tolerances.nope" in exc.value.errors[0]


def test_us_range_enforced():
    with pytest.raises(ConfigError) as exc:
        validate({"us": [3.0], "vs": [1.0]}, "rmt-identities")
    assert exc.value.errors[0].startswith("us:")


def test_sphere_requires_m2():
    with pytest.raises(ConfigError):
        validate({"manifold": "sphere", "m": 3}, "simulate")


@pytest.mark.parametrize("name", sorted(p.name for p in (REPO / "configs").glob("*.json")))
def test_shipped_configs_validate(name):
    raw = json.loads((REPO / "configs" / name).read_text())
    raw.pop("out", None)
    validate(raw, raw["experiment"])


values = st.one_of(st.none(), st.booleans(), st.integers(-5, 10**6), st.floats(allow_nan=True), st.text(max_size=5),
                   st.lists(st.floats(-2, 2), max_size=3))


@settings(max_examples=200)
@given(
    exp=st.sampled_from([e for e in EXPERIMENTS]),
    raw=st.dictionaries(st.sampled_from(sorted(ExperimentConfig.__dataclass_fields__) + ["junk"]), values, max_size=4),
)
def test_validate_fuzz(exp, raw):
    # either a valid config or a ConfigError with field-level messages, never anything else
    try:
        cfg = validate(raw, exp)
    except ConfigError as e:
        assert e.errors and all(":" in m for m in e.errors)
    else:
        assert isinstance(cfg, ExperimentConfig)
        json.dumps(cfg.canonical())


def test_console_script_end_to_end(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"ks": [0, 1]}))
    proc = subprocess.run([sys.executable, "-m", "morse_spectra.cli", "moments", "--config", str(p), "--out",
                           str(tmp_path / "o"), "--serial"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "pass"
    # failures are named on stderr, stdout stays pure JSON
    p.write_text(json.dumps({"weight": {"family": "bump-offset"}, "ks": [1], "tail_ks": [60]}))
    proc = subprocess.run([sys.executable, "-m", "morse_spectra.cli", "moments", "--config", str(p), "--out",
                           str(tmp_path / "o"), "--serial"], capture_output=True, text=True, check=False)
    assert proc.returncode == 1
    assert "tail_asymptote[k=60]" in proc.stderr
    json.loads(proc.stdout)


def test_report_collates(tmp_path):
    run("moments", {"ks": [0]}, tmp_path, 1)
    status, summary = run("report", {}, tmp_path, 1)
    assert status == 0
    table = (tmp_path / summary["artifacts"][0]).read_text()
    assert "moments" in table and "gaussian_moment_rel_delta" in table
    # a failing upstream check makes the report fail too
    run("moments", {"weight": {"family": "bump-offset"}, "ks": [1], "tail_ks": [60]}, tmp_path, 1)
    status, summary = run("report", {}, tmp_path, 1)
    assert status == 1
    assert "moments:tail_asymptote[k=60]" in [c["name"] for c in summary["checks"] if not c["pass"]]
