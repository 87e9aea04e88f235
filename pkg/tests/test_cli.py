import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from kpzlab.cli import (
    ConfigError,
    SUBCOMMANDS,
    config_hash,
    main,
    parse_and_validate,
    parse_seeds,
    resolve_config,
)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "schema.json").read_text())


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, sub, ini, *extra, out="out"):
    code = main([sub, "--config", str(ini), "--profile", "smoke", "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh))


def test_missing_config_is_usage_error(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kpzlab", "noise", "--config",
                           str(tmp_path / "absent.ini")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "config: file not found" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "kpzlab", "noise"], capture_output=True, text=True)
    assert proc.returncode == 2 and "--config" in proc.stderr


def test_help_documents_defaults():
    proc = subprocess.run([sys.executable, "-m", "kpzlab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "smoke: n=64, 2 seeds" in proc.stdout and "(default: 1)" in proc.stdout


def test_alpha_out_of_range_rejected(tmp_path, capsys):
    ini = write(tmp_path, "[experiments]\nalpha = 0.6\n")
    assert main(["oscillation", "--config", str(ini), "--out", str(tmp_path / "o")]) == 2
    assert "alpha: must lie in (0, 1/2)" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_unknown_key_and_bad_value(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        parse_and_validate(["noise", "--config", str(write(tmp_path, "[noise-enhancement]\nbogus = 1\n"))])
    with pytest.raises(ConfigError, match="dt: cannot parse"):
        parse_and_validate(["noise", "--config", str(write(tmp_path, "[experiments]\ndt = fast\n"))])


def test_broken_pin_names_ic(tmp_path, capsys):
    ini = write(tmp_path, "[experiments]\nfamilies = pinned-well, sine\n")
    assert main(["lower-bound", "--config", str(ini), "--out", str(tmp_path / "o")]) == 2
    assert "sine[M=1]" in capsys.readouterr().err


def test_parse_seeds_and_fractions(tmp_path):
    assert parse_seeds("0-3,7") == (0, 1, 2, 3, 7)
    cfg = resolve_config(write(tmp_path, "[noise-enhancement]\nmollification_scale = 1/8\n"),
                         "smoke", None)
    assert cfg["mollification_scale"] == 0.125 and cfg["n_points"] == 64


def test_manifest_hash_is_stable(tmp_path):
    ini = write(tmp_path, "[experiments]\nmagnitudes = 1, 10\n")
    a = parse_and_validate(["harnack", "--config", str(ini)])
    b = parse_and_validate(["harnack", "--config", str(ini)])
    assert a.config_hash == b.config_hash == config_hash(resolve_config(ini, "desk", None))
    c = parse_and_validate(["harnack", "--config", str(ini), "--seeds", "0-2"])
    assert c.config_hash != a.config_hash


def test_zero_noise_oracle_lower_bound_exits_zero(tmp_path):
    ini = write(tmp_path, "[experiments]\nnoise = false\nfamilies = constant\nmagnitudes = 0\n")
    code, out = run(tmp_path, "lower-bound", ini)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["violations"] == 0 and rep["passed"]
    assert rep["checks"]["oracle_oracle_match_large_M"]["passed"]


def test_manifest_written_before_compute(tmp_path):
    ini = write(tmp_path, "[experiments]\nnoise = false\nfamilies = constant\nmagnitudes = 0\n")
    code, out = run(tmp_path, "harnack", ini)
    man = json.loads((out / "manifest.json").read_text())
    rep = json.loads((out / "report.json").read_text())
    assert man["config_hash"] == rep["config_hash"]
    assert (out / "manifest.json").stat().st_mtime_ns <= (out / "report.json").stat().st_mtime_ns


def test_failure_list_is_machine_readable(tmp_path, capsys):
    # the pinned-well family at M = 1 and 1000 fails the 10% spread (see README)
    ini = write(tmp_path, "[experiments]\nfamilies = pinned-well\n")
    code, out = run(tmp_path, "lower-bound", ini)
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["failures"] == ["ic_independence_spread"]


@pytest.mark.parametrize("sub", ["lower-bound", "trees"])
def test_rerun_is_byte_identical(tmp_path, sub):
    ini = write(tmp_path, "[experiments]\nfamilies = pinned-well\n")
    run(tmp_path, sub, ini, out="a")
    run(tmp_path, sub, ini, "--threads", "2", out="b")
    for name in ("rows.csv", "plot.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_trees_writes_snapshots(tmp_path):
    ini = write(tmp_path, "[experiments]\n")
    code, out = run(tmp_path, "trees", ini)
    assert code == 0
    assert sorted(p.name for p in out.glob("*.bin")) == ["trees_seed0.bin", "trees_seed1.bin"]


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_output_schema_matches_golden(tmp_path, sub):
    ini = write(tmp_path, "[experiments]\n")
    run(tmp_path, sub, ini)
    out = tmp_path / "out"
    rep = json.loads((out / "report.json").read_text())
    gold = GOLDEN["subcommands"][sub]
    assert rep["schema_version"] == GOLDEN["schema_version"]
    assert sorted(rep) == gold["report_keys"]
    assert sorted(rep["checks"]) == gold["checks"]
    assert header(out / "rows.csv") == gold["rows_header"]
    assert header(out / "plot.csv") == gold["plot_header"]
