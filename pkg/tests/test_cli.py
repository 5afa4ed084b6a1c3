import json
import math

import pytest
import yaml

from mfelab.cli import INVALID, NUMERICAL, OK, RunConfig, default_hints, main
from mfelab.geometry import annulus

PI = math.pi


def _run(capsys, *args):
    rc = main(list(args))
    out, err = capsys.readouterr()
    return rc, out, err


def _json(out):
    return json.loads(out)


def test_classify_disk(capsys, tmp_path):
    rc, out, _ = _run(capsys, "classify", "--domain", "disk", "--json", "--output-dir", str(tmp_path))
    assert rc == OK
    rec = _json(out)
    assert rec["verdict"] == "first_kind"
    assert rec["D_value"] == pytest.approx(-PI, rel=2e-2)
    assert (tmp_path / "classify.json").exists()


@pytest.mark.parametrize("hole,verdict", [("0,0,0.25", "second_kind"), ("0.3,0,0.02", "first_kind")])
def test_classify_annuli(capsys, tmp_path, hole, verdict):
    rc, out, _ = _run(capsys, "classify", "--domain", "annulus", "--hole", hole, "--json",
                      "--output-dir", str(tmp_path))
    assert rc == OK and _json(out)["verdict"] == verdict


def test_invalid_hole_exit_code(capsys, tmp_path):
    rc, _, err = _run(capsys, "classify", "--domain", "annulus", "--hole", "0.9,0,0.3", "--output-dir", str(tmp_path))
    assert rc == INVALID
    assert "InvalidDomain" in err


def test_malformed_flags(capsys, tmp_path):
    assert _run(capsys, "classify", "--hole", "1,2", "--output-dir", str(tmp_path))[0] == INVALID
    assert _run(capsys, "classify", "--weight", "{not json", "--output-dir", str(tmp_path))[0] == INVALID
    assert _run(capsys, "nonsense")[0] == INVALID


def test_numerical_failure_exit_code(capsys, tmp_path, monkeypatch):
    from mfelab import cli
    from mfelab.errors import NoConvergence

    def boom(*a, **k):
        raise NoConvergence("forced")

    monkeypatch.setattr(cli, "classify", boom)
    rc, _, err = _run(capsys, "classify", "--output-dir", str(tmp_path))
    assert rc == NUMERICAL and "NoConvergence" in err


def test_bol_disk(capsys, tmp_path):
    rc, out, _ = _run(capsys, "bol", "--domain", "disk", "--rho", "4", "--target-h", "0.05", "--json",
                      "--output-dir", str(tmp_path))
    assert rc == OK and _json(out)["overall_pass"]
    text = (tmp_path / "bol.csv").read_text()
    assert text.startswith("# config_hash=")
    assert (tmp_path / "bol.svg").exists()


def test_bol_annulus_strict(capsys, tmp_path):
    rc, out, _ = _run(capsys, "bol", "--domain", "annulus", "--hole", "0,0,0.25", "--rho", "7.9",
                      "--target-h", "0.04", "--json", "--output-dir", str(tmp_path))
    rec = _json(out)
    assert rc == OK and rec["overall_pass"] and rec["strict_multiply_connected"]


def test_counterexample_flag(capsys, tmp_path):
    rc, out, _ = _run(capsys, "bol", "--counterexample", "--alpha=-0.5", "--json", "--output-dir", str(tmp_path))
    assert rc == OK and _json(out)["margin_8pi"] < 0
    rc, out, _ = _run(capsys, "counterexample", "--alpha=-0.25", "--r1", "1e-4", "--json",
                      "--output-dir", str(tmp_path))
    assert rc == OK and _json(out)["margin_8pi"] < 0


def test_counterexample_plain_output(capsys, tmp_path):
    rc, out, _ = _run(capsys, "counterexample", "--output-dir", str(tmp_path))
    assert rc == OK and "margin_8pi" in out


def test_symmetrize(capsys, tmp_path):
    rc, out, _ = _run(capsys, "symmetrize", "--rho", "4", "--target-h", "0.05", "--json",
                      "--output-dir", str(tmp_path))
    rec = _json(out)
    assert rc == OK
    assert rec["max_equimeasurability"] <= 1e-3
    assert rec["energy_inequality"]


def test_mesh_carries_hash(capsys, tmp_path):
    rc, out, _ = _run(capsys, "mesh", "--target-h", "0.1", "--json", "--output-dir", str(tmp_path))
    rec = _json(out)
    assert rc == OK
    assert (tmp_path / "mesh.txt").read_text().startswith(f"# config_hash={rec['config_hash']}")


@pytest.mark.parametrize("fmt", ["json", "yaml"])
def test_config_file_overrides_flags(capsys, tmp_path, fmt):
    data = {"domain": annulus().to_dict(), "target_h": 0.04}
    path = tmp_path / f"cfg.{fmt}"
    path.write_text(json.dumps(data) if fmt == "json" else yaml.safe_dump(data))
    rc, out, _ = _run(capsys, "classify", "--domain", "disk", "--config", str(path), "--json",
                      "--output-dir", str(tmp_path))
    assert rc == OK and _json(out)["verdict"] == "second_kind"


def test_unknown_config_field(capsys, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"tolerance_of_doom": 1}))
    assert _run(capsys, "classify", "--config", str(path), "--output-dir", str(tmp_path))[0] == INVALID


def test_config_hash_ignores_output_dir():
    a = RunConfig(output_dir="a")
    b = RunConfig(output_dir="b")
    assert a.hash == b.hash
    assert RunConfig(target_h=0.05).hash != a.hash


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(target_h=-1).validate()
    with pytest.raises(ValueError):
        RunConfig(lambda_cap=0).validate()


def test_default_hints():
    h = default_hints()
    assert len(h) == 16
    assert h[0] == pytest.approx(PI) and h[-1] == pytest.approx(7.5 * PI)
    gaps = [8 * PI - r for r in h]
    ratios = [gaps[i + 1] / gaps[i] for i in range(15)]
    assert max(ratios) - min(ratios) < 1e-9


def _branch_args(tmp_path, name):
    return ["branch", "--domain", "annulus", "--hole", "0,0,0.25", "--target-h", "0.06",
            "--rho-hints", "1,2,3,4,5,5.5,6,6.5,7,7.5", "--output-dir", str(tmp_path / name)]


def test_branch_second_kind_and_determinism(capsys, tmp_path):
    assert main(_branch_args(tmp_path, "a")) == OK
    assert main(_branch_args(tmp_path, "b")) == OK
    capsys.readouterr()
    for f in ("branch.csv", "ensemble.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rec = json.loads((tmp_path / "a" / "branch.json").read_text())
    assert rec["termination"] == "converged_at_8pi"
    lines = (tmp_path / "a" / "ensemble.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and len(lines) == 12
    for f in ("branch.svg", "ensemble.svg"):
        assert (tmp_path / "a" / f).read_text().lstrip().startswith("<?xml")


def test_ensemble_command(capsys, tmp_path):
    args = _branch_args(tmp_path, "e")
    args[0] = "ensemble"
    rc = main(args + ["--json"])
    rec = json.loads(capsys.readouterr().out)
    assert rc == OK
    assert rec["legendre"]["convex"] and rec["kind"]["agree"]
