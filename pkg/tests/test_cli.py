import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kslab.cli import main
from kslab.config import evaluate_expression, load_config
from kslab.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def toml_value(value):
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return "[" + ", ".join(toml_value(v) for v in value) + "]"
    return repr(value)


def write_config(path, **overrides):
    doc = {
        "grid": {"a": -3.0, "b": 3.0, "M": 19, "margin": 4},
        "system": {"particles": 2, "statistics": "fermion-singlet",
                   "interaction": "softcore", "strength": 1.0, "eps": 1.0},
        "potential": {"orders": ["0.5*x^2", "0.3*x*exp(-(x/2)^2)"]},
        "inversion": {"K": 1, "solver_tol": 1e-12},
        "experiment": {"kind": "roundtrip", "T": 0.08, "dt": 1e-3, "seed": 3},
        "output": {"directory": "out"},
    }
    for block, fields in overrides.items():
        doc.setdefault(block, {}).update(fields)
    lines = []
    for block, fields in doc.items():
        lines.append(f"[{block}]")
        for key, value in fields.items():
            lines.append(f"{key} = {toml_value(value)}")
        lines.append("")
    path.write_text("\n".join(lines))
    return path


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------


def test_expression_grammar():
    x = np.linspace(-2, 2, 11)
    assert np.allclose(evaluate_expression("0.5*x^2", x), 0.5 * x**2)
    assert np.allclose(evaluate_expression("-(x/2.2)^2", x), -((x / 2.2) ** 2))
    assert np.allclose(
        evaluate_expression("sin(pi*x) + cos(x) - exp(-x)", x),
        np.sin(np.pi * x) + np.cos(x) - np.exp(-x),
    )
    assert np.allclose(evaluate_expression("3", x), 3.0)


def test_expression_rejects_unknown_constructs():
    x = np.linspace(0, 1, 5)
    for bad in (
        "__import__('os')",
        "x.mean()",
        "lambda y: y",
        "tan(x)",
        "y + 1",
        "x @ x",
        "'abc'",
    ):
        with pytest.raises(ConfigurationError):
            evaluate_expression(bad, x)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def test_validate_shipped_configs():
    for cfg_path in sorted(CONFIGS.glob("*.toml")):
        cfg = load_config(cfg_path)
        assert cfg.config_hash


def test_validation_names_field(tmp_path):
    p = write_config(tmp_path / "bad.toml", grid={"M": 2})
    with pytest.raises(ConfigurationError) as err:
        load_config(p)
    assert "grid.M" in str(err.value)


def test_validation_rejects_bare_coulomb(tmp_path):
    p = write_config(tmp_path / "bad.toml", system={"eps": 0.0})
    with pytest.raises(ConfigurationError) as err:
        load_config(p)
    assert "soft-core" in str(err.value) or "eps" in str(err.value)


def test_validation_rejects_unknown_kind(tmp_path):
    p = write_config(tmp_path / "bad.toml", experiment={"kind": "explode"})
    with pytest.raises(ConfigurationError) as err:
        load_config(p)
    assert "experiment.kind" in str(err.value)


def test_validation_requires_enough_potential_orders(tmp_path):
    p = write_config(tmp_path / "bad.toml", inversion={"K": 3})
    with pytest.raises(ConfigurationError) as err:
        load_config(p)
    assert "potential.orders" in str(err.value)


def test_tabulated_potential(tmp_path):
    # potentials may be tabulated instead of closed-form
    vals = [float(v) for v in np.round(0.5 * np.linspace(-3, 3, 21)[1:-1] ** 2, 6)]
    p = write_config(
        tmp_path / "tab.toml",
        potential={"values": [vals]},
        inversion={"K": 0},
        experiment={"kind": "invert"},
    )
    cfg = load_config(p)
    tf = cfg.build_potential()
    assert np.allclose(tf[0].values, vals)
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 0


def test_tabulated_potential_rejects_wrong_length(tmp_path):
    p = write_config(
        tmp_path / "tab.toml",
        potential={"values": [[1.0, 2.0]]},
        inversion={"K": 0},
    )
    with pytest.raises(ConfigurationError) as err:
        load_config(p)
    assert "potential.values" in str(err.value)


def test_config_hash_tracks_content(tmp_path):
    a = load_config(write_config(tmp_path / "a.toml"))
    b = load_config(write_config(tmp_path / "b.toml"))
    c = load_config(write_config(tmp_path / "c.toml", experiment={"seed": 4}))
    assert a.config_hash == b.config_hash
    assert a.config_hash != c.config_hash


# ---------------------------------------------------------------------------
# command line behaviour
# ---------------------------------------------------------------------------


def test_version_command(capsys):
    assert main(["version"]) == 0
    assert "kslab" in capsys.readouterr().out


def test_validate_command_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path / "good.toml")
    assert main(["validate", str(good)]) == 0
    bad = write_config(tmp_path / "bad.toml", grid={"M": 2})
    assert main(["validate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "grid.M" in err


def test_run_config_error_exit_code(tmp_path):
    bad = write_config(tmp_path / "bad.toml", system={"eps": 0.0})
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_run_roundtrip_and_artifacts(tmp_path):
    cfg = write_config(tmp_path / "rt.toml")
    out = tmp_path / "out1"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["all_passed"] is True
    assert "slope_K1" in report["metrics"]
    assert report["config_hash"]
    csv_text = (out / "series.csv").read_text().splitlines()
    assert csv_text[0].startswith("# kslab")
    assert csv_text[1].startswith("# config_hash:")
    assert csv_text[3].split(",")[0] == "t" or csv_text[3].startswith("t,")
    assert (out / "summary.txt").read_text().strip().endswith("all passed")


def test_reruns_are_bit_identical(tmp_path):
    cfg = write_config(tmp_path / "rt.toml")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["run", str(cfg), "--out", str(out1)]) == 0
    assert main(["run", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "series.csv").read_bytes() == (out2 / "series.csv").read_bytes()
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


def test_run_directory_fanout(tmp_path):
    d = tmp_path / "cfgs"
    d.mkdir()
    write_config(d / "one.toml", experiment={"kind": "invert"})
    write_config(d / "two.toml", experiment={"kind": "invert"})
    out = tmp_path / "fan"
    assert main(["run", str(d), "--out", str(out)]) == 0
    assert (out / "one" / "report.json").exists()
    assert (out / "two" / "report.json").exists()


def test_seed_override_changes_hash_echo(tmp_path):
    cfg = write_config(tmp_path / "rt.toml", experiment={"kind": "invert"})
    out = tmp_path / "o"
    assert main(["run", str(cfg), "--out", str(out), "--seed", "99"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["experiment"]["seed"] == 99


def test_console_entry_point_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "kslab", "version"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("kslab")
