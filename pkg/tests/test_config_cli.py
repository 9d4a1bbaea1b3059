import csv
import io
import json

import pytest

from plateshape.cli import csv_body, format_value, main, render_csv
from plateshape.config import EXPERIMENTS, ConfigError, config_from_dict, load_config
from plateshape.experiments import Table
from small_configs import small_config


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_rows(path):
    body = csv_body(open(path).read())
    return list(csv.DictReader(io.StringIO(body)))


def header(path):
    return {ln[2:].split(":", 1)[0]: ln[2:].split(":", 1)[1].strip()
            for ln in open(path) if ln.startswith("# ")}


# --------------------------------------------------------------- config


def test_defaults_validate():
    cfg = config_from_dict({"experiment": "spectrum"})
    assert cfg.material.params().k == pytest.approx(5 / 6)
    assert cfg.domain.kind == "disk"


def test_engineering_material():
    cfg = config_from_dict({"experiment": "spectrum", "material": {"E": 1.0, "nu": 0.3, "t": 0.1}})
    assert cfg.material.params().mu == pytest.approx(1 / 2.6)


@pytest.mark.parametrize("bad", [
    {"experiment": "nope"},
    {"experiment": "spectrum", "amplitudes": [0.01, 0.02]},
    {"experiment": "spectrum", "amplitudes": [0.02, -0.01]},
    {"experiment": "spectrum", "colour": "red"},
    {"experiment": "spectrum", "domain": {"kind": "atlas", "path": "/does/not/exist"}},
    {"experiment": "spectrum", "domain": {"kind": "hexagon"}},
    {"experiment": "spectrum", "material": {"E": 1.0}},
    {"experiment": "spectrum", "material": {"t": -1.0}},
    {"experiment": "spectrum", "seed": -1},
    {"experiment": "spectrum", "seed": 2 ** 64},
    {"experiment": "spectrum", "shear_rule": "half"},
    {"experiment": "spectrum", "amplitudes": 0.1},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_experiment_and_seed_override():
    cfg = config_from_dict({"experiment": "hadamard", "seed": 1}, experiment="hadamard", seed=99)
    assert cfg.seed == 99
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": "hadamard"}, experiment="spectrum")


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_input_hash_tracks_config():
    a = config_from_dict({"experiment": "spectrum", "n_eigs": 4})
    b = config_from_dict({"experiment": "spectrum", "n_eigs": 5})
    assert a.input_hash() == config_from_dict({"experiment": "spectrum", "n_eigs": 4}).input_hash()
    assert a.input_hash() != b.input_hash()
    assert a.input_hash("m1") != a.input_hash("m2")


# ------------------------------------------------------------- formatting


def test_format_value_significant_digits():
    assert format_value(1 / 3) == "0.333333333333"
    assert format_value(3) == "3"
    assert format_value(True) == "true"
    assert format_value("{2 3}") == "{2 3}"


def test_render_and_strip():
    t = Table(["a", "b"], tests="something", notes=["n1"])
    t.add(1, 0.5)
    text = render_csv(t, {"experiment": "x"})
    assert text.splitlines()[:2] == ["# experiment: x", "# note: n1"]
    assert csv_body(text) == "a,b\n1,0.5\n"


# ------------------------------------------------------------------- cli


def test_unknown_subcommand_is_usage_error(tmp_path):
    assert main(["bogus", "--config", write_cfg(tmp_path, {})]) == 2


def test_missing_config_is_usage_error(tmp_path):
    assert main(["spectrum", "--config", str(tmp_path / "none.json")]) == 2
    assert main(["spectrum"]) == 2


def test_bad_thread_count_is_usage_error(tmp_path, monkeypatch):
    monkeypatch.setenv("PLATESHAPE_THREADS", "many")
    assert main(["spectrum", "--config", write_cfg(tmp_path, small_config("spectrum")),
                 "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    cfg = small_config("spectrum")
    cfg["n_eigs"] = 10 ** 6  # more than the DOF count: invalid argument -> usage
    assert main(["spectrum", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    fold = small_config("hadamard")
    fold["fields"] = ["elliptical"]
    fold["eps"] = 2.0  # I - 2 (x1, -x2) flips orientation: the degenerate map is a numerical failure
    assert main(["hadamard", "--config", write_cfg(tmp_path, fold), "--out", str(tmp_path)]) == 3


def test_spectrum_square_six_rows(tmp_path):
    out = tmp_path / "out"
    assert main(["spectrum", "--config", write_cfg(tmp_path, small_config("spectrum")), "--out", str(out)]) == 0
    path = out / "spectrum.csv"
    rows = read_rows(path)
    g = [float(r["gamma"]) for r in rows]
    assert len(g) == 6 and all(v > 0 for v in g) and g == sorted(g)
    h = header(path)
    assert h["experiment"] == "spectrum"
    assert json.loads(h["config"])["n_eigs"] == 6
    assert len(h["input_hash"]) == 16 and len(h["mesh"]) == 16
    assert h["tests"]


def test_hadamard_disk_first_mode(tmp_path):
    cfg = {"experiment": "hadamard", "domain": {"kind": "disk", "refine_level": 3}, "n_eigs": 1,
           "material": {"t": 0.1, "lam": 1.0, "mu": 1.0, "k": 1.0}, "fields": ["x"]}
    assert main(["hadamard", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "hadamard.csv")
    assert list(rows[0]) == ["quantity", "n_or_F", "s", "psi_tag", "value", "fd_value", "rel_err"]
    first = next(r for r in rows if r["n_or_F"] == "1" and r["psi_tag"] == "x")
    assert float(first["rel_err"]) < 0.05


def test_seed_flag_changes_random_field(tmp_path):
    path = write_cfg(tmp_path, small_config("hadamard"))
    bodies = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        assert main(["hadamard", "--config", path, "--out", str(out), "--seed", seed]) == 0
        bodies.append(csv_body((out / "hadamard.csv").read_text()))
    assert bodies[0] != bodies[1]


def test_ball_criticality_writes_profiles(tmp_path):
    path = write_cfg(tmp_path, small_config("ball-criticality"))
    assert main(["ball-criticality", "--config", path, "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.glob("ball-criticality*.csv"))
    assert "ball-criticality.csv" in names and "ball-criticality_bounds.csv" in names
    assert any(n.startswith("ball-criticality_profile_L2_F1") for n in names)
    assert not list(tmp_path.glob(".tmp-*"))


@pytest.mark.parametrize("tag", EXPERIMENTS)
def test_every_experiment_runs_and_is_deterministic(tmp_path, tag):
    path = write_cfg(tmp_path, small_config(tag))
    bodies = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main([tag, "--config", path, "--out", str(out)]) == 0
        bodies.append({p.name: csv_body(p.read_text()) for p in sorted(out.glob("*.csv"))})
    assert bodies[0] == bodies[1]
    assert all(b.count("\n") >= 2 for b in bodies[0].values())
