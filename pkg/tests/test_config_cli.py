import numpy as np
import pytest

from fibermig import records
from fibermig.cli import main
from fibermig.config import load_config, parse_text
from fibermig.errors import ConfigError, UnsupportedConfiguration

SMALL = """\
scenario.name = parabolic-1d   # undirected fibers, kappa = 2
scaling.epsilon = 0.5
grid.nx = 32
grid.ns = 8
grid.length = 2.0
run.t_end = {t_end}
run.pipeline = {pipeline}
run.model = ParabolicZero
init.width = 0.2
"""


def write_config(tmp_path, name="cfg.txt", t_end=0.1, pipeline="kinetic, macro, meso", extra=""):
    path = tmp_path / name
    path.write_text(SMALL.format(t_end=t_end, pipeline=pipeline) + extra)
    return path


def test_parse_text_comments_and_errors():
    assert parse_text("a = 1  # note\n\n# only comment\nb=x") == {"a": "1", "b": "x"}
    with pytest.raises(ConfigError, match=":1:"):
        parse_text("no equals sign")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_text("a = 1\na = 2")
    with pytest.raises(ConfigError, match="empty key"):
        parse_text(" = 3")


def test_load_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError, match="unknown key"):
        load_config({"scaling.eps": "0.1"})
    with pytest.raises(ConfigError, match="scaling.epsilon|epsilon"):
        load_config({"scaling.epsilon": "zero"})
    with pytest.raises(ConfigError, match="run.model"):
        load_config({"run.model": "Elliptic"})
    with pytest.raises(ConfigError):
        load_config({"scenario.name": "nope"})


def test_directed_fibers_rejected_for_parabolic_scaling():
    with pytest.raises(UnsupportedConfiguration):
        load_config({"scenario.name": "parabolic-1d", "fiber.p_plus": "0.75"})


def test_scenario_defaults_apply():
    cfg = load_config({"scenario.name": "hyperbolic-1d"})
    assert cfg.n == 1 and cfg.scaling().kappa == 1
    assert cfg.models() == ["HyperbolicZero", "HyperbolicCorrected"]
    assert cfg.epsilons == [0.2, 0.1, 0.05]


def test_exit_codes(tmp_path):
    ok = write_config(tmp_path, t_end=0.02, pipeline="kinetic")
    assert main(["run", "--config", str(ok), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    bad = tmp_path / "bad.txt"
    bad.write_text("grid.nx = many\n")
    assert main(["run", "--config", str(bad), "--quiet"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.txt"), "--quiet"]) == 2
    unstable = write_config(tmp_path, "dt.txt", t_end=0.5, pipeline="kinetic", extra="run.dt = 0.5\n")
    assert main(["run", "--config", str(unstable), "--out", str(tmp_path / "u"), "--quiet"]) == 3
    directed = write_config(tmp_path, "dir.txt", extra="fiber.p_plus = 0.75\n")
    assert main(["run", "--config", str(directed), "--quiet"]) == 4


def test_zero_end_time_writes_initial_snapshots(tmp_path):
    cfg = write_config(tmp_path, t_end=0.0, pipeline="kinetic, macro")
    out = tmp_path / "zero"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    header, rows = records.read_csv(out / "kinetic_m0.csv")
    assert header == ["t", "x_index", "m0"]
    assert {r[0] for r in rows} == {"0"}
    assert (out / "manifest.txt").exists()


def test_identical_configs_give_identical_csv_bytes(tmp_path):
    cfg = write_config(tmp_path)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    assert "meso_conservation.csv" in names and "macro_ParabolicZero.csv" in names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_manifest_echoes_config(tmp_path):
    cfg = write_config(tmp_path, t_end=0.02, pipeline="kinetic")
    out = tmp_path / "m"
    main(["run", "--config", str(cfg), "--out", str(out), "--quiet"])
    text = (out / "manifest.txt").read_text()
    for line in load_config(cfg).echo():
        assert line in text
    assert "runtime_seconds=" in text


def test_csv_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    fields = rng.random((3, 5))
    path = records.write_field_snapshots([0.0, 0.1, 0.2], fields, 1, "cbar", tmp_path / "f.csv")
    times, back = records.read_field_snapshots(path, (5,))
    assert np.array_equal(back, fields)
    assert np.array_equal(times, [0.0, 0.1, 0.2])
    empty = records.write_csv([], ["a", "b"], tmp_path / "e.csv")
    assert empty.read_text() == "a,b\n"


def test_other_commands(tmp_path, capsys):
    cfg = write_config(tmp_path, t_end=0.05, pipeline="kinetic")
    out = tmp_path / "c"
    assert main(["moments", "--config", str(cfg), "--out", str(out)]) == 0
    assert "closure_mass: 1" in capsys.readouterr().out
    header, _ = records.read_csv(out / "profiles.csv")
    assert header == ["s", "xi1", "xi2", "xi3", "xi4", "xi5"]
    assert main(["profile-check", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert (out / "profile_check.csv").exists()
    sweep = write_config(tmp_path, "sweep.txt", t_end=0.05, pipeline="kinetic",
                         extra="sweep.epsilons = 0.5, 0.25\n")
    assert main(["converge", "--config", str(sweep), "--out", str(out), "--quiet"]) == 0
    header, rows = records.read_csv(out / "convergence.csv")
    assert len(rows) == 2 and header[0] == "model"
    weak = write_config(tmp_path, "weak.txt", t_end=0.05, pipeline="kinetic",
                        extra="run.dt = 0.001\n")
    assert main(["weak-check", "--config", str(weak), "--out", str(out), "--quiet"]) == 0
    header, rows = records.read_csv(out / "weak_residuals.csv")
    assert {r[0] for r in rows} == {"KTE", "Moment0", "Moment012", "ParabolicLimit"}


def test_converge_is_deterministic_for_repeated_epsilon(tmp_path):
    from fibermig.harness import converge
    cfg = load_config(write_config(tmp_path, t_end=0.05))
    rep = converge(cfg, "ParabolicZero", [0.5, 0.5])
    assert rep.rows[0].error == rep.rows[1].error
