import csv
import subprocess
import sys
from importlib import resources
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eotlab import cli
from eotlab.config import ExperimentConfig, Thresholds, parse_config, serialize_config
from eotlab.errors import ConfigParseError, ConfigValidationError
from eotlab.estimates import CSV_COLUMNS
from eotlab.instances import InstanceSpec

CONFIG_DIR = resources.files("eotlab") / "configs"


def packaged(name):
    return (CONFIG_DIR / f"{name}.ini").read_text(encoding="utf-8")


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_minimal_config_defaults():
    cfg = parse_config("[instance]\nname = A\n")
    assert cfg.tol == 1e-9 and cfg.max_iter == 10**6
    assert cfg.instance.resolution == 128
    assert cfg.epsilons == (0.2, 0.1, 0.05, 0.02, 0.01)
    assert cfg.subset_margin == 0.1 and cfg.beta is None


def test_epsilons_canonicalized():
    cfg = parse_config("[instance]\nname = A\n[sweep]\nepsilons = 0.01, 0.2, 0.05\n")
    assert cfg.epsilons == (0.2, 0.05, 0.01)


def test_resolution_too_small():
    with pytest.raises(ConfigValidationError) as info:
        parse_config("[instance]\nname = A\nresolution = 4\n")
    assert info.value.key == "resolution"
    assert "resolution" in str(info.value)


def test_syntax_error_has_line_number():
    with pytest.raises(ConfigParseError) as info:
        parse_config("[instance]\nname = A\nthis line has no separator\n")
    assert info.value.lineno == 3
    with pytest.raises(ConfigParseError) as info:
        parse_config("name = A\n")
    assert info.value.lineno == 1


@pytest.mark.parametrize("text, key", [
    ("[instance]\nname = A\ncolour = red\n", "colour"),
    ("[instance]\nname = A\n[extras]\nx = 1\n", "extras"),
    ("[instance]\nname = A\n[sweep]\nepsilons = 0.1, -0.2\n", "epsilons"),
    ("[instance]\nname = A\n[sweep]\ntol = abc\n", "tol"),
    ("[instance]\nname = A\nsource_density = lumpy\n", "source_density"),
    ("[instance]\nname = A\n[sweep]\nbeta = 1.5\n", "beta"),
    ("[instance]\nname = Z\n", "name"),
    ("[sweep]\ntol = 1e-9\n", "instance"),
])
def test_validation_names_key(text, key):
    with pytest.raises(ConfigValidationError) as info:
        parse_config(text)
    assert info.value.key == key


@pytest.mark.parametrize("name", ["A", "B", "C", "D", "quadratic", "holder"])
def test_packaged_configs_round_trip(name):
    cfg = parse_config(packaged(name))
    assert parse_config(serialize_config(cfg)) == cfg


boxes = st.lists(st.tuples(st.floats(-5, 5), st.floats(0.1, 5)).map(lambda t: (t[0], t[0] + t[1])),
                 min_size=1, max_size=2)


@settings(max_examples=50, deadline=None)
@given(boxes, st.integers(8, 300),
       st.lists(st.floats(1e-4, 10), min_size=1, max_size=6, unique=True),
       st.one_of(st.none(), st.floats(0.01, 1.0)), st.floats(1e-12, 1e-3),
       st.integers(1, 10**7), st.sampled_from(["uniform", "linear", "sine-perturbed"]),
       st.floats(0.0, 0.9))
def test_round_trip_property(box, res, eps, beta, tol, max_iter, dens, param):
    inst = InstanceSpec("custom", tuple(box), tuple(box), dens, "uniform",
                        (("amplitude", param),) if dens == "sine-perturbed" else (), (), res)
    cfg = ExperimentConfig(inst, tuple(sorted(eps, reverse=True)), (2.0, 3.0, 4.5), 0.05, beta,
                           tol, max_iter, 7, "some/dir", None, Thresholds(cpt_min=0.3))
    assert parse_config(serialize_config(cfg)) == cfg


def test_sweep_writes_schema(tmp_path, capsys):
    code = cli.main(["sweep", "--config", write(tmp_path, packaged("A")), "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.reader((tmp_path / "A_sweep.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + 5
    assert not list(tmp_path.glob(".*.tmp"))


def test_sweep_header_and_bytes_stable(tmp_path):
    cfgp = write(tmp_path, packaged("B"))
    cli.main(["sweep", "--config", cfgp, "--out", str(tmp_path / "r1")])
    cli.main(["sweep", "--config", cfgp, "--out", str(tmp_path / "r2")])
    for f in ("B_sweep.csv", "B_summary.txt"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_detach_quadratic_row(tmp_path):
    code = cli.main(["detach", "--config", write(tmp_path, packaged("quadratic")), "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "quadratic_detach.csv").open()))
    local = next(r for r in rows if r["check"] == "local")
    assert float(local["p"]) == 2
    assert 0.4999 <= float(local["best_L"]) <= 0.5001


def test_nonconvergence_exit_one(tmp_path, capsys):
    text = "[instance]\nname = A\n[sweep]\nepsilons = 0.005\nmax_iter = 10\n"
    code = cli.main(["sweep", "--config", write(tmp_path, text), "--out", str(tmp_path)])
    assert code == 1
    assert "epsilon=0.005" in capsys.readouterr().err


def test_threshold_failure_exit_two(tmp_path, capsys):
    text = packaged("B").replace("cpt_min = 0.3", "cpt_min = 0.7")
    code = cli.main(["sweep", "--config", write(tmp_path, text), "--out", str(tmp_path)])
    assert code == 2
    assert "cpt_slope" in capsys.readouterr().err


def test_detach_ball_threshold_exit_two(tmp_path):
    text = packaged("holder").replace("ball_domains = square", "ball_domains = thin")
    assert cli.main(["detach", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == 2


def test_bad_config_exit_one(tmp_path, capsys):
    code = cli.main(["sweep", "--config", write(tmp_path, "[instance]\nresolution = 4\n")])
    assert code == 1
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.ini")]) == 1


def test_solve_writes_nodes(tmp_path):
    code = cli.main(["solve", "--config", write(tmp_path, packaged("C")), "--out", str(tmp_path),
                     "--epsilon", "0.05"])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "C_solve.csv").open()))
    assert len(rows) == 144
    assert set(rows[0]) == {"x1", "x2", "u", "grad_u1", "grad_u2", "hess_norm", "y1", "y2", "v"}


def test_report_aggregates(tmp_path):
    for name in ("A", "D"):
        cli.main(["sweep", "--config", write(tmp_path, packaged(name), f"{name}.ini"),
                  "--out", str(tmp_path / name)])
    assert cli.main(["report", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "report.csv").open()))
    assert [r["instance"] for r in rows] == ["A", "D"]
    assert all(float(r["a_hat"]) > 0.1 for r in rows)


def test_report_empty_directory(tmp_path):
    assert cli.main(["report", str(tmp_path)]) == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "eotlab", "detach", "--config",
                          write(tmp_path, packaged("quadratic")), "--out", str(tmp_path),
                          "--threads", "1"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "quadratic_detach.csv").exists()
