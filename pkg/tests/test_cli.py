import json

import numpy as np
import pytest

import reports

from cli import main
from experiments import config_from_dict, run
from errors import BadParams
from generate import path
from space import dump_space, load_space


def last_json(capsys):
    lines = [line for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def run_config(**verify):
    settings = {"embedding_starts": 8, "uniqueness_starts": 2, "convexity_probes": 100,
                "poincare_starts": 2}
    settings.update(verify)
    return {
        "space": {"generator": "path", "n": 5},
        "problem": {"p": 2, "c": 1, "gamma": 2},
        "solver": {},
        "verify": settings,
    }


def test_generate_command(tmp_path, capsys):
    target = tmp_path / "spaces" / "grid.json"

    assert main(["generate", "grid", "--n", "3", "--profile", "dipole", "--out", str(target)]) == 0
    assert last_json(capsys) == {"path": str(target), "vertices": 21, "edges": len(load_space(str(target)).lengths)}

    space = load_space(str(target))
    assert abs(float(space.boundary_data @ space.perimeter)) < 1e-12


def test_bad_parameters_exit_with_a_failure_list(tmp_path, capsys):
    assert main(["generate", "path", "--n", "2", "--out", str(tmp_path / "p.json")]) == 2
    assert last_json(capsys)["failures"][0]["error"] == "BadParams"

    assert main(["check-space", str(tmp_path / "missing.json")]) == 2
    assert last_json(capsys)["failures"][0]["error"] == "FileNotFoundError"


def test_modulus_command(tmp_path, capsys):
    space_file, family_file = tmp_path / "edge.json", tmp_path / "family.json"
    dump_space({"vertices": [{"id": "a", "mu": 1.0, "role": "interior"},
                             {"id": "b", "mu": 1.0, "role": "boundary"}],
                "edges": [{"a": "a", "b": "b", "length": 1.0}]}, str(space_file))
    family_file.write_text('[["a", "b"]]')

    assert main(["modulus", str(space_file), str(family_file), "--p", "2"]) == 0
    output = last_json(capsys)
    assert output["paths"] == 1
    assert output["modulus"] == pytest.approx(2.0, rel=1e-6)


def test_check_space_command(tmp_path, capsys):
    space_file = tmp_path / "path.json"
    dump_space(path(5), str(space_file))

    assert main(["check-space", str(space_file), "--out", str(tmp_path / "out")]) == 0
    report = reports.read_json(str(tmp_path / "out" / "hypothesis.json"))
    assert report["K_D"] >= 1


def test_solve_then_verify(tmp_path, capsys):
    space_file, problem_file = tmp_path / "dipole.json", tmp_path / "problem.json"
    dump_space(path(4, profile="dipole"), str(space_file))
    problem_file.write_text('{"p": 2, "c": 1, "gamma": 2}')
    out = tmp_path / "out"

    assert main(["solve", str(space_file), str(problem_file), "--starts", "2", "--out", str(out)]) == 0
    assert last_json(capsys)["value"] == pytest.approx(-2.9, abs=1e-4)

    minimizer = reports.read_json(str(out / "minimizer.json"))
    assert set(minimizer["u"]) == {"v0", "v1", "v2", "v3"}
    assert minimizer["problem"]["f"] == {"v0": 1.0, "v3": -1.0}

    assert main(["verify", str(space_file), str(problem_file), str(out / "minimizer.json"),
                 "--relax-radii", "--out", str(out)]) == 0
    summary = last_json(capsys)
    assert summary["pass_counts"]["fail"] == 0
    assert (out / "degiorgi.csv").read_text().startswith("y,rho,R,alpha,lhs")
    assert (out / "dgclass.csv").read_text().startswith("sign,y,rho,R,alpha")


def test_config_is_validated(tmp_path):
    with pytest.raises(BadParams):
        config_from_dict({**run_config(), "plots": True})
    with pytest.raises(BadParams):
        config_from_dict({**run_config(), "space": "missing.json"}, base_dir=str(tmp_path))
    with pytest.raises(BadParams):
        config_from_dict(run_config(uniqueness_starts=1))
    with pytest.raises(BadParams):
        config_from_dict(run_config(format="xlsx"))
    with pytest.raises(BadParams):
        config_from_dict({**run_config(), "solver": {"momentum": 0.9}})


@pytest.mark.slow
def test_run_on_zero_data_is_deterministic(tmp_path, capsys):
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps(run_config()))

    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["run", "--config", str(config_file), "--seed", "3", "--out", str(first)]) == 0
    assert last_json(capsys) == {"failures": []}
    assert main(["run", "--config", str(config_file), "--seed", "3", "--out", str(second)]) == 0

    assert (first / "summary.json").read_bytes() == (second / "summary.json").read_bytes()

    summary = reports.read_json(str(first / "summary.json"))
    assert summary["value"] == pytest.approx(-3.0, abs=1e-8)
    assert summary["J0"] == -3.0
    assert summary["q_admissible"]["admissible"] is True
    for name in ("hypothesis.json", "minimizer.json", "degiorgi.csv", "dgclass.csv"):
        assert (first / name).is_file()


@pytest.mark.slow
def test_run_on_a_dipole_grid(tmp_path):
    config = config_from_dict({
        "space": {"generator": "grid", "n": 5, "profile": "dipole"},
        "problem": {"p": 2, "c": 1, "gamma": 2},
        "verify": {"relax_radii": True, "embedding_starts": 8, "uniqueness_starts": 2,
                   "convexity_probes": 100, "poincare_starts": 2, "refinement": [5, 9, 17],
                   "format": "json"},
    })

    outcome = run(config, seed=1, output_dir=str(tmp_path))

    assert outcome.exit_code == 0, outcome.failures
    summary = outcome.summary
    assert summary["value"] < summary["J0"]
    assert summary["pass_counts"]["fail"] == 0
    assert np.isfinite(summary["K_max_p"]) and summary["K_max_p"] > 0
    assert summary["mesh"]["meshes"] == ["n=5", "n=9", "n=17"]
    assert len(summary["mesh"]["ratios"]) == 2 and summary["mesh"]["stable"]
    assert isinstance(reports.read_json(str(tmp_path / "degiorgi.json")), list)
