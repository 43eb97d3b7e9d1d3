import json

import numpy as np
import pytest

from dilate_forge import cli
from dilate_forge.presets import PRESETS, build_system, decode_matrix, encode_matrix


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def base_config(**pipeline):
    pipe = {"stages": ["diagnose"]}
    pipe.update(pipeline)
    return {"system": {"preset": "dephasing", "params": {"gamma": 1.0}},
            "grid": {"t_start": 0.0, "t_end": 1.0, "n_steps": 1000},
            "pipeline": pipe}


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_example_validates_and_builds(name, tmp_path):
    cfg = cli.example_config(name)
    cli.validate_config(cfg)
    assert cli.main(["validate", write(tmp_path, cfg)]) == 0
    spec = build_system(name, PRESETS[name]["example"])
    assert spec.dim == 2


def test_presets_command_prints_catalog(capsys):
    assert cli.main(["presets"]) == 0
    cat = json.loads(capsys.readouterr().out)
    assert set(cat) == set(PRESETS)
    for entry in cat.values():
        assert {"params", "example", "convention"} <= set(entry)


def test_matrix_codec_roundtrip():
    m = np.array([[1 + 2j, 0.5], [-1j, 3.0]])
    np.testing.assert_array_equal(decode_matrix(encode_matrix(m)), m)
    with pytest.raises(ValueError):
        decode_matrix([[1, 2], [3, 4]])


@pytest.mark.parametrize("mutate,fragment", [
    (lambda c: c.update(extra=1), "Additional properties"),
    (lambda c: c["pipeline"].update(stages=[]), "stages"),
    (lambda c: c["pipeline"].update(stages=["fly"]), "stages"),
    (lambda c: c["grid"].update(t_end=0.0), "t_end must exceed"),
    (lambda c: c["system"].update(params={"gamma": -1.0}), "system.params"),
    (lambda c: c["system"].update(params={}), "system.params"),
    (lambda c: c["system"].update(preset="nope"), "preset"),
    (lambda c: c["pipeline"].update(initial_state=[[[1, 0], [0, 0]], [[0, 0], [1, 0]]]),
     "system"),
    (lambda c: c.update(perturbation={"delta": 0.1, "generator": {"dim": 3}}), "dimension"),
])
def test_validation_errors_exit_2(mutate, fragment, tmp_path, capsys):
    cfg = base_config()
    mutate(cfg)
    with pytest.raises(cli.ConfigError, match=fragment):
        cli.validate_config(cfg)
    assert cli.main(["validate", write(tmp_path, cfg)]) == 2
    assert cli.main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "validation failed" in capsys.readouterr().err


def test_unreadable_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == 2
    assert cli.main(["validate", str(tmp_path / "missing.json")]) == 2


def test_overrides():
    cfg = cli.apply_overrides(base_config(), ["grid.n_steps=50", "pipeline.h0=2.5",
                                              "output.directory=out", "system.params.gamma=2"])
    assert cfg["grid"]["n_steps"] == 50 and cfg["pipeline"]["h0"] == 2.5
    assert cfg["output"]["directory"] == "out" and cfg["system"]["params"]["gamma"] == 2
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides(base_config(), ["grid"])
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides(base_config(), ["grid.n_steps.x=1"])


def test_stage_prerequisites_are_added_in_order():
    warnings = []
    assert cli.resolve_stages(["compare", "rescale"], warnings) == \
        ["dilate", "simulate", "compare", "rescale"]
    assert len(warnings) == 2


def test_config_hash_ignores_output_directory():
    a = base_config()
    b = dict(base_config(), output={"directory": "elsewhere"})
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash(base_config(tolerance=1e-3))


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = base_config(stages=["diagnose", "compare", "rescale"], initial_state="plus")
    code = cli.main(["run", write(root, cfg), "--out", str(root / "out"),
                     "--override", "grid.n_steps=1000"])
    return code, root / "out"


def test_run_writes_outputs(full_run):
    code, out = full_run
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"diagnosis.json", "hamiltonian.csv", "hamiltonian.json", "reduced_states.csv",
            "reduced_states.json", "comparison.csv", "comparison.json", "rescale.csv",
            "rescale.json", "manifest.json"} <= names
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["tool_version"]
    assert set(manifest["timings_seconds"]) == {"diagnose", "dilate", "simulate", "compare",
                                                "rescale"}
    assert len(manifest["config_hash"]) == 64
    assert json.loads((out / "diagnosis.json").read_text())["diverges_at_zero"] is True


def test_hamiltonian_csv_roundtrip(full_run):
    _, out = full_run
    t, h = cli.read_matrix_csv(out / "hamiltonian.csv")
    side = json.loads((out / "hamiltonian.json").read_text())
    assert h.shape == (1001, 4, 4) and len(t) == 1001
    assert np.all(np.isnan(h[: side["h_valid_from"]]))
    np.testing.assert_allclose(h[side["h_valid_from"]:], np.conj(np.swapaxes(
        h[side["h_valid_from"]:], 1, 2)), atol=1e-12)
    header = (out / "hamiltonian.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["t", "H_0_0_re", "H_0_0_im"]


def test_csv_precision_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    mats = rng.normal(size=(3, 2, 2)) + 1j * rng.normal(size=(3, 2, 2))
    times = np.array([0.0, 0.1, 0.2])
    cli.write_matrix_csv(tmp_path / "m.csv", times, mats, "M")
    t, back = cli.read_matrix_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back, mats)
    np.testing.assert_array_equal(t, times)


def test_reduced_states_are_density_matrices(full_run):
    _, out = full_run
    _, rho = cli.read_matrix_csv(out / "reduced_states.csv")
    np.testing.assert_allclose(np.trace(rho, axis1=1, axis2=2), 1.0, atol=1e-10)
    comp = json.loads((out / "comparison.json").read_text())
    assert comp["passed"] and comp["max_trace_distance"] < 1e-6


def test_numerical_failure_exit_3_names_stage_and_grid_point(tmp_path, capsys):
    cfg = base_config(stages=["rescale"])
    cfg["system"] = {"preset": "rwa_driving",
                     "params": {"gamma": 1.0, "omega0": 2.0, "omega": 0.3}}
    code = cli.main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 3
    assert "stage rescale" in err and "grid index" in err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["exit_code"] == 3 and "stage rescale" in manifest["error"]


def test_tolerance_failure_exit_3(tmp_path, capsys):
    cfg = base_config(stages=["compare"], tolerance=1e-12)
    code = cli.main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 3
    err = capsys.readouterr().err
    assert "stage compare" in err and "grid point" in err
    assert (tmp_path / "o" / "comparison.json").exists()


def test_cutoff_run_reports_bound(tmp_path):
    cfg = base_config(stages=["compare"], tolerance=0.5)
    cfg["cutoff"] = {"c": 20.0}
    assert cli.main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    header = (tmp_path / "o" / "comparison.csv").read_text().splitlines()[0]
    assert header == "t,trace_distance,unitary_error_bound"
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert any(w.startswith("cutoff:") for w in manifest["warnings"])


def test_figures_stage(tmp_path):
    cfg = base_config(stages=["figures"], figures={
        "fig2": {"cutoffs": [4.0, 8.0], "t_end": 0.5, "n_steps": 200},
        "fig3": {"t_end": 2.0, "n_steps": 50}})
    assert cli.main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    header = (tmp_path / "o" / "fig2.csv").read_text().splitlines()[0]
    assert header == "t,exact,C=4,C=8"
    rows = (tmp_path / "o" / "fig3.csv").read_text().splitlines()
    assert rows[0] == "t,H0,f,g" and rows[1].split(",")[1] == "inf"


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    assert cli._thread_cap() == 2
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    assert cli._thread_cap() is None
    monkeypatch.delenv(cli.THREADS_ENV)
    assert cli._thread_cap() is None
