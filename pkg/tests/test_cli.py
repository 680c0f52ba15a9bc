import json

import pytest

from gwve.cli import main

E1_SPEC = '{"rule":"constant","dist":{"kind":"geometric","p":0.5}}'


def write_config(tmp_path, **extra):
    doc = {
        "environment": {"rule": "constant", "dist": {"kind": "geometric", "p": 0.5}},
        "horizons": [1, 10, 50],
        "replicates": 50_000,
        "seed": 1234,
    }
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_constants_table(capsys):
    assert main(["constants", "--env", E1_SPEC, "--n", "5,9"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "n,mu,S,a,survival,kolmogorov_ratio"
    row5 = out[1].split(",")
    assert row5[0] == "5"
    assert float(row5[1]) == 1.0 and float(row5[2]) == 10.0 and float(row5[3]) == 5.0
    row9 = out[2].split(",")
    assert float(row9[5]) == pytest.approx(0.9, abs=1e-12)


def test_constants_bad_spec_exit_2(capsys):
    rc = main(["constants", "--env", '{"rule":"constant","dist":{"kind":"geometri"}}', "--n", "5"])
    assert rc == 2
    assert "kind" in capsys.readouterr().err


def test_constants_requires_environment():
    assert main(["constants", "--n", "3"]) == 2


def test_classify_labels(capsys):
    assert main(["classify", "--env", E1_SPEC]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["diagnostics"]["label"] == "critical"
    assert doc["diagnostics"]["sup_condition_a_ratio"] == pytest.approx(1.5)

    e3 = '{"rule":"constant","dist":{"kind":"binomial","n":2,"p":0.75}}'
    assert main(["classify", "--env", e3]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["diagnostics"]["label"] == "supercritical"


def test_check_decomposition_pass(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["check", "decomposition", "--config", str(config), "--out", str(out), "--quiet"]) == 0
    body = (out / "decomposition.csv").read_text()
    assert "decomposition_rel_gap" in body
    summary = json.loads((out / "decomposition_summary.json").read_text())
    assert summary["overall_pass"] is True
    assert summary["seed"] == 1234


def test_check_unknown_name_exit_2(tmp_path, capsys):
    config = write_config(tmp_path)
    with pytest.raises(SystemExit) as err:
        main(["check", "nonsense", "--config", str(config)])
    assert err.value.code == 2


def test_check_failure_exit_1(tmp_path):
    # impossible tolerance forces a failing row
    config = write_config(tmp_path, tolerances={"kolmogorov_gap": 1e-30})
    out = tmp_path / "out"
    assert main(["check", "kolmogorov", "--config", str(config), "--out", str(out), "--quiet"]) == 1


def test_check_precondition_exit_2(tmp_path):
    doc_env = {"rule": "constant", "dist": {"kind": "binomial", "n": 2, "p": 0.75}}
    config = write_config(tmp_path, environment=doc_env)
    assert main(["check", "kolmogorov", "--config", str(config), "--quiet"]) == 2


def test_g_convergence_single_horizon_config_error(tmp_path):
    config = write_config(tmp_path, horizons=[10])
    assert main(["check", "g-convergence", "--config", str(config), "--quiet"]) == 2


def test_simulate_two_spine_summary(tmp_path):
    config = write_config(tmp_path, replicates=200_000)
    out = tmp_path / "sim"
    rc = main(["simulate", "two-spine", "--config", str(config), "--n", "2",
               "--out", str(out), "--quiet"])
    assert rc == 0
    summary = json.loads((out / "simulate_two_spine_n2_summary.json").read_text())
    assert summary["seed"] == 1234
    assert summary["aborted"] == 0
    assert summary["tv_vs_oracle"] < 0.005
    hist = (out / "simulate_two_spine_n2_histogram.csv").read_text().splitlines()
    assert hist[0] == "k,count,frequency"
    counts = {int(line.split(",")[0]): int(line.split(",")[1]) for line in hist[1:]}
    assert sum(counts.values()) == 200_000
    assert min(counts) >= 2


def test_simulate_gw_survival(tmp_path):
    config = write_config(tmp_path, replicates=100_000)
    out = tmp_path / "sim"
    assert main(["simulate", "gw", "--config", str(config), "--n", "3",
                 "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "simulate_gw_n3_summary.json").read_text())
    hist = (out / "simulate_gw_n3_histogram.csv").read_text().splitlines()
    survived = sum(
        int(line.split(",")[1]) for line in hist[1:] if int(line.split(",")[0]) > 0
    )
    phat = survived / summary["completed"]
    assert abs(phat - 0.25) < 3 * (0.25 * 0.75 / 100_000) ** 0.5


def test_simulate_yaglom_outputs(tmp_path):
    config = write_config(tmp_path, horizons=[20, 50], replicates=150_000)
    out = tmp_path / "yag"
    assert main(["simulate", "yaglom", "--config", str(config), "--out", str(out), "--quiet"]) == 0
    ks_lines = (out / "yaglom_ks.csv").read_text().splitlines()
    assert ks_lines[0] == "n,survivors,ks_exp1"
    assert len(ks_lines) == 3
    samples = (out / "yaglom_samples_n50.csv").read_text().splitlines()
    n50 = ks_lines[2].split(",")
    assert int(n50[1]) == len(samples) - 1
    summary = json.loads((out / "yaglom_summary.json").read_text())
    assert summary["seed"] == 1234


def test_seed_flag_overrides_config(tmp_path):
    config = write_config(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    main(["check", "decomposition", "--config", str(config), "--out", str(out_a),
          "--seed", "777", "--quiet"])
    summary = json.loads((out_a / "decomposition_summary.json").read_text())
    assert summary["seed"] == 777
    main(["check", "decomposition", "--config", str(config), "--out", str(out_b), "--quiet"])
    assert json.loads((out_b / "decomposition_summary.json").read_text())["seed"] == 1234


def test_rerun_byte_identical_csv(tmp_path):
    # trimmed replicate budget: widen the TV tolerance to its noise floor
    config = write_config(tmp_path, replicates=80_000, horizons=[2, 4],
                          tolerances={"tv": 0.02})
    out_a, out_b, out_c = tmp_path / "ra", tmp_path / "rb", tmp_path / "rc"
    for out, threads in ((out_a, "1"), (out_b, "1"), (out_c, "4")):
        rc = main(["check", "identities", "--config", str(config), "--out", str(out),
                   "--threads", threads, "--quiet"])
        assert rc == 0
    body_a = (out_a / "transform_identities.csv").read_bytes()
    body_b = (out_b / "transform_identities.csv").read_bytes()
    body_c = (out_c / "transform_identities.csv").read_bytes()
    assert body_a == body_b == body_c


def test_missing_config_exit_2():
    assert main(["check", "decomposition"]) == 2
    assert main(["check", "decomposition", "--config", "/nonexistent/x.json"]) == 2

def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as err:
        main(["constants", "--nope", "x"])
    assert err.value.code == 2
    assert "usage" in capsys.readouterr().err



def test_simulate_abort_fraction_exit_1(tmp_path):
    # explosive deterministic offspring with a tiny node budget: every
    # replicate aborts, so the abort-fraction contract must trip exit 1
    doc_env = {"rule": "constant", "dist": {"kind": "table", "pmf": [0.0, 0.0, 1.0]}}
    config = write_config(tmp_path, environment=doc_env, replicates=500,
                          node_budget=2000, horizons=[30])
    out = tmp_path / "boom"
    rc = main(["simulate", "gw", "--config", str(config), "--n", "30",
               "--out", str(out), "--quiet"])
    assert rc == 1
    summary = json.loads((out / "simulate_gw_n30_summary.json").read_text())
    assert summary["aborted"] == 500
    assert summary["abort_fraction"] == 1.0
