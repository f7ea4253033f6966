import json
import math
import os

import pytest

import survuq


def test_chi_square_closed_form():
    assert survuq.chi_square_p(4.2, 2) == pytest.approx(math.exp(-2.1), abs=1e-8)
    assert survuq.chi_square_p(16.919, 9) == pytest.approx(0.05, abs=1e-3)


def test_config_hash_shape():
    h = survuq.config_hash('{"x":1}')
    assert len(h) == 16
    assert h == survuq.config_hash('{"x":1}')
    assert h != survuq.config_hash('{"x":2}')


def test_partial_likelihood_fixture():
    f = [0.5, -0.2, 0.1, 0.8, -0.5, 0.0]
    y = [2.0, 3.0, 3.0, 4.0, 5.0, 6.0]
    d = [1, 1, 1, 0, 1, 0]
    assert survuq.partial_log_likelihood(f, y, d) == pytest.approx(
        -6.076667465831498, abs=1e-12
    )
    g = survuq.plm_gradient(f, y, d)
    assert g[0] == pytest.approx(0.7773410822003183, abs=1e-12)
    assert sum(g) == pytest.approx(0.0, abs=1e-10)


def test_kaplan_meier_fixture():
    times, surv = survuq.kaplan_meier(
        [1, 2, 2, 3, 4, 4, 5], [1, 1, 0, 1, 1, 1, 0]
    )
    assert list(times) == [1.0, 2.0, 3.0, 4.0]
    assert surv[0] == pytest.approx(6 / 7, abs=1e-12)
    assert surv[3] == pytest.approx(0.17857142857142863, abs=1e-12)


def test_median_and_quantiles():
    assert survuq.median_survival_time([1.0, 2.0], [0.8, 0.4]) == pytest.approx(1.75)
    assert survuq.quantile_linear([float(v) for v in range(1, 101)], 0.05) == pytest.approx(
        5.95
    )


def test_concordance_perfect_ranking():
    ct = [[1.0, 2.0, 3.0]] * 3
    cv = [[0.1, 0.05, 0.01], [0.5, 0.3, 0.2], [0.9, 0.8, 0.7]]
    assert survuq.concordance_td(ct, cv, [1.0, 2.0, 3.0], [1, 1, 1]) == 1.0


def test_synth_generation():
    a = survuq.synth_generate(50, [1.0, -1.0], seed=9, censor_rate_target=0.3)
    b = survuq.synth_generate(50, [1.0, -1.0], seed=9, censor_rate_target=0.3)
    assert list(a["time"]) == list(b["time"])
    assert a["X"].shape == (50, 2)
    assert set(a["event"]) <= {0, 1}
    assert all(t > 0 for t in a["time"])


def test_errors_are_typed():
    with pytest.raises(survuq.SurvuqError):
        survuq.kaplan_meier([], [])


def test_run_experiment_end_to_end(tmp_path):
    out = tmp_path / "run"
    config = {
        "dataset": {
            "kind": "synth",
            "n": 120,
            "d": 2,
            "true_weights": [1.5, -1.5],
            "censor_rate_target": 0.3,
            "seed": 11,
        },
        "split_seed": 7,
        "models": [
            {
                "name": "m",
                "backend": "mcd",
                "hidden": [3],
                "max_epochs": 3,
                "patience": 3,
                "dropout_rate": 0.2,
            }
        ],
        "n_posterior_samples": 50,
        "plot_samples": 20,
        "output_dir": str(out),
    }
    manifest = json.loads(survuq.run_experiment(json.dumps(config)))
    assert manifest["format"] == "survuq-manifest"
    assert (out / "manifest.json").exists()
    for rel in manifest["files"]:
        assert (out / rel).exists(), rel
    [model] = manifest["models"]
    assert model["name"] == "m"
    assert 0.0 <= model["metrics"]["ci_td"] <= 1.0


def test_hyper_search_end_to_end():
    config = {
        "dataset": {
            "kind": "synth",
            "n": 120,
            "d": 2,
            "true_weights": [1.5, -1.5],
            "censor_rate_target": 0.3,
            "seed": 11,
        },
        "split_seed": 7,
        "models": [
            {"name": "m", "backend": "mlp", "hidden": [3], "max_epochs": 3, "patience": 3}
        ],
        "search": {"learning_rate": [0.01, 0.001]},
    }
    [res] = survuq.hyper_search(json.dumps(config), 5)
    assert res["model"] == "m"
    assert res["evaluated"] == 2
    assert res["learning_rate"] in (0.01, 0.001)
