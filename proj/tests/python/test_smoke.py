import json
import math
import os

import pytest

import fedquant as fq


def test_quantize_hand_example():
    assert fq.quantize([0.6, 10.0, -0.26], step=0.5, bits=4) == [0.5, 3.5, -0.5]


def test_make_spec_and_rescale():
    spec = fq.make_spec(0.7, 4)
    assert spec["grid_min"] == -8 and spec["grid_max"] == 7
    assert spec["step"] == pytest.approx(0.1)
    assert fq.rescale_step(0.01, 8, 4) == 17 * 0.01
    assert fq.rescale_step(0.01, 8, 2) == 85 * 0.01


def test_estimate_range_no_worse_than_full_range():
    w = [math.sin(i) for i in range(200)]
    est = fq.estimate_range(w, 3)
    full = fq.make_spec(max(abs(x) for x in w), 3)
    q = fq.quantize(w, full["step"], 3)
    assert est["sse"] <= sum((a - b) ** 2 for a, b in zip(q, w)) + 1e-12


def test_kurtosis_two_point():
    assert fq.kurtosis([-1.0, 1.0] * 50) == pytest.approx(1.0)


def test_bound_and_conditions():
    out = fq.compute_bound(L=1, sigma_l=1, sigma_g=1, D=100, K=10, T=1000, eta_c=0.01, eta_s=1,
                           method="qat", steps=[0.12], gap=1)
    assert out["conditions_ok"]
    assert out["bound"] == pytest.approx(25.0333333333333, rel=1e-12)
    bad = fq.compute_bound(L=1, sigma_l=1, sigma_g=1, D=100, K=10, T=1000, eta_c=0.02, eta_s=1,
                           method="qat", steps=[0.12], gap=1)
    assert bad["bound"] is None
    assert not fq.check_conditions(0.02, 1.0, 10, 1.0)
    assert fq.r_value("mqat", [0.1, 0.4]) == 0.2


def test_errors_are_raised_as_exceptions():
    with pytest.raises(fq.FedquantError):
        fq.make_spec(1.0, 1)
    with pytest.raises(fq.FedquantError):
        fq.r_value("lsq", [0.1])


def _smoke_config():
    path = os.path.join(os.environ.get("FEDQUANT_SOURCE_DIR", os.path.join(os.path.dirname(__file__), "..", "..")),
                        "configs", "smoke.json")
    with open(path) as f:
        return json.load(f)


def test_run_experiment_is_deterministic():
    cfg = _smoke_config()
    a = fq.run_experiment(cfg)
    b = fq.run_experiment(json.dumps(cfg), threads=2)
    assert a == b
    rows = a["report"]["rows"]
    assert [r["config"] for r in rows] == ["W-32", "W-8", "W-6", "W-4", "W-3", "W-2"]
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)
    assert [h["round"] for h in a["history"]] == [1, 2]
    c = fq.run_experiment(cfg, overrides=["seed=5"])
    assert c["report"]["metadata"]["seed"] == 5


def test_default_config_round_trip():
    cfg = fq.default_config()
    assert cfg["schema_version"] == 1
    out = fq.run_experiment(cfg, overrides=["federation.rounds=1", "data.samples_per_class=20", "model.hidden=[8]",
                                           "federation.num_clients=2", "federation.clients_per_round=2",
                                           "eval.bit_configs=[\"W-32\"]"])
    assert len(out["report"]["rows"]) == 1
