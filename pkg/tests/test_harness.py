import math

import numpy as np
import pytest

from fascsi import harness
from fascsi.amp import AmpConfig
from fascsi.channel import SceneConfig
from fascsi.harness import MetricRecord, TrialSpec, ade, aggregate_cell, nmse, run_experiment, run_trial

SMALL = {"K": 200, "G": 100}


def test_ade_examples():
    assert ade({1, 2, 3}, {1, 2, 3}, 3) == 0.0
    assert ade({1, 2}, {3, 4}, 2) == 1.0
    assert ade(set(range(10)), set(range(5)) | {20, 21, 22, 23, 24}, 10) == 0.5
    with pytest.raises(ValueError):
        ade({1}, {1}, 0)


def test_nmse_examples():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
    users = [0, 2, 5]
    assert nmse(H, H, users) == 0.0
    assert nmse(H, np.zeros_like(H), users) == pytest.approx(1.0)
    assert nmse(H, 2 * H, users) == pytest.approx(1.0)
    assert nmse(H, H, []) is None
    assert nmse(H, 2 * H, users, per_user=True) == pytest.approx(1.0)


def test_trial_determinism():
    spec = TrialSpec(SceneConfig(**SMALL, K_a=10), 5.0, "em_amp_geo", seed=3)
    a, b = run_trial(spec), run_trial(spec)
    assert a.same_outcome(b)
    assert 0 <= a.ade <= 1 and a.nmse >= 0


def test_high_snr_geographical_recovers():
    for seed in range(20):
        rec = run_trial(TrialSpec(SceneConfig(**SMALL, K_a=10), 60.0, "em_amp_geo", seed=seed))
        assert rec.ade == 0.0
        assert rec.nmse <= 1e-3


def test_somp_ls_near_noiseless():
    rec = run_trial(TrialSpec(SceneConfig(K=100, G=50, K_a=5), 300.0, "somp_ls", seed=1))
    assert rec.ade == 0.0 and rec.nmse <= 1e-12


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        run_trial(TrialSpec(SceneConfig(**SMALL, K_a=10), 0.0, "nope"))


def test_experiment_row_count_and_order():
    res = run_experiment(
        "vs_snr", {"scene": {**SMALL, "K_a": 10}, "grid": [0.0, 10.0]}, seeds=range(1, 4)
    )
    assert len(res.records) == 2 * 4 * 3
    keys = [(res.grid.index(r.grid_value), res.algorithms.index(r.algorithm), r.seed) for r in res.records]
    assert keys == sorted(keys)
    agg = res.aggregate()
    assert len(agg) == 8 and all(row["trials"] == 3 for row in agg)


def test_convergence_traces_padded_to_tmax():
    res = run_experiment("convergence", {"scene": SMALL, "amp": {"t_max": 6}}, seeds=[0, 1])
    assert {len(r.nmse_trace) for r in res.records} == {6}
    assert harness.median_trace(res.cell("em_amp_geo", 0.0)).shape == (6,)


def test_experiment_override_errors():
    with pytest.raises(ValueError):
        run_experiment("vs_snr", {"bogus": 1}, seeds=[0])
    with pytest.raises(ValueError):
        run_experiment("nope", None, seeds=[0])


def test_parallel_matches_serial():
    ov = {"scene": {**SMALL, "K_a": 10}, "grid": [2, 4], "algorithms": ["em_amp_geo", "somp_ls"]}
    a = run_experiment("vs_ports", ov, seeds=range(3))
    b = run_experiment("vs_ports", ov, seeds=range(3), workers=2)
    assert all(x.same_outcome(y) for x, y in zip(a.records, b.records))


def _rec(seed, nmse_value, ade_value=0.1, flags=""):
    return MetricRecord("a", seed, ade_value, nmse_value, 1, 100, 0.0, flags=flags)


def test_aggregate_seed_order_invariant_and_aborts():
    recs = [_rec(s, 10.0 ** -s, ade_value=s / 10) for s in range(6)]
    recs.append(_rec(9, None, flags="aborted:A9"))
    a = aggregate_cell(recs)
    b = aggregate_cell(list(reversed(recs)))
    assert a == b
    assert a["aborted"] == 1 and a["trials"] == 6
    assert a["nmse_db"] == pytest.approx(10 * math.log10(sum(10.0**-s for s in range(6)) / 6))


def test_aggregate_missing_nmse_is_not_zero():
    row = aggregate_cell([_rec(0, None), _rec(1, None)])
    assert row["nmse"] is None and row["nmse_db"] is None


def test_mac_audit_independent_of_active_users():
    rep = harness.mac_audit_ka(K=300, G=120, N_o=4, k_as=(10, 40))
    assert rep["independent_of_k_a"]
    for r in rep["per_k_a"].values():
        assert abs(r["ratio"] - 1) <= 0.1
