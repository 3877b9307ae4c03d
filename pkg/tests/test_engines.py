import json
import math

import numpy as np
import pytest

from slrprune.admm import AdmmConfig, run_admm
from slrprune.diagnostics import (
    MetricsSink,
    RunReport,
    admm_dual_overestimate,
    estimate_dual_value,
    export_sparsity_heatmap,
    load_heatmap,
    read_metrics,
    slr_dual_overestimate,
    soc_recurs,
)
from slrprune.exceptions import InfeasibleError
from slrprune.lagrangian import (
    QuadraticObjective,
    augmented_lagrangian,
    coupling_terms,
    solve_cardinality_subproblem,
    solve_loss_subproblem,
    update_multipliers,
    violation_norm,
)
from slrprune.optim import OptimizerConfig, make_optimizer
from slrprune.slr import (
    SlrConfig,
    StopCriteria,
    alpha_schedule,
    run_slr,
    stepsize_stage1,
    stepsize_stage2,
)
from slrprune.sparsity import SparsityPlan, project_cardinality

SGD = OptimizerConfig("sgd", lr=0.2)


def toy_2d(start=(3.0, 1.0)):
    return QuadraticObjective({"w": np.array([3.0, 1.0])}, start={"w": np.array(start)})


# Lagrangian pieces ---------------------------------------------------------

def test_augmented_lagrangian_hand_value():
    W = {"a": np.array([1.0, 2.0]), "b": np.array([[3.0]])}
    Z = {"a": np.array([0.0, 2.0]), "b": np.array([[1.0]])}
    Lam = {"a": np.array([0.5, -1.0]), "b": np.array([[2.0]])}
    # tr terms: 0.5*1 + 2*2 = 4.5 ; penalty: 0.25 * (1 + 4) = 1.25
    assert coupling_terms(W, Z, Lam, 0.5) == pytest.approx(5.75)
    assert augmented_lagrangian(1.0, W, Z, Lam, 0.5) == pytest.approx(6.75)
    assert violation_norm(W, Z) == pytest.approx(math.sqrt(5))


def test_infeasible_z_raises():
    plan = SparsityPlan({"a": 1})
    W = {"a": np.array([1.0, 2.0])}
    with pytest.raises(InfeasibleError):
        augmented_lagrangian(0.0, W, W, {"a": np.zeros(2)}, 1.0, plan)


def test_cardinality_subproblem_is_projection(rng):
    W = {"a": rng.standard_normal(10)}
    Lam = {"a": rng.standard_normal(10)}
    Z = solve_cardinality_subproblem(W, Lam, 0.5, SparsityPlan({"a": 3}))
    np.testing.assert_array_equal(Z["a"], project_cardinality(W["a"] + Lam["a"] / 0.5, 3))
    with pytest.raises(ValueError):
        solve_cardinality_subproblem(W, Lam, 0.0, SparsityPlan({"a": 3}))


def test_update_multipliers_returns_new_dict():
    Lam = {"a": np.zeros(2)}
    out = update_multipliers(Lam, 2.0, {"a": np.array([1.0, 1.0])}, {"a": np.array([0.0, 1.0])})
    np.testing.assert_array_equal(out["a"], [2.0, 0.0])
    assert not Lam["a"].any()
    assert update_multipliers(Lam, 0, Lam, Lam)["a"] is not Lam["a"]


# stepsize parameter --------------------------------------------------------

def test_alpha_first_value_and_monotone():
    assert alpha_schedule(1, 300, 0.1) == 1 - 1 / 300
    values = [alpha_schedule(k) for k in range(2, 2000)]
    assert all(0 < v < 1 for v in values)
    assert all(b > a for a, b in zip(values, values[1:]))
    for bad in ((0, 300, 0.1), (1, 1, 0.1), (1, 300, 1.0)):
        with pytest.raises(ValueError):
            alpha_schedule(*bad)


def test_stepsize_oracles_and_sentinel():
    assert stepsize_stage1(0.1, 0.5, 2.0, 4.0) == pytest.approx(0.025)
    assert stepsize_stage2(0.2, 0.5, 3.0, 1.5) == pytest.approx(0.2)
    assert stepsize_stage1(0.1, 0.5, 2.0, 0.0) is None
    assert stepsize_stage2(0.1, 0.5, 0.0, 1.0) is None


def test_config_validation():
    for kwargs in ({"rho": 0}, {"M": 1}, {"r": 0}, {"s0": -1}, {"soc_mode": "x"},
                   {"stage2_numerator": "x"}, {"gamma": 2}, {"soc_fail_cap": -1}):
        with pytest.raises(ValueError):
            SlrConfig(**kwargs)
    with pytest.raises(ValueError):
        AdmmConfig(rho=-1)
    with pytest.raises(ValueError):
        StopCriteria(check_every=0)


# SLR coordinator -------------------------------------------------------------

def test_stepsizes_telescope_with_intermediate_numerator():
    # with every update applied, s^k = s^{k-1} alpha_k^2 V_{k-1} / V_k
    obj = toy_2d(start=(1.0, 2.0))
    plan = SparsityPlan({"w": 1})
    V0 = violation_norm(obj.params, plan.project(obj.params))
    cfg = SlrConfig(rho=1.0, s0=0.05, soc_mode="always", inner_steps=3)
    result = run_slr(obj, plan, cfg, StopCriteria(max_iterations=25), SGD)
    recs = result.report.records
    expected = cfg.s0
    prev = V0
    for rec in recs:
        a = rec["alpha"]
        expected = expected * a * a * prev / rec["violation"]
        prev = rec["violation"]
        assert rec["s"] == pytest.approx(expected, rel=1e-10)
    assert recs[-1]["s"] == pytest.approx(
        cfg.s0 * np.prod([r["alpha"] ** 2 for r in recs]) * V0 / recs[-1]["violation"], rel=1e-9)


def test_previous_numerator_oracle():
    obj = toy_2d(start=(1.0, 2.0))
    plan = SparsityPlan({"w": 1})
    prev = violation_norm(obj.params, plan.project(obj.params))
    cfg = SlrConfig(rho=1.0, s0=0.05, soc_mode="always", stage2_numerator="previous", inner_steps=3)
    recs = run_slr(obj, plan, cfg, StopCriteria(max_iterations=5), SGD).report.records
    s = cfg.s0
    for rec in recs:
        s_prime = rec["s_prime"]
        assert rec["s"] == pytest.approx(rec["alpha"] * s_prime * prev / rec["violation"], rel=1e-12)
        prev = rec["violation"]
        s = rec["s"]
    assert s > 0


def test_zero_violation_skips_update():
    # a vacuous constraint keeps W == Z, so every stepsize hits the sentinel
    obj = QuadraticObjective({"w": np.array([3.0])})
    result = run_slr(obj, SparsityPlan({"w": 1}), SlrConfig(rho=1.0, soc_mode="always", inner_steps=2),
                     StopCriteria(max_iterations=3), SGD)
    assert not any(result.report.column("updated1"))
    assert result.state.s == SlrConfig().s0
    assert not result.Lam["w"].any()


def test_gating_without_override_never_touches_multipliers_on_failure():
    events = []

    def observer(k, stage, soc, before, after, override):
        events.append((soc, all(np.array_equal(before[n], after[n]) for n in before), override))

    obj = toy_2d()
    run_slr(obj, SparsityPlan({"w": 1}), SlrConfig(rho=1.0, soc_fail_cap=0, inner_steps=0),
            StopCriteria(max_iterations=6), SGD, observer=observer)
    # zero inner steps: W never moves, so stage 1 can never strictly decrease
    assert events and all(same for soc, same, _ in events if not soc)
    assert any(not soc for soc, _, _ in events)
    assert not any(o for _, _, o in events)


def test_failure_cap_forces_update_after_three_misses():
    overrides = []
    obj = toy_2d()
    run_slr(obj, SparsityPlan({"w": 1}), SlrConfig(rho=1.0, soc_fail_cap=3, inner_steps=0),
            StopCriteria(max_iterations=7), SGD,
            observer=lambda k, stage, soc, b, a, o: stage == 1 and overrides.append(o))
    assert overrides == [False, False, True, False, False, True, False]


def test_toy_2d_recovers_closed_form_optimum():
    obj = toy_2d()
    result = run_slr(obj, SparsityPlan({"w": 1}), SlrConfig(rho=1.0, inner_steps=60),
                     StopCriteria(max_iterations=5000, violation_tol=1e-4), SGD)
    assert result.state.stopped_by == "violation"
    np.testing.assert_allclose(result.Z["w"], [3.0, 0.0], atol=1e-3)
    np.testing.assert_allclose(result.W["w"], [3.0, 0.0], atol=1e-3)


def test_slr_reduces_to_admm_with_fixed_steps():
    def override(stage, k, computed):
        return 0.0 if stage == 1 else 1.0

    a = run_slr(toy_2d((0.5, 2.0)), SparsityPlan({"w": 1}),
                SlrConfig(rho=1.0, soc_mode="always", stepsize_override=override, inner_steps=4),
                StopCriteria(max_iterations=30), SGD)
    b = run_admm(toy_2d((0.5, 2.0)), SparsityPlan({"w": 1}), AdmmConfig(rho=1.0, inner_steps=4),
                 StopCriteria(max_iterations=30), SGD)
    for key in ("W", "Z", "Lam"):
        assert getattr(a, key)["w"].tobytes() == getattr(b, key)["w"].tobytes()
    assert a.report.column("L_rho") == b.report.column("L_rho")


def test_accuracy_stop_and_check_every():
    calls = []

    def evaluate(W):
        calls.append(1)
        return 0.5 if len(calls) < 2 else 0.9

    stop = StopCriteria(max_iterations=10, accuracy_threshold=0.8, check_every=3, evaluate=evaluate)
    result = run_slr(toy_2d(), SparsityPlan({"w": 1}), SlrConfig(rho=1.0, inner_steps=1), stop, SGD)
    assert result.state.reached_at == 6 and result.state.stopped_by == "accuracy"
    assert result.report.column("hardprune_accuracy")[:6] == [None, None, 0.5, None, None, 0.9]


def test_admm_multiplier_rule():
    obj = toy_2d((0.5, 2.0))
    result = run_admm(obj, SparsityPlan({"w": 1}), AdmmConfig(rho=0.7, inner_steps=2),
                      StopCriteria(max_iterations=1), SGD)
    np.testing.assert_allclose(result.Lam["w"], 0.7 * (result.W["w"] - result.Z["w"]))
    rec = result.report.records[0]
    assert rec["qbar_admm"] == pytest.approx(0.7 * rec["violation"] ** 2 + rec["L_rho"])


# diagnostics ---------------------------------------------------------------

def test_dual_overestimates():
    assert slr_dual_overestimate(1.0, 0.1, 4.0, 2.0) == pytest.approx(2.4)
    assert admm_dual_overestimate(0.5, 0.2, 4.0, -1.0) == pytest.approx(-0.6)
    with pytest.raises(ValueError):
        slr_dual_overestimate(1.5, 0.1, 1.0, 0.0)


def test_estimate_dual_value_closed_form():
    # vacuous budget: q(lam) = min_w (w-3)^2 - lam^2/(2 rho) = -lam^2/(2 rho)
    obj = QuadraticObjective({"w": np.array([3.0])}, start={"w": np.array([0.0])})
    plan = SparsityPlan({"w": 1})
    for lam in (-2.0, 0.0, 1.5):
        value = estimate_dual_value(obj, {"w": np.array([0.0])}, {"w": np.array([lam])}, plan,
                                    rho=0.5, budget=200)
        assert value == pytest.approx(-lam ** 2 / 1.0, abs=1e-6)
    assert obj.params["w"][0] == 0.0


def test_report_ordering_and_kappa():
    rep = RunReport()
    for k, (a, b) in enumerate([(True, False), (True, True), (False, True), (True, True)], 1):
        rep.append({"k": k, "violation": 0.0, "soc1": a, "soc2": b})
    assert rep.soc_trace() == [0, 1, 0, 1] and rep.kappa() == 3
    with pytest.raises(ValueError):
        rep.append({"k": 4, "violation": 0.0, "soc1": True, "soc2": True})
    with pytest.raises(ValueError):
        rep.append({"k": 5, "violation": -1.0, "soc1": True, "soc2": True})
    assert soc_recurs([0, 1, 0, 1]) and not soc_recurs([1, 1, 0]) and soc_recurs([])


def test_metrics_roundtrip(tmp_path):
    path = tmp_path / "m.jsonl"
    with MetricsSink(path) as sink:
        rep = RunReport(sink=sink)
        rep.append({"type": "iteration", "k": 1, "violation": np.float64(0.5),
                    "soc1": np.bool_(True), "L_rho": math.inf})
        rep.add_outcome({"type": "prune_outcome", "method": "slr"})
    iterations, others = read_metrics(path)
    assert iterations == [{"type": "iteration", "k": 1, "violation": 0.5, "soc1": True, "L_rho": None}]
    assert others[0]["method"] == "slr"
    assert all(json.loads(line) for line in path.read_text().splitlines())


def test_heatmap_roundtrip(tmp_path, rng):
    w = rng.standard_normal((4, 2, 3))
    path = export_sparsity_heatmap(w, tmp_path / "h.txt")
    np.testing.assert_allclose(load_heatmap(path), np.abs(w).reshape(4, 6), rtol=1e-8)
    v = np.array([1.0, -2.0])
    np.testing.assert_allclose(load_heatmap(export_sparsity_heatmap(v, tmp_path / "v.txt")), [[1.0, 2.0]])


# worked examples ---------------------------------------------------------------

def test_alpha_second_iterate_high_precision():
    # reference from a 30-digit evaluation of 1 - 1/(300 * 2^(1 - 2^-0.1))
    assert alpha_schedule(2, 300, 0.1) == pytest.approx(0.996817857184487, rel=1e-14)


def test_loss_subproblem_stationary_point():
    # (w-3)^2 + rho/2 w^2 with z = lam = 0 is minimized at 6 / (2 + rho)
    obj = QuadraticObjective({"w": np.array([3.0])}, start={"w": np.array([0.0])})
    solve_loss_subproblem(obj, {"w": np.zeros(1)}, {"w": np.zeros(1)}, 0.1, make_optimizer(SGD), 200)
    assert obj.params["w"][0] == pytest.approx(6 / 2.1, abs=1e-9)


def test_small_hand_examples():
    ones = {"w": np.ones(2)}
    zeros = {"w": np.zeros(2)}
    assert augmented_lagrangian(1.5, ones, zeros, zeros, 2.0) == pytest.approx(3.5)
    Z = solve_cardinality_subproblem({"w": np.zeros(3)}, {"w": np.array([5.0, 1.0, 0.0])}, 1.0,
                                     SparsityPlan({"w": 1}))
    np.testing.assert_array_equal(Z["w"], [5.0, 0.0, 0.0])
    assert admm_dual_overestimate(1.0, 0.1, 10.0, 2.0) == pytest.approx(3.0)
