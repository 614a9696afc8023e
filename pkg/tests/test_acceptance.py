"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line; the lines are printed together at the
end of the pytest run (see ``conftest.pytest_terminal_summary``).
"""
import time

import numpy as np
import pytest

import fig3_oracle as oracle
import gradcheck
from offdae import envs
from offdae.analysis import (
    counterexample_closed_form,
    decomposition_residual,
    hierarchy_check,
    policy_improvement_check,
)
from offdae.cli import main
from offdae.estimators import DecompositionTables, fit_batch_td0, fit_dae, fit_mc
from offdae.experiments import (
    BENCHMARK_CONFIG,
    benchmark_env,
    random_instance,
    run_counterexample,
    run_fig3,
    run_fig4,
    run_train,
    run_verify,
)
from offdae.mdp import (
    NatureTable,
    PolicyTable,
    advantage_exact,
    nature_advantage_exact,
    policy_evaluation_exact,
    sample_dataset,
)

RESULTS: list[str] = []


def record(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {num:>2} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _rows(res, estimator):
    i = res.header.index("estimator")
    return {r[res.header.index("samples")]: r for r in res.rows if r[i] == estimator}


def test_c01_decomposition_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        mdp, _, pi = random_instance(101, i)
        V, A, B = policy_evaluation_exact(mdp, pi), advantage_exact(mdp, pi), nature_advantage_exact(mdp, pi)
        for traj, _ in sample_dataset(mdp, pi, 100, [101, i], max_len=10_000):
            worst = max(worst, abs(decomposition_residual(traj, V, A, B, mdp.discount)))
    dt = time.perf_counter() - t0
    record(1, "decomposition identity", worst < 1e-9 and dt < 10,
           f"max residual {worst:.2e} (< 1e-9) over 100 MDPs x 100 trajectories in {dt:.1f}s (< 10s)")


def test_c02_oracle_recovery():
    t0 = time.perf_counter()
    res = run_verify(num_instances=100, seed=0, trajectories=1, hierarchy_cases=1)
    dt = time.perf_counter() - t0
    rows = [r for r in res.rows if r[0] == "oracle_recovery"]
    worst = max(r[3] for r in rows)
    ok = all(r[4] == "PASS" for r in rows) and len(rows) == 400 and dt < 60
    record(2, "oracle recovery", ok,
           f"{sum(r[4] == 'PASS' for r in rows)}/400 (instance, n) pairs unique and within 1e-8 "
           f"(max error {worst:.2e}) in {dt:.1f}s (< 60s)")


def test_c03_closed_forms():
    mdp = envs.fig3()
    pi = PolicyTable.uniform(mdp)
    mc = td = dae = 0.0
    checked = 0
    for counts in oracle.count_vectors(4):
        n1u, n1d, n2u, n2d = counts
        n1, n2 = n1u + n1d, n2u + n2d
        data = oracle.dataset(*counts)
        if n1 > 0 and n2 > 0:
            V = fit_mc(data, 1.0, 4)
            mc = max(mc, abs(V[0] - n1u / n1), abs(V[1] - n2u / n2))
            V = fit_batch_td0(data, 1.0, 4)
            td = max(td, float(np.abs(V[:3] - (n1u + n2u) / (n1 + n2)).max()))
        T = fit_dae(data, pi, 1.0, None, num_states=4, num_actions=2).tables
        got = np.array([T.A[2, 0], np.nan_to_num(T.V[0]), np.nan_to_num(T.V[1])])
        dae = max(dae, float(np.abs(got - oracle.dae_pinv(*counts)).max()))
        checked += 1
    record(3, "two-start-state golden forms", mc <= 1e-12 and td <= 1e-12 and dae <= 1e-10,
           f"{checked} count vectors: MC {mc:.1e}, TD(0) {td:.1e} (<= 1e-12), DAE vs 3x3 pinv {dae:.1e} (<= 1e-10)")


def test_c04_counterexample_bias():
    res = run_counterexample()
    diff = max(res.column("max_abs_diff"))
    on = [abs(r[9]) for r in res.rows if r[0] == r[1]]
    off = [abs(r[9]) for r in res.rows if r[0] != r[1]]
    uni = counterexample_closed_form(0.5, 0.5)
    spot = counterexample_closed_form(0.5, 1.0)
    mdp = envs.counterexample()
    mu = PolicyTable(np.array([[1.0, 0.0], [0.5, 0.5], [1.0, 0.0]]))
    greedy = PolicyTable(np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]))
    from offdae.design import population_design

    solver = fit_dae(population_design(mdp, mu, None), greedy, 1.0, None).tables.V[0]
    ok = (diff < 1e-8 and max(on) < 1e-12 and min(off) > 1e-6 and abs(uni.v_star - 0.25) < 1e-12
          and abs(spot.v_star - 1 / 3) < 1e-12 and abs(solver - 1 / 3) < 1e-8)
    record(4, "off-policy bias closed form", ok,
           f"solver vs closed form {diff:.1e} (< 1e-8); diagonal |bias| {max(on):.1e} (< 1e-12); "
           f"off-diagonal min |bias| {min(off):.2e} (> 1e-6); V* at uniform {uni.v_star:.15g}; "
           f"spot V* {spot.v_star:.15g}, solver {solver:.15g}")


def test_c05_fig3():
    t0 = time.perf_counter()
    res = run_fig3(range(1000))
    dt = time.perf_counter() - t0
    dae, mc = _rows(res, "dae"), _rows(res, "mc")
    s2 = res.header.index("std_v2")
    m1, m2 = res.header.index("mean_v1"), res.header.index("mean_v2")
    counts = [c for c in dae if c >= 10]
    order = all(dae[c][s2] < mc[c][s2] for c in counts)
    final = [abs(r[k] - 0.5) for r in res.rows if r[1] == 10_000 for k in (m1, m2)]
    ok = order and max(final) < 0.03 and dt < 300
    record(5, "MC / TD(0) / DAE variance", ok,
           f"DAE std V(2) < MC at all {len(counts)} counts >= 10: {order}; worst |mean - 0.5| at 10,000 "
           f"{max(final):.4f} (< 0.03); {dt:.0f}s (< 300s)")


def test_c06_fig4():
    res = run_fig4(range(1000))
    dae = _rows(res, "dae")
    s2 = res.header.index("std_v2")
    m2 = res.header.index("mean_v2")
    # One trajectory gives a one-hot empirical model, so that variant ties DAE at
    # count 1; it is compared from count 2 on.  The oracle variant is compared everywhere.
    first = {"offpolicy-dae-empirical": 2, "offpolicy-dae-oracle": 1}
    beats = {name: all(_rows(res, name)[c][s2] < dae[c][s2] for c in dae if c >= lo) for name, lo in first.items()}
    tie = _rows(res, "offpolicy-dae-empirical")[1][s2] - dae[1][s2]
    mean = _rows(res, "offpolicy-dae-oracle")[10_000][m2]
    ok = all(beats.values()) and abs(mean - 1.0) < 0.03
    record(6, "DAE vs off-policy DAE variance", ok,
           f"lower std V(2) than DAE (empirical from count 2, oracle from count 1): {beats}; "
           f"empirical minus DAE std at count 1 {tie:.1e}; oracle mean V(2) at 10,000 "
           f"{mean:.4f} (within 0.03 of 1)")


def test_c07_hierarchy():
    worst, cases = 0.0, 0
    for i in range(150):
        mdp, mu, _ = random_instance(107, i)
        S, A = mdp.num_states, mdp.num_actions
        r = np.random.default_rng([107, i])
        T = DecompositionTables(
            r.normal(size=S), r.normal(size=(S, A)), NatureTable(r.normal(size=(S, A, S)), np.ones((S, A, S), bool))
        )
        data = sample_dataset(mdp, mu, 10, [107, i, 1], max_len=1000)
        for n in (0, 1, 2, 4, None):
            rep = hierarchy_check(T, data, mdp.discount, n, r.normal(size=S))
            worst = max(worst, rep.max_deviation)
            cases += rep.num_windows
    record(7, "critic target hierarchy", worst <= 1e-12 and cases >= 10_000,
           f"max deviation {worst:.1e} (<= 1e-12) over {cases} random windows (>= 10,000)")


def test_c08_policy_improvement():
    worst = max(policy_improvement_check(*random_instance(108, i)) for i in range(100))
    record(8, "policy improvement identity", worst < 1e-9, f"max residual {worst:.1e} (< 1e-9) on 100 instances")


def test_c09_gradients():
    critic = actor = 0.0
    for seed in range(1000):
        agent, config, batch, probs = gradcheck.random_problem(seed)
        critic = max(critic, gradcheck.critic_error(agent, config, batch, probs))
        actor = max(actor, gradcheck.actor_error(agent, config, batch))
    record(9, "analytic gradients", critic < 1e-6 and actor < 1e-6,
           f"max relative error critic {critic:.1e}, actor {actor:.1e} (< 1e-6) on 1000 configurations")


def _pooled_gap(finals, hi, lo):
    a, b = np.array(finals[hi]), np.array(finals[lo])
    se = np.hypot(a.std(ddof=1) / np.sqrt(len(a)), b.std(ddof=1) / np.sqrt(len(b)))
    return float(a.mean() - b.mean()), float(se)


@pytest.mark.slow
def test_c10_gridworld():
    t0 = time.perf_counter()
    seeds = range(20)
    base = BENCHMARK_CONFIG
    agg, _ = run_train(benchmark_env(0.2), ["uncorrected", "dae", "offpolicy-dae"], seeds, base)
    g1, p1 = _pooled_gap(agg.finals, "offpolicy-dae", "dae")
    g2, p2 = _pooled_gap(agg.finals, "dae", "uncorrected")
    means = {m: float(np.mean(f)) for m, f in agg.finals.items()}
    det, _ = run_train(benchmark_env(0.0), ["dae", "offpolicy-dae"], seeds, base)
    curves = {m: [(r[2], r[3]) for r in det.rows if r[0] == m] for m in ("dae", "offpolicy-dae")}
    overlap = np.mean([abs(a - b) <= sa + sb for (a, sa), (b, sb) in zip(curves["dae"], curves["offpolicy-dae"])])
    dt = time.perf_counter() - t0
    ok = g1 >= p1 and g2 >= p2 and overlap >= 0.9 and dt < 1800
    record(10, "gridworld method ordering", ok,
           f"slip 0.2 final means {', '.join(f'{m} {v:.3f}' for m, v in means.items())}; "
           f"gaps off-dae {g1:.3f} vs pooled SE {p1:.3f}, dae-unc {g2:.3f} vs {p2:.3f}; "
           f"slip 0 band overlap {overlap:.0%} (>= 90%); {dt:.0f}s (< 1800s)")


def test_c11_cli_determinism(tmp_path):
    commands = {
        "fig3": ["--seeds", "50", "--samples", "1,10,100,1000"],
        "fig4": ["--seeds", "50", "--samples", "1,10,100,1000"],
        "counterexample": [],
        "verify": ["--instances", "10"],
        "train": ["--seeds", "2", "--total-steps", "3000"],
    }
    same = {}
    for cmd, args in commands.items():
        outs = []
        for run in ("a", "b"):
            out = tmp_path / run / cmd
            assert main([cmd, "--out", str(out), *args]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        same[cmd] = bool(outs[0]) and outs[0] == outs[1]
    record(11, "CLI determinism", all(same.values()),
           "bitwise-identical CSV on rerun: " + ", ".join(f"{c} {'yes' if s else 'NO'}" for c, s in same.items()))
