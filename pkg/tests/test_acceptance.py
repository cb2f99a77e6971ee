"""End-to-end acceptance gate.

One test per criterion, each printing a single pass/fail line; run with
``pytest tests/test_acceptance.py -v -s`` to see the lines as they pass.
"""

import time
from itertools import product as iproduct

import numpy as np

from conftest import CONFIG_DIR, FIVE_NODE_EDGES, FIVE_NODE_P, FIVE_NODE_Y0
from ratiosim import analysis, augmented, baseline, cli, engine
from ratiosim.engine import (DelaySchedule, RunSpec, SwitchPlan,
                             TerminationEvent)
from ratiosim.graph import (Digraph, DigraphSequence, is_strongly_connected,
                            random_digraph)
from ratiosim.weights import doubly_stochastic_weights, out_degree_weights


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{criterion}: {detail}"


def _five_node_plan() -> SwitchPlan:
    return SwitchPlan.static(Digraph(5, FIVE_NODE_EDGES))


def test_c01_ratio_consensus_no_delays():
    """All ratios within 1e-6 of the average 2 by k=500, in under a second."""
    spec = RunSpec(plan=_five_node_plan(), delays=DelaySchedule.none(),
                   y0=FIVE_NODE_Y0, horizon=500)
    t0 = time.perf_counter()
    result = engine.run(spec)
    elapsed = time.perf_counter() - t0
    dev = float(np.abs(result.final_ratios() - 2.0).max())
    _report("C1 no-delay ratio consensus", dev <= 1e-6 and elapsed < 1.0,
            f"max |mu - 2| = {dev:.2e}, runtime {elapsed:.3f}s")


def test_c02_single_iteration_fails_consensus():
    """The bare column-stochastic iteration settles at a non-consensus point."""
    x = np.array(FIVE_NODE_Y0)
    for _ in range(500):
        x = FIVE_NODE_P @ x
    settled = float(np.abs(FIVE_NODE_P @ x - x).max())
    sp = float(x.max() - x.min())
    _report("C2 single iteration is not consensus",
            settled <= 1e-12 and sp > 1e-2,
            f"fixed-point residual {settled:.1e}, spread {sp:.3f}")


def test_c03_bounded_delays_same_limit_across_seeds():
    """tau_bar=5: every seed reaches 2 within 1e-6 by k=2000; the limits of
    different delay realizations agree within 1e-8."""
    finals = []
    worst = 0.0
    for seed in range(10):
        spec = RunSpec(plan=_five_node_plan(),
                       delays=DelaySchedule.uniform(5, seed=seed, n=5),
                       y0=FIVE_NODE_Y0, horizon=2000)
        mu = engine.run(spec).final_ratios()
        worst = max(worst, float(np.abs(mu - 2.0).max()))
        finals.append(mu)
    finals = np.array(finals)
    seed_spread = float(finals.max() - finals.min())
    _report("C3 delayed runs, 10 seeds", worst <= 1e-6 and seed_spread <= 1e-8,
            f"max |mu - 2| = {worst:.2e}, cross-seed spread {seed_spread:.2e}")


def _oracle_scenarios():
    rng = np.random.default_rng(123)
    scenarios = []
    while len(scenarios) < 44:
        n = int(rng.integers(2, 7))
        tau_bar = int(rng.integers(0, 4))
        seed = int(rng.integers(0, 2 ** 31))
        g = random_digraph(n, 0.5, seed)
        if not is_strongly_connected(g):
            continue
        delays = (DelaySchedule.none() if tau_bar == 0
                  else DelaySchedule.uniform(tau_bar, seed=seed, n=n))
        y0 = tuple(float(v) for v in rng.integers(-3, 6, size=n))
        scenarios.append(RunSpec(plan=SwitchPlan.static(g), delays=delays,
                                 y0=y0, horizon=100))
    for seed in range(6):  # switching scenarios
        n = 5
        seq = DigraphSequence.random_each_step(n, 0.5, seed=seed)
        scenarios.append(RunSpec(
            plan=SwitchPlan(seq),
            delays=DelaySchedule.uniform(3, seed=seed + 1000, n=n),
            y0=(1.0, -2.0, 4.0, 0.0, 2.0), horizon=100))
    return scenarios


def test_c04_oracle_equivalence():
    """Engine vs augmented-matrix recursion: <= 1e-12 per entry per step over
    100 steps for 50 seeded scenarios, plus the printed 2-node matrices."""
    worst = 0.0
    scenarios = _oracle_scenarios()
    for spec in scenarios:
        devs = augmented.compare_with_engine(engine.run(spec),
                                             augmented.oracle_run(spec))
        worst = max(worst, float(devs.max()))

    pair = Digraph(2, frozenset({(0, 1), (1, 0)}))
    w = out_degree_weights(pair)
    no_delay = augmented.build_augmented(w, {(0, 1): 0, (1, 0): 0}, 2).entries
    mixed = augmented.build_augmented(w, {(0, 1): 1, (1, 0): 2}, 2).entries
    expected_no_delay = np.array([
        [.5, .5, 1, 0, 0, 0], [.5, .5, 0, 1, 0, 0], [0, 0, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 1], [0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0]])
    expected_mixed = np.array([
        [.5, 0, 1, 0, 0, 0], [0, .5, 0, 1, 0, 0], [0, .5, 0, 0, 1, 0],
        [0, 0, 0, 0, 0, 1], [0, 0, 0, 0, 0, 0], [.5, 0, 0, 0, 0, 0]])
    structural = (np.array_equal(no_delay, expected_no_delay)
                  and np.array_equal(mixed, expected_mixed))
    _report("C4 oracle equivalence",
            worst <= 1e-12 and structural and len(scenarios) >= 50,
            f"{len(scenarios)} scenarios, max deviation {worst:.2e}, "
            f"printed matrices exact: {structural}")


def _ack_spec(horizon=60):
    g = Digraph(4, frozenset({(1, 0), (2, 0), (3, 1), (1, 2), (0, 3), (2, 3)}))
    ev = TerminationEvent(step=3, sender=0, receiver=2, ack_delay=2)
    plan = SwitchPlan(DigraphSequence.static(g), ack_delay_bound=2,
                      termination_events=(ev,))
    return RunSpec(plan=plan, delays=DelaySchedule.uniform(2, seed=7, n=4),
                   y0=(4.0, -2.0, 7.0, 1.0), horizon=horizon)


def test_c05_mass_conservation():
    """Total y and z mass constant within 1e-9 relative at every step of
    every scenario, including the two-out-neighbor ACK termination setup."""
    worst_rel = 0.0
    checked = 0
    specs = _oracle_scenarios()[:10] + [_ack_spec()]
    for spec in specs:
        result = engine.run(spec)  # engine itself enforces the invariant
        y0_total = float(sum(spec.y0))
        for st in result.states:
            y_total, z_total = st.total_mass()
            rel_y = abs(y_total - y0_total) / max(1.0, abs(y0_total))
            rel_z = abs(z_total - spec.n) / spec.n
            worst_rel = max(worst_rel, rel_y, rel_z)
            checked += 1
    ack = _ack_spec()
    two_returns = len(engine.run(ack).states[5].pending_returns) == 2
    _report("C5 mass conservation", worst_rel <= 1e-9 and two_returns,
            f"{checked} states checked, worst relative drift {worst_rel:.2e}, "
            f"ACK buffers two sends: {two_returns}")


def test_c06_word_positivity_bounds():
    """Products of n(tau_bar+1) consecutive augmented matrices have strictly
    positive top rows; exhaustive 2-node tau_bar=1 words meet the
    conservative minimum-entry bound."""
    g5 = Digraph(5, FIVE_NODE_EDGES)
    w5 = out_degree_weights(g5)
    rng = np.random.default_rng(11)
    all_positive = True
    for tau_bar in (1, 2, 3):
        ell = 5 * (tau_bar + 1)
        for _ in range(5):
            mats = [augmented.build_augmented(
                w5, {e: int(rng.integers(0, tau_bar + 1)) for e in g5.edges},
                tau_bar) for _ in range(ell)]
            rep = analysis.word_positivity_check(mats)
            all_positive &= rep.first_rows_positive

    pair = Digraph(2, frozenset({(0, 1), (1, 0)}))
    w2 = out_degree_weights(pair)
    assignments = [{(0, 1): a, (1, 0): b} for a in (0, 1) for b in (0, 1)]
    factor = [augmented.build_augmented(w2, a, 1) for a in assignments]
    conservative = analysis.c_min_bound(2, 1, 1).conservative
    worst_min = 1.0
    exhaustive_ok = True
    for combo in iproduct(range(4), repeat=4):
        rep = analysis.word_positivity_check([factor[c] for c in combo])
        exhaustive_ok &= rep.first_rows_positive
        exhaustive_ok &= rep.min_first_rows_entry >= conservative
        worst_min = min(worst_min, rep.min_first_rows_entry)
    _report("C6 word positivity", all_positive and exhaustive_ok,
            f"all 256 exhaustive words positive, min entry {worst_min:.4f} "
            f">= conservative bound {conservative:.4f}")


def test_c07_switching_topologies():
    """Jointly-strongly-connected switching reaches the exact average, with
    and without delays; delays only slow the transient."""
    g_a = Digraph(3, frozenset({(1, 0), (2, 1)}))
    g_b = Digraph(3, frozenset({(0, 2)}))
    assert not is_strongly_connected(g_a) and not is_strongly_connected(g_b)
    seq3 = DigraphSequence.from_list([g_a, g_b], repeat=True)
    spec3 = RunSpec(plan=SwitchPlan(seq3), delays=DelaySchedule.none(),
                    y0=(3.0, -1.0, 4.0), horizon=600)
    dev3 = float(np.abs(engine.run(spec3).final_ratios() - 2.0).max())

    y6 = (-1.0, 1.0, 2.0, 3.0, 4.0, 3.0)
    seq6 = DigraphSequence.random_each_step(6, 0.5, seed=11)
    fast = RunSpec(plan=SwitchPlan(seq6), delays=DelaySchedule.none(),
                   y0=y6, horizon=3000)
    slow = RunSpec(plan=SwitchPlan(seq6),
                   delays=DelaySchedule.uniform(5, seed=11, n=6),
                   y0=y6, horizon=3000)
    res_fast = engine.run(fast)
    res_slow = engine.run(slow)
    dev_fast = float(np.abs(res_fast.final_ratios() - 2.0).max())
    dev_slow = float(np.abs(res_slow.final_ratios() - 2.0).max())
    k_fast = res_fast.steps_to_epsilon(1e-6)
    k_slow = res_slow.steps_to_epsilon(1e-6)
    slower = k_fast is not None and k_slow is not None and k_slow > k_fast
    ok = dev3 <= 1e-6 and dev_fast <= 1e-6 and dev_slow <= 1e-6 and slower
    _report("C7 switching topologies", ok,
            f"periodic dev {dev3:.1e}; 6-node dev {dev_fast:.1e} (to eps at "
            f"k={k_fast}) vs delayed {dev_slow:.1e} (k={k_slow})")


def test_c08_baseline_contrast():
    """The doubly stochastic single iteration is exact without delays but its
    consensus value drifts from the average under a crafted delay schedule."""
    path = Digraph(3, frozenset({(0, 1), (1, 0), (1, 2), (2, 1)}))
    w_path = doubly_stochastic_weights(path)
    exact = baseline.run_baseline([0.0, 1.0, 5.0], w_path,
                                  DelaySchedule.none(), 300)
    exact_dev = float(np.abs(exact.final_values() - 2.0).max())

    pair = Digraph(2, frozenset({(0, 1), (1, 0)}))
    w_pair = doubly_stochastic_weights(pair)
    sched = DelaySchedule.constant_per_link({(0, 1): 1, (1, 0): 0})
    drift = baseline.run_baseline([0.0, 1.0], w_pair, sched, 300)
    drift_spread = float(drift.spread_series()[-1])
    margin = abs(float(drift.final_values().mean()) - 0.5)

    # brute-force oracle for the crafted schedule: node 0 lags one step
    x0, x1, x1_prev = 0.5, 0.5, 1.0
    for _ in range(299):
        x0, x1, x1_prev = (x0 + x1_prev) / 2, (x1 + x0) / 2, x1
    oracle_match = abs(drift.final_values()[0] - x0) <= 1e-12

    ok = (exact_dev <= 1e-8 and drift_spread <= 1e-8
          and margin > 1e-3 and oracle_match)
    _report("C8 baseline contrast", ok,
            f"zero-delay dev {exact_dev:.1e}; crafted schedule spread "
            f"{drift_spread:.1e}, |limit - avg| = {margin:.3f}")


def test_c09_sia_classifier_vs_brute_force():
    """Structural classification agrees with the k=500 power-iteration test
    on 150 random column-stochastic matrices plus hand-built cases."""

    def random_column_stochastic(rng, n):
        m = np.zeros((n, n))
        for i in range(n):
            k = int(rng.integers(1, n + 1))
            rows = rng.choice(n, size=k, replace=False)
            vals = 0.2 + rng.random(k)
            m[rows, i] = vals / vals.sum()
        return m

    def brute_force_sia(b):
        p = np.linalg.matrix_power(b, 500)
        return float((p.max(axis=1) - p.min(axis=1)).max()) < 1e-9

    rng = np.random.default_rng(0)
    corpus = [random_column_stochastic(rng, int(rng.integers(2, 7)))
              for _ in range(150)]
    corpus += [
        np.eye(2),                                   # decomposable
        np.array([[0.0, 1.0], [1.0, 0.0]]),          # periodic
        np.array([[0.6, 0.5], [0.4, 0.5]]),          # primitive
        np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5],
                  [0.0, 0.0, 0.0]]),                 # two absorbing classes
        np.array([[0.0, 1.0, 0.2], [1.0, 0.0, 0.5],
                  [0.0, 0.0, 0.3]]),                 # periodic core + feed
    ]
    disagreements = sum(
        (analysis.classify_sia(b) is analysis.SiaClass.SIA) != brute_force_sia(b)
        for b in corpus)
    _report("C9 SIA classifier", disagreements == 0,
            f"{len(corpus)} matrices, {disagreements} disagreements")


def test_c10_byte_identical_reruns(tmp_path):
    """The CLI reproduces byte-identical trace files from config + seed."""
    identical = True
    for name in ("fig5b.toml", "switching_6node.toml", "ack_termination.toml"):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / name / sub
            code = cli.main(["run", "--config", str(CONFIG_DIR / name),
                             "--out", str(out)])
            assert code == cli.EXIT_OK
            outs.append((out / "trace.csv").read_bytes())
        identical &= outs[0] == outs[1]
    _report("C10 determinism", identical,
            "reruns byte-identical for 3 configs")
