"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s -v`` to see the per-criterion
lines.  The synthetic-federation experiments are deterministic: every run
derives from the seeds written in this file.
"""

import time

import numpy as np
import pytest
from scipy.optimize import minimize

import fedpoison as fp
from fedpoison import AttackMode as M
from fedpoison.harness import evaluate_targets

LS = fp.LossKind.LEAST_SQUARES
HINGE = fp.LossKind.HINGE


def _verdict(num, name, ok, detail):
    line = f"ACCEPTANCE {num} {name}: {'PASS' if ok else 'FAIL'} - {detail}"
    print("\n" + line)
    return ok


def golden_section(f, lo, hi, iters=140):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _classification_fed(seed, raw_n=143, sigma=0.2, frac=0.3, d=16, m=10, corr=0.9):
    src = fp.FederationSource(
        kind=fp.SourceKind.SYNTHETIC_CLASSIFICATION, d=d, m=m,
        per_node_n=(raw_n, raw_n), correlation=corr, noise_sigma=sigma,
        test_fraction=frac, seed=seed,
    )
    return fp.synthesize_federation(src)


def test_criterion_1_closed_form_steps_match_1d_oracle():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        q = float(rng.uniform(0.01, 10.0))
        margin = float(rng.uniform(-3.0, 3.0))
        if rng.random() < 0.5:
            label = float(rng.uniform(-2.0, 2.0))
            alpha = float(rng.uniform(-2.0, 2.0))
            got = fp.delta_alpha_least_squares(alpha, margin, label, q)
            f = lambda a: fp.conjugate_loss(LS, alpha + a, label) + a * margin + 0.5 * q * a * a
            ref = golden_section(f, got - 4.0, got + 4.0)
        else:
            label = float(rng.choice([-1.0, 1.0]))
            alpha = label * float(rng.uniform(0.0, 1.0))
            got = fp.delta_alpha_hinge(alpha, margin, label, q)
            f = lambda a: fp.conjugate_loss(HINGE, alpha + a, label) + a * margin + 0.5 * q * a * a
            lo, hi = sorted((-alpha, label - alpha))
            ref = golden_section(f, lo, hi)
        worst = max(worst, abs(got - ref))
    elapsed = time.time() - t0
    ok = worst < 1e-6 and elapsed < 5.0
    assert _verdict(1, "closed-form steps", ok,
                    f"max |step - oracle| = {worst:.2e} over 1000 inputs ({elapsed:.1f}s)")


def test_criterion_2_solver_matches_brute_force_primal():
    t0 = time.time()
    rng = np.random.default_rng(7)
    worst_w, worst_gap = 0.0, 0.0
    for trial in range(20):
        m, d, n = 2, 3, 5
        nodes = [fp.NodeDataset(l, rng.standard_normal((n, d)), rng.standard_normal(n))
                 for l in range(m)]
        B = rng.standard_normal((m, m))
        omega = B @ B.T
        omega /= np.trace(omega)
        lam1, lam2 = 0.1, 0.05
        cfg = fp.SolverConfig(lambda1=lam1, lambda2=lam2, rounds=4000, seed=trial,
                              omega_update_every=0)
        state = fp.solve_lower(nodes, None, LS, cfg, omega=omega, gap_tol=5e-8)

        def objective(wflat):
            return fp.primal_value(wflat.reshape(d, m), omega, nodes, None,
                                   lam1, lam2, LS)

        res = minimize(objective, np.zeros(d * m), method="BFGS",
                       options={"gtol": 1e-12, "maxiter": 5000})
        worst_w = max(worst_w, float(np.max(np.abs(state.W - res.x.reshape(d, m)))))
        worst_gap = max(worst_gap, state.final_gap)
    elapsed = time.time() - t0
    ok = worst_w < 1e-3 and worst_gap < 1e-6 and elapsed < 30.0
    assert _verdict(2, "lower-level solver", ok,
                    f"max |W - brute force| = {worst_w:.2e}, max gap = {worst_gap:.2e} "
                    f"over 20 instances ({elapsed:.1f}s)")


def test_criterion_3_ascent_step_does_not_decrease_upper_objective():
    t0 = time.time()
    wins = 0
    seeds = 20
    for rep in range(seeds):
        src = fp.FederationSource(
            kind=fp.SourceKind.SYNTHETIC_REGRESSION, d=8, m=4, per_node_n=(40, 40),
            correlation=0.9, noise_sigma=0.1, test_fraction=0.25, seed=200 + rep,
        )
        fed = fp.synthesize_federation(src)
        cfg = fp.SolverConfig(lambda1=0.001, lambda2=0.001, rounds=300, seed=rep)
        spec = fp.build_attack_spec(M.DIRECT, fed.node_ids, injection_ratio=0.2,
                                    seed=rep, outer_iters=1)
        inj = fp.init_injected(spec, fed.train, fed.loss)
        state = fp.solve_lower(fed.train, inj, fed.loss, cfg, gap_tol=1e-9)
        before = fp.target_train_loss(fed.loss, state.W, fed.train, spec.targets)

        # one projected ascent step with a small step size; the dual change
        # of each injected point is its accumulated dual (initialised at 0)
        radius = fp.default_radius(fed.train)
        grads = {}
        for s in spec.sources:
            duals = state.alphas[s][fed.train[s].n:]
            grads[s] = np.vstack([
                fp.attack_gradient(fed.loss, state, fed.train, spec.targets,
                                   s, float(duals[i]))
                for i in range(inj[s].n)
            ])
        gmax = max(float(np.max(np.linalg.norm(g, axis=1))) for g in grads.values())
        eta = 0.05 * radius / max(gmax, 1e-12)
        for s in spec.sources:
            moved = inj[s].features + eta * grads[s]
            inj[s].features = np.vstack([fp.project_ball(x, radius) for x in moved])
            inj[s].duals = np.zeros(inj[s].n)

        state2 = fp.solve_lower(fed.train, inj, fed.loss, cfg, gap_tol=1e-9)
        after = fp.target_train_loss(fed.loss, state2.W, fed.train, spec.targets)
        wins += after >= before - 1e-12
    elapsed = time.time() - t0
    ok = wins >= 16 and elapsed < 120.0
    assert _verdict(3, "gradient sanity", ok,
                    f"upper objective non-decreasing in {wins}/{seeds} seeds ({elapsed:.1f}s)")


def test_criterion_4_attack_mode_ordering():
    t0 = time.time()
    fed = _classification_fed(seed=42)
    cfg = fp.SolverConfig(lambda1=0.001, lambda2=0.001)
    report = fp.run_comparison(
        fed,
        [M.DIRECT, M.RANDOM_DIRECT, M.INDIRECT, M.RANDOM_INDIRECT,
         M.HYBRID, M.RANDOM_HYBRID],
        reps=10, solver_config=cfg, ratio=0.2, eta1=100.0, outer_iters=50, seed=0,
    )
    err = {mode: report.table[mode]["error"]["mean"] for mode in report.table}
    ordering = err["direct"] > err["hybrid"] > err["indirect"] > err["none"]
    vs_random = (err["direct"] >= err["random_direct"]
                 and err["hybrid"] >= err["random_hybrid"]
                 and err["indirect"] >= err["random_indirect"])
    lift = err["direct"] - err["none"]
    elapsed = time.time() - t0
    ok = ordering and vs_random and lift >= 5.0 and elapsed < 600.0
    assert _verdict(
        4, "attack ordering", ok,
        f"direct={err['direct']:.2f} > hybrid={err['hybrid']:.2f} > "
        f"indirect={err['indirect']:.2f} > none={err['none']:.2f}; "
        f"direct lift = {lift:+.2f}pp; optimized >= random: {vs_random} ({elapsed:.1f}s)")


def test_criterion_5_indirect_attack_needs_correlation():
    t0 = time.time()
    degs = {}
    for corr in (0.9, 0.0):
        diffs = []
        for rep in range(10):
            fed = _classification_fed(seed=100 + rep, corr=corr)
            cfg = fp.SolverConfig(lambda1=0.001, lambda2=0.001, seed=rep)
            base_spec = fp.build_attack_spec(M.NONE, fed.node_ids, seed=rep,
                                             outer_iters=50)
            ind_spec = fp.build_attack_spec(M.INDIRECT, fed.node_ids,
                                            injection_ratio=0.2, seed=rep,
                                            step_eta1=100.0, outer_iters=50)
            s_none, _, _ = fp.at2fl_run(fed.train, base_spec, cfg, fed.loss,
                                        test_nodes=fed.test)
            s_ind, _, _ = fp.at2fl_run(fed.train, ind_spec, cfg, fed.loss,
                                       test_nodes=fed.test)
            diffs.append(evaluate_targets(s_ind, fed, ind_spec.targets)
                         - evaluate_targets(s_none, fed, ind_spec.targets))
        degs[corr] = float(np.mean(diffs))
    elapsed = time.time() - t0
    ok = degs[0.9] > degs[0.0] and degs[0.0] < 1.0
    assert _verdict(5, "correlation effect", ok,
                    f"indirect degradation: corr 0.9 = {degs[0.9]:+.2f}pp, "
                    f"corr 0.0 = {degs[0.0]:+.2f}pp ({elapsed:.1f}s)")


def test_criterion_6_ratio_sweep_training_loss_monotone():
    t0 = time.time()
    fed = _classification_fed(seed=100)
    cfg = fp.SolverConfig(lambda1=0.001, lambda2=0.001, seed=0)
    ratios = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4]
    report = fp.sweep_ratio(fed, [M.DIRECT], ratios, cfg, eta1=5.0,
                            outer_iters=50, seed=0, rounds_per_iter=3)
    losses = [report.table["direct"][f"{r:g}"]["train_loss"] for r in ratios]
    monotone = all(losses[i + 1] >= losses[i] - 1e-12 for i in range(len(losses) - 1))
    zero_exact = (report.table["direct"]["0"]["error"]
                  == report.table["none"]["0"]["error"]
                  and report.table["direct"]["0"]["train_loss"]
                  == report.table["none"]["0"]["train_loss"])
    elapsed = time.time() - t0
    ok = monotone and zero_exact
    assert _verdict(6, "ratio sweep", ok,
                    f"train loss {['%.3f' % v for v in losses]} monotone={monotone}, "
                    f"ratio-0 == baseline exactly: {zero_exact} ({elapsed:.1f}s)")


def test_criterion_7_step_size_sweep():
    t0 = time.time()
    reps = 20
    feds = [_classification_fed(seed=500 + rep, raw_n=200, sigma=0.3, frac=0.5)
            for rep in range(reps)]

    def run(fed, rep, mode, eta, ratio):
        cfg = fp.SolverConfig(lambda1=0.05, lambda2=0.05, seed=rep)
        spec = fp.build_attack_spec(mode, fed.node_ids, injection_ratio=ratio,
                                    seed=rep, step_eta1=eta, outer_iters=20)
        state, _, _ = fp.at2fl_run(fed.train, spec, cfg, fed.loss,
                                   test_nodes=fed.test)
        return evaluate_targets(state, fed, spec.targets)

    base = [run(feds[r], r, M.NONE, 1.0, 0.0) for r in range(reps)]
    sweep = {}
    for eta in (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0):
        sweep[eta] = [run(feds[r], r, M.DIRECT, eta, 0.05) for r in range(reps)]
    tiny_gap = abs(np.mean(sweep[0.01]) - np.mean(base))
    plateau = abs(np.mean(sweep[100.0]) - np.mean(sweep[1000.0]))
    spread = float(np.std(sweep[100.0] + sweep[1000.0], ddof=1))
    elapsed = time.time() - t0
    ok = tiny_gap <= 1.0 and plateau < spread
    curve = " ".join(f"{eta:g}:{np.mean(v):.2f}" for eta, v in sweep.items())
    assert _verdict(7, "step-size sweep", ok,
                    f"baseline={np.mean(base):.2f}, curve [{curve}]; "
                    f"tiny-eta gap={tiny_gap:.2f}pp, plateau diff={plateau:.2f} "
                    f"< seed spread={spread:.2f} ({elapsed:.1f}s)")


def test_criterion_8_convergence_trace_stabilizes():
    t0 = time.time()
    fed = _classification_fed(seed=100)
    cfg = fp.SolverConfig(lambda1=0.001, lambda2=0.001, seed=0)
    ratios = {}
    for mode in (M.DIRECT, M.INDIRECT, M.HYBRID):
        spec = fp.build_attack_spec(mode, fed.node_ids, injection_ratio=0.2, seed=0,
                                    step_eta1=5.0, outer_iters=50)
        _, _, trace = fp.at2fl_run(fed.train, spec, cfg, fed.loss,
                                   test_nodes=fed.test, rounds_per_iter=3)
        gaps = trace.gap
        ratios[mode.value] = gaps[-1] / gaps[0]
        if not (gaps[-1] < gaps[0] and gaps[-1] < 0.1 * gaps[0]):
            break
    elapsed = time.time() - t0
    ok = all(r < 0.1 for r in ratios.values()) and len(ratios) == 3
    detail = ", ".join(f"{k}: final/initial = {v:.3f}" for k, v in ratios.items())
    assert _verdict(8, "convergence trace", ok, f"{detail} ({elapsed:.1f}s)")


def test_criterion_9_invariant_suite():
    t0 = time.time()
    fed = _classification_fed(seed=31, raw_n=60, m=6)
    cfg = fp.SolverConfig(lambda1=0.01, lambda2=0.01, seed=11)
    spec = fp.build_attack_spec(M.DIRECT, fed.node_ids, injection_ratio=0.2,
                                seed=11, outer_iters=15)
    init = fp.init_injected(spec, fed.train, fed.loss)
    init_labels = {s: init[s].labels.copy() for s in spec.sources}
    budgets = {s: init[s].n for s in spec.sources}
    state, injected, trace = fp.at2fl_run(fed.train, spec, cfg, fed.loss,
                                          test_nodes=fed.test)
    radius = fp.default_radius(fed.train)

    ball = all(v <= radius + 1e-12 for v in trace.max_injected_norm)
    feasible = all(
        np.all(injected[s].labels * injected[s].duals >= -1e-12)
        and np.all(injected[s].labels * injected[s].duals <= 1.0 + 1e-12)
        for s in spec.sources
    )
    labels_fixed = all(
        np.array_equal(injected[s].labels, init_labels[s]) for s in spec.sources
    )
    budget = all(injected[s].n == budgets[s] for s in spec.sources)

    # determinism: identical seeds give bit-identical reports
    small = fp.run_comparison(fed, [M.DIRECT], reps=2, solver_config=cfg,
                              ratio=0.2, outer_iters=8, seed=3)
    again = fp.run_comparison(fed, [M.DIRECT], reps=2, solver_config=cfg,
                              ratio=0.2, outer_iters=8, seed=3)
    deterministic = small.to_dict() == again.to_dict()

    # zero-coupling null attack: frozen diagonal Omega, indirect mode
    frozen = fp.SolverConfig(lambda1=0.01, lambda2=0.01, seed=5, omega_update_every=0)
    none_spec = fp.build_attack_spec(M.NONE, fed.node_ids, seed=5, outer_iters=15)
    ind_spec = fp.build_attack_spec(M.INDIRECT, fed.node_ids, injection_ratio=0.2,
                                    seed=5, outer_iters=15)
    s_none, _, _ = fp.at2fl_run(fed.train, none_spec, frozen, fed.loss,
                                test_nodes=fed.test)
    s_ind, _, _ = fp.at2fl_run(fed.train, ind_spec, frozen, fed.loss,
                               test_nodes=fed.test)
    null_attack = (
        abs(evaluate_targets(s_none, fed, ind_spec.targets)
            - evaluate_targets(s_ind, fed, ind_spec.targets)) < 1e-9
        and all(
            np.all(fp.attack_gradient(fed.loss, s_ind, fed.train, ind_spec.targets,
                                      s, 1.0) == 0.0)
            for s in ind_spec.sources
        )
    )
    elapsed = time.time() - t0
    parts = {
        "ball": ball, "hinge-box": feasible, "labels": labels_fixed,
        "budget": budget, "determinism": deterministic, "null-attack": null_attack,
    }
    ok = all(parts.values()) and elapsed < 60.0
    assert _verdict(9, "invariant suite", ok,
                    ", ".join(f"{k}={v}" for k, v in parts.items()) + f" ({elapsed:.1f}s)")
