"""Acceptance gate.  Every test prints one line

    CRITERION <n> PASS|FAIL: <detail>

and then asserts, so ``pytest -s`` or the captured log shows the gate status
criterion by criterion."""
import time
import warnings

import numpy as np
import pytest

from trtclosure import physics
from trtclosure.closure import fit_loglinear, instantiate_at, mirror_state, tabulated_closure
from trtclosure.constraints import default_T_grid, equilibrium_states
from trtclosure.dataset import interpolate_to
from trtclosure.evaluate import metrics, sweep_grid, training_points
from trtclosure.learn import ClosureLearner
from trtclosure.mstls import _smallest_minimizer, mstls_step, select_lambda
from trtclosure.solver import (
    BoundarySpec,
    ClosureBlowUp,
    boundary_from_dataset,
    coarse_grid,
    initial_from_dataset,
    simulate,
)
from trtclosure.termlib import build_F_library, build_sigma_library, eval_term

pytestmark = pytest.mark.acceptance

U = physics.DEFAULT_UNITS
T_SKIP = 2e-11


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def desk_fit(desk_m8):
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        learner = ClosureLearner(x_range=(0.0, 2.0), t_range=(0.0, 1e-10)).fit(desk_m8)
    return learner, time.perf_counter() - t0


@pytest.fixture(scope="module")
def desk_run(desk_m8, desk_fit):
    model = desk_fit[0].models_[0]
    x = coarse_grid(desk_m8, 2)
    t0 = time.perf_counter()
    sim, log = simulate(
        model, x, initial_from_dataset(desk_m8, x), desk_m8.t,
        boundary_from_dataset(desk_m8, "left"), boundary_from_dataset(desk_m8, "right"),
    )
    return sim, log, time.perf_counter() - t0


# ---------------------------------------------------------------------------


def test_criterion_1_library_counts(report):
    t0 = time.perf_counter()
    nF, nS = len(build_F_library(4, 3)), len(build_sigma_library(4, 3))
    dt = time.perf_counter() - t0
    report(1, nF == 38 and nS == 62 and dt < 1.0, f"|L^F| = {nF}, |L^sigma| = {nS}, {dt:.3f} s")


def test_criterion_2_opacity_closed_forms(report):
    worst_P = max(abs(physics.sigma_P_quad(T, 1e9) / float(physics.sigma_P(T, 1e9)) - 1) for T in (10.0, 100.0, 1000.0))
    ross = abs(physics.rosseland_integral() / 5.1047e3 - 1)
    worst_B = max(abs(physics.planck_integral(T) / (U.ac / (4 * np.pi) * T**4) - 1) for T in (10.0, 100.0, 1000.0))
    ok = worst_P < 1e-4 and ross < 1e-4 and worst_B < 1e-8
    report(2, ok, f"sigma_P rel {worst_P:.1e}, Rosseland constant rel {ross:.1e}, Planck integral rel {worst_B:.1e}")


def test_criterion_3_kappa_L_consistency(report):
    worst, where = 0.0, None
    for g, T3 in sweep_grid():
        T_in = T3 ** (1 / 3)
        exact = physics.kappa_L(1.0, T_in, g, 4.0)
        approx = physics.kappa_L_approx(1.0, T_in, g, 4.0)
        rel = abs(approx / exact - 1)
        if rel > worst:
            worst, where = rel, (g, T3)
    monotone = all(
        np.all(np.diff([physics.kappa_L(1.0, T3 ** (1 / 3), g, 4.0) for g in sorted({p[0] for p in sweep_grid()})]) < 0)
        for T3 in sorted({p[1] for p in sweep_grid()})
    )
    ok = worst < 0.05 and monotone
    report(3, ok, f"max rel(approx vs exact) = {worst:.3f} at (gamma, T_in^3) = {where}; decreasing in gamma: {monotone}")


def test_criterion_4_planted_recovery(report, planted_fit):
    t0 = time.perf_counter()
    truth, ds, learner = planted_fit
    m = learner.models_[0]
    details, ok = [], True
    for lib, w, wt in ((m.lib_F, m.w_F, truth.w_F), (m.lib_S, m.w_S, truth.w_S)):
        forced = set(lib.forced_index.tolist())
        free = {j for j in np.flatnonzero(w) if j not in forced}
        true = set(np.flatnonzero(wt))
        sup_ok = free == true - forced
        rel = float(np.max(np.abs(w[list(true)] / wt[list(true)] - 1)))
        # forced terms are always in the model; they must carry no weight
        f = {v: np.asarray(ds.fields[v]) for v in "eFTS"}
        top = max(np.max(np.abs(wt[j] * eval_term(lib[j], f)[0])) for j in true)
        extra = max((np.max(np.abs(w[j] * eval_term(lib[j], f)[0])) / top for j in forced - true), default=0.0)
        ok &= sup_ok and rel < 1e-3 and extra < 1e-3
        details.append(f"{lib.slot}: support {'exact' if sup_ok else 'WRONG'}, coef rel {rel:.1e}, forced weight {extra:.1e}")
    base = float(np.max(np.abs(m.w0 / truth.w0 - 1)))
    ok &= base < 1e-3
    wall = learner.report_["wall_time"] + (time.perf_counter() - t0)
    ok &= wall < 300
    report(4, ok, "; ".join(details) + f"; base rel {base:.1e}; learn {wall:.1f} s")


def test_criterion_5_constraint_satisfaction(report, planted_fit, desk_fit):
    worst_eq = worst_ineq = 0.0
    violations = 0
    ok = True
    for learner in (planted_fit[2], desk_fit[0]):
        for rep in learner.report_["datasets"]:
            for slot, r in rep["constraint_residuals"].items():
                ok &= r["equality"] < 1e-8 * (1 + r["w_inf"]) and r["inequality_excess"] <= 1e-8
                worst_eq = max(worst_eq, r["equality"] / (1 + r["w_inf"]))
                worst_ineq = max(worst_ineq, r["inequality_excess"])
            violations += rep["audit"]["total_violations"]
    ok &= violations == 0
    report(5, ok, f"max |AW|/(1+|W|) = {worst_eq:.1e}, max CW-D excess = {worst_ineq:.1e}, audit violations = {violations}")


def _black_body_drift(model, T, t_end=2e-10):
    st = equilibrium_states(np.full(64, T), model.params["gamma"], model.params["rho_cv"], model.units)
    x = (np.arange(64) + 0.5) * 4.0 / 64
    u0 = np.stack([st[v] for v in "eFTS"])
    bc = BoundarySpec.constant(u0[:, 0])
    out, log = simulate(model, x, u0, np.linspace(0.0, t_end, 5), bc, bc)
    scale = {"e": u0[0, 0], "F": U.c * (u0[0, 0] - model.params["rho_cv"] * T), "T": T, "S": u0[3, 0]}
    drift = max(np.max(np.abs(out.fields[v] - u0[i][:, None])) / scale[v] for i, v in enumerate("eFTS"))
    return drift, len(log.steps)


def test_criterion_6_black_body_preservation(report, planted_fit, desk_fit):
    worst, detail, ok = 0.0, [], True
    for name, m in (("planted", planted_fit[2].models_[0]), ("desk", desk_fit[0].models_[0])):
        T_nodes = default_T_grid(float(np.max(planted_fit[1].fields["T"])) if name == "planted" else 1000.0)
        for T in (T_nodes[2], 0.5 * (T_nodes[2] + T_nodes[3])):
            t_end = 2e-10
            drift, steps = _black_body_drift(m, T, t_end)
            while steps < 200:
                t_end *= 2
                drift, steps = _black_body_drift(m, T, t_end)
            worst = max(worst, drift)
            ok &= drift < 1e-6
            detail.append(f"{name} T={T:.0f}: {drift:.1e} over {steps} steps")
    report(6, ok, "; ".join(detail))


def test_criterion_7_conservation_and_symmetry(report, desk_m8, desk_run, desk_fit):
    _, log, _ = desk_run
    bal = log.max_balance_error
    model = desk_fit[0].models_[0]
    x = coarse_grid(desk_m8, 2)
    u0 = initial_from_dataset(desk_m8, x, j=desk_m8.t.size // 4)
    times = np.linspace(0.0, 3e-11, 4)
    a, _ = simulate(model, x, u0, times, BoundarySpec.constant(u0[:, 0]), BoundarySpec.constant(u0[:, -1]))
    um = mirror_state(u0)
    b, _ = simulate(model, x, um, times, BoundarySpec.constant(um[:, 0]), BoundarySpec.constant(um[:, -1]))
    mir = max(
        np.max(np.abs(sgn * b.fields[v][::-1] - a.fields[v])) / np.max(np.abs(a.fields[v]))
        for v, sgn in (("e", 1), ("F", -1), ("T", 1), ("S", 1))
    )
    report(7, bal < 1e-8 and mir < 1e-10, f"max per-step e-balance rel {bal:.1e} over {len(log.steps)} steps; mirrored run rel {mir:.1e}")


def test_criterion_8_desk_self_consistency(report, desk_m8, desk_fit, desk_run):
    sim, log, sim_time = desk_run
    ref = interpolate_to(desk_m8, sim.x, sim.t)
    rep = metrics(sim, ref)
    late = sim.t > T_SKIP
    eT = float(np.sum(np.abs(sim.fields["T"][:, late] - ref.fields["T"][:, late])) / np.sum(np.abs(ref.fields["T"][:, late])))
    eT_all = rep["T"].err_L1
    eInt = rep["e"].max_after(sim.t, T_SKIP, "Int")
    total = desk_fit[1] + sim_time
    ok = eT <= 0.15 and eInt <= 0.05 and total < 1800
    report(
        8, ok,
        f"err_L1(T) = {eT:.3f} for t > 2e-11 ({eT_all:.3f} over all t), max err_Int,j(e) = {eInt:.3f}; "
        f"learn {desk_fit[1]:.0f} s + simulate {sim_time:.0f} s",
    )


def test_criterion_9_ray_effect_robustness(report, desk_m8, desk_m48, desk_run):
    sim = desk_run[0]
    ref48 = interpolate_to(desk_m48, sim.x, sim.t)
    data8 = interpolate_to(desk_m8, sim.x, sim.t)
    closure = metrics(sim, ref48)["e"].max_after(sim.t, T_SKIP)
    data = metrics(data8, ref48)["e"].max_after(sim.t, T_SKIP)
    report(9, closure <= 1.5 * data, f"max err_L1,j(e) vs M48: closure {closure:.3f}, M8 data {data:.3f} (ratio {closure / data:.2f})")


def test_criterion_10_table_round_trip(report, desk_m8):
    pc = tabulated_closure()
    ens = [instantiate_at(pc, g, T3, warn=False) for g, T3 in training_points()]
    back = fit_loglinear(ens, fit_base=False)
    worst = 0.0
    for t in pc.terms:
        f = back.find(t.slot, t.kind, t.powers)
        for a, b in ((f.w0, t.w0), (f.eta_T, t.eta_T), (f.eta_gamma, t.eta_gamma)):
            worst = max(worst, abs(a / b - 1))
    model = instantiate_at(pc, 1e9, 1e9, warn=False)
    x = coarse_grid(desk_m8, 2)
    try:
        sim, log = simulate(
            model, x, initial_from_dataset(desk_m8, x), desk_m8.t,
            boundary_from_dataset(desk_m8, "left"), boundary_from_dataset(desk_m8, "right"),
        )
        smoke, msg = True, f"ran to t = {sim.t[-1]:.1e} s in {len(log.steps)} steps"
    except ClosureBlowUp as exc:
        smoke, msg = False, f"blow-up: {exc}"
    report(10, worst < 1e-6 and smoke, f"max rel round-trip error {worst:.1e}; (1e9, 1e9) smoke {msg}")


def test_criterion_11_mstls_degenerate(report):
    r = np.random.default_rng(2)
    G = r.normal(size=(100, 6))
    G /= np.linalg.norm(G, axis=0)
    b = G @ np.array([1.0, 0.0, -0.5, 0.0, 0.3, 0.2]) + 0.01 * r.normal(size=100)
    b *= 1.0 / np.linalg.norm(b)
    w_big, s_big = mstls_step(G, b, 10.0, forced=(3,))
    w_small, s_small = mstls_step(G, b, 1e-12)
    losses = np.array([0.5, 0.2, 0.4, 0.2, 0.6])
    tie = _smallest_minimizer(losses)
    # a λ grid whose loss is flat over several λ must return the smallest
    lams = np.logspace(-3, -1.5, 12)
    lam, _, path = select_lambda(G, b, lams)
    best = np.min(path.losses)
    flat_min = lams[np.isclose(path.losses, best, rtol=1e-12, atol=0)].min()
    ok = list(s_big) == [3] and s_small.size == 6 and tie == 1 and lam == flat_min
    report(11, ok, f"large lambda support {list(s_big)}, tiny lambda support size {s_small.size}, tie-break index {tie}, path minimum at smallest lambda: {lam == flat_min}")
