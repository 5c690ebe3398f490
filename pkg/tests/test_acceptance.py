"""Acceptance suite: every exit criterion at its stated tolerance, one
pass/fail line printed per criterion.

The heavy benchmark artifacts (three nested solves, the rescaled solve, the
synthesized strategy) are built once in a module fixture and shared; each
criterion times the work its budget covers.
"""

import time

import numpy as np
import pytest

import stochtarget as st
from stochtarget.cli import _mask_box
from stochtarget.model import Box
from conftest import black_scholes_call

BS_REF = 11.923538474048499     # closed-form call, x=K=100, T=1, sigma=0.3, r=0
A_RES = 17


def _report(num, ok, msg):
    tag = "PASS" if ok else "FAIL"
    print(f"criterion {num:02d} [{tag}] {msg}")
    assert ok, f"criterion {num}: {msg}"


def _max_node_error(surface, strike=100.0, sigma=0.3):
    worst = 0.0
    xs = surface.grid.axes[0]
    for k, t in enumerate(surface.grid.times):
        ref = black_scholes_call(xs, strike, surface.grid.t_end - t, sigma)
        worst = max(worst, float(np.max(np.abs(surface.values[k] - ref))))
    return worst


@pytest.fixture(scope="module")
def bench():
    model = st.uncertain_volatility()
    data = {"model": model, "levels": {}, "timings": {}}
    for nx in (101, 201, 401):
        grid = st.make_grid(model, n_x=nx, n_t_min=nx - 1, a_res=A_RES)
        t0 = time.perf_counter()
        surf = st.solve_hjb(model, grid, a_res=A_RES)
        data["timings"][f"solve_{nx}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        err = _max_node_error(surf)
        data["timings"][f"oracle_{nx}"] = time.perf_counter() - t0
        data["levels"][nx] = {"grid": grid, "surface": surf, "max_node_err": err}
    w = data["levels"][401]["surface"]
    data["surface"] = w
    data["v0"] = float(w.interp(0.0, [[100.0]])[0])
    data["scheme_err_point"] = abs(data["v0"] - BS_REF)
    data["scheme_err_node"] = st.pde.slice0_max_diff(
        data["levels"][201]["surface"], w)
    data["strategy"] = st.synthesize(w, model)
    return data


@pytest.fixture(scope="module")
def adversaries(bench):
    model, w = bench["model"], bench["surface"]
    return [st.AdversaryPolicy.constant(model.adverse_set_a.hi),
            st.AdversaryPolicy.iid_uniform(a_res=A_RES),
            st.AdversaryPolicy.piecewise(a_res=A_RES),
            st.AdversaryPolicy.greedy(w, a_res=A_RES)]


def test_criterion_01_oracle_value_match(bench):
    rel = bench["scheme_err_point"] / BS_REF
    took = bench["timings"]["solve_401"]
    ok = rel <= 0.01 and took < 120.0
    _report(1, ok, f"oracle value match: value={bench['v0']:.5f}, "
                   f"rel_err={rel:.2e} <= 1e-2, solve {took:.1f}s < 120s")


def test_criterion_02_convergence_order(bench):
    errs = [bench["levels"][nx]["max_node_err"] for nx in (101, 201, 401)]
    orders = [float(np.log2(errs[i] / errs[i + 1])) for i in range(2)]
    total = sum(bench["timings"].values())
    ok = all(0.5 <= o <= 1.2 for o in orders) and total < 600.0
    _report(2, ok, f"convergence order: max-node errors {errs[0]:.4g} -> "
                   f"{errs[1]:.4g} -> {errs[2]:.4g}, orders "
                   f"{orders[0]:.2f}, {orders[1]:.2f} in [0.5, 1.2], "
                   f"three levels {total:.1f}s < 600s")


def test_criterion_03_scheme_monotonicity(bench):
    model, w = bench["model"], bench["surface"]
    grid = w.grid
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    slices = rng.integers(1, grid.n_t + 1, size=10)
    base = {int(k): (w.values[k],
                     st.step_once(model, grid, w.values[k], grid.times[k],
                                  a_res=A_RES))
            for k in slices}
    worst_drop = 0.0
    for i in range(1000):
        k = int(slices[i % len(slices)])
        w_k, base_next = base[k]
        j = int(rng.integers(0, grid.n_x[0]))
        bumped = w_k.copy()
        bumped[j] += float(rng.uniform(0.1, 1.0))
        next_bumped = st.step_once(model, grid, bumped, grid.times[k], a_res=A_RES)
        drop = float(np.min(next_bumped[1:-1] - base_next[1:-1]))
        worst_drop = min(worst_drop, drop)
    took = time.perf_counter() - t0
    ok = worst_drop >= 0.0 and took < 60.0
    _report(3, ok, f"scheme monotonicity: 1000 positive single-node bumps, "
                   f"worst dependent change {worst_drop:.3g} >= 0 "
                   f"(tolerance 0), {took:.1f}s < 60s")


def test_criterion_04_envelope(bench):
    model, w = bench["model"], bench["surface"]
    grid = w.grid
    lo = st.constant_subsolution(model, grid)
    hi = st.classical_supersolution(model, grid)
    tol = 10.0 * (grid.dt + float(np.max(grid.dx)))
    below = float(np.max(lo.values - w.values))
    above = float(np.max(w.values - hi.values))
    ok = below <= tol and above <= tol
    _report(4, ok, f"envelope: max(sub - solve)={below:.3g}, "
                   f"max(solve - super)={above:.3g}, both <= tol={tol:.3g}")


def test_criterion_05_smooth_barrier_residual():
    t0 = time.perf_counter()
    models = [st.uncertain_volatility(),
              st.uncertain_volatility(rate=0.05),
              st.controlled_drift()]
    worst = -np.inf
    for model in models:
        grid = st.make_grid(model, n_x=41, n_t_min=40, a_res=9)
        phi = st.classical_supersolution(model, grid)
        rep = st.residual(model, phi, a_res=9, tol=0.0)
        worst = max(worst, rep.worst_node["residual"] if rep.worst_node else -np.inf)
        if rep.n_pos_violations:
            _report(5, False, f"smooth barrier residual positive on {model.name}")
    took = time.perf_counter() - t0
    _report(5, took < 60.0,
            f"smooth barrier: residual <= 0 at every interior node on "
            f"{len(models)} models (worst {worst:.3g}), {took:.1f}s")


def test_criterion_06_lattice_closure(bench):
    model = bench["model"]
    t0 = time.perf_counter()
    grid = bench["levels"][101]["grid"]
    w101 = bench["levels"][101]["surface"]
    phi = st.classical_supersolution(model, grid)
    shifted = st.GridFn(grid=grid, values=w101.values + 150.0, label="shifted")
    ok_each = all(st.residual(model, s, a_res=9, every=9).is_supersolution
                  for s in (phi, shifted))
    mixed = st.lattice_min(phi, shifted)
    kinks = st.lattice_kink_mask(phi, shifted)
    rep = st.residual(model, mixed, a_res=9, exclude_mask=kinks, every=9)
    took = time.perf_counter() - t0
    ok = ok_each and kinks.any() and rep.is_supersolution and took < 60.0
    _report(6, ok, f"lattice closure: min of two verified super-solutions "
                   f"passes the sign check off {int(kinks.sum())} kink nodes, "
                   f"{took:.1f}s")


def test_criterion_07_scaling_invariance(bench):
    model, w = bench["model"], bench["surface"]
    t0 = time.perf_counter()
    rs = st.select_scaling(model, samples=256, seed=17)
    w2 = st.solve_hjb(model, w.grid, rescale=rs, a_res=A_RES)
    took = time.perf_counter() - t0
    diff = float(np.max(np.abs(w2.values - w.values)))
    budget = 10.0 * bench["scheme_err_node"]
    ok = diff <= budget and took < 300.0
    _report(7, ok, f"scaling invariance: c={rs.c}, max nodewise diff "
                   f"{diff:.4g} <= 10 x scheme_err = {budget:.4g}, "
                   f"{took:.1f}s < 300s")


def test_criterion_08_target_certification(bench, adversaries):
    model, strat = bench["model"], bench["strategy"]
    y0 = bench["v0"] + 5.0 * bench["scheme_err_point"]
    t0 = time.perf_counter()
    rep = st.certify_target(model, strat, adversaries, 0.0, [100.0], y0,
                            n_paths=10000, n_steps=400, seed=808)
    took = time.perf_counter() - t0
    fracs = {r["adversary"]: r["success_frac"] for r in rep.rows}
    tight = {r["adversary"]: float(np.mean(r["per_path"]["value"] >= 0.0))
             for r in rep.rows}
    ok = all(f >= 0.99 for f in fracs.values()) and took < 600.0
    _report(8, ok, f"target certification: success {fracs} "
                   f"(slack_tol={rep.params['slack_tol']:.4g}; "
                   f"zero-slack info {tight}), {took:.0f}s < 600s")


def test_criterion_09_dpp_upper(bench, adversaries):
    model, w, strat = bench["model"], bench["surface"], bench["strategy"]
    y0 = bench["v0"] + 5.0 * bench["scheme_err_point"]
    lo, hi = _mask_box(w.grid, st.trusted_mask(model, w.grid, n_std=3.0,
                                               a_res=3)[0])
    stops = {"T/2": st.StopFamily(fixed_time=0.5, label="T/2"),
             "exit-ball": st.StopFamily(exit_box=Box(lo, hi), label="exit-ball")}
    t0 = time.perf_counter()
    worst, flagged = 0.0, 0
    for name, stop in stops.items():
        rep = st.check_dpp1(model, w, strat, adversaries, stop, n_paths=10000,
                            seed=909, t0=0.0, x0=[100.0], y0=y0, n_steps=400)
        worst = max(worst, max(r["violation_frac"] for r in rep.rows))
        flagged += sum(r["n_boundary_flagged"] for r in rep.rows)
    took = time.perf_counter() - t0
    ok = worst <= 0.01 and took < 300.0
    _report(9, ok, f"upper dynamic-programming check: worst violation "
                   f"fraction {worst:.4f} <= 0.01 over stops "
                   f"{list(stops)} ({flagged} boundary hits flagged), "
                   f"{took:.0f}s < 300s")


def test_criterion_10_dpp_lower(bench):
    model, w, strat = bench["model"], bench["surface"], bench["strategy"]
    y0 = bench["v0"] - 5.0 * bench["scheme_err_point"]
    greedy = st.AdversaryPolicy.greedy(w, a_res=A_RES)
    t0 = time.perf_counter()
    results = {}
    for name, stop in (("T", st.StopFamily(fixed_time=1.0, label="T")),
                       ("T/2", st.StopFamily(fixed_time=0.5, label="T/2"))):
        rep = st.check_dpp2(model, w, [strat], [greedy], stop, n_paths=10000,
                            seed=1010, t0=0.0, x0=[100.0], y0=y0, n_steps=400)
        results[name] = (rep.rows[0]["violation_frac"], rep.rows[0]["wilson_lo"])
    took = time.perf_counter() - t0
    ok = all(wl > 0.0 for _, wl in results.values()) and took < 300.0
    _report(10, ok, "lower dynamic-programming check: greedy adversary "
                    f"violation fractions {results} with Wilson lower bounds "
                    f"> 0 at 95%, {took:.0f}s < 300s")


def test_criterion_11_comparison_fleet(bench):
    model, w = bench["model"], bench["surface"]
    grid = w.grid
    t0 = time.perf_counter()
    lo = st.constant_subsolution(model, grid)
    hi = st.classical_supersolution(model, grid)
    K, L = model.lipschitz_k, model.growth_l
    lam = L + L * K + K ** 2 * grid.dim + K + 1.0
    bump = 0.5 * np.exp(-lam * grid.times)[:, None] * (
        1.0 + grid.mesh[..., 0] ** 2)[None, :]
    w_pert = st.GridFn(grid=grid, values=w.values + bump, label="perturbed")
    pairs = [("floor vs solve", lo, w), ("floor vs barrier", lo, hi),
             ("solve vs barrier", w, hi), ("solve vs perturbed", w, w_pert),
             ("floor vs perturbed", lo, w_pert)]
    all_ok = True
    for name, a, b in pairs:
        rep = st.comparison_check(a, b)
        all_ok &= rep.ordered
    took = time.perf_counter() - t0
    _report(11, all_ok and took < 60.0,
            f"comparison fleet: {len(pairs)} ordered (sub, super) pairs stay "
            f"ordered on all slices, {took:.1f}s")


def test_criterion_12_non_anticipativity(bench):
    model, strat = bench["model"], bench["strategy"]
    t0 = time.perf_counter()
    n_steps = 50
    rng = np.random.default_rng(31337)
    lo, hi = model.adverse_set_a.lo[0], model.adverse_set_a.hi[0]
    checked = 0
    for trial in range(100):
        s = int(rng.integers(1, n_steps - 1))
        a1 = rng.uniform(lo, hi, size=(n_steps, 1))
        a2 = a1.copy()
        a2[s + 1:] = rng.uniform(lo, hi, size=(n_steps - s - 1, 1))
        p1 = st.simulate(model, strat, st.AdversaryPolicy.scripted(a1),
                         0.0, [100.0], bench["v0"], n_steps, seed=trial)
        p2 = st.simulate(model, strat, st.AdversaryPolicy.scripted(a2),
                         0.0, [100.0], bench["v0"], n_steps, seed=trial)
        if not (np.array_equal(p1.u_path[:s + 1], p2.u_path[:s + 1])
                and np.array_equal(p1.x_path[:s + 2], p2.x_path[:s + 2])
                and np.array_equal(p1.y_path[:s + 2], p2.y_path[:s + 2])):
            _report(12, False, f"controls diverged before the prefix end at "
                               f"trial {trial}, split step {s}")
        checked += 1
    took = time.perf_counter() - t0
    _report(12, checked == 100 and took < 60.0,
            f"non-anticipativity replay: {checked} randomized prefixes with "
            f"exact control agreement, {took:.1f}s")
