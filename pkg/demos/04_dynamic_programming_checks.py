"""Check both dynamic-programming inequalities and the pathwise
super/sub-solution definitions statistically.

Above the value surface the synthesized strategy keeps the budget above the
surface at stopping rules (upper inequality); below it, the greedy adversary
forces the budget under the surface with positive frequency (lower
inequality).  The smooth barrier passes the pathwise super-solution test and
the constant floor passes the sub-solution test.
"""

import numpy as np

import stochtarget as st

model = st.uncertain_volatility()
grid = st.make_grid(model, n_x=201, n_t_min=200, a_res=9)
surface = st.solve_hjb(model, grid, a_res=9)
strategy = st.synthesize(surface, model)
v0 = float(surface.interp(0.0, [[100.0]])[0])

adversaries = [st.AdversaryPolicy.constant([0.3]),
               st.AdversaryPolicy.greedy(surface, a_res=9)]

stop = st.StopFamily(fixed_time=0.5, label="T/2")
up = st.check_dpp1(model, surface, strategy, adversaries, stop, n_paths=2000,
                   seed=11, t0=0.0, x0=[100.0], y0=v0 + 0.1, n_steps=400)
print("upper inequality (start above the surface):")
for row in up.rows:
    print(f"  {row['adversary']:>10}: violations {row['n_violations']}/{row['n']} "
          f"(mean gap {row['mean_gap']:+.4f})")

down = st.check_dpp2(model, surface, [strategy], adversaries, stop,
                     n_paths=2000, seed=12, t0=0.0, x0=[100.0],
                     y0=v0 - 0.1, n_steps=400)
print()
print("lower inequality (start below the surface):")
for row in down.rows:
    star = " <- best" if row.get("best_for_strategy") else ""
    print(f"  {row['adversary']:>10}: below-surface frequency "
          f"{row['violation_frac']:.3f} (Wilson low {row['wilson_lo']:.3f}){star}")

print()
barrier = st.classical_supersolution(model, grid)
sup_rep = st.check_supersolution_statistically(model, barrier, n_paths=600,
                                               seed=13, n_steps=100)
print("smooth barrier, pathwise super-solution test:")
for row in sup_rep.rows:
    print(f"  {row['adversary']:>10}: violation fraction {row['violation_frac']:.4f}")

floor = st.constant_subsolution(model, grid)
sub_rep = st.check_subsolution_statistically(model, floor, n_paths=300,
                                             seed=14, n_steps=100)
print()
print("constant floor, pathwise sub-solution test:")
for row in sub_rep.rows:
    if row.get("best_for_strategy"):
        print(f"  vs {row['strategy']:>22}: best adversary {row['adversary']} "
              f"keeps the budget below with frequency {row['below_frac']:.3f}")
for note in sub_rep.notes:
    print("  note:", note)
