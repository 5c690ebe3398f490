"""Declare a game model and stress its standing conditions by sampling.

The uncertain-volatility game: nature picks the volatility a in [0.1, 0.3]
each instant, the controller rebalances u shares to guarantee a capped call
payoff at the horizon.  Every regularity condition behind the solver is
falsification-checked on quasi-random samples; a pass means "not falsified",
never "proved".
"""

import numpy as np

import stochtarget as st

model = st.uncertain_volatility(vol_lo=0.1, vol_hi=0.3, strike=100.0, x_hi=400.0)
print(f"model: {model.name}")
print(f"  state box        : {model.state_box.lo} .. {model.state_box.hi}")
print(f"  adverse box      : {model.adverse_set_a.lo} .. {model.adverse_set_a.hi}")
print(f"  declared K, L, G : {model.lipschitz_k}, {model.growth_l}, {model.g_bound}")
print()

report = st.validate_assumptions(model, n_samples=2000, seed=7)
print(report.summary())
print()

# the volatility-inversion map in isolation: find the control matching a
# prescribed budget volatility, then re-substitute
inv = st.invert_sigma_y(model, t=0.0, x=[100.0], y=0.0, z=[4.0], a=[0.2])
print(f"inversion: z=4.0 at (x=100, a=0.2)  ->  u = {inv.u[0]:.4f} "
      f"(residual {inv.residual:.2e}, clamped={inv.clamped})")

# a deliberately broken declaration: quadratic volatility against K = 1
from stochtarget.model import Box


def sigma_x_quad(t, x, a):
    return (x[..., 0] ** 2)[..., None, None] * np.ones((1, 1))


broken = st.GameModel(
    mu_x=lambda t, x, a: np.zeros_like(x), sigma_x=sigma_x_quad,
    mu_y=lambda t, x, y, u, a: np.zeros_like(np.asarray(y, dtype=float)),
    sigma_y=lambda t, x, y, u, a: np.asarray(u, dtype=float),
    g=lambda x: np.zeros(np.shape(x)[:-1]),
    u_hat=lambda t, x, y, z, a: np.asarray(z, dtype=float),
    control_set_u=Box.from_pairs([[-1, 1]]), adverse_set_a=Box.from_pairs([[0, 1]]),
    state_box=Box.from_pairs([[-2, 2]]), horizon=1.0, lipschitz_k=1.0,
    growth_l=1.0, g_bound=0.0, name="quadratic-vol")
bad = st.validate_assumptions(broken, n_samples=2000, seed=7)
print()
print("deliberately broken declaration (|sigma_x| = x^2 against K = 1):")
print(bad.summary())
