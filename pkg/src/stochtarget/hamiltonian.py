"""Game Hamiltonian: per-control generator values, the sup over the adverse
box, and the exponential-in-time rescaling that restores monotonicity of the
reduced drift in y.

The per-control generator at (t, x, y) with gradient p and Hessian m is

    h_ua = -mu_y(t,x,y,u,a) + mu_x(t,x,a).p + 0.5 tr[sigma_x sigma_x^T m]

and the game value substitutes u = u_hat(t, x, y, sigma_x(t,x,a) p, a) before
taking the sup over a compact grid on the adverse box.  The sup is exhaustive
grid search: the adverse box is compact and low-dimensional and no concavity
in a is assumed anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Box, GameModel, InversionError, PreconditionError
from .model import _sobol


class ScalingError(RuntimeError):
    """No rescaling rate below the cap restored monotonicity in y."""


@dataclass
class HamiltonianEval:
    """Value of the game Hamiltonian with its maximizing adverse control.

    ``argmax_a`` is the lexicographically smallest grid point achieving the
    sup; ``u_at_argmax`` is the inverted control used there; ``clamped`` is
    set when that control had to be clipped into the control box.
    """
    value: float
    argmax_a: np.ndarray
    u_at_argmax: np.ndarray
    clamped: bool


@dataclass
class Rescaling:
    """Exponential reparameterization rate c with its monotonicity evidence.

    When ``monotone_verified`` holds, every checked sample pair y < y2
    satisfied  mu_tilde(..., y2, ...) >= mu_tilde(..., y, ...) - mono_tol  for
    the rescaled reduced drift  mu_tilde(t,x,y,z,a) = c y + e^{ct}
    mu_y_hat(t, x, e^{-ct} y, e^{-ct} z, a).
    """
    c: float
    monotone_verified: bool
    check_grid: dict


def a_grid_points(box: Box, a_res) -> np.ndarray:
    """Adverse-control grid, lexicographic order, endpoints included."""
    return box.grid(a_res)


def _check_symmetric(m, d):
    m = np.asarray(m, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.shape[-2:] != (d, d):
        raise PreconditionError(f"hessian must be {d}x{d}, got {m.shape}")
    if not np.allclose(m, np.swapaxes(m, -1, -2), atol=1e-12, rtol=1e-9):
        raise PreconditionError("hessian argument must be symmetric")
    return m


def h_ua(model: GameModel, t, x, y, u, a, p, m) -> float:
    """Per-control generator value at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    m = _check_symmetric(m, model.dim_x)
    mu = model.eval_mu_x(t, x, a)
    sig = model.eval_sigma_x(t, x, a)
    muy = model.eval_mu_y(t, x, y, u, a)
    cov = sig @ np.swapaxes(sig, -1, -2)
    return float(-muy + mu @ p + 0.5 * np.trace(cov @ m))


def _game_values(model, t, x, y, p, m, a_pts, rescale: Rescaling | None):
    """Generator values over the adverse grid at one state, with u eliminated.

    Returns (values (n_a,), u (n_a, d_u), clamped (n_a,))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))[None, :]     # (1, d)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    mu = model.eval_mu_x(t, x, a_pts)                          # (n_a, d) or (1, d)
    sig = model.eval_sigma_x(t, x, a_pts)                      # (n_a, d, d)
    cov = np.einsum("...ik,...jk->...ij", sig, sig)
    quad = 0.5 * np.einsum("...ij,ji->...", cov, m)
    lin = np.einsum("...i,i->...", mu, p)
    z = np.einsum("...ij,j->...i", sig, p)                     # sigma_x p
    if rescale is None:
        u, clamped = model.invert(t, x, y, z, a_pts)
        muy = model.eval_mu_y(t, x, y, u, a_pts)
        vals = -muy + lin + quad
    else:
        c = rescale.c
        scale = np.exp(-c * t)
        u, clamped = model.invert(t, x, scale * y, scale * z, a_pts)
        muy = model.eval_mu_y(t, x, scale * y, u, a_pts)
        vals = -c * y - np.exp(c * t) * muy + lin + quad
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (a_pts.shape[0],))
    u = np.broadcast_to(np.asarray(u, dtype=float), (a_pts.shape[0], model.dim_u))
    clamped = np.broadcast_to(np.asarray(clamped, dtype=bool), (a_pts.shape[0],))
    return vals, u, clamped


def _sup_eval(model, t, x, y, p, m, a_res, rescale) -> HamiltonianEval:
    m = _check_symmetric(m, model.dim_x)
    if np.any(np.atleast_1d(np.asarray(a_res)) < 1):
        raise PreconditionError("a_res must be >= 1 point per axis")
    a_pts = a_grid_points(model.adverse_set_a, a_res)
    try:
        vals, u, clamped = _game_values(model, t, x, y, p, m, a_pts, rescale)
    except InversionError as exc:
        # localize the offending adverse control for the error message
        for ap in a_pts:
            try:
                _game_values(model, t, x, y, p, m, ap[None, :], rescale)
            except InversionError:
                raise InversionError(
                    f"inversion failed inside the sup at a={ap}: {exc}",
                    best_residual=exc.best_residual) from exc
        raise
    i = int(np.argmax(vals))   # first occurrence = lexicographically smallest a
    return HamiltonianEval(value=float(vals[i]), argmax_a=a_pts[i].copy(),
                           u_at_argmax=u[i].copy(), clamped=bool(clamped[i]))


def h(model: GameModel, t, x, y, p, m, a_res=64) -> HamiltonianEval:
    """Game Hamiltonian: sup over the adverse grid of the generator with the
    control eliminated through u_hat at z = sigma_x(t,x,a) p.

    Ties are broken toward the lexicographically smallest grid point."""
    return _sup_eval(model, t, x, y, p, m, a_res, rescale=None)


def h_tilde(model: GameModel, rescale: Rescaling, t, x, y, p, m, a_res=64) -> HamiltonianEval:
    """Rescaled game Hamiltonian

        sup_a { -c y - e^{ct} mu_y_hat(t, x, e^{-ct}y, e^{-ct} sigma_x p, a)
                + mu_x.p + 0.5 tr[sigma_x sigma_x^T m] }.

    Requires a monotonicity-verified rescaling."""
    if not rescale.monotone_verified:
        raise PreconditionError("rescaling is not monotonicity-verified")
    return _sup_eval(model, t, x, y, p, m, a_res, rescale=rescale)


def select_scaling(model: GameModel, samples: int, seed: int,
                   margin: float = 1.0, mono_tol: float = 1e-9,
                   c_max: float = 1e6) -> Rescaling:
    """Pick the rescaling rate c and verify monotonicity of the rescaled
    reduced drift in y on sampled pairs.

    Starts at c = growth_l + margin and doubles until every sampled pair
    y < y2 satisfies the monotonicity inequality within mono_tol, or c
    exceeds c_max (then a ScalingError carries the worst violating sample).
    """
    if model.growth_l is None:
        raise PreconditionError("growth_l must be declared to select a scaling")
    T = model.horizon
    d, du, da = model.dim_x, model.dim_u, model.dim_a
    ylo, yhi = model.y_range
    pts = _sobol(1 + d + da + du + 2, max(samples, 2), seed)
    t = pts[:, 0] * T
    x = model.state_box.scale01(pts[:, 1:1 + d])
    a = model.adverse_set_a.scale01(pts[:, 1 + d:1 + d + da])
    u_z = model.control_set_u.scale01(pts[:, 1 + d + da:1 + d + da + du])
    y_pair = ylo + pts[:, -2:] * (yhi - ylo)
    y1 = np.minimum(y_pair[:, 0], y_pair[:, 1])
    y2 = np.maximum(y_pair[:, 0], y_pair[:, 1])
    # z from the image of sigma_y so the inversion is well-posed
    z = model.eval_sigma_y(t, x, y1, u_z, a)

    def mu_tilde(c, y):
        scale = np.exp(-c * t)
        vals, _ = model.mu_y_hat(t, x, scale * y, scale[:, None] * z, a)
        return c * y + np.exp(c * t) * vals

    c = model.growth_l + margin
    while True:
        gap = mu_tilde(c, y2) - mu_tilde(c, y1)
        worst = float(np.min(gap))
        if worst >= -mono_tol:
            return Rescaling(c=c, monotone_verified=True,
                             check_grid={"samples": int(samples), "seed": int(seed),
                                         "worst_margin": worst, "mono_tol": mono_tol,
                                         "domain": "scrambled-Sobol over (t, x, y-pairs, z, a)"})
        if 2 * c > c_max:
            i = int(np.argmin(gap))
            raise ScalingError(
                f"no c <= {c_max:g} verified monotonicity; worst violation {worst:.3g} at "
                f"t={t[i]:.4g}, x={x[i]}, y=({y1[i]:.4g},{y2[i]:.4g}), a={a[i]}")
        c *= 2.0
