"""Backward HJB solve with a monotone explicit finite-difference scheme, plus
the residual / jet / comparison / lattice machinery used to certify discrete
super- and sub-solutions.

Scheme.  Marching backward from the terminal payoff,

    w(t - dt, .) = w(t, .) + dt * sup_a [ -mu_y_hat(t, x, w, sigma_x Dw, a)
                                          + upwind drift + central diffusion ]

with drift-sign-dependent one-sided first differences, central second
differences, and the sign-split seven-point stencil for cross derivatives
(monotone when sigma_x sigma_x^T is diagonally dominant; dominance failures
are counted per node and reported, never ignored).  Spatial boundary nodes
are frozen at the terminal payoff extended constantly in time; monotone +
consistent + CFL-stable makes the scheme converge to the unique bounded
continuous viscosity solution, which is the game value.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import hamiltonian as ham
from .model import Box, GameModel, PreconditionError
from .hamiltonian import Rescaling


class CflError(RuntimeError):
    """Grid violates the explicit-scheme stability bound."""


class SolveError(RuntimeError):
    """The backward sweep produced a non-finite value."""


@dataclass(frozen=True)
class Grid:
    """Rectilinear space-time grid on a truncated box.

    ``n_x`` counts nodes per spatial axis (>= 3 for the stencils), ``n_t``
    time steps, so there are n_t + 1 time slices and dt = t_end / n_t.
    """
    box: Box
    n_x: tuple[int, ...]
    n_t: int
    t_end: float
    cfl_safety: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "n_x", tuple(int(n) for n in np.atleast_1d(self.n_x)))
        if len(self.n_x) != self.box.dim:
            raise PreconditionError("n_x must give one resolution per spatial axis")
        if any(n < 3 for n in self.n_x):
            raise PreconditionError("need n_x >= 3 per axis for the stencils")
        if self.n_t < 1:
            raise PreconditionError("need n_t >= 1")
        if not (0.0 < self.cfl_safety <= 1.0):
            raise PreconditionError("cfl_safety must lie in (0, 1]")

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def dt(self) -> float:
        return self.t_end / self.n_t

    @property
    def dx(self) -> np.ndarray:
        return self.box.widths / (np.asarray(self.n_x) - 1)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(self.box.lo[i], self.box.hi[i], self.n_x[i])
                     for i in range(self.dim))

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_t + 1)

    @cached_property
    def mesh(self) -> np.ndarray:
        """All nodes, shape (*n_x, dim)."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(grids, axis=-1)

    @cached_property
    def interior_mesh(self) -> np.ndarray:
        idx = (slice(1, -1),) * self.dim
        return self.mesh[idx]

    def same_as(self, other: "Grid") -> bool:
        return (self.n_x == other.n_x and self.n_t == other.n_t
                and np.allclose(self.box.lo, other.box.lo)
                and np.allclose(self.box.hi, other.box.hi)
                and np.isclose(self.t_end, other.t_end))


def max_diffusion_norm(model: GameModel, box: Box, n_x, a_res=9) -> float:
    """max over grid nodes and the adverse grid of the spectral norm of
    sigma_x sigma_x^T."""
    probe = Grid(box=box, n_x=tuple(np.atleast_1d(n_x)), n_t=1,
                 t_end=model.horizon)
    nodes = probe.mesh.reshape(-1, probe.dim)
    a_pts = model.adverse_set_a.grid(a_res)
    worst = 0.0
    for t in (0.0, 0.5 * model.horizon, model.horizon):
        sig = model.eval_sigma_x(t, nodes[None, :, :], a_pts[:, None, :])
        cov = np.einsum("...ik,...jk->...ij", sig, sig)
        if probe.dim == 1:
            worst = max(worst, float(np.max(np.abs(cov))))
        else:
            worst = max(worst, float(np.max(np.abs(np.linalg.eigvalsh(cov)))))
    return worst


def cfl_max_dt(model: GameModel, box: Box, n_x, a_res=9, cfl_safety: float = 0.9) -> float:
    """Largest stable explicit step: cfl_safety * dx^2 / (d * max |sigma sigma^T|)."""
    dx = box.widths / (np.asarray(np.atleast_1d(n_x)) - 1)
    top = max_diffusion_norm(model, box, n_x, a_res)
    if top <= 0.0:
        return np.inf
    return cfl_safety * float(np.min(dx)) ** 2 / (box.dim * top)


def check_cfl(model: GameModel, grid: Grid, a_res=9) -> None:
    bound = cfl_max_dt(model, grid.box, grid.n_x, a_res, grid.cfl_safety)
    if grid.dt > bound * (1 + 1e-12):
        raise CflError(
            f"dt = {grid.dt:.6g} violates the CFL bound {bound:.6g} "
            f"(= {grid.cfl_safety} * min(dx)^2 / (d * max|sigma_x sigma_x^T|)); "
            f"need n_t >= {int(np.ceil(grid.t_end / bound))}")


def make_grid(model: GameModel, n_x, n_t_min: int = 1, box: Box | None = None,
              a_res=9, cfl_safety: float = 0.9) -> Grid:
    """Grid on the model's truncated box with n_t bumped up to the CFL floor."""
    box = box or model.state_box
    dt_max = cfl_max_dt(model, box, n_x, a_res, cfl_safety)
    n_t = max(int(n_t_min), int(np.ceil(model.horizon / dt_max)) if np.isfinite(dt_max) else 1)
    return Grid(box=box, n_x=tuple(np.atleast_1d(n_x)), n_t=n_t,
                t_end=model.horizon, cfl_safety=cfl_safety)


@dataclass
class GridFn:
    """A value surface w(t, x) on a Grid: values indexed (time slice, *space)."""
    grid: Grid
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expect = (self.grid.n_t + 1,) + self.grid.n_x
        if self.values.shape != expect:
            raise PreconditionError(f"values shape {self.values.shape} != grid shape {expect}")

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @cached_property
    def _interp(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.grid.times, *self.grid.axes), self.values,
                                       method="linear", bounds_error=False, fill_value=None)

    @cached_property
    def _grad_arrays(self) -> np.ndarray:
        """Per-slice spatial gradient, central interior / one-sided edges;
        shape (n_t+1, *n_x, d)."""
        out = np.stack([np.gradient(self.values, ax, axis=1 + i)
                        for i, ax in enumerate(self.grid.axes)], axis=-1)
        return out

    @cached_property
    def _grad_interp(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.grid.times, *self.grid.axes), self._grad_arrays,
                                       method="linear", bounds_error=False, fill_value=None)

    @cached_property
    def _hess_interp(self) -> RegularGridInterpolator:
        d = self.grid.dim
        hess = np.zeros(self.values.shape + (d, d))
        for i in range(d):
            hess[..., i, i] = np.gradient(self._grad_arrays[..., i],
                                          self.grid.axes[i], axis=1 + i)
            for j in range(i + 1, d):
                cross = np.gradient(self._grad_arrays[..., i],
                                    self.grid.axes[j], axis=1 + j)
                hess[..., i, j] = cross
                hess[..., j, i] = cross
        return RegularGridInterpolator((self.grid.times, *self.grid.axes), hess,
                                       method="linear", bounds_error=False, fill_value=None)

    def _clip_query(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        tc = np.clip(t, 0.0, self.grid.t_end)
        xc = np.clip(x, self.grid.box.lo, self.grid.box.hi)
        clipped = (tc != t) | np.any(xc != x, axis=-1)
        return np.concatenate([np.broadcast_to(tc, x.shape[:-1])[..., None], xc], axis=-1), clipped

    def interp(self, t, x, with_flag: bool = False):
        """Multilinear interpolation in (t, x); queries clipped into the box."""
        q, clipped = self._clip_query(t, np.atleast_2d(np.asarray(x, dtype=float)))
        vals = self._interp(q)
        return (vals, clipped) if with_flag else vals

    def gradient(self, t, x, with_flag: bool = False):
        """Interpolated central-difference spatial gradient Dw(t, x)."""
        q, clipped = self._clip_query(t, np.atleast_2d(np.asarray(x, dtype=float)))
        vals = self._grad_interp(q)
        return (vals, clipped) if with_flag else vals

    def hessian(self, t, x):
        q, _ = self._clip_query(t, np.atleast_2d(np.asarray(x, dtype=float)))
        return self._hess_interp(q)

    def kink_mask(self, rel_threshold: float = 0.2) -> np.ndarray:
        """Nodes where the one-sided gradients disagree strongly, per slice.

        Flags points where central differencing is only a subgradient
        selection (payoff kinks, lattice seams)."""
        mask = np.zeros(self.values.shape, dtype=bool)
        scale = max(float(np.max(self.values) - np.min(self.values)), 1e-300)
        for i, ax in enumerate(self.grid.axes):
            dxi = ax[1] - ax[0]
            sl_p = _shift_index(self.values.ndim, 1 + i, +1)
            sl_m = _shift_index(self.values.ndim, 1 + i, -1)
            core = _shift_index(self.values.ndim, 1 + i, 0)
            fwd = self.values[sl_p] - self.values[core]
            bwd = self.values[core] - self.values[sl_m]
            mask[core] |= np.abs(fwd - bwd) > rel_threshold * scale * dxi / float(np.min(
                self.grid.box.widths))
        return mask

    # -- serialization ------------------------------------------------------

    def _header(self) -> dict:
        return {"n_x": list(self.grid.n_x), "n_t": self.grid.n_t,
                "t_end": self.grid.t_end, "cfl_safety": self.grid.cfl_safety,
                "box": [[float(lo), float(hi)] for lo, hi in
                        zip(self.grid.box.lo, self.grid.box.hi)],
                "label": self.label}

    def save(self, path) -> None:
        """Flat binary layout: one JSON header line, then C-order float64."""
        path = str(path)
        with open(path, "wb") as fh:
            fh.write(json.dumps(self._header(), sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.values, dtype=np.float64).tobytes())

    def save_csv(self, path) -> None:
        """CSV layout: commented JSON header, then rows t, x1..xd, value."""
        path = str(path)
        d = self.grid.dim
        mesh = self.grid.mesh.reshape(-1, d)
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(self._header(), sort_keys=True) + "\n")
            fh.write("t," + ",".join(f"x{i + 1}" for i in range(d)) + ",value\n")
            for k, t in enumerate(self.grid.times):
                vals = self.values[k].ravel()
                for pt, v in zip(mesh, vals):
                    coords = ",".join(repr(float(c)) for c in pt)
                    fh.write(f"{float(t)!r},{coords},{float(v)!r}\n")

    @classmethod
    def load(cls, path) -> "GridFn":
        with open(str(path), "rb") as fh:
            header = json.loads(fh.readline().decode())
            raw = fh.read()
        grid = _grid_from_header(header)
        values = np.frombuffer(raw, dtype=np.float64).reshape((grid.n_t + 1,) + grid.n_x).copy()
        return cls(grid=grid, values=values, label=header.get("label", ""))

    @classmethod
    def load_csv(cls, path) -> "GridFn":
        with open(str(path)) as fh:
            header = json.loads(fh.readline().lstrip("# ").strip())
            fh.readline()
            data = np.loadtxt(fh, delimiter=",")
        grid = _grid_from_header(header)
        values = data[:, -1].reshape((grid.n_t + 1,) + grid.n_x)
        return cls(grid=grid, values=values, label=header.get("label", ""))


def _grid_from_header(header: dict) -> Grid:
    return Grid(box=Box.from_pairs(header["box"]), n_x=tuple(header["n_x"]),
                n_t=int(header["n_t"]), t_end=float(header["t_end"]),
                cfl_safety=float(header.get("cfl_safety", 0.9)))


def _shift_index(ndim, axis, off):
    """Index tuple selecting the interior of `axis` shifted by off in {-1,0,1},
    full range on other axes except their interiors for spatial axes handled
    by the caller."""
    idx = [slice(None)] * ndim
    idx[axis] = slice(1 + off, (-1 + off) if (-1 + off) != 0 else None)
    return tuple(idx)


# ---------------------------------------------------------------------------
# the discrete sup-generator on one slice
# ---------------------------------------------------------------------------

class _Stencil:
    """Shifted interior views of one spatial slice, flattened."""

    def __init__(self, grid: Grid, w: np.ndarray):
        self.grid = grid
        d = grid.dim
        self.core = self._view(w, {})
        self.plus = [self._view(w, {i: +1}) for i in range(d)]
        self.minus = [self._view(w, {i: -1}) for i in range(d)]
        self.w = w

    def _view(self, w, offsets: dict):
        idx = []
        for ax in range(self.grid.dim):
            o = offsets.get(ax, 0)
            idx.append(slice(1 + o, (-1 + o) if (-1 + o) != 0 else None))
        return w[tuple(idx)].reshape(-1)

    def corner(self, i, j, si, sj):
        return self._view(self.w, {i: si, j: sj})


def _slice_generator(model: GameModel, grid: Grid, w: np.ndarray, t: float,
                     a_pts: np.ndarray, rescale: Rescaling | None,
                     collect_diag: bool = False):
    """sup_a of the discretized generator on the interior of one slice.

    Returns (H (n_interior,), info dict)."""
    d = grid.dim
    dx = grid.dx
    st = _Stencil(grid, w)
    x_int = grid.interior_mesh.reshape(-1, d)          # (Ni, d)
    xb = x_int[None, :, :]
    ab = a_pts[:, None, :]

    mu = model.eval_mu_x(t, xb, ab)                    # (n_a|1, Ni, d)
    sig = model.eval_sigma_x(t, xb, ab)                # (n_a|1, Ni, d, d)
    cov = np.einsum("...ik,...jk->...ij", sig, sig)

    # upwind drift
    drift = 0.0
    for i in range(d):
        mi = mu[..., i]
        fwd = (st.plus[i] - st.core) / dx[i]
        bwd = (st.core - st.minus[i]) / dx[i]
        drift = drift + np.maximum(mi, 0.0) * fwd + np.minimum(mi, 0.0) * bwd

    # central second differences + sign-split cross stencil
    diffusion = 0.0
    for i in range(d):
        second = (st.plus[i] - 2.0 * st.core + st.minus[i]) / dx[i] ** 2
        diffusion = diffusion + 0.5 * cov[..., i, i] * second
    dominance_failures = 0
    for i, j in combinations(range(d), 2):
        cij = cov[..., i, j]
        base = (2.0 * st.core - st.plus[i] - st.minus[i] - st.plus[j] - st.minus[j])
        pp = st.corner(i, j, +1, +1) + st.corner(i, j, -1, -1)
        pm = st.corner(i, j, +1, -1) + st.corner(i, j, -1, +1)
        scale = 1.0 / (2.0 * dx[i] * dx[j])
        diffusion = diffusion + np.maximum(cij, 0.0) * (pp + base) * scale \
            + np.minimum(cij, 0.0) * (-(pm + base)) * scale
        if collect_diag:
            lhs_i = cov[..., i, i] / dx[i] ** 2
            lhs_j = cov[..., j, j] / dx[j] ** 2
            need = np.abs(cij) / (dx[i] * dx[j])
            dominance_failures += int(np.count_nonzero((lhs_i < need) | (lhs_j < need)))

    # reduced drift of Y with the control eliminated at z = sigma_x Dw (central)
    grad = np.stack([(st.plus[i] - st.minus[i]) / (2.0 * dx[i]) for i in range(d)], axis=-1)
    z = np.einsum("...ij,...j->...i", sig, grad)
    y = st.core
    if rescale is None:
        muy, clamped = model.mu_y_hat(t, xb, y, z, ab)
        source = -muy
    else:
        c = rescale.c
        down = np.exp(-c * t)
        muy, clamped = model.mu_y_hat(t, xb, down * y, down * z, ab)
        source = -c * y - np.exp(c * t) * muy

    vals = source + drift + diffusion
    H = np.max(vals, axis=0) if vals.ndim > 1 else vals
    info = {"clamped": int(np.count_nonzero(clamped)),
            "dominance_failures": dominance_failures,
            "singular_sigma_x": int(np.count_nonzero(
                np.all(np.abs(sig) < 1e-14, axis=(-2, -1))))}
    return H, info


def _center_coef_min(model, grid, t, a_pts) -> float:
    """Smallest update weight on the center node over interior x adverse grid."""
    d, dx, dt = grid.dim, grid.dx, grid.dt
    x_int = grid.interior_mesh.reshape(-1, d)
    mu = model.eval_mu_x(t, x_int[None, :, :], a_pts[:, None, :])
    sig = model.eval_sigma_x(t, x_int[None, :, :], a_pts[:, None, :])
    cov = np.einsum("...ik,...jk->...ij", sig, sig)
    load = 0.0
    for i in range(d):
        load = load + np.abs(mu[..., i]) / dx[i] + cov[..., i, i] / dx[i] ** 2
    for i, j in combinations(range(d), 2):
        load = load - np.abs(cov[..., i, j]) / (dx[i] * dx[j])
    return float(np.min(1.0 - dt * load))


def solve_hjb(model: GameModel, grid: Grid, rescale: Rescaling | None = None,
              a_res=64) -> GridFn:
    """Backward explicit sweep from the terminal payoff.

    The terminal slice equals g on the nodes exactly; spatial boundary nodes
    stay frozen at the terminal payoff for all times.  With ``rescale``, the
    sweep runs on the rescaled problem (terminal e^{cT} g, rescaled
    sup-generator, boundary data e^{ct} g) and the returned surface is the
    unscaled e^{-ct} * (scaled solution) with terminal and boundary data
    restored exactly.
    """
    if rescale is not None and not rescale.monotone_verified:
        raise PreconditionError("rescaling is not monotonicity-verified")
    check_cfl(model, grid, a_res=a_res)
    t0 = time.perf_counter()
    a_pts = model.adverse_set_a.grid(a_res)
    n_t, dt = grid.n_t, grid.dt
    times = grid.times
    g_nodes = model.eval_g(grid.mesh)
    c = 0.0 if rescale is None else rescale.c

    vals = np.empty((n_t + 1,) + grid.n_x)
    vals[n_t] = g_nodes * (np.exp(c * grid.t_end) if rescale is not None else 1.0)
    interior = (slice(1, -1),) * grid.dim
    boundary_mask = np.ones(grid.n_x, dtype=bool)
    boundary_mask[interior] = False

    clamp_total = 0
    dom_total = 0
    singular_total = 0
    probe_steps = {0, n_t - 1, max(n_t // 2, 0)}
    min_center = np.inf
    for k in range(n_t - 1, -1, -1):
        t_hi = times[k + 1]
        H, info = _slice_generator(model, grid, vals[k + 1], t_hi, a_pts, rescale,
                                   collect_diag=(grid.dim > 1))
        clamp_total += info["clamped"]
        dom_total += info["dominance_failures"]
        singular_total += info["singular_sigma_x"]
        new = vals[k + 1].copy()
        new[interior] = vals[k + 1][interior] + dt * H.reshape(
            tuple(n - 2 for n in grid.n_x))
        if rescale is not None:
            new[boundary_mask] = g_nodes[boundary_mask] * np.exp(c * times[k])
        if not np.all(np.isfinite(new)):
            bad = np.argwhere(~np.isfinite(new))[0]
            raise SolveError(f"non-finite value at t={times[k]:.6g}, node index {tuple(bad)}")
        vals[k] = new
        if k in probe_steps:
            min_center = min(min_center, _center_coef_min(model, grid, t_hi, a_pts))

    if rescale is not None:
        for k in range(n_t + 1):
            vals[k] = vals[k] * np.exp(-c * times[k])
            vals[k][boundary_mask] = g_nodes[boundary_mask]
        vals[n_t] = g_nodes
    gf = GridFn(grid=grid, values=vals, label="hjb" if rescale is None else "hjb-rescaled")
    gf.meta.update({"a_res": a_res, "rescale_c": None if rescale is None else c,
                    "clamped_controls": clamp_total,
                    "dominance_failures": dom_total,
                    "singular_sigma_x_nodes": singular_total,
                    "min_center_coef": min_center,
                    "runtime_s": time.perf_counter() - t0})
    return gf


def step_once(model: GameModel, grid: Grid, w_slice: np.ndarray, t: float,
              a_res=64, rescale: Rescaling | None = None) -> np.ndarray:
    """One backward step from the slice at time t; boundary passes through.

    Exposed so monotonicity can be probed by direct perturbation."""
    a_pts = model.adverse_set_a.grid(a_res)
    H, _ = _slice_generator(model, grid, w_slice, t, a_pts, rescale)
    new = w_slice.copy()
    interior = (slice(1, -1),) * grid.dim
    new[interior] = w_slice[interior] + grid.dt * H.reshape(
        tuple(n - 2 for n in grid.n_x))
    return new


# ---------------------------------------------------------------------------
# residual and certification reports
# ---------------------------------------------------------------------------

def default_residual_tol(grid: Grid) -> float:
    return 10.0 * (grid.dt + float(np.max(grid.dx)))


@dataclass
class ResidualReport:
    """Sign pattern of the discrete residual w_t + sup-generator, with the
    solver's own stencils.

    residual <= tol everywhere  => discrete super-solution;
    residual >= -tol everywhere => discrete sub-solution."""
    max_abs: float
    l2: float
    tol: float
    n_pos_violations: int            # residual >  tol  (breaks super-solution)
    n_neg_violations: int            # residual < -tol  (breaks sub-solution)
    worst_node: dict | None
    per_slice_max: np.ndarray
    n_checked: int
    excluded: int = 0

    @property
    def is_supersolution(self) -> bool:
        return self.n_pos_violations == 0

    @property
    def is_subsolution(self) -> bool:
        return self.n_neg_violations == 0

    def summary(self) -> str:
        kind = ("super+sub (≈solution)" if self.is_supersolution and self.is_subsolution
                else "super-solution" if self.is_supersolution
                else "sub-solution" if self.is_subsolution else "neither")
        lines = [f"residual over {self.n_checked} interior nodes"
                 + (f" ({self.excluded} excluded)" if self.excluded else ""),
                 f"  max |residual| = {self.max_abs:.6g}, rms = {self.l2:.6g}, tol = {self.tol:.6g}",
                 f"  sign violations: {self.n_pos_violations} above tol, "
                 f"{self.n_neg_violations} below -tol  -> {kind}"]
        if self.worst_node:
            lines.append(f"  worst node: t={self.worst_node['t']:.6g}, "
                         f"x={self.worst_node['x']}, residual={self.worst_node['residual']:.6g}")
        return "\n".join(lines)


def residual(model: GameModel, surface: GridFn, a_res=64,
             tol: float | None = None, exclude_mask: np.ndarray | None = None,
             every: int = 1) -> ResidualReport:
    """Discrete residual phi_t + sup-generator at interior nodes, computed
    with the same stencils the solver uses (backward time difference).

    ``every`` > 1 checks every that-many time slices (subsampled audit)."""
    grid = surface.grid
    if not np.all(np.isfinite(surface.values)):
        raise PreconditionError("surface has non-finite values")
    tol = default_residual_tol(grid) if tol is None else tol
    a_pts = model.adverse_set_a.grid(a_res)
    dt = grid.dt
    interior_shape = tuple(n - 2 for n in grid.n_x)
    x_int = grid.interior_mesh.reshape(-1, grid.dim)

    max_abs, sumsq, n_checked, n_pos, n_neg, n_excl = 0.0, 0.0, 0, 0, 0, 0
    worst = None
    per_slice = []
    ks = range(1, grid.n_t + 1, max(1, int(every)))
    for k in ks:
        H, _ = _slice_generator(model, grid, surface.values[k], grid.times[k], a_pts, None)
        r = (surface.values[k] - surface.values[k - 1])[(slice(1, -1),) * grid.dim].reshape(-1) / dt \
            + H
        if exclude_mask is not None:
            keep = ~exclude_mask[k][(slice(1, -1),) * grid.dim].reshape(-1)
            n_excl += int(np.count_nonzero(~keep))
            r = r[keep]
            x_here = x_int[keep]
        else:
            x_here = x_int
        if r.size == 0:
            per_slice.append(0.0)
            continue
        a_max = float(np.max(np.abs(r)))
        per_slice.append(a_max)
        if a_max > max_abs:
            i = int(np.argmax(np.abs(r)))
            max_abs = a_max
            worst = {"t": float(grid.times[k]), "x": x_here[i], "residual": float(r[i])}
        sumsq += float(np.sum(r ** 2))
        n_checked += r.size
        n_pos += int(np.count_nonzero(r > tol))
        n_neg += int(np.count_nonzero(r < -tol))
    return ResidualReport(max_abs=max_abs, l2=np.sqrt(sumsq / max(n_checked, 1)),
                          tol=tol, n_pos_violations=n_pos, n_neg_violations=n_neg,
                          worst_node=worst, per_slice_max=np.asarray(per_slice),
                          n_checked=n_checked, excluded=n_excl)


# ---------------------------------------------------------------------------
# constructed super/sub-solutions and lattice operations
# ---------------------------------------------------------------------------

def classical_supersolution(model: GameModel, grid: Grid) -> GridFn:
    """Smooth upper barrier  phi(t, x) = -e^{lambda t} + N2  with
    lambda = 2 growth_l + 1 and N2 = e^{lambda T} + |g|_inf.

    Its terminal slice dominates g and its residual is <= 0 at interior nodes
    whenever the reduced drift is non-decreasing in y (any declared growth_l
    budget makes -lambda e^{lambda t} + L(1 + e^{lambda t}) <= 0)."""
    lam = 2.0 * model.growth_l + 1.0
    n2 = np.exp(lam * grid.t_end) + model.g_bound
    vals = np.broadcast_to((-np.exp(lam * grid.times) + n2)[(...,) + (None,) * grid.dim],
                           (grid.n_t + 1,) + grid.n_x).copy()
    return GridFn(grid=grid, values=vals, label="classical-supersolution",
                  meta={"lambda": lam, "n2": n2})


def constant_subsolution(model: GameModel, grid: Grid) -> GridFn:
    """Constant lower barrier m = nodewise minimum of g.

    The sub-solution property of a constant relies on a declared riskless
    control and a declared drift-to-volatility ratio bound; when either is
    missing the surface is still returned but flagged as not asserted."""
    m = float(np.min(model.eval_g(grid.mesh)))
    vals = np.full((grid.n_t + 1,) + grid.n_x, m)
    asserted = model.riskless_u is not None and model.drift_vol_ratio_bound is not None
    return GridFn(grid=grid, values=vals, label="constant-subsolution",
                  meta={"m": m, "subsolution_asserted": bool(asserted)})


def lattice_min(w1: GridFn, w2: GridFn) -> GridFn:
    if not w1.grid.same_as(w2.grid):
        raise PreconditionError("lattice operations need identical grids")
    return GridFn(grid=w1.grid, values=np.minimum(w1.values, w2.values),
                  label=f"min({w1.label or 'w1'},{w2.label or 'w2'})")


def lattice_max(w1: GridFn, w2: GridFn) -> GridFn:
    if not w1.grid.same_as(w2.grid):
        raise PreconditionError("lattice operations need identical grids")
    return GridFn(grid=w1.grid, values=np.maximum(w1.values, w2.values),
                  label=f"max({w1.label or 'w1'},{w2.label or 'w2'})")


def lattice_kink_mask(w1: GridFn, w2: GridFn) -> np.ndarray:
    """Nodes whose residual stencil straddles the min/max selector seam.

    Marked nodes are excluded from residual sign assertions after a lattice
    operation: the discrete stencil sees both branches there."""
    if not w1.grid.same_as(w2.grid):
        raise PreconditionError("lattice operations need identical grids")
    sel = w1.values <= w2.values
    grid = w1.grid
    mask = np.zeros(sel.shape, dtype=bool)
    core = (slice(None),) + (slice(1, -1),) * grid.dim

    def differs(shifted):
        return shifted != sel[core]

    # time neighbor (the backward difference at slice k reads slice k-1)
    mask_core = np.zeros_like(sel[core])
    prev = np.roll(sel, 1, axis=0)[core]
    mask_core |= differs(prev)
    for i in range(grid.dim):
        for off in (-1, +1):
            idx = [slice(None)]
            for ax in range(grid.dim):
                o = off if ax == i else 0
                idx.append(slice(1 + o, (-1 + o) if (-1 + o) != 0 else None))
            mask_core |= differs(sel[tuple(idx)])
    for i, j in combinations(range(grid.dim), 2):
        for oi in (-1, +1):
            for oj in (-1, +1):
                idx = [slice(None)]
                for ax in range(grid.dim):
                    o = oi if ax == i else (oj if ax == j else 0)
                    idx.append(slice(1 + o, (-1 + o) if (-1 + o) != 0 else None))
                mask_core |= differs(sel[tuple(idx)])
    mask[core] = mask_core
    mask[0] = False  # no residual is formed at the initial slice
    return mask


# ---------------------------------------------------------------------------
# pointwise jets and the comparison check
# ---------------------------------------------------------------------------

@dataclass
class JetReport:
    mode: str
    n_checked: int
    n_violations: int
    tol: float
    worst: dict | None

    @property
    def violation_fraction(self) -> float:
        return self.n_violations / self.n_checked if self.n_checked else np.nan

    def summary(self) -> str:
        out = (f"jet check ({self.mode}): {self.n_violations}/{self.n_checked} violations "
               f"(fraction {self.violation_fraction:.4f}, tol {self.tol:.4g})")
        if self.worst:
            out += (f"; worst -q-H = {self.worst['value']:.6g} at t={self.worst['t']:.4g}, "
                    f"x={self.worst['x']}")
        return out


def jet_check(model: GameModel, surface: GridFn, mode: str, n_points: int,
              seed: int, a_res=64, tol: float | None = None) -> JetReport:
    """Pointwise second-order Taylor-data test at random interior nodes.

    Fits (q, p, M) from the grid stencils (backward time difference, central
    space differences) and checks  -q - H(t, x, w, p, M) <= tol  in sub mode,
    >= -tol in super mode."""
    if mode not in ("sub", "super"):
        raise PreconditionError("mode must be 'sub' or 'super'")
    if not np.all(np.isfinite(surface.values)):
        raise PreconditionError("surface has non-finite values")
    grid = surface.grid
    tol = default_residual_tol(grid) if tol is None else tol
    rng = np.random.default_rng(seed)
    d = grid.dim
    ks = rng.integers(1, grid.n_t + 1, size=n_points)
    idxs = np.stack([rng.integers(1, grid.n_x[i] - 1, size=n_points) for i in range(d)],
                    axis=-1)
    dt, dx = grid.dt, grid.dx
    n_viol, worst, worst_val = 0, None, -np.inf
    for k, ij in zip(ks, idxs):
        here = (int(k),) + tuple(int(v) for v in ij)
        prev = (int(k) - 1,) + tuple(int(v) for v in ij)
        w = surface.values
        q = (w[here] - w[prev]) / dt
        p = np.empty(d)
        m = np.zeros((d, d))
        for i in range(d):
            up = list(here)
            dn = list(here)
            up[1 + i] += 1
            dn[1 + i] -= 1
            p[i] = (w[tuple(up)] - w[tuple(dn)]) / (2 * dx[i])
            m[i, i] = (w[tuple(up)] - 2 * w[here] + w[tuple(dn)]) / dx[i] ** 2
        for i, j in combinations(range(d), 2):
            pp = list(here); pp[1 + i] += 1; pp[1 + j] += 1
            mm = list(here); mm[1 + i] -= 1; mm[1 + j] -= 1
            pm = list(here); pm[1 + i] += 1; pm[1 + j] -= 1
            mp = list(here); mp[1 + i] -= 1; mp[1 + j] += 1
            cross = (w[tuple(pp)] + w[tuple(mm)] - w[tuple(pm)] - w[tuple(mp)]) / (
                4 * dx[i] * dx[j])
            m[i, j] = m[j, i] = cross
        x_here = grid.mesh[tuple(int(v) for v in ij)]
        t_here = grid.times[int(k)]
        hval = ham.h(model, t_here, x_here, float(w[here]), p, m, a_res=a_res).value
        val = -q - hval
        bad = (val > tol) if mode == "sub" else (val < -tol)
        score = val if mode == "sub" else -val
        if bad:
            n_viol += 1
        if score > worst_val:
            worst_val = score
            worst = {"t": float(t_here), "x": x_here, "value": float(val)}
    return JetReport(mode=mode, n_checked=int(n_points), n_violations=n_viol,
                     tol=tol, worst=worst)


@dataclass
class ComparisonReport:
    ordered: bool
    tol: float
    worst_gap: float
    worst_node: dict | None

    def summary(self) -> str:
        state = "ordered" if self.ordered else "ORDER VIOLATED"
        out = f"comparison: {state}, worst gap {self.worst_gap:.6g} (tol {self.tol:.6g})"
        if self.worst_node:
            out += f" at t={self.worst_node['t']:.6g}, x={self.worst_node['x']}"
        return out


def comparison_check(u_surface: GridFn, v_surface: GridFn,
                     tol: float | None = None) -> ComparisonReport:
    """Check u <= v + tol on all slices given terminal ordering.

    The terminal slices must already satisfy u(T,.) <= v(T,.) + tol, else the
    call is rejected: ordering at the horizon is the hypothesis that the
    check propagates backward."""
    if not u_surface.grid.same_as(v_surface.grid):
        raise PreconditionError("comparison needs identical grids")
    grid = u_surface.grid
    tol = default_residual_tol(grid) if tol is None else tol
    gap_T = u_surface.values[-1] - v_surface.values[-1]
    if np.max(gap_T) > tol:
        raise PreconditionError(
            f"terminal slices not ordered: max(u - v) at T is {np.max(gap_T):.6g} > tol {tol:.6g}")
    gap = u_surface.values - v_surface.values
    worst = float(np.max(gap))
    k, *ij = np.unravel_index(int(np.argmax(gap)), gap.shape)
    node = {"t": float(grid.times[k]), "x": grid.mesh[tuple(ij)]}
    return ComparisonReport(ordered=worst <= tol, tol=tol, worst_gap=worst,
                            worst_node=node)


def trusted_mask(model: GameModel, grid: Grid, n_std: float = 3.0, a_res=9) -> np.ndarray:
    """Interior region not yet polluted by the frozen boundary.

    A node (t, x) is trusted when its distance to the spatial boundary exceeds
    n_std * |sigma_x(t, x, .)|_max * sqrt(T - t): the diffusion propagates
    boundary influence inward by one stencil width per step, i.e. at the
    sqrt(dt) * |sigma_x| scale in the CFL regime."""
    a_pts = model.adverse_set_a.grid(a_res)
    nodes = grid.mesh.reshape(-1, grid.dim)
    dist = np.minimum(np.min(nodes - grid.box.lo, axis=-1),
                      np.min(grid.box.hi - nodes, axis=-1))
    out = np.zeros((grid.n_t + 1,) + grid.n_x, dtype=bool)
    for k, t in enumerate(grid.times):
        sig = model.eval_sigma_x(t, nodes[None, :, :], a_pts[:, None, :])
        smax = np.max(np.linalg.norm(sig, axis=(-2, -1)), axis=0)
        smax = np.broadcast_to(smax, (nodes.shape[0],))
        radius = n_std * smax * np.sqrt(max(grid.t_end - t, 0.0))
        out[k] = (dist >= radius).reshape(grid.n_x)
    return out


def slice0_max_diff(coarse: GridFn, fine: GridFn) -> float:
    """Max difference of the t=0 slices on the common (nested) nodes."""
    ratios = []
    for nc, nf in zip(coarse.grid.n_x, fine.grid.n_x):
        if (nf - 1) % (nc - 1) != 0:
            raise PreconditionError("grids are not nested")
        ratios.append((nf - 1) // (nc - 1))
    sl = tuple(slice(None, None, r) for r in ratios)
    return float(np.max(np.abs(coarse.values[0] - fine.values[0][sl])))
