"""Game models: coefficient fields, control sets, target payoff, and the
volatility-inversion map that eliminates the control from the drift.

A :class:`GameModel` bundles the controlled diffusion

    dX = mu_x(t, X, a) dt + sigma_x(t, X, a) dW
    dY = mu_y(t, X, Y, u, a) dt + sigma_y(t, X, Y, u, a) . dW

together with the truncated control box ``U``, the compact adverse box ``A``,
the bounded payoff ``g`` and the declared regularity constants.  Coefficient
fields must be pure functions and broadcast over a leading batch axis:
``t`` scalar or ``(...,)``, ``x`` of shape ``(..., d)``, ``y`` ``(...,)``,
``u`` ``(..., d_u)``, ``a`` ``(..., d_a)``.  A model is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import qmc


class EvaluationError(RuntimeError):
    """A coefficient returned a non-finite value or raised."""


class InversionError(RuntimeError):
    """Numerical inversion of sigma_y in u failed to converge."""

    def __init__(self, msg, best_residual=np.inf):
        super().__init__(msg)
        self.best_residual = best_residual


class SingularJacobianError(InversionError):
    """The Jacobian of sigma_y with respect to u is numerically singular."""


class PreconditionError(ValueError):
    """An operation was called outside its contract."""


class ConfigError(ValueError):
    """A model/run configuration failed to parse or resolve."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo_i, hi_i] in R^dim."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_pairs(cls, pairs) -> "Box":
        arr = np.atleast_2d(np.asarray(pairs, dtype=float))
        if arr.shape[-1] != 2:
            raise ConfigError(f"box must be a list of [lo, hi] pairs, got shape {arr.shape}")
        lo, hi = arr[:, 0].copy(), arr[:, 1].copy()
        if np.any(hi < lo):
            raise ConfigError(f"box has hi < lo: {pairs}")
        return cls(lo, hi)

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        self.lo.setflags(write=False)
        self.hi.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def is_empty(self) -> bool:
        return self.dim == 0

    def contains(self, pts, atol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all((pts >= self.lo - atol) & (pts <= self.hi + atol), axis=-1)

    def clip(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Clip points into the box; returns (clipped, was_clipped mask)."""
        pts = np.asarray(pts, dtype=float)
        clipped = np.clip(pts, self.lo, self.hi)
        return clipped, np.any(clipped != pts, axis=-1)

    def grid(self, res) -> np.ndarray:
        """Tensor grid with `res` points per axis, lexicographic row order.

        `res` may be an int or a per-axis sequence; endpoints are included
        (res == 1 yields the lower corner of that axis).
        """
        res = np.broadcast_to(np.asarray(res, dtype=int), (self.dim,))
        if np.any(res < 1):
            raise PreconditionError("grid resolution must be >= 1 per axis")
        axes = [np.linspace(self.lo[i], self.hi[i], res[i]) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def scale01(self, unit_pts: np.ndarray) -> np.ndarray:
        """Map points in [0,1]^dim into the box."""
        return self.lo + np.asarray(unit_pts) * self.widths


def refine_resolution(res) -> np.ndarray:
    """Midpoint-inserting refinement n -> 2n - 1, so the refined grid is a
    superset of the coarse one."""
    res = np.atleast_1d(np.asarray(res, dtype=int))
    return 2 * res - 1


@dataclass(frozen=True)
class GameModel:
    """Complete description of one stochastic target game on a truncated domain.

    ``u_hat`` is the measurable map with sigma_y(t, x, y, u_hat(t,x,y,z,a), a)
    = z; supply a closed form when available, otherwise leave ``None`` and a
    damped-Newton inversion (with 1-D bisection fallback) is used.  Controls
    returned by the inversion are clamped into ``control_set_u`` and the clamp
    is flagged to the caller.
    """

    mu_x: Callable
    sigma_x: Callable
    mu_y: Callable
    sigma_y: Callable
    g: Callable
    control_set_u: Box
    adverse_set_a: Box
    state_box: Box
    horizon: float
    lipschitz_k: float
    growth_l: float
    g_bound: float
    u_hat: Callable | None = None
    riskless_u: np.ndarray | None = None          # declared u with mu_y = sigma_y = 0
    drift_vol_ratio_bound: float | None = None    # declared bound of |mu_y|/|sigma_y| off {sigma_y=0}
    inversion_tol: float = 1e-10
    max_newton_iter: int = 50
    y_sample_range: tuple[float, float] | None = None
    integrability_p: float = 2.0                  # recorded only; no numerical role
    name: str = ""

    def __post_init__(self):
        if self.horizon <= 0:
            raise PreconditionError("horizon must be positive")
        if self.adverse_set_a.is_empty() or self.control_set_u.is_empty():
            raise PreconditionError("control and adverse sets must be nonempty")
        if self.riskless_u is not None:
            object.__setattr__(self, "riskless_u", np.atleast_1d(np.asarray(self.riskless_u, float)))

    @property
    def dim_x(self) -> int:
        return self.state_box.dim

    @property
    def dim_u(self) -> int:
        return self.control_set_u.dim

    @property
    def dim_a(self) -> int:
        return self.adverse_set_a.dim

    @property
    def y_range(self) -> tuple[float, float]:
        if self.y_sample_range is not None:
            return self.y_sample_range
        b = 2.0 * (self.g_bound + 1.0)
        return (-b, b)

    # -- coefficient evaluation with finite checks -------------------------

    def eval_mu_x(self, t, x, a):
        return _checked(self.mu_x(t, x, a), "mu_x", t)

    def eval_sigma_x(self, t, x, a):
        return _checked(self.sigma_x(t, x, a), "sigma_x", t)

    def eval_mu_y(self, t, x, y, u, a):
        return _checked(self.mu_y(t, x, y, u, a), "mu_y", t)

    def eval_sigma_y(self, t, x, y, u, a):
        return _checked(self.sigma_y(t, x, y, u, a), "sigma_y", t)

    def eval_g(self, x):
        return _checked(self.g(x), "g", None)

    # -- inversion ----------------------------------------------------------

    def invert(self, t, x, y, z, a) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized u_hat: returns (u, clamped mask), u inside the control box.

        Uses the closed form when declared, numerical inversion otherwise.
        The unclamped solution satisfies |sigma_y(t,x,y,u,a) - z| <= inversion_tol.
        """
        if self.u_hat is not None:
            u = np.asarray(self.u_hat(t, x, y, z, a), dtype=float)
            u = np.atleast_1d(u) if u.ndim == 0 else u
            if u.shape[-1] != self.dim_u:
                u = u[..., None] if self.dim_u == 1 else u
            return self.control_set_u.clip(u)
        u = _newton_invert(self, t, x, y, z, a)
        return self.control_set_u.clip(u)

    def mu_y_hat(self, t, x, y, z, a) -> tuple[np.ndarray, np.ndarray]:
        """Drift of Y with the control eliminated: mu_y at u = u_hat(t,x,y,z,a).

        Returns (values, clamped mask)."""
        u, clamped = self.invert(t, x, y, z, a)
        return self.eval_mu_y(t, x, y, u, a), clamped


def _checked(val, name, t):
    val = np.asarray(val, dtype=float)
    if not np.all(np.isfinite(val)):
        idx = np.argwhere(~np.isfinite(val))
        loc = tuple(idx[0]) if idx.size else ()
        raise EvaluationError(f"{name} returned a non-finite value at batch index {loc}"
                              + (f", t={t}" if t is not None else ""))
    return val


# ---------------------------------------------------------------------------
# numerical inversion of u -> sigma_y(t, x, y, u, a)
# ---------------------------------------------------------------------------

def _newton_invert(model: GameModel, t, x, y, z, a) -> np.ndarray:
    """Damped Newton on f(u) = sigma_y(t,x,y,u,a) - z over a batch of points.

    Requires dim_u == dim_x (square Jacobian).  Falls back to bisection in 1-D
    when Newton stalls and a sign change brackets the root.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    batch = np.broadcast_shapes(
        np.shape(y),
        x.shape[:-1] if x.ndim > 1 else (),
        z.shape[:-1] if z.ndim > 1 else (),
        a.shape[:-1] if a.ndim > 1 else ())
    d_u, d = model.dim_u, model.dim_x
    if d_u != d:
        raise InversionError(f"numerical inversion needs dim_u == dim_x, got {d_u} != {d}")

    u = np.broadcast_to(model.control_set_u.midpoint, batch + (d_u,)).copy()
    h = 1e-6 * np.maximum(1.0, np.abs(model.control_set_u.widths))

    def resid(uc):
        return model.eval_sigma_y(t, x, y, uc, a) - z

    f = resid(u)
    fnorm = np.linalg.norm(np.atleast_1d(f), axis=-1)
    best = fnorm.copy()
    for _ in range(model.max_newton_iter):
        if np.all(fnorm <= model.inversion_tol):
            return u
        # finite-difference Jacobian, one column per control axis
        cols = []
        for j in range(d_u):
            du = np.zeros(d_u)
            du[j] = h[j]
            cols.append((resid(u + du) - f) / h[j])
        jac = np.stack(cols, axis=-1)  # (..., d, d_u)
        det = np.linalg.det(jac)
        if np.any(np.abs(det) < 1e-14 * np.prod(h)):
            if d_u == 1:
                return _bisect_invert(model, t, x, y, z, a, u, fnorm)
            raise SingularJacobianError("sigma_y Jacobian in u is singular",
                                        best_residual=float(np.max(best)))
        step = np.linalg.solve(jac, -f[..., None])[..., 0]
        lam = np.ones(batch if batch else ())
        for _ in range(30):
            cand = u + lam[..., None] * step
            fc = resid(cand)
            fcn = np.linalg.norm(np.atleast_1d(fc), axis=-1)
            improved = fcn <= (1.0 - 1e-4 * lam) * fnorm
            if np.all(improved):
                break
            lam = np.where(improved, lam, lam * 0.5)
        u = u + lam[..., None] * step
        f = resid(u)
        fnorm = np.linalg.norm(np.atleast_1d(f), axis=-1)
        best = np.minimum(best, fnorm)
    if np.all(fnorm <= model.inversion_tol):
        return u
    if d_u == 1:
        return _bisect_invert(model, t, x, y, z, a, u, fnorm)
    raise InversionError(
        f"Newton did not reach tol={model.inversion_tol:g} in {model.max_newton_iter} iters",
        best_residual=float(np.max(fnorm)))


def _bisect_invert(model, t, x, y, z, a, u_guess, fnorm):
    """1-D bisection fallback on [u_lo, u_hi]; keeps converged Newton entries."""
    lo = np.full_like(u_guess, model.control_set_u.lo[0])
    hi = np.full_like(u_guess, model.control_set_u.hi[0])

    def g1(uc):
        r = model.eval_sigma_y(t, x, y, uc, a) - np.asarray(z, dtype=float)
        return np.atleast_1d(r)[..., 0] if r.ndim else r

    flo, fhi = g1(lo), g1(hi)
    bracket = flo * fhi <= 0
    if not np.all(bracket | (fnorm <= model.inversion_tol)):
        raise InversionError("no sign change on the control box; inversion failed",
                             best_residual=float(np.max(fnorm)))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = g1(mid)
        take_hi = (fm * flo) <= 0
        hi = np.where(take_hi[..., None] if hi.ndim > fm.ndim else take_hi, mid, hi)
        lo = np.where(take_hi[..., None] if lo.ndim > fm.ndim else take_hi, lo, mid)
        flo = np.where(take_hi, flo, fm)
        if np.max(hi - lo) < 1e-15 * max(1.0, float(np.max(np.abs(hi)))):
            break
    mid = 0.5 * (lo + hi)
    out = np.where((fnorm <= model.inversion_tol)[..., None] if mid.ndim > fnorm.ndim
                   else (fnorm <= model.inversion_tol), u_guess, mid)
    res = np.abs(g1(out))
    if np.any(res > max(model.inversion_tol, 1e-12)):
        raise InversionError("bisection did not reach tolerance",
                             best_residual=float(np.max(res)))
    return out


@dataclass
class Inversion:
    """Result of a single volatility inversion."""
    u: np.ndarray
    residual: float
    clamped: bool


def invert_sigma_y(model: GameModel, t, x, y, z, a) -> Inversion:
    """Solve sigma_y(t, x, y, u, a) = z for the control u.

    Uses the model's closed form when given, damped Newton otherwise.  The
    result is clamped into the control box with a flag; for unclamped results
    the re-substitution residual is at most ``model.inversion_tol``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if not model.state_box.contains(x, atol=1e-12):
        raise PreconditionError(f"x={x} outside the declared state box")
    if not model.adverse_set_a.contains(a, atol=1e-12):
        raise PreconditionError(f"a={a} outside the adverse box")
    u, clamped = model.invert(t, x, y, z, a)
    resid = float(np.linalg.norm(model.eval_sigma_y(t, x, y, u, a) - z))
    return Inversion(u=u, residual=resid, clamped=bool(np.any(clamped)))


# ---------------------------------------------------------------------------
# sampled validation of the standing regularity conditions
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    status: str                    # 'pass' | 'fail' | 'not-checked'
    measured: float = np.nan
    bound: float | None = None
    worst_point: dict | None = None
    note: str = ""


@dataclass
class AssumptionReport:
    """Sampling-based falsification report for the model's standing conditions.

    A 'pass' never proves a condition; it only records that it was not
    falsified on the sampled points.  A 'fail' carries a concrete witness.
    """
    checks: dict[str, CheckResult]
    n_samples: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks.values())

    def summary(self) -> str:
        lines = [f"assumption checks on {self.n_samples} quasi-random samples (seed={self.seed})"]
        for name, c in self.checks.items():
            if c.status == "pass":
                msg = f"  {name}: not falsified on {self.n_samples} samples"
                if np.isfinite(c.measured):
                    msg += f" (measured {c.measured:.6g}"
                    msg += f" <= declared {c.bound:.6g})" if c.bound is not None else ")"
            elif c.status == "fail":
                msg = f"  {name}: FAIL, measured {c.measured:.6g}"
                if c.bound is not None:
                    msg += f" > declared {c.bound:.6g}"
                if c.worst_point:
                    msg += f", witness {_fmt_point(c.worst_point)}"
            else:
                msg = f"  {name}: not checked ({c.note})"
            if c.note and c.status == "pass":
                msg += f" [{c.note}]"
            lines.append(msg)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "seed": self.seed,
            "passed": self.passed,
            "checks": {
                k: {"status": c.status, "measured": _jsonf(c.measured),
                    "bound": _jsonf(c.bound), "worst_point": _jsonable(c.worst_point),
                    "note": c.note}
                for k, c in self.checks.items()
            },
        }


def _fmt_point(pt: dict) -> str:
    return "{" + ", ".join(f"{k}={np.round(v, 6)}" for k, v in pt.items()) + "}"


def _jsonf(v):
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else str(v)


def _jsonable(pt):
    if pt is None:
        return None
    return {k: (np.asarray(v).tolist() if np.ndim(v) else float(v)) for k, v in pt.items()}


def _sobol(dim: int, n: int, seed: int) -> np.ndarray:
    eng = qmc.Sobol(d=dim, scramble=True, seed=seed)
    m = max(1, int(np.ceil(np.log2(max(n, 2)))))
    return eng.random_base2(m)[:n]


def validate_assumptions(model: GameModel, n_samples: int, seed: int) -> AssumptionReport:
    """Falsification pass over the model's declared regularity conditions.

    Each checkable inequality is evaluated on ``n_samples`` scrambled-Sobol
    points of the declared domains; the report carries the measured empirical
    constants (e.g. the worst observed Lipschitz ratio) compared against the
    declared ``lipschitz_k`` / ``growth_l``.
    """
    if n_samples < 1:
        raise PreconditionError("n_samples must be >= 1")
    if model.state_box.is_empty() or model.adverse_set_a.is_empty():
        raise PreconditionError("sampling domain is empty")

    d, du, da = model.dim_x, model.dim_u, model.dim_a
    T = model.horizon
    ylo, yhi = model.y_range

    # columns: t, x, y, u | t', x', y', u' | a, u_z
    dims = 1 + d + 1 + du + 1 + d + 1 + du + da + du
    pts = _sobol(dims, n_samples, seed)
    c = _ColumnCursor(pts)
    t = c.take(1)[:, 0] * T
    x = model.state_box.scale01(c.take(d))
    y = ylo + c.take(1)[:, 0] * (yhi - ylo)
    u = model.control_set_u.scale01(c.take(du))
    t2 = c.take(1)[:, 0] * T
    x2 = model.state_box.scale01(c.take(d))
    y2 = ylo + c.take(1)[:, 0] * (yhi - ylo)
    u2 = model.control_set_u.scale01(c.take(du))
    a = model.adverse_set_a.scale01(c.take(da))
    u_z = model.control_set_u.scale01(c.take(du))

    checks: dict[str, CheckResult] = {}
    checks["coefficient_regularity"] = _check_coefficient_regularity(
        model, t, x, y, u, t2, x2, y2, u2, a)
    checks["inversion_map"] = _check_inversion(model, t, x, y, u_z, a)
    checks["reduced_drift_regularity"] = _check_reduced_drift(
        model, t, x, y, t2, x2, y2, u_z, u2, a)
    checks["drift_to_vol_growth"] = _check_relative_growth(model, t, x, y, u, a)
    checks["zero_control"] = _check_zero_control(model, t, x, y, a)
    checks["drift_vol_ratio"] = _check_drift_vol_ratio(model, t, x, y, u, a)
    return AssumptionReport(checks=checks, n_samples=n_samples, seed=seed)


class _ColumnCursor:
    def __init__(self, pts):
        self.pts = pts
        self.i = 0

    def take(self, k):
        out = self.pts[:, self.i:self.i + k]
        self.i += k
        return out


def _witness(i, **arrays) -> dict:
    return {k: (np.asarray(v)[i] if np.ndim(v) else v) for k, v in arrays.items()}


def _check_coefficient_regularity(model, t, x, y, u, t2, x2, y2, u2, a) -> CheckResult:
    K = model.lipschitz_k
    try:
        mux, sigx = model.eval_mu_x(t, x, a), model.eval_sigma_x(t, x, a)
        mux2, sigx2 = model.eval_mu_x(t2, x2, a), model.eval_sigma_x(t2, x2, a)
        muy = model.eval_mu_y(t, x, y, u, a)
        muy2 = model.eval_mu_y(t, x, y2, u, a)
        sigy = model.eval_sigma_y(t, x, y, u, a)
        sigy2 = model.eval_sigma_y(t, x, y2, u, a)
    except EvaluationError as exc:
        return CheckResult("fail", note=f"coefficient evaluation failed: {exc}")

    normx = np.linalg.norm(sigx, axis=(-2, -1))
    bound_x = np.linalg.norm(mux, axis=-1) + normx                      # <= K
    dist_tx = np.abs(t - t2) + np.linalg.norm(x - x2, axis=-1)
    lip_x = (np.linalg.norm(mux - mux2, axis=-1)
             + np.linalg.norm(sigx - sigx2, axis=(-2, -1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_x = np.where(dist_tx > 1e-12, lip_x / dist_tx, 0.0)
    dy = np.abs(y - y2)
    lip_y = np.abs(muy - muy2) + np.linalg.norm(sigy - sigy2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_y = np.where(dy > 1e-12, lip_y / dy, 0.0)
    growth = (np.abs(muy) + np.linalg.norm(sigy, axis=-1)) / (
        1.0 + np.linalg.norm(u, axis=-1) + np.abs(y))

    families = {"|mu_x|+|sigma_x| bound": bound_x, "(t,x)-Lipschitz ratio": ratio_x,
                "y-Lipschitz ratio": ratio_y, "growth ratio": growth}
    worst_val, worst_name, worst_i = -np.inf, "", 0
    for fname, vals in families.items():
        i = int(np.argmax(vals))
        if vals[i] > worst_val:
            worst_val, worst_name, worst_i = float(vals[i]), fname, i
    ok = worst_val <= K * (1 + 1e-9)
    return CheckResult(
        "pass" if ok else "fail", measured=worst_val, bound=K,
        worst_point=None if ok else _witness(worst_i, t=t, x=x, y=y, u=u, a=a,
                                             t2=t2, x2=x2),
        note=f"binding family: {worst_name}")


def _check_inversion(model, t, x, y, u_z, a) -> CheckResult:
    # z sampled from the image of sigma_y so a solution exists
    try:
        z = model.eval_sigma_y(t, x, y, u_z, a)
        u_rec, clamped = model.invert(t, x, y, z, a)
        resid = np.linalg.norm(model.eval_sigma_y(t, x, y, u_rec, a) - z, axis=-1)
    except (EvaluationError, InversionError) as exc:
        return CheckResult("fail", note=f"inversion failed: {exc}")
    free = ~clamped
    n_cl = int(np.count_nonzero(clamped))
    if not np.any(free):
        return CheckResult("not-checked", note="all sampled inversions clamped")
    measured = float(np.max(resid[free]))
    i = int(np.argmax(np.where(free, resid, -np.inf)))
    ok = measured <= model.inversion_tol * (1 + 1e-6) + 1e-12
    note = f"{n_cl} clamped samples excluded" if n_cl else ""
    return CheckResult("pass" if ok else "fail", measured=measured,
                       bound=model.inversion_tol,
                       worst_point=None if ok else _witness(i, t=t, x=x, y=y, z=z, a=a),
                       note=note)


def _check_reduced_drift(model, t, x, y, t2, x2, y2, u_z, u2, a) -> CheckResult:
    L = model.growth_l
    try:
        z1 = model.eval_sigma_y(t, x, y, u_z, a)
        z2 = model.eval_sigma_y(t2, x2, y2, u2, a)
        m1, _ = model.mu_y_hat(t, x, y, z1, a)
        m2, _ = model.mu_y_hat(t2, x2, y2, z2, a)
    except (EvaluationError, InversionError) as exc:
        return CheckResult("fail", note=f"reduced drift evaluation failed: {exc}")
    dist = (np.abs(t - t2) + np.linalg.norm(x - x2, axis=-1)
            + np.abs(y - y2) + np.linalg.norm(z1 - z2, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        lip = np.where(dist > 1e-9, np.abs(m1 - m2) / dist, 0.0)
    growth = np.abs(m1) / (1.0 + np.abs(y) + np.linalg.norm(z1, axis=-1))
    measured = float(max(np.max(lip), np.max(growth)))
    which = "Lipschitz ratio" if np.max(lip) >= np.max(growth) else "growth ratio"
    i = int(np.argmax(lip)) if which == "Lipschitz ratio" else int(np.argmax(growth))
    ok = measured <= L * (1 + 1e-9) + 1e-12
    return CheckResult("pass" if ok else "fail", measured=measured, bound=L,
                       worst_point=None if ok else _witness(i, t=t, x=x, y=y, z=z1, a=a),
                       note=f"binding family: {which}")


def _check_relative_growth(model, t, x, y, u, a) -> CheckResult:
    try:
        muy = model.eval_mu_y(t, x, y, u, a)
        sigy = model.eval_sigma_y(t, x, y, u, a)
    except EvaluationError as exc:
        return CheckResult("fail", note=f"evaluation failed: {exc}")
    ratio = np.abs(muy) / (1.0 + np.linalg.norm(sigy, axis=-1))
    measured = float(np.max(ratio))
    if not np.isfinite(measured):
        i = int(np.argmax(~np.isfinite(ratio)))
        return CheckResult("fail", measured=measured,
                           worst_point=_witness(i, t=t, x=x, y=y, u=u, a=a))
    return CheckResult("pass", measured=measured, note="finite on samples")


def _check_zero_control(model, t, x, y, a) -> CheckResult:
    if model.riskless_u is None:
        return CheckResult("not-checked", note="no riskless control declared")
    u0 = np.broadcast_to(model.riskless_u, (t.size, model.dim_u))
    try:
        muy = model.eval_mu_y(t, x, y, u0, a)
        sigy = model.eval_sigma_y(t, x, y, u0, a)
    except EvaluationError as exc:
        return CheckResult("fail", note=f"evaluation failed: {exc}")
    worst = np.abs(muy) + np.linalg.norm(sigy, axis=-1)
    measured = float(np.max(worst))
    ok = measured <= 1e-12
    i = int(np.argmax(worst))
    return CheckResult("pass" if ok else "fail", measured=measured, bound=0.0,
                       worst_point=None if ok else _witness(i, t=t, x=x, y=y, a=a))


def _check_drift_vol_ratio(model, t, x, y, u, a) -> CheckResult:
    try:
        muy = model.eval_mu_y(t, x, y, u, a)
        sigy = model.eval_sigma_y(t, x, y, u, a)
    except EvaluationError as exc:
        return CheckResult("fail", note=f"evaluation failed: {exc}")
    nz = np.linalg.norm(sigy, axis=-1) > 1e-12
    if not np.any(nz):
        return CheckResult("not-checked", note="sigma_y vanished on every sample")
    ratio = np.where(nz, np.abs(muy) / np.where(nz, np.linalg.norm(sigy, axis=-1), 1.0), 0.0)
    measured = float(np.max(ratio))
    bound = model.drift_vol_ratio_bound
    ok = np.isfinite(measured) and (bound is None or measured <= bound * (1 + 1e-9))
    i = int(np.argmax(ratio))
    return CheckResult("pass" if ok else "fail", measured=measured, bound=bound,
                       worst_point=None if ok else _witness(i, t=t, x=x, y=y, u=u, a=a),
                       note="" if bound is not None else "no declared bound; recorded only")


# ---------------------------------------------------------------------------
# registered model families
# ---------------------------------------------------------------------------

def uncertain_volatility(vol_lo: float = 0.1, vol_hi: float = 0.3,
                         strike: float = 100.0, x_hi: float = 400.0,
                         x_lo: float = 0.0, rate: float = 0.0,
                         horizon: float = 1.0, u_lo: float = -5.0,
                         u_hi: float = 5.0, payoff: str = "capped_call") -> GameModel:
    """1-D hedging game where nature picks the volatility from [vol_lo, vol_hi].

    dX = rate*X dt + a*X dW,   dY = rate*Y dt + u*a*X dW  (u = shares held).
    The payoff is a call capped at the domain edge, so it stays bounded on the
    truncated box.
    """
    r = float(rate)
    cap = x_hi - strike

    def mu_x(t, x, a):
        return r * x

    def sigma_x(t, x, a):
        return (a * x)[..., None]            # (..., 1, 1)

    def mu_y(t, x, y, u, a):
        return r * y

    def sigma_y(t, x, y, u, a):
        return u * a * x

    def u_hat(t, x, y, z, a):
        ax = a * x
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(np.abs(ax) > 0.0, z / np.where(np.abs(ax) > 0.0, ax, 1.0), 0.0)
        return u

    if payoff == "capped_call":
        def g(x):
            return np.minimum(np.maximum(x[..., 0] - strike, 0.0), cap)
        g_bound = max(cap, 0.0)
    elif payoff == "digital":
        def g(x):
            return (x[..., 0] >= strike).astype(float)
        g_bound = 1.0
    else:
        raise ConfigError(f"unknown payoff '{payoff}' for uncertain_volatility")

    k = max(vol_hi * max(abs(x_hi), abs(x_lo)), vol_hi, r * max(abs(x_hi), abs(x_lo)), r, 1e-12)
    return GameModel(
        mu_x=mu_x, sigma_x=sigma_x, mu_y=mu_y, sigma_y=sigma_y, g=g, u_hat=u_hat,
        control_set_u=Box.from_pairs([[u_lo, u_hi]]),
        adverse_set_a=Box.from_pairs([[vol_lo, vol_hi]]),
        state_box=Box.from_pairs([[x_lo, x_hi]]),
        horizon=horizon, lipschitz_k=k, growth_l=max(r, 0.0), g_bound=g_bound,
        riskless_u=np.zeros(1) if r == 0.0 else None,
        drift_vol_ratio_bound=0.0 if r == 0.0 else None,
        name="uncertain_volatility")


def constant_coefficients(vol: float = 0.5, x_lo: float = -4.0, x_hi: float = 4.0,
                          horizon: float = 1.0, wavenumber: float = 1.0,
                          u_lo: float = -5.0, u_hi: float = 5.0) -> GameModel:
    """1-D heat-equation model: sigma_x constant, sigma_y = u, mu's zero.

    g = cos(wavenumber * x) gives the closed form
    w(t, x) = exp(-0.5 vol^2 k^2 (T - t)) cos(k x).
    """
    s0, k = float(vol), float(wavenumber)

    def mu_x(t, x, a):
        return np.zeros_like(x)

    def sigma_x(t, x, a):
        return np.broadcast_to(s0, np.shape(x))[..., None] * np.ones(1)

    def mu_y(t, x, y, u, a):
        return np.zeros_like(np.asarray(y, dtype=float))

    def sigma_y(t, x, y, u, a):
        return np.asarray(u, dtype=float)

    def u_hat(t, x, y, z, a):
        return np.asarray(z, dtype=float)

    def g(x):
        return np.cos(k * x[..., 0])

    return GameModel(
        mu_x=mu_x, sigma_x=sigma_x, mu_y=mu_y, sigma_y=sigma_y, g=g, u_hat=u_hat,
        control_set_u=Box.from_pairs([[u_lo, u_hi]]),
        adverse_set_a=Box.from_pairs([[0.0, 1.0]]),
        state_box=Box.from_pairs([[x_lo, x_hi]]),
        horizon=horizon, lipschitz_k=max(s0, 1.0), growth_l=0.0, g_bound=1.0,
        riskless_u=np.zeros(1), drift_vol_ratio_bound=0.0,
        name="constant_coefficients")


def controlled_drift(drift_gain: float = 1.0, vol: float = 0.5,
                     y_decay: float = 0.5, x_lo: float = -4.0, x_hi: float = 4.0,
                     a_lo: float = -1.0, a_hi: float = 1.0, horizon: float = 1.0,
                     u_lo: float = -5.0, u_hi: float = 5.0) -> GameModel:
    """1-D game where nature steers the drift of X and Y bleeds at rate y_decay.

    dX = drift_gain*a dt + vol dW,  dY = y_decay*Y dt + u dW.  The reduced
    drift is y_decay*y, increasing in y, so the sup-generator is strictly
    decreasing in its y argument when y_decay > 0.
    """
    b, s0, kap = float(drift_gain), float(vol), float(y_decay)

    def mu_x(t, x, a):
        return b * a

    def sigma_x(t, x, a):
        return np.broadcast_to(s0, np.shape(x))[..., None] * np.ones(1)

    def mu_y(t, x, y, u, a):
        return kap * np.asarray(y, dtype=float)

    def sigma_y(t, x, y, u, a):
        return np.asarray(u, dtype=float)

    def u_hat(t, x, y, z, a):
        return np.asarray(z, dtype=float)

    def g(x):
        return np.tanh(x[..., 0])

    return GameModel(
        mu_x=mu_x, sigma_x=sigma_x, mu_y=mu_y, sigma_y=sigma_y, g=g, u_hat=u_hat,
        control_set_u=Box.from_pairs([[u_lo, u_hi]]),
        adverse_set_a=Box.from_pairs([[a_lo, a_hi]]),
        state_box=Box.from_pairs([[x_lo, x_hi]]),
        horizon=horizon,
        lipschitz_k=max(b * max(abs(a_lo), abs(a_hi)), s0, kap, 1.0),
        growth_l=max(kap, 1e-12), g_bound=1.0,
        riskless_u=None, drift_vol_ratio_bound=None,
        name="controlled_drift")


def zero_model(g_const: float = 7.0, x_lo: float = -1.0, x_hi: float = 1.0,
               horizon: float = 1.0) -> GameModel:
    """Everything zero except sigma_y = u; constant payoff."""

    def zeros_x(t, x, a):
        return np.zeros_like(x)

    def sigma_x(t, x, a):
        return np.zeros(np.shape(x) + (1,)) if np.ndim(x) else np.zeros((1, 1))

    def mu_y(t, x, y, u, a):
        return np.zeros_like(np.asarray(y, dtype=float))

    def sigma_y(t, x, y, u, a):
        return np.asarray(u, dtype=float)

    def u_hat(t, x, y, z, a):
        return np.asarray(z, dtype=float)

    def g(x):
        return np.full(np.shape(x)[:-1], float(g_const))

    return GameModel(
        mu_x=zeros_x, sigma_x=sigma_x, mu_y=mu_y, sigma_y=sigma_y, g=g, u_hat=u_hat,
        control_set_u=Box.from_pairs([[-1.0, 1.0]]),
        adverse_set_a=Box.from_pairs([[0.0, 1.0]]),
        state_box=Box.from_pairs([[x_lo, x_hi]]),
        horizon=horizon, lipschitz_k=1.0, growth_l=1e-12, g_bound=abs(g_const),
        riskless_u=np.zeros(1), drift_vol_ratio_bound=0.0,
        name="zero_model")


MODEL_REGISTRY: dict[str, Callable[..., GameModel]] = {
    "uncertain_volatility": uncertain_volatility,
    "constant_coefficients": constant_coefficients,
    "controlled_drift": controlled_drift,
    "zero_model": zero_model,
}


def model_from_dict(spec: dict) -> GameModel:
    """Build a registered model from {'kind': name, 'params': {...}}."""
    if "kind" not in spec:
        raise ConfigError("model spec missing field 'kind'")
    kind = spec["kind"]
    if kind not in MODEL_REGISTRY:
        raise ConfigError(f"unknown coefficient family '{kind}' in field 'model.kind'; "
                          f"registered: {sorted(MODEL_REGISTRY)}")
    params = dict(spec.get("params", {}))
    try:
        return MODEL_REGISTRY[kind](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model '{kind}': {exc}") from exc


def load_model(path) -> GameModel:
    """Load a model from a YAML file holding {'model': {'kind', 'params'}} or
    the bare {'kind', 'params'} mapping."""
    import yaml
    try:
        with open(str(path)) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"model file parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("model file must hold a mapping")
    return model_from_dict(raw.get("model", raw))
