"""Feedback strategies synthesized from a value surface, stopping rules, and
pathwise concatenation.

A synthesized strategy emits, at each step,

    u_k = u_hat(t_k, X_k, Y_k, sigma_x(t_k, X_k, a_k) . Dw(t_k, X_k), a_k)

where Dw is the central-difference gradient of the surface, interpolated
multilinearly in (t, x).  The control at step k is a deterministic function
of (t_k, X_k, Y_k, a_k) only, so replaying two adversary paths that agree up
to step s reproduces identical controls up to step s.  The companion budget
process driven by this rule satisfies the same Euler recursion as the
simulated Y, so the two coincide pathwise; the simulator feeds its own Y back
into ``control``.

By default the control observes the adverse action of the same step
(simultaneous-move discretization); ``observe_delay=True`` switches to the
strictly causal convention u_k = f(t_k, X_k, Y_k, a_{k-1}).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GameModel, PreconditionError
from .pde import GridFn


class StrategyProtocol:
    """Duck-typed interface: start(n_paths) -> state; control(state, t, x, y, a)."""

    observe_delay: bool = False

    def start(self, n_paths: int):
        return None

    def control(self, state, t, x, y, a):
        raise NotImplementedError


@dataclass(frozen=True)
class Strategy(StrategyProtocol):
    """Feedback rule driven by the gradient of a value surface."""

    surface: GridFn
    model: GameModel
    label: str = "feedback"
    observe_delay: bool = False
    meta: dict = field(default_factory=dict)

    def start(self, n_paths: int):
        return None

    def gradient(self, t, x, with_flag: bool = False):
        return self.surface.gradient(t, x, with_flag=with_flag)

    def control(self, state, t, x, y, a):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        grad, out_of_box = self.surface.gradient(t, x, with_flag=True)
        sig = self.model.eval_sigma_x(t, x, a)
        z = np.einsum("...ij,...j->...i", sig, grad)
        u, clamped = self.model.invert(t, x, np.asarray(y, dtype=float), z, a)
        return u, np.asarray(clamped | out_of_box)


@dataclass(frozen=True)
class ConstantStrategy(StrategyProtocol):
    """Emit a fixed control regardless of the state."""

    u0: np.ndarray
    label: str = "constant"
    observe_delay: bool = False

    def __post_init__(self):
        object.__setattr__(self, "u0", np.atleast_1d(np.asarray(self.u0, dtype=float)))

    def start(self, n_paths: int):
        return None

    def control(self, state, t, x, y, a):
        n = np.atleast_2d(np.asarray(x, dtype=float)).shape[0]
        return (np.broadcast_to(self.u0, (n, self.u0.size)).copy(),
                np.zeros(n, dtype=bool))


def synthesize(surface: GridFn, model: GameModel, observe_delay: bool = False,
               label: str | None = None) -> Strategy:
    """Build the feedback strategy from a value surface.

    The surface grid must live inside the model's truncated state box and
    share its horizon.  Gradient kink nodes (where central differencing is a
    subgradient selection) are counted into ``meta['kink_nodes']``.
    """
    grid = surface.grid
    if not np.isclose(grid.t_end, model.horizon):
        raise PreconditionError("surface horizon differs from the model horizon")
    if np.any(grid.box.lo < model.state_box.lo - 1e-12) or \
       np.any(grid.box.hi > model.state_box.hi + 1e-12):
        raise PreconditionError("surface grid box exceeds the model state box")
    kinks = int(np.count_nonzero(surface.kink_mask()))
    return Strategy(surface=surface, model=model,
                    label=label or f"feedback[{surface.label or 'surface'}]",
                    observe_delay=observe_delay,
                    meta={"kink_nodes": kinks, "clamp_policy": "clip-into-U-and-flag"})


# ---------------------------------------------------------------------------
# stopping rules, evaluated from the path prefix only
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StopFamily:
    """Pathwise stopping rule: the earliest of the enabled components.

    * ``fixed_time``      - constant time,
    * ``exit_box``        - first time X leaves the given spatial box,
    * ``deviation``       - first time |Y - w(t, X)| >= deviation_delta for
                            the given reference surface.

    Triggered-or-not at step k depends on (t_k, X_k, Y_k) only, so the rule
    is non-anticipating in the discrete sense.  Paths that never trigger stop
    at the horizon.
    """
    fixed_time: float | None = None
    exit_box: object | None = None            # model.Box
    deviation_surface: GridFn | None = None
    deviation_delta: float | None = None
    label: str = "stop"

    def __post_init__(self):
        if (self.deviation_delta is None) != (self.deviation_surface is None):
            raise PreconditionError("deviation rule needs both a surface and a delta")
        if self.fixed_time is None and self.exit_box is None and self.deviation_delta is None:
            raise PreconditionError("stop family has no enabled component")

    def hit_now(self, t, x, y) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        hit = np.zeros(n, dtype=bool)
        if self.fixed_time is not None:
            hit |= bool(t >= self.fixed_time - 1e-12)
        if self.exit_box is not None:
            hit |= ~self.exit_box.contains(x)
        if self.deviation_delta is not None:
            w = self.deviation_surface.interp(t, x)
            hit |= np.abs(np.asarray(y, dtype=float) - w) >= self.deviation_delta
        return hit


@dataclass(frozen=True)
class ConcatStrategy(StrategyProtocol):
    """Emit ``base``'s control before the stop rule triggers, ``after``'s
    control from the trigger step onward."""

    base: StrategyProtocol
    switch: StopFamily
    after: StrategyProtocol
    label: str = "concat"

    @property
    def observe_delay(self) -> bool:  # type: ignore[override]
        return bool(getattr(self.base, "observe_delay", False))

    def start(self, n_paths: int):
        return {"hit": np.zeros(n_paths, dtype=bool),
                "theta": np.full(n_paths, np.nan),
                "base": self.base.start(n_paths),
                "after": self.after.start(n_paths)}

    def control(self, state, t, x, y, a):
        newly = ~state["hit"] & self.switch.hit_now(t, x, y)
        state["theta"][newly] = t
        state["hit"] |= newly
        u_b, c_b = self.base.control(state["base"], t, x, y, a)
        u_a, c_a = self.after.control(state["after"], t, x, y, a)
        hit = state["hit"]
        return (np.where(hit[:, None], u_a, u_b), np.where(hit, c_a, c_b))


def concat(base: StrategyProtocol, switch: StopFamily,
           after: StrategyProtocol) -> ConcatStrategy:
    """Pathwise concatenation of two strategies at a stopping rule."""
    return ConcatStrategy(base=base, switch=switch, after=after,
                          label=f"{getattr(base, 'label', 'base')}"
                                f"->({switch.label})->{getattr(after, 'label', 'after')}")
