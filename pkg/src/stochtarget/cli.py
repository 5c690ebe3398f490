"""Batch front-end: load a run configuration, execute the pipeline
(validate -> scale -> solve -> synthesize -> certify), and emit artifacts
with a hash manifest.

One config file is one reproducible experiment: every seed is explicit, all
artifacts are deterministic, and rerunning the same config produces
byte-identical artifact hashes.  Subcommands:

    stochtarget run <config>
    stochtarget study <config> --levels N
    stochtarget validate <config>

The environment variable STOCHTARGET_THREADS sets the worker-thread count
for the Monte-Carlo stages.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import norm

from . import hamiltonian as ham
from . import pde, sim
from .model import ConfigError, GameModel, PreconditionError, model_from_dict, \
    validate_assumptions
from .strategy import StopFamily, synthesize


@dataclass
class RunConfig:
    """Parsed experiment description; see configs/ for the schema by example."""
    model_spec: dict
    grid: dict
    a_res: int
    rescale: bool
    validate: dict
    report_point: dict
    jobs: list
    acceptance: dict
    output_dir: str
    oracle: dict | None = None
    residual_every: int = 0
    study: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        for req in ("model", "grid", "output_dir"):
            if req not in raw:
                raise ConfigError(f"config missing required field '{req}'")
        jobs = raw.get("jobs", [])
        for i, job in enumerate(jobs):
            if "seed" not in job:
                raise ConfigError(f"jobs[{i}] missing explicit 'seed' "
                                  "(wall-clock defaults are not allowed)")
            if "kind" not in job:
                raise ConfigError(f"jobs[{i}] missing 'kind'")
        val = raw.get("validate", {"n_samples": 512, "seed": 0})
        if "seed" not in val:
            raise ConfigError("validate section missing explicit 'seed'")
        return cls(model_spec=raw["model"], grid=dict(raw["grid"]),
                   a_res=int(raw.get("a_res", 64)), rescale=bool(raw.get("rescale", False)),
                   validate=val, report_point=raw.get("report_point", {}),
                   jobs=jobs, acceptance=raw.get("acceptance", {}),
                   output_dir=raw["output_dir"], oracle=raw.get("oracle"),
                   residual_every=int(raw.get("residual_every", 0)),
                   study=raw.get("study", {}))


def load_config(path) -> RunConfig:
    try:
        with open(str(path)) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"config parse error{loc}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# closed-form oracles for error reporting
# ---------------------------------------------------------------------------

def make_oracle(spec: dict, model: GameModel):
    """Returns oracle(t, x (n, d)) -> values, from a registered closed form."""
    kind = spec.get("kind")
    params = spec.get("params", {})
    if kind == "black_scholes":
        K = float(params["strike"])
        sig = float(params["sigma"])
        r = float(params.get("rate", 0.0))
        T = model.horizon

        def oracle(t, x):
            s = np.asarray(x, dtype=float)[..., 0]
            tau = T - t
            out = np.maximum(s - K, 0.0)
            if tau <= 0:
                return out
            pos = s > 0
            sq = sig * np.sqrt(tau)
            d1 = (np.log(s[pos] / K) + (r + 0.5 * sig ** 2) * tau) / sq
            d2 = d1 - sq
            out[pos] = s[pos] * norm.cdf(d1) - K * np.exp(-r * tau) * norm.cdf(d2)
            out[~pos] = 0.0
            return out
        return oracle
    if kind == "heat_cosine":
        s0 = float(params["vol"])
        k = float(params.get("wavenumber", 1.0))
        T = model.horizon

        def oracle(t, x):
            return np.exp(-0.5 * s0 ** 2 * k ** 2 * (T - t)) * np.cos(
                k * np.asarray(x, dtype=float)[..., 0])
        return oracle
    if kind == "constant":
        v = float(params["value"])

        def oracle(t, x):
            return np.full(np.asarray(x).shape[:-1], v)
        return oracle
    raise ConfigError(f"unknown oracle kind '{kind}' in field 'oracle.kind'")


def oracle_max_node_error(surface: pde.GridFn, oracle) -> float:
    """max over all space-time nodes of |surface - oracle|."""
    grid = surface.grid
    nodes = grid.mesh.reshape(-1, grid.dim)
    worst = 0.0
    for k, t in enumerate(grid.times):
        diff = np.abs(surface.values[k].reshape(-1) - oracle(float(t), nodes))
        worst = max(worst, float(np.max(diff)))
    return worst


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

class StageFailure(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.cause = exc


def _build_grid(model: GameModel, cfg: RunConfig) -> pde.Grid:
    gspec = cfg.grid
    n_x = gspec.get("n_x", 101)
    safety = float(gspec.get("cfl_safety", 0.9))
    n_t = int(gspec.get("n_t", 1))
    if gspec.get("auto_cfl", True):
        return pde.make_grid(model, n_x=n_x, n_t_min=n_t, a_res=cfg.a_res,
                             cfl_safety=safety)
    grid = pde.Grid(box=model.state_box, n_x=tuple(np.atleast_1d(n_x)), n_t=n_t,
                    t_end=model.horizon, cfl_safety=safety)
    pde.check_cfl(model, grid, a_res=cfg.a_res)
    return grid


def _adversary(name: str, model: GameModel, surface) -> sim.AdversaryPolicy:
    if name == "constant_hi":
        return sim.AdversaryPolicy.constant(model.adverse_set_a.hi)
    if name == "constant_lo":
        return sim.AdversaryPolicy.constant(model.adverse_set_a.lo)
    if name == "constant_mid":
        return sim.AdversaryPolicy.constant(model.adverse_set_a.midpoint)
    if name == "iid_uniform":
        return sim.AdversaryPolicy.iid_uniform()
    if name == "piecewise":
        return sim.AdversaryPolicy.piecewise()
    if name == "greedy":
        return sim.AdversaryPolicy.greedy(surface)
    raise ConfigError(f"unknown adversary '{name}' in job field 'adversaries'")


def _stop_from_spec(spec: dict, surface, model) -> StopFamily:
    if not spec:
        return StopFamily(fixed_time=model.horizon, label="horizon")
    if "fixed_time" in spec:
        return StopFamily(fixed_time=float(spec["fixed_time"]),
                          label=f"t>={spec['fixed_time']}")
    if spec.get("exit_trusted", False):
        mask0 = pde.trusted_mask(model, surface.grid,
                                 n_std=float(spec.get("n_std", 3.0)))[0]
        lo, hi = _mask_box(surface.grid, mask0)
        from .model import Box
        return StopFamily(exit_box=Box(lo, hi), label="exit-trusted")
    if "exit_box" in spec:
        from .model import Box
        return StopFamily(exit_box=Box.from_pairs(spec["exit_box"]), label="exit-box")
    if "deviation_delta" in spec:
        return StopFamily(deviation_surface=surface,
                          deviation_delta=float(spec["deviation_delta"]),
                          label="deviation")
    raise ConfigError(f"cannot build a stopping rule from {spec}")


def _mask_box(grid: pde.Grid, mask0: np.ndarray):
    """Bounding box of the trusted region at t=0, per axis."""
    lo = grid.box.lo.copy()
    hi = grid.box.hi.copy()
    for ax in range(grid.dim):
        axis_any = mask0.any(axis=tuple(i for i in range(grid.dim) if i != ax))
        idx = np.nonzero(axis_any)[0]
        if idx.size:
            lo[ax] = grid.axes[ax][idx[0]]
            hi[ax] = grid.axes[ax][idx[-1]]
    return lo, hi


def _report_point(cfg: RunConfig, model: GameModel):
    t0 = float(cfg.report_point.get("t", 0.0))
    x0 = np.atleast_1d(np.asarray(cfg.report_point.get(
        "x", model.state_box.midpoint), dtype=float))
    return t0, x0


def run(cfg: RunConfig, echo=print) -> int:
    """Execute the pipeline; returns the exit status (nonzero iff a declared
    acceptance threshold fails)."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}
    accept: dict[str, dict] = {}

    def stage(name, fn):
        try:
            return fn()
        except (ConfigError, PreconditionError, pde.CflError) as exc:
            raise StageFailure(name, exc) from exc

    model = stage("model", lambda: model_from_dict(cfg.model_spec))
    t0, x0 = _report_point(cfg, model)

    # validate
    report = stage("validate", lambda: validate_assumptions(
        model, int(cfg.validate["n_samples"]), int(cfg.validate["seed"])))
    artifacts["assumptions.txt"] = _write_text(out / "assumptions.txt", report.summary())
    artifacts["assumptions.json"] = _write_text(
        out / "assumptions.json", json.dumps(report.to_dict(), indent=2, sort_keys=True,
                                             default=_np_json))
    if "assumptions_pass" in cfg.acceptance:
        accept["assumptions_pass"] = {
            "required": bool(cfg.acceptance["assumptions_pass"]),
            "observed": report.passed,
            "ok": report.passed or not cfg.acceptance["assumptions_pass"]}

    # scale
    rescale = None
    if cfg.rescale:
        rescale = stage("scale", lambda: ham.select_scaling(
            model, samples=int(cfg.validate["n_samples"]),
            seed=int(cfg.validate["seed"])))
        echo(f"[scale] c = {rescale.c}, verified = {rescale.monotone_verified}")

    # solve
    grid = stage("grid", lambda: _build_grid(model, cfg))
    echo(f"[grid] n_x={grid.n_x}, n_t={grid.n_t}, dt={grid.dt:.3g}")
    surface = stage("solve", lambda: pde.solve_hjb(model, grid, rescale=rescale,
                                                   a_res=cfg.a_res))
    surface.save(out / "surface.stgrid")
    artifacts["surface.stgrid"] = out / "surface.stgrid"
    _write_slice_csv(out / "surface_t0.csv", surface)
    artifacts["surface_t0.csv"] = out / "surface_t0.csv"
    v0 = float(surface.interp(t0, x0[None])[0])
    echo(f"[solve] value at (t={t0}, x={x0.tolist()}) = {v0:.6f}")

    oracle = None
    if cfg.oracle:
        oracle = stage("oracle", lambda: make_oracle(cfg.oracle, model))
        ref = float(oracle(t0, x0[None])[0])
        rel = abs(v0 - ref) / max(abs(ref), 1e-300)
        echo(f"[oracle] reference {ref:.6f}, relative error {rel:.2e}")
        if "oracle_rel_err_max" in cfg.acceptance:
            bound = float(cfg.acceptance["oracle_rel_err_max"])
            accept["oracle_rel_err_max"] = {"required": bound, "observed": rel,
                                            "ok": rel <= bound}

    # residual audit
    if cfg.residual_every:
        rep = stage("residual", lambda: pde.residual(model, surface, a_res=cfg.a_res,
                                                     every=cfg.residual_every))
        artifacts["residual.txt"] = _write_text(out / "residual.txt", rep.summary())
        if "residual_max_abs" in cfg.acceptance:
            bound = float(cfg.acceptance["residual_max_abs"])
            accept["residual_max_abs"] = {"required": bound, "observed": rep.max_abs,
                                          "ok": rep.max_abs <= bound}

    # synthesize
    strat = stage("synthesize", lambda: synthesize(surface, model))
    artifacts["strategy.txt"] = _write_text(
        out / "strategy.txt",
        "\n".join([f"label: {strat.label}",
                   f"grid: n_x={grid.n_x}, n_t={grid.n_t}",
                   f"observe_delay: {strat.observe_delay}",
                   *(f"{k}: {v}" for k, v in sorted(strat.meta.items()))]))

    # certification jobs; certificates carry the config hash for replay
    cfg_hash = hashlib.sha256(
        json.dumps({"model": cfg.model_spec, "grid": cfg.grid, "a_res": cfg.a_res,
                    "rescale": cfg.rescale, "jobs": cfg.jobs},
                   sort_keys=True, default=_np_json).encode()).hexdigest()
    for i, job in enumerate(cfg.jobs):
        rep = stage(f"certify[{i}:{job['kind']}]",
                    lambda job=job: _run_job(job, model, surface, strat, t0, x0, v0))
        rep.params["config_hash"] = cfg_hash
        base = f"cert_{i}_{job['kind']}"
        artifacts[base + ".txt"] = _write_text(out / (base + ".txt"), rep.to_text())
        rep.write_per_path_csv(out / (base + ".csv"))
        artifacts[base + ".csv"] = out / (base + ".csv")
        _evaluate_job_acceptance(job, rep, cfg, accept, i)
        echo(f"[certify {job['kind']}] " + (rep.rows[0].get("adversary", "")
                                            if rep.rows else "(no rows)"))

    status = 0 if all(v["ok"] for v in accept.values()) else 1
    manifest = {"artifacts": {name: _sha256(p) for name, p in sorted(artifacts.items())},
                "acceptance": accept, "exit_status": status,
                "value_at_report_point": v0,
                "grid": {"n_x": list(grid.n_x), "n_t": grid.n_t}}
    _write_text(out / "manifest.json",
                json.dumps(manifest, indent=2, sort_keys=True, default=_np_json))
    echo(f"[summary] acceptance: "
         + (", ".join(f"{k}={'ok' if v['ok'] else 'FAIL'}" for k, v in accept.items())
            or "(none declared)"))
    return status


def _run_job(job: dict, model, surface, strat, t0, x0, v0) -> sim.CertReport:
    kind = job["kind"]
    seed = int(job["seed"])
    n_paths = int(job.get("n_paths", 1000))
    n_steps = int(job.get("n_steps", 400))
    advs = [_adversary(a, model, surface)
            for a in job.get("adversaries", ["constant_hi", "iid_uniform",
                                             "piecewise", "greedy"])]
    y0 = v0 + float(job.get("y_offset", 0.0))
    if kind == "target":
        return sim.certify_target(model, strat, advs, t0, x0, y0, n_paths,
                                  n_steps, seed,
                                  slack_tol=job.get("slack_tol"))
    if kind == "dpp1":
        stop = _stop_from_spec(job.get("stop", {}), surface, model)
        return sim.check_dpp1(model, surface, strat, advs, stop, n_paths, seed,
                              t0, x0, y0, n_steps=n_steps,
                              dpp_tol=job.get("dpp_tol"))
    if kind == "dpp2":
        stop = _stop_from_spec(job.get("stop", {}), surface, model)
        return sim.check_dpp2(model, surface, [strat], advs, stop, n_paths, seed,
                              t0, x0, y0, n_steps=n_steps)
    if kind == "supersol":
        return sim.check_supersolution_statistically(
            model, surface, n_paths, seed, adversaries=advs, n_steps=n_steps)
    if kind == "subsol":
        return sim.check_subsolution_statistically(
            model, surface, n_paths, seed, adversaries=advs, n_steps=n_steps)
    raise ConfigError(f"unknown job kind '{kind}'")


def _evaluate_job_acceptance(job, rep: sim.CertReport, cfg, accept, i):
    if job["kind"] == "target" and "target_success_min" in cfg.acceptance:
        bound = float(cfg.acceptance["target_success_min"])
        worst = rep.worst_row
        frac = worst["success_frac"] if worst else np.nan
        accept[f"target_success_min[{i}]"] = {
            "required": bound, "observed": frac, "ok": bool(frac >= bound)}
    if job["kind"] == "dpp1" and "dpp1_violation_max" in cfg.acceptance:
        bound = float(cfg.acceptance["dpp1_violation_max"])
        worst = max((r["violation_frac"] for r in rep.rows), default=np.nan)
        accept[f"dpp1_violation_max[{i}]"] = {
            "required": bound, "observed": worst, "ok": bool(worst <= bound)}
    if job["kind"] == "dpp2" and cfg.acceptance.get("dpp2_positive", False):
        ok = all(any(r["wilson_lo"] > 0 for r in rep.rows
                     if r["strategy"] == s)
                 for s in {r["strategy"] for r in rep.rows})
        accept[f"dpp2_positive[{i}]"] = {"required": True, "observed": ok, "ok": ok}


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

def convergence_study(cfg: RunConfig, levels: int, echo=print) -> list[dict]:
    """Re-solve at dyadically refined grids; returns one row per level with
    error-vs-oracle (when configured) and successive-difference norms."""
    if levels < 2:
        raise PreconditionError("need levels >= 2")
    model = model_from_dict(cfg.model_spec)
    t0, x0 = _report_point(cfg, model)
    base_nx = np.atleast_1d(np.asarray(cfg.grid.get("n_x", 101), dtype=int))
    base_nt = int(cfg.grid.get("n_t", 1))
    max_node_steps = float(cfg.study.get("max_node_steps", 5e8))
    oracle = make_oracle(cfg.oracle, model) if cfg.oracle else None

    rows, surfaces = [], []
    for lvl in range(levels):
        shrink = 2 ** (levels - 1 - lvl)
        if np.any((base_nx - 1) % shrink != 0):
            raise PreconditionError(
                f"n_x - 1 = {base_nx - 1} not divisible by {shrink}; "
                "choose n_x = k*2^(levels-1) + 1 for nested refinement")
        n_x = (base_nx - 1) // shrink + 1
        n_t_min = max(1, base_nt // shrink)
        grid = pde.make_grid(model, n_x=tuple(n_x), n_t_min=n_t_min, a_res=cfg.a_res,
                             cfl_safety=float(cfg.grid.get("cfl_safety", 0.9)))
        node_steps = grid.n_t * int(np.prod(grid.n_x))
        if node_steps > max_node_steps:
            raise PreconditionError(
                f"level {lvl} needs {node_steps:.3g} node-steps "
                f"> cap {max_node_steps:.3g} (study.max_node_steps)")
        surface = pde.solve_hjb(model, grid, a_res=cfg.a_res)
        v0 = float(surface.interp(t0, x0[None])[0])
        row = {"level": lvl, "n_x": int(np.max(n_x)), "n_t": grid.n_t,
               "value_at_point": v0}
        if oracle is not None:
            ref = float(oracle(t0, x0[None])[0])
            row["oracle_err_point"] = abs(v0 - ref)
            row["oracle_err_max_node"] = oracle_max_node_error(surface, oracle)
        if surfaces:
            row["succ_diff_slice0"] = pde.slice0_max_diff(surfaces[-1], surface)
        surfaces.append(surface)
        rows.append(row)
        echo(f"[study] level {lvl}: n_x={row['n_x']}, n_t={row['n_t']}, "
             f"value={v0:.6f}")

    for i in range(1, len(rows)):
        if "oracle_err_max_node" in rows[i]:
            e0, e1 = rows[i - 1]["oracle_err_max_node"], rows[i]["oracle_err_max_node"]
            rows[i]["order_oracle"] = float(np.log2(e0 / e1)) if e0 > 0 and e1 > 0 else np.nan
        if i >= 2 and "succ_diff_slice0" in rows[i]:
            d0, d1 = rows[i - 1]["succ_diff_slice0"], rows[i]["succ_diff_slice0"]
            rows[i]["order_successive"] = float(np.log2(d0 / d1)) if d0 > 0 and d1 > 0 else np.nan
    return rows


def write_study_csv(rows: list[dict], path) -> None:
    keys = sorted({k for r in rows for k in r})
    with open(str(path), "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[k]) if isinstance(r.get(k), float)
                              else str(r.get(k, "")) for k in keys) + "\n")


# ---------------------------------------------------------------------------
# artifact helpers and entry point
# ---------------------------------------------------------------------------

def _write_text(path: Path, text: str) -> Path:
    path.write_text(text + ("\n" if not text.endswith("\n") else ""))
    return path


def _write_slice_csv(path: Path, surface: pde.GridFn) -> None:
    grid = surface.grid
    mesh = grid.mesh.reshape(-1, grid.dim)
    with open(str(path), "w") as fh:
        fh.write(",".join(f"x{i + 1}" for i in range(grid.dim)) + ",value\n")
        for pt, v in zip(mesh, surface.values[0].reshape(-1)):
            fh.write(",".join(repr(float(c)) for c in pt) + f",{float(v)!r}\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _np_json(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stochtarget",
                                     description="HJB solve + certification pipeline "
                                                 "for stochastic target games")
    subs = parser.add_subparsers(dest="command", required=True)
    p_run = subs.add_parser("run", help="full pipeline from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="override output directory")
    p_study = subs.add_parser("study", help="dyadic-refinement convergence study")
    p_study.add_argument("config")
    p_study.add_argument("--levels", type=int, default=3)
    p_study.add_argument("--out", help="override output directory")
    p_val = subs.add_parser("validate", help="assumption checks only")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if getattr(args, "out", None):
            cfg.output_dir = args.out
        if args.command == "run":
            return run(cfg)
        if args.command == "study":
            rows = convergence_study(cfg, args.levels)
            out = Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_study_csv(rows, out / "study.csv")
            print(f"[study] wrote {out / 'study.csv'}")
            return 0
        model = model_from_dict(cfg.model_spec)
        report = validate_assumptions(model, int(cfg.validate["n_samples"]),
                                      int(cfg.validate["seed"]))
        print(report.summary())
        return 0 if report.passed else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except pde.CflError as exc:
        print(f"grid rejected: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(str(exc), file=sys.stderr)
        return 2 if isinstance(exc.cause, ConfigError) else 3


if __name__ == "__main__":
    sys.exit(main())
