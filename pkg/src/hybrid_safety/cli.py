"""Command-line front end.

Subcommands::

    hybrid-safety fit-indicator --iq 30 --out runs/
    hybrid-safety solve    --backend finite --delta-x 0.1 --out runs/
    hybrid-safety sweep    --backend gaussian --iq 30 --out runs/
    hybrid-safety simulate --policy runs/policy_finite.json --trials 10000 --out runs/
    hybrid-safety bounds   --policy runs/policy_finite.json

Without ``--config`` the bundled thermostat benchmark is used. Every artifact
carries the run's config hash and seed. CSV bodies contain no timing, so
re-running a command with the same settings reproduces them byte for byte;
wall-clock times go to the JSON sidecars.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bounds import BoundReport, assemble_report
from .errors import ContractViolation
from .finite import FiniteBackend
from .gm import DEFAULT_CAP, GaussianBackend, RbfIndicator, fit_indicator_rbf
from .model import PodtshsModel, load_model, thermostat_config_path
from .pbvi import (
    BeliefSet,
    Policy,
    build_obs_grid,
    config_hash,
    hausdorff_delta_sigma,
    sample_belief_sets,
    solve,
)
from .simulate import estimate_to_csv, run_closed_loop

SWEEP_COLUMNS = ("mu0", "value", "action", "abstraction_bound", "observation_bound",
                 "pbvi_proxy_bound", "heuristic_total")


@dataclass
class RunConfig:
    """Settings shared by every subcommand; see ``--help`` for meanings."""

    config: str
    backend: str = "finite"
    delta_x: float = 0.1
    delta_y: float = 0.5
    epsilon: float = 1e-3
    obs_box: Optional[list] = None
    iq: int = 30
    cap: int = DEFAULT_CAP
    beliefs: int = 40
    probes: int = 40
    trials: int = 10000
    seed: int = 0
    horizon: Optional[int] = None

    def validate(self) -> None:
        if self.backend not in ("finite", "gaussian"):
            raise ContractViolation(f"unknown backend {self.backend!r}")
        for name in ("delta_x", "delta_y"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"--{name.replace('_', '-')} must be positive")
        if not 0 < self.epsilon < 1:
            raise ContractViolation("--epsilon must lie in (0, 1)")
        for name in ("iq", "cap", "beliefs", "trials"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"--{name} must be >= 1")
        if self.probes < 0:
            raise ContractViolation("--probes must be >= 0")
        if self.horizon is not None and self.horizon < 0:
            raise ContractViolation("--horizon must be >= 0")

    def solver_fields(self, model_hash: str) -> dict:
        """The settings that determine a solved policy (seed excluded)."""
        keys = ["backend", "delta_y", "epsilon", "obs_box", "beliefs", "horizon"]
        keys += ["delta_x"] if self.backend == "finite" else ["iq", "cap"]
        d = {k: getattr(self, k) for k in keys}
        d["model_hash"] = model_hash
        return d


# ----------------------------------------------------------------- helpers


def _load_model(cfg: RunConfig) -> tuple[PodtshsModel, str]:
    """Load the model, fill ``obs_box`` from the config file, and return its hash."""
    path = Path(cfg.config)
    if not path.is_file():
        raise ContractViolation(f"config file not found: {path}")
    model = load_model(path)
    if cfg.obs_box is None:
        doc = json.loads(path.read_text())
        if "obs_box" in doc:
            cfg.obs_box = [float(v) for v in np.ravel(doc["obs_box"])]
    model_hash = model.content_hash()
    if cfg.horizon is not None:
        model = model.with_initial(horizon=cfg.horizon)
    return model, model_hash


def _fit(model: PodtshsModel, cfg: RunConfig) -> RbfIndicator:
    return fit_indicator_rbf(model, cfg.iq)


def make_backend(model: PodtshsModel, cfg: RunConfig, rbf: Optional[RbfIndicator] = None):
    obs = build_obs_grid(model, cfg.delta_y, cfg.epsilon, box=cfg.obs_box)
    if cfg.backend == "finite":
        return FiniteBackend(model, cfg.delta_x, obs)
    return GaussianBackend(model, rbf if rbf is not None else _fit(model, cfg), obs, cap=cfg.cap)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text)
    return p


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


@dataclass
class SolvedRun:
    model: PodtshsModel
    backend: object
    policy: Policy
    beliefs: BeliefSet
    value: float
    action: int
    chash: str
    seconds: float


def solve_run(cfg: RunConfig) -> SolvedRun:
    model, mhash = _load_model(cfg)
    chash = config_hash(cfg.solver_fields(mhash))
    t0 = time.perf_counter()
    backend = make_backend(model, cfg)
    beliefs = sample_belief_sets(model, backend, cfg.beliefs, cfg.seed)
    res = solve(model, backend, beliefs, seed=cfg.seed)
    seconds = time.perf_counter() - t0
    res.policy.meta.update({
        "config_hash": chash,
        "model_hash": mhash,
        "seed": cfg.seed,
        "run": cfg.solver_fields(mhash),
        "value": res.value,
        "action": res.action,
    })
    if cfg.backend == "gaussian":
        res.policy.meta["rbf"] = backend.rbf.to_json()
    return SolvedRun(model, backend, res.policy, beliefs, res.value, res.action, chash, seconds)


def load_policy_run(cfg: RunConfig, path: str) -> SolvedRun:
    """Rebuild the backend a policy file was solved with and check it against ``--config``."""
    p = Path(path)
    if not p.is_file():
        raise ContractViolation(f"policy file not found: {p}")
    doc = json.loads(p.read_text())
    meta = doc.get("meta", {})
    model, mhash = _load_model(cfg)
    if meta.get("model_hash") != mhash:
        raise ContractViolation(
            f"policy was solved for model {meta.get('model_hash')!r} but --config has hash {mhash!r}"
        )
    run = meta["run"]
    for k, v in run.items():
        if k != "model_hash":
            setattr(cfg, k, v)
    cfg.seed = int(meta["seed"])
    if cfg.horizon is not None:
        model = model.with_initial(horizon=cfg.horizon)
    rbf = None
    if cfg.backend == "gaussian":
        rbf = RbfIndicator.from_json(meta["rbf"], model.n_modes, model.dim)
    backend = make_backend(model, cfg, rbf)
    policy = Policy.from_json(doc, backend)
    return SolvedRun(model, backend, policy, None, float(meta["value"]), int(meta["action"]),
                     meta["config_hash"], 0.0)


def bound_report(run: SolvedRun, cfg: RunConfig) -> BoundReport:
    if run.beliefs is None:
        run.beliefs = sample_belief_sets(run.model, run.backend, cfg.beliefs, cfg.seed)
    proxy = None
    if cfg.probes > 0:
        probe = sample_belief_sets(run.model, run.backend, cfg.probes, cfg.seed + 1)
        proxy = hausdorff_delta_sigma(run.beliefs, probe, run.backend.belief_distance)
    return assemble_report(run.model, run.backend, run.policy, run.beliefs, run.value, proxy)


def action_flip(mu0s: Sequence[float], actions: Sequence[int]) -> Optional[float]:
    """First sweep point whose action differs from the action at the first point."""
    for m, a in zip(mu0s, actions):
        if a != actions[0]:
            return float(m)
    return None


def sweep_grid(start: float, stop: float, step: float) -> np.ndarray:
    if step <= 0 or stop < start:
        raise ContractViolation("sweep needs step > 0 and stop >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 10)


def sweep_rows(run: SolvedRun, mu0s: np.ndarray, report: Optional[BoundReport] = None):
    """Value and initial action of the solved policy for each initial mean."""
    rows, seconds = [], []
    for mu in mu0s:
        t0 = time.perf_counter()
        b = run.backend.initial_belief(np.atleast_1d(mu))
        v, a = run.policy.evaluate(0, b)
        seconds.append(time.perf_counter() - t0)
        row = {"mu0": float(mu), "value": v, "action": a}
        if report is not None:
            row.update(abstraction_bound=report.abstraction_bound, observation_bound=report.observation_bound,
                       pbvi_proxy_bound=report.pbvi_proxy_bound, heuristic_total=report.total)
        rows.append(row)
    return rows, seconds


def sweep_csv(rows: list[dict], header_comment: str) -> str:
    buf = io.StringIO()
    for line in header_comment.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)

    def fmt(v):
        if v is None:
            return ""
        return f"{v:.10g}" if isinstance(v, float) else str(v)

    for r in rows:
        w.writerow([fmt(r.get(c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()


# ----------------------------------------------------------------- commands


def cmd_fit_indicator(cfg: RunConfig, args) -> int:
    model, mhash = _load_model(cfg)
    rbf = _fit(model, cfg)
    doc = rbf.to_json()
    doc["config_hash"] = config_hash({"model_hash": mhash, "iq": cfg.iq})
    doc["seed"] = cfg.seed
    p = _write(Path(args.out), f"rbf_iq{cfg.iq}.json", _dump(doc))
    print(f"I_q={cfg.iq}  delta_I={rbf.delta_I:.6g}  -> {p}")
    return 0


def cmd_solve(cfg: RunConfig, args) -> int:
    run = solve_run(cfg)
    report = bound_report(run, cfg)
    out = Path(args.out)
    tag = cfg.backend
    pp = _write(out, f"policy_{tag}.json", _dump(run.policy.to_json()))
    bdoc = report.to_json()
    bdoc.update(config_hash=run.chash, seed=cfg.seed)
    _write(out, f"bounds_{tag}.json", _dump(bdoc))
    _write(out, f"solve_{tag}.timing.json", _dump({"config_hash": run.chash, "seed": cfg.seed,
                                                    "solve_seconds": run.seconds}))
    print(f"value at rho = {run.value:.6f}  initial action = {run.action}  "
          f"({run.seconds:.1f} s)  -> {pp}")
    print(report.table())
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    run = load_policy_run(cfg, args.policy) if args.policy else solve_run(cfg)
    report = bound_report(run, cfg) if args.with_bounds else None
    mu0s = sweep_grid(args.mu0_start, args.mu0_stop, args.mu0_step)
    rows, secs = sweep_rows(run, mu0s, report)
    flip = action_flip(mu0s, [r["action"] for r in rows])
    out = Path(args.out)
    tag = cfg.backend
    p = _write(out, f"sweep_{tag}.csv",
               sweep_csv(rows, f"config_hash={run.chash} seed={cfg.seed} backend={tag}"))
    _write(out, f"sweep_{tag}.timing.json", _dump({
        "config_hash": run.chash, "seed": cfg.seed, "solve_seconds": run.seconds,
        "row_seconds": secs, "action_flip_mu0": flip}))
    print(f"{len(rows)} rows -> {p}")
    print("action flips at mu0 =", "none" if flip is None else f"{flip:g}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    if not args.policy:
        raise ContractViolation("simulate needs --policy")
    trials = cfg.trials
    run = load_policy_run(cfg, args.policy)
    model = run.model
    if args.mu0 is not None:
        model = model.with_initial(mu0=[args.mu0])
    t0 = time.perf_counter()
    est = run_closed_loop(model, run.policy, run.backend, trials, cfg.seed)
    secs = time.perf_counter() - t0
    chash = config_hash({"policy": run.chash, "trials": trials, "mu0": model.mu0.tolist()})
    out = Path(args.out)
    tag = cfg.backend
    p = _write(out, f"mc_{tag}.csv",
               estimate_to_csv(est, f"config_hash={chash} seed={cfg.seed} policy={run.chash}"))
    _write(out, f"mc_{tag}.timing.json", _dump({"config_hash": chash, "seed": cfg.seed,
                                                 "simulate_seconds": secs, **est.summary()}))
    print(f"MC estimate {est.estimate:.4f} +/- {est.half_width:.4f} over {trials} trials "
          f"(reported value {run.value:.4f}, {est.filter_failures} filter failures) -> {p}")
    return 0


def cmd_bounds(cfg: RunConfig, args) -> int:
    run = load_policy_run(cfg, args.policy) if args.policy else solve_run(cfg)
    report = bound_report(run, cfg)
    doc = report.to_json()
    doc.update(config_hash=run.chash, seed=cfg.seed)
    p = _write(Path(args.out), f"bounds_{cfg.backend}.json", _dump(doc))
    print(report.table())
    print(f"-> {p}")
    return 0


COMMANDS = {
    "fit-indicator": cmd_fit_indicator,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "bounds": cmd_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=str(thermostat_config_path()),
                        help="model config JSON (default: bundled thermostat)")
    common.add_argument("--backend", choices=["finite", "gaussian"], default="finite")
    common.add_argument("--delta-x", type=float, default=0.1, help="state grid cell edge (finite)")
    common.add_argument("--delta-y", type=float, default=0.5, help="observation grid cell edge")
    common.add_argument("--epsilon", type=float, default=1e-3, help="observation tail mass target")
    common.add_argument("--obs-box", type=float, nargs=2, metavar=("LO", "HI"), default=None,
                        help="explicit scalar observation box (default: config 'obs_box' or inflation)")
    common.add_argument("--iq", type=int, default=30, help="RBF components per mode (gaussian)")
    common.add_argument("--cap", type=int, default=DEFAULT_CAP, help="mixture component cap (gaussian)")
    common.add_argument("--beliefs", type=int, default=40, help="sampled beliefs per level")
    common.add_argument("--probes", type=int, default=40, help="probe beliefs for the δ^σ proxy (0 = skip)")
    common.add_argument("--trials", type=int, default=10000, help="Monte Carlo trials (simulate)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--horizon", type=int, default=None, help="override the config horizon")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="hybrid-safety", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit-indicator", parents=[common], help="fit the RBF indicator and print δ^I")
    sub.add_parser("solve", parents=[common], help="solve and write policy + bound report")
    sp = sub.add_parser("sweep", parents=[common], help="value and initial action over initial means")
    sp.add_argument("--policy", default=None, help="reuse a solved policy instead of solving")
    sp.add_argument("--mu0-start", type=float, default=17.5)
    sp.add_argument("--mu0-stop", type=float, default=22.0)
    sp.add_argument("--mu0-step", type=float, default=0.1)
    sp.add_argument("--with-bounds", action="store_true", help="fill the bound columns")
    sm = sub.add_parser("simulate", parents=[common], help="Monte Carlo evaluation of a policy file")
    sm.add_argument("--policy", default=None)
    sm.add_argument("--mu0", type=float, default=None, help="override the initial mean (scalar models)")
    sb = sub.add_parser("bounds", parents=[common], help="bound report for a policy file or a fresh solve")
    sb.add_argument("--policy", default=None)
    return parser


def config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        config=args.config, backend=args.backend, delta_x=args.delta_x, delta_y=args.delta_y,
        epsilon=args.epsilon, obs_box=list(args.obs_box) if args.obs_box else None, iq=args.iq,
        cap=args.cap, beliefs=args.beliefs, probes=args.probes, trials=args.trials, seed=args.seed,
        horizon=args.horizon,
    )
    cfg.validate()
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
