"""Command-line harness: certify, simulate, compare-periodic and sweep.

Every command reads one JSON or YAML document (see ``docs/config.md``) and
writes deterministic CSV/JSON artifacts into ``--out``.  Exit codes: 0 all
checks pass, 2 certificate failure, 3 simulation check failure, 4
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys as _sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import trigger_sim as ts
from .core_system import (DEFAULT_MARGIN, ControlSystem, IllConditionedLyapunov, InvalidSystem,
                          NotExponentiallyStable, StabilityCertificate, certify_system, kappa)
from .lyapunov import LyapunovFunctional, TriggerDesign, build_lyapunov, decay_rate, trigger_bound
from .models import (ModelSpec, TransportSpec, build_model, builtin_initial_state,
                     counterexample_f0, spec_from_dict, spec_to_dict)

log = logging.getLogger("etcstab")

EXIT_OK = 0
EXIT_CERTIFICATE = 2
EXIT_CHECK = 3
EXIT_CONFIG = 4

DEFAULT_FRACTION = 0.9
MODES = ("certify", "simulate", "compare_periodic", "sweep_gamma")
PERIODIC_RATIO_TOL = 1e-6
TRIGGERED_RATIO_TARGET = 0.5


class ConfigError(ValueError):
    pass


class CertificateFailure(RuntimeError):
    def __init__(self, message: str, report: dict):
        self.report = report
        super().__init__(message)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    mode: str | None = None
    margin: float = DEFAULT_MARGIN
    beta: float | None = None
    eta: float | None = None
    gamma: float | None = None
    delta: float | None = None
    horizon: float | None = None
    dt_max: float | None = None
    event_tol: float = 1e-9
    state_floor: float = 1e-12
    max_events: int = 1_000_000
    output_dt: float | None = None
    initial_state: Any = "builtin"
    sweep: tuple | None = None
    period: float = 1.0
    workers: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a key-value document")
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        if "model" not in doc:
            raise ConfigError("configuration needs a 'model' section")
        try:
            doc["model"] = spec_from_dict(doc["model"])
        except (InvalidSystem, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if doc.get("mode") is not None:
            doc["mode"] = str(doc["mode"]).replace("-", "_")
            if doc["mode"] == "sweep":
                doc["mode"] = "sweep_gamma"
            if doc["mode"] not in MODES:
                raise ConfigError(f"mode must be one of {MODES}")
        if doc.get("sweep") is not None:
            doc["sweep"] = tuple(float(g) for g in doc["sweep"])
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self):
        def positive(name):
            val = getattr(self, name)
            if val is not None and not (isinstance(val, (int, float)) and val > 0 and math.isfinite(val)):
                raise ConfigError(f"{name} must be a positive finite number, got {val!r}")

        for name in ("beta", "gamma", "delta", "horizon", "dt_max", "event_tol", "output_dt",
                     "period", "margin"):
            positive(name)
        if self.eta is not None and not self.eta >= 0:
            raise ConfigError("eta must be nonnegative")
        if not 0.0 <= self.state_floor < 1.0:
            raise ConfigError("state_floor must lie in [0, 1)")
        if int(self.max_events) != self.max_events or self.max_events < 1:
            raise ConfigError("max_events must be a positive integer")
        if self.sweep is not None:
            g = np.asarray(self.sweep)
            if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise ConfigError("sweep grid must be strictly positive and increasing")
        init = self.initial_state
        if not (init in ("builtin", "random", "zero") or
                (isinstance(init, dict) and set(init) == {"file"})):
            raise ConfigError("initial_state must be 'builtin', 'random', 'zero' or {file: path}")
        if self.workers < 0:
            raise ConfigError("workers must be nonnegative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = spec_to_dict(self.model)
        if self.sweep is not None:
            out["sweep"] = list(self.sweep)
        return out


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path.name}: {exc}") from None
    cfg = ExperimentConfig.from_dict(doc)
    init = cfg.initial_state
    if isinstance(init, dict):
        # relative data paths resolve against the config location
        p = Path(init["file"])
        if not p.is_absolute():
            cfg = replace(cfg, initial_state={"file": str(path.parent / p)})
    return cfg


def initial_state(cfg: ExperimentConfig, sys: ControlSystem, seed: int) -> np.ndarray:
    init = cfg.initial_state
    if init == "builtin":
        return builtin_initial_state(cfg.model)
    if init == "zero":
        return np.zeros(sys.n)
    if init == "random":
        return np.random.default_rng(seed).standard_normal(sys.n)
    p = Path(init["file"])
    try:
        z = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load initial state: {exc}") from None
    z = np.asarray(z, dtype=float).ravel()
    if z.shape != (sys.n,):
        raise ConfigError(f"initial state has {z.size} entries, model needs {sys.n}")
    return z


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path: Path, doc: dict):
    path.write_text(json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n")


def _certify(sys: ControlSystem, cfg: ExperimentConfig) -> tuple[StabilityCertificate, TriggerDesign]:
    try:
        cert = certify_system(sys, cfg.margin)
    except NotExponentiallyStable as exc:
        raise CertificateFailure(str(exc), {"error": "not exponentially stable",
                                            "spectral_abscissa": exc.spectral_abscissa}) from None
    except IllConditionedLyapunov as exc:
        raise CertificateFailure(str(exc), {"error": "ill-conditioned Lyapunov solve",
                                            "condition": exc.condition}) from None
    return cert, trigger_bound(sys, cert)


@dataclass
class Plan:
    """Resolved gamma/delta/beta for one run, and whether they are certified."""
    gamma: float
    certified: bool
    delta: float | None
    F: LyapunovFunctional | None
    delta_beta: float | None = None
    notes: list = field(default_factory=list)


def plan_run(sys, cert, design: TriggerDesign, cfg: ExperimentConfig, gamma: float | None,
             allow_uncertified: bool) -> Plan:
    if gamma is None:
        if design.unconstrained:
            raise ConfigError("gamma must be given when the trigger radius vanishes")
        gamma = DEFAULT_FRACTION * design.gamma_max
    if gamma >= design.gamma_max:
        if not allow_uncertified:
            raise ConfigError(
                f"gamma = {gamma:.6g} is not below the certified bound gamma_max = "
                f"{design.gamma_max:.6g} (alpha / r); pass --allow-uncertified-gamma to run anyway")
        return Plan(gamma, False, None, None, notes=["gamma above gamma_max; no decay guarantee"])
    dmax = design.delta_max(gamma)
    delta = cfg.delta if cfg.delta is not None else DEFAULT_FRACTION * dmax
    if not delta < dmax:
        raise ConfigError(f"delta = {delta:.6g} must be below alpha - gamma r = {dmax:.6g}")
    beta = cfg.beta if cfg.beta is not None else design.beta_star(gamma, delta)
    if not delta + gamma * design.r < beta < cert.alpha:
        raise ConfigError(f"beta = {beta:.6g} must lie in ({delta + gamma * design.r:.6g}, "
                          f"{cert.alpha:.6g}) for the requested delta")
    try:
        F = build_lyapunov(sys, cert, beta, cfg.eta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    db, _ = decay_rate(F, gamma)
    return Plan(gamma, True, delta, F, delta_beta=db)


def _trigger_config(cfg: ExperimentConfig, gamma: float, horizon: float) -> ts.TriggerConfig:
    try:
        return ts.TriggerConfig(gamma=gamma, horizon=horizon, dt_max=cfg.dt_max,
                                event_tol=cfg.event_tol, state_floor=cfg.state_floor,
                                max_events=int(cfg.max_events), output_dt=cfg.output_dt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _default_horizon(cfg: ExperimentConfig, plan: Plan, cert: StabilityCertificate) -> float:
    if cfg.horizon is not None:
        return cfg.horizon
    rate = plan.delta if plan.delta is not None else cert.alpha
    return 10.0 / rate


def simulate_and_check(sys, cert, design, cfg, plan: Plan, z0, horizon: float,
                       backend: str | None = None):
    """Run one triggered simulation; returns ``(trajectory, summary, checks)``."""
    tcfg = _trigger_config(cfg, plan.gamma, horizon).resolved(sys)
    traj = ts.simulate(sys, z0, tcfg, F=plan.F, backend=backend)
    checks = {}
    zero = traj.norms[0] == 0.0
    k = kappa(sys, plan.gamma)
    checks["sandwich"] = ts.verify_sandwich(traj, k).to_dict()
    checks["derivative_bound"] = ts.verify_derivative_bound(traj, sys).to_dict()
    checks["trigger"] = ts.verify_trigger(traj).to_dict()
    observed = c_star = None
    floor = traj.halted_reason == "state_floor"
    bound = None
    if not zero:
        checks["dwell"] = ts.verify_dwell(traj, z0).to_dict()
        bound = ts.dwell_bound(sys, z0, plan.gamma, max(traj.t_end, tcfg.event_tol))
        try:
            fit = ts.fit_decay(traj, delta=plan.delta)
            observed, c_star, floor = fit.observed_delta, fit.C_star, fit.floor_flagged
        except ValueError as exc:
            log.warning("decay fit skipped: %s", exc)
        if plan.certified:
            checks["lyapunov_events"] = ts.verify_lyapunov_events(traj, plan.delta_beta).to_dict()
            if observed is not None:
                ok = observed >= plan.delta and math.isfinite(c_star)
                checks["decay"] = {"name": "decay", "passed": bool(ok),
                                   "observed_delta": observed, "certified_delta": plan.delta,
                                   "C_star": c_star}
    checks["zeno"] = {"name": "zeno", "passed": not traj.zeno_suspected,
                      "max_events": int(tcfg.max_events)}
    summary = {
        "gamma": plan.gamma,
        "events": traj.n_events,
        "min_dwell": float(traj.dwell_times.min()) if traj.n_events else None,
        "dwell_bound": bound,
        "observed_delta": observed,
        "certified_delta": plan.delta,
        "halted_reason": traj.halted_reason,
        "C_star": c_star,
        "floor_flagged": bool(floor),
        "t_end": traj.t_end,
        "beta": plan.F.beta if plan.F is not None else None,
        "delta_beta": plan.delta_beta,
        "notes": plan.notes,
        "trigger_config": asdict(tcfg),
    }
    return traj, summary, checks


def _audit(cfg: ExperimentConfig, seed: int, cert, design, F=None, allow=False) -> dict:
    out = {"config": {**cfg.to_dict(), "seed": seed, "allow_uncertified_gamma": allow},
           "certificate": cert.to_dict(), "trigger_design": design.to_dict()}
    if F is not None:
        out["functional"] = F.to_dict()
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def run_certify(cfg: ExperimentConfig, out: Path, seed: int = 0, allow: bool = False) -> int:
    sys = build_model(cfg.model)
    try:
        cert, design = _certify(sys, cfg)
    except CertificateFailure as exc:
        write_json(out / "certificate.json", {**exc.report, "config": cfg.to_dict()})
        log.error("%s", exc)
        return EXIT_CERTIFICATE
    report = {"alpha": cert.alpha, "M": cert.M, "c1": design.c1, "r": design.r,
              "gamma_max": design.gamma_max}
    if not design.unconstrained or cfg.gamma is not None:
        plan = plan_run(sys, cert, design, cfg, cfg.gamma, allow)
        report["gamma"] = plan.gamma
        report["delta_max"] = design.delta_max(plan.gamma)
        if plan.F is not None:
            report.update(beta=plan.F.beta, C0=plan.F.C0, C1=plan.F.C1, C2=plan.F.C2,
                          delta=plan.delta, delta_beta=plan.delta_beta)
        report.update(_audit(cfg, seed, cert, design, plan.F, allow))
    else:
        report.update(_audit(cfg, seed, cert, design, None, allow))
    write_json(out / "certificate.json", report)
    return EXIT_OK


def run_simulate(cfg: ExperimentConfig, out: Path, seed: int = 0, allow: bool = False,
                 backend: str | None = None) -> int:
    sys = build_model(cfg.model)
    try:
        cert, design = _certify(sys, cfg)
    except CertificateFailure as exc:
        write_json(out / "report.json", {**exc.report, "config": cfg.to_dict()})
        log.error("%s", exc)
        return EXIT_CERTIFICATE
    plan = plan_run(sys, cert, design, cfg, cfg.gamma, allow)
    z0 = initial_state(cfg, sys, seed)
    try:
        traj, summary, checks = simulate_and_check(sys, cert, design, cfg, plan, z0,
                                                   _default_horizon(cfg, plan, cert), backend)
    except ts.EventLocalizationError as exc:
        write_json(out / "report.json", {"error": str(exc), "bracket": list(exc.bracket),
                                         **_audit(cfg, seed, cert, design, plan.F, allow)})
        log.error("%s", exc)
        return EXIT_CHECK
    (out / "trajectory.csv").write_text(traj.trajectory_csv())
    (out / "events.csv").write_text(traj.events_csv())
    passed = all(c["passed"] for c in checks.values())
    report = {**summary, "checks": checks, "passed": passed,
              **_audit(cfg, seed, cert, design, plan.F, allow)}
    write_json(out / "report.json", report)
    for name, c in checks.items():
        if not c["passed"]:
            log.error("check %s failed: %s", name, c)
    return EXIT_OK if passed else EXIT_CHECK


def run_compare_periodic(cfg: ExperimentConfig, out: Path, seed: int = 0, allow: bool = False,
                         backend: str | None = None) -> int:
    if not isinstance(cfg.model, TransportSpec):
        raise ConfigError("compare-periodic needs a transport model")
    try:
        ce = counterexample_f0(cfg.model, cfg.period)
    except (InvalidSystem, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = replace(cfg, model=ce.spec)
    sys = build_model(ce.spec)
    try:
        cert, design = _certify(sys, cfg)
    except CertificateFailure as exc:
        write_json(out / "comparison.json", {**exc.report, "config": cfg.to_dict()})
        return EXIT_CERTIFICATE
    plan = plan_run(sys, cert, design, cfg, cfg.gamma, allow)
    t_star = ce.k_star * ce.period
    T_trig = 4.0 / cert.alpha
    horizon = cfg.horizon if cfg.horizon is not None else max(t_star, T_trig)
    n0 = sys.H.norm(ce.f0)
    periodic = ts.simulate_periodic(sys, ce.f0, ce.period, horizon, output_dt=cfg.output_dt, F=None)
    # state at the k*-th sampling instant
    k_idx = min(ce.k_star, periodic.n_events)
    if ce.k_star <= periodic.n_events:
        ratio_p = sys.H.norm(periodic.event_states[k_idx]) / n0
    else:
        ratio_p = sys.H.norm(ts.propagate_hold(sys, periodic.event_states[-1],
                                               t_star - periodic.event_times[-1], "modal")) / n0
    try:
        traj, summary, checks = simulate_and_check(sys, cert, design, cfg, plan, ce.f0,
                                                   max(horizon, T_trig), backend)
    except ts.EventLocalizationError as exc:
        write_json(out / "comparison.json", {"error": str(exc)})
        return EXIT_CHECK
    t = traj.sample_times
    if traj.t_end >= T_trig:
        j = int(np.searchsorted(t, T_trig, side="right") - 1)
        ratio_t = float(np.min(traj.norms[: j + 1])) / traj.norms[0]
    else:
        ratio_t = float(traj.norms[-1] / traj.norms[0])
    ok_p = abs(ratio_p - 1.0) <= PERIODIC_RATIO_TOL
    ok_t = ratio_t < TRIGGERED_RATIO_TARGET
    (out / "periodic_trajectory.csv").write_text(periodic.trajectory_csv())
    (out / "triggered_trajectory.csv").write_text(traj.trajectory_csv())
    (out / "events.csv").write_text(traj.events_csv())
    report = {
        "norm_ratio_at_Tkstar_periodic": ratio_p,
        "norm_ratio_event_triggered": ratio_t,
        "event_count": traj.n_events,
        "k_star": ce.k_star, "period": ce.period, "T_kstar": t_star, "v1": ce.v1,
        "t_event_triggered": T_trig,
        "checks": {"periodic_non_decay": ok_p, "event_triggered_decay": ok_t,
                   **{k: v["passed"] for k, v in checks.items()}},
        "simulation": summary,
        **_audit(cfg, seed, cert, design, plan.F, allow),
    }
    passed = ok_p and ok_t and all(c["passed"] for c in checks.values())
    report["passed"] = passed
    write_json(out / "comparison.json", report)
    return EXIT_OK if passed else EXIT_CHECK


SWEEP_COLUMNS = ("gamma", "observed_delta", "certified_delta", "events", "min_dwell", "dwell_bound")


def run_sweep(cfg: ExperimentConfig, out: Path, seed: int = 0, allow: bool = False,
              backend: str | None = None) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep needs a 'sweep' list of gamma values")
    sys = build_model(cfg.model)
    try:
        cert, design = _certify(sys, cfg)
    except CertificateFailure as exc:
        write_json(out / "sweep_report.json", {**exc.report, "config": cfg.to_dict()})
        return EXIT_CERTIFICATE
    z0 = initial_state(cfg, sys, seed)
    # an explicit delta only makes sense for one gamma; per-gamma defaults otherwise
    per_cfg = replace(cfg, delta=None, beta=None) if len(cfg.sweep) > 1 else cfg

    def one(gamma):
        try:
            plan = plan_run(sys, cert, design, per_cfg, gamma, allow)
            _, summary, checks = simulate_and_check(sys, cert, design, per_cfg, plan, z0,
                                                    _default_horizon(per_cfg, plan, cert), backend)
            return {**summary, "checks": {k: v["passed"] for k, v in checks.items()},
                    "error": None}
        except (ConfigError, ValueError, ts.EventLocalizationError) as exc:
            return {"gamma": gamma, "error": str(exc)}

    workers = cfg.workers or min(4, len(cfg.sweep))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(one, cfg.sweep))
    lines = [",".join(SWEEP_COLUMNS)]
    for row in rows:
        cells = []
        for col in SWEEP_COLUMNS:
            v = row.get(col)
            if v is None or (isinstance(v, float) and not math.isfinite(v)):
                cells.append("")
            elif isinstance(v, int):
                cells.append(str(v))
            else:
                cells.append(ts._fmt(v))
        lines.append(",".join(cells))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    failed = [r for r in rows if r.get("error") or not all(r.get("checks", {}).values())]
    write_json(out / "sweep_report.json",
               {"rows": [{k: v for k, v in r.items() if k != "trigger_config"} for r in rows],
                "passed": not failed, **_audit(cfg, seed, cert, design, None, allow)})
    return EXIT_OK if not failed else EXIT_CHECK


COMMANDS = {"certify": run_certify, "simulate": run_simulate,
            "compare-periodic": run_compare_periodic, "sweep": run_sweep}
COMMAND_MODES = {"certify": "certify", "simulate": "simulate",
                 "compare-periodic": "compare_periodic", "sweep": "sweep_gamma"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etcstab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON or YAML experiment file")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=0, help="seed for random initial states")
        p.add_argument("--allow-uncertified-gamma", action="store_true",
                       help="run with gamma at or above gamma_max (no decay guarantee)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not 0 <= args.seed < 2**64:
        log.error("seed must be an unsigned 64-bit integer")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        expected = COMMAND_MODES[args.command]
        if cfg.mode is not None and cfg.mode != expected:
            raise ConfigError(f"config mode {cfg.mode!r} does not match command {args.command!r}")
        cfg = replace(cfg, mode=expected)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.seed, args.allow_uncertified_gamma)
    except (ConfigError, InvalidSystem) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    _sys.exit(main())
