"""Command-line front end.

Subcommands: validate | sample | expected | partition | noise | report.
The first five read one JSON config (schema in config.py), run the requested
evaluator or experiment, and write a RunReport JSON; `report` post-processes
previously written RunReports into figures and a summary table.

Reports are byte-deterministic: key order is fixed, floats are serialised
with 17 significant digits, and Monte-Carlo aggregates depend only on
(config, master_seed), never on the worker count.  Wall-clock timings go to
stderr only, precisely so that reruns stay byte-identical.

Exit codes: 0 success, 2 config error, 3 invariant failure, 4 runtime cap.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import calibration_sha256, constant
from .config import ConfigError, ExperimentConfig, load_config
from .engine import (
    RoundCapExceeded,
    expected_state_closed,
    expected_state_series,
    expected_stopping_time_exact,
    expected_stopping_time_series,
    run_ensemble,
    sample_probability,
    tau_max_bound,
)
from .estimators import (
    estimate_partition,
    fault_resilience_experiment,
    gibbs_error_budget,
    partition_exact_inversion,
)
from .hamiltonian import exact_gibbs, exact_partition, jump_operator, to_dense
from .instrument import build_K_ideal, build_K_product, k_deviation, perturb_instrument
from .linalg import channel_delta_estimate, operator_norm, trace_norm
from .stopping import cosh_schedule, general_schedule, lambda_param

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_RUNTIME_CAP = 4


# ---------------------------------------------------------------------------
# deterministic serialisation
# ---------------------------------------------------------------------------

def _ser(obj) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, np.ndarray):
        return _ser(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_ser(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + _ser(v) for k, v in obj.items()) + "}"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    return _ser(report) + "\n"


def matrix_payload(arr: np.ndarray) -> dict:
    return {"real": np.real(arr).tolist(), "imag": np.imag(arr).tolist()}


# ---------------------------------------------------------------------------
# shared preparation
# ---------------------------------------------------------------------------

class _Prepared:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.h = cfg.load_hamiltonian()
        if cfg.k_variant == "product":
            self.inst = build_K_product(self.h, cfg.epsilon)
        else:
            self.inst = build_K_ideal(self.h, cfg.epsilon)
        if cfg.schedule.kind == "cosh":
            self.lam = lambda_param(cfg.beta, self.h.kappa, cfg.epsilon, self.h.m)
            self.sched = cosh_schedule(self.lam)
        else:
            self.lam = None
            coeffs = cfg.load_general_coefficients()
            self.sched = general_schedule(coeffs, cfg.schedule.c)

    def derived(self) -> dict:
        tight = coarse = None
        if self.lam is not None:
            tight, coarse = tau_max_bound(self.cfg.epsilon, self.h.m, self.lam)
            if math.isinf(tight):
                tight = None
        return {
            "kappa": self.h.kappa,
            "m": self.h.m,
            "D": self.h.dim,
            "lambda": self.lam,
            "mu_min": self.inst.mu_min,
            "mu_max": self.inst.mu_max,
            "tau_max_tight": tight,
            "tau_max_coarse": coarse,
        }

    def rho0(self) -> np.ndarray:
        return np.eye(self.h.dim, dtype=complex) / self.h.dim


def _report_skeleton(command: str, cfg: ExperimentConfig, derived: dict, results: dict) -> dict:
    return {
        "schema_version": 1,
        "command": command,
        "version": __version__,
        "calibration_sha256": calibration_sha256(),
        "config": cfg.echo(),
        "derived": derived,
        "results": results,
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(cfg: ExperimentConfig) -> tuple[dict, int]:
    prep = _Prepared(cfg)
    h, inst = prep.h, prep.inst
    checks = []

    def add(name: str, passed: bool, measured: dict, note: str | None = None):
        entry = {"name": name, "passed": bool(passed), "measured": measured}
        if note:
            entry["note"] = note
        checks.append(entry)

    add("weights_normalized", abs(sum(h.weights) - 1.0) <= 1e-12,
        {"deviation": abs(sum(h.weights) - 1.0)})

    hd = to_dense(h)
    hnorm = operator_norm(hd)
    add("operator_norm_le_kappa", hnorm <= h.kappa + 1e-12,
        {"operator_norm": hnorm, "kappa": h.kappa})

    proj_dev = 0.0
    for t in h.terms:
        k = jump_operator(t, h.n_qubits).entries
        proj_dev = max(proj_dev, float(np.max(np.abs(k @ k - k))))
    add("jump_projectors", proj_dev <= 1e-12, {"max_k2_minus_k": proj_dev})

    karr = inst.K.entries
    herm_dev = float(np.linalg.norm(karr - karr.conj().T, 2))
    add("K_hermitian", herm_dev < 1e-12, {"norm_K_minus_Kdag": herm_dev})

    eigs = inst.spectrum.eigenvalues
    top = float(np.abs(eigs).max())
    add("K_contraction", top <= 1.0 + 1e-12, {"max_abs_eigenvalue": top})

    if h.m >= 2 and inst.variant == "product":
        lo = (1.0 - cfg.epsilon) ** (2 * h.m)
        hi = (1.0 - (h.m - 1) * cfg.epsilon / h.m) ** (2 * h.m)
        add("spectral_sandwich",
            bool(eigs.min() >= lo - 1e-12 and eigs.max() <= hi + 1e-12),
            {"min_eigenvalue": float(eigs.min()), "lower": lo,
             "max_eigenvalue": float(eigs.max()), "upper": hi})
    elif inst.variant == "product":
        add("spectral_sandwich", True, {"max_eigenvalue": top},
            note="m=1: the largest eigenvalue can reach 1 exactly; stopping-time "
                 "evaluators use the removable-singularity limit branch there")

    rates = prep.sched.rates
    mass = float(prep.sched.weights.sum())
    sched_meta = {"min_rate": float(rates.min()), "max_rate": float(rates.max()),
                  "stopping_mass": mass, "tail_bound": prep.sched.tail_bound,
                  "horizon": prep.sched.horizon}
    sched_ok = 0.0 <= rates.min() and rates.max() <= 1.0 and mass <= 1.0 + 1e-12
    if prep.sched.kind == "cosh" and prep.lam and prep.lam > 0:
        logw = (2 * np.arange(prep.sched.horizon + 1) * math.log(prep.lam)
                - np.array([math.lgamma(2 * n + 1) for n in range(prep.sched.horizon + 1)])
                - (abs(prep.lam) + math.log1p(math.exp(-2 * abs(prep.lam))) - math.log(2.0)))
        dev = float(np.max(np.abs(prep.sched.weights / np.exp(logw) - 1.0)))
        sched_meta["max_weight_rel_dev"] = dev
        sched_ok = sched_ok and dev <= 1e-10
    add("schedule_validity", sched_ok, sched_meta)

    sweep = [1e-2, 1e-3, 1e-4]
    devs = [k_deviation(h, e) for e in sweep]
    slope = float(np.polyfit(np.log(sweep), np.log(devs), 1)[0])
    cdev = max(d / (e * e * h.m * h.m) for d, e in zip(devs, sweep))
    add("k_deviation_scaling",
        abs(slope - 2.0) <= 0.1 and cdev <= constant("k_deviation"),
        {"slope": slope, "constant": cdev, "sweep": sweep, "deviations": devs})

    if prep.lam is not None:
        etau = expected_stopping_time_exact(inst, prep.lam)
        tight, coarse = tau_max_bound(cfg.epsilon, h.m, prep.lam)
        ok = etau <= coarse + 1e-10
        measured = {"expected_tau": etau, "coarse": coarse}
        if h.m >= 2:
            ok = ok and etau <= tight + 1e-10 and tight <= coarse + 1e-10
            measured["tight"] = tight
        add("stopping_time_bound", ok, measured)

    failed = [c["name"] for c in checks if not c["passed"]]
    results = {"checks": checks, "failed": failed, "all_passed": not failed}
    report = _report_skeleton("validate", cfg, prep.derived(), results)
    return report, EXIT_OK if not failed else EXIT_INVARIANT


def cmd_sample(cfg: ExperimentConfig) -> tuple[dict, int]:
    prep = _Prepared(cfg)
    keep = cfg.output_format == "csv"
    stats = run_ensemble(prep.inst, prep.sched, cfg.n_trajectories, cfg.master_seed,
                         track_state=cfg.track_state, workers=cfg.workers,
                         keep_records=keep)
    levels = stats.stop_level_counts
    mu = np.abs(prep.inst.spectrum.eigenvalues)
    nu2 = (mu / mu.max()) ** 2
    oracle = []
    for n in range(len(levels)):
        if n <= prep.sched.horizon:
            w = float(prep.sched.weights[n])
        else:
            w = 0.0
        power = nu2 ** n
        tr_kn = float(power.sum()) * mu.max() ** (2 * n) if mu.max() > 0 else 0.0
        oracle.append(w * tr_kn / prep.h.dim)
    results = {
        "n_trajectories": stats.n_trajectories,
        "total_rounds": stats.total_rounds,
        "total_resets": stats.total_resets,
        "mean_tau": stats.mean_tau,
        "tau_stderr": stats.tau_stderr,
        "runs_over_resets": stats.runs_over_resets,
        "stop_level_counts": stats.stop_level_counts.tolist(),
        "stop_level_probability": oracle,
    }
    if prep.lam is not None:
        results["sample_probability"] = sample_probability(prep.inst, prep.lam)
    if cfg.track_state and stats.mean_state is not None:
        results["mean_state"] = matrix_payload(stats.mean_state)
    csv_path = None
    if keep:
        csv_path = Path(cfg.resolve(cfg.output_path)).with_suffix(".trajectories.csv")
        _write_trajectories_csv(csv_path, stats.records)
        results["trajectories_csv"] = csv_path.name
    report = _report_skeleton("sample", cfg, prep.derived(), results)
    return report, EXIT_OK


def _write_trajectories_csv(path: Path, records: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["index,tau,n_resets,zero_run_at_stop"]
    for i, (tau, resets, level) in enumerate(records):
        lines.append(f"{i},{tau},{resets},{level}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_expected(cfg: ExperimentConfig) -> tuple[dict, int]:
    prep = _Prepared(cfg)
    oracle = exact_gibbs(prep.h, cfg.beta)
    series_state = expected_state_series(prep.inst, prep.sched, prep.rho0())
    tau_series = expected_stopping_time_series(prep.inst, prep.sched, prep.rho0())
    budget = gibbs_error_budget(cfg.beta, cfg.epsilon, prep.h.kappa, prep.h.m)
    results: dict = {
        "state_series": matrix_payload(series_state),
        "distance_series_to_gibbs": trace_norm(series_state - oracle.gibbs_state),
        "expected_tau_series": tau_series,
        "gibbs_error_budget": budget,
    }
    if prep.lam is not None:
        closed = expected_state_closed(prep.inst, prep.lam)
        tau_exact = expected_stopping_time_exact(prep.inst, prep.lam)
        dist = trace_norm(closed - oracle.gibbs_state)
        tight, coarse = tau_max_bound(cfg.epsilon, prep.h.m, prep.lam)
        results.update({
            "state_closed": matrix_payload(closed),
            "distance_closed_to_gibbs": dist,
            "closed_series_agreement": trace_norm(closed - series_state),
            "expected_tau_exact": tau_exact,
            "tau_agreement_rel": abs(tau_series / tau_exact - 1.0),
            "sample_probability": sample_probability(prep.inst, prep.lam),
            "budget_ok": bool(dist <= budget),
            "tau_bound_ok": bool(tau_exact <= min(tight, coarse) + 1e-10),
        })
    report = _report_skeleton("expected", cfg, prep.derived(), results)
    return report, EXIT_OK


def cmd_partition(cfg: ExperimentConfig) -> tuple[dict, int]:
    prep = _Prepared(cfg)
    if prep.lam is None:
        raise ConfigError("the partition estimator requires the cosh schedule")
    stats = run_ensemble(prep.inst, prep.sched, cfg.n_trajectories, cfg.master_seed,
                         workers=cfg.workers)
    log_z = exact_partition(prep.h, cfg.beta)
    est = estimate_partition(stats, cfg.beta, prep.h.kappa, prep.h.m, prep.h.dim,
                             cfg.epsilon, log_Z_exact=log_z)
    inst_ideal = build_K_ideal(prep.h, cfg.epsilon)
    s_exact = sample_probability(inst_ideal, prep.lam)
    z_inv = partition_exact_inversion(s_exact, inst_ideal, cfg.beta, prep.h)
    results = {
        "log_Z_hat": est.log_Z_hat,
        "log_Z_exact": est.log_Z_exact,
        "rel_error": est.rel_error,
        "stat_error": est.stat_error,
        "bound": est.bound,
        "bound_ok": bool(est.rel_error <= est.bound + 4.0 * est.stat_error),
        "runs_over_resets": stats.runs_over_resets,
        "total_resets": stats.total_resets,
        "inversion_identity": {
            "Z": z_inv,
            "rel_dev": abs(z_inv / math.exp(log_z) - 1.0),
        },
    }
    report = _report_skeleton("partition", cfg, prep.derived(), results)
    return report, EXIT_OK


def cmd_noise(cfg: ExperimentConfig) -> tuple[dict, int]:
    if cfg.noise is None:
        raise ConfigError("the noise command requires the noise config section")
    prep = _Prepared(cfg)
    if prep.lam is None:
        raise ConfigError("the noise experiment requires the cosh schedule")
    fr = fault_resilience_experiment(prep.h, cfg.epsilon, cfg.beta, cfg.noise)
    channel, delta_upper = perturb_instrument(prep.inst, cfg.noise)
    lower, upper = channel_delta_estimate(prep.inst.K, channel.apply, trials=200,
                                          seed=cfg.master_seed, upper=delta_upper)
    results = {
        "delta_upper": fr.delta_upper,
        "delta_lower_sampled": lower,
        "state_distance": fr.state_distance,
        "bound_value": fr.bound_value,
        "bound_ok": bool((not fr.threshold_ok) or fr.state_distance <= fr.bound_value),
        "threshold": fr.threshold,
        "threshold_ok": fr.threshold_ok,
        "bound_constant": fr.constant,
        "inequalities": [
            {"name": q.name, "lhs": q.lhs, "rhs": q.rhs, "holds": q.holds}
            for q in fr.inequalities
        ],
    }
    report = _report_skeleton("noise", cfg, prep.derived(), results)
    code = EXIT_OK if all(q.holds for q in fr.inequalities) else EXIT_INVARIANT
    return report, code


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "validate": cmd_validate,
    "sample": cmd_sample,
    "expected": cmd_expected,
    "partition": cmd_partition,
    "noise": cmd_noise,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stopgibbs",
        description="Stopped-process Gibbs sampler: simulation, evaluators, estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "validate": "run the invariant suite for a configuration",
        "sample": "simulate a trajectory ensemble",
        "expected": "deterministic expected state and stopping time",
        "partition": "estimate the partition function from reset statistics",
        "noise": "fault-resilience experiment under a perturbed instrument",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="path to the experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--trajectories", type=int, default=None, help="override n_trajectories")
        p.add_argument("--workers", type=int, default=None, help="override worker count")
        p.add_argument("--output", default=None, help="override output_path")
    rep = sub.add_parser("report", help="render figures and a summary table from run reports")
    rep.add_argument("reports", nargs="+", help="RunReport JSON files")
    rep.add_argument("--outdir", default="figures", help="directory for figures and summary.csv")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    t0 = time.perf_counter()
    if args.command == "report":
        from . import plots

        try:
            written = plots.render_reports(args.reports, args.outdir)
        except (OSError, ValueError, KeyError) as e:
            print(f"stopgibbs report: {e}", file=sys.stderr)
            return EXIT_CONFIG
        for path in written:
            print(path)
        print(f"[stopgibbs] report completed in {time.perf_counter() - t0:.3f} s",
              file=sys.stderr)
        return EXIT_OK

    overrides = {
        "master_seed": args.seed,
        "n_trajectories": args.trajectories,
        "workers": args.workers,
        "output_path": args.output,
    }
    try:
        cfg = load_config(args.config, overrides)
        report, code = _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"stopgibbs {args.command}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RoundCapExceeded as e:
        print(f"stopgibbs {args.command}: runtime cap: {e}", file=sys.stderr)
        return EXIT_RUNTIME_CAP
    except ValueError as e:
        print(f"stopgibbs {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out = cfg.resolve(cfg.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_report(report), encoding="utf-8")
    dt = time.perf_counter() - t0
    print(f"[stopgibbs] {args.command} completed in {dt:.3f} s -> {out}", file=sys.stderr)
    if args.command == "validate" and code == EXIT_INVARIANT:
        failed = ", ".join(report["results"]["failed"])
        print(f"stopgibbs validate: invariant failures: {failed}", file=sys.stderr)
    return code
