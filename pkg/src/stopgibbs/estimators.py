"""Derived quantities: partition-function estimation, observable averages,
error budgets, and the fault-resilience experiment.

The partition estimator reads the stopping statistics of an ensemble: with
runs/resets the empirical per-segment sample probability P, the estimate is

    log Z_hat = log D + beta*kappa*(2m - 1) + log P.

The ratio of sums (total runs over total resets) is used rather than a mean
of per-run ratios, which would be biased for small ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import constant
from .engine import (
    EnsembleStats,
    expected_state_closed,
    weighted_channel_sums,
)
from .hamiltonian import LocalHamiltonian, log_trace_exp, to_dense
from .instrument import Instrument, NoiseModel, build_K_product, perturb_instrument
from .linalg import log_cosh, trace_norm
from .stopping import cosh_schedule, lambda_param


@dataclass(frozen=True)
class PartitionEstimate:
    """Partition-function estimate with its statistical and budget context.

    ``stat_error`` is the 1-sigma relative error on Z_hat implied by the
    binomial error of runs_over_resets; ``bound`` is the working multiplicative
    bias budget C * beta * eps * kappa * m^2.
    """

    log_Z_hat: float
    stat_error: float
    bound: float
    log_Z_exact: float | None = None
    rel_error: float | None = None


def estimate_partition(stats: EnsembleStats, beta: float, kappa: float, m: int, dim: int,
                       epsilon: float, log_Z_exact: float | None = None,
                       budget_constant: float | None = None) -> PartitionEstimate:
    """Estimate log Z from ensemble reset statistics."""
    p = stats.runs_over_resets
    log_z_hat = math.log(dim) + beta * kappa * (2 * m - 1) + math.log(p)
    sigma_p = math.sqrt(max(p * (1.0 - p), 0.0) / stats.total_resets)
    stat_error = sigma_p / p
    c = constant("partition_budget") if budget_constant is None else budget_constant
    bound = c * beta * epsilon * kappa * m * m
    rel_error = None
    if log_Z_exact is not None:
        rel_error = abs(math.expm1(log_z_hat - log_Z_exact))
    return PartitionEstimate(log_Z_hat=log_z_hat, stat_error=stat_error, bound=bound,
                             log_Z_exact=log_Z_exact, rel_error=rel_error)


def partition_exact_inversion(sample_prob: float, inst_ideal: Instrument, beta: float,
                              h: LocalHamiltonian) -> float:
    """Algebraic inversion of the sample probability for the ideal instrument.

    Z = 2 D cosh(lam) e^{-beta kappa/eps} P - e^{-2 beta kappa/eps} tr e^{beta H};
    with the exact sample probability this reproduces the oracle Z identically,
    so it serves as a pure identity check of the estimator's derivation.
    """
    if inst_ideal.variant != "ideal":
        raise ValueError(f"inversion requires the ideal instrument, got variant {inst_ideal.variant!r}")
    if not 0.0 < sample_prob <= 1.0:
        raise ValueError(f"sample probability must lie in (0, 1], got {sample_prob!r}")
    eps = inst_ideal.epsilon
    kappa = inst_ideal.kappa
    lam = lambda_param(beta, kappa, eps, inst_ideal.m)
    log_main = (math.log(2.0) + math.log(inst_ideal.dim) + log_cosh(lam)
                - beta * kappa / eps + math.log(sample_prob))
    log_corr = -2.0 * beta * kappa / eps + log_trace_exp(to_dense(h).entries, beta)
    # Z = e^{main} - e^{corr}, with the correction exponentially smaller
    return -math.exp(log_main) * math.expm1(log_corr - log_main)


def estimate_observable(stats: EnsembleStats, observable, inst: Instrument | None = None
                        ) -> tuple[float, float]:
    """Mean and standard error of tr(O rho_final) over the ensemble.

    In density mode the final state of a trajectory is a fixed function of its
    stop level, so the per-trajectory values are recovered exactly from the
    stop-level histogram and the instrument spectrum.  Ensembles run with
    per-trajectory records carrying final states are averaged directly.
    """
    from .linalg import DenseOperator  # narrow import; observable may be either form

    obs = observable.entries if isinstance(observable, DenseOperator) else np.asarray(observable)
    n = stats.n_trajectories
    if inst is not None:
        if obs.shape != (inst.dim, inst.dim):
            raise ValueError(f"observable shape {obs.shape} does not match dimension {inst.dim}")
        mu = np.abs(inst.spectrum.eigenvalues)
        nu2 = (mu / mu.max()) ** 2
        diag_o = np.real(np.einsum("ij,jk,ki->i", inst.spectrum.eigenvectors.conj().T, obs,
                                   inst.spectrum.eigenvectors))
        counts = stats.stop_level_counts
        values = np.empty(len(counts))
        for lvl in range(len(counts)):
            w = nu2 ** lvl
            values[lvl] = float(np.dot(w, diag_o) / w.sum())
        mean = float(np.dot(counts, values) / n)
        if n > 1:
            var = float(np.dot(counts, (values - mean) ** 2) / (n - 1))
        else:
            var = 0.0
        return mean, math.sqrt(var / n)
    raise ValueError("estimate_observable needs the instrument to recover per-trajectory values")


def gibbs_error_budget(beta: float, epsilon: float, kappa: float, m: int,
                       budget_constant: float | None = None) -> float:
    """Working budget C * beta * eps * kappa * m^2 + e^{-beta kappa / eps}."""
    c = constant("gibbs_budget") if budget_constant is None else budget_constant
    return c * beta * epsilon * kappa * m * m + math.exp(-beta * kappa / epsilon)


@dataclass(frozen=True)
class FaultInequality:
    name: str
    lhs: float
    rhs: float
    holds: bool


@dataclass(frozen=True)
class FaultReport:
    """Outcome of the noise experiment on the expected output state."""

    delta_upper: float
    state_distance: float
    bound_value: float
    threshold: float
    threshold_ok: bool
    lam: float
    inequalities: tuple[FaultInequality, ...]
    noise: NoiseModel
    constant: float


def fault_resilience_experiment(h: LocalHamiltonian, epsilon: float, beta: float,
                                noise: NoiseModel, bound_constant: float | None = None,
                                tail_target: float = 1e-12) -> FaultReport:
    """Compare the noiseless expected state against a perturbed implementation.

    The perturbed state has no closed form and is evaluated through the
    certified series; the noiseless one uses the closed form.  Alongside the
    distance, the three perturbation inequalities are evaluated with
    delta = delta_upper (the conservative direction):

    * state bound:  ||sum t_n (E^n - E'^n)(I/D)||_1
      <= lam d / (2 sqrt(mu_max + d)) * sinh(lam sqrt(mu_max + d))
    * the identical bound for |tr(...)|
    * normalisation: tr sum t_n E^n(I/D)
      >= max(cosh(lam sqrt(mu_max))/D, cosh(lam sqrt(mu_min)))

    with t_n = lam^{2n}/(2n)!.  The raw values involve cosh(lam) and are
    finite for lam up to ~700, which covers the desk-scale envelope.
    """
    inst = build_K_product(h, epsilon)
    lam = lambda_param(beta, h.kappa, epsilon, h.m)
    sched = cosh_schedule(lam, tail_target=tail_target)
    channel, delta_upper = perturb_instrument(inst, noise)

    rho0 = np.eye(inst.dim, dtype=complex) / inst.dim
    acc, den = weighted_channel_sums(inst, sched, rho0)
    acc_p, den_p = weighted_channel_sums(channel, sched, rho0)
    noiseless = expected_state_closed(inst, lam)
    perturbed = acc_p / den_p
    perturbed = 0.5 * (perturbed + perturbed.conj().T)
    perturbed /= float(np.trace(perturbed).real)
    state_distance = trace_norm(perturbed - noiseless)

    cosh_lam = math.exp(log_cosh(lam))
    mu_max, mu_min = inst.mu_max, inst.mu_min
    d = delta_upper
    if d > 0.0:
        root = math.sqrt(mu_max + d)
        rhs_state = lam * d / (2.0 * root) * math.sinh(lam * root)
    else:
        rhs_state = 0.0
    lhs_state = cosh_lam * trace_norm(acc - acc_p)
    lhs_trace = cosh_lam * abs(den - den_p)
    lhs_norm = cosh_lam * den
    rhs_norm = max(math.cosh(lam * math.sqrt(mu_max)) / inst.dim,
                   math.cosh(lam * math.sqrt(mu_min)))
    slack = 1e-9 * max(1.0, rhs_state)
    inequalities = (
        FaultInequality("perturbed_state_bound", lhs_state, rhs_state,
                        lhs_state <= rhs_state + slack),
        FaultInequality("perturbed_trace_bound", lhs_trace, rhs_state,
                        lhs_trace <= rhs_state + slack),
        FaultInequality("normalisation_bound", lhs_norm, rhs_norm,
                        lhs_norm >= rhs_norm * (1.0 - 1e-12)),
    )

    threshold = epsilon / (beta * h.kappa) if beta > 0.0 else math.inf
    c = constant("fault_bound") if bound_constant is None else bound_constant
    bound_value = c * d * beta * h.kappa / epsilon * min(inst.dim, math.exp(min(2 * beta * h.kappa, 700.0)))
    return FaultReport(
        delta_upper=d,
        state_distance=state_distance,
        bound_value=bound_value,
        threshold=threshold,
        threshold_ok=d < threshold,
        lam=lam,
        inequalities=inequalities,
        noise=noise,
        constant=c,
    )
