from __future__ import annotations

import math

import numpy as np
import pytest

from stopgibbs import (
    NoiseModel,
    build_K_ideal,
    build_K_product,
    cosh_schedule,
    estimate_observable,
    estimate_partition,
    exact_gibbs,
    exact_partition,
    fault_resilience_experiment,
    gibbs_error_budget,
    lambda_param,
    partition_exact_inversion,
    run_ensemble,
    sample_probability,
    to_dense,
    trace_norm,
)
from stopgibbs.hamiltonian import log_trace_exp
from stopgibbs.linalg import log_cosh

from conftest import make_reference


class TestEstimatePartition:
    def test_beta_zero_exact(self):
        h = make_reference()
        inst = build_K_product(h, 0.05)
        sched = cosh_schedule(0.0)
        stats = run_ensemble(inst, sched, 2000, master_seed=0)
        est = estimate_partition(stats, 0.0, h.kappa, h.m, h.dim, 0.05,
                                 log_Z_exact=exact_partition(h, 0.0))
        assert est.log_Z_hat == pytest.approx(math.log(h.dim))
        assert est.rel_error == pytest.approx(0.0, abs=1e-14)

    def test_moderate_run_within_budget(self):
        h = make_reference()
        beta, eps = 0.5, 0.05
        inst = build_K_product(h, eps)
        lam = lambda_param(beta, h.kappa, eps, h.m)
        stats = run_ensemble(inst, sched := cosh_schedule(lam), 40000, master_seed=21)
        est = estimate_partition(stats, beta, h.kappa, h.m, h.dim, eps,
                                 log_Z_exact=exact_partition(h, beta))
        assert est.rel_error <= est.bound + 4 * est.stat_error

    def test_estimator_formula(self):
        h = make_reference()
        beta, eps = 0.3, 0.1
        inst = build_K_product(h, eps)
        lam = lambda_param(beta, h.kappa, eps, h.m)
        stats = run_ensemble(inst, cosh_schedule(lam), 3000, master_seed=2)
        est = estimate_partition(stats, beta, h.kappa, h.m, h.dim, eps)
        expect = math.log(h.dim) + beta * h.kappa * (2 * h.m - 1) + math.log(stats.runs_over_resets)
        assert est.log_Z_hat == expect
        assert est.rel_error is None

    def test_rel_error_consistency(self):
        h = make_reference()
        beta, eps = 0.5, 0.05
        inst = build_K_product(h, eps)
        lam = lambda_param(beta, h.kappa, eps, h.m)
        stats = run_ensemble(inst, cosh_schedule(lam), 5000, master_seed=7)
        log_z = exact_partition(h, beta)
        est = estimate_partition(stats, beta, h.kappa, h.m, h.dim, eps, log_Z_exact=log_z)
        assert abs(math.exp(est.log_Z_hat - log_z) - 1.0) == pytest.approx(est.rel_error, abs=1e-12)

    def test_bias_scales_linearly_in_epsilon(self):
        # the deterministic part of the estimator error (infinite ensemble limit)
        h = make_reference()
        beta = 0.5
        eps_grid = [0.08, 0.04, 0.02, 0.01]
        biases = []
        for eps in eps_grid:
            inst = build_K_product(h, eps)
            lam = lambda_param(beta, h.kappa, eps, h.m)
            log_z_hat = (math.log(h.dim) + beta * h.kappa * (2 * h.m - 1)
                         + math.log(sample_probability(inst, lam)))
            biases.append(abs(math.expm1(log_z_hat - exact_partition(h, beta))))
        slope = np.polyfit(np.log(eps_grid), np.log(biases), 1)[0]
        assert abs(slope - 1.0) <= 0.2

    def test_statistical_error_scales_as_inverse_sqrt_n(self):
        h = make_reference()
        beta, eps = 0.5, 0.05
        inst = build_K_product(h, eps)
        lam = lambda_param(beta, h.kappa, eps, h.m)
        sched = cosh_schedule(lam)
        errs = []
        for n in (2000, 8000):
            stats = run_ensemble(inst, sched, n, master_seed=31)
            errs.append(estimate_partition(stats, beta, h.kappa, h.m, h.dim, eps).stat_error)
        assert errs[1] / errs[0] == pytest.approx(0.5, abs=0.1)


class TestPartitionExactInversion:
    def test_identity_against_oracle(self, suite):
        beta, eps = 0.5, 0.05
        for h in suite[:6]:
            inst = build_K_ideal(h, eps)
            lam = lambda_param(beta, h.kappa, eps, h.m)
            s = sample_probability(inst, lam)
            z = partition_exact_inversion(s, inst, beta, h)
            assert z == pytest.approx(math.exp(exact_partition(h, beta)), rel=1e-9)

    def test_beta_zero(self):
        h = make_reference()
        inst = build_K_ideal(h, 0.1)
        z = partition_exact_inversion(1.0, inst, 0.0, h)
        assert z == pytest.approx(h.dim, rel=1e-12)

    def test_correction_term_size(self):
        # dropping the correction leaves a residual of e^{-2 beta kappa/eps} tr e^{beta H}
        h = make_reference()
        beta, eps = 0.5, 0.2
        inst = build_K_ideal(h, eps)
        lam = lambda_param(beta, h.kappa, eps, h.m)
        s = sample_probability(inst, lam)
        z = math.exp(exact_partition(h, beta))
        z_nocorr = math.exp(math.log(2.0) + math.log(h.dim) + log_cosh(lam)
                            - beta * h.kappa / eps + math.log(s))
        residual = math.exp(-2.0 * beta * h.kappa / eps + log_trace_exp(to_dense(h).entries, beta))
        assert z_nocorr - z == pytest.approx(residual, rel=1e-9)

    def test_requires_ideal_variant(self):
        h = make_reference()
        inst = build_K_product(h, 0.1)
        with pytest.raises(ValueError, match="ideal"):
            partition_exact_inversion(0.5, inst, 0.5, h)


class TestEstimateObservable:
    def test_identity_observable(self):
        h = make_reference()
        inst = build_K_product(h, 0.05)
        lam = lambda_param(0.5, h.kappa, 0.05, h.m)
        stats = run_ensemble(inst, cosh_schedule(lam), 3000, master_seed=5, track_state=True)
        mean, stderr = estimate_observable(stats, np.eye(4), inst)
        assert mean == pytest.approx(1.0, abs=1e-12)
        assert stderr == pytest.approx(0.0, abs=1e-12)

    def test_energy_matches_gibbs(self):
        h = make_reference()
        beta, eps = 0.5, 0.02
        inst = build_K_product(h, eps)
        lam = lambda_param(beta, h.kappa, eps, h.m)
        stats = run_ensemble(inst, cosh_schedule(lam), 30000, master_seed=6, track_state=True)
        hd = to_dense(h).entries
        mean, stderr = estimate_observable(stats, hd, inst)
        oracle = float(np.trace(hd @ exact_gibbs(h, beta).gibbs_state).real)
        budget = gibbs_error_budget(beta, eps, h.kappa, h.m) * np.linalg.norm(hd, 2)
        assert abs(mean - oracle) <= 4 * stderr + budget

    def test_z_observable_at_infinite_temperature(self):
        h = make_reference()
        inst = build_K_product(h, 0.05)
        stats = run_ensemble(inst, cosh_schedule(0.0), 2000, master_seed=1, track_state=True)
        z1 = np.kron(np.diag([1.0, -1.0]), np.eye(2)).astype(complex)
        mean, stderr = estimate_observable(stats, z1, inst)
        assert mean == pytest.approx(0.0, abs=1e-12)

    def test_mean_equals_trace_against_mean_state(self):
        h = make_reference()
        inst = build_K_product(h, 0.05)
        lam = lambda_param(0.4, h.kappa, 0.05, h.m)
        stats = run_ensemble(inst, cosh_schedule(lam), 4000, master_seed=9, track_state=True)
        obs = np.diag([0.3, -0.1, 0.7, 0.2]).astype(complex)
        mean, _ = estimate_observable(stats, obs, inst)
        assert mean == pytest.approx(float(np.trace(obs @ stats.mean_state).real), abs=1e-10)

    def test_dimension_mismatch(self):
        h = make_reference()
        inst = build_K_product(h, 0.05)
        stats = run_ensemble(inst, cosh_schedule(0.0), 100, master_seed=0)
        with pytest.raises(ValueError, match="does not match"):
            estimate_observable(stats, np.eye(2), inst)


class TestGibbsErrorBudget:
    def test_vanishes_with_epsilon(self):
        vals = [gibbs_error_budget(0.5, e, 2.0, 2) for e in (1e-2, 1e-4, 1e-6)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-4

    def test_linear_part_halves(self):
        beta, kappa, m = 0.5, 2.0, 2
        for eps in (0.1, 0.05):
            full = gibbs_error_budget(beta, eps, kappa, m)
            half = gibbs_error_budget(beta, eps / 2, kappa, m)
            lin = full - math.exp(-beta * kappa / eps)
            lin_half = half - math.exp(-beta * kappa / (eps / 2))
            assert lin_half == pytest.approx(0.5 * lin, rel=1e-12)

    def test_explicit_constant(self):
        assert gibbs_error_budget(0.5, 0.1, 2.0, 2, budget_constant=1.0) == pytest.approx(
            0.5 * 0.1 * 2.0 * 4 + math.exp(-0.5 * 2.0 / 0.1))


class TestFaultResilience:
    def test_zero_strength(self):
        h = make_reference()
        report = fault_resilience_experiment(h, 0.05, 0.5, NoiseModel("depolarize_after", 0.0))
        assert report.delta_upper == 0.0
        assert report.state_distance <= 1e-10
        assert report.threshold_ok

    def test_depolarize_sweep_linear(self):
        h = make_reference()
        strengths = [1e-4, 2e-4, 4e-4]
        dists = []
        for p in strengths:
            rep = fault_resilience_experiment(h, 0.05, 0.5, NoiseModel("depolarize_after", p))
            assert rep.threshold_ok
            assert all(q.holds for q in rep.inequalities)
            assert rep.state_distance <= rep.bound_value
            dists.append(rep.state_distance)
        slope = np.polyfit(np.log(strengths), np.log(dists), 1)[0]
        assert abs(slope - 1.0) <= 0.15

    def test_inequalities_on_suite(self, suite):
        for h in suite[:6]:
            rep = fault_resilience_experiment(h, 0.08, 0.4,
                                              NoiseModel("kraus_perturbation", 1e-4, seed=2))
            for q in rep.inequalities:
                assert q.holds, q.name

    def test_threshold_flag(self):
        h = make_reference()
        # strength chosen to push delta_upper over eps/(beta*kappa)
        rep = fault_resilience_experiment(h, 0.05, 0.5, NoiseModel("depolarize_after", 0.2))
        assert rep.threshold == pytest.approx(0.05)
        assert not rep.threshold_ok
        for q in rep.inequalities:
            assert q.holds

    def test_hamiltonian_noise_kind(self):
        h = make_reference()
        rep = fault_resilience_experiment(h, 0.06, 0.5,
                                          NoiseModel("hamiltonian_perturbation", 0.01, seed=4))
        assert rep.threshold_ok
        assert rep.state_distance <= rep.bound_value
        assert all(q.holds for q in rep.inequalities)
