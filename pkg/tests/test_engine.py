from __future__ import annotations

import math

import numpy as np
import pytest

from stopgibbs import (
    NoiseModel,
    build_K_ideal,
    build_K_product,
    cosh_schedule,
    exact_gibbs,
    expected_state_closed,
    expected_state_series,
    expected_stopping_time_exact,
    expected_stopping_time_series,
    general_schedule,
    gibbs_error_budget,
    lambda_param,
    mix_seed,
    parse_hamiltonian,
    perturb_instrument,
    run_ensemble,
    run_trajectory,
    sample_probability,
    tau_max_bound,
    trace_norm,
)
from stopgibbs.engine import RoundCapExceeded

from conftest import make_reference, random_density


def reference_setup(beta=0.5, eps=0.05):
    h = make_reference()
    inst = build_K_product(h, eps)
    lam = lambda_param(beta, h.kappa, eps, h.m)
    return h, inst, lam, cosh_schedule(lam)


def rho0_of(dim):
    return np.eye(dim, dtype=complex) / dim


class TestSeeds:
    def test_mix_is_stable_and_spread(self):
        a = mix_seed(42, 0)
        b = mix_seed(42, 1)
        c = mix_seed(43, 0)
        assert len({a, b, c}) == 3
        assert all(0 <= s < 2 ** 64 for s in (a, b, c))
        assert mix_seed(42, 0) == a


class TestRunTrajectory:
    def test_beta_zero_stops_immediately(self):
        h, inst, lam, sched = reference_setup(beta=0.0)
        assert lam == 0.0
        for seed in range(30):
            rec = run_trajectory(inst, sched, seed, track_state=True)
            assert rec.tau == 1 and rec.n_resets == 0 and rec.zero_run_at_stop == 0
            assert trace_norm(rec.final_state - rho0_of(4)) < 1e-12

    def test_general_r0_one(self):
        h, inst, _, _ = reference_setup()
        sched = general_schedule([1.0], c=1.0)
        rec = run_trajectory(inst, sched, 3, track_state=True)
        assert rec.tau == 1
        assert trace_norm(rec.final_state - rho0_of(4)) < 1e-12

    def test_spectral_and_matrix_kernels_agree_in_law(self):
        # same per-level probabilities, so same-seed runs coincide except on
        # measure ~1e-15 threshold collisions
        h, inst, lam, sched = reference_setup()
        chan, _ = perturb_instrument(inst, NoiseModel("kraus_perturbation", 0.0))
        for seed in range(200):
            a = run_trajectory(inst, sched, seed)
            b = run_trajectory(chan, sched, seed)
            assert (a.tau, a.n_resets, a.zero_run_at_stop) == (b.tau, b.n_resets, b.zero_run_at_stop)

    def test_final_state_is_conditional_power_state(self):
        h, inst, lam, sched = reference_setup()
        rec = run_trajectory(inst, sched, 11, track_state=True)
        mu = inst.spectrum.eigenvalues
        v = inst.spectrum.eigenvectors
        w = mu ** (2 * rec.zero_run_at_stop)
        expect = (v * (w / w.sum())) @ v.conj().T
        assert trace_norm(rec.final_state - expect) < 1e-12

    def test_round_cap(self):
        h, inst, lam, sched = reference_setup(beta=1.0, eps=0.02)
        with pytest.raises(RoundCapExceeded):
            run_trajectory(inst, sched, 0, round_cap=2)

    def test_pure_mode_validates_channel(self):
        h, inst, _, sched = reference_setup()
        chan, _ = perturb_instrument(inst, NoiseModel("depolarize_after", 0.1))
        with pytest.raises(ValueError, match="pure-state"):
            run_trajectory(chan, sched, 0, state_mode="pure")


class TestStopLevelStatistics:
    def test_histogram_matches_tree_probabilities(self):
        h, inst, lam, sched = reference_setup()
        n_traj = 30000
        stats = run_ensemble(inst, sched, n_traj, master_seed=99)
        mu = inst.spectrum.eigenvalues
        segments = stats.total_resets
        for n, count in enumerate(stats.stop_level_counts):
            w = sched.weights[n] if n <= sched.horizon else 0.0
            p = w * float(np.sum(mu ** (2 * n))) / h.dim
            expect = segments * p
            if expect < 25:
                continue
            sigma = math.sqrt(segments * p * (1 - p))
            assert abs(count - expect) <= 4 * sigma, f"level {n}"

    def test_runs_over_resets_matches_sample_probability(self):
        h, inst, lam, sched = reference_setup()
        stats = run_ensemble(inst, sched, 30000, master_seed=5)
        p = sample_probability(inst, lam)
        sigma = math.sqrt(p * (1 - p) / stats.total_resets)
        assert abs(stats.runs_over_resets - p) <= 4 * sigma


class TestRunEnsemble:
    def test_single_trajectory_reduces(self):
        h, inst, lam, sched = reference_setup()
        stats = run_ensemble(inst, sched, 1, master_seed=17)
        rec = run_trajectory(inst, sched, mix_seed(17, 0))
        assert stats.mean_tau == rec.tau
        assert stats.total_resets == 1 + rec.n_resets
        assert stats.tau_stderr == 0.0

    def test_mean_tau_within_4_stderr(self):
        h, inst, lam, sched = reference_setup()
        stats = run_ensemble(inst, sched, 20000, master_seed=1)
        exact = expected_stopping_time_exact(inst, lam)
        assert abs(stats.mean_tau - exact) <= 4 * stats.tau_stderr

    def test_reset_accounting_identity(self):
        h, inst, lam, sched = reference_setup()
        stats = run_ensemble(inst, sched, 5000, master_seed=2, keep_records=True)
        assert stats.total_rounds == stats.records[:, 0].sum()
        assert stats.total_resets == stats.n_trajectories + stats.records[:, 1].sum()
        mean_extra_resets = stats.records[:, 1].sum() / stats.n_trajectories
        assert stats.runs_over_resets * (1 + mean_extra_resets) == pytest.approx(1.0, rel=1e-12)

    def test_bitwise_determinism_across_workers(self):
        h, inst, lam, sched = reference_setup()
        a = run_ensemble(inst, sched, 4000, master_seed=8, track_state=True, workers=1)
        b = run_ensemble(inst, sched, 4000, master_seed=8, track_state=True, workers=2)
        assert a.mean_tau == b.mean_tau
        assert a.tau_stderr == b.tau_stderr
        assert a.total_resets == b.total_resets
        assert np.array_equal(a.stop_level_counts, b.stop_level_counts)
        assert np.array_equal(a.mean_state, b.mean_state)

    def test_seed_changes_results(self):
        h, inst, lam, sched = reference_setup()
        a = run_ensemble(inst, sched, 2000, master_seed=1)
        b = run_ensemble(inst, sched, 2000, master_seed=2)
        assert a.mean_tau != b.mean_tau

    def test_mean_state_against_evaluators(self):
        h, inst, lam, sched = reference_setup()
        n_traj = 20000
        stats = run_ensemble(inst, sched, n_traj, master_seed=3, track_state=True)
        closed = expected_state_closed(inst, lam)
        tol = 6 * h.dim / math.sqrt(n_traj)
        assert trace_norm(stats.mean_state - closed) <= tol

    def test_pure_mode_cross_validates_density_mode(self):
        h, inst, lam, sched = reference_setup()
        n_traj = 20000
        pure = run_ensemble(inst, sched, n_traj, master_seed=4, track_state=True,
                            state_mode="pure")
        closed = expected_state_closed(inst, lam)
        exact = expected_stopping_time_exact(inst, lam)
        assert abs(pure.mean_tau - exact) <= 4 * pure.tau_stderr
        assert trace_norm(pure.mean_state - closed) <= 6 * h.dim / math.sqrt(n_traj)

    def test_rejects_bad_input(self):
        h, inst, lam, sched = reference_setup()
        with pytest.raises(ValueError, match="n_trajectories"):
            run_ensemble(inst, sched, 0, master_seed=0)

    def test_trajectory_error_carries_index(self):
        h, inst, lam, sched = reference_setup(beta=1.0, eps=0.02)
        with pytest.raises(RoundCapExceeded, match="trajectory 0:"):
            run_ensemble(inst, sched, 10, master_seed=0, round_cap=2)


class TestExpectedStateSeries:
    def test_r0_one_returns_rho0(self):
        h, inst, _, _ = reference_setup()
        sched = general_schedule([1.0], c=1.0)
        rho = random_density(4, np.random.default_rng(6))
        out = expected_state_series(inst, sched, rho)
        assert trace_norm(out - rho) < 1e-12

    def test_matches_closed_form(self):
        for beta, eps in [(0.2, 0.1), (0.5, 0.05), (1.0, 0.02)]:
            h, inst, lam, sched = reference_setup(beta, eps)
            series = expected_state_series(inst, sched, rho0_of(4))
            closed = expected_state_closed(inst, lam)
            assert trace_norm(series - closed) <= 1e-8

    def test_general_even_series_against_matrix_powers(self):
        h, inst, _, _ = reference_setup()
        coeffs = [1.0, 0.5, 1.0 / 24.0, 1.0 / 720.0]
        sched = general_schedule(coeffs)
        rng = np.random.default_rng(13)
        for rho in (rho0_of(4), random_density(4, rng)):
            out = expected_state_series(inst, sched, rho)
            karr = inst.K.entries
            acc = np.zeros_like(karr)
            power = np.eye(4, dtype=complex)
            for a in coeffs:
                acc = acc + a * (power @ rho @ power)
                power = power @ karr
            acc /= np.trace(acc).real
            assert trace_norm(out - acc) <= 1e-8

    def test_insufficient_horizon_rejected(self):
        h, inst, lam, _ = reference_setup(beta=1.0, eps=0.05)
        sloppy = cosh_schedule(lam, tail_target=1e-6)
        with pytest.raises(ValueError, match="horizon"):
            expected_state_series(inst, sloppy, rho0_of(4), tol=1e-10)

    def test_tol_validation(self):
        h, inst, lam, sched = reference_setup()
        with pytest.raises(ValueError, match="tol"):
            expected_state_series(inst, sched, rho0_of(4), tol=1e-16)


class TestExpectedStateClosed:
    def test_lambda_zero(self):
        h, inst, _, _ = reference_setup()
        assert trace_norm(expected_state_closed(inst, 0.0) - rho0_of(4)) < 1e-14

    def test_product_distance_within_budget(self, suite):
        beta, eps = 0.5, 0.05
        for h in suite[:8]:
            inst = build_K_product(h, eps)
            lam = lambda_param(beta, h.kappa, eps, h.m)
            state = expected_state_closed(inst, lam)
            oracle = exact_gibbs(h, beta)
            dist = trace_norm(state - oracle.gibbs_state)
            assert dist <= gibbs_error_budget(beta, eps, h.kappa, h.m)


class TestStoppingTimeEvaluators:
    def test_lambda_zero_exact_one(self):
        h, inst, _, sched = reference_setup(beta=0.0)
        assert expected_stopping_time_exact(inst, 0.0) == 1.0
        assert expected_stopping_time_series(inst, sched, rho0_of(4)) == 1.0

    def test_series_matches_exact(self, suite):
        beta, eps = 0.4, 0.08
        for h in suite[:8]:
            inst = build_K_product(h, eps)
            lam = lambda_param(beta, h.kappa, eps, h.m)
            sched = cosh_schedule(lam)
            e = expected_stopping_time_exact(inst, lam)
            s = expected_stopping_time_series(inst, sched, rho0_of(h.dim))
            assert abs(s / e - 1.0) <= 1e-8

    def test_unit_eigenvalue_limit_branch(self):
        # m = 1 puts an eigenvalue exactly at 1; the limit branch must agree
        # with the series evaluator
        h = parse_hamiltonian('{"n_qubits": 1, "terms": [{"c": 1.0, "p": "Z"}]}')
        eps, beta = 0.1, 0.3
        inst = build_K_product(h, eps)
        assert float(np.max(inst.spectrum.eigenvalues)) == pytest.approx(1.0, abs=1e-15)
        lam = lambda_param(beta, h.kappa, eps, h.m)
        sched = cosh_schedule(lam)
        e = expected_stopping_time_exact(inst, lam)
        s = expected_stopping_time_series(inst, sched, rho0_of(2))
        assert abs(s / e - 1.0) <= 1e-8

    def test_limit_branch_against_nearby_evaluation(self):
        # second-order expansion vs the raw quotient just outside the branch
        lam = 7.0
        log_cosh = abs(lam) + math.log1p(math.exp(-2 * abs(lam))) - math.log(2.0)
        th = math.tanh(lam)
        for gap in (1e-4, 1e-5):
            mu = 1.0 - gap
            chat = math.exp(abs(lam * mu) + math.log1p(math.exp(-2 * abs(lam * mu)))
                            - math.log(2.0) - log_cosh)
            raw = (1.0 - mu * mu * chat) / (1.0 - mu * mu)
            expansion = 1.0 + 0.5 * lam * th - 0.5 * gap * (1.5 * lam * th + 0.5 * lam * lam)
            assert raw == pytest.approx(expansion, rel=5e-4)

    def test_exact_below_tau_max(self, suite):
        beta, eps = 0.5, 0.06
        for h in suite[:10]:
            inst = build_K_product(h, eps)
            lam = lambda_param(beta, h.kappa, eps, h.m)
            tight, coarse = tau_max_bound(eps, h.m, lam)
            e = expected_stopping_time_exact(inst, lam)
            assert e <= tight + 1e-10
            assert tight <= coarse + 1e-10

    def test_general_r0_one_gives_one(self):
        h, inst, _, _ = reference_setup()
        sched = general_schedule([1.0], c=1.0)
        assert expected_stopping_time_series(inst, sched, rho0_of(4)) == 1.0

    def test_uncertifiable_tail_raises(self):
        # m = 1 puts an eigenvalue of K at exactly 1; a general schedule that
        # keeps stopping mass in reserve then has a non-decaying series and the
        # evaluator must refuse rather than truncate silently
        h = parse_hamiltonian('{"n_qubits": 1, "terms": [{"c": 1.0, "p": "Z"}]}')
        inst = build_K_product(h, 0.1)
        sched = general_schedule([1.0, 0.5], c=0.4)
        with pytest.raises(ValueError, match="cannot certify"):
            expected_stopping_time_series(inst, sched, rho0_of(2), max_extra=2000)


class TestTauMaxBound:
    def test_m1_coarse_only(self):
        tight, coarse = tau_max_bound(0.1, 1, 3.0)
        assert math.isinf(tight) and math.isfinite(coarse)

    def test_epsilon_near_one_finite(self):
        tight, _ = tau_max_bound(0.999, 3, 5.0)
        assert math.isfinite(tight)

    def test_beta_zero_tight_at_least_one(self):
        for m in (2, 3, 5):
            tight, _ = tau_max_bound(0.2, m, 0.0)
            assert tight >= 1.0


class TestSampleProbability:
    def test_lambda_zero(self):
        h, inst, _, _ = reference_setup()
        assert sample_probability(inst, 0.0) == pytest.approx(1.0)

    def test_matches_series(self):
        h, inst, lam, sched = reference_setup()
        mu = inst.spectrum.eigenvalues
        series = sum(
            sched.weights[n] * float(np.sum(mu ** (2 * n))) / h.dim
            for n in range(sched.horizon + 1)
        )
        assert sample_probability(inst, lam) == pytest.approx(series, rel=1e-11)


class TestIdealVariantEndToEnd:
    def test_ideal_instrument_runs(self):
        h = make_reference()
        inst = build_K_ideal(h, 0.05)
        lam = lambda_param(0.5, h.kappa, 0.05, h.m)
        sched = cosh_schedule(lam)
        stats = run_ensemble(inst, sched, 5000, master_seed=10)
        exact = expected_stopping_time_exact(inst, lam)
        assert abs(stats.mean_tau - exact) <= 4 * stats.tau_stderr
