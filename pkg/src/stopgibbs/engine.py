"""Stopped-process simulation and its deterministic companion evaluators.

Round semantics (one round per loop iteration, zero-run counter n starts at 0,
state starts at I/D):

1. draw the stop coin with probability r_n; on stop the trajectory ends and
   tau = completed rounds + 1 (the coin round itself counts);
2. otherwise apply the instrument: outcome 0 (probability tr K rho K)
   advances the zero run, outcome 1 resets the state to I/D and the counter
   to 0.

The stop coin precedes the measurement, so r_0 can fire before anything is
measured and tau >= 1 always; at lam = 0 every trajectory stops in exactly
one round.

For an exact instrument started from I/D the conditional state after n
successes is a fixed function of n (K^{2n} in the eigenbasis, normalised), so
the density-matrix trajectory reduces to a jump process on
the zero-run counter with precomputed per-level success probabilities; this
kernel is exact, not an approximation.  Opaque perturbed channels and the
opt-in pure-state unravelling (which resamples a uniformly random basis state
at every reset) use the generic matrix kernel instead.

Ensembles derive per-trajectory seeds with a fixed public 64-bit mix of
(master_seed, index), simulate in fixed chunks of 1024 trajectories, and
reduce chunk partials in chunk order: results are bit-identical for a given
master seed at any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .instrument import Instrument, PerturbedChannel
from .linalg import log_cosh, matrix_function
from .stopping import StoppingSchedule, _log_tail_bound, extend_cosh_rates, suggest_horizon

DEFAULT_ROUND_CAP = 10 ** 9
CHUNK_SIZE = 1024
_RNG_BLOCK = 512
_NEAR_ONE = 1e-6
_MASK64 = (1 << 64) - 1


class RoundCapExceeded(RuntimeError):
    """A trajectory ran past the round cap without stopping."""


def mix_seed(master_seed: int, index: int) -> int:
    """Fixed 64-bit per-trajectory seed: splitmix64 finalizer of master + (i+1)*gamma."""
    z = (master_seed + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Outcome of one run: stopping time, outcome-1 resets, stop level, final state."""

    tau: int
    n_resets: int
    zero_run_at_stop: int
    final_state: np.ndarray | None = None

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.tau < self.zero_run_at_stop + 1:
            raise ValueError(
                f"tau = {self.tau} cannot be below zero_run_at_stop + 1 = {self.zero_run_at_stop + 1}"
            )


@dataclass(frozen=True)
class EnsembleStats:
    """Index-ordered aggregate of an ensemble of trajectories.

    ``total_resets`` counts every return to I/D: the initial preparation of
    each run plus all outcome-1 resets, so it equals the number of process
    segments and ``runs_over_resets`` estimates the per-segment probability
    of producing a sample.
    """

    n_trajectories: int
    total_rounds: int
    total_resets: int
    mean_tau: float
    tau_stderr: float
    runs_over_resets: float
    master_seed: int
    stop_level_counts: np.ndarray
    mean_state: np.ndarray | None = None
    records: np.ndarray | None = None

    def __post_init__(self):
        if self.total_resets < self.n_trajectories:
            raise ValueError("every run contributes at least its initial preparation")
        if not 0.0 < self.runs_over_resets <= 1.0:
            raise ValueError(f"runs_over_resets = {self.runs_over_resets!r} outside (0, 1]")
        if self.mean_state is not None:
            tr = float(np.trace(self.mean_state).real)
            if abs(tr - 1.0) > 1e-10:
                raise ValueError(f"mean_state trace drifted to {tr!r}")


class _RateTable:
    """Stop rates r_n with on-demand extension past the schedule horizon.

    Cosh schedules continue through the exact recursion (the rates converge to
    1, so extension terminates); general schedules have no stopping mass past
    their horizon and read as 0 there.
    """

    def __init__(self, sched: StoppingSchedule):
        self.rates = [float(x) for x in sched.rates]
        self._lam = sched.lam
        self._cosh = sched.kind == "cosh"

    def rate(self, n: int) -> float:
        if n < len(self.rates):
            return self.rates[n]
        if not self._cosh:
            return 0.0
        extend_cosh_rates(self._lam, self.rates, n)
        return self.rates[n]


class _SpectralProcess:
    """Per-level success probabilities and conditional states from I/D.

    With eigenvalues mu of K, the success probability after n prior successes
    is q_n = tr K^{2n+2} / tr K^{2n}; computed from the rescaled powers
    (mu/mu_max)^{2n} so that nothing underflows at any level.
    """

    def __init__(self, inst: Instrument):
        mu = np.abs(inst.spectrum.eigenvalues)
        self.vectors = inst.spectrum.eigenvectors
        top = float(mu.max())
        self.mu_top2 = top * top
        self.nu2 = (mu / top) ** 2
        self._pow = np.ones_like(self.nu2)
        self._sum = float(self._pow.sum())
        self.qs: list[float] = []

    def ensure(self, upto: int) -> None:
        while len(self.qs) <= upto:
            self._pow = self._pow * self.nu2
            s_next = float(self._pow.sum())
            self.qs.append(self.mu_top2 * s_next / self._sum)
            self._sum = s_next

    def success(self, n: int) -> float:
        if n >= len(self.qs):
            self.ensure(n)
        return self.qs[n]

    def state_weights(self, n: int) -> np.ndarray:
        """Eigenbasis diagonal of the conditional state after n successes."""
        v = self.nu2 ** n
        return v / v.sum()

    def state_matrix(self, weights: np.ndarray) -> np.ndarray:
        out = (self.vectors * weights) @ self.vectors.conj().T
        return 0.5 * (out + out.conj().T)


def _run_spectral(proc: _SpectralProcess, rtab: _RateTable, rng: np.random.Generator,
                  round_cap: int) -> tuple[int, int, int]:
    """Jump-process kernel; returns (tau, n_resets, zero_run_at_stop)."""
    rates = rtab.rates
    qs = proc.qs
    rounds = 0
    resets = 0
    n = 0
    buf: list[float] = []
    pos = 0
    while True:
        if pos >= len(buf):
            buf = rng.random(_RNG_BLOCK).tolist()
            pos = 0
        u = buf[pos]
        pos += 1
        if n < len(rates):
            r = rates[n]
        else:
            r = rtab.rate(n)
        if u < r:
            return rounds + 1, resets, n
        if pos >= len(buf):
            buf = rng.random(_RNG_BLOCK).tolist()
            pos = 0
        u2 = buf[pos]
        pos += 1
        rounds += 1
        if rounds >= round_cap:
            raise RoundCapExceeded(
                f"trajectory exceeded {round_cap} rounds (resets={resets}, zero run={n})"
            )
        if n >= len(qs):
            proc.ensure(n)
        if u2 < qs[n]:
            n += 1
        else:
            resets += 1
            n = 0


def _run_matrix(apply_chan, dim: int, rtab: _RateTable, rng: np.random.Generator,
                round_cap: int, pure: bool, k_matrix: np.ndarray | None):
    """Generic kernel applying the channel per round; returns (tau, resets, n, state)."""
    eye_over_d = np.eye(dim, dtype=complex) / dim
    if pure:
        if k_matrix is None:
            raise ValueError("pure-state mode needs a single-Kraus channel")
        j = int(rng.random() * dim)
        psi = np.zeros(dim, dtype=complex)
        psi[j] = 1.0
    else:
        rho = eye_over_d.copy()
    rounds = 0
    resets = 0
    n = 0
    while True:
        if rng.random() < rtab.rate(n):
            tau = rounds + 1
            state = np.outer(psi, psi.conj()) if pure else rho
            return tau, resets, n, state
        rounds += 1
        if rounds >= round_cap:
            raise RoundCapExceeded(
                f"trajectory exceeded {round_cap} rounds (resets={resets}, zero run={n})"
            )
        if pure:
            phi = k_matrix @ psi
            p = float(np.vdot(phi, phi).real)
            if rng.random() < p:
                psi = phi / math.sqrt(p)
                n += 1
            else:
                resets += 1
                n = 0
                j = int(rng.random() * dim)
                psi = np.zeros(dim, dtype=complex)
                psi[j] = 1.0
        else:
            sigma = apply_chan(rho)
            p = min(max(float(np.trace(sigma).real), 0.0), 1.0)
            if rng.random() < p:
                rho = sigma / p
                n += 1
            else:
                resets += 1
                n = 0
                rho = eye_over_d.copy()


def run_trajectory(inst, sched: StoppingSchedule, rng_seed: int, track_state: bool = False,
                   *, state_mode: str = "density",
                   round_cap: int = DEFAULT_ROUND_CAP) -> TrajectoryRecord:
    """Simulate one run of the stopped process from I/D."""
    if state_mode not in ("density", "pure"):
        raise ValueError(f"state_mode must be 'density' or 'pure', got {state_mode!r}")
    rtab = _RateTable(sched)
    rng = np.random.default_rng(rng_seed)
    if isinstance(inst, Instrument) and state_mode == "density":
        proc = _SpectralProcess(inst)
        tau, resets, n = _run_spectral(proc, rtab, rng, round_cap)
        state = proc.state_matrix(proc.state_weights(n)) if track_state else None
        return TrajectoryRecord(tau=tau, n_resets=resets, zero_run_at_stop=n, final_state=state)
    apply_chan, dim, k_matrix = _channel_parts(inst)
    if state_mode == "pure" and k_matrix is None:
        raise ValueError("pure-state mode requires a single-Kraus channel (no depolarising noise)")
    tau, resets, n, state = _run_matrix(apply_chan, dim, rtab, rng, round_cap,
                                        state_mode == "pure", k_matrix)
    return TrajectoryRecord(tau=tau, n_resets=resets, zero_run_at_stop=n,
                            final_state=state if track_state else None)


def _channel_parts(obj):
    """(apply, dim, single_kraus_matrix_or_None) for an instrument-like object."""
    if isinstance(obj, Instrument):
        k = obj.K.entries
        return (lambda rho: k @ rho @ k), obj.dim, k
    if isinstance(obj, PerturbedChannel):
        return obj.apply, obj.dim, obj.K_prime
    raise TypeError(f"expected an Instrument or PerturbedChannel, got {type(obj).__name__}")


def _trace_growth(obj) -> float:
    """Upper bound on tr E(rho) / tr rho for PSD rho."""
    if isinstance(obj, Instrument):
        return obj.mu_max
    if isinstance(obj, PerturbedChannel):
        return obj.base.mu_max + obj.delta_upper
    raise TypeError(f"expected an Instrument or PerturbedChannel, got {type(obj).__name__}")


class _EnsembleContext:
    """Per-process state for chunked ensemble simulation."""

    def __init__(self, inst, sched, cfg: dict):
        self.inst = inst
        self.sched = sched
        self.cfg = cfg
        self.rtab = _RateTable(sched)
        self.spectral = isinstance(inst, Instrument) and cfg["state_mode"] == "density"
        if self.spectral:
            self.proc = _SpectralProcess(inst)
            self.dim = inst.dim
        else:
            self.apply_chan, self.dim, self.k_matrix = _channel_parts(inst)
            if cfg["state_mode"] == "pure" and self.k_matrix is None:
                raise ValueError("pure-state mode requires a single-Kraus channel")

    def run_chunk(self, bounds: tuple[int, int]) -> dict:
        start, stop = bounds
        cfg = self.cfg
        master = cfg["master_seed"]
        cap = cfg["round_cap"]
        track = cfg["track_state"]
        keep = cfg["keep_records"]
        sum_tau = 0
        sum_tau_sq = 0
        sum_resets = 0
        levels: list[int] = []
        state_acc = None
        recs = np.empty((stop - start, 3), dtype=np.int64) if keep else None
        for i in range(start, stop):
            rng = np.random.default_rng(mix_seed(master, i))
            try:
                if self.spectral:
                    tau, resets, n = _run_spectral(self.proc, self.rtab, rng, cap)
                    if track:
                        w = self.proc.state_weights(n)
                        state_acc = w if state_acc is None else state_acc + w
                else:
                    tau, resets, n, state = _run_matrix(
                        self.apply_chan, self.dim, self.rtab, rng, cap,
                        cfg["state_mode"] == "pure", getattr(self, "k_matrix", None))
                    if track:
                        state_acc = state if state_acc is None else state_acc + state
            except RoundCapExceeded as e:
                raise RoundCapExceeded(f"trajectory {i}: {e}") from e
            sum_tau += tau
            sum_tau_sq += tau * tau
            sum_resets += resets
            if n >= len(levels):
                levels.extend([0] * (n + 1 - len(levels)))
            levels[n] += 1
            if keep:
                recs[i - start] = (tau, resets, n)
        return {
            "count": stop - start,
            "sum_tau": sum_tau,
            "sum_tau_sq": sum_tau_sq,
            "sum_resets": sum_resets,
            "levels": levels,
            "state_acc": state_acc,
            "records": recs,
        }


_WORKER_CTX: _EnsembleContext | None = None


def _init_worker(inst, sched, cfg):
    global _WORKER_CTX
    _WORKER_CTX = _EnsembleContext(inst, sched, cfg)


def _chunk_task(bounds):
    return _WORKER_CTX.run_chunk(bounds)


def run_ensemble(inst, sched: StoppingSchedule, n_trajectories: int, master_seed: int,
                 track_state: bool = False, *, workers: int = 1, state_mode: str = "density",
                 keep_records: bool = False,
                 round_cap: int = DEFAULT_ROUND_CAP) -> EnsembleStats:
    """Simulate an ensemble with per-trajectory seeds mix(master_seed, i).

    Aggregation is performed in trajectory-index order inside fixed chunks and
    in chunk order across them, so the returned statistics are bit-identical
    for a given master seed regardless of ``workers``.
    """
    if n_trajectories < 1:
        raise ValueError(f"n_trajectories must be >= 1, got {n_trajectories}")
    if state_mode not in ("density", "pure"):
        raise ValueError(f"state_mode must be 'density' or 'pure', got {state_mode!r}")
    cfg = {
        "master_seed": int(master_seed),
        "round_cap": int(round_cap),
        "track_state": bool(track_state),
        "keep_records": bool(keep_records),
        "state_mode": state_mode,
    }
    bounds = [(lo, min(lo + CHUNK_SIZE, n_trajectories))
              for lo in range(0, n_trajectories, CHUNK_SIZE)]
    if workers <= 1 or len(bounds) == 1:
        ctx = _EnsembleContext(inst, sched, cfg)
        partials = [ctx.run_chunk(b) for b in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(inst, sched, cfg)) as pool:
            partials = list(pool.map(_chunk_task, bounds, chunksize=1))

    sum_tau = 0
    sum_tau_sq = 0
    sum_resets = 0
    levels: list[int] = []
    state_acc = None
    rec_parts = []
    for part in partials:
        sum_tau += part["sum_tau"]
        sum_tau_sq += part["sum_tau_sq"]
        sum_resets += part["sum_resets"]
        pl = part["levels"]
        if len(pl) > len(levels):
            levels.extend([0] * (len(pl) - len(levels)))
        for i, cnt in enumerate(pl):
            levels[i] += cnt
        if part["state_acc"] is not None:
            state_acc = part["state_acc"] if state_acc is None else state_acc + part["state_acc"]
        if keep_records:
            rec_parts.append(part["records"])

    n = n_trajectories
    mean_tau = sum_tau / n
    if n > 1:
        var = (sum_tau_sq - sum_tau * sum_tau / n) / (n - 1)
        stderr = math.sqrt(max(var, 0.0) / n)
    else:
        stderr = 0.0
    mean_state = None
    if track_state and state_acc is not None:
        if state_acc.ndim == 1:
            ctx_proc = _SpectralProcess(inst)
            mean_state = ctx_proc.state_matrix(state_acc / n)
        else:
            ms = state_acc / n
            mean_state = 0.5 * (ms + ms.conj().T)
    return EnsembleStats(
        n_trajectories=n,
        total_rounds=sum_tau,
        total_resets=n + sum_resets,
        mean_tau=mean_tau,
        tau_stderr=stderr,
        runs_over_resets=n / (n + sum_resets),
        master_seed=int(master_seed),
        stop_level_counts=np.array(levels, dtype=np.int64),
        mean_state=mean_state,
        records=np.concatenate(rec_parts) if keep_records and rec_parts else None,
    )


# ---------------------------------------------------------------------------
# deterministic evaluators
# ---------------------------------------------------------------------------

def _vec_log_cosh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def _check_rho0(rho0: np.ndarray, dim: int) -> np.ndarray:
    arr = np.asarray(rho0, dtype=complex)
    if arr.shape != (dim, dim):
        raise ValueError(f"rho0 has shape {arr.shape}, expected ({dim}, {dim})")
    tr = float(np.trace(arr).real)
    if abs(tr - 1.0) > 1e-8:
        raise ValueError(f"rho0 must have unit trace, got {tr!r}")
    return arr


def weighted_channel_sums(channel, sched: StoppingSchedule, rho0: np.ndarray
                          ) -> tuple[np.ndarray, float]:
    """(sum_n w_n E^n(rho0), sum_n w_n tr E^n(rho0)) over the schedule horizon."""
    apply_chan, dim, _ = _channel_parts(channel)
    sig = _check_rho0(rho0, dim)
    acc = np.zeros_like(sig)
    den = 0.0
    weights = sched.weights
    last = sched.horizon
    for n in range(last + 1):
        w = float(weights[n])
        acc = acc + w * sig
        den += w * float(np.trace(sig).real)
        if n < last:
            sig = apply_chan(sig)
    return acc, den


def _series_tail_mass(sched: StoppingSchedule, growth: float) -> float:
    """Certified bound on sum_{n > horizon} w_n * growth^n."""
    if sched.kind != "cosh" or sched.lam == 0.0:
        return 0.0
    lam_eff = sched.lam * math.sqrt(max(growth, 0.0))
    log_tail = _log_tail_bound(lam_eff, sched.horizon)
    return math.exp(log_tail - log_cosh(sched.lam))


def expected_state_series(channel, sched: StoppingSchedule, rho0: np.ndarray,
                          tol: float = 1e-10) -> np.ndarray:
    """Truncated series sum_n w_n E^n(rho0), normalised, with certified error < tol.

    Works for any valid schedule, any unit-trace rho0, and opaque channel
    evaluators; this is the only route for perturbed channels, which have no
    closed form.
    """
    if tol < 1e-14:
        raise ValueError(f"tol must be >= 1e-14, got {tol}")
    acc, den = weighted_channel_sums(channel, sched, rho0)
    tail = _series_tail_mass(sched, _trace_growth(channel))
    if den <= 0.0:
        raise ValueError("series normalisation vanished; schedule carries no stopping mass here")
    err_bound = 2.0 * tail / den
    if err_bound > tol:
        needed = suggest_horizon(sched.lam, tol * den / 4.0)
        raise ValueError(
            f"certified truncation error {err_bound:.3e} exceeds tol = {tol:g}; "
            f"rebuild the schedule with horizon >= {needed}"
        )
    out = acc / den
    out = 0.5 * (out + out.conj().T)
    return out / float(np.trace(out).real)


def expected_state_closed(inst: Instrument, lam: float) -> np.ndarray:
    """Closed form cosh(lam K) / tr cosh(lam K) for the canonical schedule from I/D."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    mu = inst.spectrum.eigenvalues
    shift = float(_vec_log_cosh(lam * mu).max())
    scaled = matrix_function(inst.K, lambda x: _vec_log_cosh(lam * x), log_shift=shift)
    out = scaled.entries / float(np.trace(scaled.entries).real)
    return 0.5 * (out + out.conj().T)


def sample_probability(inst: Instrument, lam: float) -> float:
    """Per-segment probability of producing a sample: tr cosh(lam K) / (D cosh lam)."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    mu = inst.spectrum.eigenvalues
    return float(np.mean(np.exp(_vec_log_cosh(lam * mu) - log_cosh(lam))))


def expected_stopping_time_exact(inst: Instrument, lam: float) -> float:
    """Expected stopping time from the spectrum of K, scaled by cosh(lam) throughout.

    Per eigenvalue mu the contribution is
    (cosh lam - mu^2 cosh(lam mu)) / (1 - mu^2); the singularity at mu -> 1 is
    removable with limit cosh lam + (lam/2) sinh lam, and within 1e-6 of 1 a
    second-order expansion of the quotient is used.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    mu = np.abs(inst.spectrum.eigenvalues)
    th = math.tanh(lam)
    num = 0.0
    den = 0.0
    for m_i in mu:
        chat = math.exp(log_cosh(lam * m_i) - log_cosh(lam))
        den += chat
        gap = 1.0 - m_i
        if abs(gap) < _NEAR_ONE:
            num += 1.0 + 0.5 * lam * th - 0.5 * gap * (1.5 * lam * th + 0.5 * lam * lam)
        else:
            num += (1.0 - m_i * m_i * chat) / (1.0 - m_i * m_i)
    return num / den


def expected_stopping_time_series(channel, sched: StoppingSchedule, rho0: np.ndarray,
                                  rel_tol: float = 1e-10, max_extra: int = 65536) -> float:
    """Series form sum R_n tr E^n / sum w_n tr E^n with certified relative error.

    The sums are extended past the schedule horizon (cosh rates continue
    through the recursion, general rates read as 0) until the remaining tail
    is certifiably below ``rel_tol``; if the growth bound is 1 and the
    survivals do not decay, an explicit error is raised rather than silently
    truncating.
    """
    rtab = _RateTable(sched)
    apply_chan, dim, _ = _channel_parts(channel)
    sig = _check_rho0(rho0, dim)
    growth = _trace_growth(channel)
    num = 0.0
    den = 0.0
    surv = 1.0
    cn = 1.0
    n = 0
    limit = sched.horizon + max_extra
    while True:
        r = rtab.rate(n)
        t = float(np.trace(sig).real)
        num += surv * t
        den += r * surv * t
        surv_next = surv * (1.0 - r)
        if n >= sched.horizon:
            # tail over k > n: R_k <= surv_next * (1-r)^(k-n-1) since the rates
            # never decrease past the horizon (they converge to 1 for the cosh
            # recursion; general schedules read r = 0 there, where the bound is
            # exact), and tr E^k <= growth^k.
            g = (1.0 - r) * growth
            if g < 1.0 and den > 0.0:
                tail = surv_next * cn * growth / (1.0 - g)
                if tail <= 0.5 * rel_tol * den:
                    break
            if n >= limit:
                raise ValueError(
                    "cannot certify the stopping-time series: growth bound "
                    f"{growth!r} with slowly decaying survivals after {n} terms"
                )
        surv = surv_next
        cn *= growth
        sig = apply_chan(sig)
        n += 1
    return num / den


def tau_max_bound(epsilon: float, m: int, lam: float) -> tuple[float, float]:
    """(tight, coarse) upper bounds on the expected stopping time.

    The tight form needs m >= 2 (its leading denominator degenerates at
    m = 1, where the largest eigenvalue of K can reach 1); for m = 1 it is
    +inf and only the coarse bound (6/eps) e^{2 lam eps m} is meaningful.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    arg = 2.0 * lam * epsilon * m
    coarse = 6.0 / epsilon * math.exp(arg) if arg <= 709.0 else math.inf
    if m == 1:
        return math.inf, coarse
    a = (1.0 - epsilon) ** (2 * m)
    b = (1.0 - (m - 1) * epsilon / m) ** (2 * m)
    lead = math.exp(log_cosh(lam) - log_cosh(lam * a))
    tight = lead / (1.0 - b * b) - a * a / (1.0 - a * a)
    return tight, coarse
