"""Measurement instruments built from a Hamiltonian.

The instrument is the pair of maps E0(rho) = K rho K and
E1(rho) = (1 - tr(K rho K)) * I/D, where K is a Hermitian contraction
(K^2 <= 1).  Two constructions are provided:

* the product form, an ordered palindrome of per-term weak-measurement
  factors (implementable by measuring local terms in sequence), and
* the ideal affine form, which depends on the full Hamiltonian and serves
  as the analytically solvable reference.

Perturbed variants model a noisy E0' as an opaque channel evaluator: the
depolarising case has no single-Kraus form, so the engine only ever relies
on "apply and read off the success probability".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import LocalHamiltonian, jump_operator, to_dense
from .linalg import DenseOperator, Spectrum, eig_h, operator_norm

CONTRACTION_ATOL = 1e-12

NOISE_KINDS = ("depolarize_after", "kraus_perturbation", "hamiltonian_perturbation")


@dataclass(frozen=True)
class NoiseModel:
    """Perturbation of E0: kind, strength (p, eta, or ||dH||), and direction seed."""

    kind: str
    strength: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not np.isfinite(self.strength) or self.strength < 0:
            raise ValueError(f"noise strength must be finite and >= 0, got {self.strength!r}")
        if self.kind == "depolarize_after" and self.strength > 1.0:
            raise ValueError(f"depolarising probability must be <= 1, got {self.strength}")
        if self.kind == "kraus_perturbation" and self.strength >= 1.0:
            raise ValueError(f"Kraus perturbation strength must be < 1, got {self.strength}")


@dataclass(frozen=True)
class Instrument:
    """Hermitian contraction K with its spectral metadata."""

    K: DenseOperator
    spectrum: Spectrum
    epsilon: float
    variant: str
    m: int
    kappa: float
    provenance: str = ""

    @property
    def dim(self) -> int:
        return self.K.dim

    @property
    def mu_min(self) -> float:
        """Smallest per-step success probability, (min eig K)^2."""
        return float(self.spectrum.eigenvalues.min()) ** 2

    @property
    def mu_max(self) -> float:
        """Largest per-step success probability, (max eig K)^2."""
        return float(self.spectrum.eigenvalues.max()) ** 2

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Unnormalised E0: K rho K."""
        k = self.K.entries
        return k @ rho @ k


def _finalize(k: np.ndarray, epsilon: float, variant: str, h: LocalHamiltonian, provenance: str) -> Instrument:
    asym = float(np.linalg.norm(k - k.conj().T, 2))
    if asym > CONTRACTION_ATOL:
        raise AssertionError(f"constructed K is not Hermitian: ||K - K^dag|| = {asym:.3e}")
    op = DenseOperator(k, hermitian=True)
    spec = eig_h(op)
    top = float(np.abs(spec.eigenvalues).max())
    if top > 1.0 + CONTRACTION_ATOL:
        raise AssertionError(f"K violates K^2 <= 1: max |eigenvalue| = {top!r}")
    low = float(spec.eigenvalues.min())
    if low < -CONTRACTION_ATOL:
        raise AssertionError(f"K has a negative eigenvalue {low!r}; both variants are PSD")
    return Instrument(
        K=op,
        spectrum=spec,
        epsilon=float(epsilon),
        variant=variant,
        m=h.m,
        kappa=h.kappa,
        provenance=provenance,
    )


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")


def build_K_product(h: LocalHamiltonian, epsilon: float) -> Instrument:
    """Ordered palindromic product of weak-measurement factors.

    K = F_1 ... F_m F_m ... F_1 with F_i = (1-eps) I + eps * w_i * k_i, where
    k_i is the i-th jump operator and w_i the i-th weight.  The palindrome
    makes K = A A^dag, hence Hermitian and PSD; Hermiticity is still asserted
    on the computed matrix.  Term order is taken from the Hamiltonian as
    given: the product does not commute.
    """
    _check_epsilon(epsilon)
    dim = h.dim
    factors = [
        (1.0 - epsilon) * np.eye(dim, dtype=complex)
        + epsilon * w * jump_operator(t, h.n_qubits).entries
        for t, w in zip(h.terms, h.weights)
    ]
    k = np.eye(dim, dtype=complex)
    for f in factors:
        k = k @ f
    for f in reversed(factors):
        k = k @ f
    return _finalize(k, epsilon, "product", h, provenance=f"product K, m={h.m}, eps={epsilon}")


def build_K_ideal(h: LocalHamiltonian, epsilon: float) -> Instrument:
    """Ideal affine form (1-eps)^(2m-1) (1 - eps/kappa * H).

    Only realisable through global measurements; spectra are affine in the
    Hamiltonian spectrum, which makes every downstream formula exactly
    solvable.  Contraction holds because ||H|| <= kappa.
    """
    _check_epsilon(epsilon)
    hd = to_dense(h).entries
    scale = (1.0 - epsilon) ** (2 * h.m - 1)
    k = scale * (np.eye(h.dim, dtype=complex) - (epsilon / h.kappa) * hd)
    return _finalize(k, epsilon, "ideal", h, provenance=f"ideal K, m={h.m}, eps={epsilon}")


def apply_E0(inst: Instrument, rho: np.ndarray) -> tuple[np.ndarray, float]:
    """One measurement success: (K rho K / tr, tr(K rho K)).

    The input must be a unit-trace state; success probability lies in
    [mu_min, mu_max] for PSD input.
    """
    arr = rho.entries if isinstance(rho, DenseOperator) else np.asarray(rho)
    tr_in = float(np.trace(arr).real)
    if abs(tr_in - 1.0) > 1e-8:
        raise ValueError(f"input state must have unit trace, got {tr_in!r}")
    sigma = inst.apply(arr)
    p = float(np.trace(sigma).real)
    if p < 1e-300:
        raise ValueError(
            "state has (numerically) no support under K; cannot normalise the outcome-0 branch"
        )
    return sigma / p, p


def k_deviation(h: LocalHamiltonian, epsilon: float) -> float:
    """Operator-norm gap between the product and ideal constructions."""
    kp = build_K_product(h, epsilon)
    ki = build_K_ideal(h, epsilon)
    return operator_norm(kp.K.entries - ki.K.entries)


def deviation_direction(h: LocalHamiltonian, epsilon: float) -> tuple[np.ndarray, float]:
    """Actual normalised direction of (K_product - K_ideal) and its norm.

    This is the concrete counterpart of the random directions used in noise
    studies: the product form equals the ideal form built from a shifted
    Hamiltonian along this direction.
    """
    kp = build_K_product(h, epsilon)
    ki = build_K_ideal(h, epsilon)
    diff = kp.K.entries - ki.K.entries
    norm = operator_norm(diff)
    if norm == 0.0:
        return np.zeros_like(diff), 0.0
    return diff / norm, norm


def random_hermitian_direction(dim: int, seed: int) -> np.ndarray:
    """GUE-style Hermitian matrix normalised to unit operator norm, seeded."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q = 0.5 * (g + g.conj().T)
    return q / operator_norm(q)


class PerturbedChannel:
    """Opaque evaluator for a perturbed E0'.

    ``apply`` returns the unnormalised post-measurement state; its trace is
    the success probability.  ``K_prime`` is set when the perturbation keeps
    the single-Kraus form (it does not for depolarising noise).
    """

    def __init__(self, base: Instrument, noise: NoiseModel, delta_upper: float,
                 k_prime: np.ndarray | None, description: str):
        self.base = base
        self.noise = noise
        self.delta_upper = float(delta_upper)
        self.K_prime = k_prime
        self.description = description
        self._eye_over_d = np.eye(base.dim, dtype=complex) / base.dim

    @property
    def dim(self) -> int:
        return self.base.dim

    def apply(self, rho: np.ndarray) -> np.ndarray:
        if self.K_prime is not None:
            return self.K_prime @ rho @ self.K_prime
        sigma = self.base.apply(rho)
        p = self.noise.strength
        return (1.0 - p) * sigma + (p * np.trace(sigma)) * self._eye_over_d

    __call__ = apply


def perturb_instrument(inst: Instrument, noise: NoiseModel) -> tuple[PerturbedChannel, float]:
    """Build E0' for the given noise model, with its analytic noise-rate bound.

    Upper bounds on delta = ||E0 - E0'||_1 per model:

    * depolarize_after (strength p):  2 p mu_max
    * kraus_perturbation (K' = K + eta V, ||V|| = 1):  2 eta ||K|| + eta^2
    * hamiltonian_perturbation (ideal-form shift by strength * Q, ||Q|| = 1):
      2 ||K|| ||dK|| + ||dK||^2  with  ||dK|| = (1-eps)^(2m-1) eps/kappa * strength
    """
    norm_k = float(np.abs(inst.spectrum.eigenvalues).max())
    s = noise.strength
    if noise.kind == "depolarize_after":
        delta = 2.0 * s * inst.mu_max
        chan = PerturbedChannel(inst, noise, delta, None,
                                f"depolarise(p={s}) after E0")
        return chan, delta
    if noise.kind == "kraus_perturbation":
        if s == 0.0:
            return PerturbedChannel(inst, noise, 0.0, inst.K.entries.copy(), "unperturbed"), 0.0
        v = random_hermitian_direction(inst.dim, noise.seed)
        k_prime = inst.K.entries + s * v
        delta = 2.0 * s * norm_k + s * s
        _check_perturbed_contraction(k_prime, noise)
        chan = PerturbedChannel(inst, noise, delta, k_prime,
                                f"K + eta V, eta={s}, seed={noise.seed}")
        return chan, delta
    # hamiltonian_perturbation: shift the ideal affine dependence on H
    if s >= inst.kappa:
        raise ValueError(
            f"Hamiltonian perturbation strength {s} must stay below kappa = {inst.kappa}"
        )
    if s == 0.0:
        return PerturbedChannel(inst, noise, 0.0, inst.K.entries.copy(), "unperturbed"), 0.0
    q = random_hermitian_direction(inst.dim, noise.seed)
    dk_norm = (1.0 - inst.epsilon) ** (2 * inst.m - 1) * inst.epsilon / inst.kappa * s
    k_prime = inst.K.entries - dk_norm * q
    delta = 2.0 * norm_k * dk_norm + dk_norm * dk_norm
    _check_perturbed_contraction(k_prime, noise)
    chan = PerturbedChannel(inst, noise, delta, k_prime,
                            f"H + dH, ||dH||={s}, seed={noise.seed}")
    return chan, delta


def _check_perturbed_contraction(k_prime: np.ndarray, noise: NoiseModel) -> None:
    top = float(np.abs(np.linalg.eigvalsh(0.5 * (k_prime + k_prime.conj().T))).max())
    if top > 1.0 + CONTRACTION_ATOL:
        raise ValueError(
            f"noise strength {noise.strength} pushes ||K'|| to {top!r} > 1; "
            "the perturbed instrument would produce invalid probabilities"
        )
