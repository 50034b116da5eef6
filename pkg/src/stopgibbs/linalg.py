"""Dense Hermitian linear algebra: eigendecompositions, matrix functions, norms.

Conventions used throughout the package:

* trace norm = sum of singular values, with NO factor 1/2.  Many libraries
  call the halved quantity "trace distance"; we do not.
* fidelity = root fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)), un-squared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

HERMITIAN_ATOL = 1e-12
UNITARY_ATOL = 1e-10
DENSITY_ATOL = 1e-8

_LOG2 = math.log(2.0)


def log_cosh(x: float) -> float:
    """log(cosh(x)) without overflow for any representable x."""
    ax = abs(x)
    return ax + math.log1p(math.exp(-2.0 * ax)) - _LOG2


def _entries(a) -> np.ndarray:
    """Accept a DenseOperator or a bare ndarray."""
    if isinstance(a, DenseOperator):
        return a.entries
    return np.asarray(a)


@dataclass(frozen=True)
class DenseOperator:
    """A D x D complex matrix with an optional (checked) Hermitian flag."""

    entries: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        arr = np.array(self.entries, dtype=complex, copy=True)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"operator must be a square matrix, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("operator dimension must be >= 1")
        if self.hermitian:
            asym = float(np.max(np.abs(arr - arr.conj().T)))
            if asym > HERMITIAN_ATOL:
                raise ValueError(
                    f"operator flagged hermitian but max |A - A^dag| = {asym:.3e} "
                    f"exceeds {HERMITIAN_ATOL:g}"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues and unitary column eigenvectors of a Hermitian operator."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = np.array(self.eigenvalues, dtype=float, copy=True)
        vecs = np.array(self.eigenvectors, dtype=complex, copy=True)
        d = vals.shape[0]
        if vecs.shape != (d, d):
            raise ValueError(f"eigenvector matrix shape {vecs.shape} does not match {d} eigenvalues")
        if np.any(np.diff(vals) < 0):
            raise ValueError("eigenvalues must be ascending")
        gram = vecs.conj().T @ vecs
        dev = float(np.max(np.abs(gram - np.eye(d))))
        if dev > UNITARY_ATOL:
            raise ValueError(f"eigenvector matrix is not unitary: max |V^dag V - I| = {dev:.3e}")
        vals.setflags(write=False)
        vecs.setflags(write=False)
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "eigenvectors", vecs)

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        """V diag(e) V^dag."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.conj().T


def eig_h(a) -> Spectrum:
    """Eigendecomposition of a Hermitian operator.

    Rejects non-Hermitian input, reporting the largest asymmetry found.
    """
    arr = _entries(a)
    trusted = isinstance(a, DenseOperator) and a.hermitian
    if not trusted:
        asym = float(np.max(np.abs(arr - arr.conj().T)))
        if asym > HERMITIAN_ATOL:
            raise ValueError(
                f"eig_h requires a Hermitian operator; max |A - A^dag| = {asym:.3e}"
            )
    vals, vecs = np.linalg.eigh(arr)
    return Spectrum(eigenvalues=vals, eigenvectors=vecs)


def matrix_function(a, f: Callable[[np.ndarray], np.ndarray], log_shift: float | None = None) -> DenseOperator:
    """Apply a scalar function to a Hermitian operator through its spectrum.

    Without ``log_shift`` this is the plain spectral calculus V f(diag) V^dag,
    with ``f`` evaluated on the eigenvalue array.

    With ``log_shift=s`` the function ``f`` must return the NATURAL LOG of the
    desired (positive) scalar function; the result is then exp(f(x) - s)
    applied spectrally, which equals e^{-s} f_true(A) in exact arithmetic but
    never forms overflowing intermediates.  Callers evaluating cosh(lam*K) or
    exp(-beta*H) pass s near the largest log value so that ratios such as
    cosh(lam*K)/tr cosh(lam*K) are formed from well-scaled quantities.
    """
    spec = eig_h(a)
    with np.errstate(all="ignore"):
        vals = np.asarray(f(spec.eigenvalues), dtype=float)
    if vals.shape != spec.eigenvalues.shape:
        raise ValueError("scalar function must return one value per eigenvalue")
    if log_shift is not None:
        vals = np.exp(vals - float(log_shift))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(
            f"scalar function is not finite at eigenvalue {spec.eigenvalues[i]!r} (index {i})"
        )
    out = (spec.eigenvectors * vals) @ spec.eigenvectors.conj().T
    out = 0.5 * (out + out.conj().T)
    return DenseOperator(out, hermitian=True)


def trace_norm(a) -> float:
    """Sum of singular values; for Hermitian input, the sum of |eigenvalues|."""
    arr = _entries(a)
    if isinstance(a, DenseOperator) and a.hermitian:
        return float(np.sum(np.abs(np.linalg.eigvalsh(arr))))
    asym = float(np.max(np.abs(arr - arr.conj().T)))
    if asym <= HERMITIAN_ATOL:
        return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (arr + arr.conj().T)))))
    return float(np.sum(np.linalg.svd(arr, compute_uv=False)))


def operator_norm(a) -> float:
    """Largest singular value."""
    return float(np.linalg.norm(_entries(a), 2))


def _check_density(rho: np.ndarray, name: str) -> np.ndarray:
    vals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if float(vals.min()) < -DENSITY_ATOL:
        raise ValueError(f"{name} is not PSD: min eigenvalue {vals.min():.3e}")
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > DENSITY_ATOL:
        raise ValueError(f"{name} does not have unit trace: tr = {tr!r}")
    return vals


def fidelity(rho, sigma) -> float:
    """Root fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)) of two density matrices."""
    r = _entries(rho)
    s = _entries(sigma)
    if r.shape != s.shape:
        raise ValueError(f"dimension mismatch: {r.shape} vs {s.shape}")
    _check_density(r, "rho")
    _check_density(s, "sigma")
    vals, vecs = np.linalg.eigh(0.5 * (r + r.conj().T))
    sqrt_r = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T
    inner = sqrt_r @ s @ sqrt_r
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    f = float(np.sum(np.sqrt(np.clip(ev, 0.0, None))))
    return min(max(f, 0.0), 1.0)


def random_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random pure state vector."""
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return psi / np.linalg.norm(psi)


def channel_delta_estimate(
    k,
    apply_prime: Callable[[np.ndarray], np.ndarray],
    trials: int,
    seed: int = 0,
    upper: float | None = None,
    refine_steps: int = 64,
) -> tuple[float, float]:
    """Bracket the induced 1-norm distance between rho -> K rho K and a perturbed channel.

    The lower bound maximises ||K psi psi^dag K - E'(psi psi^dag)||_1 over
    ``trials`` Haar-random pure states, then hill-climbs around the best one.
    There is no closed form for the induced 1-norm of a generic channel
    difference, so the upper bound is the analytic per-noise-model value: it is
    taken from ``upper`` or, failing that, from an ``apply_prime.delta_upper``
    attribute (perturbed channels built by the instrument module carry one).
    """
    if trials <= 0:
        raise ValueError("trials must be a positive integer")
    if upper is None:
        upper = getattr(apply_prime, "delta_upper", None)
        if upper is None:
            raise ValueError(
                "no analytic upper bound available: pass upper= or use a perturbed "
                "channel that carries delta_upper"
            )
    karr = _entries(k)
    dim = karr.shape[0]
    rng = np.random.default_rng(seed)

    def value(psi: np.ndarray) -> float:
        proj = np.outer(psi, psi.conj())
        return trace_norm(karr @ proj @ karr - apply_prime(proj))

    best = random_pure_state(dim, rng)
    best_val = value(best)
    for _ in range(trials - 1):
        psi = random_pure_state(dim, rng)
        v = value(psi)
        if v > best_val:
            best, best_val = psi, v

    step = 0.3
    for i in range(refine_steps):
        cand = best + step * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
        cand /= np.linalg.norm(cand)
        v = value(cand)
        if v > best_val:
            best, best_val = cand, v
        elif i % 8 == 7:
            step *= 0.5

    # sampling can only under-estimate; clamp away roundoff when both are ~0
    lower = min(best_val, float(upper))
    return lower, float(upper)
