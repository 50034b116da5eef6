"""Pauli-string Hamiltonians: parsing, dense assembly, and exact thermal oracles.

A Hamiltonian is a nonempty, ordered list of weighted Pauli strings.  Order is
significant and preserved as given: the measurement operator built downstream
is an ordered product over terms.  For a single Pauli string the term norm is
exactly |coefficient|, so the derived constants (kappa, the per-term weights)
are free of any eigensolve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .linalg import DenseOperator, eig_h

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

DEFAULT_QUBIT_CAP = 12


class HamiltonianFormatError(ValueError):
    """Raised when a Hamiltonian document violates the JSON schema."""


@dataclass(frozen=True)
class PauliTerm:
    """One weighted Pauli string; coefficient real and nonzero, not pure identity."""

    coefficient: float
    paulis: str

    def __post_init__(self):
        if not isinstance(self.paulis, str) or not self.paulis:
            raise ValueError("paulis must be a nonempty string over I, X, Y, Z")
        for pos, letter in enumerate(self.paulis):
            if letter not in PAULI_MATRICES:
                raise ValueError(f"unknown Pauli letter {letter!r} at position {pos}")
        c = self.coefficient
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c):
            raise ValueError(f"coefficient must be a finite real number, got {c!r}")
        if c == 0.0:
            raise ValueError("zero-coefficient terms are rejected")
        if set(self.paulis) == {"I"}:
            raise ValueError(
                "pure-identity terms are rejected: they only shift the energy and make "
                "the jump operator ill-defined; subtract the shift before building terms"
            )
        object.__setattr__(self, "coefficient", float(c))

    @property
    def norm(self) -> float:
        """Operator norm of the term, exact for a Pauli string."""
        return abs(self.coefficient)


@dataclass(frozen=True)
class LocalHamiltonian:
    """Ordered sum of Pauli terms on n qubits, with derived weights."""

    n_qubits: int
    terms: tuple[PauliTerm, ...]
    term_norms: tuple[float, ...] = field(init=False)
    kappa: float = field(init=False)
    weights: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("a Hamiltonian needs at least one term")
        for i, t in enumerate(terms):
            if len(t.paulis) != self.n_qubits:
                raise ValueError(
                    f"terms[{i}].p has length {len(t.paulis)}, expected n_qubits = {self.n_qubits}"
                )
        norms = tuple(t.norm for t in terms)
        kappa = float(sum(norms))
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "term_norms", norms)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "weights", tuple(n / kappa for n in norms))

    @property
    def m(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits


def parse_hamiltonian(text: str) -> LocalHamiltonian:
    """Parse the JSON Hamiltonian document.

    Schema: {"n_qubits": <int>, "terms": [{"c": <float>, "p": "<I|X|Y|Z string>"}, ...]}
    Field order is irrelevant; unknown fields are rejected.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise HamiltonianFormatError(f"malformed JSON: {e}") from e
    if not isinstance(doc, dict):
        raise HamiltonianFormatError("top-level document must be a JSON object")
    unknown = set(doc) - {"n_qubits", "terms"}
    if unknown:
        raise HamiltonianFormatError(f"unknown top-level fields: {sorted(unknown)}")
    if "n_qubits" not in doc:
        raise HamiltonianFormatError("missing field: n_qubits")
    if "terms" not in doc:
        raise HamiltonianFormatError("missing field: terms")
    n_qubits = doc["n_qubits"]
    if isinstance(n_qubits, bool) or not isinstance(n_qubits, int) or n_qubits < 1:
        raise HamiltonianFormatError(f"n_qubits must be a positive integer, got {n_qubits!r}")
    raw_terms = doc["terms"]
    if not isinstance(raw_terms, list) or not raw_terms:
        raise HamiltonianFormatError("terms must be a nonempty list")
    terms = []
    for i, entry in enumerate(raw_terms):
        where = f"terms[{i}]"
        if not isinstance(entry, dict):
            raise HamiltonianFormatError(f"{where}: each term must be an object")
        unknown = set(entry) - {"c", "p"}
        if unknown:
            raise HamiltonianFormatError(f"{where}: unknown fields {sorted(unknown)}")
        if "c" not in entry or "p" not in entry:
            raise HamiltonianFormatError(f"{where}: term needs both 'c' and 'p'")
        p = entry["p"]
        if not isinstance(p, str):
            raise HamiltonianFormatError(f"{where}.p: must be a string")
        if len(p) != n_qubits:
            raise HamiltonianFormatError(
                f"{where}.p: length {len(p)} does not match n_qubits = {n_qubits}"
            )
        try:
            terms.append(PauliTerm(coefficient=entry["c"], paulis=p))
        except ValueError as e:
            raise HamiltonianFormatError(f"{where}: {e}") from e
    return LocalHamiltonian(n_qubits=n_qubits, terms=tuple(terms))


def pauli_string_matrix(paulis: str) -> np.ndarray:
    """Kronecker product of single-qubit Paulis, leftmost letter = qubit 0."""
    return reduce(np.kron, (PAULI_MATRICES[p] for p in paulis))


def to_dense(h: LocalHamiltonian, qubit_cap: int = DEFAULT_QUBIT_CAP) -> DenseOperator:
    """Assemble the 2^n x 2^n matrix of the Hamiltonian."""
    if h.n_qubits > qubit_cap:
        raise ValueError(
            f"n_qubits = {h.n_qubits} exceeds the dense cap of {qubit_cap} qubits"
        )
    acc = np.zeros((h.dim, h.dim), dtype=complex)
    for t in h.terms:
        acc += t.coefficient * pauli_string_matrix(t.paulis)
    return DenseOperator(acc, hermitian=True)


def jump_operator(term: PauliTerm, n_qubits: int) -> DenseOperator:
    """(1 - h/||h||)/2 for one term; a projector when h is a Pauli string."""
    if len(term.paulis) != n_qubits:
        raise ValueError(
            f"term acts on {len(term.paulis)} qubits, expected {n_qubits}"
        )
    dim = 2 ** n_qubits
    sign = 1.0 if term.coefficient > 0 else -1.0
    k = 0.5 * (np.eye(dim, dtype=complex) - sign * pauli_string_matrix(term.paulis))
    return DenseOperator(k, hermitian=True)


@dataclass(frozen=True)
class GibbsOracle:
    """Exact thermal state e^{-beta H}/Z and log Z of a dense Hamiltonian."""

    beta: float
    gibbs_state: np.ndarray
    log_partition: float


def gibbs_state_of(dense_h: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """(rho_G, log Z) for a dense Hermitian matrix, computed in log space."""
    spec = eig_h(dense_h)
    shifted = -beta * (spec.eigenvalues - spec.eigenvalues.min())
    weights = np.exp(shifted)
    z_shifted = float(weights.sum())
    rho = (spec.eigenvectors * (weights / z_shifted)) @ spec.eigenvectors.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    log_z = math.log(z_shifted) - beta * float(spec.eigenvalues.min())
    return rho, log_z


def log_trace_exp(dense_h: np.ndarray, t: float) -> float:
    """log tr e^{t H} for dense Hermitian H, any real t."""
    vals = np.linalg.eigvalsh(dense_h)
    return float(np.logaddexp.reduce(t * vals))


def exact_gibbs(h: LocalHamiltonian, beta: float, qubit_cap: int = DEFAULT_QUBIT_CAP) -> GibbsOracle:
    """Brute-force Gibbs oracle at inverse temperature beta >= 0."""
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    rho, log_z = gibbs_state_of(to_dense(h, qubit_cap).entries, beta)
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > 1e-10:
        raise AssertionError(f"gibbs state trace drifted to {tr!r}")
    return GibbsOracle(beta=float(beta), gibbs_state=rho, log_partition=log_z)


def exact_partition(h: LocalHamiltonian, beta: float, qubit_cap: int = DEFAULT_QUBIT_CAP) -> float:
    """log Z = log tr e^{-beta H}, stable for beta*kappa far beyond overflow."""
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    return log_trace_exp(to_dense(h, qubit_cap).entries, -beta)
