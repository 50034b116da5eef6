from __future__ import annotations

import numpy as np
import pytest

from stopgibbs import LocalHamiltonian, PauliTerm

SUITE_SEED = 20240
SUITE_SIZE = 20

REFERENCE_DOC = '{"n_qubits": 2, "terms": [{"c": 1.0, "p": "ZI"}, {"c": 1.0, "p": "IZ"}]}'


def make_reference() -> LocalHamiltonian:
    return LocalHamiltonian(
        n_qubits=2,
        terms=(PauliTerm(1.0, "ZI"), PauliTerm(1.0, "IZ")),
    )


def random_instance(rng: np.random.Generator) -> LocalHamiltonian:
    n_qubits = int(rng.integers(2, 5))
    m = int(rng.integers(2, 7))
    terms = []
    for _ in range(m):
        while True:
            letters = "".join(rng.choice(list("IXYZ"), size=n_qubits))
            if set(letters) != {"I"}:
                break
        c = 0.0
        while abs(c) < 0.05:  # keep kappa away from degenerate scales
            c = float(rng.uniform(-1.0, 1.0))
        terms.append(PauliTerm(c, letters))
    return LocalHamiltonian(n_qubits=n_qubits, terms=tuple(terms))


def make_suite(seed: int = SUITE_SEED, size: int = SUITE_SIZE) -> list[LocalHamiltonian]:
    rng = np.random.default_rng(seed)
    return [random_instance(rng) for _ in range(size)]


def random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


@pytest.fixture(scope="session")
def reference_h() -> LocalHamiltonian:
    return make_reference()


@pytest.fixture(scope="session")
def suite() -> list[LocalHamiltonian]:
    return make_suite()
