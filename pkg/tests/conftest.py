"""Shared test helpers: random operator factories and dense oracles."""

import numpy as np
import pytest

from leangrape import sparse


def random_hermitian(rng, dim, scale=1.0):
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (m + m.conj().T)


def random_anti_hermitian(rng, dim, scale=1.0):
    return -1j * random_hermitian(rng, dim, scale)


def random_state(rng, dim):
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def random_sparse_dense_pair(rng, dim, density=0.2):
    """A random sparse complex matrix as (CsrMatrix, dense ndarray)."""
    mask = rng.random((dim, dim)) < density
    dense = np.where(mask, rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)), 0.0)
    return sparse.from_dense(dense), dense


def expm_action_oracle(a_dense, psi):
    """Dense-diagonalization evaluation of exp(A) @ psi for anti-Hermitian A."""
    h = 1j * a_dense  # Hermitian
    w, v = np.linalg.eigh(h)
    return v @ (np.exp(-1j * w) * (v.conj().T @ psi))


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)
