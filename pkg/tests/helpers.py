"""Shared oracles for the test suite.

Everything here recomputes quantities by a route independent of the package:
explicit projectors instead of closed forms, exhaustive sums instead of
algebraic shortcuts.  Tests compare package output against these.
"""

import math
from itertools import product

import numpy as np

from hmqm.qrg import BitString, DensityMatrix


def random_density(n: int, rng: np.random.Generator) -> DensityMatrix:
    """A full-rank random density matrix (Ginibre construction)."""
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    m = a @ a.conj().T
    return DensityMatrix(m / np.trace(m).real)


def state_vector(x: BitString) -> np.ndarray:
    """Encoded state amplitudes, written out directly."""
    return np.array([(-1.0) ** b for b in x.bits]) / math.sqrt(x.n)


def basis_vector(n: int, i: int, j: int, b: int) -> np.ndarray:
    """Measurement basis vector (|i> + (-1)^b |j>)/sqrt(2), 1-based i, j."""
    v = np.zeros(n)
    v[i - 1] = 1.0
    v[j - 1] = 1.0 if b == 0 else -1.0
    return v / math.sqrt(2.0)


def brute_error_probability(rho: DensityMatrix, x: BitString, matching) -> float:
    """Wrong-parity probability summed projector by projector."""
    total = 0.0
    for i, j in matching.pairs:
        parity = x.bits[i - 1] ^ x.bits[j - 1]
        wrong = basis_vector(rho.dim, i, j, parity ^ 1)
        total += float(np.real(wrong.conj() @ rho.mat @ wrong))
    return total


def brute_pair_average(n: int) -> np.ndarray:
    """Ensemble average of phi_x (x) phi_x over all 2^n secrets, by the sum."""
    acc = np.zeros((n * n, n * n))
    for bits in product((0, 1), repeat=n):
        v = state_vector(BitString(bits))
        w = np.kron(v, v)
        acc += np.outer(w, w)
    return acc / 2**n


def brute_q_matrix(n: int) -> np.ndarray:
    """The triple-space objective averaged over all 2^n secrets directly."""
    acc = np.zeros((n**3, n**3))
    eye = np.eye(n)
    for bits in product((0, 1), repeat=n):
        v = state_vector(BitString(bits))
        proj = np.outer(v, v)
        acc += np.kron(np.kron(proj, proj), eye)
        acc += np.kron(np.kron(proj, eye), proj)
    return acc / (2 ** (n + 1))


def binomial_tail_below(k: int, trials: int, p: float) -> float:
    """P(Binomial(trials, p) < k), exact via log factorials."""
    if k <= 0:
        return 0.0
    log_p, log_q = math.log(p), math.log1p(-p)
    total = 0.0
    for j in range(min(k, trials + 1)):
        log_pmf = (
            math.lgamma(trials + 1) - math.lgamma(j + 1) - math.lgamma(trials - j + 1)
            + j * log_p + (trials - j) * log_q
        )
        total += math.exp(log_pmf)
    return min(total, 1.0)
