"""Reference computations that share no code path with the library's fast routines.

Each oracle is written from the defining formulas with plain dense linear
algebra: scipy's general matrix square root instead of the Hermitian
eigendecomposition, explicit block placement instead of banded diagonals,
dense inversion instead of banded LU, and determinant loops instead of the
vectorized compound matrix.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg


def scattering_oracle(alpha, site):
    """S(alpha, U, V) from the raw site components via scipy's sqrtm."""
    alpha = np.asarray(alpha, dtype=complex)
    L = alpha.shape[0]
    eye = np.eye(L)
    rho = scipy.linalg.sqrtm(eye - alpha @ alpha.conj().T)
    rho_t = scipy.linalg.sqrtm(eye - alpha.conj().T @ alpha)
    U_hat = site.U_tilde @ np.diag(site.D) @ site.U_tilde.conj().T
    V_hat = site.V_tilde @ np.diag(site.d) @ site.V_tilde.conj().T
    U = np.diag(np.exp(1j * site.Theta)) @ U_hat
    V = V_hat @ np.diag(np.exp(1j * site.theta))
    return np.block([[alpha, rho @ U], [V @ rho_t, -V @ alpha.conj().T @ U]])


def phi_oracle(S):
    """The matrix sending (x; p) to (q; y) whenever (p; q) = S (x; y), built column by column."""
    S = np.asarray(S, dtype=complex)
    L = S.shape[0] // 2
    out = np.zeros_like(S)
    for c in range(2 * L):
        xp = np.zeros(2 * L, dtype=complex)
        xp[c] = 1.0
        x, p = xp[:L], xp[L:]
        # unknown y solves p = S11 x + S12 y
        y = np.linalg.solve(S[:L, L:], p - S[:L, :L] @ x)
        q = S[L:, :L] @ x + S[L:, L:] @ y
        out[:, c] = np.concatenate([q, y])
    return out


def layer_oracle(S_of, a, b, parity, U, V):
    """Dense layer on blocks a..b: pairs (k, k+1) with k of the given parity carry S_of(k);
    a block left without a partner carries U at the left end or V at the right end."""
    L = U.shape[0]
    N = b - a + 1
    M = np.zeros((N * L, N * L), dtype=complex)
    k = a
    while k <= b:
        sl = slice((k - a) * L, (k - a + 1) * L)
        if k % 2 != parity:
            M[sl, sl] = U  # first block belongs to a pair that starts left of a
            k += 1
            continue
        if k + 1 > b:
            M[sl, sl] = V
            k += 1
            continue
        i = (k - a) * L
        M[i : i + 2 * L, i : i + 2 * L] = S_of(k)
        k += 2
    return M


def zipper_oracle(window, a, b, U=None, V=None):
    """Dense U^[a,b] = V_layer W_layer assembled block by block from the oracle scattering matrices."""
    L = window.params.L
    U = np.eye(L, dtype=complex) if U is None else U
    V = np.eye(L, dtype=complex) if V is None else V
    S_of = lambda k: scattering_oracle(window.params.alpha, window.site(k))  # noqa: E731
    return layer_oracle(S_of, a, b, 0, U, V) @ layer_oracle(S_of, a, b, 1, U, V)


def resolvent_oracle(dense, z):
    return np.linalg.inv(dense - z * np.eye(dense.shape[0]))


def block(M, L, a, k, l):
    return M[(k - a) * L : (k - a + 1) * L, (l - a) * L : (l - a + 1) * L]


def compound_oracle(M, p):
    """p-th compound matrix by explicit minors."""
    k = M.shape[0]
    idx = list(itertools.combinations(range(k), p))
    out = np.empty((len(idx), len(idx)), dtype=complex)
    for i, r in enumerate(idx):
        for j, c in enumerate(idx):
            out[i, j] = np.linalg.det(M[np.ix_(r, c)])
    return out


def lorentz(L):
    return np.diag(np.concatenate([np.ones(L), -np.ones(L)])).astype(complex)


def transfer_oracle(z, window, n, alpha):
    """T_n = phi(S_{2n} / z) phi(S_{2n-1}) through the column-by-column phi oracle."""
    S_even = scattering_oracle(alpha, window.site(2 * n)) / z
    S_odd = scattering_oracle(alpha, window.site(2 * n - 1))
    return phi_oracle(S_even) @ phi_oracle(S_odd)


def poisson_integral_oracle(u, n, r):
    """Value of the Poisson-kernel moment for a scalar unimodular u: r^|n| u^n."""
    return r ** abs(n) * u**n


def inverse_phase_oracle(r, z, s, n_nodes=4096):
    """r^{-s} times the mean of |1 + z e^{i phi}|^{-s} over a uniform periodic grid.

    The integrand is smooth and periodic for |z| != 1, so the plain average
    converges geometrically in the number of nodes.
    """
    phi = 2 * np.pi * np.arange(n_nodes) / n_nodes
    return r ** (-s) * float(np.mean(np.abs(1 + z * np.exp(1j * phi)) ** (-s)))


def matrix_power_entry(M, n, i, j):
    return np.linalg.matrix_power(M, n)[i, j]
