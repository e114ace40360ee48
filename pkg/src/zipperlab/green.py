"""Green kernels of finite zippers and the block analysis built on transfer products.

Solution convention
-------------------
For a source injected at the right end block b = 2m+1, the solution of
(U - z) Phi = e_b xi obeys the homogeneous transfer recursion everywhere
except at the last half step, where the kick ``(K; L) = (-z^{-1} I; 0)``
is added to the odd-site state (Phi_b; Psi_b).  Closing the chain with the
boundary conditions Psi_left = Y Phi_left (see
:func:`zipperlab.transfer.window_transfer_product`) and Psi_b = V Phi_b gives

    E Phi_a = V K - L,    E = (C - V A) + (D - V B) Y,

so ``G(a, b) = E^{-1} (V K - L) = -z^{-1} E^{-1} V``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .disorder import DisorderWindow, matrix_norm
from .errors import (
    IllConditionedE,
    InvertibilityViolation,
    SingularGamma,
    SolveFailure,
    ThresholdViolated,
)
from .transfer import (
    TransferProduct,
    half_steps,
    pair_transfer_stack,
    window_transfer_product,
)
from .zipper import BlockBandedUnitary, build_finite_zipper

ILL_CONDITIONED_TOL = 1e-10
SOLVE_RESIDUAL_TOL = 1e-8


class NearUnitCircle(UserWarning):
    """The spectral parameter is within 1e-6 of the unit circle."""


@dataclass(frozen=True, eq=False)
class GreenBlock:
    block: np.ndarray
    z: complex
    k: int
    l: int
    interval: tuple[int, int]
    norm_kind: str = "spectral"
    diagnostics: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return matrix_norm(self.block, self.norm_kind)


# --- direct solves ---------------------------------------------------------------


def _solve(op: BlockBandedUnitary, z: complex, rhs: np.ndarray) -> np.ndarray:
    if abs(abs(z) - 1.0) < 1e-6:
        warnings.warn(f"|z| = {abs(z)} is within 1e-6 of the unit circle", NearUnitCircle, stacklevel=3)
    ab, bw = op.banded(z)
    try:
        x = scipy.linalg.solve_banded((bw, bw), ab, rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolveFailure(str(exc)) from exc
    return x


def _shifted_matvec(op: BlockBandedUnitary, z: complex, X: np.ndarray) -> np.ndarray:
    """(U - z) X for a stack of flat vectors in the columns of X."""
    N, L = op.N, op.L
    blocks = X.reshape(N, L, -1)
    out = -z * blocks
    for o in range(-2, 3):
        lo, hi = max(0, -o), min(N, N - o)
        if hi > lo:
            out[lo:hi] += np.einsum("nij,njc->nic", op.diags[o + 2, lo:hi], blocks[lo + o : hi + o])
    return out.reshape(N * L, -1)


def green_columns(op: BlockBandedUnitary, z: complex, l: int) -> np.ndarray:
    """All blocks G(k, l), k = a..b, as an array of shape (N, L, L)."""
    N, L = op.N, op.L
    rhs = np.zeros((N * L, L), dtype=complex)
    j = op.flat_index(l, 0)
    rhs[j : j + L] = np.eye(L)
    X = _solve(op, z, rhs)
    res = np.linalg.norm(_shifted_matvec(op, z, X) - rhs) / max(1.0, np.linalg.norm(X))
    if not np.isfinite(res) or res > SOLVE_RESIDUAL_TOL:
        raise SolveFailure(f"banded solve residual {res:.3e}")
    return X.reshape(N, L, L)


def green_matrix(op: BlockBandedUnitary, z: complex) -> np.ndarray:
    """Dense resolvent (U - z)^{-1} via the banded factorization (desk scale only)."""
    n = op.N * op.L
    rhs = np.eye(n, dtype=complex)
    X = _solve(op, z, rhs)
    res = np.linalg.norm(_shifted_matvec(op, z, X) - rhs) / max(1.0, np.linalg.norm(X))
    if not np.isfinite(res) or res > SOLVE_RESIDUAL_TOL:
        raise SolveFailure(f"banded solve residual {res:.3e}")
    return X


def green_direct(op: BlockBandedUnitary, z: complex, k: int, l: int, norm_kind: str = "spectral") -> GreenBlock:
    cols = green_columns(op, z, l)
    return GreenBlock(cols[k - op.a], complex(z), k, l, (op.a, op.b), norm_kind)


# --- transfer-matrix formula --------------------------------------------------------


def source_terms(z: complex, L: int) -> tuple[np.ndarray, np.ndarray]:
    """The kick (K; L) added to the odd-site state at the source block."""
    return -np.eye(L, dtype=complex) / z, np.zeros((L, L), dtype=complex)


def green_via_transfer(
    window: DisorderWindow,
    z: complex,
    n: int,
    m: int,
    boundary_U: Optional[np.ndarray] = None,
    boundary_V: Optional[np.ndarray] = None,
    start_parity: str = "even",
    norm_kind: str = "spectral",
) -> GreenBlock:
    """Corner block G(a, 2m+1) on [a, 2m+1], a = 2n (even start) or 2n+1 (odd start)."""
    L = window.params.L
    U = np.eye(L, dtype=complex) if boundary_U is None else np.asarray(boundary_U, dtype=complex)
    V = np.eye(L, dtype=complex) if boundary_V is None else np.asarray(boundary_V, dtype=complex)
    P = window_transfer_product(z, window, n, m, U, start_parity)
    Y = P.boundary_factor
    E = (P.C - V @ P.A) + (P.D - V @ P.B) @ Y
    smin = float(np.linalg.svd(E, compute_uv=False)[-1])
    if smin < ILL_CONDITIONED_TOL:
        raise IllConditionedE(f"smallest singular value of E is {smin:.3e}")
    K, Lt = source_terms(z, L)
    G = np.linalg.solve(E, V @ K - Lt)
    a = 2 * n if start_parity == "even" else 2 * n + 1
    return GreenBlock(G, complex(z), a, 2 * m + 1, (a, 2 * m + 1), norm_kind, {"E_min_singular": smin})


def green_corner(
    window: DisorderWindow,
    z: complex,
    n: int,
    m: int,
    boundary_U=None,
    boundary_V=None,
    start_parity: str = "even",
    norm_kind: str = "spectral",
    counters: Optional[dict] = None,
) -> GreenBlock:
    """Formula when well conditioned, direct solve otherwise (the fallback is counted)."""
    try:
        return green_via_transfer(window, z, n, m, boundary_U, boundary_V, start_parity, norm_kind)
    except IllConditionedE:
        if counters is not None:
            counters["fallback_direct"] = counters.get("fallback_direct", 0) + 1
        a = 2 * n if start_parity == "even" else 2 * n + 1
        op = build_finite_zipper(window, a, 2 * m + 1, boundary_U, boundary_V)
        return green_direct(op, z, a, 2 * m + 1, norm_kind)


def kappa_eps(alpha_norm: float, eps: float) -> float:
    a = alpha_norm
    return (1.0 / (1.0 - a * a)) * (a / np.sqrt(1.0 - a * a) + 1.0 / (1.0 - eps) + (1.0 - eps) * a + a * a)


# --- resolvent recurrences -----------------------------------------------------------


def _blocks(op: BlockBandedUnitary, k: int):
    S = op.window.S[k - op.window.lo]
    L = op.L
    return S[:L, :L], S[:L, L:], S[L:, :L], S[L:, L:]


def _relative(terms) -> float:
    total = sum(terms)
    scale = max(float(np.linalg.norm(t)) for t in terms)
    return float(np.linalg.norm(total)) / scale if scale > 0 else 0.0


def _inv(M: np.ndarray, what: str) -> np.ndarray:
    smin = np.linalg.svd(M, compute_uv=False)[-1]
    if smin < 1e-14:
        raise SingularGamma(f"{what} is singular (smallest singular value {smin:.3e})")
    return np.linalg.inv(M)


def _row_residual(op, z, r, col) -> tuple[str, float]:
    """Residual of the row recurrence at row r for the column blocks ``col[k - a]``."""
    a = op.a
    g = lambda k: col[k - a]  # noqa: E731
    if r % 2 == 0:
        # even row: W row from S_{r-1}, V row from S_r
        _, _, c1, d1 = _blocks(op, r - 1)
        a0, _, c0, _ = _blocks(op, r)
        gi = _inv(c0.conj().T, "gamma_k^*")
        terms = [gi @ c1 @ g(r - 1), gi @ (d1 - z * a0.conj().T) @ g(r), -z * g(r + 1)]
        return "gamma", _relative(terms)
    a1, b1, _, _ = _blocks(op, r)
    _, b0, _, d0 = _blocks(op, r - 1)
    bi = _inv(b0.conj().T, "beta_k^*")
    terms = [z * g(r - 1), bi @ (z * d0.conj().T - a1) @ g(r), -bi @ b1 @ g(r + 1)]
    return "beta", _relative(terms)


def _column_residual(op, z, c, row) -> tuple[str, float]:
    """Residual of the column recurrence at column c for the row blocks ``row[l - a]``."""
    a = op.a
    g = lambda l: row[l - a]  # noqa: E731
    if c % 2 == 0:
        a0, _, c0, _ = _blocks(op, c)
        _, _, c1, d1 = _blocks(op, c - 1)
        gi = _inv(c0, "gamma_l")
        terms = [-z * g(c - 1) @ c1.conj().T @ gi, g(c) @ (a0 - z * d1.conj().T) @ gi, g(c + 1)]
        return "gamma", _relative(terms)
    a1, b1, _, _ = _blocks(op, c)
    _, b0, _, d0 = _blocks(op, c - 1)
    bi = _inv(b1.conj().T, "beta_l^*")
    terms = [g(c - 1) @ b0 @ bi, g(c) @ (d0 - z * a1.conj().T) @ bi, -z * g(c + 1)]
    return "beta", _relative(terms)


def recurrence_residual(
    op: BlockBandedUnitary, z: complex, k: int, l: int, side: str = "row", resolvent: Optional[np.ndarray] = None
) -> tuple[float, float]:
    """(gamma-form, beta-form) relative residuals at the two indices k, k+1.

    ``side="row"`` runs the recurrence in the first index around k with
    column l fixed; ``side="column"`` runs it in the second index around l with
    row k fixed.
    """
    if op.window is None:
        raise ValueError("operator has no disorder window attached")
    i, j = (k, l) if side == "row" else (l, k)
    if not (op.a + 1 <= i and i + 1 <= op.b - 1):
        raise ValueError(f"recurrence index {i} needs neighbours inside [{op.a}, {op.b}]")
    if j in (i - 1, i, i + 1, i + 2):
        raise ValueError(f"indices {k}, {l} are too close for the homogeneous recurrence")
    G = green_matrix(op, z) if resolvent is None else resolvent
    N, L = op.N, op.L
    Gb = G.reshape(N, L, N, L).transpose(0, 2, 1, 3)
    out = {}
    for r in (i, i + 1):
        if side == "row":
            kind, res = _row_residual(op, z, r, Gb[:, j - op.a])
        else:
            kind, res = _column_residual(op, z, r, Gb[j - op.a, :])
        out[kind] = res
    return out["gamma"], out["beta"]


def coupling_min_singular(window: DisorderWindow, k: int, z: complex) -> float:
    """Smallest singular value of alpha_{k+1} - z delta_k^*, the block inverted by the beta-form."""
    L = window.params.L
    S0, S1 = window.S[k - window.lo], window.S[k + 1 - window.lo]
    return float(np.linalg.svd(S1[:L, :L] - z * S0[L:, L:].conj().T, compute_uv=False)[-1])


# --- Schur analysis ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SchurBundle:
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    M: np.ndarray
    N: np.ndarray
    wronskian: np.ndarray
    min_singular: dict
    inverse_frobenius: float
    lower_bound: float
    congruence_error: float

    @property
    def norm_M(self) -> float:
        return float(np.linalg.norm(self.M, 2))

    @property
    def norm_N(self) -> float:
        return float(np.linalg.norm(self.N, 2))

    @property
    def lower_bound_holds(self) -> bool:
        return self.inverse_frobenius >= self.lower_bound * (1.0 - 1e-12)


def congruence_unitaries(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """K1, K2 with [[E, F], [G, H]] = 2 K1 P K2."""
    L = V.shape[0]
    eye = np.eye(L)
    K1 = np.block([[-V, eye], [eye, V.conj().T]]) / np.sqrt(2.0)
    K2 = np.block([[eye, -eye], [eye, eye]]) / np.sqrt(2.0)
    return K1, K2


def schur_analysis(product: TransferProduct, boundary_V: Optional[np.ndarray] = None, raise_on_failure: bool = True) -> SchurBundle:
    L = product.L
    V = np.eye(L, dtype=complex) if boundary_V is None else np.asarray(boundary_V, dtype=complex)
    P = product.matrix
    P11, P12, P21, P22 = P[:L, :L], P[:L, L:], P[L:, :L], P[L:, L:]
    Vh = V.conj().T
    E = (P21 - V @ P11) + (P22 - V @ P12)
    F = -(P21 - V @ P11) + (P22 - V @ P12)
    G = (P11 + Vh @ P21) + (P12 + Vh @ P22)
    H = -(P11 + Vh @ P21) + (P12 + Vh @ P22)
    quantities = {"E": E, "F": F, "BU-A": P12 - P11, "BU+A": P12 + P11}
    smins = {k: float(np.linalg.svd(v, compute_uv=False)[-1]) for k, v in quantities.items()}
    for k, s in smins.items():
        if s < ILL_CONDITIONED_TOL and raise_on_failure:
            raise InvertibilityViolation(k, s)
    W = H @ np.linalg.inv(F) - G @ np.linalg.inv(E)
    smins["wronskian"] = float(np.linalg.svd(W, compute_uv=False)[-1])
    if smins["wronskian"] < ILL_CONDITIONED_TOL and raise_on_failure:
        raise InvertibilityViolation("wronskian", smins["wronskian"])
    M = (P22 - P21) @ np.linalg.inv(P12 - P11) @ Vh
    Nm = (P22 + P21) @ np.linalg.inv(P12 + P11) @ Vh
    P_inv = np.linalg.inv(P)
    inv_f = float(np.linalg.norm(P_inv, "fro"))
    lower = float(np.linalg.norm(np.linalg.inv(E), "fro") / np.linalg.norm(W, "fro"))
    K1, K2 = congruence_unitaries(V)
    X = np.block([[E, F], [G, H]])
    cong = float(np.linalg.norm(2.0 * K2 @ np.linalg.inv(X) @ K1 - P_inv) / np.linalg.norm(P_inv))
    return SchurBundle(E, F, G, H, M, Nm, W, smins, inv_f, lower, cong)


# --- contraction bounds --------------------------------------------------------------


def _q(a: float) -> float:
    return (2.0 - np.sqrt(1.0 - a * a)) ** 2


def mu_closed_form(z_abs: float, a: float) -> float:
    q = _q(a)
    return (1.0 + z_abs) * a * q / (1.0 - a * a - z_abs * a * q)


def lambda_closed_form(z_abs: float, a: float) -> float:
    q = _q(a)
    return a * (1.0 + 2.0 * z_abs + a) * z_abs * q / (1.0 - a * a - (2.0 * z_abs + 1.0) * a * q)


def w_threshold(z_abs: float, a: float) -> float:
    """|z| a (2 - sqrt(1-a^2))^2 / (1 - a^2); W is invertible when this is below 1."""
    return z_abs * a * _q(a) / (1.0 - a * a)


def step_norm_bounds(z_abs: float, a: float) -> dict:
    q = _q(a)
    return {
        "x": (1.0 + 1.0 / z_abs) * a / (1.0 - a * a),
        "y": (1.0 + z_abs) * a / (1.0 - a * a),
        "z": a * (z_abs + a) / (1.0 - a * a),
        "w": z_abs * (1.0 - a * a) * q / (1.0 - a * a - z_abs * a * q),
    }


@dataclass(frozen=True, eq=False)
class ContractionBounds:
    lambda_: float
    mu: float
    w_invertibility_margin: float
    n: int
    f_values: dict
    step_norms: dict
    bound_checks: dict
    p0: int

    @property
    def all_bounds_hold(self) -> bool:
        return all(self.bound_checks.values())

    def bound(self, m: int) -> float:
        return self.lambda_ + (1.0 - self.lambda_) * self.mu ** (m - self.n)


def contraction_bounds(
    window: DisorderWindow,
    z: complex,
    n: int,
    m: int,
    boundary_U: Optional[np.ndarray] = None,
    p0: int = 3,
) -> ContractionBounds:
    """Closed-form lambda, mu and the measured f_j, step norms for j = n..m (even start)."""
    params = window.params
    L = params.L
    a = params.alpha_norm
    margin = w_threshold(abs(z), a)
    if margin >= 1.0:
        raise ThresholdViolated(margin)
    lam, mu = lambda_closed_form(abs(z), a), mu_closed_form(abs(z), a)
    U = np.eye(L, dtype=complex) if boundary_U is None else np.asarray(boundary_U, dtype=complex)
    P = window_transfer_product(z, window, n, n, U, "even").matrix
    steps = pair_transfer_stack(z, window, n + 1, m) if m > n else np.empty((0, 2 * L, 2 * L))

    def f_of(P):
        return float(np.linalg.norm((P[L:, L:] - P[L:, :L]) @ np.linalg.inv(P[:L, L:] - P[:L, :L]), 2))

    f_values = {n: f_of(P)}
    norms = {"x": {}, "y": {}, "z": {}, "w": {}}
    checks = {}
    for j, T in zip(range(n + 1, m + 1), steps):
        P = T @ P
        f_values[j] = f_of(P)
        norms["x"][j] = float(np.linalg.norm(T[:L, L:], 2))
        norms["y"][j] = float(np.linalg.norm(T[L:, :L], 2))
        norms["z"][j] = float(np.linalg.norm(T[L:, L:], 2))
        norms["w"][j] = float(np.linalg.norm(np.linalg.inv(T[:L, :L]), 2))
        if j - n > p0:
            checks[j] = f_values[j] <= lam + (1.0 - lam) * mu ** (j - n) + 1e-12
    return ContractionBounds(lam, mu, margin, n, f_values, norms, checks, p0)
