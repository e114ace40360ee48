"""Transfer matrices, their products, and the Lyapunov spectrum of the cocycle.

Conventions
-----------
A scattering block maps incoming to outgoing amplitudes.  The map
:func:`phi_map` rewires it into a transfer matrix: if ``(p; q) = S (x; y)``
then ``phi(S) (x; p) = (q; y)``.  The two-site transfer matrix is

    T_k(z) = phi(z^{-1} S_{2k}) phi(S_{2k-1}),

and a direct computation gives the factored form

    phi(z^{-1} S) = diag(V, U^*) [[ z^{-1} rt^{-1},  -rt^{-1} alpha^* ],
                                  [ -alpha rt^{-1},   z r^{-1}        ]]

with ``r = rho(alpha)`` and ``rt = rho_tilde(alpha)``.  The batched code paths
use the factored form; :func:`transfer_matrix` goes through :func:`phi_map`
and the two are cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Optional, Sequence

import numpy as np

from .disorder import (
    DisorderWindow,
    PhasePair,
    ScatteringBlock,
    SiteDisorder,
    ZipperParams,
    defect_roots,
    phase_pair,
    sample_window,
    scattering_block,
    trivial_window,
)
from .errors import (
    DegenerateCocycle,
    DimensionTooLarge,
    InsufficientWindow,
    SingularBeta,
    ZeroSpectralParameter,
)
from .rng import Stream, complex_normals, parallel_map

BETA_SINGULAR_TOL = 1e-12


def lorentz_form(L: int) -> np.ndarray:
    """The indefinite form diag(I_L, -I_L)."""
    return np.diag(np.concatenate([np.ones(L), -np.ones(L)])).astype(complex)


def phi_map(S: ScatteringBlock | np.ndarray) -> np.ndarray:
    """Rewire a scattering matrix with invertible upper-right block into a transfer matrix."""
    M = S.matrix if isinstance(S, ScatteringBlock) else np.asarray(S, dtype=complex)
    L = M.shape[0] // 2
    a, b, c, d = M[:L, :L], M[:L, L:], M[L:, :L], M[L:, L:]
    smin = np.linalg.svd(b, compute_uv=False)[-1]
    if smin < BETA_SINGULAR_TOL:
        raise SingularBeta(f"beta block smallest singular value {smin:.3e}")
    b_inv = np.linalg.inv(b)
    db = d @ b_inv
    return np.block([[c - db @ a, db], [-b_inv @ a, b_inv]])


def beta_condition(S: ScatteringBlock | np.ndarray) -> float:
    M = S.matrix if isinstance(S, ScatteringBlock) else np.asarray(S)
    L = M.shape[0] // 2
    return float(np.linalg.cond(M[:L, L:]))


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    matrix: np.ndarray
    z: complex
    pair_index: int


def middle_factor(alpha: np.ndarray, z: complex) -> np.ndarray:
    """The phase-free factor of phi(z^{-1} S)."""
    if z == 0:
        raise ZeroSpectralParameter("z must be nonzero")
    alpha = np.asarray(alpha, dtype=complex)
    rho, rho_t = defect_roots(alpha)
    rho_inv = np.linalg.inv(rho)
    rho_t_inv = np.linalg.inv(rho_t)
    return np.block(
        [
            [rho_t_inv / z, -rho_t_inv @ alpha.conj().T],
            [-alpha @ rho_t_inv, z * rho_inv],
        ]
    )


def _as_phases(site: SiteDisorder | PhasePair) -> PhasePair:
    return site if isinstance(site, PhasePair) else phase_pair(site)


def transfer_matrix(
    z: complex,
    even_site: SiteDisorder | PhasePair,
    odd_site: SiteDisorder | PhasePair,
    alpha: np.ndarray,
    pair_index: int = 0,
) -> TransferMatrix:
    """Two-site transfer matrix built literally as phi(z^{-1} S_even) phi(S_odd)."""
    if z == 0:
        raise ZeroSpectralParameter("z must be nonzero")
    S_even = scattering_block(alpha, _as_phases(even_site))
    S_odd = scattering_block(alpha, _as_phases(odd_site))
    T = phi_map(S_even.matrix / z) @ phi_map(S_odd)
    return TransferMatrix(matrix=T, z=complex(z), pair_index=pair_index)


def factored_transfer_matrix(
    z: complex, even_site: SiteDisorder | PhasePair, odd_site: SiteDisorder | PhasePair, alpha: np.ndarray
) -> np.ndarray:
    """Same matrix as :func:`transfer_matrix`, assembled from phase and middle factors."""
    pe, po = _as_phases(even_site), _as_phases(odd_site)
    L = np.asarray(alpha).shape[0]
    zero = np.zeros((L, L))
    de = np.block([[pe.V_phase, zero], [zero, pe.U_phase.conj().T]])
    do = np.block([[po.V_phase, zero], [zero, po.U_phase.conj().T]])
    return de @ middle_factor(alpha, z) @ do @ middle_factor(alpha, 1.0)


def half_steps(z: complex, window: DisorderWindow, first: int, last: int) -> np.ndarray:
    """Stack of phi(z^{-1} S_j) for sites first..last (inclusive), via the factored form."""
    if not window.covers(first, last):
        raise InsufficientWindow(f"sites {first}..{last} not in window [{window.lo}, {window.hi})")
    L = window.params.L
    i0, i1 = first - window.lo, last - window.lo + 1
    V = window.V[i0:i1]
    Uh = np.conj(np.swapaxes(window.U[i0:i1], -1, -2))
    mid = middle_factor(window.params.alpha, z)
    out = np.empty((i1 - i0, 2 * L, 2 * L), dtype=complex)
    out[:, :L, :] = V @ mid[:L, :]
    out[:, L:, :] = Uh @ mid[L:, :]
    return out


def pair_transfer_stack(z: complex, window: DisorderWindow, k_first: int, k_last: int) -> np.ndarray:
    """Stack of T_k(z) for k = k_first..k_last, using sites 2k_first-1 .. 2k_last."""
    if z == 0:
        raise ZeroSpectralParameter("z must be nonzero")
    if k_last < k_first:
        return np.empty((0, 2 * window.params.L, 2 * window.params.L), dtype=complex)
    first, last = 2 * k_first - 1, 2 * k_last
    if not window.covers(first, last):
        raise InsufficientWindow(f"pairs {k_first}..{k_last} need sites {first}..{last}")
    even = half_steps(z, window, first + 1, last)[0::2]
    odd = half_steps(1.0, window, first, last - 1)[0::2]
    return even @ odd


def ordered_product(stack: np.ndarray, dim: int) -> np.ndarray:
    """stack[-1] @ ... @ stack[0] (later factors act on the left)."""
    P = np.eye(dim, dtype=complex)
    for T in stack:
        P = T @ P
    return P


@dataclass(frozen=True, eq=False)
class TransferProduct:
    """Raw product ``matrix = [[A, B Y], [C, D Y]]`` with a boundary factor ``Y``.

    For plain products ``Y`` is the boundary unitary U.  For the products that
    encode an odd-start finite window ``Y = z U^*``, which is how the boundary
    condition enters the chain in that case.
    """

    matrix: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    n: int
    m: int
    z: complex
    boundary_U: np.ndarray
    boundary_factor: np.ndarray
    start_parity: str = "even"

    @property
    def L(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_raw(cls, P, n, m, z, boundary_U, Y, start_parity="even") -> "TransferProduct":
        L = P.shape[0] // 2
        Y_inv = np.linalg.inv(Y)
        return cls(
            matrix=P,
            A=P[:L, :L],
            B=P[:L, L:] @ Y_inv,
            C=P[L:, :L],
            D=P[L:, L:] @ Y_inv,
            n=n,
            m=m,
            z=complex(z),
            boundary_U=boundary_U,
            boundary_factor=Y,
            start_parity=start_parity,
        )


def transfer_product(
    z: complex, window: DisorderWindow, n: int, m: int, boundary_U: Optional[np.ndarray] = None
) -> TransferProduct:
    """T_m ... T_n with blocks A = P11, B = P12 U^*, C = P21, D = P22 U^*."""
    if m < n:
        raise ValueError("m must be >= n")
    L = window.params.L
    U = np.eye(L, dtype=complex) if boundary_U is None else np.asarray(boundary_U, dtype=complex)
    P = ordered_product(pair_transfer_stack(z, window, n, m), 2 * L)
    return TransferProduct.from_raw(P, n, m, z, U, U)


def window_transfer_product(
    z: complex,
    window: DisorderWindow,
    n: int,
    m: int,
    boundary_U: Optional[np.ndarray] = None,
    start_parity: str = "even",
) -> TransferProduct:
    """Transfer product encoding the finite window [2n, 2m+1] (even) or [2n+1, 2m+1] (odd).

    Even start: the boundary condition Psi_{2n} = U Phi_{2n} feeds the half
    step at site 2n, so the raw product is
    ``T_m ... T_{n+1} phi(z^{-1} S_{2n}) [[0, U], [I, 0]]``.
    Odd start: the boundary condition sits in the even layer at site 2n+1,
    giving Psi_{2n+1} = z U^* Phi_{2n+1}, so the raw product is
    ``T_m ... T_{n+1} diag(I, z U^*)``.
    """
    L = window.params.L
    U = np.eye(L, dtype=complex) if boundary_U is None else np.asarray(boundary_U, dtype=complex)
    eye, zero = np.eye(L, dtype=complex), np.zeros((L, L), dtype=complex)
    tail = ordered_product(pair_transfer_stack(z, window, n + 1, m), 2 * L)
    if start_parity == "even":
        h = half_steps(z, window, 2 * n, 2 * n)[0]
        P = tail @ h @ np.block([[zero, U], [eye, zero]])
        Y = U
    elif start_parity == "odd":
        Y = z * U.conj().T
        P = tail @ np.block([[eye, zero], [zero, Y]])
    else:
        raise ValueError("start_parity must be 'even' or 'odd'")
    return TransferProduct.from_raw(P, n, m, z, U, Y, start_parity)


def cocycle(z: complex, window: DisorderWindow, n_steps: int) -> np.ndarray:
    """Phi(z, n) = T_n ... T_1, with Phi(z, 0) = I."""
    L = window.params.L
    if n_steps == 0:
        return np.eye(2 * L, dtype=complex)
    return ordered_product(pair_transfer_stack(z, window, 1, n_steps), 2 * L)


# --- norm bounds used as validators -------------------------------------------------


def c_eps(eps: float) -> float:
    return max(1.0 / (1.0 - eps), 1.0 + eps)


def factor_norm_bound(alpha_norm: float, eps: float) -> float:
    """Upper bound 4 c_eps^2 (1+a)^2 / (1-a^2) for a single transfer matrix on the annulus."""
    a = alpha_norm
    return 4.0 * c_eps(eps) ** 2 * (1.0 + a) ** 2 / (1.0 - a * a)


def lipschitz_constant(alpha: np.ndarray, eps: float, right_factor: np.ndarray) -> float:
    """Lipschitz constant of z -> T(z) on the annulus of half-width eps."""
    a = float(np.linalg.norm(alpha, 2))
    return float(np.linalg.norm(right_factor, 2)) * (1.0 / np.sqrt(1.0 - a * a)) * (1.0 + 1.0 / (1.0 - eps) ** 2)


# --- Lyapunov spectrum ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LyapunovSpectrum:
    gammas: np.ndarray
    stderrs: np.ndarray
    n_steps: int
    n_realizations: int
    z: complex
    per_realization: np.ndarray

    def symmetry_defects(self) -> np.ndarray:
        """gamma_k + gamma_{2L+1-k} for k = 1..L."""
        g = self.gammas
        return g + g[::-1]


def _qr_exponents(stack: np.ndarray, cadence: int) -> np.ndarray:
    dim = stack.shape[-1]
    Q = np.eye(dim, dtype=complex)
    acc = np.zeros(dim)
    n = stack.shape[0]
    for i in range(n):
        Q = stack[i] @ Q
        if (i + 1) % cadence == 0 or i == n - 1:
            Q, R = np.linalg.qr(Q)
            diag = np.abs(np.diagonal(R))
            if not np.all(diag > 0.0) or not np.all(np.isfinite(diag)):
                raise DegenerateCocycle(f"rank loss at step {i}")
            acc += np.log(diag)
    return acc / n


def lyapunov_realization(
    z: complex, params: ZipperParams, n_steps: int, stream: Stream, trivial: bool = False
) -> np.ndarray:
    """Sorted (descending) exponent estimates for one realization."""
    window = trivial_window(params, 1, 2 * n_steps + 1) if trivial else sample_window(params, 1, 2 * n_steps + 1, stream)
    stack = pair_transfer_stack(z, window, 1, n_steps)
    if not np.all(np.isfinite(stack)):
        raise DegenerateCocycle("non-finite transfer matrix")
    cadence = 1 if params.L <= 2 else 5
    return np.sort(_qr_exponents(stack, cadence))[::-1]


def lyapunov_spectrum(
    z: complex,
    params: ZipperParams,
    n_steps: int,
    n_realizations: int,
    stream: Optional[Stream] = None,
    workers: int = 1,
    trivial: bool = False,
) -> LyapunovSpectrum:
    """Ergodic estimate of the 2L Lyapunov exponents per two-site step."""
    if n_steps < 100:
        raise ValueError("n_steps must be at least 100")
    if z == 0:
        raise ZeroSpectralParameter("z must be nonzero")
    base = stream if stream is not None else Stream(params.master_seed, "lyapunov")
    runs = parallel_map(
        lambda r: lyapunov_realization(z, params, n_steps, base.child(r), trivial), n_realizations, workers
    )
    per = np.array(runs)
    gammas = per.sum(axis=0) / n_realizations
    if n_realizations > 1:
        stderrs = np.sqrt(((per - gammas) ** 2).sum(axis=0) / (n_realizations - 1) / n_realizations)
    else:
        stderrs = np.full(per.shape[1], np.nan)
    return LyapunovSpectrum(gammas, stderrs, n_steps, n_realizations, complex(z), per)


# --- structure validators ------------------------------------------------------------


def exterior_power(M: np.ndarray, p: int) -> np.ndarray:
    """Matrix of p x p minors, rows and columns in lexicographic order of index sets."""
    M = np.asarray(M)
    k = M.shape[0]
    if k > 8:
        raise DimensionTooLarge("exterior powers are limited to k <= 8")
    if not 1 <= p <= k:
        raise ValueError("need 1 <= p <= k")
    idx = np.array(list(combinations(range(k), p)))
    sub = M[idx[:, None, :, None], idx[None, :, None, :]]
    out = np.linalg.det(sub)
    assert out.shape == (comb(k, p), comb(k, p))
    return out


def cayley_matrix(L: int) -> np.ndarray:
    eye = np.eye(L)
    return np.block([[eye, -1j * eye], [eye, 1j * eye]]) / np.sqrt(2.0)


def symplectic_form(L: int) -> np.ndarray:
    eye, zero = np.eye(L), np.zeros((L, L))
    return np.block([[zero, -eye], [eye, zero]]).astype(complex)


def realify(M: np.ndarray) -> np.ndarray:
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def structure_maps(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (C^* M C, pi(M)) for the Cayley matrix C and realification pi."""
    M = np.asarray(M, dtype=complex)
    C = cayley_matrix(M.shape[0] // 2)
    return C.conj().T @ M @ C, realify(M)


# --- inverse products ------------------------------------------------------------------


INVERSE_PROBE_MODES = ("inverse", "reciprocal")


def inverse_product_samples(
    z: complex,
    params: ZipperParams,
    s: float,
    distances: Sequence[int],
    stream: Stream,
    trivial: bool = False,
    vector: Optional[np.ndarray] = None,
    mode: str = "inverse",
) -> np.ndarray:
    """One trial: ||(T_d ... T_0)^{-1} v||^s for each distance d.

    The inverse is taken through the inverse relation
    T(z)^{-1} = Lorentz T(1/conj z)^* Lorentz, which avoids inverting an
    ill-conditioned product.  With ``mode="reciprocal"`` the sample is
    ||(T_d ... T_0) v||^{-s} instead; that is the quantity which decays for a
    generic v, because the cocycle has exponents of both signs.
    """
    if mode not in INVERSE_PROBE_MODES:
        raise ValueError(f"mode must be one of {INVERSE_PROBE_MODES}")
    L = params.L
    dmax = max(distances)
    window = trivial_window(params, -1, 2 * dmax + 1) if trivial else sample_window(params, -1, 2 * dmax + 1, stream)
    if vector is None:
        vector = complex_normals(stream.with_purpose("probe_vector").uniforms(0, 1, 4 * L)[0])
    v = vector / np.linalg.norm(vector)
    wanted = set(distances)
    values = {}
    if mode == "reciprocal":
        stack = pair_transfer_stack(z, window, 0, dmax)
        x = v.astype(complex)
        for d in range(dmax + 1):
            x = stack[d] @ x
            if d in wanted:
                values[d] = float(np.linalg.norm(x)) ** (-s)
        return np.array([values[d] for d in distances])
    stack = pair_transfer_stack(1.0 / np.conj(z), window, 0, dmax)
    Lf = lorentz_form(L)
    P = np.eye(2 * L, dtype=complex)
    for d in range(dmax + 1):
        P = stack[d] @ P
        if d in wanted:
            inv = Lf @ P.conj().T @ Lf
            values[d] = float(np.linalg.norm(inv @ v)) ** s
    return np.array([values[d] for d in distances])


def inverse_product_decay_probe(
    z: complex,
    params: ZipperParams,
    s: float,
    distances: Sequence[int],
    n_trials: int,
    stream: Optional[Stream] = None,
    workers: int = 1,
    mode: str = "inverse",
) -> dict[int, np.ndarray]:
    """Per-distance samples of ||(T_m ... T_n)^{-1} v||^s over independent trials."""
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    base = stream if stream is not None else Stream(params.master_seed, "inverse_probe")
    rows = parallel_map(lambda t: inverse_product_samples(z, params, s, distances, base.child(t), mode=mode), n_trials, workers)
    arr = np.array(rows)
    return {d: arr[:, j] for j, d in enumerate(distances)}
