"""Random environment: site disorder, phase matrices and scattering blocks.

A site ``n`` carries two Haar unitaries, two sign vectors and two phase
vectors.  From them we build the unitary phases

    U_n = exp(i Theta) U_hat,   U_hat = U_tilde diag(D) U_tilde^*
    V_n = V_hat exp(i theta),   V_hat = V_tilde diag(d) V_tilde^*

and the 2L x 2L scattering block

    S(alpha, U, V) = [[alpha,        rho U      ],
                      [V rho_tilde,  -V alpha^* U]]

with rho = (I - alpha alpha^*)^{1/2} and rho_tilde = (I - alpha^* alpha)^{1/2}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NormTooLarge
from .rng import Stream, complex_normals

NORM_KINDS = ("spectral", "frobenius")


def matrix_norm(M: np.ndarray, kind: str = "spectral") -> float:
    if kind == "spectral":
        return float(np.linalg.norm(M, 2))
    if kind == "frobenius":
        return float(np.linalg.norm(M, "fro"))
    raise ValueError(f"unknown norm kind {kind!r}")


@dataclass(frozen=True, eq=False)
class ZipperParams:
    """Model parameters shared by every site of a realization."""

    L: int
    alpha: np.ndarray
    bernoulli_p: float = 0.5
    norm_kind: str = "spectral"
    master_seed: int = 0
    alpha_kind: str = "custom"

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=complex).reshape(self.L, self.L)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        if self.L < 1:
            raise ValueError("L must be positive")
        if not 0.0 < self.bernoulli_p < 1.0:
            raise ValueError("bernoulli_p must lie in (0, 1)")
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {NORM_KINDS}")
        if self.alpha_norm >= 1.0:
            raise NormTooLarge(f"||alpha|| = {self.alpha_norm} must be < 1")

    @property
    def alpha_norm(self) -> float:
        return float(np.linalg.norm(self.alpha, 2))

    @property
    def alpha_min_singular(self) -> float:
        return float(np.linalg.svd(self.alpha, compute_uv=False)[-1])

    @property
    def alpha_invertible(self) -> bool:
        return self.alpha_min_singular > 0.0

    @classmethod
    def scaled_identity(cls, L: int, r: float, **kwargs) -> "ZipperParams":
        return cls(L=L, alpha=r * np.eye(L), alpha_kind="scaled_identity", **kwargs)

    @classmethod
    def scaled_random(cls, L: int, r: float, master_seed: int = 0, **kwargs) -> "ZipperParams":
        """Ginibre matrix rescaled to spectral norm ``r``, drawn from a dedicated stream."""
        g = Stream(master_seed, "alpha", 0).uniforms(0, 1, 4 * L * L)[0]
        G = complex_normals(g[: 2 * L * L]).reshape(L, L)
        alpha = r * G / np.linalg.norm(G, 2)
        return cls(L=L, alpha=alpha, alpha_kind="scaled_random", master_seed=master_seed, **kwargs)

    def replace(self, **changes) -> "ZipperParams":
        fields = dict(
            L=self.L,
            alpha=self.alpha,
            bernoulli_p=self.bernoulli_p,
            norm_kind=self.norm_kind,
            master_seed=self.master_seed,
            alpha_kind=self.alpha_kind,
        )
        fields.update(changes)
        return ZipperParams(**fields)


def haar_from_ginibre(Z: np.ndarray) -> np.ndarray:
    """QR of (a stack of) Ginibre matrices with R's diagonal rephased to be positive.

    The phase correction makes the law exactly Haar; without it the output
    distribution depends on the QR implementation's sign conventions.
    """
    Q, R = np.linalg.qr(Z)
    diag = np.diagonal(R, axis1=-2, axis2=-1)
    phase = diag / np.abs(diag)
    return Q * phase[..., None, :]


def sample_haar_unitary(L: int, stream: np.random.Generator | Stream | int) -> np.ndarray:
    """One L x L Haar unitary."""
    if L < 1:
        raise ValueError("L must be positive")
    if isinstance(stream, Stream):
        stream = stream.generator()
    elif not isinstance(stream, np.random.Generator):
        stream = np.random.default_rng(stream)
    Z = (stream.standard_normal((L, L)) + 1j * stream.standard_normal((L, L))) / np.sqrt(2.0)
    return haar_from_ginibre(Z)


@dataclass(frozen=True, eq=False)
class SiteDisorder:
    V_tilde: np.ndarray
    d: np.ndarray
    theta: np.ndarray
    U_tilde: np.ndarray
    D: np.ndarray
    Theta: np.ndarray
    site_index: int

    def same_as(self, other: "SiteDisorder") -> bool:
        """Bitwise equality of every component."""
        return self.site_index == other.site_index and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("V_tilde", "d", "theta", "U_tilde", "D", "Theta")
        )


@dataclass(frozen=True, eq=False)
class PhasePair:
    U_phase: np.ndarray
    V_phase: np.ndarray
    U_hat: np.ndarray
    V_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class ScatteringBlock:
    matrix: np.ndarray
    site_index: int

    @property
    def L(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def alpha(self) -> np.ndarray:
        return self.matrix[: self.L, : self.L]

    @property
    def beta(self) -> np.ndarray:
        return self.matrix[: self.L, self.L :]

    @property
    def gamma(self) -> np.ndarray:
        return self.matrix[self.L :, : self.L]

    @property
    def delta(self) -> np.ndarray:
        return self.matrix[self.L :, self.L :]


def _hermitian_sqrt(H: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh(H)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (Q * w) @ Q.conj().T


def defect_roots(alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rho, rho_tilde)``, the square roots of ``I - alpha alpha^*`` and ``I - alpha^* alpha``."""
    alpha = np.asarray(alpha, dtype=complex)
    a = float(np.linalg.norm(alpha, 2))
    if a >= 1.0:
        raise NormTooLarge(f"||alpha|| = {a} must be < 1")
    eye = np.eye(alpha.shape[0])
    rho = _hermitian_sqrt(eye - alpha @ alpha.conj().T)
    rho_tilde = _hermitian_sqrt(eye - alpha.conj().T @ alpha)
    return rho, rho_tilde


def phase_pair(site: SiteDisorder) -> PhasePair:
    U_hat = (site.U_tilde * site.D) @ site.U_tilde.conj().T
    V_hat = (site.V_tilde * site.d) @ site.V_tilde.conj().T
    U_phase = np.exp(1j * site.Theta)[:, None] * U_hat
    V_phase = V_hat * np.exp(1j * site.theta)[None, :]
    return PhasePair(U_phase=U_phase, V_phase=V_phase, U_hat=U_hat, V_hat=V_hat)


def scattering_block(alpha: np.ndarray, phases: PhasePair, site: int = 0) -> ScatteringBlock:
    alpha = np.asarray(alpha, dtype=complex)
    rho, rho_tilde = defect_roots(alpha)
    U, V = phases.U_phase, phases.V_phase
    S = np.block([[alpha, rho @ U], [V @ rho_tilde, -V @ alpha.conj().T @ U]])
    return ScatteringBlock(matrix=S, site_index=site)


def _uniforms_per_site(L: int) -> int:
    return 4 * L * L + 4 * L


@dataclass(frozen=True, eq=False)
class DisorderWindow:
    """Disorder for the contiguous sites ``lo .. hi-1`` of one realization.

    All per-site arrays are stacked along axis 0; ``S`` holds the scattering
    blocks and ``U`` / ``V`` the unitary phases, so that hot loops never touch
    Python objects per site.
    """

    params: ZipperParams
    lo: int
    hi: int
    V_tilde: np.ndarray
    d: np.ndarray
    theta: np.ndarray
    U_tilde: np.ndarray
    D: np.ndarray
    Theta: np.ndarray
    trial: int = 0
    U_hat: np.ndarray = field(init=False)
    V_hat: np.ndarray = field(init=False)
    U: np.ndarray = field(init=False)
    V: np.ndarray = field(init=False)
    S: np.ndarray = field(init=False)

    def __post_init__(self):
        Ut, Vt = self.U_tilde, self.V_tilde
        U_hat = (Ut * self.D[:, None, :]) @ np.conj(np.swapaxes(Ut, -1, -2))
        V_hat = (Vt * self.d[:, None, :]) @ np.conj(np.swapaxes(Vt, -1, -2))
        U = np.exp(1j * self.Theta)[:, :, None] * U_hat
        V = V_hat * np.exp(1j * self.theta)[:, None, :]
        alpha = self.params.alpha
        rho, rho_tilde = defect_roots(alpha)
        L = self.params.L
        S = np.empty((self.hi - self.lo, 2 * L, 2 * L), dtype=complex)
        S[:, :L, :L] = alpha
        S[:, :L, L:] = rho @ U
        S[:, L:, :L] = V @ rho_tilde
        S[:, L:, L:] = -(V @ alpha.conj().T) @ U
        for name, value in (("U_hat", U_hat), ("V_hat", V_hat), ("U", U), ("V", V), ("S", S)):
            object.__setattr__(self, name, value)

    def __contains__(self, site: int) -> bool:
        return self.lo <= site < self.hi

    def covers(self, first: int, last: int) -> bool:
        return self.lo <= first and last < self.hi

    def _i(self, site: int) -> int:
        if site not in self:
            raise IndexError(f"site {site} outside window [{self.lo}, {self.hi})")
        return site - self.lo

    def site(self, k: int) -> SiteDisorder:
        i = self._i(k)
        return SiteDisorder(
            V_tilde=self.V_tilde[i],
            d=self.d[i],
            theta=self.theta[i],
            U_tilde=self.U_tilde[i],
            D=self.D[i],
            Theta=self.Theta[i],
            site_index=k,
        )

    def phases(self, k: int) -> PhasePair:
        i = self._i(k)
        return PhasePair(U_phase=self.U[i], V_phase=self.V[i], U_hat=self.U_hat[i], V_hat=self.V_hat[i])

    def block(self, k: int) -> ScatteringBlock:
        return ScatteringBlock(matrix=self.S[self._i(k)], site_index=k)

    def scattering(self, first: int, last: int) -> np.ndarray:
        """Stack of scattering matrices for sites ``first..last`` inclusive."""
        if not self.covers(first, last):
            raise IndexError(f"sites {first}..{last} outside window [{self.lo}, {self.hi})")
        return self.S[first - self.lo : last - self.lo + 1]


def _window_from_uniforms(params: ZipperParams, lo: int, hi: int, u: np.ndarray, trial: int) -> DisorderWindow:
    L = params.L
    n = hi - lo
    g = 2 * L * L
    pos = 0

    def take(k):
        nonlocal pos
        out = u[:, pos : pos + k]
        pos += k
        return out

    V_tilde = haar_from_ginibre(complex_normals(take(g)).reshape(n, L, L))
    d = np.where(take(L) < params.bernoulli_p, 1.0, -1.0)
    theta = 2.0 * np.pi * take(L)
    U_tilde = haar_from_ginibre(complex_normals(take(g)).reshape(n, L, L))
    D = np.where(take(L) < params.bernoulli_p, 1.0, -1.0)
    Theta = 2.0 * np.pi * take(L)
    return DisorderWindow(params, lo, hi, V_tilde, d, theta, U_tilde, D, Theta, trial=trial)


def sample_window(params: ZipperParams, lo: int, hi: int, stream: Optional[Stream] = None) -> DisorderWindow:
    """Disorder for sites ``lo..hi-1``; site ``k`` is identical whatever window contains it."""
    if stream is None:
        stream = Stream(params.master_seed)
    if hi <= lo:
        raise ValueError("empty site range")
    u = stream.uniforms(lo, hi, _uniforms_per_site(params.L))
    return _window_from_uniforms(params, lo, hi, u, stream.trial)


def sample_site_disorder(params: ZipperParams, site: int, stream: Optional[Stream] = None) -> SiteDisorder:
    return sample_window(params, site, site + 1, stream).site(site)


def trivial_window(params: ZipperParams, lo: int, hi: int) -> DisorderWindow:
    """Deterministic window with every phase equal to the identity."""
    L, n = params.L, hi - lo
    eye = np.broadcast_to(np.eye(L, dtype=complex), (n, L, L)).copy()
    ones = np.ones((n, L))
    zeros = np.zeros((n, L))
    return DisorderWindow(params, lo, hi, eye, ones, zeros, eye.copy(), ones.copy(), zeros.copy())
