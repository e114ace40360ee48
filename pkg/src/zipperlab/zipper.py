"""Finite-volume scattering zippers stored as five block diagonals.

The operator on the block interval [a, b] is the product of two layers,

    U = V W,

where the even layer V couples blocks (2k, 2k+1) through S_{2k} and the odd
layer W couples blocks (2k+1, 2k+2) through S_{2k+1}.  A block whose partner
in a layer falls outside [a, b] carries a boundary unitary in that layer:
the left end a carries ``boundary_U`` (in W when a is even, in V when a is
odd), and the right end b carries ``boundary_V`` (in W when b is odd, in V
when b is even).  For [2n, 2m+1] this is the familiar
``V = S_{2n} + ... + S_{2m}``, ``W = U + S_{2n+1} + ... + S_{2m-1} + V``.

Block diagonals are stored as an array ``diags[o + 2, i]`` holding the block
at local position (i, i + o) for offsets o = -2..2.  Flattened indices are
``(k - a) * L + p`` with zero-based intra-block coordinate p.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .disorder import DisorderWindow, defect_roots
from .errors import (
    BoundaryNotUnitary,
    DimensionMismatch,
    EmptyInterval,
    InsufficientWindow,
    ParityMismatch,
    SplitOutOfRange,
    WindowTooSmall,
)

UNITARY_TOL = 1e-10
EVOLVE_MARGIN = 4


def _check_unitary(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise BoundaryNotUnitary(f"{name} must be square")
    err = np.linalg.norm(M.conj().T @ M - np.eye(M.shape[0]))
    if err > UNITARY_TOL:
        raise BoundaryNotUnitary(f"{name} deviates from unitarity by {err:.3e}")
    return M


def _layer(window: DisorderWindow, a: int, b: int, pair_parity: int, left_bc: np.ndarray, right_bc: np.ndarray) -> np.ndarray:
    """Three block diagonals (offsets -1, 0, 1) of one layer on [a, b]."""
    L = window.params.L
    N = b - a + 1
    out = np.zeros((3, N, L, L), dtype=complex)
    firsts = np.array([k for k in range(a, b) if k % 2 == pair_parity], dtype=int)
    if firsts.size:
        S = window.S[firsts - window.lo]
        i = firsts - a
        out[1, i] = S[:, :L, :L]
        out[2, i] = S[:, :L, L:]
        out[0, i + 1] = S[:, L:, :L]
        out[1, i + 1] = S[:, L:, L:]
    if a % 2 != pair_parity:
        out[1, 0] = left_bc
    if b % 2 == pair_parity:
        out[1, N - 1] = right_bc
    return out


def _layer_product(Vd: np.ndarray, Wd: np.ndarray) -> np.ndarray:
    """Five diagonals of V W from the three diagonals of each factor."""
    N, L = Vd.shape[1], Vd.shape[2]
    out = np.zeros((5, N, L, L), dtype=complex)
    for o1 in (-1, 0, 1):
        for o2 in (-1, 0, 1):
            o = o1 + o2
            lo = max(0, -o1, -o)
            hi = min(N, N - o1, N - o)
            if hi <= lo:
                continue
            i = np.arange(lo, hi)
            out[o + 2, i] += Vd[o1 + 1, i] @ Wd[o2 + 1, i + o1]
    return out


def _diags_to_dense(diags: np.ndarray) -> np.ndarray:
    n_off, N, L, _ = diags.shape
    half = n_off // 2
    M = np.zeros((N * L, N * L), dtype=complex)
    for o in range(-half, half + 1):
        for i in range(max(0, -o), min(N, N - o)):
            M[i * L : (i + 1) * L, (i + o) * L : (i + o + 1) * L] = diags[o + half, i]
    return M


@dataclass(frozen=True, eq=False)
class StateVector:
    """Block vector psi_k in C^L for k = start .. start + len - 1."""

    blocks: np.ndarray
    start: int = 0

    @property
    def N(self) -> int:
        return self.blocks.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.blocks))

    @classmethod
    def basis(cls, a: int, b: int, L: int, k: int, p: int) -> "StateVector":
        """The basis vector e_{k,p} (zero-based p) on [a, b]."""
        v = np.zeros((b - a + 1, L), dtype=complex)
        v[k - a, p] = 1.0
        return cls(v, a)

    def flat(self) -> np.ndarray:
        return self.blocks.reshape(-1)


@dataclass(frozen=True, eq=False)
class BlockBandedUnitary:
    a: int
    b: int
    L: int
    diags: np.ndarray
    boundary_U: np.ndarray
    boundary_V: np.ndarray
    V_layer: np.ndarray
    W_layer: np.ndarray
    window: Optional[DisorderWindow] = None

    @property
    def N(self) -> int:
        return self.b - self.a + 1

    @property
    def parity(self) -> tuple[str, str]:
        tag = lambda k: "even" if k % 2 == 0 else "odd"  # noqa: E731
        return tag(self.a), tag(self.b)

    def block(self, k: int, l: int) -> np.ndarray:
        o = l - k
        if abs(o) > 2 or not (self.a <= k <= self.b and self.a <= l <= self.b):
            return np.zeros((self.L, self.L), dtype=complex)
        return self.diags[o + 2, k - self.a]

    def dense(self) -> np.ndarray:
        return _diags_to_dense(self.diags)

    def dense_V(self) -> np.ndarray:
        return _diags_to_dense(self.V_layer)

    def dense_W(self) -> np.ndarray:
        return _diags_to_dense(self.W_layer)

    def flat_index(self, k: int, p: int) -> int:
        return (k - self.a) * self.L + p

    def banded(self, shift: complex = 0.0) -> tuple[np.ndarray, int]:
        """LAPACK band storage of ``U - shift`` and its (equal) lower/upper bandwidth."""
        L, N = self.L, self.N
        n = N * L
        bw = 3 * L - 1
        ab = np.zeros((2 * bw + 1, n), dtype=complex)
        p = np.arange(L)
        for o in range(-2, 3):
            for i in range(max(0, -o), min(N, N - o)):
                rows = i * L + p[:, None]
                cols = (i + o) * L + p[None, :]
                ab[bw + rows - cols, np.broadcast_to(cols, (L, L))] = self.diags[o + 2, i]
        ab[bw] -= shift
        return ab, bw


def build_finite_zipper(
    window: DisorderWindow,
    a: int,
    b: int,
    boundary_U: Optional[np.ndarray] = None,
    boundary_V: Optional[np.ndarray] = None,
) -> BlockBandedUnitary:
    """Assemble U^{[a,b]} = V^{[a,b]} W^{[a,b]} from the window's scattering blocks."""
    if b - a < 1:
        raise EmptyInterval(f"interval [{a}, {b}] needs at least two blocks")
    if not window.covers(a, b):
        raise InsufficientWindow(f"[{a}, {b}] not covered by window [{window.lo}, {window.hi})")
    L = window.params.L
    U = np.eye(L, dtype=complex) if boundary_U is None else _check_unitary(boundary_U, "boundary_U")
    V = np.eye(L, dtype=complex) if boundary_V is None else _check_unitary(boundary_V, "boundary_V")
    Vd = _layer(window, a, b, 0, U, V)
    Wd = _layer(window, a, b, 1, U, V)
    return BlockBandedUnitary(a, b, L, _layer_product(Vd, Wd), U, V, Vd, Wd, window)


# --- factorization -----------------------------------------------------------------


class Factorization(NamedTuple):
    Y: np.ndarray
    D: np.ndarray
    Vprime: np.ndarray
    W: np.ndarray


def factorize(op: BlockBandedUnitary) -> Factorization:
    """Dense factors with U = Y D V' W: the even layer's phases V_hat and exp(i theta) are pulled left."""
    if op.a % 2 != 0:
        raise ParityMismatch("factorization needs an even-start window")
    if op.window is None:
        raise ValueError("operator has no disorder window attached")
    L, N = op.L, op.N
    win = op.window
    rho, rho_t = defect_roots(win.params.alpha)
    alpha = win.params.alpha
    Y = np.eye(N * L, dtype=complex)
    Dm = np.eye(N * L, dtype=complex)
    Vp = np.zeros((N * L, N * L), dtype=complex)
    for k in range(op.a, op.b + 1, 2):
        i = (k - op.a) * L
        if k + 1 > op.b:
            Vp[i : i + L, i : i + L] = op.boundary_V
            continue
        j = k - win.lo
        Y[i + L : i + 2 * L, i + L : i + 2 * L] = win.V_hat[j]
        Dm[i + L : i + 2 * L, i + L : i + 2 * L] = np.diag(np.exp(1j * win.theta[j]))
        U = win.U[j]
        Vp[i : i + 2 * L, i : i + 2 * L] = np.block([[alpha, rho @ U], [rho_t, -alpha.conj().T @ U]])
    return Factorization(Y, Dm, Vp, op.dense_W())


# --- application and evolution -------------------------------------------------------


def apply(op: BlockBandedUnitary, psi: StateVector | np.ndarray) -> StateVector:
    """Banded matrix-vector product, cost O(N L^2)."""
    blocks = psi.blocks if isinstance(psi, StateVector) else np.asarray(psi)
    if blocks.shape != (op.N, op.L):
        raise DimensionMismatch(f"state shape {blocks.shape} does not match ({op.N}, {op.L})")
    N = op.N
    out = np.zeros((N, op.L), dtype=complex)
    for o in range(-2, 3):
        lo, hi = max(0, -o), min(N, N - o)
        if hi > lo:
            out[lo:hi] += np.einsum("nij,nj->ni", op.diags[o + 2, lo:hi], blocks[lo + o : hi + o])
    return StateVector(out, op.a)


@dataclass(frozen=True, eq=False)
class EvolutionRecord:
    """amplitudes[n, k - a, p] = |<e_{k,p}, U^n psi0>|."""

    a: int
    amplitudes: np.ndarray
    norms: np.ndarray

    def amplitude(self, k: int, p: int) -> np.ndarray:
        return self.amplitudes[:, k - self.a, p]


def check_evolution_window(op: BlockBandedUnitary, psi0: StateVector, n_max: int, margin: int = EVOLVE_MARGIN) -> None:
    support = np.nonzero(np.any(psi0.blocks != 0, axis=1))[0]
    if support.size == 0:
        return
    lo = int(support[0])
    hi = op.N - 1 - int(support[-1])
    need = 2 * n_max + margin
    if min(lo, hi) <= need:
        raise WindowTooSmall(f"support is {min(lo, hi)} blocks from the boundary; need more than {need}")


def evolve(op: BlockBandedUnitary, psi0: StateVector, n_max: int) -> EvolutionRecord:
    check_evolution_window(op, psi0, n_max)
    amps = np.empty((n_max + 1, op.N, op.L))
    norms = np.empty(n_max + 1)
    psi = psi0
    for n in range(n_max + 1):
        amps[n] = np.abs(psi.blocks)
        norms[n] = psi.norm
        if n < n_max:
            psi = apply(op, psi)
    return EvolutionRecord(op.a, amps, norms)


# --- defect decomposition ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DefectOperator:
    blocks: dict
    split: int
    parity: str
    L: int

    def dense(self, a: int, b: int) -> np.ndarray:
        N, L = b - a + 1, self.L
        M = np.zeros((N * L, N * L), dtype=complex)
        for (r, c), B in self.blocks.items():
            M[(r - a) * L : (r - a + 1) * L, (c - a) * L : (c - a + 1) * L] = B
        return M


def _layer_blocks(layer: np.ndarray, a: int) -> dict:
    out = {}
    _, N, _, _ = layer.shape
    for o in (-1, 0, 1):
        for i in range(max(0, -o), min(N, N - o)):
            out[(a + i, a + i + o)] = layer[o + 1, i]
    return out


def _sparse_diff(X: dict, Y: dict) -> dict:
    out = {}
    for key in set(X) | set(Y):
        d = X.get(key, 0) - Y.get(key, 0)
        if np.any(d != 0):
            out[key] = d
    return out


def _sparse_mul(X: dict, Y: dict) -> dict:
    out: dict = {}
    by_row: dict = {}
    for (r, c), B in Y.items():
        by_row.setdefault(r, []).append((c, B))
    for (r, t), A in X.items():
        for c, B in by_row.get(t, []):
            out[(r, c)] = out.get((r, c), 0) + A @ B
    return {k: v for k, v in out.items() if np.any(v != 0)}


def split_with_defect(
    op: BlockBandedUnitary,
    split: int,
    parity: Optional[str] = None,
    cut_U: Optional[np.ndarray] = None,
    cut_V: Optional[np.ndarray] = None,
) -> tuple[BlockBandedUnitary, BlockBandedUnitary, DefectOperator]:
    """U^{[a,b]} = U^{[a, split-1]} + U^{[split, b]} + Gamma.

    The new right end of the left piece carries ``cut_V`` and the new left
    end of the right piece carries ``cut_U`` (defaults: the operator's own
    boundary unitaries).  ``parity`` names the parity of ``split``.
    """
    if not (op.a + 2 <= split <= op.b - 1):
        raise SplitOutOfRange(f"split {split} must lie in [{op.a + 2}, {op.b - 1}]")
    tag = "even" if split % 2 == 0 else "odd"
    if parity is not None and parity != tag:
        raise ParityMismatch(f"split {split} is {tag}, not {parity}")
    if op.window is None:
        raise ValueError("operator has no disorder window attached")
    cU = op.boundary_U if cut_U is None else cut_U
    cV = op.boundary_V if cut_V is None else cut_V
    left = build_finite_zipper(op.window, op.a, split - 1, op.boundary_U, cV)
    right = build_finite_zipper(op.window, split, op.b, cU, op.boundary_V)
    V_full, W_full = _layer_blocks(op.V_layer, op.a), _layer_blocks(op.W_layer, op.a)
    V_split = {**_layer_blocks(left.V_layer, left.a), **_layer_blocks(right.V_layer, right.a)}
    W_split = {**_layer_blocks(left.W_layer, left.a), **_layer_blocks(right.W_layer, right.a)}
    dV, dW = _sparse_diff(V_full, V_split), _sparse_diff(W_full, W_split)
    gamma = _sparse_mul(V_full, dW)
    for key, val in _sparse_mul(dV, W_split).items():
        gamma[key] = gamma.get(key, 0) + val
    gamma = {k: v for k, v in gamma.items() if np.any(v != 0)}
    return left, right, DefectOperator(gamma, split, tag, op.L)


def direct_sum_dense(left: BlockBandedUnitary, right: BlockBandedUnitary) -> np.ndarray:
    A, B = left.dense(), right.dense()
    out = np.zeros((A.shape[0] + B.shape[0],) * 2, dtype=complex)
    out[: A.shape[0], : A.shape[0]] = A
    out[A.shape[0] :, A.shape[0] :] = B
    return out


# --- text serialization --------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_text(op: BlockBandedUnitary) -> str:
    """Header plus one line per stored block: ``offset row re,im re,im ...`` (row-major)."""
    buf = io.StringIO()
    buf.write("zipperlab-operator v1\n")
    buf.write(f"a {op.a}\nb {op.b}\nL {op.L}\n")
    for name, M in (("boundary_U", op.boundary_U), ("boundary_V", op.boundary_V)):
        buf.write(name + " " + " ".join(f"{_fmt(v.real)},{_fmt(v.imag)}" for v in M.reshape(-1)) + "\n")
    for o in range(-2, 3):
        buf.write(f"diagonal {o}\n")
        for i in range(max(0, -o), min(op.N, op.N - o)):
            B = op.diags[o + 2, i].reshape(-1)
            buf.write(f"{op.a + i} " + " ".join(f"{_fmt(v.real)},{_fmt(v.imag)}" for v in B) + "\n")
    return buf.getvalue()


def from_text(text: str) -> BlockBandedUnitary:
    """Inverse of :func:`to_text`; the layers and window are not serialized."""
    lines = text.strip().splitlines()
    if lines[0].strip() != "zipperlab-operator v1":
        raise ValueError("not a serialized operator")
    a, b, L = (int(lines[i].split()[1]) for i in (1, 2, 3))
    N = b - a + 1

    def parse(tokens, shape):
        vals = [complex(float(t.split(",")[0]), float(t.split(",")[1])) for t in tokens]
        return np.array(vals, dtype=complex).reshape(shape)

    U = parse(lines[4].split()[1:], (L, L))
    V = parse(lines[5].split()[1:], (L, L))
    diags = np.zeros((5, N, L, L), dtype=complex)
    o = None
    for line in lines[6:]:
        parts = line.split()
        if parts[0] == "diagonal":
            o = int(parts[1])
            continue
        diags[o + 2, int(parts[0]) - a] = parse(parts[1:], (L, L))
    empty = np.zeros((3, N, L, L), dtype=complex)
    return BlockBandedUnitary(a, b, L, diags, U, V, empty, empty.copy(), None)
