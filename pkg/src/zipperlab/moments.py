"""Monte Carlo estimators for moments of Green kernels and dynamical quantities.

Every estimator runs independent trials indexed by an integer; trial ``t``
draws its disorder from the stream ``(master_seed, purpose, t)``, so that the
output is identical for any worker count.  Different distances inside one
trial share the disorder of the sites they have in common, which makes the
per-distance means positively correlated and the fitted decay slopes less
noisy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg

from .disorder import ZipperParams, matrix_norm, phase_pair, sample_haar_unitary, sample_site_disorder, sample_window
from .errors import (
    InsufficientData,
    NumericalFailureBudgetExceeded,
    QuadratureUnderResolved,
    SingularSample,
    WindowTooSmall,
    ZipperError,
)
from .green import green_columns, green_corner, green_direct
from .rng import Stream, ordered_mean_and_stderr, parallel_map
from .transfer import inverse_product_decay_probe
from .zipper import EVOLVE_MARGIN, BlockBandedUnitary, StateVector, build_finite_zipper, evolve

FAILURE_BUDGET = 1e-3
DEFAULT_EXCLUSION = 3


@dataclass(frozen=True)
class MomentEstimate:
    quantity: str
    z: complex
    distance: int
    mean: float
    stderr: float
    n_samples: int
    s: Optional[float] = None
    n_discarded: int = 0
    interval: str = ""
    norm_kind: str = "spectral"
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    distances: tuple
    exclusion_threshold: int

    @property
    def n_points(self) -> int:
        return len(self.distances)

    @property
    def rate(self) -> float:
        return -self.slope


@dataclass(frozen=True)
class WindowPolicy:
    """``reduced``: window [k, l] with (k, l) its corner; ``fixed_margin``: [k - margin, l + margin]."""

    kind: str = "reduced"
    margin: int = 0

    def __post_init__(self):
        if self.kind not in ("reduced", "fixed_margin"):
            raise ValueError("window policy must be 'reduced' or 'fixed_margin'")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @classmethod
    def parse(cls, text) -> "WindowPolicy":
        if isinstance(text, WindowPolicy):
            return text
        if isinstance(text, str):
            if text == "reduced":
                return cls("reduced")
            if text.startswith("fixed_margin"):
                _, _, value = text.partition(":")
                return cls("fixed_margin", int(value or 0))
        if isinstance(text, dict):
            return cls(text.get("kind", "reduced"), int(text.get("margin", 0)))
        raise ValueError(f"cannot parse window policy {text!r}")

    def describe(self) -> str:
        return self.kind if self.kind == "reduced" else f"fixed_margin:{self.margin}"

    def interval(self, k: int, l: int) -> tuple[int, int]:
        lo, hi = min(k, l), max(k, l)
        m = self.margin if self.kind == "fixed_margin" else 0
        return lo - m, hi + m


def _run_trials(fn: Callable[[int], np.ndarray], n: int, workers: int, width: int) -> tuple[np.ndarray, int]:
    """Map trials, replacing failed ones by NaN rows; raise when failures exceed the budget."""

    def safe(t):
        try:
            return np.asarray(fn(t), dtype=float), False
        except ZipperError:
            return np.full(width, np.nan), True

    out = parallel_map(safe, n, workers)
    values = np.array([row for row, _ in out]).reshape(n, width)
    failed = int(sum(flag for _, flag in out))
    if n and failed / n > FAILURE_BUDGET:
        raise NumericalFailureBudgetExceeded(f"{failed} of {n} trials failed")
    return values, failed


def boundary_pair(L: int, kind: str, stream: Stream) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Boundary unitaries (U, V) for one trial: identity, or Haar from the trial's own streams."""
    if kind == "identity":
        return None, None
    if kind == "haar":
        return (
            sample_haar_unitary(L, stream.with_purpose("boundary_U")),
            sample_haar_unitary(L, stream.with_purpose("boundary_V")),
        )
    raise ValueError(f"unknown boundary kind {kind!r}")


def _summarize(values: np.ndarray) -> tuple[float, float, int]:
    good = values[np.isfinite(values)]
    mean, err = ordered_mean_and_stderr(good)
    return mean, err, int(good.size)


def _pair_for(k0: int, d: int) -> tuple[int, int]:
    return k0, k0 + d


def _green_sample(params, window, z, k, l, policy: WindowPolicy, U=None, V=None, counters=None) -> np.ndarray:
    """G(z, k, l) on the policy's window; corners (a, b) with b odd use the transfer formula."""
    a, b = policy.interval(k, l)
    if policy.kind == "reduced" and (k, l) == (a, b) and b % 2 == 1 and b - a >= 3:
        parity = "even" if a % 2 == 0 else "odd"
        n, m = a // 2, (b - 1) // 2
        return green_corner(window, z, n, m, U, V, parity, params.norm_kind, counters).block
    op = build_finite_zipper(window, a, b, U, V)
    return green_direct(op, z, k, l, params.norm_kind).block


def fractional_moment_scan(
    params: ZipperParams,
    z_grid: Sequence[complex],
    s: float,
    distances: Sequence[int],
    policy: WindowPolicy | str = "reduced",
    n_samples: int = 100,
    stream: Optional[Stream] = None,
    workers: int = 1,
    k0: int = 0,
    keep_samples: bool = False,
    boundary: str = "identity",
    counters: Optional[dict] = None,
) -> list[MomentEstimate]:
    """E ||G(z, k0, k0 + d)||^s for each z and distance d."""
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    policy = WindowPolicy.parse(policy)
    base = stream if stream is not None else Stream(params.master_seed, "fractional")
    pairs = [_pair_for(k0, d) for d in distances]
    lo = min(policy.interval(k, l)[0] for k, l in pairs)
    hi = max(policy.interval(k, l)[1] for k, l in pairs)
    z_list = [complex(z) for z in z_grid]

    def trial(t):
        window = sample_window(params, lo, hi + 1, base.child(t))
        U, V = boundary_pair(params.L, boundary, base.child(t))
        local: dict = {}
        row = []
        for z in z_list:
            for k, l in pairs:
                G = _green_sample(params, window, z, k, l, policy, U, V, local)
                row.append(matrix_norm(G, params.norm_kind) ** s)
        row.append(local.get("fallback_direct", 0))
        return row

    width = len(z_list) * len(pairs)
    values, failed = _run_trials(trial, n_samples, workers, width + 1)
    if counters is not None:
        fallbacks = int(np.nansum(values[:, -1]))
        counters["fallback_direct"] = counters.get("fallback_direct", 0) + fallbacks
        counters["discarded"] = counters.get("discarded", 0) + failed
    out = []
    for iz, z in enumerate(z_list):
        for j, (d, (k, l)) in enumerate(zip(distances, pairs)):
            col = values[:, iz * len(pairs) + j]
            mean, err, n_ok = _summarize(col)
            extra = {"k": k, "l": l}
            if keep_samples:
                extra["samples"] = col
            out.append(
                MomentEstimate(
                    "fractional_green", z, int(d), mean, err, n_ok, s, failed, policy.describe(), params.norm_kind, extra
                )
            )
    return out


def decay_fit(estimates: Sequence[MomentEstimate], exclusion_threshold: int = DEFAULT_EXCLUSION) -> DecayFit:
    """Weighted least squares of log(mean) against distance, weights (mean / stderr)^2.

    When any standard error is zero or missing the fit falls back to equal
    weights.  The slope error is the weighted-regression standard error,
    inflated by sqrt(reduced chi^2) when the scatter exceeds the stated
    errors.
    """
    pts = [e for e in estimates if e.distance > exclusion_threshold and e.mean > 0 and np.isfinite(e.mean)]
    if len(pts) < 4:
        raise InsufficientData(f"need at least 4 usable distances, got {len(pts)}")
    x = np.array([e.distance for e in pts], dtype=float)
    y = np.log([e.mean for e in pts])
    se = np.array([e.stderr for e in pts], dtype=float)
    rel = se / np.array([e.mean for e in pts])
    if np.all(np.isfinite(rel)) and np.all(rel > 0):
        w = 1.0 / rel**2
        weighted = True
    else:
        w = np.ones_like(x)
        weighted = False
    X = np.column_stack([np.ones_like(x), x])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    intercept, slope = cov @ (XtW @ y)
    resid = y - (intercept + slope * x)
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * resid**2))
    flat = np.ptp(y) <= 1e-12 * max(1.0, float(np.max(np.abs(y))))
    r2 = 0.0 if flat or ss_tot <= 0 else 1.0 - ss_res / ss_tot
    dof = len(x) - 2
    if weighted:
        scale = max(1.0, ss_res / dof)
    else:
        scale = ss_res / dof
    slope_se = float(np.sqrt(cov[1, 1] * scale))
    return DecayFit(float(slope), float(intercept), float(r2), slope_se, tuple(int(v) for v in x), exclusion_threshold)


def second_order_moment(
    params: ZipperParams,
    z: complex,
    kp: tuple[int, int],
    lq: tuple[int, int],
    policy: WindowPolicy | str = "fixed_margin:4",
    n_samples: int = 100,
    stream: Optional[Stream] = None,
    workers: int = 1,
    boundary: str = "identity",
) -> MomentEstimate:
    """(1 - |z|^2) |<e_{k,p}, (U - z)^{-1} e_{l,q}>|^2.

    ``mean`` is the estimate with weight |1 - |z|^2| (non-negative); the
    signed variant is in ``extra['signed_mean']``.
    """
    k, p = kp
    l, q = lq
    return second_order_scan(params, z, k, (p, q), [l - k], policy, n_samples, stream, workers, boundary)[0]


def second_order_scan(
    params: ZipperParams,
    z: complex,
    k0: int,
    coords: tuple[int, int],
    offsets: Sequence[int],
    policy: WindowPolicy | str = "fixed_margin:4",
    n_samples: int = 100,
    stream: Optional[Stream] = None,
    workers: int = 1,
    boundary: str = "identity",
) -> list[MomentEstimate]:
    """Second-order observable for the pairs (k0, k0 + offset), sharing disorder within a trial."""
    if abs(z) == 1.0:
        raise ValueError("|z| must differ from 1")
    policy = WindowPolicy.parse(policy)
    base = stream if stream is not None else Stream(params.master_seed, "second_order")
    p, q = coords
    pairs = [(k0, k0 + d) for d in offsets]
    lo = min(policy.interval(k, l)[0] for k, l in pairs)
    hi = max(policy.interval(k, l)[1] for k, l in pairs)
    weight = 1.0 - abs(z) ** 2

    def trial(t):
        window = sample_window(params, lo, hi + 1, base.child(t))
        U, V = boundary_pair(params.L, boundary, base.child(t))
        row = []
        for k, l in pairs:
            a, b = policy.interval(k, l)
            G = green_direct(build_finite_zipper(window, a, b, U, V), z, k, l).block
            row.append(abs(G[p, q]) ** 2)
        return row

    values, failed = _run_trials(trial, n_samples, workers, len(pairs))
    out = []
    for j, (k, l) in enumerate(pairs):
        mean, err, n_ok = _summarize(abs(weight) * values[:, j])
        extra = {"signed_mean": float(np.sign(weight) * mean), "k": k, "l": l, "p": p, "q": q}
        out.append(
            MomentEstimate("second_order", complex(z), abs(l - k), mean, err, n_ok, None, failed, policy.describe(), "entry", extra)
        )
    return out


def dynamical_localization_probe(
    params: ZipperParams,
    source: tuple[int, int],
    targets: Sequence[tuple[int, int]],
    n_max: int,
    policy: WindowPolicy | str = "fixed_margin:0",
    n_samples: int = 100,
    stream: Optional[Stream] = None,
    workers: int = 1,
    trace: Optional[list] = None,
    boundary: str = "identity",
) -> list[MomentEstimate]:
    """E sup_{0 <= n <= n_max} |<e_{k,p}, U^n e_{l,q}>| for each target (k, p).

    The window is centred on the source block with room for ballistic spread
    of 2 blocks per step plus the evolve margin, plus ``policy.margin``.
    ``extra['half_horizon_mean']`` holds the same estimate with n_max/2, as
    a convergence diagnostic.
    """
    policy = WindowPolicy.parse(policy)
    l, q = source
    reach = 2 * n_max + EVOLVE_MARGIN + 1 + policy.margin
    a = min([l] + [k for k, _ in targets]) - reach
    b = max([l] + [k for k, _ in targets]) + reach
    base = stream if stream is not None else Stream(params.master_seed, "dynloc")
    half = n_max // 2

    def trial(t):
        window = sample_window(params, a, b + 1, base.child(t))
        op = build_finite_zipper(window, a, b, *boundary_pair(params.L, boundary, base.child(t)))
        psi0 = StateVector.basis(a, b, params.L, l, q)
        rec = evolve(op, psi0, n_max)
        if abs(rec.norms[-1] - 1.0) > 1e-9:
            raise WindowTooSmall("norm drift during evolution")
        amps = np.array([rec.amplitude(k, p) for k, p in targets])
        if trace is not None and t == 0:
            trace.append(rec)
        return np.concatenate([amps.max(axis=1), amps[:, : half + 1].max(axis=1)])

    values, failed = _run_trials(trial, n_samples, workers, 2 * len(targets))
    out = []
    for j, (k, p) in enumerate(targets):
        mean, err, n_ok = _summarize(values[:, j])
        mean_half, err_half, _ = _summarize(values[:, len(targets) + j])
        extra = {"k": k, "p": p, "l": l, "q": q, "half_horizon_mean": mean_half, "half_horizon_stderr": err_half}
        out.append(MomentEstimate("dynloc_sup", 1.0 + 0j, abs(k - l), mean, err, n_ok, None, failed, f"[{a},{b}]", "entry", extra))
    return out


def aliasing_bound(r: float, n: int, n_theta: int) -> float:
    """Trapezoid error bound 2 r^{N - |n|} / (1 - r^N) for the Poisson-kernel integrand."""
    return 2.0 * r ** (n_theta - abs(n)) / (1.0 - r**n_theta)


def default_n_theta(r: float, n: int, tol: float = 1e-12) -> int:
    N = max(8 * (abs(n) + 1), 16)
    while aliasing_bound(r, n, N) > tol:
        N *= 2
    return N


def spectral_power_quadrature(
    op: BlockBandedUnitary | np.ndarray,
    n: int,
    r: float,
    n_theta: Optional[int] = None,
    kp: tuple[int, int] = (0, 0),
    lq: tuple[int, int] = (0, 0),
    tol: float = 1e-8,
) -> complex:
    """Trapezoid rule for (1-r^2)/2pi times the contour integral of R(w) R(w)^* e^{i n theta}, w = r e^{i theta}.

    The exact value of the integral is r^{|n|} <e_{k,p}, U^n e_{l,q}>.
    ``op`` may be a zipper or a plain unitary matrix (then indices are flat).
    """
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie in (0, 1)")
    if n_theta is None:
        n_theta = default_n_theta(r, n)
    if n_theta < 8 * (abs(n) + 1):
        raise QuadratureUnderResolved(f"n_theta = {n_theta} < 8 (|n| + 1)")
    bound = aliasing_bound(r, n, n_theta)
    if bound > tol:
        raise QuadratureUnderResolved(f"aliasing bound {bound:.3e} exceeds {tol:.1e}; increase n_theta")
    if isinstance(op, BlockBandedUnitary):
        M = op.dense()
        i, j = op.flat_index(*kp), op.flat_index(*lq)
    else:
        M = np.asarray(op, dtype=complex)
        i, j = kp[0], lq[0]
    dim = M.shape[0]
    e = np.zeros(dim, dtype=complex)
    e[j] = 1.0
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    total = 0.0 + 0.0j
    eye = np.eye(dim)
    for th in theta:
        w = r * np.exp(1j * th)
        lu = scipy.linalg.lu_factor(M - w * eye, check_finite=False)
        y = scipy.linalg.lu_solve(lu, e, trans=2, check_finite=False)
        x = scipy.linalg.lu_solve(lu, y, check_finite=False)
        total += x[i] * np.exp(1j * n * th)
    return complex((1.0 - r * r) * total / n_theta)


def inverse_phase_moment(
    params: ZipperParams,
    z: complex,
    s: float,
    n_samples: int = 1000,
    stream: Optional[Stream] = None,
    workers: int = 1,
) -> MomentEstimate:
    """E ||(alpha + z V alpha U)^{-1}||^s over the phases of one site."""
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    alpha = params.alpha
    base = stream if stream is not None else Stream(params.master_seed, "inverse_phase")

    def trial(t):
        ph = phase_pair(sample_site_disorder(params, 0, base.child(t)))
        M = alpha + z * ph.V_phase @ alpha @ ph.U_phase
        smin = np.linalg.svd(M, compute_uv=False)[-1]
        if smin == 0.0:
            raise SingularSample("singular sample")
        return [matrix_norm(np.linalg.inv(M), params.norm_kind) ** s]

    values, failed = _run_trials(trial, n_samples, workers, 1)
    mean, err, n_ok = _summarize(values[:, 0])
    extra = {}
    if params.L == 1:
        extra["quadrature"] = inverse_phase_quadrature(abs(alpha[0, 0]), z, s)
    return MomentEstimate("inverse_phase", complex(z), 0, mean, err, n_ok, s, failed, "site", params.norm_kind, extra)


def inverse_phase_quadrature(r: float, z: complex, s: float) -> float:
    """r^{-s} (1/2pi) * integral over phi of |1 + z e^{i phi}|^{-s}."""
    f = lambda phi: abs(1.0 + z * np.exp(1j * phi)) ** (-s)  # noqa: E731
    val, _ = scipy.integrate.quad(f, 0.0, 2.0 * np.pi, limit=200, epsabs=1e-13, epsrel=1e-12)
    return r ** (-s) * val / (2.0 * np.pi)


def inverse_product_estimates(
    z: complex,
    params: ZipperParams,
    s: float,
    distances: Sequence[int],
    n_trials: int,
    stream: Optional[Stream] = None,
    workers: int = 1,
    mode: str = "inverse",
) -> list[MomentEstimate]:
    samples = inverse_product_decay_probe(z, params, s, distances, n_trials, stream, workers, mode)
    out = []
    for d in distances:
        mean, err = ordered_mean_and_stderr(samples[d])
        out.append(MomentEstimate("inverse_product", complex(z), int(d), mean, err, n_trials, s, 0, "cocycle", "vector"))
    return out
