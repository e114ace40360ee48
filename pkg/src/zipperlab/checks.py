"""Desk-scale invariant suite run by ``zipperlab verify``.

Each group returns a list of :class:`CheckResult`; a check passes when its
measured value does not exceed the tolerance.  All randomness comes from
keyed streams, so the report is identical for any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disorder import ZipperParams, phase_pair, sample_haar_unitary, sample_site_disorder, sample_window, scattering_block
from .green import green_direct, green_matrix, green_via_transfer, recurrence_residual, schur_analysis
from .moments import fractional_moment_scan, spectral_power_quadrature
from .rng import Stream, complex_normals
from .transfer import lorentz_form, lyapunov_spectrum, phi_map, transfer_matrix, window_transfer_product
from .zipper import build_finite_zipper, direct_sum_dense, split_with_defect


@dataclass(frozen=True)
class CheckResult:
    group: str
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


def _random_params(stream: Stream, L: int, r: float) -> ZipperParams:
    seed = int(stream.uniforms(0, 1, 4)[0, 0] * 2**31)
    return ZipperParams.scaled_random(L, r, master_seed=seed)


def structure_checks(seed: int, n_instances: int = 100) -> list[CheckResult]:
    errs = {"S_unitary": 0.0, "phi_lorentz": 0.0, "rewiring": 0.0, "inverse_relation": 0.0, "zipper_unitary": 0.0}
    Lf_cache = {}
    for i in range(n_instances):
        st = Stream(seed, "verify_structure", i)
        L = 1 + i % 3
        r = 0.1 * (1 + i % 9)
        params = _random_params(st.with_purpose("verify_alpha"), L, r)
        Lf = Lf_cache.setdefault(L, lorentz_form(L))
        site = sample_site_disorder(params, 0, st)
        S = scattering_block(params.alpha, phase_pair(site), 0).matrix
        errs["S_unitary"] = max(errs["S_unitary"], float(np.linalg.norm(S.conj().T @ S - np.eye(2 * L))))
        ph = phi_map(S)
        errs["phi_lorentz"] = max(errs["phi_lorentz"], float(np.linalg.norm(ph.conj().T @ Lf @ ph - Lf)))
        xy = complex_normals(st.with_purpose("verify_vectors").uniforms(0, 1, 4 * L)[0])
        x, y = xy[:L], xy[L:]
        pq = S @ xy
        lhs = ph @ np.concatenate([x, pq[:L]])
        rhs = np.concatenate([pq[L:], y])
        errs["rewiring"] = max(errs["rewiring"], float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
        z = (0.9 + 0.2 * ((i * 7) % 11) / 10) * np.exp(1j * 0.37 * i)
        window = sample_window(params, -1, 12, st)
        T = transfer_matrix(z, window.site(2), window.site(1), params.alpha).matrix
        Tb = transfer_matrix(1 / np.conj(z), window.site(2), window.site(1), params.alpha).matrix
        inv_err = np.linalg.norm(np.linalg.inv(T) - Lf @ Tb.conj().T @ Lf) / np.linalg.norm(np.linalg.inv(T))
        errs["inverse_relation"] = max(errs["inverse_relation"], float(inv_err))
        a = i % 2
        b = a + 5 + (i // 2) % 2
        D = build_finite_zipper(window, a, b).dense()
        errs["zipper_unitary"] = max(errs["zipper_unitary"], float(np.linalg.norm(D.conj().T @ D - np.eye(D.shape[0]))))
    return [CheckResult("structure", k, v, 1e-10) for k, v in errs.items()]


def green_checks(seed: int, n_instances: int = 40) -> list[CheckResult]:
    worst = 0.0
    for i in range(n_instances):
        st = Stream(seed, "verify_green", i)
        L = 1 + i % 2
        params = ZipperParams.scaled_identity(L, 0.3)
        parity = "even" if i % 2 == 0 else "odd"
        n, m = 0, 3 + i % 6
        a, b = (0 if parity == "even" else 1), 2 * m + 1
        z = (0.9, 0.95, 1.05, 1.1)[i % 4] * np.exp(0.5j * i)
        window = sample_window(params, -1, b + 2, st)
        U = sample_haar_unitary(L, st.with_purpose("boundary_U"))
        V = sample_haar_unitary(L, st.with_purpose("boundary_V"))
        G = green_via_transfer(window, z, n, m, U, V, parity).block
        Gd = green_direct(build_finite_zipper(window, a, b, U, V), z, a, b).block
        worst = max(worst, float(np.linalg.norm(G - Gd) / np.linalg.norm(Gd)))
    return [CheckResult("green", "formula_vs_direct", worst, 1e-8)]


def recurrence_checks(seed: int, n_instances: int = 12) -> list[CheckResult]:
    worst = 0.0
    for i in range(n_instances):
        st = Stream(seed, "verify_recurrence", i)
        params = ZipperParams.scaled_identity(1 + i % 2, 0.4)
        a = i % 2
        b = a + 11 + (i // 2) % 2
        window = sample_window(params, a, b + 1, st)
        op = build_finite_zipper(window, a, b)
        z = (0.9 if i % 3 else 1.1) * np.exp(0.3j * i)
        G = green_matrix(op, z)
        for k in (a + 2, a + 3):
            for side in ("row", "column"):
                if side == "row":
                    res = recurrence_residual(op, z, k, b - 1, side, G)
                else:
                    res = recurrence_residual(op, z, b - 1, k, side, G)
                worst = max(worst, *res)
    return [CheckResult("recurrence", "max_relative_residual", worst, 1e-8)]


def defect_checks(seed: int, n_instances: int = 10) -> list[CheckResult]:
    worst, blocks = 0.0, 0
    for i in range(n_instances):
        st = Stream(seed, "verify_defect", i)
        params = ZipperParams.scaled_random(1 + i % 3, 0.5, master_seed=seed + i)
        a, b = i % 2, 10 + i % 2
        window = sample_window(params, a, b + 1, st)
        op = build_finite_zipper(window, a, b)
        for split in (4, 5):
            left, right, gam = split_with_defect(op, split)
            err = np.linalg.norm(op.dense() - direct_sum_dense(left, right) - gam.dense(a, b))
            worst = max(worst, float(err))
            blocks = max(blocks, len(gam.blocks))
    return [CheckResult("defect", "decomposition", worst, 1e-10), CheckResult("defect", "max_blocks", blocks, 8)]


def schur_checks(seed: int, n_instances: int = 10) -> list[CheckResult]:
    cong, violations = 0.0, 0
    for i in range(n_instances):
        st = Stream(seed, "verify_schur", i)
        params = ZipperParams.scaled_identity(1 + i % 2, 0.1)
        m = 3 + i % 8
        window = sample_window(params, -1, 2 * m + 3, st)
        z = 1.05 * np.exp(0.7j * i)
        Ub = sample_haar_unitary(params.L, st.with_purpose("boundary_U"))
        Vb = sample_haar_unitary(params.L, st.with_purpose("boundary_V"))
        bundle = schur_analysis(window_transfer_product(z, window, 0, m, Ub, "even"), Vb)
        cong = max(cong, bundle.congruence_error)
        violations += 0 if bundle.lower_bound_holds else 1
    return [CheckResult("schur", "congruence", cong, 1e-9), CheckResult("schur", "lower_bound_violations", violations, 0)]


def lyapunov_checks(seed: int, workers: int = 1) -> list[CheckResult]:
    params = ZipperParams.scaled_identity(2, 0.3, master_seed=seed)
    spectrum = lyapunov_spectrum(np.exp(0.4j), params, 500, 8, Stream(seed, "verify_lyapunov"), workers)
    g, e = spectrum.gammas, spectrum.stderrs
    sym = max(abs(g[k] + g[3 - k]) / (3 * (e[k] + e[3 - k])) for k in range(2))
    order = 0.0 if (g[0] > g[1] > 0) else 1.0
    return [CheckResult("lyapunov", "antisymmetry_over_3sigma", float(sym), 1.0), CheckResult("lyapunov", "positivity", order, 0.0)]


def resolvent_bound_checks(seed: int, workers: int = 1) -> list[CheckResult]:
    params = ZipperParams.scaled_identity(1, 0.3, master_seed=seed)
    est = fractional_moment_scan(
        params, [2.0, 2.0j], 0.2, [4, 7], "reduced", 50, Stream(seed, "verify_fractional"), workers, keep_samples=True
    )
    worst = max(float(np.max(e.extra["samples"])) for e in est)
    return [CheckResult("moments", "max_sample_at_abs_z_2", worst, 1.0)]


def spectral_checks(seed: int) -> list[CheckResult]:
    scalar = abs(spectral_power_quadrature(np.array([[1.0]]), 3, 0.9) - 0.729)
    params = ZipperParams.scaled_identity(1, 0.3)
    op = build_finite_zipper(sample_window(params, 0, 6, Stream(seed, "verify_spectral")), 0, 5)
    D = np.linalg.matrix_power(op.dense(), 2)
    exact = D[op.flat_index(1, 0), op.flat_index(2, 0)]
    errs = [abs(spectral_power_quadrature(op, 2, r, None, (1, 0), (2, 0)) - exact) for r in (0.9, 0.95, 0.99)]
    monotone = 0.0 if errs[0] > errs[1] > errs[2] else 1.0
    return [CheckResult("spectral", "scalar_case", float(scalar), 1e-10), CheckResult("spectral", "monotone_error", monotone, 0.0)]


def determinism_checks(seed: int) -> list[CheckResult]:
    params = ZipperParams.scaled_random(2, 0.4, master_seed=seed)
    w1 = sample_window(params, -3, 5, Stream(seed, "verify_determinism"))
    w2 = sample_window(params, 2, 9, Stream(seed, "verify_determinism"))
    diff = 0.0 if all(w1.site(k).same_as(w2.site(k)) for k in range(2, 5)) else 1.0
    return [CheckResult("determinism", "site_disorder_window_independent", diff, 0.0)]


def run_suite(seed: int, workers: int = 1) -> list[CheckResult]:
    out: list[CheckResult] = []
    out += structure_checks(seed)
    out += green_checks(seed)
    out += recurrence_checks(seed)
    out += defect_checks(seed)
    out += schur_checks(seed)
    out += lyapunov_checks(seed, workers)
    out += resolvent_bound_checks(seed, workers)
    out += spectral_checks(seed)
    out += determinism_checks(seed)
    return out
