"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` (the lines are printed even
without ``-s``).
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from conftest import random_density, random_pure
from dfe.channels import (
    ChannelModel,
    CliffordCircuit,
    avg_fidelity_from_entanglement,
    channel_char_table,
    clifford_propagate,
    eigenbasis_product_state,
    entanglement_fidelity_exact,
    estimate_entanglement_fidelity,
    sample_channel_pair,
)
from dfe.engine import DfeConfig, estimate_fidelity, estimator_moments, truncated_copy_cap
from dfe.harness import ExperimentSpec, run
from dfe.pauli import char_fn_full, pauli_from_index
from dfe.sampling import sample_stabilizer, sample_w_state_batch, truncate, w_state_prob
from dfe.states import DensityMatrix, NoiseModel, PureState, depolarize, make_ghz, make_w

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_haar_residuals(report):
    start = time.perf_counter()
    s = run(ExperimentSpec("fig1", n=8, trials=200, seed=2024, noise="depolarize_local:0.1",
                           epsilon=0.05, delta=0.05))
    elapsed = time.perf_counter() - start
    std = s["residual_std"]
    ok = 0.013 <= std <= 0.023 and s["config"]["ell"] == 8000 and elapsed <= 1800
    report(1, ok, f"residual std {std:.4f} in [0.013, 0.023] over {s['trials']} trials, {elapsed:.0f}s")


def test_criterion_2_calibration(report):
    start = time.perf_counter()
    r = run(ExperimentSpec("calibration", n=3, trials=1200, seed=7, noise="dephase:0.2",
                           epsilon=0.1, delta=0.1))
    elapsed = time.perf_counter() - start
    ok = r["stage1_ok"] and r["stage2_ok"] and elapsed <= 300 and set(r["per_target"]) == {"ghz", "w", "haar"}
    report(
        2, ok,
        f"stage1 {r['stage1_rate']:.4f}, stage2 {r['stage2_rate']:.4f} vs threshold {r['threshold']:.4f}, "
        f"{r['trials']} trials, {elapsed:.1f}s",
    )


def test_criterion_3_exact_identities(report):
    rng = np.random.default_rng(3)
    worst = {"overlap": 0.0, "variance": 0.0, "channel_mean": 0.0, "reconstruction": 0.0}
    for n in (1, 2, 3, 4):
        for _ in range(5):
            rho = PureState(n, random_pure(n, rng))
            sig_m = random_density(n, rng)
            sigma = DensityMatrix(n, sig_m)
            psi = rho.statevector()
            fid = float(np.vdot(psi, sig_m @ psi).real)
            overlap = float(np.dot(char_fn_full(rho), char_fn_full(sigma)))
            worst["overlap"] = max(worst["overlap"], abs(overlap - fid))
            mean, var = estimator_moments(rho, sigma)
            purity = float(np.trace(sig_m @ sig_m).real)
            worst["variance"] = max(worst["variance"], abs(var - (purity - fid**2)))
    # channel: exhaustive mean over the pair distribution at n = 2
    d = 4
    for seed in range(5):
        u = stats.unitary_group.rvs(d, random_state=seed)
        v = stats.unitary_group.rvs(2 * d, random_state=100 + seed)[:, :d]
        kraus = [v[:d], v[d:]]
        tu = channel_char_table(ChannelModel.from_unitary(u))
        te = channel_char_table(ChannelModel.from_kraus(kraus))
        supp = np.abs(tu) > 1e-12
        mean = float(np.sum(tu[supp] ** 2 / d**2 * te[supp] / tu[supp]))
        truth = sum(abs(np.trace(u.conj().T @ k)) ** 2 for k in kraus) / d**2
        worst["channel_mean"] = max(worst["channel_mean"], abs(mean - truth))
    for n in (1, 2, 3, 4):
        dn = 1 << n
        for k in range(4**n):
            p = pauli_from_index(n, k)
            acc = np.zeros((dn, dn), dtype=complex)
            for a in range(dn):
                s = eigenbasis_product_state(p, a)
                vec = s.statevector()
                acc += s.lam * np.outer(vec, vec.conj())
            worst["reconstruction"] = max(worst["reconstruction"], float(np.abs(acc / dn - p.matrix() / dn).max()))
    ok = (
        worst["overlap"] <= 1e-9
        and worst["variance"] <= 1e-9
        and worst["channel_mean"] <= 1e-9
        and worst["reconstruction"] <= 1e-10
    )
    report(3, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_4_w_sampler(report):
    draws = 1_000_000
    pvals = {}
    for n in (2, 3, 4):
        j, k = sample_w_state_batch(n, draws, np.random.default_rng(40 + n))
        d = 1 << n
        support = [(a, b) for a in range(d) for b in range(d) if w_state_prob(n, a, b) > 0]
        expected = np.array([float(w_state_prob(n, a, b)) for a, b in support]) * draws
        keys = j * d + k
        counts = np.bincount(keys, minlength=d * d)
        observed = np.array([counts[a * d + b] for a, b in support])
        outside = int(counts.sum() - observed.sum())
        pvals[n] = stats.chisquare(observed, expected).pvalue if outside == 0 else 0.0
    dense_err = 0.0
    for n in (2, 3, 4):
        chi = char_fn_full(make_w(n))
        for idx in range(4**n):
            p = pauli_from_index(n, idx)
            dense_err = max(dense_err, abs(float(w_state_prob(n, p.x, p.z)) - chi[idx] ** 2))
    sums_exact = all(
        sum((w_state_prob(n, a, b) for a in range(1 << n) for b in range(1 << n)), Fraction(0)) == 1
        for n in range(2, 9)
    )
    ok = min(pvals.values()) > 0.001 and dense_err <= 1e-10 and sums_exact
    report(
        4, ok,
        "chi-square p " + ", ".join(f"n={n}: {p:.3f}" for n, p in pvals.items())
        + f"; dense error {dense_err:.1e}; exact sums {'ok' if sums_exact else 'wrong'}",
    )


def _per_draw_ms(fn, reps=2000):
    fn()
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps * 1e3


def test_criterion_5_scale_independence(report):
    eps, delta = 0.05, 0.05
    worst = []
    for n in (4, 8, 12):
        g = make_ghz(n)
        res = estimate_fidelity(g, g, DfeConfig.from_regime(eps, delta, "well_conditioned:1", seed=n))
        cap = 1 + 2 * math.log(2 / delta) / (res.ell * eps**2)
        worst.append(("ghz", n, int(res.m.max()), cap, res.m_total <= res.ell * cap and bool(np.all(res.m <= cap))))
        c = ChannelModel.from_circuit(CliffordCircuit.random(n, 50, np.random.default_rng(n)))
        ch = estimate_entanglement_fidelity(c, c, DfeConfig(eps, delta, seed=n))
        cap = 1 + 2 * math.log(2 / delta) / (ch.ell * eps**2)
        worst.append(("clifford", n, int(ch.m.max()), cap, ch.m_total <= ch.ell * cap and bool(np.all(ch.m <= cap))))

    rng = np.random.default_rng(0)
    g50 = make_ghz(50)
    c50 = ChannelModel.from_circuit(CliffordCircuit.random(50, 50, np.random.default_rng(50)))
    stab_ms = _per_draw_ms(lambda: sample_stabilizer(g50, rng))
    pair_ms = _per_draw_ms(lambda: sample_channel_pair(c50, rng))
    ok = all(w[-1] for w in worst) and stab_ms < 1 and pair_ms < 1
    detail = "; ".join(f"{kind} n={n} max m_i {m} <= {cap:.3f}" for kind, n, m, cap, _ in worst)
    report(5, ok, f"{detail}; draw at n=50: stabilizer {stab_ms:.3f} ms, clifford pair {pair_ms:.3f} ms")


def test_criterion_6_clifford_oracle(report):
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(100):
        c = CliffordCircuit.random(3, 30, rng)
        u = c.unitary()
        for k in range(64):
            p = pauli_from_index(3, k)
            q = clifford_propagate(c, p)
            dense = u @ p.matrix() @ u.conj().T
            mismatches += not np.allclose(dense, q.sign * q.unsigned().matrix(), atol=1e-12)
    report(6, mismatches == 0, f"{mismatches} mismatches over 100 circuits x 64 Paulis")


def test_criterion_7_truncation(report):
    rng = np.random.default_rng(7)
    eps, delta, d = 0.1, 0.1, 8
    worst_ratio, min_kept, cap_ok = 0.0, np.inf, True
    for i in range(50):
        psi = PureState(3, random_pure(3, rng))
        sigma = depolarize(psi, 0.1)
        for beta in (0.1, 0.3, 0.5):
            t = truncate(psi, beta)
            chi2 = np.asarray(t.chi)
            rho2 = sum(c * pauli_from_index(3, k).matrix() for k, c in enumerate(chi2) if c != 0) / math.sqrt(d)
            dist = float(np.linalg.norm(rho2 - psi.density()))
            worst_ratio = max(worst_ratio, dist / (2 * beta))
            kept = np.abs(chi2[chi2 != 0])
            min_kept = min(min_kept, float(kept.min() / (beta / d)))
            res = estimate_fidelity(psi, sigma, DfeConfig.from_regime(eps, delta, f"truncated:{beta}", seed=i))
            cap_ok &= bool(np.all(res.m <= truncated_copy_cap(beta, d, res.ell, eps, delta)))
    ok = worst_ratio <= 1 and min_kept >= 1 and cap_ok
    report(
        7, ok,
        f"max distance/(2 beta) {worst_ratio:.3f}, min kept |chi|/(beta/d) {min_kept:.3f}, "
        f"copy cap {'held' if cap_ok else 'violated'}",
    )


def test_criterion_8_channel_end_to_end(report):
    n, p, eps, delta = 10, 0.1, 0.05, 0.05
    d = 1 << n
    truth = (1 - p) + p / d**2
    circuit = CliffordCircuit.random(n, 50, np.random.default_rng(8))
    target = ChannelModel.from_circuit(circuit)
    actual = target.with_noise(NoiseModel("depolarize", p))
    hits, rel_err = 0, 0.0
    for seed in range(100):
        r = estimate_entanglement_fidelity(target, actual, DfeConfig(eps, delta, seed=seed))
        hits += abs(r.f_e - truth) <= 2 * eps
        rel_err = max(rel_err, abs(r.f_avg - avg_fidelity_from_entanglement(r.f_e, d, strict=False)))
        rel_err = max(rel_err, abs(r.f_avg - (d * r.f_e + 1) / (d + 1)))
    ok = hits >= 100 * (1 - 2 * delta) and rel_err <= 1e-12 and abs(truth - 0.9000000953674316) < 1e-15
    report(8, ok, f"{hits}/100 runs within 2 eps of {truth:.10f}; F_avg relation error {rel_err:.1e}")


def test_criterion_8_truth_matches_dense():
    # the closed form agrees with the Kraus computation on a small instance
    c = CliffordCircuit.random(2, 20, np.random.default_rng(9))
    target = ChannelModel.from_unitary(c.unitary())
    exact = entanglement_fidelity_exact(target, target.with_noise(NoiseModel("depolarize", 0.1)))
    assert abs(exact - (0.9 + 0.1 / 16)) < 1e-12
