"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
repeated in the terminal summary.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from piezoflow import fields as F
from piezoflow.analysis import EnsembleSpec, exponents, interpolation_check, korn_embedding_report, exponent_A, exponent_B, \
    refinement_drift
from piezoflow.constitutive import (ModelSpec, NotCertifiable, SampleSpec, _certify_cached, certify_assumptions,
                                    power_law_for_gamma0)
from piezoflow.pressure import PressureProblem, solve_pressure
from piezoflow.timestepper import InitialData, SimConfig, delta_sweep, energy_audit, manufactured_forcing, run, \
    taylor_green

RESULTS = []


def report(number, passed, detail, elapsed):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail} ({elapsed:.1f} s)"
    RESULTS.append(line)
    print("\n" + line)
    return passed


@pytest.fixture(scope="module")
def model02():
    """Power law at r = 1.9 whose certified gamma0 is 0.2."""
    return power_law_for_gamma0(0.2, 1.9)


def relerr(a, b):
    return abs(a - b) / abs(b)


# ---------------------------------------------------------------- 1


def test_criterion_01_exponent_identities():
    t0 = time.perf_counter()
    rs = np.linspace(9 / 5, 2.0, 1002)[1:-1]
    worst = 0.0
    for r in rs:
        ex = exponents(r, check=False)
        worst = max(worst, relerr(exponent_A(ex.mu, r), r), relerr(exponent_B(ex.mu, r), 2 * ex.lam))
    ex = exponents(1.9)
    elapsed = time.perf_counter() - t0
    ok = (worst <= 1e-12 and relerr(ex.lam, 3.142857142857143) < 1e-12
          and relerr(ex.mu, 0.7537037037037037) < 1e-12 and elapsed < 1.0)
    report(1, ok, f"{rs.size} r values, worst rel err {worst:.1e}; lambda(1.9) = {ex.lam:.7f}, "
                  f"mu(1.9) = {ex.mu:.7f}", elapsed)
    assert worst <= 1e-12
    assert ex.lam == pytest.approx(22 / 7, rel=1e-12)
    assert ex.mu == pytest.approx(0.753703703703704, rel=1e-12)
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2


def test_criterion_02_certification():
    t0 = time.perf_counter()
    _certify_cached.cache_clear()  # time the sampling, not the cache
    newt = certify_assumptions(ModelSpec.newtonian(0.5))
    power = certify_assumptions(ModelSpec.power_law(1.9, 0.0))
    try:
        certify_assumptions(ModelSpec.schaeffer(), SampleSpec(p_min=0.0, p_max=1e6))
        schaeffer_failed, nviol = False, 0
    except NotCertifiable as exc:
        schaeffer_failed, nviol = True, len(exc.certificate.violations)
    elapsed = time.perf_counter() - t0
    ok = (newt.C1_est == 1.0 and newt.C2_est == 1.0 and newt.gamma0_est == 0.0 and newt.admissible
          and power.gamma0_est == 0.0 and schaeffer_failed and elapsed < 30)
    report(2, ok, f"Newtonian C1 = {newt.C1_est}, C2 = {newt.C2_est}, gamma0 = {newt.gamma0_est}; "
                  f"power law gamma0 = {power.gamma0_est}; Schaeffer rejected with {nviol} violations", elapsed)
    assert newt.C1_est == newt.C2_est == 1.0 and newt.gamma0_est == 0.0 and newt.admissible
    assert power.gamma0_est == 0.0
    assert schaeffer_failed
    assert elapsed < 30


# ---------------------------------------------------------------- 3


def test_criterion_03_pressure_fixed_point(model02):
    t0 = time.perf_counter()
    g = F.Grid(32, d=3)
    v = F.random_solenoidal(g, np.random.default_rng(3), kmax=6, amplitude=1.5)
    tol = 1e-10
    _, rep0 = solve_pressure(v, ModelSpec.power_law(1.9, 0.0), tol=tol)
    bound0 = tol * (1 + F.l2_norm(v) ** 2)
    pa, rep = solve_pressure(v, model02, tol=tol)
    start = F.random_band_limited(g, np.random.default_rng(4), kmax=8, amplitude=5.0)
    pb, _ = solve_pressure(v, model02, tol=tol, p0=start)
    agree = F.l2_norm(pa - pb)
    agree_bound = 10 * tol * max(1.0, F.l2_norm(pa))
    resid = PressureProblem(v, model02).residual(pa.values)
    elapsed = time.perf_counter() - t0
    ratios = rep.contraction_ratios[1:]
    ok = (rep0.iterations == 2 and rep0.fixed_point_residual <= bound0 and all(q <= 0.25 for q in ratios)
          and agree <= agree_bound and rep.converged and elapsed < 60)
    report(3, ok, f"gamma0 = 0: {rep0.iterations} sweeps, residual {rep0.fixed_point_residual:.1e}; "
                  f"gamma0 = {rep.gamma0_bound:.3f}: max ratio {max(ratios, default=0):.3f}, residual {resid:.1e}, "
                  f"two starts differ by {agree:.1e}", elapsed)
    assert rep0.iterations == 2 and rep0.fixed_point_residual <= bound0
    assert rep.converged and all(q <= 0.25 for q in ratios)
    assert agree <= agree_bound
    assert elapsed < 60


# ---------------------------------------------------------------- 4


def test_criterion_04_operator_identities():
    t0 = time.perf_counter()
    g = F.Grid(16, d=3)
    rng = np.random.default_rng(44)
    worst = dict(idempotence=0.0, divergence=0.0, plancherel=0.0, round_trip=0.0)
    for _ in range(100):
        v = F.random_band_limited(g, rng, rank=1, kmax=7, amplitude=10 ** rng.uniform(-3, 3), zero_mean=False)
        vd, _ = F.helmholtz_project(v)
        vdd, _ = F.helmholtz_project(vd)
        worst["idempotence"] = max(worst["idempotence"], F.l2_norm(vdd - vd) / F.l2_norm(vd))
        worst["divergence"] = max(worst["divergence"], F.l2_norm(F.div(vd)) / F.l2_norm(F.grad_vector(vd)))
        worst["plancherel"] = max(worst["plancherel"], relerr(F.spectral_l2_norm(v), F.l2_norm(v)))
        back = g.ifft(g.fft(v.values))
        worst["round_trip"] = max(worst["round_trip"], np.linalg.norm(back - v.values) / np.linalg.norm(v.values))
    elapsed = time.perf_counter() - t0
    ok = all(x <= 1e-10 for x in worst.values()) and elapsed < 60
    report(4, ok, "100 fields, worst " + ", ".join(f"{k} {x:.1e}" for k, x in worst.items()), elapsed)
    assert all(x <= 1e-10 for x in worst.values()), worst
    assert elapsed < 60


# ---------------------------------------------------------------- 5


def test_criterion_05_unit_constant_bounds():
    t0 = time.perf_counter()
    g = F.Grid(16, d=3)
    rng = np.random.default_rng(55)
    worst_hess = worst_proj = 0.0
    for _ in range(100):
        f = F.random_band_limited(g, rng, kmax=7, amplitude=10 ** rng.uniform(-3, 3))
        u = F.inverse_laplacian(f)
        worst_hess = max(worst_hess, F.hessian_norm(u) / F.l2_norm(f))
        v = F.random_band_limited(g, rng, rank=1, kmax=7, zero_mean=False)
        worst_proj = max(worst_proj, F.l2_norm(F.helmholtz_project(v)[0]) / F.l2_norm(v))
    elapsed = time.perf_counter() - t0
    ok = worst_hess <= 1 + 1e-9 and worst_proj <= 1 + 1e-9 and elapsed < 60
    report(5, ok, f"max ||grad^2 u|| / ||f|| = {worst_hess:.12f}, max ||v_div|| / ||v|| = {worst_proj:.6f}",
           elapsed)
    assert worst_hess <= 1 + 1e-9 and worst_proj <= 1 + 1e-9
    assert elapsed < 60


# ---------------------------------------------------------------- 6 and 9 share the delta sweep

SWEEP_DELTAS = (1e-2, 1e-3, 1e-4)


@pytest.fixture(scope="module")
def sweep(model02):
    t0 = time.perf_counter()
    cfg = SimConfig(F.Grid(32, d=3), model02, 1e-3, 1e-3, 1.0, audit_every=10)
    rows, results = delta_sweep(cfg, InitialData("taylor_green"), SWEEP_DELTAS)
    return cfg, rows, results, time.perf_counter() - t0


def test_criterion_06_energy_audit(sweep):
    cfg, rows, results, sweep_time = sweep
    t0 = time.perf_counter()
    base = results[SWEEP_DELTAS.index(1e-3)]
    audit = energy_audit(base.ledger, cfg.dt)
    half = run(dataclasses.replace(cfg, dt=cfg.dt / 2, certificate=None), InitialData("taylor_green"))
    audit_half = energy_audit(half.ledger, cfg.dt / 2)
    drift = max(audit.c_est, audit_half.c_est) / min(audit.c_est, audit_half.c_est)
    sup = max(r.sup_bound_ratio for r in rows)
    elapsed = time.perf_counter() - t0 + sweep_time
    ok = (audit.non_increasing and audit_half.non_increasing and drift <= 2.0 and sup <= 1 + 1e-6
          and audit.max_step_defect <= audit.c_est * cfg.dt**2 * (1 + 1e-12) and elapsed < 600)
    report(6, ok, f"E non-increasing; c = {audit.c_est:.2f} at dt, {audit_half.c_est:.2f} at dt/2 "
                  f"(drift x{drift:.3f}); sup (E + C1 diss) / E(0) over sweep = {sup:.9f}", elapsed)
    assert audit.non_increasing and audit_half.non_increasing
    assert drift <= 2.0
    assert sup <= 1 + 1e-6
    assert elapsed < 600


# ---------------------------------------------------------------- 7


def test_criterion_07_newtonian_oracle():
    t0 = time.perf_counter()
    g = F.Grid(32, d=2)
    nu = 0.5
    errors = []
    for dt in (1e-3, 5e-4):
        cfg = SimConfig(g, ModelSpec.newtonian(nu), 0.0, dt, 1.0, theorem_mode=False)
        res = run(cfg, taylor_green(g))
        exact = taylor_green(g, t=1.0, nu_star=nu)
        errors.append(F.l2_norm(res.final.v - exact) / F.l2_norm(exact))
    elapsed = time.perf_counter() - t0
    ratio = errors[0] / errors[1]
    ok = errors[0] <= 1e-3 and ratio >= 2.0 and elapsed < 120
    report(7, ok, f"rel L2 error {errors[0]:.3e} at dt = 1e-3, {errors[1]:.3e} at 5e-4 (ratio {ratio:.4f})",
           elapsed)
    assert errors[0] <= 1e-3
    assert ratio >= 2.0
    assert elapsed < 120


# ---------------------------------------------------------------- 8

MMS_FREQ = (0.7, 1.3, 2.1, 2.9)


def mms_target(g):
    x, y, z = g.coords
    Z = np.zeros(g.shape)
    shapes = [np.stack([np.cos(y), Z, Z]), np.stack([Z, np.sin(2 * z), Z]), np.stack([Z, Z, np.cos(x + y)]),
              np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y), Z])]

    def target(t):
        return F.VectorField(g, sum((1 + 0.5 * math.sin(w * t)) * s for w, s in zip(MMS_FREQ, shapes)))

    def target_dt(t):
        return F.VectorField(g, sum(0.5 * w * math.cos(w * t) * s for w, s in zip(MMS_FREQ, shapes)))

    return target, target_dt


def mms_error(model, n, dt, T=0.2):
    g = F.Grid(n, d=3)
    cfg = SimConfig(g, model, 1e-3, dt, T, audit_every=0)
    target, target_dt = mms_target(g)
    forcing = manufactured_forcing(cfg, target, target_dt)
    res = run(dataclasses.replace(cfg, forcing=forcing), target(0.0))
    return F.l2_norm(res.final.v - target(T)) / F.l2_norm(target(T))


def test_criterion_08_manufactured_solution(model02):
    t0 = time.perf_counter()
    temporal = [mms_error(model02, 16, dt) for dt in (4e-3, 2e-3, 1e-3)]
    orders = [math.log2(a / b) for a, b in zip(temporal, temporal[1:])]
    spatial = [mms_error(model02, n, 1e-3) for n in (8, 16, 32)]
    floor_gap = abs(spatial[2] - spatial[1]) / spatial[2]
    elapsed = time.perf_counter() - t0
    ok = min(orders) >= 0.9 and floor_gap <= 1e-3 and elapsed < 600
    report(8, ok, f"temporal errors {', '.join(f'{e:.2e}' for e in temporal)}, orders "
                  f"{', '.join(f'{o:.3f}' for o in orders)}; errors at n = 8, 16, 32: "
                  f"{', '.join(f'{e:.6e}' for e in spatial)}", elapsed)
    assert min(orders) >= 0.9
    assert floor_gap <= 1e-3
    assert elapsed < 600


# ---------------------------------------------------------------- 9


def test_criterion_09_delta_cauchy(sweep):
    _, rows, _, sweep_time = sweep
    diffs = [r.cauchy_difference for r in rows if r.cauchy_difference is not None]
    decreasing = len(diffs) == 2 and all(b < a for a, b in zip(diffs, diffs[1:]))
    ok = decreasing and sweep_time < 600
    report(9, ok, "||v_d(T) - v_d'(T)||_2 = " + ", ".join(f"{d:.4e}" for d in diffs), sweep_time)
    assert decreasing
    assert sweep_time < 600


# ---------------------------------------------------------------- 10


def test_criterion_10_inequality_harness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    g = F.Grid(32, d=3)
    failures = 0
    for _ in range(1000):
        f = F.random_band_limited(g, rng, kmax=8, amplitude=10 ** rng.uniform(-2, 2))
        r = float(rng.uniform(9 / 5, 2.0))
        failures += sum(not rep.passed for rep in interpolation_check(f, r))
    ens = EnsembleSpec(size=200, n=32, kmax=4)
    coarse = korn_embedding_report(ens, 1.9).maxima()
    fine = korn_embedding_report(ens, 1.9, refine=2).maxima()
    drift = refinement_drift(coarse, fine)
    finite = all(math.isfinite(x) for x in list(coarse.values()) + list(fine.values()))
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and finite and max(drift.values()) <= 0.10 and elapsed < 900
    report(10, ok, f"1000 interpolation fields, {failures} failures; drift n = 32 -> 64: "
                   + ", ".join(f"{k} {v:.1e}" for k, v in drift.items()), elapsed)
    assert failures == 0
    assert finite
    assert max(drift.values()) <= 0.10, drift
    assert elapsed < 900
