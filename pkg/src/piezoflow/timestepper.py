"""Time integration of the delta-regularized momentum equation

    v_t + div(v (x) v) - div S(p, D(v)) + delta Laplace^2 v = -grad p,  div v = 0

on the 2/3-truncated Fourier basis.  One step is first-order IMEX: the
convective term (rotational form v x omega) and the extra stress are explicit,
the biharmonic term is implicit and diagonal, and the Leray projection
restores div v = 0.  The pressure inside S comes from a full Picard solve at
the current velocity, warm-started from the previous step.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fields as F
from .constitutive import AssumptionCertificate, ModelSpec, NotCertifiable, certify_assumptions
from .pressure import NoConvergence, NotCertified, PressureProblem, picard

log = logging.getLogger(__name__)

PressureDiverged = NoConvergence

THEOREM_R_RANGE = (9 / 5, 2.0)
DIV_TOLERANCE = 1e-10


class ConfigError(ValueError):
    pass


class CFLViolation(RuntimeError):
    pass


# ---------------------------------------------------------------- initial data


@dataclass(frozen=True)
class InitialData:
    """Named initial velocity: ``taylor_green``, ``random``, ``vortex_ring`` or ``zero``."""

    kind: str = "taylor_green"
    amplitude: float = 1.0
    seed: int = 0
    kmax: float = 4.0
    ring_radius: float = 0.25  # fraction of L
    core_width: float = 0.08  # fraction of L

    def raw(self, grid: F.Grid) -> F.VectorField:
        g = grid
        if self.kind == "zero":
            return F.VectorField.zeros(g)
        if self.kind == "taylor_green":
            return taylor_green(g, self.amplitude)
        if self.kind == "random":
            return F.random_solenoidal(g, np.random.default_rng(self.seed), self.kmax, self.amplitude)
        if self.kind == "vortex_ring":
            return _vortex_ring(g, self.amplitude, self.ring_radius * g.L, self.core_width * g.L)
        raise ConfigError(f"unknown initial data kind {self.kind!r}")


def taylor_green(grid: F.Grid, amplitude: float = 1.0, t: float = 0.0, nu_star: float = 0.0) -> F.VectorField:
    """Taylor-Green vortex; with ``nu_star`` > 0 the Newtonian decay factor at time t is applied."""
    kx = 2 * np.pi / grid.L
    x = [kx * c for c in grid.coords]
    if grid.d == 2:
        vals = [np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])]
        rate = 2 * kx**2
    else:
        vals = [np.sin(x[0]) * np.cos(x[1]) * np.cos(x[2]), -np.cos(x[0]) * np.sin(x[1]) * np.cos(x[2]),
                np.zeros(grid.shape)]
        rate = 3 * kx**2
    decay = math.exp(-nu_star * rate * t)
    return F.VectorField(grid, amplitude * decay * np.stack(vals))


def _vortex_ring(grid, amplitude, radius, width):
    """Velocity induced by a Gaussian-cored vortex ring (a Gaussian vortex in 2-D)."""
    c = grid.L / 2
    X = [x - c for x in grid.coords]
    if grid.d == 2:
        omega = np.exp(-(X[0] ** 2 + X[1] ** 2) / width**2)
        stream_hat = grid.inv_k2 * grid.fft(omega)
        vals = np.stack([grid.ifft(grid.ik[1] * stream_hat), -grid.ifft(grid.ik[0] * stream_hat)])
    else:
        rho = np.sqrt(X[0] ** 2 + X[1] ** 2)
        core = np.exp(-((rho - radius) ** 2 + X[2] ** 2) / width**2)
        safe = np.where(rho > 0, rho, 1.0)
        omega = np.stack([-X[1] / safe * core, X[0] / safe * core, np.zeros(grid.shape)])
        w_hat = grid.fft(omega)
        ik = grid.ik
        # velocity = curl of (-Laplace)^-1 omega
        a_hat = w_hat * grid.inv_k2
        vals = np.stack([
            grid.ifft(ik[1] * a_hat[2] - ik[2] * a_hat[1]),
            grid.ifft(ik[2] * a_hat[0] - ik[0] * a_hat[2]),
            grid.ifft(ik[0] * a_hat[1] - ik[1] * a_hat[0]),
        ])
    rms = np.sqrt(np.mean(np.sum(vals**2, axis=0)))
    return F.VectorField(grid, vals * (amplitude / rms))


def initial_data(spec: InitialData, grid: F.Grid, delta: float) -> F.VectorField:
    """Solenoidal projection, mollification by delta, then truncation to the resolved band."""
    v, _ = F.helmholtz_project(spec.raw(grid))
    v = F.mollify(v, delta)
    return F.VectorField.from_hat(grid, v.hat * grid.dealias_mask)


# ---------------------------------------------------------------- configuration


@dataclass
class SimConfig:
    grid: F.Grid
    model: ModelSpec
    delta: float = 0.0
    dt: float = 1e-3
    T: float = 1.0
    forcing: Callable[[float], F.VectorField] | None = None
    pressure_tol: float = 1e-10
    pressure_max_iter: int = 200
    snapshot_every: int = 0
    audit_every: int = 1
    cfl: float = 0.4
    theorem_mode: bool = True
    certificate: AssumptionCertificate | None = None

    @property
    def r(self) -> float:
        return self.model.r

    @property
    def mode_label(self) -> str:
        return "theorem" if self.theorem_mode else "exploratory"

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def validate(self) -> AssumptionCertificate:
        if self.dt <= 0 or self.T < 0:
            raise ConfigError("dt must be positive and T non-negative")
        if abs(self.steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ConfigError(f"T = {self.T} is not a whole number of steps of dt = {self.dt}")
        if self.delta < 0:
            raise ConfigError("delta must be non-negative")
        cert = self.certificate
        if cert is None:
            try:
                cert = certify_assumptions(self.model)
            except NotCertifiable as exc:
                raise NotCertified(str(exc)) from exc
        if self.theorem_mode:
            lo, hi = THEOREM_R_RANGE
            if not lo < self.r < hi:
                raise ConfigError(f"theorem mode requires r in (9/5, 2), got r = {self.r}")
            if not cert.admissible:
                raise NotCertified(
                    f"theorem mode requires gamma0 < C1/(C1+C2): "
                    f"gamma0 = {cert.gamma0_est:.4g}, bound = {cert.theorem_bound:.4g}"
                )
        self.certificate = cert
        return cert


@dataclass
class SimState:
    t: float
    v: F.VectorField
    p: F.ScalarField
    step_index: int = 0


# ---------------------------------------------------------------- ledger


@dataclass
class EnergyLedger:
    """Running energy bookkeeping; row k is the state after k steps."""

    C1: float
    t: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)  # int_0^t int phi(|D|)
    biharmonic: list = field(default_factory=list)  # delta int_0^t |grad^2 v|^2
    stress_work: list = field(default_factory=list)  # int_0^t int S:D
    forcing_work: list = field(default_factory=list)
    step_defect: list = field(default_factory=list)  # 0 for the initial row

    @property
    def energy_defect(self):
        E0 = self.kinetic[0]
        return [E + self.C1 * d + b - w - E0 for E, d, b, w in
                zip(self.kinetic, self.dissipation, self.biharmonic, self.forcing_work)]

    def bound_quantity(self):
        """E(t) + C1 * dissipation(t) + biharmonic(t), the left side of the energy inequality."""
        return [E + self.C1 * d + b for E, d, b in zip(self.kinetic, self.dissipation, self.biharmonic)]

    def write_csv(self, path):
        cols = ["t", "kinetic", "dissipation", "biharmonic", "stress_work", "forcing_work", "step_defect",
                "energy_defect"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in zip(self.t, self.kinetic, self.dissipation, self.biharmonic, self.stress_work,
                           self.forcing_work, self.step_defect, self.energy_defect):
                writer.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class EnergyAudit:
    non_increasing: bool
    max_increase: float
    c_est: float
    max_step_defect: float
    sup_bound_ratio: float
    passed: bool

    def as_dict(self):
        return dataclasses.asdict(self)


def energy_audit(ledger: EnergyLedger, dt: float, rel_tol: float = 1e-6) -> EnergyAudit:
    """Checks monotone energy and E + C1 * dissipation + biharmonic <= E(0) (1 + rel_tol)."""
    E = np.asarray(ledger.kinetic)
    E0 = E[0]
    inc = np.diff(E)
    max_inc = float(inc.max()) if inc.size else 0.0
    # increments below rounding of E are not growth
    non_inc = max_inc <= 1e-13 * max(E0, 1e-300)
    defects = np.asarray(ledger.step_defect[1:])
    max_def = float(defects.max()) if defects.size else 0.0
    c_est = max(max_def, 0.0) / dt**2
    bound = np.asarray(ledger.bound_quantity())
    ratio = float(bound.max() / E0) if E0 > 0 else 0.0
    passed = non_inc and (E0 == 0 or ratio <= 1.0 + rel_tol)
    return EnergyAudit(bool(non_inc), max_inc, c_est, max_def, ratio, bool(passed))


# ---------------------------------------------------------------- stepping


@dataclass
class StepInfo:
    pressure_iterations: int
    max_contraction: float
    stress_power: float
    phi_integral: float
    biharmonic_rate: float
    forcing_power: float
    increment: float
    div_ratio: float
    cfl_number: float


def _curl_cross(grid: F.Grid, v: F.VectorField, G=None):
    """Nodal values of v x curl(v), the rotational form of -(v . grad) v up to a gradient.

    ``G`` is the nodal velocity gradient, G[i, j] = d v_i / d x_j.
    """
    G = F.grad_vector(v).values if G is None else G
    vals = v.values
    if grid.d == 2:
        w = G[1, 0] - G[0, 1]
        return np.stack([vals[1] * w, -vals[0] * w])
    w = np.stack([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])
    return np.stack([
        vals[1] * w[2] - vals[2] * w[1],
        vals[2] * w[0] - vals[0] * w[2],
        vals[0] * w[1] - vals[1] * w[0],
    ])


def convective_hat(v: F.VectorField, G=None):
    """Dealiased coefficients of v x omega (before projection)."""
    g = v.grid
    return g.fft(_curl_cross(g, v, G)) * g.dealias_mask


class Integrator:
    """Advances :class:`SimState` objects for one fixed configuration."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.cert = cfg.validate()
        g = cfg.grid
        self.grid = g
        self.implicit = 1.0 / (1.0 + cfg.dt * cfg.delta * g.k2**2)

    def pressure(self, v: F.VectorField, p0: F.ScalarField | None = None, G=None):
        cfg = self.cfg
        problem = PressureProblem(v, cfg.model, G)
        p, report = picard(problem, self.cert, cfg.pressure_tol, cfg.pressure_max_iter, p0)
        return problem, p, report

    def tendency(self, v: F.VectorField, p0: F.ScalarField | None = None):
        """Projected explicit tendency v x omega + div S(p, D(v)) and its by-products."""
        g = self.grid
        G = F.grad_vector(v).values
        problem, p, report = self.pressure(v, p0, G)
        S, S_hat = problem.stress_hat(p.values)
        divS_hat = np.stack([sum(g.ik[j] * S_hat[i, j] for j in range(g.d)) for i in range(g.d)])
        N_hat = F.project_hat(g, convective_hat(v, G) + divS_hat)
        return N_hat, p, report, S, problem

    def step(self, state: SimState):
        cfg, g = self.cfg, self.grid
        v = state.v
        umax = float(v.magnitude().max())
        cfl_number = umax * cfg.dt * g.n / g.L
        if cfl_number > cfg.cfl:
            raise CFLViolation(f"CFL number {cfl_number:.3g} exceeds {cfg.cfl} at t = {state.t:.6g}")

        N_hat, p, report, S, problem = self.tendency(v, state.p)
        forcing_power = 0.0
        if cfg.forcing is not None:
            f = cfg.forcing(state.t)
            forcing_power = F.inner(v, f)
            N_hat = N_hat + F.project_hat(g, f.hat) * g.dealias_mask
        new_hat = (v.hat + cfg.dt * N_hat) * self.implicit * g.dealias_mask
        v_new = F.VectorField.from_hat(g, new_hat)

        dv = g.cell_volume
        stress_power = float(np.sum(S * problem.D)) * dv
        phi_integral = float(np.sum(F.phi(np.sqrt(problem.s2), cfg.r))) * dv
        bih_rate = cfg.delta * F.hessian_norm(v_new) ** 2
        grad_norm = np.sqrt(F._spectral_sum(g, g.k2 * np.sum(np.abs(new_hat) ** 2, axis=0)))
        div_hat = sum(ik * new_hat[i] for i, ik in enumerate(g.ik))
        div_norm = np.sqrt(F._spectral_sum(g, np.abs(div_hat) ** 2))
        div_ratio = float(div_norm / grad_norm) if grad_norm > 0 else 0.0
        info = StepInfo(
            pressure_iterations=report.iterations,
            max_contraction=max(report.contraction_ratios, default=0.0),
            stress_power=stress_power,
            phi_integral=phi_integral,
            biharmonic_rate=bih_rate,
            forcing_power=forcing_power,
            increment=F.l2_norm(v_new - v) / cfg.dt,
            div_ratio=div_ratio,
            cfl_number=cfl_number,
        )
        return SimState(state.t + cfg.dt, v_new, p, state.step_index + 1), info


def step(state: SimState, cfg: SimConfig) -> SimState:
    """Single step with a fresh :class:`Integrator` (use ``Integrator`` directly in loops)."""
    return Integrator(cfg).step(state)[0]


# ---------------------------------------------------------------- second-gradient audit


@dataclass(frozen=True)
class SecondGradientRecord:
    t: float
    i_r: float
    grad_sq: float
    lam: float
    weighted: float


def lambda_exponent(r: float) -> float:
    if r <= 5 / 3:
        raise ValueError("lambda = 2(3-r)/(3r-5) needs r > 5/3")
    return 2 * (3 - r) / (3 * r - 5)


def second_gradient_audit(state: SimState, cfg: SimConfig) -> SecondGradientRecord:
    """I_r(v), ||grad v||^2 and the weighted quantity I_r / (1 + ||grad v||^2)^lambda."""
    r = cfg.r
    lam = lambda_exponent(r)
    i_r = F.i_r_functional(state.v, r)
    grad_sq = F.l2_norm(F.grad_vector(state.v)) ** 2
    return SecondGradientRecord(state.t, i_r, grad_sq, lam, i_r / (1.0 + grad_sq) ** lam)


# ---------------------------------------------------------------- driver


@dataclass
class RunResult:
    snapshots: list
    ledger: EnergyLedger
    diagnostics: dict
    certificate: AssumptionCertificate
    mode: str

    @property
    def final(self) -> SimState:
        return self.snapshots[-1]


def run(cfg: SimConfig, v0_spec: InitialData | F.VectorField) -> RunResult:
    """Integrates from t = 0 to T, filling the ledger every step."""
    integ = Integrator(cfg)
    g = cfg.grid
    if isinstance(v0_spec, F.VectorField):
        v0 = v0_spec
    else:
        v0 = initial_data(v0_spec, g, cfg.delta)
    state = SimState(0.0, v0, F.ScalarField.zeros(g), 0)
    ledger = EnergyLedger(C1=integ.cert.C1_est)
    E0 = 0.5 * F.l2_norm(v0) ** 2
    for name, val in (("t", 0.0), ("kinetic", E0), ("dissipation", 0.0), ("biharmonic", 0.0),
                      ("stress_work", 0.0), ("forcing_work", 0.0), ("step_defect", 0.0)):
        getattr(ledger, name).append(val)

    audit_on = cfg.r > 5 / 3 and cfg.audit_every > 0
    diag = {k: [] for k in ("pressure_iterations", "max_contraction", "increment", "div_ratio", "cfl_number")}
    second = []
    weighted_integral = 0.0
    if audit_on:
        second.append(second_gradient_audit(state, cfg))
    snapshots = [state]
    nsteps = cfg.steps
    for k in range(nsteps):
        new, info = integ.step(state)
        if k == 0:
            # the initial pressure is only known once the first solve has run
            snapshots[0] = dataclasses.replace(state, p=new.p)
        E_new = 0.5 * F.l2_norm(new.v) ** 2
        E_old = ledger.kinetic[-1]
        dt = cfg.dt
        defect = E_new - E_old + dt * (info.stress_power + info.biharmonic_rate - info.forcing_power)
        ledger.t.append(new.t)
        ledger.kinetic.append(E_new)
        ledger.dissipation.append(ledger.dissipation[-1] + dt * info.phi_integral)
        ledger.biharmonic.append(ledger.biharmonic[-1] + dt * info.biharmonic_rate)
        ledger.stress_work.append(ledger.stress_work[-1] + dt * info.stress_power)
        ledger.forcing_work.append(ledger.forcing_work[-1] + dt * info.forcing_power)
        ledger.step_defect.append(defect)
        for key in diag:
            diag[key].append(getattr(info, key))
        if info.div_ratio > DIV_TOLERANCE:
            log.warning("divergence ratio %.3e above tolerance at step %d", info.div_ratio, k + 1)
        if audit_on and (k + 1) % cfg.audit_every == 0:
            rec = second_gradient_audit(new, cfg)
            weighted_integral += rec.weighted * dt * cfg.audit_every
            second.append(rec)
        state = new
        if cfg.snapshot_every and (k + 1) % cfg.snapshot_every == 0 and k + 1 < nsteps:
            snapshots.append(state)
    # p of the final state is re-solved so the snapshot is self-consistent
    if nsteps:
        _, p_final, _ = integ.pressure(state.v, state.p)
        state = dataclasses.replace(state, p=p_final)
        snapshots.append(state)
    diag["second_gradient"] = second
    diag["second_gradient_integral"] = weighted_integral
    diag["theorem_mode"] = cfg.theorem_mode
    return RunResult(snapshots, ledger, diag, integ.cert, cfg.mode_label)


def second_gradient_running_integral(result: RunResult):
    """Cumulative left-Riemann integral of the weighted second-gradient quantity."""
    recs = result.diagnostics["second_gradient"]
    out, acc = [], 0.0
    for a, b in zip(recs[:-1], recs[1:]):
        acc += a.weighted * (b.t - a.t)
        out.append((b.t, acc))
    return out


# ---------------------------------------------------------------- delta sweep


@dataclass
class DeltaSweepRow:
    delta: float
    final_energy: float
    sup_bound_ratio: float
    cauchy_difference: float | None  # ||v_delta(T) - v_next(T)||_2
    audit_passed: bool


def delta_sweep(cfg: SimConfig, v0_spec: InitialData, deltas, workers: int = 1):
    """Runs each delta and reports Cauchy differences of the final velocities."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas) or any(b > a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError("deltas must be positive and non-increasing")
    cfgs = [dataclasses.replace(cfg, delta=d) for d in deltas]

    def one(c):
        return run(c, v0_spec)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, cfgs))
    else:
        results = [one(c) for c in cfgs]
    rows = []
    for i, (d, res) in enumerate(zip(deltas, results)):
        audit = energy_audit(res.ledger, cfg.dt)
        diff = F.l2_norm(res.final.v - results[i + 1].final.v) if i + 1 < len(results) else None
        rows.append(DeltaSweepRow(d, res.ledger.kinetic[-1], audit.sup_bound_ratio, diff, audit.passed))
    return rows, results


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "final_energy", "sup_bound_ratio", "cauchy_difference", "audit_passed"])
        for row in rows:
            writer.writerow([repr(row.delta), repr(row.final_energy), repr(row.sup_bound_ratio),
                             "" if row.cauchy_difference is None else repr(row.cauchy_difference),
                             row.audit_passed])


# ---------------------------------------------------------------- manufactured solutions


def manufactured_forcing(cfg: SimConfig, target: Callable[[float], F.VectorField],
                         target_dt: Callable[[float], F.VectorField]):
    """Forcing that makes ``target`` an exact solution of the discrete operator.

    f(t) = d/dt target - P[target x omega + div S(p, D(target))] + delta Laplace^2 target,
    with p from the Picard solve at the target velocity.
    """
    integ = Integrator(dataclasses.replace(cfg, forcing=None))
    g = cfg.grid

    def forcing(t):
        v = target(t)
        N_hat, _, _, _, _ = integ.tendency(v)
        f_hat = target_dt(t).hat - N_hat + cfg.delta * g.k2**2 * v.hat
        return F.VectorField.from_hat(g, f_hat)

    return forcing
