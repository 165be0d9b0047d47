"""Picard iteration for the nonlinear pressure equation

    -Laplace p = div div (v (x) v - S(p, D(v)))

Each sweep is one linear solve with p frozen inside S.  For a certified law
the map contracts in L2 at rate gamma0, because the Fourier symbol of
(-Laplace)^-1 div div has unit norm on symmetric tensors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fields as F
from .analysis import EstimateReport, exponents
from .constitutive import AssumptionCertificate, ModelSpec, NotCertifiable, certify_assumptions

log = logging.getLogger(__name__)

RATIO_SLACK = 0.05


class NoConvergence(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotCertified(RuntimeError):
    pass


@dataclass
class PressureSolveReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    gamma0_bound: float = 0.0
    fixed_point_residual: float = float("nan")
    converged: bool = False

    def ratios_within_bound(self, slack=RATIO_SLACK) -> bool:
        return all(q <= self.gamma0_bound + slack for q in self.contraction_ratios)

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "gamma0_bound": self.gamma0_bound,
            "fixed_point_residual": self.fixed_point_residual,
            "final_difference": self.residuals[-1] if self.residuals else 0.0,
            "max_contraction_ratio": max(self.contraction_ratios, default=0.0),
        }


def _symmetric_pairs(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


class PressureProblem:
    """Fixed data of the pressure equation for one velocity field."""

    def __init__(self, v: F.VectorField, model: ModelSpec, gradient=None):
        self.v = v
        self.model = model
        self.grid = g = v.grid
        G = F.grad_vector(v).values if gradient is None else gradient
        self.D = 0.5 * (G + np.swapaxes(G, 0, 1))
        self.s2 = np.sum(self.D**2, axis=(0, 1))
        self.pairs = _symmetric_pairs(g.d)
        vv_hat = self._sym_hat(np.einsum("i...,j...->ij...", v.values, v.values))
        self.convective_hat = F.div_div_hat(g, vv_hat)
        self._last = None

    def _sym_hat(self, T):
        """Dealiased spectral coefficients of a symmetric tensor array."""
        g = self.grid
        out = np.zeros((g.d, g.d) + g.k2.shape, dtype=complex)
        for i, j in self.pairs:
            c = g.fft(T[i, j]) * g.dealias_mask
            out[i, j] = c
            out[j, i] = c
        return out

    def stress_values(self, p_values):
        return self.model.nu(p_values, self.s2)[None, None] * self.D

    def stress_hat(self, p_values):
        """Dealiased coefficients of S(p, D(v)); the latest evaluation is cached."""
        if self._last is not None and np.array_equal(self._last[0], p_values):
            return self._last[1], self._last[2]
        S = self.stress_values(p_values)
        S_hat = self._sym_hat(S)
        self._last = (np.array(p_values), S, S_hat)
        return S, S_hat

    def stress_divdiv_hat(self, p_values):
        return F.div_div_hat(self.grid, self.stress_hat(p_values)[1])

    def apply(self, p_values):
        """One Picard sweep; returns nodal values of the next iterate."""
        g = self.grid
        rhs = self.convective_hat - self.stress_divdiv_hat(p_values)
        return g.ifft(g.inv_k2 * rhs)

    def residual(self, p_values) -> float:
        """L2 norm of Laplace p + div div (v (x) v - S(p, D(v)))."""
        g = self.grid
        r_hat = -g.k2 * g.fft(p_values) + self.convective_hat - self.stress_divdiv_hat(p_values)
        return float(np.sqrt(F._spectral_sum(g, np.abs(r_hat) ** 2)))


def _certificate_for(model, certificate):
    if certificate is not None:
        return certificate
    try:
        return certify_assumptions(model)
    except NotCertifiable as exc:
        raise NotCertified(str(exc)) from exc


def solve_pressure(v: F.VectorField, model: ModelSpec, tol: float = 1e-10, max_iter: int = 200,
                   certificate: AssumptionCertificate | None = None, p0: F.ScalarField | None = None,
                   relaxation: float = 1.0):
    """Picard iteration p^n = (-Laplace)^-1 div div (v (x) v - S(p^{n-1}, D(v))).

    Starts from ``p0`` (zero by default).  ``relaxation < 1`` damps the
    update and is meant for ill-conditioned demonstrations only.
    Returns ``(p, report)``.
    """
    cert = _certificate_for(model, certificate)
    return picard(PressureProblem(v, model), cert, tol, max_iter, p0, relaxation)


def picard(problem: PressureProblem, cert: AssumptionCertificate, tol: float = 1e-10, max_iter: int = 200,
           p0: F.ScalarField | None = None, relaxation: float = 1.0):
    """Run the iteration on a prepared :class:`PressureProblem`."""
    if not cert.gamma0_est < 1.0:
        raise NotCertified(f"{problem.model.describe()}: gamma0_est = {cert.gamma0_est} is not < 1")
    if not 0 < relaxation <= 1:
        raise ValueError("relaxation must lie in (0, 1]")
    g = problem.grid
    report = PressureSolveReport(gamma0_bound=cert.gamma0_est)
    res_tol = tol * (1.0 + F.l2_norm(problem.v) ** 2)
    dv = g.cell_volume

    p = np.zeros(g.shape) if p0 is None else np.array(p0.values, dtype=float)
    p -= p.mean()
    nxt = problem.apply(p)
    while True:
        if relaxation != 1.0:
            nxt = (1 - relaxation) * p + relaxation * nxt
        diff = float(np.sqrt(np.sum((nxt - p) ** 2) * dv))
        report.iterations += 1
        if report.residuals and report.residuals[-1] > 0:
            report.contraction_ratios.append(diff / report.residuals[-1])
        report.residuals.append(diff)
        p = nxt
        nxt = problem.apply(p)
        size = float(np.sqrt(np.sum(p**2) * dv))
        if diff <= tol * max(1.0, size):
            # residual of p is Laplace (p - T p), with T p already computed
            r_hat = g.k2 * g.fft(nxt - p)
            report.fixed_point_residual = float(np.sqrt(F._spectral_sum(g, np.abs(r_hat) ** 2)))
            if report.fixed_point_residual <= res_tol:
                report.converged = True
                break
        if report.iterations >= max_iter:
            report.fixed_point_residual = problem.residual(p)
            raise NoConvergence(
                f"pressure iteration stalled after {max_iter} sweeps (last difference {diff:.3e})", report
            )
    log.debug("pressure solve: %d sweeps, residual %.2e", report.iterations, report.fixed_point_residual)
    return F.ScalarField(g, p), report


def decompose_pressure(v: F.VectorField, p: F.ScalarField, model: ModelSpec):
    """Split p into the convective part p1 and the stress part p2."""
    g = v.grid
    problem = PressureProblem(v, model)
    p1 = F.ScalarField(g, g.ifft(g.inv_k2 * problem.convective_hat))
    p2 = F.ScalarField(g, g.ifft(-g.inv_k2 * problem.stress_divdiv_hat(p.values)))
    return p1, p2


def estimate_report(v: F.VectorField, p1: F.ScalarField, p2: F.ScalarField, model: ModelSpec, r: float | None = None,
                    q_list=None, grad_constant: float = 1.0, certificate: AssumptionCertificate | None = None):
    """Measured sides of the p1, p2 and grad p estimates.

    p1 and p2 bounds carry non-explicit constants and are reported as ratios
    (``constant=None``); the grad p bound uses ``grad_constant`` for the
    convective constant and C2 from the certificate.
    """
    cert = _certificate_for(model, certificate)
    r = model.r if r is None else r
    ex = exponents(r, check=False)
    if q_list is None:
        q_list = [q for q in np.linspace(2.0, ex.five_r_thirds, 5)[1:]]
    reports = []
    for q in q_list:
        if not 2.0 < q <= ex.five_r_thirds + 1e-12:
            raise ValueError(f"q = {q} outside (2, 5r/3]")
        reports.append(EstimateReport(f"p1_bound[q={q:.4g}]", F.lq_norm(p1, q / 2), F.lq_norm(v, q) ** 2, None))
    D = F.sym_grad(v)
    D_phi = F.luxemburg_norm(D, "phi", r)
    for s in (2.0, ex.r_prime):
        reports.append(EstimateReport(f"p2_bound[s={s:.4g}]", F.lq_norm(p2, s), D_phi, None))
    p = p1 + p2
    G = F.grad_vector(v)
    left = F.l2_norm(F.grad(p)) * (1.0 - cert.gamma0_est)
    right = grad_constant * F.l2_norm(G) * F.lq_norm(G, 3) + cert.C2_est * np.sqrt(F.i_r_functional(v, r))
    reports.append(EstimateReport("grad_p_bound", left, float(right), 1.0))
    return reports
