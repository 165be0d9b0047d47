"""Extra-stress laws S(p, D) = nu(p, |D|^2) D and numerical certification.

Every law is written in terms of three scalar callables of the pressure ``p``
and the squared Frobenius norm ``s2 = |D|^2``:

    nu(p, s2), d nu / d s2, d nu / d p

from which the stress, its directional derivative in D and its pressure
derivative follow in closed form.  All functions broadcast over numpy arrays,
so the same code evaluates a single 3x3 tensor or a whole spectral grid.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

NEWTONIAN = "NewtonianConstant"
SCHAEFFER = "SchaefferRegularized"
CARREAU = "CarreauExponential"
POWER_LAW = "AdmissiblePowerLaw"

KINDS = (NEWTONIAN, SCHAEFFER, CARREAU, POWER_LAW)

_DEFAULTS = {
    NEWTONIAN: {"nu_star": 0.5, "r": 2.0},
    SCHAEFFER: {"alpha": 1.0, "epsilon": 1e-3, "r": 1.5},
    CARREAU: {"eta_inf": 0.0, "eta_0": 1.0, "beta": 1.0, "r": 1.46, "alpha": 0.1, "p_cap": 10.0},
    POWER_LAW: {"r": 1.9, "gamma_amp": 0.0},
}

# ratios within this relative distance of a bound are rounding, not violations
ROUNDING_SLACK = 1e-9


class NotCertifiable(Exception):
    """Raised when sampled structural bounds fail; carries the certificate."""

    def __init__(self, message: str, certificate: "AssumptionCertificate"):
        super().__init__(message)
        self.certificate = certificate


@dataclass(frozen=True)
class ModelSpec:
    """A viscosity law ``kind`` with its named parameters."""

    kind: str
    params: Mapping[str, float] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        merged = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        for name, value in merged.items():
            if not np.isfinite(value):
                raise ValueError(f"parameter {name} must be finite, got {value}")
        object.__setattr__(self, "params", merged)
        self._validate()

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    def _validate(self):
        P = self.params
        r = P["r"]
        if not 1.0 < r <= 2.0:
            raise ValueError(f"exponent r must lie in (1, 2], got {r}")
        if self.kind == NEWTONIAN and P["nu_star"] <= 0:
            raise ValueError("nu_star must be positive")
        if self.kind == SCHAEFFER and (P["alpha"] <= 0 or P["epsilon"] <= 0):
            raise ValueError("alpha and epsilon must be positive")
        if self.kind == CARREAU:
            if P["eta_inf"] < 0 or P["eta_0"] <= P["eta_inf"]:
                raise ValueError("need 0 <= eta_inf < eta_0")
            if P["beta"] <= 0 or P["alpha"] < 0 or P["p_cap"] <= 0:
                raise ValueError("need beta > 0, alpha >= 0, p_cap > 0")
        if self.kind == POWER_LAW:
            if r >= 2.0:
                raise ValueError("AdmissiblePowerLaw needs r in (1, 2)")
            if P["gamma_amp"] < 0:
                raise ValueError("gamma_amp must be non-negative")

    @property
    def r(self) -> float:
        return self.params["r"]

    # convenience constructors
    @classmethod
    def newtonian(cls, nu_star=0.5):
        return cls(NEWTONIAN, {"nu_star": nu_star})

    @classmethod
    def schaeffer(cls, alpha=1.0, epsilon=1e-3, r=1.5):
        return cls(SCHAEFFER, {"alpha": alpha, "epsilon": epsilon, "r": r})

    @classmethod
    def carreau(cls, eta_inf=0.0, eta_0=1.0, beta=1.0, r=1.46, alpha=0.1, p_cap=10.0):
        return cls(CARREAU, dict(eta_inf=eta_inf, eta_0=eta_0, beta=beta, r=r, alpha=alpha, p_cap=p_cap))

    @classmethod
    def power_law(cls, r=1.9, gamma_amp=0.0):
        return cls(POWER_LAW, {"r": r, "gamma_amp": gamma_amp})

    # scalar viscosity and its partial derivatives
    def nu(self, p, s2):
        p, s2 = np.asarray(p, dtype=float), np.asarray(s2, dtype=float)
        P = self.params
        if self.kind == NEWTONIAN:
            return np.broadcast_to(2.0 * P["nu_star"], np.broadcast(p, s2).shape).astype(float)
        if self.kind == SCHAEFFER:
            return P["alpha"] * p / np.sqrt(P["epsilon"] ** 2 + s2)
        if self.kind == CARREAU:
            return self._carreau_shear(s2) * np.exp(P["alpha"] * np.minimum(p, P["p_cap"]))
        w = 1.0 + self._gamma(p) + s2
        return w ** ((P["r"] - 2.0) / 2.0)

    def dnu_ds2(self, p, s2):
        p, s2 = np.asarray(p, dtype=float), np.asarray(s2, dtype=float)
        P = self.params
        if self.kind == NEWTONIAN:
            return np.zeros(np.broadcast(p, s2).shape)
        if self.kind == SCHAEFFER:
            return -0.5 * P["alpha"] * p * (P["epsilon"] ** 2 + s2) ** -1.5
        if self.kind == CARREAU:
            a = (2.0 - P["r"]) / 2.0
            with np.errstate(divide="ignore", invalid="ignore"):
                denom = 1.0 + P["beta"] * s2**a
                g = -(P["eta_0"] - P["eta_inf"]) * P["beta"] * a * s2 ** (a - 1.0) / denom**2
            # at D = 0 the derivative only ever multiplies (D:B)^2 = 0
            g = np.where(s2 > 0, g, 0.0)
            return g * np.exp(P["alpha"] * np.minimum(p, P["p_cap"]))
        r = P["r"]
        w = 1.0 + self._gamma(p) + s2
        return 0.5 * (r - 2.0) * w ** ((r - 4.0) / 2.0)

    def dnu_dp(self, p, s2):
        p, s2 = np.asarray(p, dtype=float), np.asarray(s2, dtype=float)
        P = self.params
        if self.kind == NEWTONIAN:
            return np.zeros(np.broadcast(p, s2).shape)
        if self.kind == SCHAEFFER:
            return P["alpha"] / np.sqrt(P["epsilon"] ** 2 + s2) + 0.0 * p
        if self.kind == CARREAU:
            return np.where(p < P["p_cap"], P["alpha"] * self.nu(p, s2), 0.0)
        r = P["r"]
        w = 1.0 + self._gamma(p) + s2
        return 0.5 * (r - 2.0) * w ** ((r - 4.0) / 2.0) * self._dgamma(p)

    def _gamma(self, p):
        return self.params["gamma_amp"] * 0.5 * (1.0 + np.tanh(p))

    def _dgamma(self, p):
        return self.params["gamma_amp"] * 0.5 / np.cosh(p) ** 2

    def _carreau_shear(self, s2):
        P = self.params
        return P["eta_inf"] + (P["eta_0"] - P["eta_inf"]) / (1.0 + P["beta"] * s2 ** ((2.0 - P["r"]) / 2.0))

    def describe(self) -> str:
        inner = ", ".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.kind}{{{inner}}}"


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def _frob2(D):
    return np.einsum("...ij,...ij->...", D, D)


def stress(model: ModelSpec, p, D):
    """S(p, D) = nu(p, |D|^2) D for tensors stacked on the last two axes."""
    p, D = np.asarray(p, dtype=float), np.asarray(D, dtype=float)
    _check_finite(p, D)
    return model.nu(p, _frob2(D))[..., None, None] * D


def stress_jacobian_d(model: ModelSpec, p, D, B):
    """Quadratic form (dS/dD)(p, D) : (B x B) = nu |B|^2 + 2 nu' (D:B)^2."""
    p, D, B = (np.asarray(a, dtype=float) for a in (p, D, B))
    _check_finite(p, D, B)
    s2 = _frob2(D)
    DB = np.einsum("...ij,...ij->...", D, B)
    return model.nu(p, s2) * _frob2(B) + 2.0 * model.dnu_ds2(p, s2) * DB**2


def stress_jacobian_d_fd(model: ModelSpec, p, D, B, h=1e-6):
    """Central-difference version of :func:`stress_jacobian_d`, for validation only."""
    B = np.asarray(B, dtype=float)
    step = h / max(np.sqrt(_frob2(B)).max(), 1e-300)
    Sp = stress(model, p, D + step * B)
    Sm = stress(model, p, D - step * B)
    return np.einsum("...ij,...ij->...", (Sp - Sm) / (2 * step), B)


def stress_jacobian_p(model: ModelSpec, p, D):
    """dS/dp (p, D), a symmetric tensor."""
    p, D = np.asarray(p, dtype=float), np.asarray(D, dtype=float)
    _check_finite(p, D)
    return model.dnu_dp(p, _frob2(D))[..., None, None] * D


@dataclass(frozen=True)
class SampleSpec:
    """Where the ellipticity and pressure-sensitivity bounds are probed.

    Pressures: zero plus log-spaced magnitudes from ``p_floor`` up to the
    range ends, on each side that the range covers.  Shear magnitudes: zero
    plus a log grid on ``[d_floor, d_max]``.  Directions: ``n_dirs`` seeded
    random pairs of unit symmetric matrices, plus one aligned (B = D) and one
    orthogonal (B : D = 0) pair.
    """

    p_min: float = -1e2
    p_max: float = 1e2
    n_p: int = 41
    p_floor: float = 1e-3
    d_max: float = 1e3
    d_floor: float = 1e-3
    n_d: int = 61
    n_dirs: int = 64
    seed: int = 20240601

    def pressures(self):
        per_side = max(self.n_p // 2, 2)
        parts = [np.array([self.p_min, self.p_max])]
        if self.p_min <= 0.0 <= self.p_max:
            parts.append(np.zeros(1))
        if self.p_max > self.p_floor:
            parts.append(np.logspace(np.log10(max(self.p_floor, self.p_min, 1e-300)), np.log10(self.p_max), per_side))
        if self.p_min < -self.p_floor:
            parts.append(-np.logspace(np.log10(max(self.p_floor, -self.p_max, 1e-300)), np.log10(-self.p_min), per_side))
        p = np.unique(np.concatenate(parts))
        return p[(p >= self.p_min) & (p <= self.p_max)]

    def magnitudes(self):
        return np.concatenate([[0.0], np.logspace(np.log10(self.d_floor), np.log10(self.d_max), self.n_d)])

    def direction_cosines(self, dim=3):
        """Cosines D_hat : B_hat of the sampled direction pairs."""
        rng = np.random.default_rng(self.seed)
        Dh = random_unit_symmetric(rng, self.n_dirs, dim)
        Bh = random_unit_symmetric(rng, self.n_dirs, dim)
        c = np.einsum("kij,kij->k", Dh, Bh)
        return np.concatenate([[1.0, 0.0], c])


def random_unit_symmetric(rng, count, dim=3):
    A = rng.standard_normal((count, dim, dim))
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    return A / np.sqrt(_frob2(A))[:, None, None]


@dataclass(frozen=True)
class AssumptionCertificate:
    C1_est: float
    C2_est: float
    gamma0_est: float
    r: float
    sample_count: int
    admissible: bool
    violations: tuple = ()
    model: str = ""

    @property
    def theorem_bound(self) -> float:
        """C1/(C1 + C2), the admissibility threshold for gamma0."""
        return self.C1_est / (self.C1_est + self.C2_est)

    def as_dict(self):
        return {
            "model": self.model,
            "r": self.r,
            "C1_est": self.C1_est,
            "C2_est": self.C2_est,
            "gamma0_est": self.gamma0_est,
            "theorem_bound": self.theorem_bound if self.C1_est + self.C2_est > 0 else float("nan"),
            "sample_count": self.sample_count,
            "admissible": self.admissible,
            "violation_count": len(self.violations),
        }

    def write_report(self, path):
        with open(path, "w") as fh:
            for key, value in self.as_dict().items():
                fh.write(f"{key} = {_fmt(value)}\n")

    def write_violations_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["p", "D_norm", "cosine", "ellipticity_ratio"])
            writer.writerows(self.violations)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _sample_ratios(model: ModelSpec, sampler: SampleSpec):
    p = sampler.pressures()[:, None, None]
    m = sampler.magnitudes()[None, :, None]
    c = sampler.direction_cosines()[None, None, :]
    s2 = m**2
    r = model.r
    weight = (1.0 + s2) ** ((r - 2.0) / 2.0)
    with np.errstate(all="ignore"):
        jac = model.nu(p, s2) + 2.0 * model.dnu_ds2(p, s2) * s2 * c**2
        ell = jac / weight
        sens = np.abs(model.dnu_dp(p, s2)) * m / (1.0 + s2) ** ((r - 2.0) / 4.0)
    shape = np.broadcast(p, m, c).shape
    return (np.broadcast_to(p, shape), np.broadcast_to(m, shape), np.broadcast_to(c, shape),
            np.broadcast_to(ell, shape), np.broadcast_to(sens, shape))


def certify_assumptions(model: ModelSpec, sampler: SampleSpec | None = None) -> AssumptionCertificate:
    """Sampled estimates of C1, C2, gamma0.

    Raises :class:`NotCertifiable` if the lower ellipticity ratio is not positive
    (or not finite) anywhere on the sample set.
    """
    return _certify_cached(model, sampler or SampleSpec())


@functools.lru_cache(maxsize=64)
def _certify_cached(model, sampler):
    p, m, c, ell, sens = _sample_ratios(model, sampler)
    bad = ~np.isfinite(ell) | ~np.isfinite(sens) | (ell <= 0.0)
    good = ~bad
    if good.any():
        C1 = float(ell[good].min())
        C2 = float(ell[good].max())
        g0 = float(sens[good].max())
    else:
        C1 = C2 = g0 = float("nan")
    violations = tuple(
        (float(pp), float(mm), float(cc), float(aa)) for pp, mm, cc, aa in zip(p[bad], m[bad], c[bad], ell[bad])
    )
    admissible = not violations and g0 < C1 / (C1 + C2)
    cert = AssumptionCertificate(
        C1_est=C1,
        C2_est=C2,
        gamma0_est=g0,
        r=model.r,
        sample_count=int(ell.size),
        admissible=bool(admissible),
        violations=violations,
        model=model.describe(),
    )
    if violations:
        raise NotCertifiable(f"{model.describe()}: {len(violations)} samples violate the ellipticity bound", cert)
    return cert


def growth_bounds_check(model: ModelSpec, p, D, certificate: AssumptionCertificate | None = None):
    """Pointwise check of the growth bounds implied by the ellipticity bound.

    Returns ``(lower_ok, upper_ok)`` (arrays if ``p``/``D`` are stacked).
    """
    cert = certificate or certify_assumptions(model)
    D = np.asarray(D, dtype=float)
    S = stress(model, p, D)
    s2 = _frob2(D)
    weight = (1.0 + s2) ** ((cert.r - 2.0) / 2.0)
    SD = np.einsum("...ij,...ij->...", S, D)
    lower = SD >= cert.C1_est * s2 * weight * (1.0 - ROUNDING_SLACK)
    upper = np.sqrt(_frob2(S)) <= cert.C2_est * np.sqrt(s2) * weight * (1.0 + ROUNDING_SLACK)
    if lower.ndim == 0:
        return bool(lower), bool(upper)
    return lower, upper


def power_law_for_gamma0(target: float, r: float = 1.9, sampler: SampleSpec | None = None) -> ModelSpec:
    """AdmissiblePowerLaw whose certified gamma0 equals ``target``."""
    from scipy.optimize import brentq

    def gap(amp):
        return certify_assumptions(ModelSpec.power_law(r, amp), sampler).gamma0_est - target

    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e8:
            raise ValueError(f"gamma0 = {target} not reachable for r = {r}")
    amp = brentq(gap, 0.0, hi, xtol=1e-10, rtol=1e-10)
    return ModelSpec.power_law(r, amp)
