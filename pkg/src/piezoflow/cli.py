"""Command-line entry point.

    piezoflow certify --config model.cfg --out outdir
    piezoflow simulate --config run.cfg --out outdir [--exploratory]

Exit status: 0 ok, 2 config error, 3 not certified, 4 pressure iteration
did not converge, 5 audit failure.  Each output directory receives one
``manifest.txt`` listing every file written.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import fields as F
from .analysis import (EstimateReport, exponents, interpolation_check, korn_embedding_report, refinement_drift,
                       write_reports_csv)
from .config import RunConfig, load_config
from .constitutive import NotCertifiable, certify_assumptions
from .pressure import NoConvergence, NotCertified, decompose_pressure, estimate_report, solve_pressure
from .snapshots import read_snapshot, write_slice_csv, write_snapshot
from .timestepper import ConfigError, delta_sweep, energy_audit, run, write_sweep_csv

log = logging.getLogger("piezoflow")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CERTIFIED = 3
EXIT_NO_CONVERGENCE = 4
EXIT_AUDIT = 5


class AuditFailure(RuntimeError):
    pass


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: object = None
    theorem_mode: object = None
    started: str = field(default_factory=_now)
    finished: str = ""
    status: str = "running"
    outputs: list = field(default_factory=list)
    version: str = __version__

    def write(self, outdir: Path):
        self.finished = _now()
        lines = [
            f"command = {self.command}",
            f"tool_version = {self.version}",
            f"config_sha256 = {self.config_hash}",
            f"seed = {self.seed}",
            f"theorem_mode = {self.theorem_mode}",
            f"started = {self.started}",
            f"finished = {self.finished}",
            f"status = {self.status}",
            f"output_count = {len(self.outputs)}",
        ]
        lines += [f"output.{i} = {name}" for i, name in enumerate(self.outputs)]
        (outdir / "manifest.txt").write_text("\n".join(lines) + "\n")


class Outputs:
    """Tracks files written to one output directory."""

    def __init__(self, outdir: Path, manifest: RunManifest):
        self.dir = outdir
        self.manifest = manifest
        outdir.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        p = self.dir / name
        self.manifest.outputs.append(name)
        return p

    def snapshot(self, name, fld, **meta):
        p = write_snapshot(self.path(name), fld, **meta)
        self.manifest.outputs.append(name + ".txt")
        return p


def _write_kv(path, items):
    with open(path, "w") as fh:
        for key, value in items:
            if isinstance(value, (float, np.floating)):
                value = repr(float(value))
            elif isinstance(value, np.bool_):
                value = bool(value)
            fh.write(f"{key} = {value}\n")


# ---------------------------------------------------------------- commands


def cmd_certify(cfg: RunConfig, out: Outputs, args):
    model = cfg.model()
    try:
        cert = certify_assumptions(model, cfg.sampler())
    except NotCertifiable as exc:
        cert = exc.certificate
        cert.write_report(out.path("certificate.txt"))
        cert.write_violations_csv(out.path("violations.csv"))
        raise NotCertified(str(exc)) from exc
    cert.write_report(out.path("certificate.txt"))
    print(f"{cert.model}: C1 = {cert.C1_est:.6g}, C2 = {cert.C2_est:.6g}, gamma0 = {cert.gamma0_est:.6g}, "
          f"admissible = {cert.admissible}")


def _resolve(cfg: RunConfig, raw):
    p = Path(raw)
    if not p.is_absolute() and cfg.path is not None:
        p = cfg.path.parent / p
    return p


def cmd_solve_pressure(cfg: RunConfig, out: Outputs, args):
    model = cfg.model()
    raw = cfg.get("pressure", "input")
    if raw is None:
        raise ConfigError("missing [pressure] input")
    path = _resolve(cfg, raw)
    try:
        v = read_snapshot(path)
    except (OSError, ValueError) as exc:
        raise cfg.error("pressure", "input", f"cannot read snapshot {path}: {exc}") from exc
    if not isinstance(v, F.VectorField):
        raise cfg.error("pressure", "input", "snapshot is not a vector field")
    try:
        cert = certify_assumptions(model, cfg.sampler())
    except NotCertifiable as exc:
        raise NotCertified(str(exc)) from exc
    tol = cfg.get("pressure", "tol", 1e-10)
    try:
        p, report = solve_pressure(v, model, tol=tol, max_iter=cfg.get("pressure", "max_iter", 200),
                                   certificate=cert, relaxation=cfg.get("pressure", "relaxation", 1.0))
    except NoConvergence as exc:
        if exc.report is not None:
            _write_history(out.path("residual_history.csv"), exc.report)
        raise
    out.snapshot("pressure.pzfs", p, model=model.describe())
    _write_kv(out.path("pressure_report.txt"), list(report.as_dict().items()) +
              [("ratios_within_bound", report.ratios_within_bound())])
    _write_history(out.path("residual_history.csv"), report)
    if model.r > 1.0 and model.r < 2.0:
        p1, p2 = decompose_pressure(v, p, model)
        write_reports_csv(out.path("pressure_estimates.csv"), estimate_report(v, p1, p2, model, certificate=cert))
    print(f"pressure: {report.iterations} sweeps, residual {report.fixed_point_residual:.3e}")


def _write_history(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "difference", "contraction_ratio"])
        ratios = [""] + [repr(q) for q in report.contraction_ratios]
        for i, (d, q) in enumerate(zip(report.residuals, ratios), 1):
            w.writerow([i, repr(d), q])


def _sim_config(cfg: RunConfig, args):
    sim = cfg.sim(exploratory=args.exploratory)
    out_mode = sim.mode_label
    return sim, out_mode


def cmd_simulate(cfg: RunConfig, out: Outputs, args):
    sim, mode = _sim_config(cfg, args)
    out.manifest.theorem_mode = sim.theorem_mode
    out.manifest.seed = cfg.initial().seed
    result = run(sim, cfg.initial())
    result.ledger.write_csv(out.path("ledger.csv"))
    for i, state in enumerate(result.snapshots):
        out.snapshot(f"velocity_{i:04d}.pzfs", state.v, t=repr(state.t), step=state.step_index)
        out.snapshot(f"pressure_{i:04d}.pzfs", state.p, t=repr(state.t), step=state.step_index)
    write_slice_csv(out.path("velocity_final_slice.csv"), result.final.v)
    _write_second_gradient(out.path("second_gradient.csv"), result.diagnostics["second_gradient"])
    audit = energy_audit(result.ledger, sim.dt)
    diag = result.diagnostics
    div_max = max(diag["div_ratio"], default=0.0)
    summary = [("mode", mode), ("theorem_mode", sim.theorem_mode), ("steps", sim.steps), ("dt", sim.dt),
               ("T", sim.T), ("delta", sim.delta)]
    summary += [(f"certificate.{k}", v) for k, v in result.certificate.as_dict().items()]
    summary += [(f"audit.{k}", v) for k, v in audit.as_dict().items()]
    summary += [("max_pressure_iterations", max(diag["pressure_iterations"], default=0)),
                ("max_contraction_ratio", max(diag["max_contraction"], default=0.0)),
                ("max_div_ratio", div_max), ("divergence_passed", div_max <= 1e-10),
                ("second_gradient_integral", diag["second_gradient_integral"])]
    _write_kv(out.path("summary.txt"), summary)
    print(f"simulate [{mode}]: E(0) = {result.ledger.kinetic[0]:.6g}, E(T) = {result.ledger.kinetic[-1]:.6g}, "
          f"audit {'passed' if audit.passed else 'FAILED'}")
    if not audit.passed or div_max > 1e-10:
        raise AuditFailure("energy or divergence audit failed; see summary.txt")


def _write_second_gradient(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i_r", "grad_sq", "weighted"])
        for rec in records:
            w.writerow([repr(float(x)) for x in (rec.t, rec.i_r, rec.grad_sq, rec.weighted)])


def cmd_sweep_delta(cfg: RunConfig, out: Outputs, args):
    sim, mode = _sim_config(cfg, args)
    out.manifest.theorem_mode = sim.theorem_mode
    out.manifest.seed = cfg.initial().seed
    rows, results = delta_sweep(sim, cfg.initial(), cfg.deltas(), workers=cfg.get("sweep", "workers", 1))
    write_sweep_csv(out.path("sweep.csv"), rows)
    for row, res in zip(rows, results):
        res.ledger.write_csv(out.path(f"ledger_delta_{row.delta:.3e}.csv"))
        out.snapshot(f"velocity_final_delta_{row.delta:.3e}.pzfs", res.final.v, delta=repr(row.delta))
    diffs = [row.cauchy_difference for row in rows if row.cauchy_difference is not None]
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    sup = max(row.sup_bound_ratio for row in rows)
    _write_kv(out.path("summary.txt"), [
        ("mode", mode), ("theorem_mode", sim.theorem_mode), ("deltas", " ".join(repr(r.delta) for r in rows)),
        ("cauchy_differences", " ".join(repr(d) for d in diffs)), ("cauchy_decreasing", decreasing),
        ("sup_bound_ratio", sup), ("audits_passed", all(r.audit_passed for r in rows)),
    ])
    for row in rows:
        print(f"delta = {row.delta:.1e}: E(T) = {row.final_energy:.6g}, cauchy = {row.cauchy_difference}")
    if not all(r.audit_passed for r in rows):
        raise AuditFailure("energy audit failed for at least one delta")


def cmd_verify(cfg: RunConfig, out: Outputs, args):
    ens = cfg.ensemble()
    r = cfg.get("verify", "r", 1.9)
    refine = cfg.get("verify", "refine", 2)
    n_interp = cfg.get("verify", "interpolation_fields", ens.size)
    out.manifest.seed = ens.seed
    hard = []

    ex = exponents(r, check=False)
    if 9 / 5 < r < 2:
        hard.append(EstimateReport("exponent_A", abs(ex.A - r), 1e-12 * r, 1.0, f"A={ex.A!r}"))
        hard.append(EstimateReport("exponent_B", abs(ex.B - 2 * ex.lam), 1e-12 * ex.B, 1.0, f"B={ex.B!r}"))

    rng = np.random.default_rng(ens.seed)
    grid = ens.grid()
    for i in range(n_interp):
        f = F.random_band_limited(grid, rng, rank=0, kmax=ens.kmax, amplitude=1.0 + 4.0 * rng.random())
        for rep in interpolation_check(f, r):
            hard.append(EstimateReport(rep.inequality, rep.left, rep.right, 1.0, f"field={i}"))
        if i < 20:
            total = F.lq_norm(f, 3) ** 3
            parts = F.split_norm(f, 3, "le") ** 3 + F.split_norm(f, 3, "ge") ** 3
            hard.append(EstimateReport("partition", abs(parts - total), 1e-10 * total, 1.0, f"field={i}"))

    coarse = korn_embedding_report(ens, r)
    fine = korn_embedding_report(ens, r, refine) if refine > 1 else None
    coarse.write_csv(out.path("korn_embedding_n%d.csv" % coarse.n))
    if fine is not None:
        fine.write_csv(out.path("korn_embedding_n%d.csv" % fine.n))
    write_reports_csv(out.path("hard_identities.csv"), hard)

    failures = [rep for rep in hard if not rep.passed]
    summary = [("r", r), ("ensemble_size", ens.size), ("hard_checks", len(hard)),
               ("hard_failures", len(failures))]
    summary += [(f"max.{k}.n{coarse.n}", v) for k, v in coarse.maxima().items()]
    finite = all(math.isfinite(v) for v in coarse.maxima().values())
    if fine is not None:
        summary += [(f"max.{k}.n{fine.n}", v) for k, v in fine.maxima().items()]
        drift = refinement_drift(coarse.maxima(), fine.maxima())
        summary += [(f"drift.{k}", v) for k, v in drift.items()]
        finite = finite and all(math.isfinite(v) for v in fine.maxima().values())
    summary.append(("ratios_finite", finite))
    _write_kv(out.path("summary.txt"), summary)
    print(f"verify-inequalities: {len(hard) - len(failures)}/{len(hard)} hard checks passed")
    if failures or not finite:
        raise AuditFailure(f"{len(failures)} hard identity checks failed")


def cmd_report(cfg: RunConfig, out: Outputs, args):
    raw = cfg.get("report", "input")
    if raw is None:
        raise ConfigError("missing [report] input")
    src = _resolve(cfg, raw)
    fmt = cfg.get("report", "format", "png")
    if fmt not in ("png", "csv"):
        raise cfg.error("report", "format", "format must be 'png' or 'csv'")
    try:
        with open(src, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise cfg.error("report", "input", f"cannot read {src}: {exc.strerror}") from exc
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        try:
            cols[name] = np.array([float(row[j]) if row[j] else np.nan for row in body])
        except ValueError:
            continue  # non-numeric column
    if len(cols) < 2:
        raise cfg.error("report", "input", "need at least two numeric columns")
    names = list(cols)
    x, ys = names[0], names[1:]
    stem = src.stem
    if fmt == "csv":
        with open(out.path(f"{stem}_plot.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", x, "value"])
            for y in ys:
                for a, b in zip(cols[x], cols[y]):
                    w.writerow([y, repr(float(a)), repr(float(b))])
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(len(ys), 1, figsize=(6, 2.2 * len(ys)), sharex=True, squeeze=False)
    for ax, y in zip(axes[:, 0], ys):
        ax.plot(cols[x], cols[y], lw=1.2)
        ax.set_ylabel(y)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel(x)
    fig.tight_layout()
    fig.savefig(out.path(f"{stem}.png"), dpi=100)
    plt.close(fig)


COMMANDS = {
    "certify": (cmd_certify, "sample the structural assumptions of a viscosity law"),
    "solve-pressure": (cmd_solve_pressure, "solve the nonlinear pressure equation for a velocity snapshot"),
    "simulate": (cmd_simulate, "integrate the regularized flow and audit the energy inequality"),
    "sweep-delta": (cmd_sweep_delta, "run a sequence of regularization strengths and compare endpoints"),
    "verify-inequalities": (cmd_verify, "empirical checks of the functional inequalities"),
    "report": (cmd_report, "render a CSV ledger or report as a PNG or plot-ready CSV"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="piezoflow", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", "-c", required=True, type=Path)
        p.add_argument("--out", "-o", type=Path, default=None, help="output directory (default: ./<command>-out)")
        if name in ("simulate", "sweep-delta"):
            p.add_argument("--exploratory", action="store_true",
                           help="allow r outside (9/5, 2) and non-admissible certificates")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = args.out or Path(f"{args.command}-out")
    manifest = RunManifest(args.command, cfg.digest)
    out = Outputs(outdir, manifest)
    code = EXIT_OK
    try:
        func(cfg, out, args)
        manifest.status = "ok"
    except ConfigError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        manifest.status, code = "config_error", EXIT_CONFIG
    except (NotCertified, NotCertifiable) as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        manifest.status, code = "not_certified", EXIT_NOT_CERTIFIED
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        manifest.status, code = "no_convergence", EXIT_NO_CONVERGENCE
    except AuditFailure as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        manifest.status, code = "audit_failure", EXIT_AUDIT
    manifest.write(outdir)
    return code


if __name__ == "__main__":
    sys.exit(main())
