"""Sectioned key = value run configuration.

Example::

    [model]
    kind = AdmissiblePowerLaw
    r = 1.9
    gamma_amp = 0.2

    [grid]
    n = 32
    L = 6.283185307179586
    d = 3

    [run]
    delta = 1e-3
    dt = 1e-3
    T = 1.0
    mode = theorem
    initial = taylor_green

Unknown sections or keys are errors; every error names the offending line.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

from .analysis import EnsembleSpec
from .constitutive import KINDS, ModelSpec, SampleSpec, _DEFAULTS
from .fields import Grid
from .timestepper import ConfigError, InitialData, SimConfig

SCHEMA = {
    "model": {"kind": str, **{k: float for spec in _DEFAULTS.values() for k in spec}},
    "sampler": {"p_min": float, "p_max": float, "n_p": int, "p_floor": float, "d_max": float,
                "d_floor": float, "n_d": int, "n_dirs": int, "seed": int},
    "grid": {"n": int, "L": float, "d": int},
    "run": {"delta": float, "dt": float, "T": float, "mode": str, "initial": str, "amplitude": float,
            "seed": int, "kmax": float, "pressure_tol": float, "pressure_max_iter": int,
            "snapshot_every": int, "audit_every": int, "cfl": float},
    "sweep": {"deltas": str, "workers": int},
    "pressure": {"input": str, "tol": float, "max_iter": int, "relaxation": float},
    "verify": {"size": int, "n": int, "d": int, "r": float, "kmax": float, "amplitude": float,
               "seed": int, "refine": int, "interpolation_fields": int},
    "report": {"input": str, "format": str},
}


class ConfigFileError(ConfigError):
    def __init__(self, message, line=None, section=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if section is not None:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")
        self.line, self.section, self.key = line, section, key


@dataclass
class RunConfig:
    path: Path | None
    text: str
    sections: dict
    lines: dict

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def has(self, section):
        return section in self.sections

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def error(self, section, key, message):
        return ConfigFileError(message, self.lines.get((section, key)), section, key)

    # typed views
    def model(self) -> ModelSpec:
        if "model" not in self.sections or "kind" not in self.sections["model"]:
            raise ConfigFileError("missing [model] kind")
        sec = self.sections["model"]
        kind = sec["kind"]
        if kind not in KINDS:
            raise self.error("model", "kind", f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
        params = {k: v for k, v in sec.items() if k != "kind"}
        for key in params:
            if key not in _DEFAULTS[kind]:
                raise self.error("model", key, f"parameter not used by {kind}")
        try:
            return ModelSpec(kind, params)
        except ValueError as exc:
            raise ConfigFileError(str(exc), section="model") from exc

    def sampler(self) -> SampleSpec:
        return SampleSpec(**self.sections.get("sampler", {}))

    def grid(self) -> Grid:
        try:
            return Grid(**self.sections.get("grid", {"n": 32}))
        except (TypeError, ValueError) as exc:
            raise ConfigFileError(str(exc), section="grid") from exc

    def initial(self) -> InitialData:
        sec = self.sections.get("run", {})
        return InitialData(kind=sec.get("initial", "taylor_green"), amplitude=sec.get("amplitude", 1.0),
                           seed=sec.get("seed", 0), kmax=sec.get("kmax", 4.0))

    def sim(self, exploratory: bool = False) -> SimConfig:
        sec = self.sections.get("run", {})
        mode = sec.get("mode", "theorem")
        if mode not in ("theorem", "exploratory"):
            raise self.error("run", "mode", "mode must be 'theorem' or 'exploratory'")
        theorem = mode == "theorem" and not exploratory
        cfg = SimConfig(
            grid=self.grid(),
            model=self.model(),
            delta=sec.get("delta", 0.0),
            dt=sec.get("dt", 1e-3),
            T=sec.get("T", 1.0),
            pressure_tol=sec.get("pressure_tol", 1e-10),
            pressure_max_iter=sec.get("pressure_max_iter", 200),
            snapshot_every=sec.get("snapshot_every", 0),
            audit_every=sec.get("audit_every", 1),
            cfl=sec.get("cfl", 0.4),
            theorem_mode=theorem,
        )
        try:
            cfg.validate()
        except ConfigError as exc:
            msg = str(exc)
            if "requires r" in msg and ("model", "r") in self.lines:
                section, key = "model", "r"
            elif "theorem mode" in msg:
                section, key = "run", "mode"
            else:
                section, key = "run", None
            raise ConfigFileError(msg, self.lines.get((section, key)) if key else None, section, key) from exc
        return cfg

    def deltas(self):
        raw = self.get("sweep", "deltas")
        if raw is None:
            raise ConfigFileError("missing [sweep] deltas")
        try:
            return [float(x) for x in re.split(r"[,\s]+", raw.strip()) if x]
        except ValueError as exc:
            raise self.error("sweep", "deltas", f"cannot parse {raw!r}") from exc

    def ensemble(self) -> EnsembleSpec:
        sec = self.sections.get("verify", {})
        keys = ("size", "n", "d", "kmax", "amplitude", "seed")
        return EnsembleSpec(**{k: sec[k] for k in keys if k in sec})


def _line_index(text):
    """Maps (section, key) to 1-based line numbers."""
    index, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = no
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip()
        index[(section, key)] = no
    return index


def parse_config(text: str, path: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigFileError("key outside any [section]", exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigFileError("malformed line", line) from exc
    except configparser.Error as exc:
        raise ConfigFileError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc
    lines = _line_index(text)
    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigFileError(f"unknown section [{name}]", lines.get((name, None)))
        out = {}
        for key, raw in parser.items(name):
            if key not in SCHEMA[name]:
                raise ConfigFileError("unknown key", lines.get((name, key)), name, key)
            typ = SCHEMA[name][key]
            try:
                out[key] = typ(float(raw)) if typ is int and re.fullmatch(r"[-+]?\d+(\.0*)?([eE]\+?\d+)?", raw) \
                    else typ(raw)
            except ValueError:
                raise ConfigFileError(f"expected {typ.__name__}, got {raw!r}", lines.get((name, key)), name,
                                      key) from None
        sections[name] = out
    return RunConfig(path, text, sections, lines)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, path)
