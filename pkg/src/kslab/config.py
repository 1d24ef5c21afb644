"""Flat ``key = value`` experiment configuration with bracketed sections.

Every problem in a file is collected (with its line number) before a
:class:`~kslab.errors.ConfigError` is raised.  :func:`serialize` writes the
canonical form, and ``parse(serialize(c))`` reproduces ``c``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (CompatibilityError, ConfigError, ConfigTypeError, MissingKey, UnknownKey)

KINDS = ("l1_stability", "l2_stability", "commutator", "rate_study", "wh_stability",
         "simulate_vlasov", "simulate_hartree")
QUANTUM_KINDS = ("commutator", "rate_study", "wh_stability", "simulate_hartree")
SWEEP_KINDS = ("commutator", "rate_study")
KERNELS = ("regularized_coulomb", "gaussian", "zero", "coulomb1d", "harmonic")
FAMILY_NAMES = ("maxwellian", "gaussian_bump", "two_stream", "perturbed")

# key -> (type, default); type is "int", "float", "str", "bool", "floats" or a tuple of choices
SCHEMA = {
    "kind": (KINDS, None),
    "seed": ("int", 0),
    "grid.n_x": ("int", None),
    "grid.n_v": ("int", None),
    "grid.length": ("float", None),
    "grid.v_max": ("float", None),
    "grid.dim": ("int", 1),
    "quantum.hbar": ("float", None),
    "quantum.hbars": ("floats", None),
    "kernel.type": (KERNELS, None),
    "kernel.sign": ("int", 1),
    "kernel.eps": ("float", None),
    "kernel.sigma": ("float", None),
    "kernel.amplitude": ("float", 1.0),
    "kernel.omega": ("float", 1.0),
    "initial.family": (FAMILY_NAMES, None),
    "initial.base": (("maxwellian", "gaussian_bump", "two_stream"), "maxwellian"),
    "initial.mass": ("float", 1.0),
    "initial.temperature": ("float", None),
    "initial.center": ("floats", (0.0, 0.0)),
    "initial.widths": ("floats", (1.0, 1.0)),
    "initial.separation": ("float", 2.0),
    "initial.mode": ("int", 1),
    "initial.amplitude": ("float", 0.01),
    "pair.mode": ("int", 1),
    "pair.amplitude": ("float", 0.01),
    "pair.reverse": ("bool", False),
    "run.T": ("float", None),
    "run.dt": ("float", None),
    "run.slack": ("float", 0.1),
    "run.constant": ("float", None),
    "run.every": ("int", 10),
    "run.probes": ("int", 8),
    "run.control": ("bool", False),
    "run.exponents": ("floats", (3.0, 1.0)),
    "run.comm_eps": ("float", 1.0),
    "hypotheses.m": ("float", None),
    "hypotheses.sigma": ("float", None),
    "hypotheses.n0": ("float", None),
    "hypotheses.n": ("float", None),
    "hypotheses.n1": ("float", None),
}
SECTIONS = ("", "grid", "quantum", "kernel", "initial", "pair", "run", "hypotheses")


def _required(kind):
    req = ["kind", "grid.n_x", "grid.length", "kernel.type", "initial.family"]
    if kind in QUANTUM_KINDS:
        req.append("quantum.hbars" if kind in SWEEP_KINDS else "quantum.hbar")
    else:
        req += ["grid.n_v", "grid.v_max"]
    if kind != "commutator":
        req += ["run.T", "run.dt"]
    return req


@dataclass
class ExperimentConfig:
    """Parsed configuration; ``values`` holds explicitly set keys only."""

    values: dict
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        if key not in SCHEMA:
            raise KeyError(key)
        return SCHEMA[key][1]

    def get(self, key, default=None):
        v = self[key]
        return default if v is None else v

    @property
    def kind(self):
        return self.values["kind"]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values


# parsing --------------------------------------------------------------------------

def _convert(raw, typ):
    if isinstance(typ, tuple):
        if raw not in typ:
            raise ValueError(f"expected one of {', '.join(typ)}, got {raw!r}")
        return raw
    if typ == "int":
        return int(raw)
    if typ == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"non-finite number {raw!r}")
        return v
    if typ == "bool":
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true or false, got {raw!r}")
    if typ == "floats":
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(_convert(s, "float") for s in items)
    return raw


def _is_pow2(n):
    return n >= 1 and n & (n - 1) == 0


def _check(values, lines):
    issues = []
    kind = values.get("kind")
    if kind is None:
        issues.append(MissingKey(0, "kind"))
        return issues
    for key in _required(kind):
        if key not in values:
            issues.append(MissingKey(0, key))

    def where(*keys):
        return max((lines.get(k, 0) for k in keys), default=0)

    def compat(keys, msg):
        issues.append(CompatibilityError(where(*keys), msg))

    n = values.get("grid.n_x")
    L = values.get("grid.length")
    if n is not None and (n < 8 or not _is_pow2(n)):
        compat(["grid.n_x"], f"n_x={n} must be a power of two >= 8")
    if "grid.n_v" in values and (values["grid.n_v"] < 8 or not _is_pow2(values["grid.n_v"])):
        compat(["grid.n_v"], f"n_v={values['grid.n_v']} must be a power of two >= 8")
    for key in ("grid.length", "grid.v_max", "run.T", "run.dt", "quantum.hbar", "kernel.eps",
                "kernel.sigma", "initial.temperature", "initial.mass"):
        if key in values and values[key] <= 0:
            compat([key], f"{key} must be positive")
    if "kernel.sign" in values and values["kernel.sign"] not in (1, -1):
        compat(["kernel.sign"], "kernel.sign must be 1 or -1")
    if values.get("grid.dim", 1) != 1:
        compat(["grid.dim"], "experiments run at dim = 1")
    if n is None or L is None:
        return issues
    dx = L / n
    ktype = values.get("kernel.type")
    if ktype == "regularized_coulomb":
        if "kernel.eps" not in values:
            issues.append(MissingKey(0, "kernel.eps"))
        elif values["kernel.eps"] < dx * (1 - 1e-12):
            compat(["kernel.eps", "grid.n_x", "grid.length"],
                   f"kernel.eps={values['kernel.eps']!r} is below dx = L/n_x = {dx!r}")
    if ktype == "gaussian" and "kernel.sigma" not in values:
        issues.append(MissingKey(0, "kernel.sigma"))
    if kind in QUANTUM_KINDS:
        if kind in SWEEP_KINDS:
            hbars = values.get("quantum.hbars")
            if hbars:
                if len(hbars) < 4:
                    compat(["quantum.hbars"], f"a sweep needs at least 4 hbar values, got {len(hbars)}")
                elif min(hbars) > 0 and max(hbars) / min(hbars) < 8 * (1 - 1e-12):
                    compat(["quantum.hbars"], "hbar values must span a factor >= 8")
                for hb in hbars:
                    if hb <= 0:
                        compat(["quantum.hbars"], f"hbar={hb!r} must be positive")
                        continue
                    m = n * hbars[0] / hb
                    if abs(m - round(m)) > 1e-9 or not _is_pow2(int(round(m))):
                        compat(["quantum.hbars", "grid.n_x"],
                               f"hbar={hb!r} gives n_x = n_x(hbar_0) hbar_0 / hbar = {m!r}, "
                               "not a power of two")
                    elif int(round(m)) > 512:
                        compat(["quantum.hbars", "grid.n_x"],
                               f"hbar={hb!r} needs n_x={int(round(m))} > 512")
            hb = hbars[0] if hbars and hbars[0] > 0 else None
        else:
            hb = values.get("quantum.hbar")
        if hb is not None and hb > 0:
            vq = math.pi * hb * n / L
            if "grid.n_v" in values and values["grid.n_v"] != n:
                compat(["grid.n_v", "grid.n_x"],
                       f"n_v={values['grid.n_v']} must equal n_x={n} for a quantum grid")
            if "grid.v_max" in values and abs(values["grid.v_max"] - vq) > 1e-12 * vq:
                compat(["grid.v_max", "quantum.hbar", "quantum.hbars", "grid.n_x"],
                       f"v_max={values['grid.v_max']!r} violates v_max = pi hbar n_x / L = {vq!r}")
            if L < 12 * math.sqrt(hb) * (1 - 1e-12):
                compat(["grid.length", "quantum.hbar", "quantum.hbars"],
                       f"L={L!r} is below 12 sqrt(hbar) = {12 * math.sqrt(hb)!r}")
            if n > 512:
                compat(["grid.n_x"], f"n_x={n} exceeds the dense-matrix cap 512")
    issues.extend(_check_hypotheses(values, lines))
    return issues


def _check_hypotheses(values, lines):
    """Hypothesis exponents are provenance metadata; when given they must be
    consistent (m > 3, sigma > m + 6, n1 > 6, n0 > 6, n > 3).  The shipped
    families are Gaussian in both variables, so any consistent exponents hold
    for them; custom data is not checked.
    """
    out = []
    h = {k.split(".")[1]: v for k, v in values.items() if k.startswith("hypotheses.")}

    def bad(key, msg):
        out.append(CompatibilityError(lines.get("hypotheses." + key, 0), msg))

    if "m" in h and not h["m"] > 3:
        bad("m", f"hypotheses.m={h['m']!r} must exceed 3")
    if "sigma" in h:
        if "m" not in h:
            bad("sigma", "hypotheses.sigma requires hypotheses.m")
        elif not h["sigma"] > h["m"] + 6:
            bad("sigma", f"hypotheses.sigma={h['sigma']!r} must exceed m + 6 = {h['m'] + 6!r}")
    if "n1" in h and not h["n1"] > 6:
        bad("n1", f"hypotheses.n1={h['n1']!r} must exceed 6")
    if "n0" in h and not h["n0"] > 6:
        bad("n0", f"hypotheses.n0={h['n0']!r} must exceed 6")
    if "n" in h and not h["n"] > 3:
        bad("n", f"hypotheses.n={h['n']!r} must exceed 3")
    return out


def parse_config(text):
    """Parse configuration text.

    Raises
    ------
    ConfigError
        Listing every UnknownKey, TypeError, CompatibilityError and
        MissingKey found, in line order.
    """
    values, lines, issues = {}, {}, []
    section = ""
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                issues.append(ConfigTypeError(no, f"malformed section header {raw.strip()!r}"))
                continue
            section = line[1:-1].strip()
            if section not in SECTIONS or not section:
                issues.append(UnknownKey(no, f"unknown section [{section}]"))
            continue
        key, sep, val = line.partition("=")
        if not sep:
            issues.append(ConfigTypeError(no, f"expected 'key = value', got {raw.strip()!r}"))
            continue
        key = key.strip()
        full = f"{section}.{key}" if section else key
        if full not in SCHEMA:
            issues.append(UnknownKey(no, full))
            continue
        if full in values:
            issues.append(ConfigTypeError(no, f"{full} set twice (first on line {lines[full]})"))
            continue
        try:
            values[full] = _convert(val.strip(), SCHEMA[full][0])
            lines[full] = no
        except ValueError as exc:
            issues.append(ConfigTypeError(no, f"{full}: {exc}"))
    issues.extend(_check(values, lines))
    if issues:
        issues.sort(key=lambda i: (i.line == 0, i.line))
        raise ConfigError(issues)
    return ExperimentConfig(values, lines)


def _fmt(value, typ):
    if typ == "bool":
        return "true" if value else "false"
    if typ == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if typ == "float":
        return repr(float(value))
    return str(value)


def serialize(config):
    """Canonical text: top-level keys, then sections in fixed order, keys in schema order."""
    vals = config.values if isinstance(config, ExperimentConfig) else dict(config)
    out = []
    for sec in SECTIONS:
        keys = [k for k in SCHEMA if (k.split(".")[0] if "." in k else "") == sec and k in vals]
        if not keys:
            continue
        if sec:
            if out:
                out.append("")
            out.append(f"[{sec}]")
        for k in keys:
            name = k.split(".", 1)[1] if sec else k
            out.append(f"{name} = {_fmt(vals[k], SCHEMA[k][0])}")
    return "\n".join(out) + "\n"


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
