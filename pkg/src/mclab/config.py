"""Scenario files: ``[section]`` headers with ``key = value`` lines.

Every recognised key has a type and a default; unknown sections or keys are
rejected so typos cannot silently fall back to defaults.  ``resolve`` returns
the fully populated, typed configuration that is embedded in run manifests.
"""
from __future__ import annotations

import configparser
import copy
from pathlib import Path

EXPERIMENT_TYPES = ("simulate", "scaling", "chaos", "bogolyubov", "clt", "hierarchy", "meanfield")


def _bool(s):
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv):
    def parse(s):
        if isinstance(s, (list, tuple)):
            return [conv(x) for x in s]
        items = [x.strip() for x in str(s).replace(";", ",").split(",")]
        return [conv(x) for x in items if x]
    return parse


def _auto_int(s):
    s = str(s).strip()
    return "auto" if s == "auto" else int(s)


def _auto_float(s):
    s = str(s).strip()
    return "auto" if s == "auto" else float(s)


def _choice(*options):
    def parse(s):
        s = str(s).strip()
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s
    return parse


_ints = _list(int)
_floats = _list(float)
_strs = _list(str)

SCHEMA = {
    "kernel": {
        "type": (_choice("bounded", "singular", "zero"), "bounded"),
        "kmax": (int, 512),
        "decay_exponent": (float, 1.75),
        "amplitude": (float, 1.0),
    },
    "initial": {
        "spatial": (_choice("uniform", "one_mode"), "uniform"),
        "amplitude": (float, 0.0),
        "velocity_variance": (float, 1.0),
    },
    "simulation": {
        "n": (int, 128),
        "replicas": (int, 100),
        "dim": (int, 1),
        "dt": (float, 2e-3),
        "t_end": (float, 0.5),
        "seed": (int, 0),
        "dynamics": (_choice("underdamped", "overdamped"), "underdamped"),
        "twin": (_bool, False),
        "dump": (_bool, False),
        "threads": (int, 1),
    },
    "pde": {
        "nx": (int, 64),
        "nv": (int, 128),
        "vmax": (_auto_float, "auto"),
        "dt": (float, 1e-3),
    },
    "bogolyubov": {
        "nx": (int, 32),
        "nv": (int, 32),
        "vmax": (_auto_float, "auto"),
        "dt": (float, 2e-3),
        "kmax": (int, 64),
        "refine_nx": (int, 48),
        "refine_nv": (int, 48),
        "refine": (_bool, True),
    },
    "experiment": {
        "type": (_choice(*EXPERIMENT_TYPES), "simulate"),
        "n_list": (_ints, [32, 64, 128, 256, 512]),
        "n_list_m3": (_ints, [8, 16, 32, 64]),
        "orders": (_ints, [2, 3]),
        "observables": (_strs, ["cos", "sin", "vgauss", "cosv"]),
        "observables_m3": (_strs, []),
        "sample_times": (_floats, [0.5]),
        "m_max": (int, 4),
        "replicas": (_auto_int, "auto"),
        "s_min": (int, 200),
        "s_cap": (int, 20000),
        "s_cap_m3": (_auto_int, "auto"),
        "s_pilot": (int, 400),
        "snr_factor": (float, 3.0),
        "batch_particles": (int, 2_000_000),
        "twin": (_bool, True),
        "tolerance_m2": (_auto_float, "auto"),
        "tolerance_m3": (_auto_float, "auto"),
        "tolerance": (float, 0.25),
        "cross_n": (int, 512),
        "cross_replicas": (_auto_int, "auto"),
        "cross_observable": (str, "cos"),
        "cross_tol": (float, 0.15),
        "fn_n": (int, 256),
        "fn_replicas": (int, 10000),
        "fn_factor": (float, 1.5),
        "fn_observables": (_strs, []),
        "clt_observable": (str, "cos"),
        "var_tol": (float, 0.10),
        "skew_tol": (float, 0.10),
        "kurt_tol": (float, 0.20),
        "dt_refine": (_bool, False),
    },
    "hierarchy": {
        "A": (float, 1.0),
        "B": (float, 2.0),
        "R": (float, 100.0),
        "nmax": (int, 20),
        "nmax_alt": (int, 30),
        "tend": (float, 1.0),
        "dt": (float, 1e-3),
        "gf_c": (float, 1.0),
        "gf_r0": (float, 0.5),
        "gf_tend": (float, 0.25),
        "gf_mmax": (int, 40),
    },
    "output": {
        "dir": (str, "mclab_out"),
    },
}


class ConfigError(ValueError):
    pass


def _parser():
    p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    p.optionxform = str           # keys are case sensitive (A, B, R)
    return p


def resolve(raw):
    """Typed, defaulted configuration from a mapping of string sections."""
    out = {}
    for section, raw_keys in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in raw_keys:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        sec = {}
        for key, (conv, default) in keys.items():
            if key in given:
                try:
                    sec[key] = conv(given[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
            else:
                sec[key] = copy.deepcopy(default)
        out[section] = sec
    _validate(out)
    return out


def _validate(cfg):
    sim = cfg["simulation"]
    if sim["n"] < 1 or sim["replicas"] < 1:
        raise ConfigError("[simulation] n and replicas must be positive")
    if not sim["dt"] > 0 or sim["t_end"] < 0:
        raise ConfigError("[simulation] need dt > 0 and t_end >= 0")
    if not 0 <= sim["seed"] < 2 ** 63:
        raise ConfigError("[simulation] seed must be a nonnegative 63-bit integer")
    if sim["dim"] not in (1, 2):
        raise ConfigError("[simulation] dim must be 1 or 2")
    ex = cfg["experiment"]
    if ex["s_cap"] < ex["s_min"] or (ex["s_cap_m3"] != "auto" and ex["s_cap_m3"] < ex["s_min"]):
        raise ConfigError("[experiment] s_cap must be at least s_min")
    if any(n < 1 for n in ex["n_list"] + ex["n_list_m3"]):
        raise ConfigError("[experiment] particle numbers must be positive")
    if ex["batch_particles"] < 1:
        raise ConfigError("[experiment] batch_particles must be positive")
    if not 1 <= ex["m_max"] <= 8:
        raise ConfigError("[experiment] m_max must lie in 1..8")


def load(path=None, text=None, overrides=None):
    """Read a scenario file (or string) and apply ``{section: {key: value}}`` overrides."""
    p = _parser()
    if path is not None:
        with open(Path(path)) as fh:
            p.read_file(fh)
    if text is not None:
        p.read_string(text)
    raw = {s: dict(p.items(s)) for s in p.sections()}
    for section, keys in (overrides or {}).items():
        raw.setdefault(section, {}).update({k: v for k, v in keys.items() if v is not None})
    return resolve(raw)


def dumps(cfg):
    """Canonical text form of a resolved configuration."""
    lines = []
    for section, keys in cfg.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            if isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
