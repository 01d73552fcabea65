"""Run configuration: JSON files with a fixed schema, resolved into problems.

Unknown keys are rejected at every level. Defaults are filled in before the
configuration is hashed, so two files that mean the same run hash alike.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np

from . import presets
from .errors import ConfigError
from .free_target import CostType, Lagrangian, ProblemSpec
from .grid import DensityField, GridSpec, read_field

PRESETS = ("benchmark_1d", "ball_2d", "k_complement_2d", "tiny_box_1d")

SCHEMA = {
    "problem": {"preset", "mu_file", "f", "cost_type", "lagrangian"},
    "numerics": {"h", "dt", "tolerance", "t_end", "half_width", "store_every"},
    "mc": {"N", "dt_mc", "seed", "barrier", "nu", "bin_width", "record_times", "t_max"},
    "verify": {"suite", "trials", "pair"},
    "outputs": {"dir", "artifacts", "snapshots"},
}
F_KEYS = {"constant", "file", "complement_ball"}
ARTIFACTS = ("w0", "nu", "E", "s", "snapshots", "report")

DEFAULTS = {
    "problem": {"cost_type": "I"},
    "numerics": {"tolerance": 1e-10, "t_end": 50.0, "store_every": 1},
    "mc": {"N": 200_000, "seed": 0, "bin_width": 0.5, "record_times": []},
    "verify": {"suite": "all"},
    "outputs": {"artifacts": list(ARTIFACTS), "snapshots": 8},
}

# grid defaults per preset: (h, half_width)
PRESET_GRID = {"benchmark_1d": (1 / 64, 4.0), "ball_2d": (1 / 32, 4.0),
               "k_complement_2d": (1 / 32, 2.0), "tiny_box_1d": (1 / 64, 2.0)}


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return normalize(raw, base=p.parent)


def normalize(raw: dict, base: Path | None = None) -> dict:
    """Validate keys, fill defaults, resolve relative paths against ``base``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = {}
    for sec, keys in SCHEMA.items():
        body = raw.get(sec, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {sec!r} must be an object")
        bad = set(body) - keys
        if bad:
            raise ConfigError(f"unknown keys in {sec!r}: {sorted(bad)}")
        merged = copy.deepcopy(DEFAULTS.get(sec, {}))
        merged.update(body)
        cfg[sec] = merged
    prob = cfg["problem"]
    if "preset" in prob and prob["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {prob['preset']!r}; choose from {PRESETS}")
    try:
        CostType.parse(prob["cost_type"])
    except ValueError as exc:
        raise ConfigError(f"bad cost_type {prob['cost_type']!r}") from exc
    if "lagrangian" in prob and prob["lagrangian"] not in ("linear", "exp_decay"):
        raise ConfigError("lagrangian must be 'linear' or 'exp_decay'")
    f = prob.get("f")
    if f is not None:
        if not isinstance(f, dict) or len(f) != 1 or set(f) - F_KEYS:
            raise ConfigError(f"'f' must be one of {sorted(F_KEYS)} as a one-key object")
    for a in cfg["outputs"]["artifacts"]:
        if a not in ARTIFACTS:
            raise ConfigError(f"unknown artifact {a!r}")
    for sec, key in (("numerics", "h"), ("numerics", "dt"), ("numerics", "tolerance"),
                     ("numerics", "t_end"), ("mc", "dt_mc"), ("mc", "bin_width")):
        v = cfg[sec].get(key)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"{sec}.{key} must be a positive number")
    n = cfg["mc"]["N"]
    if not (isinstance(n, int) and n > 0):
        raise ConfigError("mc.N must be a positive integer")
    if base is not None:
        for sec, key in (("problem", "mu_file"), ("mc", "barrier"), ("mc", "nu")):
            v = cfg[sec].get(key)
            if isinstance(v, str) and v not in ("zero",) and not Path(v).is_absolute():
                cfg[sec][key] = str((base / v).resolve())
        d = cfg["outputs"].get("dir")
        if isinstance(d, str) and not Path(d).is_absolute():
            cfg["outputs"]["dir"] = str((base / d).resolve())
        pair = cfg["verify"].get("pair")
        if isinstance(pair, dict):
            for key in ("mu1", "mu2"):
                v = pair.get(key)
                if isinstance(v, str) and not Path(v).is_absolute():
                    pair[key] = str((base / v).resolve())
        if f is not None and "file" in f and not Path(f["file"]).is_absolute():
            prob["f"] = {"file": str((base / f["file"]).resolve())}
    return cfg


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON of everything except the output location."""
    body = {k: v for k, v in cfg.items() if k != "outputs"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _read_density(path: str, grid: GridSpec | None = None) -> DensityField:
    if not Path(path).is_file():
        raise ConfigError(f"field file not found: {path}")
    try:
        fld = read_field(path, DensityField)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if grid is not None and fld.grid != grid:
        raise ConfigError(f"{path}: grid differs from the problem grid")
    return fld


def _ceiling(fs: dict, g: GridSpec) -> tuple[DensityField, np.ndarray | None]:
    if "constant" in fs:
        return presets.constant(g, float(fs["constant"])), None
    if "file" in fs:
        return _read_density(fs["file"], g), None
    r = float(fs["complement_ball"])
    return (DensityField(g, 1.0 - presets.cell_average(g, presets.ball_indicator(r))),
            g.radius() <= r)


def resolve_problem(cfg: dict) -> tuple[ProblemSpec, np.ndarray | None]:
    """Build the problem; the second value is the ``K`` mask for the
    complement-of-set ceiling, else ``None``."""
    prob, num = cfg["problem"], cfg["numerics"]
    if "preset" not in prob and "mu_file" not in prob:
        raise ConfigError("problem needs a 'preset' or a 'mu_file'")
    preset = prob.get("preset")
    k_mask = None
    if preset is not None:
        h0, hw0 = PRESET_GRID[preset]
        h, hw = num.get("h", h0), num.get("half_width", hw0)
        try:
            if preset in ("benchmark_1d", "tiny_box_1d"):
                g, mu, f = presets.benchmark_1d(h=h, half_width=hw)
            elif preset == "ball_2d":
                g, mu, f = presets.ball_2d(h=h, half_width=hw)
            else:
                g, mu, f, k_mask = presets.k_complement_2d(h=h, half_width=hw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        mu = _read_density(prob["mu_file"])
        g = mu.grid
        f = None
    fs = prob.get("f")
    if fs is not None:
        f, k_mask = _ceiling(fs, g)
    if f is None:
        raise ConfigError("a problem given by mu_file needs an explicit 'f'")
    ct = CostType.parse(prob["cost_type"])
    lag = None
    if "lagrangian" in prob:
        lag = Lagrangian.linear() if prob["lagrangian"] == "linear" else Lagrangian.exp_decay()
    try:
        spec = ProblemSpec(g, mu, f, cost_type=ct, lagrangian=lag, tolerance=num["tolerance"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec, k_mask


PAIR_PRESETS = ("ordered_1d", "unordered_1d")


def resolve_pair(cfg: dict) -> tuple[DensityField, DensityField, DensityField]:
    """``(mu1, mu2, f)`` from ``verify.pair``: a preset name or two field files
    (``f`` then comes from the problem section, default ``1``)."""
    pair = cfg["verify"].get("pair")
    if not isinstance(pair, dict):
        raise ConfigError("verify.pair must be an object")
    if "preset" in pair:
        if set(pair) != {"preset"} or pair["preset"] not in PAIR_PRESETS:
            raise ConfigError(f"verify.pair.preset must be one of {PAIR_PRESETS}")
        _, mu1, mu2, f = presets.pair_1d(ordered=pair["preset"] == "ordered_1d")
        return mu1, mu2, f
    if set(pair) != {"mu1", "mu2"}:
        raise ConfigError("verify.pair needs 'preset' or both 'mu1' and 'mu2'")
    mu1 = _read_density(pair["mu1"])
    mu2 = _read_density(pair["mu2"], mu1.grid)
    f, _ = _ceiling(cfg["problem"].get("f") or {"constant": 1.0}, mu1.grid)
    return mu1, mu2, f
