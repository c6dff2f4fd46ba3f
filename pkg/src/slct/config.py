"""Line-based ``key = value`` run configuration and mask specs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .grid import AUTO, GridError, ScanMask, SceneGrid, SolverParams


class ConfigError(ValueError):
    pass


_INT_KEYS = {"p", "k_max", "fista_iters", "u_steps", "admm_iters_D", "admm_iters_I", "power_iters", "nz", "seed"}
_BOOL_KEYS = {"nonneg_clamp", "reset_multipliers", "compensate"}
_FLOAT_KEYS = {"sigma", "lambda", "rho", "eta", "r1", "r2", "r3", "noise"}
_STR_KEYS = {"scene", "input", "mask", "output", "step_t"}
KNOWN_KEYS = _INT_KEYS | _BOOL_KEYS | _FLOAT_KEYS | _STR_KEYS
REQUIRED_KEYS = ("sigma", "lambda")

# config key -> SolverParams field
_PARAM_NAMES = {"lambda": "lam"}
_SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolverParams)} - {"extra"}


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    """Parsed run configuration.

    ``values`` keeps the typed entries exactly as given; ``params`` builds the
    solver parameters from them.
    """

    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def solver_params(self, **overrides) -> SolverParams:
        kw = {}
        for key, val in self.values.items():
            name = _PARAM_NAMES.get(key, key)
            if name in _SOLVER_FIELDS:
                kw[name] = val
        kw.update(overrides)
        try:
            return SolverParams(**kw)
        except GridError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(self.values.items()))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, require=REQUIRED_KEYS) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Unknown keys and missing required keys raise ``ConfigError``.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _BOOL_KEYS:
                values[key] = _parse_bool(val)
            elif key == "step_t" and val != AUTO:
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from None
    missing = [k for k in require if k not in values]
    if missing:
        raise ConfigError(
            f"missing required key(s): {', '.join(missing)}; these weights are scene dependent, "
            "start from sigma around 1e-4 and lambda of 0 to a few thousand and tune against a known scene"
        )
    return RunConfig(values)


def read_config(path, require=REQUIRED_KEYS) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), require)


def mask_from_spec(spec: str, grid: SceneGrid) -> ScanMask:
    """Build a scan mask from ``full``, ``every_k:<n>`` or ``random:<n>:<seed>``."""
    parts = spec.strip().split(":")
    try:
        if parts == ["full"]:
            return ScanMask.full(grid)
        if parts[0] == "every_k" and len(parts) == 2:
            return ScanMask.every_k(grid, int(parts[1]))
        if parts[0] == "random" and len(parts) == 3:
            return ScanMask.random(grid, int(parts[1]), int(parts[2]))
    except (ValueError, GridError) as exc:
        raise ConfigError(f"bad mask spec {spec!r}: {exc}") from None
    raise ConfigError(f"bad mask spec {spec!r}; use full, every_k:<n> or random:<n>:<seed>")


def parse_grid(spec: str) -> SceneGrid:
    """``nx,ny,nz,nt,wall,bin`` to a grid."""
    parts = [s.strip() for s in spec.split(",")]
    if len(parts) != 6:
        raise ConfigError(f"grid needs 6 comma-separated values nx,ny,nz,nt,wall,bin, got {spec!r}")
    try:
        nx, ny, nz, nt = (int(s) for s in parts[:4])
        wall, binl = float(parts[4]), float(parts[5])
        if not (np.isfinite(wall) and np.isfinite(binl)):
            raise ValueError("non-finite size")
        return SceneGrid(nx, ny, nz, nt, wall, binl)
    except (ValueError, GridError) as exc:
        raise ConfigError(f"bad grid {spec!r}: {exc}") from None
