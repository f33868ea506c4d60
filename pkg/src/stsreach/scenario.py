"""Scenario configuration: defaults for the ascending phase and a TOML loader.

Scenario files are flat TOML tables.  Every key carries its unit in the name
(``tf_s``, ``grid_hz``, ``x0_deg`` ...); angles are written in degrees and
converted to radians on load.  Missing keys take the defaults below.

Example::

    tf_s = 3.5
    grid_hz = 20
    n_bounds = 50
    p_lower = [9.2, 11.2, 42.3, 1.10, 0.49, 2.40, 0.52, 0.39, 0.51, 0.23, 0.17, 0.24]
"""
import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import model
from .allocation import AllocationSpec
from .errors import ParseError, ValidationError
from .lqr import WeightSet

log = logging.getLogger(__name__)

Q_DIAG = (3237.0, 5534.0, 6546.0, 7918.0, 4003.0, 8516.0)
R_DIAG = (0.3659, 0.0155, 0.1433, 0.1553)
S_DIAG = (1068.0, 5396.0, 1324.0, 9467.0, 3975.0, 5819.0)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to run the analysis.  Angles in radians."""

    t0: float = 0.0
    tf: float = 3.5
    grid_hz: float = 100.0
    x0: tuple = tuple(np.deg2rad([90.0, -90.0, 90.0, 0.0, 0.0, 0.0]))
    p_nominal: tuple = tuple(model.NOMINAL_PARAMS)
    p_lower: tuple = tuple(model.PARAM_LOWER)
    p_upper: tuple = tuple(model.PARAM_UPPER)
    # Final [theta2 (rad), x_com (m), y_com (m)]; the initial value follows from x0.
    z_final: tuple = (math.radians(-5.0), 0.0, 0.974)
    alloc_weights: tuple = (1.0, 1.0, 10.0, 1.0)
    u_lower: tuple = (-math.inf, -math.inf, -math.inf, 0.0)
    u_upper: tuple = (math.inf,) * 4
    q_diag: tuple = Q_DIAG
    r_diag: tuple = R_DIAG
    s_diag: tuple = S_DIAG
    n_bounds: int = 500
    n_validate: int = 500
    seed_bounds: int = 0
    seed_validate: int = 1
    falsification_budget: int = 0
    substeps: int = 1
    workers: int = 0

    @property
    def n_grid(self):
        return int(round((self.tf - self.t0) * self.grid_hz)) + 1

    @property
    def t_grid(self):
        return np.linspace(self.t0, self.tf, self.n_grid)

    @property
    def allocation_spec(self):
        return AllocationSpec(np.diag(self.alloc_weights), np.array(self.u_lower), np.array(self.u_upper))

    @property
    def weights(self):
        return WeightSet(np.diag(self.q_diag), np.diag(self.r_diag), np.diag(self.s_diag))

    @property
    def n_workers(self):
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def config_hash(self):
        """Hash of every field that influences numerical results."""
        d = dataclasses.asdict(self)
        d.pop("workers")
        blob = json.dumps({k: _jsonable(v) for k, v in d.items()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_file_dict(self):
        """Inverse of the loader: a dict of file keys with degree units."""
        out = {}
        for key, (attr, kind) in _KEYS.items():
            v = getattr(self, attr)
            if kind == "deg_vec":
                v = [math.degrees(a) for a in v]
            elif kind == "zf":
                v = [math.degrees(v[0]), v[1], v[2]]
            elif isinstance(v, tuple):
                v = list(v)
            out[key] = v
        return out


def _jsonable(v):
    if isinstance(v, tuple):
        return [repr(float(a)) for a in v]
    return repr(v)


# file key -> (attribute, kind)
_KEYS = {
    "t0_s": ("t0", "float"),
    "tf_s": ("tf", "float"),
    "grid_hz": ("grid_hz", "float"),
    "x0_deg": ("x0", "deg_vec"),
    "p_nominal": ("p_nominal", "vec12"),
    "p_lower": ("p_lower", "vec12"),
    "p_upper": ("p_upper", "vec12"),
    "z_final_deg_m_m": ("z_final", "zf"),
    "alloc_weights": ("alloc_weights", "vec4"),
    "u_lower": ("u_lower", "vec4"),
    "u_upper": ("u_upper", "vec4"),
    "q_diag": ("q_diag", "vec6"),
    "r_diag": ("r_diag", "vec4"),
    "s_diag": ("s_diag", "vec6"),
    "n_bounds": ("n_bounds", "int"),
    "n_validate": ("n_validate", "int"),
    "seed_bounds": ("seed_bounds", "int"),
    "seed_validate": ("seed_validate", "int"),
    "falsification_budget": ("falsification_budget", "int"),
    "substeps": ("substeps", "int"),
    "workers": ("workers", "int"),
}

_VEC_LEN = {"deg_vec": 6, "vec12": 12, "vec4": 4, "vec6": 6, "zf": 3}


def _convert(key, kind, value):
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{key}: expected an integer, got {value!r}")
        return value
    n = _VEC_LEN[kind]
    if not isinstance(value, list) or len(value) != n:
        raise ValidationError(f"{key}: expected a list of {n} numbers")
    if not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in value):
        raise ValidationError(f"{key}: entries must be numbers")
    vals = [float(a) for a in value]
    if kind == "deg_vec":
        return tuple(math.radians(a) for a in vals)
    if kind == "zf":
        return (math.radians(vals[0]), vals[1], vals[2])
    return tuple(vals)


def validate(sc):
    """Raise ValidationError naming the first offending field."""
    if not sc.tf > sc.t0:
        raise ValidationError(f"tf_s: must exceed t0_s ({sc.tf} <= {sc.t0})")
    if sc.t0 != 0.0:
        raise ValidationError("t0_s: the rest-to-rest blend is defined from t0_s = 0")
    if not sc.grid_hz > 0:
        raise ValidationError(f"grid_hz: must be > 0, got {sc.grid_hz}")
    if abs((sc.tf - sc.t0) * sc.grid_hz - round((sc.tf - sc.t0) * sc.grid_hz)) > 1e-9:
        raise ValidationError("grid_hz: the horizon must hold an integer number of steps")
    lo, hi, nom = np.array(sc.p_lower), np.array(sc.p_upper), np.array(sc.p_nominal)
    for j, name in enumerate(model.PARAM_NAMES):
        if not lo[j] > 0:
            raise ValidationError(f"p_lower[{name}]: must be > 0, got {lo[j]}")
        if lo[j] > hi[j]:
            raise ValidationError(f"p_lower[{name}]={lo[j]} exceeds p_upper[{name}]={hi[j]}")
        if not lo[j] <= nom[j] <= hi[j]:
            raise ValidationError(f"p_nominal[{name}]={nom[j]} outside [{lo[j]}, {hi[j]}]")
    for i in range(3):
        if hi[9 + i] > lo[6 + i]:
            raise ValidationError(
                f"p_upper[lc{i + 1}]={hi[9 + i]} may exceed p_lower[l{i + 1}]={lo[6 + i]}")
    for j, name in enumerate(model.INPUT_NAMES):
        if sc.u_lower[j] > sc.u_upper[j]:
            raise ValidationError(f"u_lower[{name}] exceeds u_upper[{name}]")
    if any(w == 0 for w in sc.alloc_weights):
        raise ValidationError("alloc_weights: diagonal weights must be nonzero")
    if any(q < 0 for q in sc.q_diag) or any(s < 0 for s in sc.s_diag):
        raise ValidationError("q_diag/s_diag: entries must be >= 0")
    if any(r <= 0 for r in sc.r_diag):
        raise ValidationError("r_diag: entries must be > 0")
    for key in ("n_bounds", "n_validate", "substeps"):
        if getattr(sc, key) < 1:
            raise ValidationError(f"{key}: must be >= 1")
    if sc.falsification_budget < 0 or sc.workers < 0:
        raise ValidationError("falsification_budget/workers: must be >= 0")
    return sc


def scenario_from_dict(data, source="<dict>"):
    unknown = sorted(set(data) - set(_KEYS))
    if unknown:
        raise ValidationError(f"{source}: unknown keys {unknown}")
    missing = sorted(set(_KEYS) - set(data))
    if missing:
        log.info("%s: using defaults for %s", source, ", ".join(missing))
    kwargs = {}
    for key, value in data.items():
        attr, kind = _KEYS[key]
        kwargs[attr] = _convert(key, kind, value)
    return validate(Scenario(**kwargs))


def load_scenario(path):
    """Read a TOML scenario file; an empty file yields the default scenario."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(data, source=str(path))


def dump_scenario(sc, path):
    """Write a scenario as TOML (degrees at the file boundary)."""
    lines = []
    for key, v in sc.to_file_dict().items():
        if isinstance(v, list):
            v = "[" + ", ".join(_toml_num(a) for a in v) + "]"
        else:
            v = _toml_num(v)
        lines.append(f"{key} = {v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _toml_num(a):
    if isinstance(a, int):
        return str(a)
    if math.isinf(a):
        return "inf" if a > 0 else "-inf"
    return repr(float(a))


def desk_scenario(**overrides):
    """Reduced-cost scenario: 50 + 50 samples on a 20 Hz grid."""
    base = dict(grid_hz=20.0, n_bounds=50, n_validate=50)
    base.update(overrides)
    return validate(Scenario(**base))
