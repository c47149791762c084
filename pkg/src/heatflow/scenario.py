"""Scenario configuration: JSON parsing, validation, initial-map recipes, hashing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ChartViolation, ConfigError, ParseError, PeriodicityError, ValidationError
from .flow import FlowConfig, STEPPERS, default_stepper
from .geometry import TargetManifold
from .grid import DomainGrid
from .maps import DiscreteMap

RECIPES = ("sine-perturbation", "perturbed-geodesic-path", "winding-loop", "constant")

_TOP_KEYS = {"name", "seed", "target", "grid", "initial_map", "flow", "analysis", "output"}
_TARGET_KEYS = {"kind", "dim", "curvature", "y_min", "periods"}
_GRID_KEYS = {"kind", "lengths", "nodes", "inverse_metric"}
_FLOW_KEYS = {"dt", "t_end", "stepper", "snapshot_stride", "stop_tolerance", "cfl_safety"}
_RECIPE_KEYS = {
    "sine-perturbation": {"recipe", "base", "direction", "amplitude", "mode", "perturbation", "modes"},
    "perturbed-geodesic-path": {"recipe", "start", "end", "perturbation", "modes"},
    "winding-loop": {"recipe", "base", "winding", "perturbation", "modes"},
    "constant": {"recipe", "base", "perturbation", "modes"},
}


@dataclass
class Analysis:
    """Post-processing switches and tolerances.

    Attributes
    ----------
    eig_k : int
        Number of Jacobi eigenpairs computed at the final map.
    eig_tol : float
        Relative residual tolerance of the eigensolver.
    gap_stride : int
        Track lambda_1 at every ``gap_stride``-th sample; 0 disables tracking.
    tail_rel : float
        Tail of the gap track: samples with ``||tau|| <= tail_rel * ||tau_0||``.
    identity_t_min : float
        Identity residuals are judged from this time on.
    identity_tol : float
        Largest accepted identity residual.
    linearity_tol : float
        Half-window slope agreement required of the rate-fit window.
    tol_rate : float or None
        Slack of the rate verdict; None means ``0.01 * lambda_1 / 2``.
    """

    eig_k: int = 4
    eig_tol: float = 1e-8
    gap_stride: int = 0
    tail_rel: float = 1e-3
    identity_t_min: float = 0.0
    identity_tol: float = 1e-2
    linearity_tol: float = 0.05
    tol_rate: float | None = None

    def validate(self):
        if int(self.eig_k) < 1:
            raise ValidationError("analysis.eig_k", "must be at least 1")
        if not self.eig_tol > 0:
            raise ValidationError("analysis.eig_tol", "must be positive")
        if int(self.gap_stride) < 0:
            raise ValidationError("analysis.gap_stride", "must be non-negative")
        self.eig_k = int(self.eig_k)
        self.gap_stride = int(self.gap_stride)


@dataclass
class Output:
    dir: str | None = None
    snapshot_every: int = 1
    figures: bool = True


@dataclass
class Scenario:
    name: str
    target: TargetManifold
    grid: DomainGrid
    initial_map: dict
    flow: FlowConfig
    analysis: Analysis = field(default_factory=Analysis)
    output: Output = field(default_factory=Output)
    seed: int = 0

    def to_dict(self, include_output=True):
        out = {
            "name": self.name,
            "seed": int(self.seed),
            "target": self.target.to_dict(),
            "grid": self.grid.to_dict(),
            "initial_map": _plain(self.initial_map),
            "flow": self.flow.to_dict(),
            "analysis": asdict(self.analysis),
        }
        if include_output:
            out["output"] = asdict(self.output)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self):
        """sha256 of the canonical resolved configuration, output settings excluded."""
        text = json.dumps(self.to_dict(include_output=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_seed(self, seed):
        data = self.to_dict()
        data["seed"] = int(seed)
        return from_dict(data)

    def initial(self) -> DiscreteMap:
        return build_initial_map(self.grid, self.target, self.initial_map, self.seed)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        raise ValidationError(where, "must be a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValidationError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")


def _require(data, key, where):
    if key not in data:
        raise ValidationError(f"{where}.{key}" if where else key, "required")
    return data[key]


def _vector(value, n, where):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ValidationError(where, f"expected a list of {n} numbers")
    return arr


# initial maps ---------------------------------------------------------------------

def smooth_perturbation(grid: DomainGrid, dim, amplitude, modes, rng):
    """Seeded random combination of low Fourier or sine modes, max-norm ``amplitude``.

    Dirichlet axes use ``sin(k pi x / L)`` (vanishing on the boundary),
    periodic axes ``cos`` and ``sin`` of ``2 pi k x / L``; coefficients are
    standard normal scaled by ``1 / |k|^2``.
    """
    if amplitude == 0 or modes < 1:
        return np.zeros(grid.shape + (dim,))
    coords = np.meshgrid(*grid.coordinates(), indexing="ij")
    per_axis = []
    for axis, length in enumerate(grid.lengths):
        x = coords[axis]
        basis = []
        if grid.periodic:
            basis.append((0, np.ones_like(x)))
            for k in range(1, modes + 1):
                basis.append((k, np.cos(2 * np.pi * k * x / length)))
                basis.append((k, np.sin(2 * np.pi * k * x / length)))
        else:
            for k in range(1, modes + 1):
                basis.append((k, np.sin(np.pi * k * x / length)))
        per_axis.append(basis)
    out = np.zeros(grid.shape + (dim,))
    for combo in np.ndindex(*[len(b) for b in per_axis]):
        ks = [per_axis[a][i][0] for a, i in enumerate(combo)]
        if sum(ks) == 0:
            continue
        phi = np.ones(grid.shape)
        for a, i in enumerate(combo):
            phi = phi * per_axis[a][i][1]
        coef = rng.standard_normal(dim) / float(sum(k * k for k in ks))
        out += phi[..., None] * coef
    peak = np.max(np.abs(out))
    return out * (amplitude / peak) if peak > 0 else out


def build_initial_map(grid: DomainGrid, target: TargetManifold, spec: dict, seed=0) -> DiscreteMap:
    """Sample an initial map from a catalog recipe (see module docs of the CLI)."""
    recipe = spec["recipe"]
    n = target.dim
    rng = np.random.default_rng(seed)
    mesh = grid.mesh()
    winding = None
    if recipe == "constant":
        values = np.broadcast_to(_vector(spec.get("base", [0.0] * n), n, "initial_map.base"),
                                 grid.shape + (n,)).copy()
    elif recipe == "sine-perturbation":
        base = _vector(spec.get("base", [0.0] * n), n, "initial_map.base")
        direction = _vector(spec.get("direction", [1.0] + [0.0] * (n - 1)), n, "initial_map.direction")
        modes = np.atleast_1d(spec.get("mode", 1)).astype(float)
        if modes.size == 1:
            modes = np.repeat(modes, grid.ndim)
        shape = np.ones(grid.shape)
        for axis, (length, m) in enumerate(zip(grid.lengths, modes)):
            scale = 2 * np.pi if grid.periodic else np.pi
            shape = shape * np.sin(scale * m * mesh[..., axis] / length)
        values = base + float(spec.get("amplitude", 0.1)) * shape[..., None] * direction
    elif recipe == "perturbed-geodesic-path":
        if grid.kind != "interval":
            raise ValidationError("initial_map.recipe", "perturbed-geodesic-path needs an interval grid")
        start = _vector(_require(spec, "start", "initial_map"), n, "initial_map.start")
        end = _vector(_require(spec, "end", "initial_map"), n, "initial_map.end")
        s = mesh[..., 0:1] / grid.lengths[0]
        values = start + s * (end - start)
    elif recipe == "winding-loop":
        if target.kind != "torus" or not grid.periodic:
            raise ValidationError("initial_map.recipe", "winding-loop needs a periodic grid and a torus target")
        base = _vector(spec.get("base", [0.0] * n), n, "initial_map.base")
        turns = np.asarray(spec.get("winding", [[1] + [0] * (n - 1)] * grid.ndim), dtype=float)
        if turns.shape != (grid.ndim, n) or not np.all(turns == np.round(turns)):
            raise ValidationError("initial_map.winding", f"expected {grid.ndim} integer lists of length {n}")
        winding = turns * np.asarray(target.periods)
        values = base + np.einsum("...a,ac->...c", mesh / np.asarray(grid.lengths), winding)
    else:
        raise ValidationError("initial_map.recipe", f"unknown recipe (choose from {', '.join(RECIPES)})")
    values = values + smooth_perturbation(grid, n, float(spec.get("perturbation", 0.0)),
                                          int(spec.get("modes", 4)), rng)
    if not grid.periodic and recipe == "perturbed-geodesic-path":
        values[0], values[-1] = start, end
    try:
        return DiscreteMap(grid, target, values, winding)
    except ChartViolation as exc:
        raise ValidationError("initial_map", f"leaves the chart region ({exc})") from exc
    except PeriodicityError as exc:
        raise ValidationError("initial_map", str(exc)) from exc


# parsing --------------------------------------------------------------------------

def from_dict(data: dict) -> Scenario:
    """Validate a configuration object and apply defaults."""
    _check_keys(data, _TOP_KEYS, "")
    tdata = _require(data, "target", "")
    _check_keys(tdata, _TARGET_KEYS, "target")
    try:
        target = TargetManifold.from_dict(tdata)
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError("target", str(exc)) from exc
    gdata = _require(data, "grid", "")
    _check_keys(gdata, _GRID_KEYS, "grid")
    try:
        grid = DomainGrid.from_dict(gdata)
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError("grid", str(exc)) from exc

    init = dict(_require(data, "initial_map", ""))
    recipe = _require(init, "recipe", "initial_map")
    if recipe not in RECIPES:
        raise ValidationError("initial_map.recipe", f"unknown recipe {recipe!r}")
    _check_keys(init, _RECIPE_KEYS[recipe], "initial_map")

    fdata = dict(data.get("flow", {}))
    _check_keys(fdata, _FLOW_KEYS, "flow")
    cfl = float(fdata.get("cfl_safety", 0.2))
    if not 0 < cfl < 1:
        raise ValidationError("cfl_safety", "must lie in (0, 1)")
    bound = grid.stability_bound(cfl)
    dt = float(fdata.get("dt", bound))
    if not dt > 0:
        raise ValidationError("dt", "must be positive")
    if dt > bound * (1 + 1e-12):
        raise ValidationError("dt", "exceeds stability bound")
    stepper = fdata.get("stepper", default_stepper(target))
    if stepper not in STEPPERS:
        raise ValidationError("stepper", f"unknown stepper {stepper!r}")
    try:
        flow = FlowConfig(dt=dt, t_end=float(fdata.get("t_end", 10.0)), stepper=stepper,
                          snapshot_stride=int(fdata.get("snapshot_stride", 100)),
                          stop_tolerance=float(fdata.get("stop_tolerance", 1e-10)), cfl_safety=cfl)
    except ValueError as exc:
        raise ValidationError("flow", str(exc)) from exc

    adata = dict(data.get("analysis", {}))
    _check_keys(adata, set(Analysis.__dataclass_fields__), "analysis")
    analysis = Analysis(**adata)
    analysis.validate()
    odata = dict(data.get("output", {}))
    _check_keys(odata, set(Output.__dataclass_fields__), "output")
    output = Output(**odata)
    if int(output.snapshot_every) < 1:
        raise ValidationError("output.snapshot_every", "must be at least 1")

    scenario = Scenario(name=str(data.get("name", "scenario")), target=target, grid=grid,
                        initial_map=_plain(init), flow=flow, analysis=analysis, output=output,
                        seed=int(data.get("seed", 0)))
    scenario.initial()  # recipe must be compatible with grid and target
    return scenario


def resolve_path(path) -> Path:
    """A config path, falling back to the bundled scenario of that file name."""
    path = Path(path)
    if path.exists():
        return path
    bundled = resources.files("heatflow") / "scenarios" / path.name
    if bundled.is_file():
        return Path(str(bundled))
    if not path.suffix:
        bundled = resources.files("heatflow") / "scenarios" / (path.name + ".json")
        if bundled.is_file():
            return Path(str(bundled))
    raise ConfigError(f"config file {str(path)!r} not found")


def parse_text(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be a JSON object", line=1)
    return from_dict(data)


def parse_config(path) -> Scenario:
    """Read, validate and default a scenario file (bundled names are accepted)."""
    return parse_text(resolve_path(path).read_text(encoding="utf-8"))


def bundled_scenarios():
    root = resources.files("heatflow") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))
