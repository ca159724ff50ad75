"""Solver settings and the run manifest."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ManifestError

ORIENTATION_MODES = ("preserve", "reverse", "off")


@dataclass
class SolverConfig:
    # basis and descriptors
    k: int = 50
    wks_energies: int = 100
    wks_eigs: int = 50
    operator_stride: int = 10
    # initial functional map; alpha_lap is relative to the descriptor term,
    # alpha_orient=None scales the orientation term to the multiplicative one
    alpha_desc: float = 1.0
    alpha_mult: float = 1.0
    alpha_lap: float = 1e-2
    alpha_orient: float | None = None
    orientation: str = "preserve"
    # refinement
    max_iter: int = 5
    coupling: bool = True
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)
    continuity_gate: float = 0.6
    coverage_gate: float = 0.5
    outlier_eps: float | None = None
    smooth_iters: int = 5
    use_bijective: bool = True
    use_outliers: bool = True
    use_coverage: bool = True
    use_continuity: bool = True
    refine_orientation: bool = False
    refine_orient_weight: float = 1.0
    refine_orient_stride: int = 5

    def __post_init__(self):
        if self.orientation not in ORIENTATION_MODES:
            raise ManifestError(f"orientation must be one of {ORIENTATION_MODES}, got {self.orientation!r}")
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if len(self.lambdas) != 4:
            raise ManifestError("lambdas needs four weights")
        if self.k < 2 or self.max_iter < 0:
            raise ManifestError("k must be >= 2 and max_iter >= 0")

    @property
    def orientation_sign(self) -> int | None:
        return {"preserve": 1, "reverse": -1, "off": None}[self.orientation]

    def replace(self, **changes) -> SolverConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, values: dict) -> SolverConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ManifestError(f"unknown solver keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class RunManifest:
    mesh1: Path
    mesh2: Path | None = None
    descriptors: str = "wks"
    descriptor_csv1: Path | None = None
    descriptor_csv2: Path | None = None
    output_dir: Path = Path("out")
    gt_direct: Path | None = None
    gt_symmetric: Path | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    _PATHS = ("mesh1", "mesh2", "descriptor_csv1", "descriptor_csv2", "output_dir", "gt_direct", "gt_symmetric")

    def validate(self, need_second: bool = True) -> None:
        if self.descriptors not in ("wks", "external-csv"):
            raise ManifestError(f"descriptors must be 'wks' or 'external-csv', got {self.descriptors!r}")
        if need_second and self.mesh2 is None:
            raise ManifestError("mesh2 is required")
        if self.descriptors == "external-csv" and (self.descriptor_csv1 is None or (need_second and self.descriptor_csv2 is None)):
            raise ManifestError("external-csv descriptors need descriptor_csv1/descriptor_csv2")

    @classmethod
    def from_mapping(cls, values: dict) -> RunManifest:
        values = dict(values)
        solver_keys = {f.name for f in dataclasses.fields(SolverConfig)}
        solver = {k: values.pop(k) for k in list(values) if k in solver_keys}
        solver.update(values.pop("solver", {}))
        known = {f.name for f in dataclasses.fields(cls)} - {"solver"}
        unknown = set(values) - known
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        if "mesh1" not in values:
            raise ManifestError("manifest needs mesh1")
        for key in cls._PATHS:
            if values.get(key) is not None:
                values[key] = Path(values[key])
        return cls(solver=SolverConfig.from_dict(solver), **values)


def parse_value(text: str):
    """Parse one ``key=value`` override value as a TOML scalar, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_manifest(path, overrides: dict | None = None) -> RunManifest:
    path = Path(path)
    try:
        values = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    # relative paths in a manifest are relative to the manifest itself
    for key in RunManifest._PATHS:
        if isinstance(values.get(key), str) and not Path(values[key]).is_absolute():
            values[key] = str(path.parent / values[key])
    values.update(overrides or {})
    return RunManifest.from_mapping(values)
