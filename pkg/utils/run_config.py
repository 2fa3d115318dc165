# run_config.py
import os
from dataclasses import dataclass, fields
from typing import Dict, Optional, Tuple

import numpy as np
import toml

from case_profiles import CASE_PROFILES
from constants import (
    BOUNDARY_PROJECTIONS, CASES, COMMANDS, DEFAULT_OUT_DIR, EPSILON_SCHEDULE, GUARD_CELLS, HIST_BINS,
    LINE_SEARCH_HALVINGS, MAX_BISECTIONS, MODE_TOLERANCE, NEWTON_ABS_TOL, NEWTON_MAX_ITERS, NEWTON_REL_TOL,
    REFINEMENT_STRATEGIES, SAMPLES_PER_CELL,
)
from fem.errors import InvalidArgumentError
from fem.solver import ContinuationConfig, NewtonConfig

# Which keys each TOML section may carry
CONFIG_SECTIONS = {
    "run": ("case", "m", "p", "k", "dim"),
    "mesh": ("n", "levels", "refinement"),
    "newton": ("abs_tol", "rel_tol", "max_iters", "max_line_search_halvings", "epsilon_schedule",
               "rescale", "boundary_projection"),
    "continuation": ("p_schedule", "warm_start", "max_bisections"),
    "diagnostics": ("guard_cells", "hist_bins", "mode_tolerance", "samples_per_cell"),
    "output": ("out", "dump_matrix"),
}

PROFILE_KEYS = ("n", "levels", "k", "p", "p_schedule", "m")


@dataclass
class RunConfig:
    command: str
    case: str = "manufactured_sine"
    m: Optional[int] = None
    p: float = 2.0
    k: int = 1
    dim: Optional[int] = None
    n: int = 4
    levels: int = 1
    refinement: str = "regenerate"
    abs_tol: float = NEWTON_ABS_TOL
    rel_tol: float = NEWTON_REL_TOL
    max_iters: int = NEWTON_MAX_ITERS
    max_line_search_halvings: int = LINE_SEARCH_HALVINGS
    epsilon_schedule: Tuple[float, ...] = EPSILON_SCHEDULE
    rescale: bool = True
    boundary_projection: str = "interpolate"
    p_schedule: Tuple[float, ...] = (2.0,)
    warm_start: bool = True
    max_bisections: int = MAX_BISECTIONS
    guard_cells: int = GUARD_CELLS
    hist_bins: int = HIST_BINS
    mode_tolerance: float = MODE_TOLERANCE
    samples_per_cell: int = SAMPLES_PER_CELL
    out: str = DEFAULT_OUT_DIR
    dump_matrix: bool = False

    def __post_init__(self):
        self.p = float(self.p)
        self.p_schedule = tuple(float(v) for v in (self.p_schedule or ()))
        self.epsilon_schedule = tuple(float(v) for v in self.epsilon_schedule)

    @property
    def profile(self) -> Dict:
        return CASE_PROFILES[self.case]

    def newton_config(self) -> NewtonConfig:
        return NewtonConfig(
            abs_tol=self.abs_tol, rel_tol=self.rel_tol, max_iters=self.max_iters,
            max_line_search_halvings=self.max_line_search_halvings,
            epsilon_schedule=self.epsilon_schedule, rescale=self.rescale,
            boundary_projection=self.boundary_projection,
        )

    def continuation_config(self) -> ContinuationConfig:
        return ContinuationConfig(p_schedule=self.p_schedule, warm_start=self.warm_start,
                                  max_bisections=self.max_bisections)

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise InvalidArgumentError(f"Unknown command '{self.command}'; expected one of {COMMANDS}")
        if self.case not in CASES:
            raise InvalidArgumentError(f"Unknown case '{self.case}'; expected one of {CASES}")
        if self.m is not None and self.case != "cosine_2d":
            raise InvalidArgumentError(f"m is only meaningful for cosine_2d, not {self.case}")
        if self.m is not None and (int(self.m) != self.m or self.m < 1):
            raise InvalidArgumentError(f"m must be a positive integer, got {self.m}")
        if self.dim is not None and self.dim != self.profile["dim"]:
            raise InvalidArgumentError(f"Case {self.case} lives in {self.profile['dim']}D, config asks for {self.dim}D")
        if self.k not in (1, 2):
            raise InvalidArgumentError(f"Polynomial degree k must be 1 or 2, got {self.k}")
        if not self.p >= 2.0:
            raise InvalidArgumentError(f"Exponent p must be >= 2, got {self.p}")
        if self.n < 1 or self.levels < 1:
            raise InvalidArgumentError("Mesh size n and levels must be >= 1")
        if self.refinement not in REFINEMENT_STRATEGIES:
            raise InvalidArgumentError(f"refinement must be one of {REFINEMENT_STRATEGIES}")
        if self.boundary_projection not in BOUNDARY_PROJECTIONS:
            raise InvalidArgumentError(f"boundary_projection must be one of {BOUNDARY_PROJECTIONS}")
        if self.guard_cells < 0 or self.hist_bins < 2 or self.samples_per_cell < 1:
            raise InvalidArgumentError("Invalid diagnostics settings")

        if self.command == "benchmark" and self.case != "manufactured_sine":
            raise InvalidArgumentError("benchmark needs the manufactured_sine case (an exact solution)")
        if self.command == "psweep":
            if not self.profile["homogeneous"]:
                raise InvalidArgumentError(f"psweep needs a case without source, got {self.case}")
            if not self.p_schedule:
                raise InvalidArgumentError("psweep needs a non-empty p_schedule")
            ps = np.array(self.p_schedule)
            if ps[0] != 2.0 or np.any(np.diff(ps) <= 0):
                raise InvalidArgumentError(f"p_schedule must start at 2 and increase strictly: {self.p_schedule}")
            self.continuation_config()
        self.newton_config()
        return self


def load_run_config(path: str, command: str, overrides: Optional[Dict] = None) -> RunConfig:
    """
    TOML file -> RunConfig. Precedence: command-line overrides, then the file,
    then the case profile, then the dataclass defaults. Unknown keys are rejected.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        raw = toml.load(path)
    except toml.TomlDecodeError as e:
        raise InvalidArgumentError(f"Malformed config {path}: {e}") from e

    values: Dict = {}
    for section, body in raw.items():
        if section not in CONFIG_SECTIONS or not isinstance(body, dict):
            raise InvalidArgumentError(f"Unknown config section [{section}]")
        for key, v in body.items():
            if key not in CONFIG_SECTIONS[section]:
                raise InvalidArgumentError(f"Unknown key '{key}' in section [{section}]")
            values[key] = v

    for key, v in (overrides or {}).items():
        if v is not None:
            values[key] = v

    case = values.get("case", RunConfig.case)
    if case not in CASE_PROFILES:
        raise InvalidArgumentError(f"Unknown case '{case}'; expected one of {CASES}")
    for key in PROFILE_KEYS:
        if key not in values and key in CASE_PROFILES[case]:
            values[key] = CASE_PROFILES[case][key]

    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise InvalidArgumentError(f"Unknown settings: {sorted(unknown)}")
    return RunConfig(command=command, **values).validate()
