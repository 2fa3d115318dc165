# case_profiles.py
from typing import Dict, Optional, Tuple

from fem.analysis import ManufacturedCase, cosine_2d_case, cubic_1d_case, manufactured_sine
from fem.assembly import ProblemSpec
from fem.errors import InvalidArgumentError
from fem.mesh import Mesh, criss_cross_mesh, unit_interval_mesh

# Per-case experiment defaults; values missing from a config file come from here
CASE_PROFILES: Dict[str, Dict] = {
    "manufactured_sine": {
        "dim": 2,
        "domain": (-1.0, -1.0, 1.0, 1.0),
        "homogeneous": False,
        "n": 4,
        "levels": 4,
        "k": 1,
        "p": 2.0,
        "p_schedule": (2.0,),
    },
    "cubic_1d": {
        "dim": 1,
        "domain": (0.0, 1.0),
        "homogeneous": True,
        "n": 128,
        "levels": 1,
        "k": 2,
        "p": 2.0,
        "p_schedule": (2.0, 4.0, 12.0, 42.0, 202.0),
    },
    "cosine_2d": {
        "dim": 2,
        "domain": (-1.0, -1.0, 1.0, 1.0),
        "homogeneous": True,
        "n": 32,
        "levels": 1,
        "k": 1,
        "p": 4.0,
        "m": 1,
        "p_schedule": (2.0, 4.0, 42.0, 68.0, 142.0),
    },
}


def build_case(name: str, p: float, m: Optional[int] = None) -> Tuple[ProblemSpec, Optional[ManufacturedCase]]:
    """Problem data for a named case; the manufactured case also returns its exact solution."""
    if name == "manufactured_sine":
        case = manufactured_sine(p)
        return case.spec, case
    if name == "cubic_1d":
        return cubic_1d_case(p), None
    if name == "cosine_2d":
        return cosine_2d_case(m or CASE_PROFILES["cosine_2d"]["m"], p), None
    raise InvalidArgumentError(f"Unknown case '{name}'")


def build_mesh(name: str, n: int) -> Mesh:
    """n segments on the interval, or an n x n criss-cross mesh of the rectangle."""
    profile = CASE_PROFILES[name]
    if profile["dim"] == 1:
        a, b = profile["domain"]
        return unit_interval_mesh(n, a, b)
    return criss_cross_mesh(n, n, profile["domain"])
