import os
from typing import Dict, Iterable, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
import scipy.io
import scipy.sparse as sp

from constants import CSV_FLOAT_FORMAT

RowLike = Union[Dict[str, object], List[object]]

VTK_CELL_TYPES = {2: 3, 3: 5}  # vertices per cell -> VTK_LINE, VTK_TRIANGLE


def ensure_dir(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if parent and not os.path.exists(parent):
        os.makedirs(parent, exist_ok=True)


def save_dataframe(path: str, df: pd.DataFrame) -> str:
    ensure_dir(path)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def save_csv_append(
    path: str,
    rows: Iterable[RowLike],
    columns: Optional[List[str]] = None,
) -> None:
    """Append rows to a CSV, writing the header only when the file is new."""
    ensure_dir(path)
    rows = list(rows)
    if not rows:
        return

    if isinstance(rows[0], dict):
        df = pd.DataFrame(rows, columns=columns or list(rows[0].keys()))
    else:
        df = pd.DataFrame(rows, columns=columns)

    file_exists = os.path.exists(path)
    df.to_csv(path, mode="a", header=not file_exists,
              index=False, float_format=CSV_FLOAT_FORMAT)


def _fmt(v: float) -> str:
    return CSV_FLOAT_FORMAT % v


def write_vtk(path: str, vertices: np.ndarray, cells: np.ndarray,
              point_data: Optional[Mapping[str, np.ndarray]] = None,
              title: str = "pbilap field") -> str:
    """Legacy ASCII VTK unstructured grid with optional POINT_DATA scalars."""
    ensure_dir(path)
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    n, dim = vertices.shape
    nc, nv = cells.shape
    cell_type = VTK_CELL_TYPES[nv]
    xyz = np.zeros((n, 3))
    xyz[:, :dim] = vertices

    lines = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [" ".join(_fmt(c) for c in row) for row in xyz]
    lines.append(f"CELLS {nc} {nc * (nv + 1)}")
    lines += [f"{nv} " + " ".join(str(int(i)) for i in row) for row in cells]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(cell_type)] * nc

    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float).ravel()
            if values.shape != (n,):
                raise ValueError(f"Point data '{name}' has {values.size} values for {n} points")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(v) for v in values]

    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


def write_function_csv(path: str, coords: np.ndarray, values: Mapping[str, np.ndarray]) -> str:
    """Coordinate columns (x, y) followed by one column per field."""
    coords = np.asarray(coords, dtype=float)
    data = {name: coords[:, i] for i, name in enumerate("xy"[: coords.shape[1]])}
    data.update({k: np.asarray(v, dtype=float) for k, v in values.items()})
    return save_dataframe(path, pd.DataFrame(data))


def write_gnuplot(path: str, df: pd.DataFrame, comment: Optional[str] = None) -> str:
    """Whitespace-separated columns with a '#' header line."""
    ensure_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        f.write("# " + " ".join(df.columns) + "\n")
        df.to_csv(f, sep=" ", header=False, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def write_matrix_market(path: str, matrix: sp.spmatrix, comment: str = "") -> str:
    ensure_dir(path)
    scipy.io.mmwrite(path, sp.coo_matrix(matrix), comment=comment)
    return path
