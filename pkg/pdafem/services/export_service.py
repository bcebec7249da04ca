"""
Export Service
Writes convergence tables, meshes and legacy VTK files of adaptive runs
"""
import csv
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from pdafem.core.exceptions import ExportError
from pdafem.fem.mesh import Triangulation, write_mesh
from pdafem.fem.spaces import FeFunction, SpaceKind
from pdafem.schemas.run import ConvergenceRecord
from pdafem.utils.helpers import format_float, format_optional
from pdafem.utils.logger import logger


VTK_TRIANGLE = 5


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format_optional(value)


class ExportService:
    """Service for writing run artifacts to disk"""

    CSV_NAME = "convergence.csv"

    def _ensure_dir(self, out_dir: Union[str, Path]) -> Path:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ExportError(f"Cannot create output directory ({e})", path=str(out_dir))
        return out_dir

    def write_csv(self, records: Iterable[ConvergenceRecord], out_dir: Union[str, Path]) -> Path:
        """
        Write ``convergence.csv``; None values become empty cells and reals
        carry 17 significant digits.

        Args:
            records: Per-level records (possibly empty)
            out_dir: Output directory, created if missing

        Returns:
            Path of the written file
        """
        path = self._ensure_dir(out_dir) / self.CSV_NAME
        try:
            with open(path, "w", newline="") as file:
                writer = csv.writer(file, lineterminator="\n")
                writer.writerow(ConvergenceRecord.CSV_FIELDS)
                for record in records:
                    writer.writerow([_format_cell(v) for v in record.csv_row().values()])
        except OSError as e:
            raise ExportError(f"Cannot write convergence table ({e})", path=str(path))
        logger.info(f"Wrote {path}")
        return path

    def read_csv(self, path: Union[str, Path]) -> List[Dict[str, str]]:
        """Rows of a convergence table as string dictionaries"""
        try:
            with open(path, newline="") as file:
                return list(csv.DictReader(file))
        except OSError as e:
            raise ExportError(f"Cannot read convergence table ({e})", path=str(path))

    def write_mesh(self, mesh: Triangulation, out_dir: Union[str, Path], level: int) -> Path:
        path = self._ensure_dir(out_dir) / f"mesh_{level:03d}.txt"
        return write_mesh(mesh, path)

    def write_vtk(
        self,
        path: Union[str, Path],
        mesh: Triangulation,
        u: Optional[FeFunction] = None,
        indicators: Optional[np.ndarray] = None,
        ubar: Optional[FeFunction] = None,
        p: Optional[FeFunction] = None
    ) -> Path:
        """
        Legacy ASCII VTK unstructured grid of triangles.

        Args:
            path: Target file
            mesh: Triangulation
            u: P1 function written as point scalar ``u``
            indicators: Per-element indicators written as cell scalar ``indicator``
            ubar: P0 function written as cell scalar ``ubar``
            p: Elementwise affine vector field written as cell vector ``p`` (element mean)

        Returns:
            Path of the written file
        """
        path = Path(path)
        n, m = mesh.n_nodes, mesh.n_elements
        lines = [
            "# vtk DataFile Version 2.0",
            "pdafem solution",
            "ASCII",
            "DATASET UNSTRUCTURED_GRID",
            f"POINTS {n} double",
        ]
        lines += [f"{format_float(x)} {format_float(y)} 0" for x, y in mesh.nodes]
        lines.append(f"CELLS {m} {4 * m}")
        lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
        lines.append(f"CELL_TYPES {m}")
        lines += [str(VTK_TRIANGLE)] * m

        if u is not None:
            if u.kind != SpaceKind.P1:
                raise ExportError("Point data must be a P1 function", path=str(path))
            lines += [f"POINT_DATA {n}", "SCALARS u double 1", "LOOKUP_TABLE default"]
            lines += [format_float(v) for v in u.values]

        cell_blocks = []
        if indicators is not None:
            cell_blocks += ["SCALARS indicator double 1", "LOOKUP_TABLE default"]
            cell_blocks += [format_float(v) for v in np.asarray(indicators).reshape(-1)]
        if ubar is not None:
            cell_blocks += ["SCALARS ubar double 1", "LOOKUP_TABLE default"]
            cell_blocks += [format_float(v) for v in ubar.values]
        if p is not None:
            means = p.values.mean(axis=1) if p.values.ndim == 3 else p.values
            cell_blocks.append("VECTORS p double")
            cell_blocks += [f"{format_float(a)} {format_float(b)} 0" for a, b in means]
        if cell_blocks:
            lines.append(f"CELL_DATA {m}")
            lines += cell_blocks

        try:
            path.write_text("\n".join(lines) + "\n")
        except OSError as e:
            raise ExportError(f"Cannot write VTK file ({e})", path=str(path))
        return path

    def export_level(
        self,
        out_dir: Union[str, Path],
        level: int,
        mesh: Triangulation,
        u: Optional[FeFunction] = None,
        indicators: Optional[np.ndarray] = None,
        ubar: Optional[FeFunction] = None,
        p: Optional[FeFunction] = None
    ) -> List[Path]:
        """Mesh file and VTK file of one refinement level"""
        out_dir = self._ensure_dir(out_dir)
        mesh_path = self.write_mesh(mesh, out_dir, level)
        vtk_path = self.write_vtk(out_dir / f"level_{level:03d}.vtk", mesh, u, indicators, ubar, p)
        logger.debug(f"Exported level {level} to {vtk_path}")
        return [mesh_path, vtk_path]


# Create global export service instance
export_service = ExportService()
