"""
Mallas triangulares: contenedor, vecindades, suavizado laplaciano y OBJ.

La topología (vecinos, aristas) se obtiene con trimesh sin procesar la malla,
de modo que el orden de vértices nunca cambia.
"""

import os
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
import torch
import trimesh

from geometry.tensors import DTYPE, as_float64, as_index
from utils.errors import InvalidDims, InvariantViolation, IoError, IsolatedVertex, ParseError


@dataclass
class Mesh:
    """
    Attributes:
        vertices: (V, 3) metros
        faces: (F, 3) índices de vértice
        boundary_ring: Anillo ordenado de vértices de borde, opcional
    """

    vertices: torch.Tensor
    faces: torch.Tensor
    boundary_ring: Optional[List[int]] = None

    def __post_init__(self):
        self.vertices = as_float64(self.vertices)
        self.faces = as_index(self.faces)
        if self.vertices.dim() != 2 or self.vertices.shape[1] != 3:
            raise InvalidDims(f"vertices debe ser (V, 3), llegó {tuple(self.vertices.shape)}")
        if self.faces.numel() and (self.faces.dim() != 2 or self.faces.shape[1] != 3):
            raise InvalidDims(f"faces debe ser (F, 3), llegó {tuple(self.faces.shape)}")
        v = self.vertices.shape[0]
        if self.faces.numel() and (int(self.faces.max()) >= v or int(self.faces.min()) < 0):
            raise InvariantViolation("faces", f"índice fuera de [0, {v})")
        if self.boundary_ring is not None:
            ring = [int(i) for i in self.boundary_ring]
            if len(set(ring)) != len(ring):
                raise InvariantViolation("boundary_ring", "índices repetidos")
            if any(i < 0 or i >= v for i in ring):
                raise InvariantViolation("boundary_ring", "índice fuera de rango")
            self.boundary_ring = ring

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def with_vertices(self, vertices: torch.Tensor) -> "Mesh":
        """Misma topología con otras posiciones."""
        return Mesh(vertices, self.faces, self.boundary_ring)

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(
            vertices=self.vertices.detach().cpu().numpy(),
            faces=self.faces.cpu().numpy(),
            process=False,
        )


def vertex_neighbors(mesh: Mesh) -> List[List[int]]:
    """Vecinos a un anillo de cada vértice (ordenados)."""
    tm = mesh.to_trimesh()
    neighbors = [sorted(int(j) for j in n) for n in tm.vertex_neighbors]
    # trimesh omite los vértices finales que no aparecen en ninguna cara
    neighbors += [[] for _ in range(mesh.num_vertices - len(neighbors))]
    return neighbors


def unique_edges(mesh: Mesh) -> np.ndarray:
    """Aristas únicas (E, 2)."""
    return np.asarray(mesh.to_trimesh().edges_unique, dtype=np.int64)


def ring_neighborhood(neighbors: Sequence[Sequence[int]], seeds: Iterable[int], rings: int) -> List[int]:
    """Vértices a distancia combinatoria <= rings de alguna semilla."""
    visited = {int(s) for s in seeds}
    frontier = set(visited)
    for _ in range(rings):
        nxt = set()
        for v in frontier:
            nxt.update(neighbors[v])
        frontier = nxt - visited
        visited |= frontier
        if not frontier:
            break
    return sorted(visited)


def laplacian_smooth(mesh: Mesh, vertex_set: Sequence[int], lam: float, iters: int,
                     neighbors: Optional[Sequence[Sequence[int]]] = None) -> Mesh:
    """
    Suavizado laplaciano uniforme restringido a vertex_set.

    En cada iteración v <- v + lam * (media de vecinos - v) para los vértices
    seleccionados (actualización simultánea); el resto queda bit a bit igual.

    Args:
        mesh: Malla de entrada
        vertex_set: Índices a suavizar
        lam: Paso en (0, 1]
        iters: Número de iteraciones (0 devuelve la malla intacta)
        neighbors: Vecindades precalculadas; si falta se calcula con trimesh

    Returns:
        Nueva malla con la misma topología

    Raises:
        IsolatedVertex: si un vértice seleccionado no tiene vecinos
        InvalidDims: índices fuera de rango
    """
    selected = sorted({int(i) for i in vertex_set})
    if iters <= 0 or not selected:
        return Mesh(mesh.vertices, mesh.faces, mesh.boundary_ring)
    n = mesh.num_vertices
    if selected[0] < 0 or selected[-1] >= n:
        raise InvalidDims(f"vertex_set fuera de [0, {n})")
    if neighbors is None:
        neighbors = vertex_neighbors(mesh)

    rows, cols, weights = [], [], []
    for r, v in enumerate(selected):
        ring = neighbors[v]
        if not ring:
            raise IsolatedVertex(v)
        rows.extend([r] * len(ring))
        cols.extend(ring)
        weights.extend([1.0 / len(ring)] * len(ring))
    sel = torch.tensor(selected, dtype=torch.long)
    rows_t = torch.tensor(rows, dtype=torch.long)
    cols_t = torch.tensor(cols, dtype=torch.long)
    w = torch.tensor(weights, dtype=DTYPE)[:, None]

    out = mesh.vertices
    for _ in range(iters):
        means = torch.zeros(len(selected), 3, dtype=DTYPE).index_add(0, rows_t, out[cols_t] * w)
        current = out[sel]
        out = out.index_copy(0, sel, current + lam * (means - current))
    return Mesh(out, mesh.faces, mesh.boundary_ring)


def save_obj(mesh: Mesh, path: str) -> str:
    """Escribe la malla en OBJ ASCII (caras 1-indexadas)."""
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        vertices = mesh.vertices.detach().cpu().numpy()
        faces = mesh.faces.cpu().numpy()
        with open(path, "w", encoding="utf-8") as f:
            for v in vertices:
                f.write(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}\n")
            for face in faces:
                f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")
    except OSError as e:
        raise IoError(f"No se pudo escribir {path}: {e}") from e
    return path


def load_obj(path: str) -> Mesh:
    """Lee un OBJ conservando el orden de vértices."""
    if not os.path.exists(path):
        raise IoError(f"No existe {path}")
    try:
        tm = trimesh.load(path, force="mesh", process=False, maintain_order=True)
    except Exception as e:
        raise ParseError(f"OBJ ilegible {path}: {e}") from e
    return Mesh(torch.as_tensor(np.asarray(tm.vertices), dtype=DTYPE),
                torch.as_tensor(np.asarray(tm.faces), dtype=torch.long))
