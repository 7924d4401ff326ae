"""Structured fine/coarse grids on the unit square and their dual control volumes.

Node and cell numbering is row-major from the bottom-left corner::

    node(i, j) = j * (nx + 1) + i      0 <= i <= nx, 0 <= j <= ny
    cell(i, j) = j * nx + i            0 <= i <  nx, 0 <= j <  ny

Local node order inside a cell is (0,0), (1,0), (1,1), (0,1).

Every fine cell carries four *dual segments*, the halves of its two midlines.
They are the edges between fine dual volumes and are numbered ``4 * cell + kind``:

==== ======================== ==============================
kind segment                  oriented from -> to (local)
==== ======================== ==============================
0    vertical midline, lower  node 0 -> node 1  (+x)
1    vertical midline, upper  node 3 -> node 2  (+x)
2    horizontal midline, left node 0 -> node 3  (+y)
3    horizontal midline, right node 1 -> node 2 (+y)
==== ======================== ==============================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SIDES = ("left", "right", "bottom", "top")

# (from, to) local nodes of the four dual segments of a cell
SEGMENT_NODES = np.array([[0, 1], [3, 2], [0, 3], [1, 2]])


@dataclass(frozen=True)
class FineGrid:
    """Uniform ``nx`` x ``ny`` quadrilateral grid of the unit square."""

    nx: int
    ny: int

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if int(n) != n or n < 2:
                raise ValueError(f"grid sizes must be integers >= 2, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def h(self) -> float:
        return self.hx

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_segments(self) -> int:
        return 4 * self.n_cells

    def node(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def cell(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def node_ij(self, n):
        n = np.asarray(n)
        return n % (self.nx + 1), n // (self.nx + 1)

    def cell_ij(self, c):
        c = np.asarray(c)
        return c % self.nx, c // self.nx

    @cached_property
    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        i, j = self.node_ij(np.arange(self.n_nodes))
        return i * self.hx, j * self.hy

    @cached_property
    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        i, j = self.cell_ij(np.arange(self.n_cells))
        return (i + 0.5) * self.hx, (j + 0.5) * self.hy

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 4) global node indices in local order."""
        i, j = self.cell_ij(np.arange(self.n_cells))
        n00 = self.node(i, j)
        return np.stack([n00, n00 + 1, n00 + self.nx + 2, n00 + self.nx + 1], axis=1)

    @cached_property
    def segment_nodes(self) -> np.ndarray:
        """(n_segments, 2) global (from, to) node pairs of every dual segment."""
        cn = self.cell_nodes
        return cn[:, SEGMENT_NODES].reshape(-1, 2)

    @cached_property
    def node_measure(self) -> np.ndarray:
        """Area of the (clipped) fine dual volume of every node."""
        i, j = self.node_ij(np.arange(self.n_nodes))
        wx = np.where((i == 0) | (i == self.nx), 0.5, 1.0)
        wy = np.where((j == 0) | (j == self.ny), 0.5, 1.0)
        return wx * wy * self.hx * self.hy

    def side_nodes(self, side: str) -> np.ndarray:
        """Nodes on one side of the square, ordered along the side."""
        if side == "left":
            return self.node(0, np.arange(self.ny + 1))
        if side == "right":
            return self.node(self.nx, np.arange(self.ny + 1))
        if side == "bottom":
            return self.node(np.arange(self.nx + 1), 0)
        if side == "top":
            return self.node(np.arange(self.nx + 1), self.ny)
        raise ValueError(f"unknown side {side!r}")

    def side_edge_length(self, side: str) -> float:
        return self.hy if side in ("left", "right") else self.hx

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        i, j = self.node_ij(np.arange(self.n_nodes))
        return (i == 0) | (i == self.nx) | (j == 0) | (j == self.ny)


def build_fine_grid(nx: int, ny: int) -> FineGrid:
    return FineGrid(nx, ny)


@dataclass(frozen=True)
class CoarseGrid:
    """Coarse ``NX`` x ``NY`` grid whose cells are blocks of ``rx`` x ``ry`` fine cells."""

    fine: FineGrid
    NX: int
    NY: int

    def __post_init__(self):
        if self.NX < 1 or self.NY < 1:
            raise ValueError("coarse sizes must be positive")
        if self.fine.nx % self.NX or self.fine.ny % self.NY:
            raise ValueError(
                f"fine grid {self.fine.nx}x{self.fine.ny} is not divisible by "
                f"coarse grid {self.NX}x{self.NY}"
            )

    @property
    def rx(self) -> int:
        return self.fine.nx // self.NX

    @property
    def ry(self) -> int:
        return self.fine.ny // self.NY

    @property
    def r(self) -> int:
        return self.rx

    @property
    def Hx(self) -> float:
        return 1.0 / self.NX

    @property
    def Hy(self) -> float:
        return 1.0 / self.NY

    @property
    def H(self) -> float:
        return self.Hx

    @property
    def n_nodes(self) -> int:
        return (self.NX + 1) * (self.NY + 1)

    @property
    def n_cells(self) -> int:
        return self.NX * self.NY

    def node(self, I, J):
        return np.asarray(J) * (self.NX + 1) + np.asarray(I)

    def node_ij(self, n):
        n = np.asarray(n)
        return n % (self.NX + 1), n // (self.NX + 1)

    def cell_ij(self, c):
        c = np.asarray(c)
        return c % self.NX, c // self.NX

    def fine_node(self, n):
        """Fine node index of coarse node ``n``."""
        I, J = self.node_ij(n)
        return self.fine.node(I * self.rx, J * self.ry)

    def is_interior(self, n) -> np.ndarray:
        I, J = self.node_ij(n)
        return (I > 0) & (I < self.NX) & (J > 0) & (J < self.NY)

    def cell_fine_cells(self, c: int) -> np.ndarray:
        """Fine cells of coarse cell ``c``, row-major within the block."""
        I, J = self.cell_ij(c)
        ii, jj = np.meshgrid(np.arange(I * self.rx, (I + 1) * self.rx),
                             np.arange(J * self.ry, (J + 1) * self.ry))
        return self.fine.cell(ii.ravel(), jj.ravel())

    def cell_fine_nodes(self, c: int) -> np.ndarray:
        """Fine nodes of coarse cell ``c`` (closed block), row-major."""
        I, J = self.cell_ij(c)
        ii, jj = np.meshgrid(np.arange(I * self.rx, (I + 1) * self.rx + 1),
                             np.arange(J * self.ry, (J + 1) * self.ry + 1))
        return self.fine.node(ii.ravel(), jj.ravel())

    @cached_property
    def fine_cell_owner(self) -> np.ndarray:
        """Coarse cell containing every fine cell."""
        i, j = self.fine.cell_ij(np.arange(self.fine.n_cells))
        return (j // self.ry) * self.NX + i // self.rx


def build_coarse_grid(fg: FineGrid, NX: int, NY: int) -> CoarseGrid:
    return CoarseGrid(fg, NX, NY)


@dataclass(frozen=True)
class Neighborhood:
    """Support ``omega_i`` of coarse node ``node``: the coarse cells touching it."""

    node: int
    coarse_cells: tuple[int, ...]
    i_range: tuple[int, int]          # inclusive fine-node index ranges
    j_range: tuple[int, int]
    fine_nodes: np.ndarray = field(repr=False)  # sorted global indices
    fine_cells: np.ndarray = field(repr=False)
    fine_nx: int = field(repr=False, default=0)

    @property
    def shape(self) -> tuple[int, int]:
        """Fine cell counts (mx, my) of the neighborhood."""
        return self.i_range[1] - self.i_range[0], self.j_range[1] - self.j_range[0]

    def local_index(self, global_nodes) -> np.ndarray:
        i0, _ = self.i_range
        j0, _ = self.j_range
        mx = self.i_range[1] - i0 + 1
        g = np.asarray(global_nodes)
        return (g // (self.fine_nx + 1) - j0) * mx + (g % (self.fine_nx + 1) - i0)


def neighborhood(cg: CoarseGrid, i: int) -> Neighborhood:
    if not 0 <= i < cg.n_nodes:
        raise IndexError(f"coarse node {i} out of range [0, {cg.n_nodes})")
    I, J = (int(v) for v in cg.node_ij(i))
    cells = tuple(
        int(JJ * cg.NX + II)
        for JJ in (J - 1, J)
        for II in (I - 1, I)
        if 0 <= II < cg.NX and 0 <= JJ < cg.NY
    )
    i0, i1 = max(I - 1, 0) * cg.rx, min(I + 1, cg.NX) * cg.rx
    j0, j1 = max(J - 1, 0) * cg.ry, min(J + 1, cg.NY) * cg.ry
    fg = cg.fine
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
    ci, cj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1))
    return Neighborhood(
        node=i,
        coarse_cells=cells,
        i_range=(i0, i1),
        j_range=(j0, j1),
        fine_nodes=fg.node(ii.ravel(), jj.ravel()),
        fine_cells=fg.cell(ci.ravel(), cj.ravel()),
        fine_nx=fg.nx,
    )


@dataclass(frozen=True)
class Segment:
    """A piece of a control-volume boundary lying inside one fine cell.

    ``sign`` is +1 when the segment's reference orientation (see module doc)
    points out of the volume.
    """

    cell: int
    kind: int
    sign: int
    midpoint: tuple[float, float]
    length: float
    normal: tuple[float, float]

    @property
    def index(self) -> int:
        return 4 * self.cell + self.kind


@dataclass(frozen=True)
class BoundaryPiece:
    """Part of a control-volume boundary on the domain boundary (one half edge)."""

    side: str
    edge: int          # fine boundary edge index along the side
    midpoint: tuple[float, float]
    length: float


@dataclass(frozen=True)
class ControlVolume:
    """Node-centred dual volume, a union of fine dual volumes.

    ``i_range``/``j_range`` are the inclusive fine-node ranges it contains.
    """

    owner: int
    level: str
    center: int          # fine node the volume is centred on
    i_range: tuple[int, int]
    j_range: tuple[int, int]
    box: tuple[float, float, float, float]
    segments: tuple[Segment, ...] = field(repr=False)
    boundary: tuple[BoundaryPiece, ...] = field(repr=False)

    @property
    def measure(self) -> float:
        x0, x1, y0, y1 = self.box
        return (x1 - x0) * (y1 - y0)

    def fine_nodes(self, fg: FineGrid) -> np.ndarray:
        ii, jj = np.meshgrid(np.arange(self.i_range[0], self.i_range[1] + 1),
                             np.arange(self.j_range[0], self.j_range[1] + 1))
        return fg.node(ii.ravel(), jj.ravel())

    @property
    def boundary_sides(self) -> set[str]:
        return {b.side for b in self.boundary}


def _volume(fg: FineGrid, owner: int, level: str, center: int, ilo: int, ihi: int, jlo: int, jhi: int) -> ControlVolume:
    hx, hy = fg.hx, fg.hy
    x0, x1 = max(0.0, (ilo - 0.5) * hx), min(1.0, (ihi + 0.5) * hx)
    y0, y1 = max(0.0, (jlo - 0.5) * hy), min(1.0, (jhi + 0.5) * hy)
    segs: list[Segment] = []
    bnd: list[BoundaryPiece] = []

    def vertical(ci: int, sign: int, normal):
        xm = (ci + 0.5) * hx
        for j in range(jlo, jhi + 1):
            if j > 0:   # upper half of cell row j-1
                segs.append(Segment(int(fg.cell(ci, j - 1)), 1, sign,
                                    (xm, (j - 0.25) * hy), 0.5 * hy, normal))
            if j < fg.ny:  # lower half of cell row j
                segs.append(Segment(int(fg.cell(ci, j)), 0, sign,
                                    (xm, (j + 0.25) * hy), 0.5 * hy, normal))

    def horizontal(cj: int, sign: int, normal):
        ym = (cj + 0.5) * hy
        for i in range(ilo, ihi + 1):
            if i > 0:   # right half of cell column i-1
                segs.append(Segment(int(fg.cell(i - 1, cj)), 3, sign,
                                    ((i - 0.25) * hx, ym), 0.5 * hx, normal))
            if i < fg.nx:  # left half of cell column i
                segs.append(Segment(int(fg.cell(i, cj)), 2, sign,
                                    ((i + 0.25) * hx, ym), 0.5 * hx, normal))

    def on_side(side: str, fixed: float, rng, step: float, n_edges: int):
        lo, hi = rng
        for t in range(lo, hi + 1):
            if t > 0:
                mid = (t - 0.25) * step
                pt = (fixed, mid) if side in ("left", "right") else (mid, fixed)
                bnd.append(BoundaryPiece(side, t - 1, pt, 0.5 * step))
            if t < n_edges:
                mid = (t + 0.25) * step
                pt = (fixed, mid) if side in ("left", "right") else (mid, fixed)
                bnd.append(BoundaryPiece(side, t, pt, 0.5 * step))

    if ilo > 0:
        vertical(ilo - 1, -1, (-1.0, 0.0))
    else:
        on_side("left", 0.0, (jlo, jhi), hy, fg.ny)
    if ihi < fg.nx:
        vertical(ihi, +1, (1.0, 0.0))
    else:
        on_side("right", 1.0, (jlo, jhi), hy, fg.ny)
    if jlo > 0:
        horizontal(jlo - 1, -1, (0.0, -1.0))
    else:
        on_side("bottom", 0.0, (ilo, ihi), hx, fg.nx)
    if jhi < fg.ny:
        horizontal(jhi, +1, (0.0, 1.0))
    else:
        on_side("top", 1.0, (ilo, ihi), hx, fg.nx)
    return ControlVolume(owner, level, center, (ilo, ihi), (jlo, jhi), (x0, x1, y0, y1),
                         tuple(segs), tuple(bnd))


def coarse_volume_ranges(r: int, N: int, n: int) -> list[tuple[int, int]]:
    """Fine-node index ranges of the coarse dual volumes along one axis.

    Volume ``I`` holds fine nodes ``I*r - r//2 .. I*r - r//2 + r - 1`` (clipped),
    so its faces sit on fine midlines. For odd ``r`` this is centred on the
    coarse node; for even ``r`` it is shifted by half a fine cell.
    """
    out = []
    for I in range(N + 1):
        lo = I * r - r // 2
        out.append((max(lo, 0), min(lo + r - 1, n)))
    return out


def control_volumes(grid: FineGrid | CoarseGrid, level: str | None = None) -> list[ControlVolume]:
    """One dual volume per node of the grid, in node order."""
    if level is None:
        level = "fine" if isinstance(grid, FineGrid) else "coarse"
    if level == "fine":
        fg = grid if isinstance(grid, FineGrid) else grid.fine
        return [
            _volume(fg, int(fg.node(i, j)), "fine", int(fg.node(i, j)), i, i, j, j)
            for j in range(fg.ny + 1)
            for i in range(fg.nx + 1)
        ]
    if level != "coarse" or not isinstance(grid, CoarseGrid):
        raise ValueError("coarse volumes need a CoarseGrid")
    cg = grid
    fg = cg.fine
    xr = coarse_volume_ranges(cg.rx, cg.NX, fg.nx)
    yr = coarse_volume_ranges(cg.ry, cg.NY, fg.ny)
    return [
        _volume(fg, int(cg.node(I, J)), "coarse", int(cg.fine_node(cg.node(I, J))),
                *xr[I], *yr[J])
        for J in range(cg.NY + 1)
        for I in range(cg.NX + 1)
    ]


def membership(volumes: list[ControlVolume], fg: FineGrid) -> np.ndarray:
    """Index of the volume containing each fine node (volumes must tile)."""
    owner = np.full(fg.n_nodes, -1, dtype=int)
    for k, v in enumerate(volumes):
        owner[v.fine_nodes(fg)] = k
    return owner
