"""Cell-wise permeability and source fields, the text field format, and a
synthetic channel/inclusion generator."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import FineGrid


@dataclass(frozen=True)
class PermeabilityField:
    grid: FineGrid
    values: np.ndarray  # (n_cells,), row-major from bottom-left

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_cells,):
            raise ValueError(f"size mismatch: expected {self.grid.n_cells} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("permeability must be finite")
        if np.any(v <= 0):
            raise ValueError("non-positive permeability")
        object.__setattr__(self, "values", v)

    @property
    def kmin(self) -> float:
        return float(self.values.min())

    @property
    def kmax(self) -> float:
        return float(self.values.max())

    @property
    def contrast(self) -> float:
        return self.kmax / self.kmin

    def as_image(self) -> np.ndarray:
        """(ny, nx) view, row 0 at the bottom."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def summary(self) -> str:
        return (f"nx={self.grid.nx}\nny={self.grid.ny}\nkmin={self.kmin!r}\n"
                f"kmax={self.kmax!r}\ncontrast={self.contrast!r}\n")

    def scaled(self, c: float) -> "PermeabilityField":
        return PermeabilityField(self.grid, c * self.values)


@dataclass(frozen=True)
class SourceField:
    """Total source ``q`` and water source ``q_w`` per fine cell."""

    grid: FineGrid
    q: np.ndarray | None = None
    q_w: np.ndarray | None = None

    def __post_init__(self):
        for name in ("q", "q_w"):
            v = getattr(self, name)
            v = np.zeros(self.grid.n_cells) if v is None else np.broadcast_to(
                np.asarray(v, dtype=float), (self.grid.n_cells,)).copy()
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)


def cellwise(grid: FineGrid, values) -> np.ndarray:
    """Coerce a field, scalar or array to a per-cell float vector."""
    if isinstance(values, PermeabilityField):
        return values.values
    v = np.asarray(values, dtype=float)
    if v.ndim == 0:
        return np.full(grid.n_cells, float(v))
    v = v.reshape(-1)
    if v.size != grid.n_cells:
        raise ValueError(f"dimension mismatch: expected {grid.n_cells} cell values, got {v.size}")
    return v


# -- text format ------------------------------------------------------------

def read_values(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    out = np.empty(len(tokens))
    for n, tok in enumerate(tokens):
        try:
            out[n] = float(tok)
        except ValueError:
            raise ValueError(f"unparsable token {tok!r} at position {n}") from None
    return out


def write_values(path, values, per_line: int = 1) -> None:
    v = np.asarray(values, dtype=float).ravel()
    # repr-precision keeps the round trip bit-exact
    lines = [" ".join(repr(float(x)) for x in v[s:s + per_line]) for s in range(0, v.size, per_line)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_field(path, fg: FineGrid) -> PermeabilityField:
    v = read_values(path)
    if v.size != fg.n_cells:
        raise ValueError(f"size mismatch: file has {v.size} values, grid needs {fg.n_cells}")
    return PermeabilityField(fg, v)


def save_field(path, field: PermeabilityField) -> None:
    write_values(path, field.values)


# -- synthetic fields -------------------------------------------------------

@dataclass(frozen=True)
class Channel:
    """Horizontal band ``|y - y_center| < width/2`` for ``x0 <= x <= x1``."""

    y: float
    width: float
    x0: float = 0.0
    x1: float = 1.0


@dataclass(frozen=True)
class Inclusion:
    """Axis-aligned square of side ``size`` centred at ``(x, y)``."""

    x: float
    y: float
    size: float


def default_geometry(seed: int = 0, n_channels: int = 3, n_inclusions: int = 8,
                     channel_width: float = 0.02, inclusion_size: float = 0.04,
                     margin: float = 0.12):
    """Random channel/inclusion layout, deterministic in ``seed``.

    Channels sit in disjoint horizontal bands and end inside the domain.
    All features stay ``margin`` away from the sides: coarse nodes on the
    boundary carry a single basis function, so structure inside their
    neighborhoods cannot be resolved by enrichment.
    """
    rng = np.random.default_rng(seed)
    feats: list = []
    lo, hi = margin, 1.0 - margin
    band = (hi - lo) / n_channels
    for c in range(n_channels):
        y = lo + band * (c + rng.uniform(0.25, 0.75))
        x0 = rng.uniform(lo, lo + 0.15)
        x1 = rng.uniform(hi - 0.15, hi)
        feats.append(Channel(float(y), channel_width, float(x0), float(x1)))
    for _ in range(n_inclusions):
        x, y = rng.uniform(lo + inclusion_size / 2, hi - inclusion_size / 2, size=2)
        feats.append(Inclusion(float(x), float(y), inclusion_size))
    return feats


def _rasterize(fg: FineGrid, feat) -> np.ndarray:
    xc, yc = fg.cell_centers
    if isinstance(feat, Channel):
        if feat.width <= 0 or feat.x1 <= feat.x0 or not (0 <= feat.y <= 1):
            raise ValueError(f"degenerate geometry: {feat}")
        rows = np.abs(yc - feat.y) < feat.width / 2
        if not rows.any():  # thinner than a cell: keep the nearest row
            rows = yc == yc[np.argmin(np.abs(yc - feat.y))]
        cols = (xc >= feat.x0) & (xc <= feat.x1)
        if not cols.any():
            raise ValueError(f"degenerate geometry: {feat} covers no cell")
        return rows & cols
    if isinstance(feat, Inclusion):
        if feat.size <= 0 or not (0 <= feat.x <= 1 and 0 <= feat.y <= 1):
            raise ValueError(f"degenerate geometry: {feat}")
        half = max(feat.size / 2, 0.5 * fg.hx + 1e-12, 0.5 * fg.hy + 1e-12)
        mask = (np.abs(xc - feat.x) < half) & (np.abs(yc - feat.y) < half)
        if not mask.any():
            mask[np.argmin((xc - feat.x) ** 2 + (yc - feat.y) ** 2)] = True
        return mask
    raise TypeError(f"unknown feature {feat!r}")


def gen_channel_field(fg: FineGrid, background: float = 1.0, contrast: float = 1e4,
                      geometry=None, seed: int = 0) -> PermeabilityField:
    """Two-valued field: ``background`` off-feature, ``background * contrast`` on it.

    ``geometry`` is a list of :class:`Channel`/:class:`Inclusion`; when omitted
    a layout is drawn from :func:`default_geometry` with ``seed``.
    """
    if contrast < 1:
        raise ValueError("contrast must be >= 1")
    if background <= 0:
        raise ValueError("background must be positive")
    if geometry is None:
        geometry = default_geometry(seed)
    mask = np.zeros(fg.n_cells, dtype=bool)
    for feat in geometry:
        mask |= _rasterize(fg, feat)
    k = np.full(fg.n_cells, float(background))
    k[mask] = background * contrast
    return PermeabilityField(fg, k)
