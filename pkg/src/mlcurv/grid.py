"""Narrow-band uniform grid, nodal fields, stencils and trilinear interpolation."""
from dataclasses import dataclass, field
from itertools import product

import numpy as np

SQRT3 = np.sqrt(3.0)

# 27-point stencil offsets, lexicographic with i slowest; center is entry 13
STENCIL_OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)
CENTER = 13
AXIS_OFFSETS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=np.int64)


class IncompleteStencilError(LookupError):
    pass


class EmptyBandError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NarrowBandGrid:
    """Active nodes of a uniform lattice, stored sorted by linear key.

    Node world coordinates are ``anchor + (lo + ijk) * h``; ``ijk`` are local
    indices in ``[0, dims)``.  With the default zero anchor the origin is an
    integer multiple of h.
    """

    h: float
    lo: np.ndarray
    dims: tuple
    ijk: np.ndarray
    half_width: float
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if min(self.dims) < 4:
            raise ValueError(f"grid dims must be >= 4, got {self.dims}")

    @property
    def n(self):
        return self.ijk.shape[0]

    @property
    def origin(self):
        return self.anchor + self.lo * self.h

    @property
    def keys(self):
        k = self._cache.get("keys")
        if k is None:
            k = self.key_of(self.ijk)
            self._cache["keys"] = k
        return k

    def key_of(self, ijk):
        nx, ny, nz = self.dims
        ijk = np.asarray(ijk, dtype=np.int64)
        return (ijk[..., 0] * ny + ijk[..., 1]) * nz + ijk[..., 2]

    def coords(self, idx=None):
        ijk = self.ijk if idx is None else self.ijk[idx]
        return self.anchor + (self.lo + ijk).astype(np.float64) * self.h

    def lookup(self, ijk):
        """Row index of each local index triple, -1 where inactive."""
        ijk = np.asarray(ijk, dtype=np.int64)
        inside = np.all((ijk >= 0) & (ijk < np.asarray(self.dims)), axis=-1)
        key = self.key_of(np.where(inside[..., None], ijk, 0))
        keys = self.keys
        pos = np.searchsorted(keys, key)
        pos = np.minimum(pos, len(keys) - 1)
        found = inside & (keys[pos] == key)
        return np.where(found, pos, -1)

    def neighbor(self, offset, idx=None):
        """Rows of the neighbors at ``offset`` for rows ``idx`` (all rows if None)."""
        offset = tuple(int(o) for o in offset)
        if idx is None:
            tab = self._cache.get(("nb", offset))
            if tab is None:
                tab = self.lookup(self.ijk + np.array(offset))
                self._cache[("nb", offset)] = tab
            return tab
        return self.lookup(self.ijk[idx] + np.array(offset))

    def reinit_table(self):
        """(n, 3, 4) neighbor rows at offsets -2, -1, +1, +2 along each axis."""
        tab = self._cache.get("reinit")
        if tab is None:
            tab = np.empty((self.n, 3, 4), dtype=np.int64)
            for d in range(3):
                for c, s in enumerate((-2, -1, 1, 2)):
                    off = [0, 0, 0]
                    off[d] = s
                    tab[:, d, c] = self.neighbor(off)
            self._cache["reinit"] = tab
        return tab


@dataclass(frozen=True, eq=False)
class NodalField:
    """One scalar per active node; ``defined`` marks nodes carrying a value."""

    grid: NarrowBandGrid
    values: np.ndarray
    defined: np.ndarray = None

    def __post_init__(self):
        if self.values.shape != (self.grid.n,):
            raise ValueError("value count must equal active-node count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("nodal values must be finite")
        if self.defined is None:
            object.__setattr__(self, "defined", np.ones(self.grid.n, dtype=bool))


@dataclass(frozen=True, eq=False)
class NodalVectorField:
    grid: NarrowBandGrid
    values: np.ndarray
    degenerate: np.ndarray = None

    def __post_init__(self):
        if self.values.shape != (self.grid.n, 3):
            raise ValueError("vector field must have shape (n, 3)")
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(self.grid.n, dtype=bool))


def band_threshold(h, half_width):
    return half_width + 2.0 * h * SQRT3


def _index_box(lo_pt, hi_pt, h, anchor):
    lo = np.floor((np.asarray(lo_pt) - anchor) / h + 1e-9).astype(np.int64)
    hi = np.ceil((np.asarray(hi_pt) - anchor) / h - 1e-9).astype(np.int64)
    return lo, hi - lo + 1


def build_band_grid(surface, h, half_width=None, anchor=None, clip_center=None,
                    clip_radius=None, block=8):
    """Band grid holding every box node whose estimated |phi| is within the band.

    ``surface`` must provide ``bbox`` -> (lo, hi) and ``distance_estimate(x, limit)``
    returning a 1-Lipschitz lower estimate of |phi| (values above ``limit`` may
    be inf).  An optional clipping ball
    restricts the band to nodes within ``clip_radius`` of ``clip_center``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if half_width is None:
        half_width = 3.0 * h
    anchor = np.zeros(3) if anchor is None else np.asarray(anchor, dtype=np.float64)
    thr = band_threshold(h, half_width)
    lo_pt, hi_pt = surface.bbox
    lo, dims = _index_box(lo_pt, hi_pt, h, anchor)
    dims = tuple(int(d) for d in dims)

    nblk = [(d + block - 1) // block for d in dims]
    bi = np.array(list(np.ndindex(*nblk)), dtype=np.int64)
    centers_ijk = bi * block + (block - 1) / 2.0
    centers = anchor + (lo + centers_ijk) * h
    reach = thr + 0.5 * np.sqrt(3.0) * (block - 1) * h * (1 + 1e-9)
    keep = surface.distance_estimate(centers, limit=reach) <= reach
    if clip_center is not None:
        keep &= np.linalg.norm(centers - clip_center, axis=1) <= clip_radius + reach
    bi = bi[keep]
    if bi.size == 0:
        raise EmptyBandError("surface does not cross the bounding box")

    local = np.array(list(np.ndindex(block, block, block)), dtype=np.int64)
    chunks = []
    step = max(1, 400000 // local.shape[0])
    for s in range(0, bi.shape[0], step):
        ijk = (bi[s:s + step, None, :] * block + local[None, :, :]).reshape(-1, 3)
        ijk = ijk[np.all(ijk < np.array(dims), axis=1)]
        x = anchor + (lo + ijk) * h
        ok = surface.distance_estimate(x, limit=thr) <= thr
        if clip_center is not None:
            ok &= np.linalg.norm(x - clip_center, axis=1) <= clip_radius
        chunks.append(ijk[ok])
    ijk = np.concatenate(chunks)
    if ijk.shape[0] == 0:
        raise EmptyBandError("surface does not cross the bounding box")
    nx, ny, nz = dims
    key = (ijk[:, 0] * ny + ijk[:, 1]) * nz + ijk[:, 2]
    order = np.argsort(key, kind="stable")
    return NarrowBandGrid(h=float(h), lo=lo, dims=dims, ijk=ijk[order],
                          half_width=float(half_width), anchor=anchor)


def interface_nodes(grid, phi):
    """Rows with a sign change (phi*phi_nb <= 0) against an active axis neighbor."""
    values = phi.values if isinstance(phi, NodalField) else np.asarray(phi)
    hit = np.zeros(grid.n, dtype=bool)
    for off in AXIS_OFFSETS:
        nb = grid.neighbor(off)
        ok = nb >= 0
        hit[ok] |= values[ok] * values[nb[ok]] <= 0.0
    return np.flatnonzero(hit)


def stencils(grid, rows):
    """(m, 27) stencil rows for ``rows`` (-1 where missing) and a completeness mask."""
    rows = np.asarray(rows, dtype=np.int64)
    idx = grid.lookup(grid.ijk[rows][:, None, :] + STENCIL_OFFSETS[None, :, :])
    return idx, np.all(idx >= 0, axis=1)


def stencil27(grid, row):
    """The 27 rows of a node's stencil; raises when a neighbor is inactive."""
    idx, ok = stencils(grid, [row])
    if not ok[0]:
        missing = STENCIL_OFFSETS[idx[0] < 0]
        raise IncompleteStencilError(f"incomplete stencil at row {row}: missing offsets {missing.tolist()}")
    return idx[0]


def trilinear_interpolate(grid, field, points, strict=True):
    """Trilinear blend of nodal values at ``points`` (shape (3,) or (m, 3)).

    With ``strict`` a missing or undefined corner raises; otherwise NaN is
    returned for those points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if isinstance(field, NodalField):
        values, defined = field.values, field.defined
    else:
        values, defined = np.asarray(field), None
    t = (pts - grid.anchor) / grid.h - grid.lo
    base = np.floor(t).astype(np.int64)
    frac = t - base
    out = np.zeros(len(pts))
    bad = np.zeros(len(pts), dtype=bool)
    for c in product((0, 1), repeat=3):
        c = np.array(c)
        rows = grid.lookup(base + c)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        miss = rows < 0
        if defined is not None:
            miss |= ~defined[np.maximum(rows, 0)]
        bad |= miss
        out += w * values[np.maximum(rows, 0)]
    if bad.any():
        if strict:
            i = int(np.flatnonzero(bad)[0])
            raise LookupError(f"point {pts[i].tolist()} lies in a cell with an inactive or undefined corner")
        out[bad] = np.nan
    return out[0] if np.ndim(points) == 1 else out
