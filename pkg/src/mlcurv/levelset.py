"""Level-set operators on a narrow-band grid."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import (CENTER, NodalField, NodalVectorField, interface_nodes, stencils,
                   trilinear_interpolate)

DEGENERATE_GRAD = 1e-12
CFL = 0.45


def evaluate_levelset(grid, surface):
    return NodalField(grid, np.asarray(surface.levelset(grid.coords()), dtype=np.float64))


def add_uniform_noise(phi, eps_rnd, h, rng_seed):
    """Add eps_rnd * U(-h, h) independently at every node."""
    if eps_rnd < 0:
        raise ValueError("eps_rnd must be nonnegative")
    if eps_rnd == 0:
        return phi
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    noise = eps_rnd * rng.uniform(-h, h, size=phi.values.shape)
    return NodalField(phi.grid, phi.values + noise)


def _minmod(a, b):
    return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _crossing_distance(f0, f1, fxx, h):
    """Distance from a node (value f0) toward its neighbor (f1) at which the
    quadratic with second derivative fxx through both values vanishes."""
    lin = h * f0 / (f0 - f1)
    c0, c2 = f0, 0.5 * fxx
    c1 = (f1 - f0) / h - c2 * h
    quad = np.abs(c2) * h * h > 1e-12 * (np.abs(f0) + np.abs(f1))
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = np.sqrt(np.maximum(c1 * c1 - 4.0 * c2 * c0, 0.0))
        safe_c2 = np.where(quad, c2, 1.0)
        r1 = (-c1 + disc) / (2.0 * safe_c2)
        r2 = (-c1 - disc) / (2.0 * safe_c2)
    ok1 = quad & (r1 > 0) & (r1 <= h)
    ok2 = quad & (r2 > 0) & (r2 <= h)
    pick = np.where(ok1 & ok2, np.where(np.abs(r1 - lin) < np.abs(r2 - lin), r1, r2),
                    np.where(ok1, r1, np.where(ok2, r2, lin)))
    return np.clip(pick, 1e-12 * h, h)


def subcell_distances(grid, phi0):
    """Distances to the interface of phi0 along +/- each axis (0 = no crossing)."""
    h = grid.h
    nb = grid.reinit_table()
    n = grid.n
    sub_p = np.zeros((n, 3))
    sub_m = np.zeros((n, 3))
    for d in range(3):
        m2, m1, p1, p2 = (nb[:, d, c] for c in range(4))
        both = (m1 >= 0) & (p1 >= 0)
        d2 = np.zeros(n)
        d2[both] = (phi0[p1[both]] - 2.0 * phi0[both] + phi0[m1[both]]) / (h * h)
        has_d2 = both
        for sign, near, out in ((1, p1, sub_p), (-1, m1, sub_m)):
            cross = np.flatnonzero((near >= 0) & (phi0 * phi0[np.maximum(near, 0)] < 0.0))
            if cross.size == 0:
                continue
            j = near[cross]
            fxx = np.where(has_d2[cross] & has_d2[j], _minmod(d2[cross], d2[j]), 0.0)
            out[cross, d] = _crossing_distance(phi0[cross], phi0[j], fxx, h)
    return sub_p, sub_m


def reinitialize(grid, phi, nu, backend=None):
    """nu TVD-RK2 pseudo-time steps of phi_t + sgn(phi0)(|grad phi| - 1) = 0."""
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    values = np.ascontiguousarray(phi.values, dtype=np.float64)
    if nu == 0:
        return NodalField(grid, values.copy())
    impl = kernels.backend_module(backend)
    h = grid.h
    dt = CFL * h
    sgn = np.ascontiguousarray(values / np.sqrt(values * values + h * h))
    nb = np.ascontiguousarray(grid.reinit_table())
    sub_p, sub_m = subcell_distances(grid, values)
    sub_p, sub_m = np.ascontiguousarray(sub_p), np.ascontiguousarray(sub_m)
    cur = values.copy()
    for _ in range(nu):
        one = cur + dt * impl.reinit_rhs(cur, sgn, nb, sub_p, sub_m, h)
        two = one + dt * impl.reinit_rhs(one, sgn, nb, sub_p, sub_m, h)
        cur = 0.5 * (cur + two)
    return NodalField(grid, cur)


def _offset_rows(grid, rows, offsets):
    return grid.lookup(grid.ijk[rows][:, None, :] + np.asarray(offsets)[None, :, :])


_AX = np.eye(3, dtype=np.int64)


def gradient_at(grid, values, rows):
    """Central-difference gradient at ``rows``; NaN rows lack an axis neighbor."""
    rows = np.asarray(rows, dtype=np.int64)
    offs = np.concatenate([_AX, -_AX])
    nb = _offset_rows(grid, rows, offs)
    ok = np.all(nb >= 0, axis=1)
    f = values[np.maximum(nb, 0)]
    g = (f[:, :3] - f[:, 3:]) / (2.0 * grid.h)
    g[~ok] = np.nan
    return g


def normals_at(grid, values, rows):
    """(gradient, unit normal, bad) at rows; bad marks degenerate or undefined."""
    g = gradient_at(grid, values, rows)
    nrm = np.linalg.norm(g, axis=1)
    bad = ~np.isfinite(nrm) | (nrm < DEGENERATE_GRAD)
    nhat = np.where(bad[:, None], 0.0, g / np.where(bad, 1.0, nrm)[:, None])
    return g, nhat, bad


def gradient_and_normals(grid, phi):
    """(grad phi, unit normals) over the band; degenerate or undefined rows are flagged."""
    values = phi.values if isinstance(phi, NodalField) else phi
    g, nhat, bad = normals_at(grid, values, np.arange(grid.n))
    g = np.where(np.isfinite(g), g, 0.0)
    return NodalVectorField(grid, g, bad), NodalVectorField(grid, nhat, bad)


# 18 offsets for first, second and mixed central differences
_DIFF_OFFSETS = np.array([
    [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
    [1, 1, 0], [1, -1, 0], [-1, 1, 0], [-1, -1, 0],
    [1, 0, 1], [1, 0, -1], [-1, 0, 1], [-1, 0, -1],
    [0, 1, 1], [0, 1, -1], [0, -1, 1], [0, -1, -1],
], dtype=np.int64)


def derivatives_at(grid, values, rows):
    """First and second central differences at rows; ok marks complete neighborhoods."""
    rows = np.asarray(rows, dtype=np.int64)
    nb = _offset_rows(grid, rows, _DIFF_OFFSETS)
    ok = np.all(nb >= 0, axis=1)
    f = values[np.maximum(nb, 0)]
    c = values[rows]
    h = grid.h
    fx = (f[:, 0] - f[:, 1]) / (2 * h)
    fy = (f[:, 2] - f[:, 3]) / (2 * h)
    fz = (f[:, 4] - f[:, 5]) / (2 * h)
    fxx = (f[:, 0] - 2 * c + f[:, 1]) / (h * h)
    fyy = (f[:, 2] - 2 * c + f[:, 3]) / (h * h)
    fzz = (f[:, 4] - 2 * c + f[:, 5]) / (h * h)
    fxy = (f[:, 6] - f[:, 7] - f[:, 8] + f[:, 9]) / (4 * h * h)
    fxz = (f[:, 10] - f[:, 11] - f[:, 12] + f[:, 13]) / (4 * h * h)
    fyz = (f[:, 14] - f[:, 15] - f[:, 16] + f[:, 17]) / (4 * h * h)
    return (fx, fy, fz, fxx, fyy, fzz, fxy, fxz, fyz), ok


def curvatures_from_derivatives(d):
    """Mean and Gaussian curvature from central differences; guarded denominators."""
    fx, fy, fz, fxx, fyy, fzz, fxy, fxz, fyz = d
    g2 = fx * fx + fy * fy + fz * fz
    g3 = g2 ** 1.5
    flag = ~(g3 >= DEGENERATE_GRAD)
    safe3 = np.where(flag, 1.0, g3)
    k = (fx * fx * (fyy + fzz) + fy * fy * (fxx + fzz) + fz * fz * (fxx + fyy)) / (2.0 * safe3) \
        - (fx * fy * fxy + fx * fz * fxz + fy * fz * fyz) / safe3
    # adjoint of the Hessian contracted with the gradient, over |grad|^4
    axx = fyy * fzz - fyz * fyz
    ayy = fxx * fzz - fxz * fxz
    azz = fxx * fyy - fxy * fxy
    axy = fxz * fyz - fxy * fzz
    axz = fxy * fyz - fxz * fyy
    ayz = fxy * fxz - fyz * fxx
    num = fx * fx * axx + fy * fy * ayy + fz * fz * azz + 2.0 * (fx * fy * axy + fx * fz * axz + fy * fz * ayz)
    kg = num / np.where(flag, 1.0, g2 * g2)
    return np.where(flag, 0.0, k), np.where(flag, 0.0, kg), flag


def curvatures_at(grid, values, rows):
    """(kappa, kappa_G, ok) at rows; ok is False where the neighborhood is
    incomplete or the gradient is degenerate."""
    d, ok = derivatives_at(grid, values, rows)
    k, kg, flag = curvatures_from_derivatives(d)
    ok = ok & ~flag
    return np.where(ok, k, 0.0), np.where(ok, kg, 0.0), ok


def _nodal(grid, phi, which):
    values = phi.values if isinstance(phi, NodalField) else phi
    rows = np.arange(grid.n)
    k, kg, ok = curvatures_at(grid, values, rows)
    return NodalField(grid, k if which == 0 else kg, ok)


def mean_curvature_nodal(grid, phi):
    return _nodal(grid, phi, 0)


def gaussian_curvature_nodal(grid, phi):
    return _nodal(grid, phi, 1)


def project_to_interface(x_n, phi_n, n_hat):
    """x_n - phi_n * n_hat (vectorized over leading dimensions)."""
    return np.asarray(x_n) - np.asarray(phi_n)[..., None] * np.asarray(n_hat)


@dataclass
class InterfaceGeometry:
    """Per interface node: stencil data plus curvatures interpolated at x_Gamma.

    ``ok`` is False where the stencil is incomplete, a stencil normal is
    degenerate, or x_Gamma left the region with curvature values; in the last
    case ``hk``/``h2kg`` hold the nodal values instead (``fallback``).
    """

    rows: np.ndarray
    stencil: np.ndarray
    complete: np.ndarray
    phi: np.ndarray
    normals: np.ndarray
    x: np.ndarray
    x_gamma: np.ndarray
    hk: np.ndarray
    h2kg: np.ndarray
    hk_nodal: np.ndarray
    h2kg_nodal: np.ndarray
    fallback: np.ndarray
    ok: np.ndarray


def interface_geometry(grid, phi, rows=None):
    values = phi.values if isinstance(phi, NodalField) else np.asarray(phi)
    h = grid.h
    if rows is None:
        rows = interface_nodes(grid, values)
    rows = np.asarray(rows, dtype=np.int64)
    st, complete = stencils(grid, rows)
    need = np.unique(st[complete].ravel()) if complete.any() else np.zeros(0, dtype=np.int64)
    # normals at every stencil node
    _, nhat_need, bad_need = normals_at(grid, values, need)
    pos = np.full(grid.n, -1, dtype=np.int64)
    pos[need] = np.arange(need.size)
    m = rows.size
    normals = np.zeros((m, 27, 3))
    phis = np.zeros((m, 27))
    degenerate = np.zeros(m, dtype=bool)
    if complete.any():
        sp = pos[st[complete]]
        normals[complete] = nhat_need[sp]
        phis[complete] = values[st[complete]]
        degenerate[complete] = bad_need[sp].any(axis=1)
    # nodal curvatures on the stencil nodes
    k_need, kg_need, ok_need = curvatures_at(grid, values, need)
    kfield = np.zeros(grid.n)
    kgfield = np.zeros(grid.n)
    defined = np.zeros(grid.n, dtype=bool)
    kfield[need], kgfield[need], defined[need] = k_need, kg_need, ok_need
    x = grid.coords(rows)
    center_n = normals[:, CENTER]
    x_gamma = project_to_interface(x, values[rows], center_n)
    use = complete & ~degenerate
    hk = np.full(m, np.nan)
    h2kg = np.full(m, np.nan)
    if use.any():
        hk[use] = h * trilinear_interpolate(grid, NodalField(grid, kfield, defined), x_gamma[use], strict=False)
        h2kg[use] = h * h * trilinear_interpolate(grid, NodalField(grid, kgfield, defined), x_gamma[use], strict=False)
    hk_nodal = np.where(defined[rows], h * kfield[rows], np.nan)
    h2kg_nodal = np.where(defined[rows], h * h * kgfield[rows], np.nan)
    fallback = use & ~np.isfinite(hk)
    hk = np.where(fallback, hk_nodal, hk)
    h2kg = np.where(fallback, h2kg_nodal, h2kg)
    ok = use & np.isfinite(hk) & np.isfinite(h2kg)
    return InterfaceGeometry(rows=rows, stencil=st, complete=complete, phi=phis, normals=normals,
                             x=x, x_gamma=x_gamma, hk=hk, h2kg=h2kg, hk_nodal=hk_nodal,
                             h2kg_nodal=h2kg_nodal, fallback=fallback, ok=ok)
