"""Analytic test surfaces with exact curvatures and nearest-point queries.

Conventions: phi < 0 inside spheres/ellipsoids and strictly above Monge
patches z = q(u, v); mean curvature is half the divergence of the normal
pointing into phi > 0.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernels

SQRT3 = np.sqrt(3.0)


def rotation_matrix(axis, angle):
    """Rodrigues rotation about a unit axis."""
    e = np.asarray(axis, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0.0, -e[2], e[1]], [e[2], 0.0, -e[0]], [-e[1], e[0], 0.0]])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def random_unit_axis(rng):
    """Unit vector from uniform azimuth and arccos-distributed polar angle."""
    theta = rng.uniform(0.0, 2.0 * np.pi)
    polar = np.arccos(2.0 * rng.uniform() - 1.0)
    return np.array([np.sin(polar) * np.cos(theta), np.sin(polar) * np.sin(theta), np.cos(polar)])


@dataclass(frozen=True, eq=False)
class AffineFrame:
    """Rigid motion: rotation by ``angle`` about ``axis``, then translation by ``shift``."""

    shift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    angle: float = 0.0

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        nrm = np.linalg.norm(axis)
        if not nrm > 0:
            raise ValueError("rotation axis must be nonzero")
        object.__setattr__(self, "axis", axis / nrm)
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=np.float64))
        object.__setattr__(self, "R", rotation_matrix(self.axis, float(self.angle)))

    @classmethod
    def random(cls, rng, h):
        """Angle in [0, 2pi), axis uniform on the sphere, shift in (-h/2, h/2)^3."""
        angle = rng.uniform(0.0, 2.0 * np.pi)
        axis = random_unit_axis(rng)
        shift = rng.uniform(-0.5 * h, 0.5 * h, size=3)
        return cls(shift=shift, axis=axis, angle=angle)

    def to_world(self, p):
        return np.asarray(p) @ self.R.T + self.shift

    def to_local(self, x):
        return (np.asarray(x) - self.shift) @ self.R

    def vec_to_world(self, v):
        return np.asarray(v) @ self.R.T

    def vec_to_local(self, v):
        return np.asarray(v) @ self.R


IDENTITY = AffineFrame()


def _box_of_local_points(frame, pts_local, pad):
    w = frame.to_world(pts_local)
    return w.min(axis=0) - pad, w.max(axis=0) + pad


class Surface:
    """Common interface: ``bbox``, ``levelset``, ``distance_estimate``,
    ``nearest_point``, ``exact_curvatures`` and ``curvatures_near``."""

    tag = "surface"
    frame = IDENTITY
    bbox = None

    def curvatures_near(self, x):
        """Exact (kappa, kappa_G) at the nearest surface points of world points x."""
        params, _ = self.nearest_point(x)
        return self.exact_curvatures(params)


class Sphere(Surface):
    tag = "sphere"

    def __init__(self, radius, center=(0.0, 0.0, 0.0), bbox=None, pad=0.0):
        if not radius > 0:
            raise ValueError("sphere radius must be positive")
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=np.float64)
        self.frame = AffineFrame(shift=self.center)
        r = self.radius + pad
        self.bbox = bbox if bbox is not None else (self.center - r, self.center + r)

    def levelset(self, x):
        return np.linalg.norm(np.asarray(x) - self.center, axis=-1) - self.radius

    def distance_estimate(self, x, limit=None):
        return np.abs(self.levelset(x))

    def nearest_point(self, x):
        d = np.asarray(x) - self.center
        nrm = np.linalg.norm(d, axis=-1, keepdims=True)
        unit = np.where(nrm > 0, d / np.where(nrm > 0, nrm, 1.0), np.array([0.0, 0.0, 1.0]))
        return unit * self.radius, nrm[..., 0] - self.radius

    def exact_curvatures(self, params):
        n = np.shape(params)[0] if np.ndim(params) > 1 else 1
        return np.full(n, 1.0 / self.radius), np.full(n, 1.0 / self.radius ** 2)


class QuadricSphere(Sphere):
    """Sphere described by the non-distance field |x - c|^2 - r^2."""

    tag = "quadric_sphere"

    def levelset(self, x):
        d = np.asarray(x) - self.center
        return np.einsum("...i,...i->...", d, d) - self.radius ** 2

    def distance_estimate(self, x, limit=None):
        return np.abs(np.linalg.norm(np.asarray(x) - self.center, axis=-1) - self.radius)


def ellipsoid_curvatures(a, b, c, p):
    """Mean and Gaussian curvature at surface points p (local frame)."""
    u, v, w = p[..., 0], p[..., 1], p[..., 2]
    s4 = u * u / a ** 4 + v * v / b ** 4 + w * w / c ** 4
    s6 = u * u / a ** 6 + v * v / b ** 6 + w * w / c ** 6
    k = (-s6 + s4 * (1 / a ** 2 + 1 / b ** 2 + 1 / c ** 2)) / (2.0 * s4 ** 1.5)
    kg = 1.0 / (a * a * b * b * c * c * s4 * s4)
    return k, kg


def _ellipsoid_root(e, y, iters=160):
    """Root t of sum (e_i y_i / (t + e_i^2))^2 = 1 with y[:, -1] > 0 (e descending)."""
    ek = e[-1]
    lo = -ek * ek + ek * y[:, -1]
    hi = e[0] * np.linalg.norm(y, axis=1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = np.sum((e * y / (mid[:, None] + e * e)) ** 2, axis=1) - 1.0
        pos = f > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def _ellipsoid_project(e, y):
    """Nearest point on the axis-aligned ellipsoid (e descending, y >= 0)."""
    x = np.zeros_like(y)
    k = len(e)
    last = y[:, -1] > 0
    if last.any():
        t = _ellipsoid_root(e, y[last])
        x[last] = e * e * y[last] / (t[:, None] + e * e)
    rest = np.flatnonzero(~last)
    if rest.size == 0:
        return x
    yr = y[rest]
    if k == 1:
        x[rest, 0] = e[0]
        return x
    d = e[:-1] ** 2 - e[-1] ** 2
    xin = e[:-1] ** 2 * yr[:, :-1] / d
    rad = 1.0 - np.sum((xin / e[:-1]) ** 2, axis=1)
    inner = rad > 0
    sub = np.zeros_like(yr)
    sub[inner, :-1] = xin[inner]
    sub[inner, -1] = e[-1] * np.sqrt(rad[inner])
    if (~inner).any():
        sub[~inner, :-1] = _ellipsoid_project(e[:-1], yr[~inner, :-1])
    x[rest] = sub
    return x


class Ellipsoid(Surface):
    tag = "ellipsoid"

    def __init__(self, a, b, c, frame=IDENTITY, bbox=None, pad=0.0):
        axes = np.array([a, b, c], dtype=np.float64)
        if np.any(axes <= 0):
            raise ValueError("semi-axes must be positive")
        if len(set(axes.tolist())) < 3:
            raise ValueError("semi-axes must be distinct (use Sphere for equal axes)")
        self.axes = axes
        self.frame = frame
        self._order = np.argsort(-axes, kind="stable")
        corners = np.array(np.meshgrid(*[[-s, s] for s in axes], indexing="ij")).reshape(3, -1).T
        self.bbox = bbox if bbox is not None else _box_of_local_points(frame, corners, pad)

    def _project_local(self, p):
        o = self._order
        e = self.axes[o]
        y = np.abs(p[:, o])
        xs = _ellipsoid_project(e, y)
        out = np.empty_like(xs)
        out[:, o] = xs
        return out * np.where(p < 0, -1.0, 1.0)

    def nearest_point(self, x):
        p = np.atleast_2d(self.frame.to_local(x))
        q = self._project_local(p)
        inside = np.sum((p / self.axes) ** 2, axis=1) < 1.0
        d = np.linalg.norm(p - q, axis=1)
        return q, np.where(inside, -d, d)

    def levelset(self, x):
        return self.nearest_point(x)[1]

    def distance_estimate(self, x, limit=None):
        return np.abs(self.levelset(x))

    def exact_curvatures(self, params):
        a, b, c = self.axes
        return ellipsoid_curvatures(a, b, c, np.atleast_2d(params))


def morph_spec(r_sp, target, s, frame=IDENTITY, steps=51, pad=0.0):
    """Step s of the linear morph from a sphere of radius r_sp to an ellipsoid."""
    if not 0 <= s <= steps:
        raise ValueError(f"morph step must lie in [0, {steps}]")
    f = s / steps
    axes = (1.0 - f) * r_sp + f * np.asarray(target, dtype=np.float64)
    if s == 0:
        return Sphere(r_sp, center=frame.shift, pad=pad)
    return Ellipsoid(*axes, frame=frame, pad=pad)


def monge_curvatures(kind, prm, u, v):
    """Mean and Gaussian curvature of z = q(u, v) with phi < 0 above the graph."""
    q, qu, qv, quu, quv, qvv = kernels._kernels_py.monge_eval(kind, np.asarray(prm, dtype=float), u, v)
    w2 = 1.0 + qu * qu + qv * qv
    k = ((1.0 + qv * qv) * quu - 2.0 * qu * qv * quv + (1.0 + qu * qu) * qvv) / (2.0 * w2 ** 1.5)
    kg = (quu * qvv - quv * quv) / (w2 * w2)
    return k, kg


class MongePatch(Surface):
    """Graph z = q(u, v) in a local frame.

    Exact distances come from damped Newton seeded at the nearest vertex of a
    parameter lattice (spacing ``h/2``) over ``uv_box``; the lattice distance
    minus its covering radius is the 1-Lipschitz band estimate.
    """

    kind = None

    def __init__(self, prm, frame=IDENTITY, bbox=None, uv_box=None, h=None, exact_shell=None):
        self.prm = np.asarray(prm, dtype=np.float64)
        self.frame = frame
        self.bbox = bbox
        self.uv_box = uv_box
        self.h = h
        self.exact_shell = exact_shell if exact_shell is not None else (
            3.0 * SQRT3 * h if h is not None else np.inf)
        self._tree = None

    def q(self, u, v):
        return kernels._kernels_py.monge_eval(self.kind, self.prm, np.asarray(u, float), np.asarray(v, float))[0]

    def exact_curvatures(self, params):
        params = np.atleast_2d(params)
        return monge_curvatures(self.kind, self.prm, params[:, 0], params[:, 1])

    def _lattice(self):
        if self._tree is None:
            if self.uv_box is None or self.h is None:
                raise ValueError("patch needs uv_box and h for lattice seeding")
            (u0, v0), (u1, v1) = self.uv_box
            du = 0.5 * self.h
            nu = int(np.ceil((u1 - u0) / du)) + 1
            nv = int(np.ceil((v1 - v0) / du)) + 1
            us = u0 + du * np.arange(nu)
            vs = v0 + du * np.arange(nv)
            U, V = np.meshgrid(us, vs, indexing="ij")
            Q = self.q(U, V)
            P = np.stack([U, V, Q], axis=-1)
            diag1 = np.linalg.norm(P[1:, 1:] - P[:-1, :-1], axis=-1)
            diag2 = np.linalg.norm(P[1:, :-1] - P[:-1, 1:], axis=-1)
            self._rho = 0.5 * max(diag1.max(), diag2.max()) * 1.01
            self._uv = np.stack([U.ravel(), V.ravel()], axis=1)
            self._tree = cKDTree(P.reshape(-1, 3))
        return self._tree

    @property
    def covering_radius(self):
        self._lattice()
        return self._rho

    def _vertex_query(self, p_local, bound=np.inf):
        tree = self._lattice()
        d, i = tree.query(p_local, distance_upper_bound=bound)
        return d, i

    def distance_estimate(self, x, limit=None):
        """Lower bound on |phi|; values beyond ``limit`` may come back as inf."""
        p = np.atleast_2d(self.frame.to_local(x))
        self._lattice()
        bound = np.inf if limit is None else limit + self._rho
        d, _ = self._vertex_query(p, bound * (1 + 1e-12))
        return np.maximum(d - self._rho, 0.0)

    def _side(self, p):
        return np.where(p[:, 2] > self.q(p[:, 0], p[:, 1]), -1.0, 1.0)

    def _newton(self, p, seed_uv):
        X = np.ascontiguousarray(p[:, 0])
        Y = np.ascontiguousarray(p[:, 1])
        Z = np.ascontiguousarray(p[:, 2])
        u, v, its, ok = kernels.monge_newton(self.kind, self.prm, X, Y, Z,
                                             np.ascontiguousarray(seed_uv[:, 0]),
                                             np.ascontiguousarray(seed_uv[:, 1]))
        return u, v, ok

    def nearest_point(self, x):
        """Parameters (u, v) of the nearest surface point and the signed distance."""
        p = np.atleast_2d(self.frame.to_local(x))
        _, i = self._vertex_query(p)
        u, v, ok = self._newton(p, self._uv[i])
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise ArithmeticError(f"nearest-point search did not converge for query {bad}")
        d = np.sqrt((p[:, 0] - u) ** 2 + (p[:, 1] - v) ** 2 + (p[:, 2] - self.q(u, v)) ** 2)
        return np.stack([u, v], axis=1), self._side(p) * d

    def levelset(self, x):
        """Exact signed distance inside the exact shell, lattice distance beyond."""
        p = np.atleast_2d(self.frame.to_local(x))
        self._lattice()
        dv, i = self._vertex_query(p, (self.exact_shell + self._rho) * (1 + 1e-9))
        far = np.flatnonzero(~np.isfinite(dv))
        if far.size:
            dv[far], i[far] = self._vertex_query(p[far])
        sign = self._side(p)
        out = sign * dv
        near = np.flatnonzero(dv - self._rho <= self.exact_shell)
        if near.size:
            pn = p[near]
            u, v, ok = self._newton(pn, self._uv[i[near]])
            if not ok.all():
                bad = int(near[np.flatnonzero(~ok)[0]])
                raise ArithmeticError(f"nearest-point search did not converge at node {bad}")
            d = np.sqrt((pn[:, 0] - u) ** 2 + (pn[:, 1] - v) ** 2 + (pn[:, 2] - self.q(u, v)) ** 2)
            out[near] = sign[near] * d
        return out


class Sinusoid(MongePatch):
    """q = A sin(w1 u) sin(w2 v)."""

    tag = "sinusoid"
    kind = kernels.SINUSOID

    def __init__(self, A, w1, w2, **kw):
        super().__init__((A, w1, w2), **kw)
        self.A, self.w1, self.w2 = float(A), float(w1), float(w2)


class HypParaboloid(MongePatch):
    """q = a u^2 - b v^2."""

    tag = "hyp_paraboloid"
    kind = kernels.HYP_PARABOLOID

    def __init__(self, a, b, **kw):
        if not (a > 0 and b > 0):
            raise ValueError("hyperbolic paraboloid needs a, b > 0")
        super().__init__((a, b, 0.0), **kw)
        self.a, self.b = float(a), float(b)


class Paraboloid(MongePatch):
    """q = a u^2 + b v^2."""

    tag = "paraboloid"
    kind = kernels.PARABOLOID

    def __init__(self, a, b, **kw):
        if not (a > 0 and b > 0):
            raise ValueError("paraboloid needs a, b > 0")
        super().__init__((a, b, 0.0), **kw)
        self.a, self.b = float(a), float(b)


class GaussianBump(MongePatch):
    """q = a exp(-(u^2/su2 + v^2/sv2)/2)."""

    tag = "gaussian"
    kind = kernels.GAUSSIAN

    def __init__(self, a, su2, sv2, **kw):
        if su2 == 0 or sv2 == 0:
            raise ValueError("Gaussian variances must be nonzero")
        super().__init__((a, su2, sv2), **kw)
        self.a, self.su2, self.sv2 = float(a), float(su2), float(sv2)

    def zero_mean_curvature_abscissa(self, axis=0, tol=1e-12):
        """Positive root of kappa(s, 0) = 0 (axis 0) or kappa(0, s) = 0 (axis 1)."""
        s2 = self.su2 if axis == 0 else self.sv2

        def kap(s):
            uv = (s, 0.0) if axis == 0 else (0.0, s)
            return self.exact_curvatures(np.array([uv]))[0][0]

        lo, hi = 0.0, np.sqrt(s2)
        while kap(hi) < 0:
            lo, hi = hi, 2.0 * hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if kap(mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol:
                break
        # Newton polish with a central-difference slope
        s = 0.5 * (lo + hi)
        for _ in range(5):
            d = 1e-7 * max(s, 1e-3)
            slope = (kap(s + d) - kap(s - d)) / (2 * d)
            if slope == 0:
                break
            step = kap(s) / slope
            if not lo <= s - step <= hi:
                break
            s -= step
            if abs(step) < tol:
                break
        return s
