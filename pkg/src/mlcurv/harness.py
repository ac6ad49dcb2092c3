"""Geometric and convergence experiments, error metrics and report files."""
import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import _map, derived_rng
from .grid import build_band_grid, band_threshold
from .hybrid import SolverParams, ml_curvature
from .levelset import add_uniform_noise, evaluate_levelset, interface_geometry, reinitialize
from .surfaces import (AffineFrame, Ellipsoid, GaussianBump, Paraboloid, QuadricSphere, Sphere,
                       morph_spec)

log = logging.getLogger(__name__)

REPORT_VERSION = 1
GEOMETRIES = ("ellipsoid", "paraboloid", "gaussian", "morph")

ELLIPSOID_AXES = (1.65, 0.75, 0.2)
PARABOLOID = dict(a=25.6, b=12.8, c=0.5)
GAUSSIAN = dict(a=1.0, su2=1.302083e-1, sv2=1.446759e-2)
MORPH = dict(r_sp=0.06, target=(1.45, 0.51, 0.17), steps=51)


# ---------------------------------------------------------------- metrics

def metrics(target, pred, h):
    """MAE, MaxAE and RMSE in hk and kappa plus the relative L2 and Linf norms."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.size == 0:
        raise ValueError("metrics need at least one record")
    if t.shape != p.shape:
        raise ValueError("target and prediction shapes differ")
    e = np.abs(p - t)
    out = {"n": int(t.size), "mae_hk": float(e.mean()), "maxae_hk": float(e.max()),
           "rmse_hk": float(np.sqrt(np.mean(e * e)))}
    for k in ("mae", "maxae", "rmse"):
        out[k + "_k"] = out[k + "_hk"] / h
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = e / np.abs(t)
    out["rel_l2"] = float(np.sqrt(np.mean(rel * rel)))
    out["rel_linf"] = float(rel.max())
    return out


def improvement(base, hyb):
    """Baseline-over-hybrid ratios for every absolute metric."""
    out = {}
    for k in ("mae_hk", "maxae_hk", "rmse_hk", "rel_l2", "rel_linf"):
        out[k] = base[k] / hyb[k] if hyb[k] > 0 else float("inf")
    return out


def fit_line(x, y):
    """Least-squares slope, intercept and Pearson correlation of y against x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
    slope = sxy / sxx if sxx > 0 else 0.0
    rho = sxy / np.sqrt(sxx * syy) if sxx > 0 and syy > 0 else 1.0
    return {"slope": slope, "intercept": float(ym - slope * xm), "rho": float(rho)}


@dataclass
class ErrorReport:
    """Per-node records of one evaluated interface; aggregates are derived on demand."""

    name: str
    h: float
    x: np.ndarray
    saddle: np.ndarray
    hk_star: np.ndarray
    hk: np.ndarray
    hk_hybrid: np.ndarray
    meta: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.hk_star)

    @property
    def baseline(self):
        return metrics(self.hk_star, self.hk, self.h)

    @property
    def hybrid(self):
        return metrics(self.hk_star, self.hk_hybrid, self.h)

    @property
    def factors(self):
        return improvement(self.baseline, self.hybrid)

    def summary(self):
        return {"name": self.name, "h": self.h, "baseline": self.baseline, "hybrid": self.hybrid,
                "improvement": self.factors, **self.meta}


# ---------------------------------------------------------------- evaluation core

def prepare_field(surface, h, nu, eps_rnd, rng, anchor=None):
    grid = build_band_grid(surface, h, anchor=anchor)
    phi = evaluate_levelset(grid, surface)
    phi = add_uniform_noise(phi, eps_rnd, h, rng)
    return grid, reinitialize(grid, phi, nu)


def evaluate_interface(name, grid, phi, surface, models=None, params=None, select=None, meta=None,
                       target=None):
    """Baseline and hybrid hk at every usable interface node, paired on one node set.

    ``select(x, nearest_params)`` optionally masks nodes; ``target(x)`` overrides
    the exact hk* lookup (defaults to the curvature at the nearest surface point).
    """
    h = grid.h
    t0 = time.perf_counter()
    geo = interface_geometry(grid, phi)
    lo = grid.origin
    hi = lo + (np.asarray(grid.dims) - 1) * h
    use = geo.ok & np.all((geo.x - lo >= 2 * h) & (hi - geo.x >= 2 * h), axis=1)
    rows = np.flatnonzero(use)
    if rows.size == 0:
        raise ValueError(f"{name}: no usable interface node")
    x = geo.x[rows]
    if target is None:
        nparams, _ = surface.nearest_point(x)
        k_star, _ = surface.exact_curvatures(nparams)
    else:
        nparams, k_star = None, target(x)
    if select is not None:
        keep = select(x, nparams)
        rows, x, k_star = rows[keep], x[keep], np.asarray(k_star)[keep]
    t_base = time.perf_counter() - t0
    hk, h2kg = geo.hk[rows], geo.h2kg[rows]
    params = params or SolverParams()
    t1 = time.perf_counter()
    if models is None:
        hyb = hk.copy()
        saddle = h2kg < params.h2kg_ns_min
    else:
        ns, sd = models
        hyb, saddle, _ = ml_curvature(geo.phi[rows], geo.normals[rows], hk, h2kg, h, ns, sd, params)
    t_inf = time.perf_counter() - t1
    return ErrorReport(name, h, x, saddle, h * np.asarray(k_star, dtype=np.float64), hk, hyb, dict(meta or {}),
                       {"geometry_s": t_base, "inference_s": t_inf})


# ---------------------------------------------------------------- geometric tests

def _pad(h):
    return band_threshold(h, 3.0 * h) + 4.0 * h


def _uv_radius(bbox, frame):
    """Bound on |u|, |v| for surface points inside a world box."""
    lo, hi = bbox
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(3, -1).T
    return float(np.max(np.linalg.norm(corners - frame.shift, axis=1)))


def _cap_points(frame, u_lim, v_lim, q, n=256):
    """World points of a Monge patch over the ellipse (u/u_lim)^2 + (v/v_lim)^2 <= 1."""
    r = np.linspace(0.0, 1.0, n // 4)
    ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    R, A = np.meshgrid(r, ang, indexing="ij")
    u, v = (u_lim * R * np.cos(A)).ravel(), (v_lim * R * np.sin(A)).ravel()
    return frame.to_world(np.stack([u, v, q(u, v)], axis=1))


def _patch_box(frame, pts, h, rim):
    lo = pts.min(axis=0) - _pad(h) - rim
    hi = pts.max(axis=0) + _pad(h) + rim
    return lo, hi


def ellipsoid_case(h, frame, nu=10, eps_rnd=1e-4, rng=None, axes=ELLIPSOID_AXES):
    surf = Ellipsoid(*axes, frame=frame, pad=_pad(h))
    grid, phi = prepare_field(surf, h, nu, eps_rnd, rng)
    return surf, grid, phi, None


def paraboloid_case(h, frame, nu=10, eps_rnd=1e-4, rng=None, a=PARABOLOID["a"], b=PARABOLOID["b"],
                    c=PARABOLOID["c"]):
    probe = Paraboloid(a, b, frame=frame)
    pts = _cap_points(frame, np.sqrt(c / a), np.sqrt(c / b), probe.q)
    # the sampled rim misses at most the chord sagitta between neighbouring angles
    bbox = _patch_box(frame, pts, h, np.sqrt(c / b) * (1.0 - np.cos(np.pi / 256)))
    uv = _uv_radius(bbox, frame) + 2.0 * h
    surf = Paraboloid(a, b, frame=frame, bbox=bbox, uv_box=((-uv, -uv), (uv, uv)), h=h)
    grid, phi = prepare_field(surf, h, nu, eps_rnd, rng)

    def select(x, nparams):
        return surf.q(nparams[:, 0], nparams[:, 1]) <= c

    return surf, grid, phi, select


def gaussian_limits(a=GAUSSIAN["a"], su2=GAUSSIAN["su2"], sv2=GAUSSIAN["sv2"]):
    """Semi-axes of the limiting elliptical cylinder: zero-curvature abscissa plus one deviation."""
    g = GaussianBump(a, su2, sv2)
    return (g.zero_mean_curvature_abscissa(0) + np.sqrt(su2),
            g.zero_mean_curvature_abscissa(1) + np.sqrt(sv2))


def gaussian_case(h, frame, nu=10, eps_rnd=1e-4, rng=None, a=GAUSSIAN["a"], su2=GAUSSIAN["su2"],
                  sv2=GAUSSIAN["sv2"]):
    u_lim, v_lim = gaussian_limits(a, su2, sv2)
    probe = GaussianBump(a, su2, sv2, frame=frame)
    pts = _cap_points(frame, u_lim, v_lim, probe.q)
    bbox = _patch_box(frame, pts, h, u_lim * (1.0 - np.cos(np.pi / 256)))
    uv = _uv_radius(bbox, frame) + 2.0 * h
    surf = GaussianBump(a, su2, sv2, frame=frame, bbox=bbox, uv_box=((-uv, -uv), (uv, uv)), h=h)
    grid, phi = prepare_field(surf, h, nu, eps_rnd, rng)

    def select(x, nparams):
        # stencils count only when the node itself lies inside the limiting cylinder
        p = frame.to_local(x)
        return (p[:, 0] / u_lim) ** 2 + (p[:, 1] / v_lim) ** 2 <= 1.0

    return surf, grid, phi, select


def morph_case(h, frame, step, nu=10, eps_rnd=1e-4, rng=None, r_sp=MORPH["r_sp"], target=MORPH["target"],
               steps=MORPH["steps"]):
    surf = morph_spec(r_sp, target, step, frame=frame, steps=steps, pad=_pad(h))
    grid, phi = prepare_field(surf, h, nu, eps_rnd, rng)
    return surf, grid, phi, None


_CASES = {"ellipsoid": ellipsoid_case, "paraboloid": paraboloid_case, "gaussian": gaussian_case}


def _morph_item(args):
    step, eta, models, seed, params, nu, eps_rnd = args
    h = 2.0 ** -eta
    frame = AffineFrame.random(derived_rng(seed, 3, 0), h)
    rng = derived_rng(seed, 3, 1, step)
    surf, grid, phi, sel = morph_case(h, frame, step, nu, eps_rnd, rng)
    return evaluate_interface(f"morph_{step:02d}", grid, phi, surf, models, params, sel,
                              {"eta": eta, "seed": seed, "step": step, "n_band": grid.n})


def run_geometry_test(name, eta=6, models=None, seed=0, params=None, nu=10, eps_rnd=1e-4, steps=None,
                      workers=None):
    """Hybrid vs baseline on one test geometry under a random rigid motion.

    ``morph`` returns one report per step (all 52 shapes by default, or the
    listed ``steps``); the others return a single report.
    """
    if name not in GEOMETRIES:
        raise ValueError(f"unknown geometry {name!r}; choose from {GEOMETRIES}")
    h = 2.0 ** -eta
    if name == "morph":
        steps = range(MORPH["steps"] + 1) if steps is None else steps
        items = [(int(s), eta, models, seed, params, nu, eps_rnd) for s in steps]
        return _map(_morph_item, items, workers)
    frame = AffineFrame.random(derived_rng(seed, 3, 0), h)
    rng = derived_rng(seed, 3, 1)
    t0 = time.perf_counter()
    surf, grid, phi, sel = _CASES[name](h, frame, nu, eps_rnd, rng)
    t_setup = time.perf_counter() - t0
    rep = evaluate_interface(name, grid, phi, surf, models, params, sel,
                             {"eta": eta, "seed": seed, "n_band": grid.n})
    rep.timing["setup_s"] = t_setup
    return rep


# ---------------------------------------------------------------- convergence

@dataclass
class ConvergenceResult:
    """One row per resolution with baseline/hybrid metrics; orders between consecutive rows."""

    name: str
    labels: list
    baseline: list
    hybrid: list
    keys: tuple

    def orders(self, which, key):
        rows = self.baseline if which == "baseline" else self.hybrid
        v = np.array([r[key] for r in rows])
        step = np.log2(np.asarray(self.labels[1:], dtype=float) / np.asarray(self.labels[:-1], dtype=float))
        return (np.log(v[:-1] / v[1:]) / np.log(2.0) / step).tolist()

    def table(self):
        out = []
        for i, lab in enumerate(self.labels):
            row = {"resolution": lab}
            for which, rows in (("baseline", self.baseline), ("hybrid", self.hybrid)):
                for k in self.keys:
                    row[f"{which}_{k}"] = rows[i][k]
                    row[f"{which}_{k}_order"] = self.orders(which, k)[i - 1] if i else None
            out.append(row)
        return out


def _case1_trial(args):
    ratio_i, trial, R, models, seed, params, nu, eps_rnd = args
    eta = 6 + ratio_i - 1
    h = 2.0 ** -eta
    rng = derived_rng(seed, 4, ratio_i, trial)
    center = rng.uniform(-0.5 * h, 0.5 * h, size=3)
    surf = Sphere(R, center, pad=_pad(h))
    grid, phi = prepare_field(surf, h, nu, eps_rnd, rng)
    rep = evaluate_interface(f"sphere_{ratio_i}_{trial}", grid, phi, surf, models, params,
                             target=lambda x: np.full(len(x), 1.0 / R))
    return rep.hk_star, rep.hk, rep.hk_hybrid


def run_convergence_case1(R=2.0 / 64, ratios=(2, 4, 8, 16, 32), trials=100, models=None, seed=0,
                          params=None, nu=10, eps_rnd=1e-4, workers=None):
    """Randomly shifted spheres with R/h = 2^i at h = 2^-(5+i); relative norms pooled over trials."""
    base, hyb = [], []
    for ratio in ratios:
        i = int(round(np.log2(ratio)))
        if 2 ** i != ratio or i < 1:
            raise ValueError("ratios must be powers of two >= 2")
        items = [(i, t, R, models, seed, params, nu, eps_rnd) for t in range(trials)]
        res = _map(_case1_trial, items, workers)
        t = np.concatenate([r[0] for r in res])
        h = 2.0 ** -(6 + i - 1)
        base.append(metrics(t, np.concatenate([r[1] for r in res]), h))
        hyb.append(metrics(t, np.concatenate([r[2] for r in res]), h))
        log.info("case1 R/h=%d: baseline L2 %.4e, hybrid L2 %.4e", ratio, base[-1]["rel_l2"], hyb[-1]["rel_l2"])
    return ConvergenceResult("convergence1", list(ratios), base, hyb, ("rel_l2", "rel_linf"))


def run_convergence_case2(cells=(19, 38, 76, 152), models=None, radius=0.2222, nu=80, params=None):
    """Non-distance sphere field on [-1, 1]^3 with n^3 cells, reinitialized, errors in kappa."""
    base, hyb = [], []
    for n in cells:
        h = 2.0 / n
        surf = QuadricSphere(radius, bbox=(np.full(3, -1.0), np.full(3, 1.0)))
        grid = build_band_grid(surf, h, anchor=np.full(3, -1.0))
        phi = reinitialize(grid, evaluate_levelset(grid, surf), nu)
        rep = evaluate_interface(f"quadric_{n}", grid, phi, surf, models, params,
                                 target=lambda x: np.full(len(x), 1.0 / radius))
        base.append(rep.baseline)
        hyb.append(rep.hybrid)
        log.info("case2 %d^3: baseline MAE %.4e, hybrid MAE %.4e", n, base[-1]["mae_k"], hyb[-1]["mae_k"])
    return ConvergenceResult("convergence2", list(cells), base, hyb, ("mae_k", "maxae_k"))


# ---------------------------------------------------------------- report files

SUMMARY_COLUMNS = ("method", "n", "mae_hk", "mae_k", "mae_factor", "maxae_hk", "maxae_k", "maxae_factor",
                   "rmse_hk", "rmse_k", "rel_l2", "rel_linf")
RECORD_COLUMNS = ("x", "y", "z", "class", "hk_star", "hk", "hk_hybrid")


def _summary_rows(rep):
    b, m, f = rep.baseline, rep.hybrid, rep.factors
    rows = []
    for method, agg, fac in (("hybrid", m, None), ("baseline", b, f)):
        row = {k: agg[k] for k in SUMMARY_COLUMNS if k in agg}
        row["method"] = method
        row["mae_factor"] = "" if fac is None else fac["mae_hk"]
        row["maxae_factor"] = "" if fac is None else fac["maxae_hk"]
        rows.append(row)
    return rows


def _records(rep):
    for i in range(len(rep)):
        yield {"x": float(rep.x[i, 0]), "y": float(rep.x[i, 1]), "z": float(rep.x[i, 2]),
               "class": "sd" if rep.saddle[i] else "ns", "hk_star": float(rep.hk_star[i]),
               "hk": float(rep.hk[i]), "hk_hybrid": float(rep.hk_hybrid[i])}


def plotdata(rep):
    return {"version": REPORT_VERSION, "name": rep.name,
            "hybrid": {**fit_line(rep.hk_star, rep.hk_hybrid),
                       "pairs": np.stack([rep.hk_star, rep.hk_hybrid], axis=1).tolist()},
            "baseline": {**fit_line(rep.hk_star, rep.hk),
                         "pairs": np.stack([rep.hk_star, rep.hk], axis=1).tolist()}}


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                        for k in columns})


def emit_report(report, path, fmt="csv"):
    """Write a report as a summary CSV, per-node JSONL or correlation plot data.

    Convergence results support csv (the table with orders) and jsonl.
    Wall times stay out of the files so reruns are byte-identical.
    """
    if isinstance(report, ConvergenceResult):
        rows = report.table()
        if fmt == "csv":
            _write_csv(path, list(rows[0].keys()), rows)
        elif fmt == "jsonl":
            with open(path, "w") as f:
                for r in rows:
                    f.write(json.dumps(r, sort_keys=True) + "\n")
        else:
            raise ValueError(f"convergence reports support csv and jsonl, not {fmt!r}")
        return path
    if fmt == "csv":
        _write_csv(path, SUMMARY_COLUMNS, _summary_rows(report))
    elif fmt == "jsonl":
        with open(path, "w") as f:
            for r in _records(report):
                f.write(json.dumps(r) + "\n")
    elif fmt == "plotdata":
        with open(path, "w") as f:
            json.dump(plotdata(report), f)
            f.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_plotdata(path):
    with open(path) as f:
        return json.load(f)
