"""Randomized training-set construction from spheres, sinusoids and
hyperbolic paraboloids, plus balancing, merging, splitting and dataset IO."""
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import EmptyBandError, build_band_grid
from .levelset import add_uniform_noise, evaluate_levelset, interface_geometry, reinitialize
from .packets import N_FEATURES, DataPacket, generate_std_packets, negative_normalize
from .surfaces import AffineFrame, HypParaboloid, Sinusoid, Sphere, random_unit_axis

log = logging.getLogger(__name__)

H2KG_NS_MIN = -7e-6
MAGIC = b"C3DS"
FORMAT_VERSION = 1
CLASS_CODES = {"ns": 0, "sd": 1}
_HEADER = struct.Struct("<4sIBIdQ")


class BalanceError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def ease(t, a_e, A_e, b_e, B_e):
    """Sine blend from A_e (t <= a_e) to B_e (t >= b_e)."""
    if not a_e < b_e:
        raise ValueError("ease needs a_e < b_e")
    if not A_e < B_e:
        raise ValueError("ease needs A_e < B_e")
    t = np.asarray(t, dtype=np.float64)
    s = np.clip((t - a_e) / (b_e - a_e), 0.0, 1.0)
    out = A_e + 0.5 * (B_e - A_e) * (1.0 + np.sin(np.pi * s - 0.5 * np.pi))
    out = np.where(t < a_e, A_e, np.where(t > b_e, B_e, out))
    return out if out.ndim else float(out)


def rand_linspace(lo, hi, n, rng=None, jitter=True):
    """n bin centers over [lo, hi], each moved uniformly within its own bin."""
    if n < 1:
        raise ValueError("rand_linspace needs n >= 1")
    w = (hi - lo) / n
    pos = np.arange(n) + 0.5
    if jitter:
        pos = pos + rng.uniform(-0.5, 0.5, size=n)
    return lo + pos * w


def round_h(p, h):
    """Nearest multiple of h per component, ties toward +inf."""
    return np.floor(np.asarray(p, dtype=np.float64) / h + 0.5) * h


def build_random_basis(rng):
    """Orthonormal basis (rows) from three standard-normal draws by modified Gram-Schmidt."""
    while True:
        V = rng.standard_normal((3, 3))
        ok = True
        for i in range(3):
            for j in range(i):
                V[i] -= (V[i] @ V[j]) * V[j]
            nrm = np.linalg.norm(V[i])
            if nrm < 1e-8:
                ok = False
                break
            V[i] /= nrm
        if ok:
            return V


def derived_rng(seed, *index):
    """Independent generator for one work item: a pure function of (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(i) for i in index]))


def _map(fn, items, workers):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- balancing

def _bin_index(keys, nbins, lo, hi):
    keys = np.asarray(keys, dtype=np.float64)
    if hi <= lo:
        return np.zeros(keys.shape, dtype=np.int64)
    b = np.floor((keys - lo) / (hi - lo) * nbins).astype(np.int64)
    return np.clip(b, 0, nbins - 1)


def subsample_cap(counts):
    """min(median/3, 1.5 min) over the nonempty bins, as a float."""
    pos = np.asarray(counts)[np.asarray(counts) > 0]
    if pos.size == 0:
        return 0.0
    return min(float(np.median(pos)) / 3.0, 1.5 * float(pos.min()))


def histogram_subsample(keys, nbins, rng):
    """Indices (sorted) kept after capping every bin, and the balance record.

    Bins are equal-width over [min(keys), max(keys)]; any bin holding more
    than floor(cap) members loses a uniformly random subset of them.
    """
    keys = np.asarray(keys, dtype=np.float64)
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64), None
    lo, hi = float(keys.min()), float(keys.max())
    b = _bin_index(keys, nbins, lo, hi)
    counts = np.bincount(b, minlength=nbins)
    cap = subsample_cap(counts)
    icap = int(math.floor(cap * (1.0 + 1e-12)))
    keep = []
    for k in np.flatnonzero(counts):
        members = np.flatnonzero(b == k)
        if members.size > icap:
            members = np.sort(rng.choice(members, size=icap, replace=False))
        keep.append(members)
    keep = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    return keep, {"bins": int(nbins), "lo": lo, "hi": hi, "cap": cap}


def check_balance(targets, record):
    """Raise BalanceError if any bin of |targets| exceeds the recorded cap."""
    if record is None:
        return
    keys = np.abs(np.asarray(targets, dtype=np.float32)).astype(np.float64)
    if keys.size == 0:
        return
    if keys.min() < record["lo"] or keys.max() > record["hi"]:
        raise BalanceError("targets fall outside the recorded histogram range")
    counts = np.bincount(_bin_index(keys, record["bins"], record["lo"], record["hi"]),
                         minlength=record["bins"])
    icap = int(math.floor(record["cap"] * (1.0 + 1e-12)))
    over = np.flatnonzero(counts > icap)
    if over.size:
        raise BalanceError(f"bin {int(over[0])} holds {int(counts[over[0]])} > cap {icap}")


# ---------------------------------------------------------------- dataset

@dataclass
class Dataset:
    """Learning tuples: f32 features (n, 110) and targets (n,) of one class."""

    features: np.ndarray
    targets: np.ndarray
    cls: str
    eta: int
    h: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cls not in CLASS_CODES:
            raise ValueError(f"unknown class {self.cls!r}")
        self.features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float32).reshape(-1, N_FEATURES))
        self.targets = np.ascontiguousarray(np.asarray(self.targets, dtype=np.float32).ravel())
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("feature and target counts differ")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset entries must be finite")

    def __len__(self):
        return self.targets.shape[0]

    def take(self, idx, **meta):
        m = dict(self.meta)
        m.update(meta)
        return Dataset(self.features[idx], self.targets[idx], self.cls, self.eta, self.h, m)

    @property
    def packets(self):
        return DataPacket.from_features(self.features.astype(np.float64))

    def balanced(self, nbins, rng, **meta):
        keep, rec = histogram_subsample(np.abs(self.targets), nbins, rng)
        return self.take(keep, balance=rec, **meta)


def empty_dataset(cls, eta, h, **meta):
    return Dataset(np.zeros((0, N_FEATURES), np.float32), np.zeros(0, np.float32), cls, eta, h, meta)


def concat(parts, cls, eta, h, **meta):
    parts = [p for p in parts if p is not None]
    if not parts:
        return empty_dataset(cls, eta, h, **meta)
    return Dataset(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                   cls, eta, h, meta)


def write_dataset(ds, path):
    """Binary file plus a JSON sidecar with the metadata; verifies bin caps first."""
    check_balance(ds.targets, ds.meta.get("balance"))
    path = Path(path)
    rows = np.concatenate([ds.features, ds.targets[:, None]], axis=1).astype("<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, CLASS_CODES[ds.cls], int(ds.eta), float(ds.h), len(ds)))
        f.write(rows.tobytes())
    meta = dict(ds.meta, cls=ds.cls, eta=int(ds.eta), h=float(ds.h), rows=len(ds))
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_dataset(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, code, eta, h, n = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise ValueError(f"{path}: not a dataset file (magic {magic!r}, version {version})")
    width = N_FEATURES + 1
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size != n * width:
        raise ValueError(f"{path}: expected {n} rows, found {body.size / width:g}")
    body = body.reshape(n, width)
    side = Path(str(path) + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    for k in ("cls", "eta", "h", "rows"):
        meta.pop(k, None)
    cls = {v: k for k, v in CLASS_CODES.items()}[code]
    return Dataset(body[:, :N_FEATURES], body[:, N_FEATURES], cls, eta, h, meta)


def write_csv(ds, path):
    names = [f"phi{i}" for i in range(27)] + [f"n{i}{c}" for i in range(27) for c in "xyz"] + ["hk", "h2kg", "target"]
    rows = np.concatenate([ds.features, ds.targets[:, None]], axis=1)
    np.savetxt(path, rows, delimiter=",", header=",".join(names), comments="", fmt="%.9g")


# ---------------------------------------------------------------- sampling core

def _prepare(surface, h, nu, eps_rnd, rng, clip_center=None, clip_radius=None):
    grid = build_band_grid(surface, h, clip_center=clip_center, clip_radius=clip_radius)
    phi = evaluate_levelset(grid, surface)
    phi = add_uniform_noise(phi, eps_rnd, h, rng)
    phi = reinitialize(grid, phi, nu)
    return grid, phi


def _away_from_walls(grid, x, margin):
    lo = grid.origin
    hi = lo + (np.asarray(grid.dims) - 1) * grid.h
    return np.all((x - lo >= margin) & (hi - x >= margin), axis=1)


def _std_rows(geo, sel, hk, h2kg, targets, normalize):
    """Six standard-form feature rows per selected node with repeated targets."""
    p = DataPacket(geo.phi[sel], geo.normals[sel], hk, h2kg)
    if normalize:
        p = negative_normalize(p)
    std = generate_std_packets(p)
    f = std.features().reshape(-1, N_FEATURES)
    return f, np.repeat(np.asarray(targets, dtype=np.float64), 6)


# ---------------------------------------------------------------- spheres

@dataclass
class SphereParams:
    hk_min: float = 0.004
    hk_max: float = 2.0 / 3.0
    n_sph: int = 5000
    n_per_sph: int = 4
    nu: int = 10
    eps_rnd: float = 1e-4


def _sphere_item(args):
    i, kappa, eta, prm, seed = args
    h = 2.0 ** -eta
    rng = derived_rng(seed, 0, i)
    r = 1.0 / kappa
    if r < 1.5 * h * (1 - 1e-12):
        log.info("sphere %d: radius %.3g below 1.5h, skipped", i, r)
        return None
    center = rng.uniform(-0.5 * h, 0.5 * h, size=3)
    p = center + r * random_unit_axis(rng)
    c = round_h(p, h)
    surf = Sphere(r, center, bbox=(c - 16 * h, c + 16 * h))
    grid, phi = _prepare(surf, h, prm.nu, prm.eps_rnd, rng)
    geo = interface_geometry(grid, phi)
    sel = np.flatnonzero(geo.ok & (geo.h2kg >= H2KG_NS_MIN))
    if sel.size == 0:
        log.info("sphere %d: no usable interface node", i)
        return None
    f, t = _std_rows(geo, sel, geo.hk[sel], geo.h2kg[sel], np.full(sel.size, -h * kappa), True)
    pick = rng.choice(len(t), size=min(prm.n_per_sph, len(t)), replace=False)
    return f[pick], t[pick]


def generate_spherical_dataset(eta, params=None, seed=0, workers=None):
    prm = params or SphereParams()
    if not 0 < prm.hk_min < prm.hk_max <= 2.0 / 3.0 + 1e-12:
        raise ValueError("need 0 < hk_min < hk_max <= 2/3")
    h = 2.0 ** -eta
    rng = derived_rng(seed, 0)
    kappas = rand_linspace(prm.hk_max / h, prm.hk_min / h, prm.n_sph, rng)
    items = [(i, k, eta, prm, seed) for i, k in enumerate(kappas)]
    parts = _map(_sphere_item, items, workers)
    return concat(parts, "ns", eta, h, generator="spheres", seed=int(seed),
                  params=vars(prm).copy(), balance=None)


# ---------------------------------------------------------------- sinusoids

@dataclass
class SinusoidParams:
    hk_min: float = 0.004
    hk_max: float = 2.0 / 3.0
    min_hk_pr: float = 0.0025
    max_hk_low_pr: float = 0.2
    max_hk_up_pr: float = 0.6
    h2kg_min: float = 0.0
    min_h2kg_pr: float = 0.0025
    h2kg_max_low: float = 0.05
    max_h2kg_pr: float = 0.075
    n_a: int = 4
    n_t: int = 3
    n_hk: int = 3
    nu: int = 10
    eps_rnd: float = 1e-4
    h2kg_ns_min: float = H2KG_NS_MIN
    max_r_sam_h: float = 0.0  # cap on the sampling radius in units of h; 0 disables


def sinusoid_sampling_radius(h, A, w1, w2, A_max, cap_h=0.0):
    r = 6.0 * h + min(1.5 * A_max, max(A, 4.0 * np.pi * max(1.0 / w1, 1.0 / w2)))
    return min(r, cap_h * h) if cap_h > 0 else r


def collect_sinusoidal_samples(grid, phi, surf, h, r_sam, prm, rng):
    """Filtered (features, targets) for the non-saddle and saddle classes."""
    geo = interface_geometry(grid, phi)
    near = np.linalg.norm(geo.x - surf.frame.shift, axis=1) <= r_sam
    cand = np.flatnonzero(geo.ok & near & _away_from_walls(grid, geo.x, 4.0 * h))
    empty = (None, None)
    if cand.size == 0:
        return empty
    k_star, _ = surf.curvatures_near(geo.x[cand])
    hks = h * k_star
    hk, h2kg = geo.hk[cand], geo.h2kg[cand]
    u = rng.uniform(size=cand.size)
    a_hk = np.abs(hks)
    lowp = ease(a_hk, prm.hk_min, prm.min_hk_pr, 0.5 * prm.hk_max, prm.max_hk_low_pr)
    upp = ease(a_hk, 0.5 * prm.hk_max, prm.max_hk_low_pr, prm.hk_max, prm.max_hk_up_pr)
    ns = h2kg >= prm.h2kg_ns_min
    keep_ns = ns & (a_hk >= prm.hk_min) & (u <= np.where(a_hk <= 0.5 * prm.hk_max, lowp, upp))
    a_kg = np.abs(h2kg)
    sdp = ease(a_kg, prm.h2kg_min, prm.min_h2kg_pr, prm.h2kg_max_low, prm.max_h2kg_pr)
    keep_sd = ~ns & (a_kg >= prm.h2kg_min) & (u <= sdp)
    out = []
    for keep, normalize in ((keep_ns, True), (keep_sd, False)):
        if not keep.any():
            out.append(None)
            continue
        sel = cand[keep]
        tgt = -a_hk[keep] if normalize else hks[keep]
        out.append(_std_rows(geo, sel, hk[keep], h2kg[keep], tgt, normalize))
    return tuple(out)


def _sinusoid_item(args):
    idx, A, w1, w2, axis, theta, eta, prm, seed, A_max = args
    h = 2.0 ** -eta
    rng = derived_rng(seed, 1, *idx)
    shift = rng.uniform(-0.5 * h, 0.5 * h, size=3)
    frame = AffineFrame(shift=shift, axis=axis, angle=theta)
    r_sam = sinusoid_sampling_radius(h, A, w1, w2, A_max, prm.max_r_sam_h)
    # the clipped grid only needs the surface near the sampling ball
    reach = r_sam + 8.0 * h
    uv = reach + 2.0 * h
    surf = Sinusoid(A, w1, w2, frame=frame, bbox=(shift - r_sam, shift + r_sam),
                    uv_box=((-uv, -uv), (uv, uv)), h=h)
    try:
        grid, phi = _prepare(surf, h, prm.nu, prm.eps_rnd, rng, clip_center=shift, clip_radius=reach)
    except EmptyBandError:
        return None, None
    return collect_sinusoidal_samples(grid, phi, surf, h, r_sam, prm, rng)


def generate_sinusoidal_datasets(eta, params=None, seed=0, workers=None):
    prm = params or SinusoidParams()
    h = 2.0 ** -eta
    k_min, k_max = prm.hk_min / h, prm.hk_max / h
    A_min, A_max = 5.0 / k_max, 1.0 / (2.0 * k_min)
    rng = derived_rng(seed, 1)
    hk_max = rand_linspace(0.5 * prm.hk_max, prm.hk_max, prm.n_hk, rng)
    amps = rand_linspace(A_min, A_max, prm.n_a, rng)
    ns_parts, sd_parts = [], []
    for a, A in enumerate(amps):
        items = []
        for s in range(prm.n_hk):
            k_s = hk_max[s] / h
            w1 = np.sqrt(k_s / A)
            for t in range(s, prm.n_hk):
                k_t = hk_max[t] / h
                w2sq = 2.0 * k_t / A - w1 * w1
                if w2sq <= 0:
                    log.info("sinusoid A=%.4g s=%d t=%d: imaginary w2, skipped", A, s, t)
                    continue
                w2 = np.sqrt(w2sq)
                E = build_random_basis(derived_rng(seed, 1, a, s, t, 99))
                for e in range(3):
                    thetas = rand_linspace(-0.5 * np.pi, 0.5 * np.pi, prm.n_t, derived_rng(seed, 1, a, s, t, e, 98))[:-1]
                    for k, th in enumerate(thetas):
                        items.append(((a, s, t, e, k), A, w1, w2, E[e], th, eta, prm, seed, A_max))
        res = _map(_sinusoid_item, items, workers)
        for cls, parts, nb, j in (("ns", ns_parts, 100, 0), ("sd", sd_parts, 50, 1)):
            buf = concat([r[j] for r in res], cls, eta, h)
            if len(buf):
                parts.append(buf.balanced(nb, derived_rng(seed, 1, a, 97 + j)))
        log.info("sinusoid amplitude %d/%d (A=%.4g): %d surfaces", a + 1, len(amps), A, len(items))
    out = []
    for cls, parts, nb, j in (("ns", ns_parts, 100, 0), ("sd", sd_parts, 50, 1)):
        d = concat([(p.features, p.targets) for p in parts], cls, eta, h)
        d = d.balanced(nb, derived_rng(seed, 1, 1000 + j), generator="sinusoids", seed=int(seed),
                       params=vars(prm).copy())
        out.append(d)
    return tuple(out)


# ---------------------------------------------------------------- hyperbolic paraboloids

@dataclass
class HypParaboloidParams:
    n_r: int = 4
    r_max: float = 6.0
    n_t: int = 6
    n_hk: int = 25
    hk_max: float = 2.0 / 3.0
    min_h2kg_pr: float = 0.01
    h2kg_max_low: float = 0.05
    max_h2kg_pr: float = 1.0
    hk0_pr: float = 0.0025
    hk_no_error_pr: float = 0.005
    hk_err_low: float = 0.1
    nu: int = 10
    eps_rnd: float = 1e-4
    h2kg_ns_min: float = H2KG_NS_MIN


def hyp_paraboloid_shape(kappa, r):
    """(a, u_j) giving |kappa| as the steepest mean curvature of a u^2 - r a v^2.

    For r < 3 the extremum -|kappa| sits at (+-u_j, 0); for r >= 3 at the origin.
    """
    k = abs(kappa)
    if r < 3.0:
        a = 0.5 * k * (3.0 / r) ** 1.5
        u = np.sqrt((3.0 / r - 1.0) / (2.0 * a) ** 2)
    else:
        a = k / (r - 1.0)
        u = 0.0
    return a, u


def _round(x):
    return int(math.floor(x + 0.5))


def _scaled_count(n, j, n_hk):
    return _round(n * (1.0 + 2.0 * j / (n_hk - 1))) if n_hk > 1 else n


def collect_hyp_paraboloidal_samples(grid, phi, surf, h, hk_attain, r_sam, prm, rng):
    geo = interface_geometry(grid, phi)
    near = np.linalg.norm(geo.x - surf.frame.shift, axis=1) <= r_sam
    cand = np.flatnonzero(geo.ok & near & _away_from_walls(grid, geo.x, 4.0 * h))
    if cand.size == 0:
        return None
    hk, h2kg = geo.hk[cand], geo.h2kg[cand]
    sd = h2kg < prm.h2kg_ns_min
    cand, hk, h2kg = cand[sd], hk[sd], h2kg[sd]
    if cand.size == 0:
        return None
    k_star, _ = surf.curvatures_near(geo.x[cand])
    hks = h * k_star
    u = rng.uniform(size=(3, cand.size))
    keep = u[0] <= ease(np.abs(h2kg), abs(prm.h2kg_ns_min), prm.min_h2kg_pr, prm.h2kg_max_low, prm.max_h2kg_pr)
    keep &= u[1] <= ease(np.abs(hk), 0.0, prm.hk0_pr, 0.5 * hk_attain, 1.0)
    keep &= u[2] <= ease(np.abs(hks - hk), 0.0, prm.hk_no_error_pr, prm.hk_err_low, 1.0)
    if not keep.any():
        return None
    return _std_rows(geo, cand[keep], hk[keep], h2kg[keep], hks[keep], False)


def _hyp_box(frame, a, b, r_sam, h):
    """Cube enclosing the transformed cylinder of radius r_sam between the clamped base and top."""
    qs = (a * r_sam * r_sam, -b * r_sam * r_sam)
    base = max(-32.0 * h, min(qs)) - 4.0 * h
    top = min(32.0 * h, max(qs)) + 4.0 * h
    ang = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    ring = np.stack([r_sam * np.cos(ang), r_sam * np.sin(ang)], axis=1)
    pts = np.concatenate([np.column_stack([ring, np.full(64, base)]), np.column_stack([ring, np.full(64, top)])])
    w = frame.to_world(pts)
    # the cylinder's rim bulges between sampled angles by at most r(1 - cos(pi/64))
    pad = r_sam * (1.0 - np.cos(np.pi / 64))
    lo, hi = w.min(axis=0) - pad, w.max(axis=0) + pad
    c, half = 0.5 * (lo + hi), 0.5 * float(np.max(hi - lo))
    return c - half, c + half


def _hyp_item(args):
    idx, a, b, hk_attain, r_sam, eta, prm, seed = args
    h = 2.0 ** -eta
    rng = derived_rng(seed, 2, *idx)
    theta = 2.0 * np.pi * rng.uniform()
    axis = random_unit_axis(rng)
    shift = rng.uniform(-0.5 * h, 0.5 * h, size=3)
    frame = AffineFrame(shift=shift, axis=axis, angle=theta)
    bbox = _hyp_box(frame, a, b, r_sam, h)
    # nodes beyond the sampling ball only serve as stencil support
    reach = r_sam + 8.0 * h
    uv = reach + 2.0 * h
    surf = HypParaboloid(a, b, frame=frame, bbox=bbox, uv_box=((-uv, -uv), (uv, uv)), h=h)
    try:
        grid, phi = _prepare(surf, h, prm.nu, prm.eps_rnd, rng, clip_center=shift, clip_radius=reach)
    except EmptyBandError:
        return None
    return collect_hyp_paraboloidal_samples(grid, phi, surf, h, hk_attain, r_sam, prm, rng)


def generate_hyp_paraboloidal_dataset(eta, params=None, seed=0, workers=None):
    prm = params or HypParaboloidParams()
    h = 2.0 ** -eta
    rng = derived_rng(seed, 2)
    hk_max = rand_linspace(prm.hk_max / 5.0, prm.hk_max, prm.n_hk, rng)
    parts = []
    for j, hk_attain in enumerate(hk_max):
        n_ratio = _scaled_count(prm.n_r, j, prm.n_hk)
        ratios = rand_linspace(1.0, prm.r_max, n_ratio, derived_rng(seed, 2, j, 0))
        flips = derived_rng(seed, 2, j, 1).uniform(size=n_ratio) < 0.5
        n_tr = _scaled_count(prm.n_t, j, prm.n_hk)
        for ri, (r, b_major) in enumerate(zip(ratios, flips)):
            kappa = hk_attain / h
            a_, u_ = hyp_paraboloid_shape(kappa, r)
            if r < 3.0 and 2.0 * u_ < 1.5 * h:
                log.info("hyp-paraboloid j=%d r=%.3f: critical points closer than 1.5h, skipped", j, r)
                continue
            # b = r a puts the negative extremum on the u axis; otherwise roles swap
            a, b = (a_, r * a_) if b_major else (r * a_, a_)
            r_sam = u_ + 16.0 * h
            items = [((j, ri, l), a, b, hk_attain, r_sam, eta, prm, seed) for l in range(n_tr)]
            buf = concat(_map(_hyp_item, items, workers), "sd", eta, h)
            if len(buf):
                parts.append(buf.balanced(50, derived_rng(seed, 2, j, ri, 97)))
    d = concat([(p.features, p.targets) for p in parts], "sd", eta, h)
    return d.balanced(50, derived_rng(seed, 2, 1000), generator="hyp_paraboloids", seed=int(seed),
                      params=vars(prm).copy())


# ---------------------------------------------------------------- merge and split

def merge_balanced(datasets, cls, fractions=None, seed=0, nbins=100, rebalance=True):
    """Uniform random fraction of each source, concatenated and rebalanced on |target|.

    With ``rebalance=False`` the concatenation is returned as is; it then
    carries no histogram record.
    """
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to merge")
    fractions = [1.0] * len(datasets) if fractions is None else list(fractions)
    if len(fractions) != len(datasets):
        raise ValueError("one fraction per dataset")
    eta, h = datasets[0].eta, datasets[0].h
    parts = []
    for i, (d, f) in enumerate(zip(datasets, fractions)):
        if d.cls != cls:
            raise ValueError(f"source {i} has class {d.cls!r}, expected {cls!r}")
        if d.eta != eta:
            raise ValueError("sources differ in resolution")
        if not 0.0 <= f <= 1.0:
            raise ValueError("fractions must lie in [0, 1]")
        k = _round(f * len(d))
        pick = np.sort(derived_rng(seed, 3, i).choice(len(d), size=k, replace=False))
        parts.append((d.features[pick], d.targets[pick]))
    meta = dict(generator="merge", seed=int(seed), fractions=[float(f) for f in fractions],
                sources=[d.meta.get("generator", "?") for d in datasets])
    if not rebalance:
        return concat(parts, cls, eta, h, balance=None, **meta)
    return concat(parts, cls, eta, h).balanced(nbins, derived_rng(seed, 3, 1000), **meta)


def stratified_labels(targets, nbins=100, min_count=20):
    """Bucket |target| into equal-width bins; buckets too small for the folds join a neighbor."""
    keys = np.abs(np.asarray(targets, dtype=np.float64))
    lab = _bin_index(keys, nbins, keys.min(), keys.max())
    while True:
        counts = np.bincount(lab, minlength=nbins)
        used = np.flatnonzero(counts)
        small = used[counts[used] < min_count]
        if small.size == 0 or used.size == 1:
            return lab
        k = small[0]
        i = int(np.searchsorted(used, k))
        nb = used[i + 1] if i + 1 < used.size else used[i - 1]
        log.info("bucket %d has %d members, merged into bucket %d", k, counts[k], nb)
        lab[lab == k] = nb


def stratified_split(ds, seed=0, n_folds=20, groups=(14, 3, 3), nbins=100):
    """Train/test/validation subsets from stratified folds on the |target| bucket."""
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    if sum(groups) != n_folds:
        raise ValueError("fold groups must cover all folds")
    lab = stratified_labels(ds.targets, nbins, n_folds)
    rng = derived_rng(seed, 4)
    fold = np.empty(len(ds), dtype=np.int64)
    start = 0
    for k in np.unique(lab):
        members = rng.permutation(np.flatnonzero(lab == k))
        # continue the round robin across buckets so fold sizes stay within one
        fold[members] = (start + np.arange(members.size)) % n_folds
        start = (start + members.size) % n_folds
    bounds = np.cumsum((0,) + tuple(groups))
    out = []
    for name, lo, hi in zip(("train", "test", "validation"), bounds[:-1], bounds[1:]):
        idx = np.flatnonzero((fold >= lo) & (fold < hi))
        out.append(ds.take(idx, subset=name, split_seed=int(seed)))
    return tuple(out)
