"""Standardize, PCA-project and whiten 110-feature packets."""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .packets import N_FEATURES

N_PHI = 27


def h_normalize(features, h):
    """Divide the 27 level-set values by h; the other features are already dimensionless."""
    f = np.array(features, dtype=np.float64, copy=True)
    f[..., :N_PHI] /= h
    return f


@dataclass
class PreprocessStats:
    mean: np.ndarray
    std: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    m_iota: int
    h_train: float
    cls: str = ""
    constant: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.constant is None:
            self.constant = np.zeros(N_FEATURES, dtype=bool)

    def to_json(self):
        def enc(a):
            return [repr(float(x)) for x in np.asarray(a, dtype=np.float64).ravel()]

        obj = {"mean": enc(self.mean), "std": enc(self.std), "components": enc(self.components),
               "explained_variance": enc(self.explained_variance), "m_iota": int(self.m_iota),
               "h_train": repr(float(self.h_train)), "class": self.cls,
               "constant": [int(i) for i in np.flatnonzero(self.constant)]}
        return json.dumps(obj, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        o = json.loads(text)

        def dec(v):
            return np.array([float(x) for x in v], dtype=np.float64)

        m = int(o["m_iota"])
        const = np.zeros(N_FEATURES, dtype=bool)
        const[o.get("constant", [])] = True
        return cls(dec(o["mean"]), dec(o["std"]), dec(o["components"]).reshape(m, N_FEATURES),
                   dec(o["explained_variance"]), m, float(o["h_train"]), o.get("class", ""), const)

    def fingerprint(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(f.read())


def fit_stats(X, m_iota, h_train=0.0, cls=""):
    """Column moments and the top m_iota principal directions of the standardized matrix.

    X must already be h-normalized.  Explained variances are S^2 / (n - 1).
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if d != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} columns, got {d}")
    if not 0 < m_iota <= min(n - 1, d):
        raise ValueError(f"m_iota must lie in [1, {min(n - 1, d)}] for {n} rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(constant, 1.0, std)
    Z = (X - mean) / std
    Z[:, constant] = 0.0
    _, S, Vt = np.linalg.svd(Z, full_matrices=False)
    var = S * S / (n - 1)
    comps = Vt[:m_iota].copy()
    # deterministic sign: the largest-magnitude entry of each component is positive
    big = np.argmax(np.abs(comps), axis=1)
    comps *= np.where(comps[np.arange(m_iota), big] < 0, -1.0, 1.0)[:, None]
    if np.any(var[:m_iota] <= 1e-12 * var[0]):
        raise ValueError("retained components include a zero-variance direction; lower m_iota")
    return PreprocessStats(mean, std, comps, var[:m_iota].copy(), int(m_iota), float(h_train), cls, constant)


def apply(stats, features, h):
    """Whitened reduced inputs (..., m_iota) and the unscaled hk passthrough."""
    f = h_normalize(features, h)
    z = (f - stats.mean) / stats.std
    z[..., stats.constant] = 0.0
    r = (z @ stats.components.T) / np.sqrt(stats.explained_variance)
    if not np.all(np.isfinite(r)):
        bad = np.argwhere(~np.isfinite(f))
        where = f"feature {int(bad[0][-1])}" if bad.size else "projection"
        raise FloatingPointError(f"non-finite preprocessed input ({where})")
    return r, np.asarray(features, dtype=np.float64)[..., 108]
