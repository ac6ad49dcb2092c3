"""110-feature stencil packets and their six symmetry-equivalent standard forms.

Lattice symmetries are signed 3x3 permutation matrices T. A transformed
packet takes phi at offset o from offset T^-1 o and rotates the normal stored
there by T. All 48 such matrices have precomputed index tables.
"""
from dataclasses import dataclass
from itertools import permutations, product

import numpy as np

from .grid import CENTER, STENCIL_OFFSETS

N_FEATURES = 110


def _offset_index(o):
    return (o[..., 0] + 1) * 9 + (o[..., 1] + 1) * 3 + (o[..., 2] + 1)


def _all_signed_permutations():
    mats = []
    for perm in permutations(range(3)):
        for signs in product((1, -1), repeat=3):
            T = np.zeros((3, 3), dtype=np.int64)
            for r, c in enumerate(perm):
                T[r, c] = signs[r]
            mats.append(T)
    return np.array(mats)


MATRICES = _all_signed_permutations()
# SOURCE[t, o] = lattice index read into offset o under transform t
SOURCE = np.array([_offset_index(STENCIL_OFFSETS @ T) for T in MATRICES])
_KEY = {tuple(T.ravel()): i for i, T in enumerate(MATRICES)}


def transform_id(T):
    return _KEY[tuple(np.asarray(T, dtype=np.int64).ravel())]


SWAP_XY = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
REFLECT_Z = np.diag([1, 1, -1])
# quarter turn of -pi/2 about y: (x, y, z) -> (-z, y, x)
ROT_Y_NEG = np.array([[0, 0, -1], [0, 1, 0], [1, 0, 0]])
# reflecting about z then turning about y swaps x and z
SWAP_XZ = ROT_Y_NEG @ REFLECT_Z


@dataclass
class DataPacket:
    """phi (..., 27), normals (..., 27, 3), hk (...), h2kg (...); batches allowed."""

    phi: np.ndarray
    normals: np.ndarray
    hk: np.ndarray
    h2kg: np.ndarray

    def features(self):
        lead = self.phi.shape[:-1]
        return np.concatenate([self.phi, self.normals.reshape(lead + (81,)),
                               np.asarray(self.hk)[..., None], np.asarray(self.h2kg)[..., None]], axis=-1)

    @classmethod
    def from_features(cls, f):
        f = np.asarray(f)
        lead = f.shape[:-1]
        if f.shape[-1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {f.shape[-1]}")
        return cls(f[..., :27], f[..., 27:108].reshape(lead + (27, 3)), f[..., 108], f[..., 109])

    def __len__(self):
        return self.phi.shape[0] if self.phi.ndim > 1 else 1

    def take(self, idx):
        return DataPacket(self.phi[idx], self.normals[idx], np.asarray(self.hk)[idx], np.asarray(self.h2kg)[idx])


def collect_features(phi, normals, hk=0.0, h2kg=0.0):
    """Assemble packets from stencil values (m, 27) and unit normals (m, 27, 3)."""
    phi = np.asarray(phi, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    nrm = np.linalg.norm(normals, axis=-1)
    if np.any(np.abs(nrm - 1.0) > 1e-10):
        raise ValueError("degenerate normal in stencil")
    return DataPacket(phi, normals, np.broadcast_to(np.asarray(hk, float), phi.shape[:-1]).copy(),
                      np.broadcast_to(np.asarray(h2kg, float), phi.shape[:-1]).copy())


def negative_normalize(p):
    """Flip phi, normals and hk wherever hk > 0; h2kg is unchanged."""
    hk = np.asarray(p.hk)
    s = np.where(hk > 0, -1.0, 1.0)
    return DataPacket(p.phi * s[..., None], p.normals * s[..., None, None], hk * s, np.asarray(p.h2kg).copy())


def apply_transform(p, tid):
    """Apply lattice transform(s) ``tid`` (int or per-packet int array)."""
    tid = np.asarray(tid)
    src = SOURCE[tid]
    T = MATRICES[tid].astype(np.float64)
    if p.phi.ndim == 1:
        return DataPacket(p.phi[src], p.normals[src] @ T.T, np.asarray(p.hk).copy(), np.asarray(p.h2kg).copy())
    src = np.broadcast_to(src, p.phi.shape)
    phi = np.take_along_axis(p.phi, src, axis=-1)
    nsrc = np.take_along_axis(p.normals, src[..., None], axis=-2)
    if T.ndim == 2:
        normals = nsrc @ T.T
    else:
        normals = np.einsum("bij,boj->boi", T, nsrc)
    return DataPacket(phi, normals, np.asarray(p.hk).copy(), np.asarray(p.h2kg).copy())


def reorient_matrices(n_center):
    """Transform ids making each center normal nonnegative with det +1.

    Negative components are flipped; an odd flip count is compensated by
    swapping the two axes with the smallest (flipped) components, ties to the
    lower axis index.
    """
    n = np.atleast_2d(n_center)
    neg = n < 0
    signs = np.where(neg, -1, 1)
    odd = neg.sum(axis=1) % 2 == 1
    order = np.argsort(np.abs(n), axis=1, kind="stable")
    ids = np.empty(len(n), dtype=np.int64)
    for b in range(len(n)):
        T = np.diag(signs[b])
        if odd[b]:
            P = np.eye(3, dtype=np.int64)
            i, j = order[b, 0], order[b, 1]
            P[[i, j]] = P[[j, i]]
            T = P @ T
        ids[b] = transform_id(T)
    return ids


def reorient_standard(p):
    return apply_transform(p, reorient_matrices(p.normals[..., CENTER, :]).reshape(np.shape(p.hk)))


_ID_SWAP_XY = transform_id(SWAP_XY)
_ID_SWAP_XZ = transform_id(SWAP_XZ)


def _compose(a, b):
    """Id of transform a applied after b."""
    return transform_id(MATRICES[a] @ MATRICES[b])


# p1, p2 = S p1, p11 = X p1, p12 = S X p1, p21 = X S p1, p22 = S X S p1
_S, _X = _ID_SWAP_XY, _ID_SWAP_XZ
_E = transform_id(np.eye(3, dtype=np.int64))
SIX_FORMS = np.array([_E, _S, _X, _compose(_S, _X), _compose(_X, _S), _compose(_S, _compose(_X, _S))])


def generate_std_packets(p):
    """Six standard forms of each packet, stacked on a new axis after the batch axis.

    p1 is the reoriented packet and p2 its reflection about the x = y plane.
    Each of them is reflected about z = 0 and turned -pi/2 about y, which
    keeps the center normal nonnegative, then reflected about x = y again.
    """
    single = p.phi.ndim == 1
    if single:
        p = DataPacket(p.phi[None], p.normals[None], np.atleast_1d(p.hk), np.atleast_1d(p.h2kg))
    p1 = reorient_standard(p)
    m = len(p1.hk)
    rep = DataPacket(np.repeat(p1.phi, 6, axis=0), np.repeat(p1.normals, 6, axis=0),
                     np.repeat(p1.hk, 6), np.repeat(p1.h2kg, 6))
    out = apply_transform(rep, np.tile(SIX_FORMS, m))
    out = DataPacket(out.phi.reshape(m, 6, 27), out.normals.reshape(m, 6, 27, 3),
                     out.hk.reshape(m, 6), out.h2kg.reshape(m, 6))
    return out.take(0) if single else out
