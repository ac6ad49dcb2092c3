"""Error-correcting MLP: four ReLU layers, a linear output and an additive hk skip."""
import base64
import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class ArtifactMismatch(ValueError):
    pass


@dataclass
class MlpModel:
    weights: list
    biases: list
    l2: float = 0.0
    cls: str = ""
    stats_fingerprint: str = ""
    seed: int = 0
    eq16_literal: bool = False
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != 5 or len(self.biases) != 5:
            raise ValueError("model needs five weight matrices and five bias vectors")
        for i in range(5):
            W, b = self.weights[i], self.biases[i]
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i + 1}: bias shape {b.shape} does not match weights {W.shape}")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i + 1}: input size {W.shape[0]} != {self.weights[i - 1].shape[1]}")
        if self.weights[4].shape[1] != 1:
            raise ValueError("output layer must have one unit")
        if not all(np.all(np.isfinite(a)) for a in self.weights + self.biases):
            raise ValueError("model parameters must be finite")

    @property
    def m_iota(self):
        return self.weights[0].shape[0]

    @property
    def n_h(self):
        return self.weights[0].shape[1]

    @property
    def params(self):
        return self.weights + self.biases

    def astype(self, dtype):
        return MlpModel([W.astype(dtype) for W in self.weights], [b.astype(dtype) for b in self.biases],
                        self.l2, self.cls, self.stats_fingerprint, self.seed, self.eq16_literal, dict(self.history))

    def copy(self):
        return self.astype(self.weights[0].dtype)


def glorot_limit(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_model(m_iota, n_h=140, l2=0.0, seed=0, cls="", dtype=np.float32, eq16_literal=False):
    if m_iota < 1 or n_h < 1:
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    sizes = [m_iota, n_h, n_h, n_h, n_h, 1]
    Ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        lim = glorot_limit(fi, fo)
        Ws.append(rng.uniform(-lim, lim, size=(fi, fo)).astype(dtype))
        bs.append(np.zeros(fo, dtype=dtype))
    return MlpModel(Ws, bs, float(l2), cls, "", int(seed), eq16_literal)


def _forward(model, R, keep=False):
    """Correction term and, optionally, the pre-activations and activations."""
    a = R
    acts, pres = [R], []
    for i in range(4):
        z = a @ model.weights[i] + model.biases[i]
        a = z if (i == 0 and model.eq16_literal) else np.maximum(z, 0)
        pres.append(z)
        acts.append(a)
    out = (a @ model.weights[4] + model.biases[4])[:, 0]
    return (out, pres, acts) if keep else out


def forward(model, R, hk):
    """hk_F = correction(R) + hk for a batch R (B, m_iota) or a single vector."""
    R = np.asarray(R, dtype=model.weights[0].dtype)
    single = R.ndim == 1
    R2 = R[None] if single else R
    if R2.shape[1] != model.m_iota:
        raise ValueError(f"input width {R2.shape[1]} != m_iota {model.m_iota}")
    out = _forward(model, R2) + np.asarray(hk, dtype=R2.dtype)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite network output")
    return out[0] if single else out


def loss_and_grads(model, R, hk, y):
    """RMSE + l2 * sum of squared hidden kernels, and its gradient per parameter."""
    out, pres, acts = _forward(model, R, keep=True)
    err = out + hk - y
    n = err.shape[0]
    rmse = np.sqrt(np.mean(err * err))
    reg = sum(float(np.sum(W * W)) for W in model.weights[:4])
    loss = rmse + model.l2 * reg
    g = err / (n * rmse) if rmse > 0 else np.zeros_like(err)
    gW = [None] * 5
    gb = [None] * 5
    delta = g[:, None]
    gW[4] = acts[4].T @ delta
    gb[4] = delta.sum(axis=0)
    back = delta @ model.weights[4].T
    for i in range(3, -1, -1):
        if not (i == 0 and model.eq16_literal):
            back = back * (pres[i] > 0)
        gW[i] = acts[i].T @ back + 2.0 * model.l2 * model.weights[i]
        gb[i] = back.sum(axis=0)
        if i:
            back = back @ model.weights[i].T
    return loss, rmse, gW + gb


def gradient_check(model, R, hk, y, step=1e-6):
    """Max relative deviation between backprop and central finite differences (f64)."""
    m = model.astype(np.float64)
    R, hk, y = (np.asarray(a, dtype=np.float64) for a in (R, hk, y))
    _, _, grads = loss_and_grads(m, R, hk, y)
    worst = 0.0
    for p, g in zip(m.params, grads):
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            lp = loss_and_grads(m, R, hk, y)[0]
            flat[j] = keep - step
            lm = loss_and_grads(m, R, hk, y)[0]
            flat[j] = keep
            num = (lp - lm) / (2.0 * step)
            worst = max(worst, abs(num - gf[j]) / max(abs(num) + abs(gf[j]), 1e-8))
    return worst


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 1000
    lr: float = 1.5e-4
    lr_floor: float = 1e-5
    plateau_factor: float = 0.5
    plateau_patience: int = 15
    stop_patience: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for k in ("batch_size", "max_epochs", "lr", "lr_floor", "plateau_factor", "plateau_patience",
                  "stop_patience", "eps"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.lr_floor > self.lr:
            raise ValueError("lr_floor must not exceed lr")


class Schedule:
    """Learning-rate plateau and early-stop bookkeeping on validation MAE."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.lr = cfg.lr
        self.best = np.inf
        self.since_best = 0
        self.since_cut = 0

    def step(self, val_mae):
        """Record one epoch; returns (improved, stop)."""
        improved = val_mae < self.best
        if improved:
            self.best = val_mae
            self.since_best = 0
            self.since_cut = 0
        else:
            self.since_best += 1
            self.since_cut += 1
            if self.since_cut >= self.cfg.plateau_patience:
                self.lr = max(self.lr * self.cfg.plateau_factor, self.cfg.lr_floor)
                self.since_cut = 0
        return improved, self.since_best >= self.cfg.stop_patience


class Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params, grads, lr):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= (lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)).astype(p.dtype, copy=False)


def mae(model, R, hk, y, chunk=65536):
    tot = 0.0
    for s in range(0, len(y), chunk):
        tot += float(np.sum(np.abs(forward(model, R[s:s + chunk], hk[s:s + chunk]).astype(np.float64) - y[s:s + chunk])))
    return tot / max(len(y), 1)


def train(model, train_set, val_set, cfg=None, progress=None):
    """Mini-batch Adam on (R, hk, y) triples; returns the best-validation snapshot and history."""
    cfg = cfg or TrainConfig()
    dtype = model.weights[0].dtype
    R, hk, y = (np.asarray(a, dtype=dtype) for a in train_set)
    Rv, hkv, yv = (np.asarray(a, dtype=dtype) for a in val_set)
    if R.shape[1] != model.m_iota:
        raise ValueError("training inputs do not match the model width")
    model = model.copy()
    params = model.params
    opt = Adam(params, cfg)
    sched = Schedule(cfg)
    best = model.copy()
    hist = {"train_rmse": [], "val_mae": [], "lr": []}
    n = len(y)
    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n)
        tot, nb = 0.0, 0
        lr = sched.lr
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, rmse, grads = loss_and_grads(model, R[idx], hk[idx], y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            opt.update(params, grads, lr)
            tot += float(rmse)
            nb += 1
        v = mae(model, Rv, hkv, yv)
        if not np.isfinite(v):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        hist["train_rmse"].append(tot / nb)
        hist["val_mae"].append(v)
        hist["lr"].append(lr)
        improved, stop = sched.step(v)
        if improved:
            best = model.copy()
        if progress:
            progress(epoch, tot / nb, v, lr)
        if stop:
            break
    best.history = {"epochs": len(hist["val_mae"]), "best_val_mae": float(sched.best),
                    "final_lr": float(sched.lr)}
    return best, hist


# ---------------------------------------------------------------- serialization

def _b64(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f4").tobytes()).decode()


def _unb64(s, shape):
    a = np.frombuffer(base64.b64decode(s), dtype="<f4")
    if a.size != int(np.prod(shape)):
        raise ArtifactMismatch(f"stored array has {a.size} entries, shape field says {list(shape)}")
    return a.reshape(shape).astype(np.float32)


def model_to_json(model):
    layers = [{"w": _b64(W), "w_shape": list(W.shape), "b": _b64(b), "b_shape": list(b.shape)}
              for W, b in zip(model.weights, model.biases)]
    obj = {"class": model.cls, "m_iota": model.m_iota, "n_h": model.n_h, "l2": model.l2,
           "eq16_literal": model.eq16_literal, "layers": layers,
           "stats_fingerprint": model.stats_fingerprint, "seed": model.seed, "history": model.history}
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def model_from_json(text):
    o = json.loads(text)
    Ws = [_unb64(L["w"], L["w_shape"]) for L in o["layers"]]
    bs = [_unb64(L["b"], L["b_shape"]) for L in o["layers"]]
    try:
        m = MlpModel(Ws, bs, float(o["l2"]), o.get("class", ""), o.get("stats_fingerprint", ""),
                     int(o.get("seed", 0)), bool(o.get("eq16_literal", False)), o.get("history", {}))
    except ValueError as e:
        raise ArtifactMismatch(str(e)) from e
    if m.m_iota != o["m_iota"] or m.n_h != o["n_h"]:
        raise ArtifactMismatch("layer shapes disagree with the m_iota/n_h fields")
    return m


def save_model(model, path):
    with open(path, "w") as f:
        f.write(model_to_json(model))


def load_model(path):
    with open(path) as f:
        return model_from_json(f.read())


def check_fingerprint(model, stats):
    if model.stats_fingerprint != stats.fingerprint():
        raise ArtifactMismatch("model was trained against different preprocessing statistics")
