import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlcurv import datagen as dg
from mlcurv.datagen import (BalanceError, Dataset, HypParaboloidParams, SinusoidParams, SphereParams, check_balance,
                            ease, histogram_subsample, hyp_paraboloid_shape, merge_balanced, rand_linspace,
                            read_dataset, stratified_split, subsample_cap, write_dataset)
from mlcurv.grid import CENTER
from mlcurv.packets import DataPacket, reorient_standard
from mlcurv.surfaces import HypParaboloid

H6 = 2.0 ** -6
seeds = st.integers(0, 2 ** 32 - 1)


def toy_dataset(n, cls="ns", seed=0, lo=0.004, hi=0.6):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(n, 110)).astype(np.float32)
    t = -rng.uniform(lo, hi, n) if cls == "ns" else rng.uniform(-hi, hi, n)
    return Dataset(f, t, cls, 6, H6, {"generator": "toy"})


@pytest.fixture(scope="module")
def spheres():
    prm = SphereParams(n_sph=12, n_per_sph=4)
    return dg.generate_spherical_dataset(6, prm, seed=3), prm


# ---------------------------------------------------------------- helpers

def test_ease_cases():
    assert ease(-1.0, 0.0, 0.1, 1.0, 0.9) == 0.1
    assert ease(2.0, 0.0, 0.1, 1.0, 0.9) == 0.9
    assert ease(0.5, 0.0, 0.1, 1.0, 0.9) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        ease(0.5, 1.0, 0.1, 0.0, 0.9)


@given(st.floats(-2, 2), st.floats(0, 1), st.floats(0, 1))
def test_ease_monotone_and_bounded(t, a, b):
    lo, hi = min(a, b), max(a, b) + 1e-3
    v = ease(t, -0.5, lo, 0.5, hi)
    assert lo <= v <= hi
    assert ease(t + 0.01, -0.5, lo, 0.5, hi) >= v


@given(st.floats(-10, 10), st.floats(0.1, 10), st.integers(1, 200), seeds)
def test_rand_linspace(lo, width, n, seed):
    hi = lo + width
    v = rand_linspace(lo, hi, n, np.random.default_rng(seed))
    assert v.shape == (n,)
    assert np.all((v >= lo) & (v <= hi))
    assert np.all(np.diff(v) >= 0)
    c = rand_linspace(lo, hi, n, jitter=False)
    np.testing.assert_allclose(c, lo + (np.arange(n) + 0.5) * width / n, rtol=1e-12, atol=1e-12)


def test_subsample_cap_examples():
    assert subsample_cap([10, 100, 4]) == pytest.approx(10 / 3)
    keys = np.concatenate([np.full(10, 0.1), np.full(100, 0.5), np.full(4, 0.9)])
    keep, rec = histogram_subsample(keys, 3, np.random.default_rng(0))
    counts = np.bincount(dg._bin_index(keys[keep], 3, rec["lo"], rec["hi"]), minlength=3)
    assert counts.tolist() == [3, 3, 3]
    assert subsample_cap([5, 5, 5]) == pytest.approx(5 / 3)
    assert subsample_cap([0, 9, 0]) == pytest.approx(3.0)


@given(st.lists(st.integers(0, 60), min_size=1, max_size=30), seeds)
def test_subsample_respects_cap(counts, seed):
    keys = np.concatenate([np.full(c, i + 0.5) for i, c in enumerate(counts)] + [np.zeros(0)])
    keep, rec = histogram_subsample(keys, len(counts), np.random.default_rng(seed))
    if keys.size == 0:
        assert keep.size == 0
        return
    check_balance(keys[keep], rec)
    assert np.all(np.diff(keep) > 0)


def test_check_balance_rejects_overfull_bin():
    rec = {"bins": 2, "lo": 0.0, "hi": 1.0, "cap": 1.0}
    with pytest.raises(BalanceError):
        check_balance(np.array([0.1, 0.2]), rec)


def test_derived_rng_is_pure():
    a = dg.derived_rng(5, 1, 2).uniform(size=4)
    b = dg.derived_rng(5, 1, 2).uniform(size=4)
    c = dg.derived_rng(5, 2, 1).uniform(size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------- IO

def test_dataset_roundtrip_and_header(tmp_path):
    ds = toy_dataset(17)
    p = tmp_path / "x.c3ds"
    write_dataset(ds, p)
    raw = p.read_bytes()
    assert raw[:4] == b"C3DS" and len(raw) == 29 + 17 * 111 * 4
    back = read_dataset(p)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.targets, ds.targets)
    assert (back.cls, back.eta, back.h) == ("ns", 6, H6)
    assert json.loads((tmp_path / "x.c3ds.json").read_text())["rows"] == 17
    p.write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        read_dataset(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_dataset(p)


def test_writer_refuses_unbalanced(tmp_path):
    ds = toy_dataset(30)
    ds.meta["balance"] = {"bins": 1, "lo": 0.0, "hi": 1.0, "cap": 2.0}
    with pytest.raises(BalanceError):
        write_dataset(ds, tmp_path / "bad.c3ds")


def test_csv_export(tmp_path):
    ds = toy_dataset(3)
    dg.write_csv(ds, tmp_path / "x.csv")
    lines = (tmp_path / "x.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].split(",")[-1] == "target"


# ---------------------------------------------------------------- generators

def test_spheres_targets_and_size(spheres):
    ds, prm = spheres
    assert len(ds) == prm.n_sph * prm.n_per_sph
    assert ds.cls == "ns"
    assert np.all(ds.targets <= -prm.hk_min * (1 - 1e-6)) and np.all(ds.targets >= -prm.hk_max * (1 + 1e-6))
    assert np.all(ds.features[:, 109] >= dg.H2KG_NS_MIN)


def test_spheres_standard_form(spheres):
    ds, _ = spheres
    p = DataPacket.from_features(ds.features.astype(np.float64))
    assert np.all(p.normals[:, CENTER] >= 0)
    np.testing.assert_array_equal(reorient_standard(p).features(), p.features())
    assert np.all(p.hk <= 0)


def test_spheres_deterministic(tmp_path, spheres):
    ds, prm = spheres
    again = dg.generate_spherical_dataset(6, prm, seed=3)
    write_dataset(ds, tmp_path / "a.c3ds")
    write_dataset(again, tmp_path / "b.c3ds")
    assert (tmp_path / "a.c3ds").read_bytes() == (tmp_path / "b.c3ds").read_bytes()


def test_sphere_six_forms_share_target():
    h = H6
    out = dg._sphere_item((0, 0.3 / h, 6, SphereParams(n_per_sph=10 ** 6), 0))
    f, t = out
    # all rows of one sphere carry the same target
    assert np.unique(t).size == 1 and t[0] == pytest.approx(-0.3)


@pytest.fixture(scope="module")
def sinusoid_rows():
    prm = SinusoidParams()
    A, w1, w2 = 0.05, 30.0, 45.0
    item = ((0, 0, 0, 0, 0), A, w1, w2, np.array([0.0, 0.0, 1.0]), 0.3, 6, prm, 11, 1.0)
    return dg._sinusoid_item(item), prm


def test_sinusoid_class_filters(sinusoid_rows):
    (ns, sd), prm = sinusoid_rows
    assert ns is not None and sd is not None
    assert np.all(ns[1] <= -prm.hk_min) and np.all(ns[0][:, 109] >= dg.H2KG_NS_MIN)
    assert np.all(sd[0][:, 109] < dg.H2KG_NS_MIN)
    assert sd[1].min() < 0 < sd[1].max()
    assert np.all(ns[1].reshape(-1, 6) == ns[1].reshape(-1, 6)[:, :1])


def test_sinusoid_sampling_ball(sinusoid_rows):
    prm = SinusoidParams()
    h = H6
    assert dg.sinusoid_sampling_radius(h, 0.1, 10.0, 20.0, 1.0) == pytest.approx(6 * h + 4 * np.pi / 10)
    assert dg.sinusoid_sampling_radius(h, 0.1, 10.0, 20.0, 1.0, cap_h=20) == pytest.approx(20 * h)
    from mlcurv.surfaces import Sinusoid
    s = Sinusoid(0.05, 30.0, 45.0, bbox=(np.full(3, -0.3), np.full(3, 0.3)), uv_box=((-0.5, -0.5), (0.5, 0.5)), h=h)
    grid, phi = dg._prepare(s, h, 10, 1e-4, np.random.default_rng(0))
    assert dg.collect_sinusoidal_samples(grid, phi, s, h, 0.5 * h, prm, np.random.default_rng(0)) == (None, None)


def test_hyp_paraboloid_shapes():
    h = H6
    k = 0.4 / h
    a, u = hyp_paraboloid_shape(k, 1.0)
    assert a == pytest.approx(0.5 * k * 3 ** 1.5)
    s = HypParaboloid(a, a)
    kk, _ = s.exact_curvatures(np.array([[u, 0.0], [-u, 0.0]]))
    np.testing.assert_allclose(kk, -k, rtol=1e-12)
    # the extremum is a minimum along u
    kn, _ = s.exact_curvatures(np.array([[u * 1.01, 0.0], [u * 0.99, 0.0]]))
    assert np.all(kn > -k)
    a, u = hyp_paraboloid_shape(k, 4.0)
    assert u == 0.0 and a == pytest.approx(k / 3.0)
    kk, _ = HypParaboloid(a, 4.0 * a).exact_curvatures(np.zeros((1, 2)))
    assert kk[0] == pytest.approx(-k, rel=1e-12)


def test_hyp_paraboloid_item_keeps_saddles():
    prm = HypParaboloidParams()
    h = H6
    a, u = hyp_paraboloid_shape(0.3 / h, 4.0)
    out = dg._hyp_item(((0, 0, 0), a, 4.0 * a, 0.3, u + 16 * h, 6, prm, 5))
    assert out is not None
    f, t = out
    assert np.all(f[:, 109] < dg.H2KG_NS_MIN)
    assert len(t) % 6 == 0


# ---------------------------------------------------------------- merge and split

def test_merge_fractions():
    a, b = toy_dataset(1000, seed=1), toy_dataset(800, seed=2)
    m = merge_balanced([a, b], "ns", [0.67, 0.60], seed=4, nbins=1)
    # with one bin the cap is a third of the pool, so check the pre-balancing draw instead
    picks = [np.sort(dg.derived_rng(4, 3, i).choice(len(d), size=dg._round(f * len(d)), replace=False))
             for i, (d, f) in enumerate(zip((a, b), (0.67, 0.60)))]
    assert abs(len(picks[0]) - 670) <= 1 and abs(len(picks[1]) - 480) <= 1
    assert m.meta["fractions"] == [0.67, 0.60]
    check_balance(m.targets, m.meta["balance"])


def test_merge_with_empty_source_is_balanced_copy():
    a = toy_dataset(500, seed=1)
    e = dg.empty_dataset("ns", 6, H6)
    m = merge_balanced([a, e], "ns", [1.0, 1.0], seed=0)
    ref = a.balanced(100, dg.derived_rng(0, 3, 1000))
    np.testing.assert_array_equal(m.targets, ref.targets)


def test_merge_without_rebalance_keeps_every_draw():
    a, b = toy_dataset(1000, seed=1), toy_dataset(800, seed=2)
    m = merge_balanced([a, b], "ns", [0.67, 0.60], seed=4, rebalance=False)
    pa = np.sort(dg.derived_rng(4, 3, 0).choice(1000, size=670, replace=False))
    pb = np.sort(dg.derived_rng(4, 3, 1).choice(800, size=480, replace=False))
    np.testing.assert_array_equal(m.targets, np.concatenate([a.targets[pa], b.targets[pb]]))
    assert m.meta["balance"] is None and m.meta["sources"] == ["toy", "toy"]


def test_merge_rejects_mixed_classes():
    with pytest.raises(ValueError):
        merge_balanced([toy_dataset(10), toy_dataset(10, "sd")], "ns")


def test_split_sizes_and_strata():
    ds = toy_dataset(3000, seed=7)
    tr, te, va = stratified_split(ds, seed=1)
    assert len(tr) + len(te) + len(va) == len(ds)
    assert abs(len(tr) / len(ds) - 0.7) < 0.01 and abs(len(te) / len(ds) - 0.15) < 0.01
    lab = dg.stratified_labels(ds.targets, 100, 20)
    for k in np.unique(lab):
        n = (lab == k).sum()
        ntr = np.isin(np.flatnonzero(lab == k), np.flatnonzero(np.isin(ds.targets, tr.targets))).sum()
        # folds of a bucket differ in size by at most one, so 14 of 20 folds miss 0.7 n by <= 4.2
        assert abs(ntr - 0.7 * n) <= 4.2 + 1e-9
    again = stratified_split(ds, seed=1)
    np.testing.assert_array_equal(again[0].targets, tr.targets)
    with pytest.raises(ValueError):
        stratified_split(dg.empty_dataset("ns", 6, H6))
