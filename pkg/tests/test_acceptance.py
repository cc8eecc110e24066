"""Acceptance suite: one test per exit criterion, desk scale.

Each test prints a `criterion NN [...]: PASS|FAIL` line.  Criteria 10
and 11 measure wall time and are machine-relative by design.
"""

import functools
import itertools

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from hmax import cli, gabor, layers, learning
from hmax.gabor import GaborBank, GaborFilter, make_bank, make_separable
from hmax.harness import ExperimentConfig, benchmark_s1, run_experiment
from hmax.imgproc import CombineParams, adaptive_hist_eq, combined_image, svd_reconstruct
from hmax.layers import C1Params, EmbedRule, gaussian_response
from hmax.learning import PamConfig, pam_cluster, pam_prototypes
from hmax.synthetic import generate_synthetic_dataset


def criterion(num, label):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"criterion {num:02d} [{label}]: FAIL")
                raise
            print(f"criterion {num:02d} [{label}]: PASS")
        return wrapper
    return deco


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance") / "gratings"
    generate_synthetic_dataset(root, images_per_class=20, seed=0)
    return root


@criterion(1, "separable equals dense, all 64 filters")
def test_c01_separable_dense_equivalence():
    sep_bank = make_bank(separable=True)
    iso_dense = GaborBank(
        filters=tuple(GaborFilter(f.scale_index, f.orientation, f.dense_taps())
                      for f in sep_bank.filters),
        separable=False)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        img = rng.random((64, 64))
        for sf, df in zip(sep_bank.filters, iso_dense.filters):
            a = gabor.convolve_separable(img, sf)
            b = gabor.convolve_dense(img, df)
            worst = max(worst, float(np.abs(a - b).max()))
    assert worst < 1e-5, f"max deviation {worst}"


def _naive_correlate(img, kernel):
    h, w = img.shape
    m = kernel.shape[0]
    half = (m - 1) // 2
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    rr, cc = r + dy, c + dx
                    if 0 <= rr < h and 0 <= cc < w:
                        acc += img[rr, cc] * kernel[dy + half, dx + half]
            out[r, c] = acc
    return out


@criterion(2, "dense convolution vs four-loop oracle")
def test_c02_dense_matches_naive_oracle():
    rng = np.random.default_rng(2)
    for pair in range(20):
        size = int(rng.integers(12, 25))
        img = rng.random((size, size))
        if pair % 2 == 0:
            filt = gabor.make_filter(int(rng.integers(1, 4)),
                                     float(rng.choice(gabor.ORIENTATIONS)))
        else:
            m = int(rng.choice([3, 5, 7, 9]))
            filt = GaborFilter(0, 0.0, rng.standard_normal((m, m)))
        expected = np.abs(_naive_correlate(img, filt.taps))
        got = gabor.convolve_dense(img, filt)
        assert np.abs(got - expected).max() < 1e-6


@criterion(3, "blend and reconstruction identities")
def test_c03_blend_and_svd_identities():
    rng = np.random.default_rng(3)
    for _ in range(5):
        img = rng.random((48, 40))
        adapted = adaptive_hist_eq(img)
        out = combined_image(img, CombineParams(alpha=0.6, c=0.0))
        assert np.array_equal(out, adapted), "c=0 must return the equalized image"
        rec = svd_reconstruct(img, 1.0, clamp=False)
        assert np.abs(rec - img).max() < 1e-6, "alpha=1 must be the identity"


@criterion(4, "C1 pooling oracle and embedding dominance")
def test_c04_c1_oracle():
    rng = np.random.default_rng(4)
    s1 = [rng.random((2, 4, 44, 44)) for _ in range(8)]
    for overlap in ("none", "half"):
        params = C1Params(overlap_mode=overlap)
        c1 = layers.c1_layer(s1, params)
        for b in range(1, 9):
            n, stride = params.grid_size(b), params.stride(b)
            mx = s1[b - 1].max(axis=0)
            oh = (44 - n) // stride + 1
            for o in range(4):
                for i in range(oh):
                    for j in range(oh):
                        window = mx[o, i * stride:i * stride + n,
                                    j * stride:j * stride + n]
                        assert c1[b - 1][o, i, j] == window.max()
        plain = c1
        zero_w = layers.c1_layer_embedded(s1, params,
                                          EmbedRule(mode="all", w_all=0.0))
        for a, b2 in zip(plain, zero_w):
            assert np.array_equal(a, b2)
        heavier = layers.c1_layer_embedded(s1, params,
                                           EmbedRule(mode="all", w_all=0.8))
        for a, b2 in zip(plain, heavier):
            assert (b2 >= a).all()


@criterion(5, "RBF response range over 1e5 triples")
def test_c05_rbf_range():
    rng = np.random.default_rng(5)
    n = 100_000
    x = rng.random((n, 4, 2, 2))
    p = rng.random((n, 4, 2, 2))
    exact = rng.choice(n, size=200, replace=False)
    p[exact] = x[exact]
    beta = rng.uniform(0.05, 5.0, size=n)
    d2 = ((x - p) ** 2).sum(axis=(1, 2, 3))
    resp = gaussian_response(d2, beta)
    assert (resp > 0.0).all() and (resp <= 1.0).all()
    is_one = np.abs(resp - 1.0) <= 1e-12
    is_zero_dist = d2 <= 1e-12
    assert np.array_equal(is_one, is_zero_dist)
    # a slice of triples pushed through the real S2 path must agree
    for i in rng.choice(n, size=50, replace=False):
        c1 = [x[i]] * 8
        s2 = layers.s2_layer(c1, [p[i]], beta=float(beta[i]))
        assert s2[0][0].shape == (1, 1)
        assert abs(s2[0][0][0, 0] - resp[i]) < 1e-12


@criterion(6, "PAM local search quality gate")
def test_c06_pam_quality():
    exact_hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed + 100)
        n = int(rng.integers(6, 13))
        k = int(rng.integers(2, 4))
        pool = [rng.random((1, 2, 2)) for _ in range(n)]
        state = pam_cluster(pool, k=k, seed=seed)
        flat = np.stack([q.ravel() for q in pool])
        dist = cdist(flat, flat)
        optimum = min(dist[:, combo].min(axis=1).sum()
                      for combo in itertools.combinations(range(n), k))
        assert state.total_cost <= 1.10 * optimum, (
            f"seed {seed}: cost {state.total_cost} vs optimum {optimum}")
        hist = state.cost_history
        assert all(b < a for a, b in zip(hist, hist[1:]))
        if abs(state.total_cost - optimum) < 1e-9:
            exact_hits += 1
    assert exact_hits >= 1


@criterion(7, "prototype pipeline counting, 102 categories")
def test_c07_prototype_counting():
    rng = np.random.default_rng(7)
    cats = {}
    for ci in range(102):
        cats[f"cat{ci:03d}"] = [
            [rng.random((4, 20, 20)) for _ in range(8)]]
    pre = pam_prototypes(cats, PamConfig(drop_per_size=0, pool_budget=16,
                                         max_iter=40), seed=0)
    assert len(pre) == 2040
    post = pam_prototypes(cats, PamConfig(drop_per_size=10, pool_budget=16,
                                          max_iter=40), seed=0)
    assert len(post) == 2000
    assert post.counts_per_size() == {4: 500, 8: 500, 12: 500, 16: 500}
    assert all(p.tensor.any() for p in post.prototypes)


@criterion(8, "end-to-end synthetic classification >= 0.9")
def test_c08_synthetic_end_to_end(synth_root, tmp_path):
    for clf in ("nn", "svm"):
        cfg = ExperimentConfig(
            dataset_root=str(synth_root),
            output_dir=str(tmp_path / f"e2e_{clf}"),
            n_train_per_class=15, target_height=140, conv_mode="separable",
            prototype_source="random", count_per_size=10, beta=0.1,
            classifier=clf, runs=3, seed=0, jobs=1)
        report = run_experiment(cfg)
        assert report.prototype_count == 40
        assert report.isolation_violations == 0
        assert report.mean_accuracy >= 0.9, (
            f"{clf}: {report.accuracies} mean {report.mean_accuracy}")


@criterion(9, "byte-identical CSV outputs for a fixed seed")
def test_c09_run_determinism(synth_root, tmp_path):
    def invoke(out_dir):
        code = cli.main([
            "run", "--dataset-root", str(synth_root),
            "--output-dir", str(out_dir),
            "--n-train-per-class", "3", "--target-height", "64",
            "--conv-mode", "separable", "--proto-sizes", "4,8",
            "--count-per-size", "3", "--beta", "0.1",
            "--runs", "2", "--seed", "7"])
        assert code == 0
    invoke(tmp_path / "first")
    invoke(tmp_path / "second")
    for name in ("report.csv", "confusion.csv"):
        a = (tmp_path / "first" / name).read_bytes()
        b = (tmp_path / "second" / name).read_bytes()
        assert a == b, f"{name} differs between identical invocations"


@criterion(10, "S1 timing ordering at 256x256")
def test_c10_benchmark_ordering():
    rows = benchmark_s1([256], repeats=5, seed=0)
    means = {mode: mean_s for _, mode, mean_s, _ in rows}
    assert means["approx2"] < means["approx1"], (
        f"approx2 {means['approx2']:.4f} !< approx1 {means['approx1']:.4f}")
    assert means["approx1"] < means["baseline"], (
        f"approx1 {means['approx1']:.4f} !< baseline {means['baseline']:.4f}")


@criterion(11, "dense vs separable asymptotics in filter size")
def test_c11_asymptotics():
    import time

    rng = np.random.default_rng(11)
    img = rng.random((128, 128))

    def best_of(fn, reps=5):
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return min(times)

    sizes, dense_t, sep_t = [], [], []
    for s in (1, 8, 16):   # M = 7, 21, 37
        f = gabor.make_filter(s, 0.0)
        sf = make_separable(s, 0.0)
        gabor.convolve_dense(img, f)
        gabor.convolve_separable(img, sf)
        dense_t.append(best_of(lambda: gabor.convolve_dense(img, f)))
        sep_t.append(best_of(lambda: gabor.convolve_separable(img, sf)))
        sizes.append(f.size)
    exponent = np.polyfit(np.log(sizes), np.log(dense_t), 1)[0]
    assert exponent >= 1.7, f"dense growth exponent {exponent:.2f}"
    ratios = [d / s2 for d, s2 in zip(dense_t, sep_t)]
    assert all(b > a for a, b in zip(ratios, ratios[1:])), (
        f"dense/separable ratios not increasing: {ratios}")
