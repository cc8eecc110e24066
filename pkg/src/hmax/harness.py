"""Experiment orchestration: config, dataset ingestion, splits, runs,
CSV reports and the S1 timing benchmark."""

from __future__ import annotations

import csv
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from . import classify, learning
from .gabor import make_bank
from .imgproc import CombineParams, combined_image, load_grayscale, resize_height
from .layers import (C1Params, EMBED_PRESETS, PipelineConfig, c1_layer_embedded,
                     extract_features, s1_layer)

IMAGE_EXTENSIONS = {".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

BENCH_MODES = ("baseline", "approx1", "approx2")


@dataclass
class ExperimentConfig:
    """Flat, file-loadable experiment settings (see README for the format)."""

    dataset_root: str = ""
    output_dir: str = "results"
    n_train_per_class: int = 30
    target_height: int = 140
    conv_mode: str = "dense"             # dense | separable
    preprocess: str = "none"             # none | combined
    alpha: float = 0.75
    c: float = 0.25
    clahe_tile: int = 8
    clahe_clip: float = 0.01
    c1_overlap: str = "none"             # none | half
    c1_embed: str = "off"                # off | opt1 | opt2 | opt3
    prototype_source: str = "random"     # random | pam | file
    count_per_size: int = 500
    pam_medoids_per_size: int = 5
    pam_drop_per_size: int = 10
    pam_pool_budget: int = 2000
    proto_file: str = ""
    proto_image_cap: int = 0             # 0 = learn from every training image
    proto_bands: str = ""                # e.g. "1,2"; empty = all bands
    proto_sizes: str = "4,8,12,16"       # patch side lengths to sample
    beta: float = 1.0
    classifier: str = "nn"               # nn | svm
    svm_c: float = 1.0
    svm_epochs: int = 50
    runs: int = 3
    seed: int = 0
    jobs: int = 1                        # 0 = HMAX_JOBS or cpu count
    sigma_mode: str = "lambda_ratio"

    def validate(self) -> "ExperimentConfig":
        def expect(name, value, options):
            if value not in options:
                raise ValueError(f"{name} must be one of {options}, got {value!r}")
        expect("conv_mode", self.conv_mode, ("dense", "separable"))
        expect("preprocess", self.preprocess, ("none", "combined"))
        expect("c1_overlap", self.c1_overlap, ("none", "half"))
        expect("c1_embed", self.c1_embed, tuple(EMBED_PRESETS))
        expect("prototype_source", self.prototype_source, ("random", "pam", "file"))
        expect("classifier", self.classifier, ("nn", "svm"))
        expect("sigma_mode", self.sigma_mode, ("lambda_ratio", "literal"))
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if self.n_train_per_class < 1:
            raise ValueError("n_train_per_class must be >= 1")
        if self.target_height < 48:
            raise ValueError("target_height below 48 px cannot host the filter bank")
        if not (0.0 < self.alpha <= 2.0):
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if not (0.0 <= self.c <= 1.0):
            raise ValueError(f"c must be in [0, 1], got {self.c}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.count_per_size < 1:
            raise ValueError("count_per_size must be >= 1")
        if self.svm_c <= 0 or self.svm_epochs < 1:
            raise ValueError("svm_c must be > 0 and svm_epochs >= 1")
        if self.prototype_source == "file" and not self.proto_file:
            raise ValueError("prototype_source 'file' requires proto_file")
        if self.jobs < 0:
            raise ValueError("jobs must be >= 0")
        self.parsed_bands()
        self.parsed_sizes()
        return self

    def parsed_bands(self):
        if not self.proto_bands:
            return None
        try:
            bands = tuple(int(b) for b in self.proto_bands.split(","))
        except ValueError as exc:
            raise ValueError(f"bad proto_bands {self.proto_bands!r}") from exc
        if any(not 1 <= b <= 8 for b in bands):
            raise ValueError(f"proto_bands entries must be in 1..8: {bands}")
        return bands

    def parsed_sizes(self):
        try:
            sizes = tuple(int(s) for s in self.proto_sizes.split(",") if s)
        except ValueError as exc:
            raise ValueError(f"bad proto_sizes {self.proto_sizes!r}") from exc
        if not sizes or any(n < 1 for n in sizes):
            raise ValueError(f"proto_sizes must be positive: {self.proto_sizes!r}")
        return sizes

    def pipeline(self) -> PipelineConfig:
        combine = None
        if self.preprocess == "combined":
            combine = CombineParams(alpha=self.alpha, c=self.c)
        return PipelineConfig(
            combine=combine,
            clahe_tile=self.clahe_tile,
            clahe_clip=self.clahe_clip,
            c1=C1Params(overlap_mode=self.c1_overlap),
            embed=EMBED_PRESETS[self.c1_embed],
            beta=self.beta,
        )


_CONFIG_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(raw: str, name: str):
    raw = raw.strip()
    if raw.startswith('"'):
        if not raw.endswith('"') or len(raw) < 2:
            raise ValueError(f"{name}: unterminated string {raw!r}")
        return raw[1:-1]
    if "#" in raw:
        raw = raw.split("#", 1)[0].strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def load_config(path) -> ExperimentConfig:
    """Parse a flat `key = value` config file (a TOML subset).

    Strings may be double-quoted; ints, floats and true/false are
    recognized; `#` starts a comment.  Unknown keys are rejected.
    """
    cfg = ExperimentConfig()
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        value = _parse_value(raw, key)
        current = getattr(cfg, key)
        if isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int) and not isinstance(value, bool):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        elif isinstance(current, str):
            value = str(value)
        setattr(cfg, key, value)
    return cfg


@dataclass
class Dataset:
    root: Path
    categories: list
    paths: dict          # category -> sorted list of Paths

    def class_id(self, category: str) -> int:
        return self.categories.index(category)

    def total_images(self) -> int:
        return sum(len(v) for v in self.paths.values())


def ingest_dataset(root) -> Dataset:
    """Scan a category-per-directory tree into sorted, stable class ids.

    Categories with fewer than two usable images are rejected with one
    warning naming them.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} is not a directory")
    categories = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not categories:
        raise ValueError(f"dataset root {root} contains no category directories")
    paths = {}
    rejected = []
    for cat in categories:
        files = sorted(
            p for p in (root / cat).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
        if len(files) < 2:
            rejected.append(cat)
        else:
            paths[cat] = files
    if rejected:
        warnings.warn(
            f"rejecting categories with fewer than 2 images: {', '.join(rejected)}")
    kept = [c for c in categories if c in paths]
    if not kept:
        raise ValueError(f"no usable categories under {root}")
    return Dataset(root=root, categories=kept, paths=paths)


def split(ds: Dataset, n_train: int, seed: int):
    """Seeded per-category split into n_train training images and the rest.

    Categories with fewer than n_train + 1 images contribute
    count - 1 training images (with a warning) so at least one test
    image always remains.
    """
    if n_train < 1:
        raise ValueError(f"n_train must be >= 1, got {n_train}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    short = []
    for cid, cat in enumerate(ds.categories):
        files = ds.paths[cat]
        if len(files) < 2:
            raise ValueError(f"category {cat!r} has fewer than 2 images")
        take = min(n_train, len(files) - 1)
        if take < n_train:
            short.append(cat)
        order = rng.permutation(len(files))
        train.extend((files[i], cid) for i in order[:take])
        test.extend((files[i], cid) for i in order[take:])
    if short:
        warnings.warn(
            f"categories with fewer than n_train+1 images (reduced train share): "
            f"{', '.join(short)}")
    return train, test


@dataclass
class RunReport:
    accuracies: list
    mean_accuracy: float
    per_class_accuracy: dict
    confusion_path: str
    report_path: str
    layer_seconds: dict
    config: dict
    seeds: list
    isolation_violations: int
    prototype_count: int


def _load_input(path, target_height):
    return resize_height(load_grayscale(path), target_height)


# Worker globals for process pools (populated by _pool_init).
_WORK = {}


def _pool_init(bank, protos, pipeline, target_height):
    _WORK["bank"] = bank
    _WORK["protos"] = protos
    _WORK["pipeline"] = pipeline
    _WORK["target_height"] = target_height


def _pool_extract(path):
    timings = {}
    img = _load_input(path, _WORK["target_height"])
    vec = extract_features(img, _WORK["bank"], _WORK["protos"],
                           _WORK["pipeline"], timings=timings)
    return vec, timings


def _extract_all(paths, bank, protos, pipeline, target_height, jobs,
                 layer_seconds):
    """C2 vectors for a list of image paths, order-stable, optionally
    distributed over a process pool."""
    vectors = []
    if jobs <= 1:
        for path in paths:
            try:
                vec, t = _pool_extract_local(path, bank, protos, pipeline,
                                             target_height)
            except Exception as exc:
                raise RuntimeError(f"feature extraction failed for {path}: {exc}") from exc
            vectors.append(vec)
            for k, v in t.items():
                layer_seconds[k] = layer_seconds.get(k, 0.0) + v
        return np.array(vectors)
    with ProcessPoolExecutor(
            max_workers=jobs, initializer=_pool_init,
            initargs=(bank, protos, pipeline, target_height)) as pool:
        for path, (vec, t) in zip(paths, pool.map(_pool_extract, paths,
                                                  chunksize=4)):
            vectors.append(vec)
            for k, v in t.items():
                layer_seconds[k] = layer_seconds.get(k, 0.0) + v
    return np.array(vectors)


def _pool_extract_local(path, bank, protos, pipeline, target_height):
    timings = {}
    img = _load_input(path, target_height)
    vec = extract_features(img, bank, protos, pipeline, timings=timings)
    return vec, timings


def resolve_jobs(jobs: int) -> int:
    if jobs > 0:
        return jobs
    env = os.environ.get("HMAX_JOBS", "")
    if env.isdigit() and int(env) > 0:
        return int(env)
    return os.cpu_count() or 1


def _c1_only(path, bank, pipeline, target_height):
    img = _load_input(path, target_height)
    if pipeline.combine is not None:
        img = combined_image(img, pipeline.combine,
                             tile=pipeline.clahe_tile, clip=pipeline.clahe_clip)
    return c1_layer_embedded(s1_layer(img, bank), pipeline.c1, pipeline.embed)


def learn_prototypes(train, cfg: ExperimentConfig, bank, pipeline, seed: int):
    """Build the prototype set for one run from training images only.

    Returns (PrototypeSet, set of image paths the learner saw).
    """
    if cfg.prototype_source == "file":
        return learning.load_prototypes(cfg.proto_file), set()
    rng = np.random.default_rng([seed, 17])
    items = list(train)
    if cfg.proto_image_cap and len(items) > cfg.proto_image_cap:
        picks = rng.choice(len(items), size=cfg.proto_image_cap, replace=False)
        items = [items[i] for i in sorted(picks)]
    used_paths = {str(path) for path, _ in items}
    bands = cfg.parsed_bands()
    sizes = cfg.parsed_sizes()
    if cfg.prototype_source == "random":
        c1s = [_c1_only(path, bank, pipeline, cfg.target_height)
               for path, _ in items]
        protos = learning.sample_random_prototypes(
            c1s, cfg.count_per_size, sizes=sizes, seed=seed, bands=bands)
        return protos, used_paths
    by_category = {}
    for path, cid in items:
        by_category.setdefault(cid, []).append(
            _c1_only(path, bank, pipeline, cfg.target_height))
    pam_cfg = learning.PamConfig(
        medoids_per_size=cfg.pam_medoids_per_size,
        sizes=sizes,
        drop_per_size=cfg.pam_drop_per_size,
        pool_budget=cfg.pam_pool_budget,
    )
    protos = learning.pam_prototypes(sorted(by_category.items()), pam_cfg,
                                     seed=seed, bands=bands)
    return protos, used_paths


def _train_classifier(cfg, features, seed):
    if cfg.classifier == "nn":
        return classify.train_nn(features)
    return classify.train_linear_svm(features, reg_c=cfg.svm_c,
                                     epochs=cfg.svm_epochs, seed=seed)


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """The full protocol: split, learn prototypes from the training side
    only, extract C2 features, train, evaluate; repeated `runs` times
    with consecutive seeds and averaged.  Writes report.csv and
    confusion.csv under cfg.output_dir."""
    cfg.validate()
    ds = ingest_dataset(cfg.dataset_root)
    bank = make_bank(separable=(cfg.conv_mode == "separable"),
                     sigma_mode=cfg.sigma_mode)
    pipeline = cfg.pipeline()
    jobs = resolve_jobs(cfg.jobs)

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    accuracies = []
    seeds = []
    layer_seconds = {}
    confusion_total = {}
    per_class_runs = {}
    violations = 0
    proto_count = 0

    for run_idx in range(cfg.runs):
        run_seed = cfg.seed + run_idx
        seeds.append(run_seed)
        train, test = split(ds, cfg.n_train_per_class, run_seed)
        test_paths = {str(path) for path, _ in test}

        protos, learner_paths = learn_prototypes(train, cfg, bank, pipeline,
                                                 run_seed)
        proto_count = len(protos)
        violations += len(test_paths & learner_paths)

        train_x = _extract_all([p for p, _ in train], bank, protos, pipeline,
                               cfg.target_height, jobs, layer_seconds)
        train_feats = classify.LabeledFeatures(train_x,
                                               [cid for _, cid in train])
        model = _train_classifier(cfg, train_feats, run_seed)

        test_x = _extract_all([p for p, _ in test], bank, protos, pipeline,
                              cfg.target_height, jobs, layer_seconds)
        test_feats = classify.LabeledFeatures(test_x, [cid for _, cid in test])
        report = classify.evaluate(model, test_feats)
        accuracies.append(report.accuracy)
        for c, acc in report.per_class.items():
            per_class_runs.setdefault(c, []).append(acc)
        for ti, t_label in enumerate(report.labels):
            for pi, p_label in enumerate(report.labels):
                n = int(report.confusion[ti, pi])
                if n:
                    key = (t_label, p_label)
                    confusion_total[key] = confusion_total.get(key, 0) + n

    report_path = out_dir / "report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "seed", "accuracy"])
        for i, (s, a) in enumerate(zip(seeds, accuracies)):
            writer.writerow([i, s, repr(float(a))])

    confusion_path = out_dir / "confusion.csv"
    with open(confusion_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true", "pred", "count"])
        for (t_label, p_label) in sorted(confusion_total):
            writer.writerow([t_label, p_label, confusion_total[(t_label, p_label)]])

    return RunReport(
        accuracies=[float(a) for a in accuracies],
        mean_accuracy=float(np.mean(accuracies)),
        per_class_accuracy={c: float(np.mean(v))
                            for c, v in sorted(per_class_runs.items())},
        confusion_path=str(confusion_path),
        report_path=str(report_path),
        layer_seconds=layer_seconds,
        config=asdict(cfg),
        seeds=seeds,
        isolation_violations=violations,
        prototype_count=proto_count,
    )


def benchmark_s1(image_sizes, modes=BENCH_MODES, repeats: int = 5,
                 seed: int = 0, alpha: float = 0.75, c: float = 0.25,
                 out_csv=None, sigma_mode: str = "lambda_ratio"):
    """Mean wall time of the S1 stage per image size and mode.

    baseline: dense bank on the raw image; approx1: dense bank on the
    combined image; approx2: separable bank on the combined image.  The
    combined image is prepared outside the timed region; each mode gets
    one untimed warmup call and the timed repeats are interleaved
    round-robin.  Runs single-threaded for stable numbers.

    Returns rows of (size, mode, mean_s, std_s); optionally writes CSV.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    for mode in modes:
        if mode not in BENCH_MODES:
            raise ValueError(f"unknown benchmark mode {mode!r}")
    dense_bank = make_bank(separable=False, sigma_mode=sigma_mode)
    sep_bank = make_bank(separable=True, sigma_mode=sigma_mode)
    rng = np.random.default_rng(seed)
    params = CombineParams(alpha=alpha, c=c)
    rows = []
    for size in image_sizes:
        raw = rng.random((size, size))
        comb = combined_image(raw, params)
        plans = {
            "baseline": (raw, dense_bank),
            "approx1": (comb, dense_bank),
            "approx2": (comb, sep_bank),
        }
        for mode in modes:
            img, bank = plans[mode]
            s1_layer(img, bank)   # warmup, untimed
        samples = {mode: [] for mode in modes}
        for _ in range(repeats):
            for mode in modes:
                img, bank = plans[mode]
                t0 = time.perf_counter()
                s1_layer(img, bank)
                samples[mode].append(time.perf_counter() - t0)
        for mode in modes:
            arr = np.array(samples[mode])
            rows.append((size, mode, float(arr.mean()), float(arr.std())))
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["size", "mode", "mean_s", "std_s"])
            for size, mode, mean_s, std_s in rows:
                writer.writerow([size, mode, repr(mean_s), repr(std_s)])
    return rows
