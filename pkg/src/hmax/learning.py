"""Prototype acquisition for the S2 layer.

Prototypes are (4, n, n) patches of C1 values, n in {4, 8, 12, 16},
either sampled uniformly at random from training C1 maps or produced
per category and size by a k-medoid (PAM) local search and pooled.
Prototype sets serialize to a small binary format (magic "HMXP") and
to a text dump for diffing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

PATCH_SIZES = (4, 8, 12, 16)

_MAGIC = b"HMXP"
_VERSION = 1
_ORIGIN_CODES = {"random": 0, "pam": 1}
_ORIGIN_NAMES = {v: k for k, v in _ORIGIN_CODES.items()}


def frobenius_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Square root of the sum of squared elementwise differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


@dataclass(frozen=True)
class Prototype:
    """One stored S2 patch with its provenance."""

    size_class: int
    tensor: np.ndarray        # shape (4, n, n)
    band: int                 # 1..8
    position: tuple | None = None

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float64)
        if t.ndim != 3 or t.shape[1] != self.size_class or t.shape[2] != self.size_class:
            raise ValueError(
                f"tensor shape {t.shape} does not match size_class {self.size_class}")
        if not np.isfinite(t).all():
            raise ValueError("prototype tensor contains non-finite values")
        if not t.any():
            raise ValueError("all-zero prototype rejected")
        object.__setattr__(self, "tensor", t)


@dataclass
class PrototypeSet:
    prototypes: list
    origin: str
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.prototypes)

    def counts_per_size(self) -> dict:
        counts: dict = {}
        for p in self.prototypes:
            counts[p.size_class] = counts.get(p.size_class, 0) + 1
        return counts


def _valid_slots(c1_per_image, size, bands=None):
    """All (image, band) pairs whose C1 map admits size x size patches."""
    slots = []
    for ii, c1 in enumerate(c1_per_image):
        for bi, maps in enumerate(c1):
            if bands is not None and (bi + 1) not in bands:
                continue
            h, w = np.asarray(maps).shape[-2:]
            if h >= size and w >= size:
                slots.append((ii, bi, h - size + 1, w - size + 1))
    return slots


def sample_random_prototypes(c1_per_image, count_per_size: int,
                             sizes=PATCH_SIZES, seed: int = 0,
                             bands=None) -> PrototypeSet:
    """Sample patches uniformly over valid (image, band) pairs and positions.

    All-zero patches are rejected and redrawn, up to 100 attempts per
    requested patch; exhausting the budget raises (degenerate input).
    Deterministic for a fixed seed.
    """
    if count_per_size < 1:
        raise ValueError(f"count_per_size must be >= 1, got {count_per_size}")
    c1_per_image = list(c1_per_image)
    if not c1_per_image:
        raise ValueError("no training C1 responses supplied")
    rng = np.random.default_rng(seed)
    protos = []
    for size in sizes:
        slots = _valid_slots(c1_per_image, size, bands)
        if not slots:
            raise ValueError(f"no C1 map large enough for {size}x{size} patches")
        counts = [rmax * cmax for (_, _, rmax, cmax) in slots]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        total = int(offsets[-1])
        budget = 100 * count_per_size
        got = 0
        while got < count_per_size:
            if budget <= 0:
                raise RuntimeError(
                    f"could not draw {count_per_size} nonzero {size}x{size} patches; "
                    "training set looks degenerate")
            budget -= 1
            # Jointly uniform over all valid (image, band, row, col) draws.
            flat = int(rng.integers(total))
            si = int(np.searchsorted(offsets, flat, side="right")) - 1
            ii, bi, rmax, cmax = slots[si]
            r, c = divmod(flat - int(offsets[si]), cmax)
            patch = np.asarray(c1_per_image[ii][bi])[:, r:r + size, c:c + size]
            if not patch.any():
                continue
            protos.append(Prototype(size, patch.copy(), band=bi + 1, position=(r, c)))
            got += 1
    return PrototypeSet(protos, origin="random", seed=seed)


@dataclass
class PamState:
    """Result of one k-medoid run.

    `cost_history` records the total cost at initialization and after
    each accepted swap, so it is strictly decreasing after index 0.
    """

    medoid_indices: np.ndarray
    medoids: list
    assignment: np.ndarray
    total_cost: float
    cost_history: list = field(default_factory=list)


def pam_cluster(patches, k: int, max_iter: int = 100, seed=0) -> PamState:
    """Partition-around-medoids by randomized swap local search.

    Starts from k medoids drawn uniformly without replacement, assigns
    every patch to its nearest medoid (Frobenius distance, ties to the
    lowest medoid slot), then repeatedly proposes replacing one medoid
    with one non-medoid.  A swap is accepted only if it strictly lowers
    the total assignment cost; each acceptance restarts a fresh sweep
    over all (slot, candidate) pairs in seeded-random order.  The
    search stops when a complete sweep accepts nothing (the result is
    then 1-swap stable) or after max_iter sweeps.
    """
    patches = [np.asarray(p, dtype=np.float64) for p in patches]
    n = len(patches)
    if n == 0:
        raise ValueError("empty patch pool")
    shape = patches[0].shape
    for p in patches:
        if p.shape != shape:
            raise ValueError(f"patch shape mismatch: {p.shape} vs {shape}")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}, got {k}")

    flat = np.stack([p.ravel() for p in patches])
    dist = cdist(flat, flat)
    rng = np.random.default_rng(seed)

    medoids = np.sort(rng.choice(n, size=k, replace=False))
    cost = float(dist[:, medoids].min(axis=1).sum())
    history = [cost]

    for _ in range(max_iter):
        non_medoids = np.setdiff1d(np.arange(n), medoids)
        if non_medoids.size == 0:
            break
        pairs = [(slot, j) for slot in range(k) for j in non_medoids]
        order = rng.permutation(len(pairs))
        accepted = False
        for idx in order:
            slot, j = pairs[idx]
            trial = medoids.copy()
            trial[slot] = j
            new_cost = float(dist[:, trial].min(axis=1).sum())
            if new_cost < cost:
                medoids = trial
                cost = new_cost
                history.append(cost)
                accepted = True
                break
        if not accepted:
            break

    assignment = np.argmin(dist[:, medoids], axis=1)
    total = float(dist[np.arange(n), medoids[assignment]].sum())
    return PamState(
        medoid_indices=medoids.copy(),
        medoids=[patches[m] for m in medoids],
        assignment=assignment,
        total_cost=total,
        cost_history=history,
    )


def cluster_mean_distances(state: PamState, patches) -> np.ndarray:
    """Mean member-to-medoid distance per cluster (medoid itself included)."""
    patches = [np.asarray(p, dtype=np.float64) for p in patches]
    means = np.zeros(len(state.medoid_indices))
    for s, m in enumerate(state.medoid_indices):
        members = np.flatnonzero(state.assignment == s)
        if members.size:
            means[s] = float(np.mean(
                [frobenius_distance(patches[j], patches[m]) for j in members]))
    return means


@dataclass(frozen=True)
class PamConfig:
    medoids_per_size: int = 5
    sizes: tuple = PATCH_SIZES
    drop_per_size: int = 10
    pool_budget: int = 2000
    max_iter: int = 100
    drop_mode: str = "weakest"   # weakest | random

    def __post_init__(self):
        if self.medoids_per_size < 1:
            raise ValueError("medoids_per_size must be >= 1")
        if self.drop_per_size < 0:
            raise ValueError("drop_per_size must be >= 0")
        if self.drop_mode not in ("weakest", "random"):
            raise ValueError(f"unknown drop_mode {self.drop_mode!r}")


def _candidate_pool(c1_list, size, budget, rng, bands=None):
    """Up to `budget` nonzero patches from one category's C1 maps.

    Position sampling is uniform over all valid (image, band, row, col)
    coordinates when the total exceeds the budget.
    """
    slots = _valid_slots(c1_list, size, bands)
    counts = [rmax * cmax for (_, _, rmax, cmax) in slots]
    total = int(np.sum(counts))
    if total == 0:
        return [], []
    if total > budget:
        picks = np.sort(rng.choice(total, size=budget, replace=False))
    else:
        picks = np.arange(total)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    pool, meta = [], []
    for flat in picks:
        si = int(np.searchsorted(offsets, flat, side="right")) - 1
        ii, bi, rmax, cmax = slots[si]
        local = int(flat - offsets[si])
        r, c = divmod(local, cmax)
        patch = np.asarray(c1_list[ii][bi])[:, r:r + size, c:c + size]
        if not patch.any():
            continue
        pool.append(patch.copy())
        meta.append((bi + 1, (r, c)))
    return pool, meta


def pam_prototypes(training_c1, cfg: PamConfig = PamConfig(),
                   seed: int = 0, bands=None) -> PrototypeSet:
    """Per-category, per-size PAM medoids pooled into one prototype set.

    `training_c1` maps category name to that category's C1 responses
    (an ordered mapping or a sequence of (name, responses) pairs).  For
    every category and patch size, `medoids_per_size` medoids are
    clustered out of a budgeted candidate pool of nonzero patches; the
    medoids of all categories are pooled in (category, size) order and
    `drop_per_size` prototypes per size class are then dropped.  The
    default drop rule removes the medoids with the largest mean
    member distance (the weakest cluster representatives); drop_mode
    "random" removes a seeded-uniform choice instead.
    """
    if hasattr(training_c1, "items"):
        items = sorted(training_c1.items())
    else:
        items = list(training_c1)
    if not items:
        raise ValueError("no training categories supplied")

    entries = []   # (size_idx, cat_idx, slot, mean_dist, Prototype)
    for ci, (name, c1_list) in enumerate(items):
        c1_list = list(c1_list)
        for si, size in enumerate(cfg.sizes):
            rng = np.random.default_rng([seed, ci, si])
            pool, meta = _candidate_pool(c1_list, size, cfg.pool_budget, rng, bands)
            if not pool:
                raise ValueError(
                    f"category {name!r} has no nonzero {size}x{size} patches")
            if len(pool) < cfg.medoids_per_size:
                raise ValueError(
                    f"category {name!r}: pool of {len(pool)} {size}x{size} patches "
                    f"cannot supply {cfg.medoids_per_size} medoids")
            state = pam_cluster(pool, cfg.medoids_per_size,
                                max_iter=cfg.max_iter, seed=[seed, ci, si, 1])
            means = cluster_mean_distances(state, pool)
            for slot, m in enumerate(state.medoid_indices):
                band, pos = meta[m]
                proto = Prototype(size, pool[m], band=band, position=pos)
                entries.append((si, ci, slot, float(means[slot]), proto))

    kept = []
    drop_rng = np.random.default_rng([seed, 0xD0])
    for si, size in enumerate(cfg.sizes):
        group = [e for e in entries if e[0] == si]
        if cfg.drop_per_size >= len(group):
            raise ValueError(
                f"cannot drop {cfg.drop_per_size} of {len(group)} size-{size} prototypes")
        if cfg.drop_per_size:
            if cfg.drop_mode == "weakest":
                ranked = sorted(group, key=lambda e: (-e[3], e[1], e[2]))
                dropped = {id(e[4]) for e in ranked[:cfg.drop_per_size]}
            else:
                picks = drop_rng.choice(len(group), size=cfg.drop_per_size,
                                        replace=False)
                dropped = {id(group[i][4]) for i in picks}
            group = [e for e in group if id(e[4]) not in dropped]
        kept.extend(group)

    kept.sort(key=lambda e: (e[1], e[0], e[2]))   # category, size, slot
    return PrototypeSet([e[4] for e in kept], origin="pam", seed=seed)


def save_prototypes(ps: PrototypeSet, path) -> None:
    """Write the binary prototype format.

    Little-endian: magic "HMXP", version u32, count u32; per prototype
    size_class u8, origin u8, band u8, reserved u8, then n*n*4 float32
    values, row-major with orientation varying fastest.
    """
    origin_code = _ORIGIN_CODES.get(ps.origin, 0)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(ps.prototypes)))
        for p in ps.prototypes:
            fh.write(struct.pack("<BBBB", p.size_class, origin_code, p.band, 0))
            planes = np.transpose(p.tensor, (1, 2, 0))   # (n, n, 4)
            fh.write(planes.astype("<f4").tobytes())


def load_prototypes(path) -> PrototypeSet:
    """Read the binary prototype format written by save_prototypes."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a prototype file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    offset = 12
    protos = []
    origin_code = 0
    for _ in range(count):
        size, origin_code, band, _reserved = struct.unpack_from("<BBBB", data, offset)
        offset += 4
        nval = size * size * 4
        vals = np.frombuffer(data, dtype="<f4", count=nval, offset=offset)
        offset += 4 * nval
        tensor = np.ascontiguousarray(
            np.transpose(vals.reshape(size, size, 4), (2, 0, 1)), dtype=np.float64)
        protos.append(Prototype(size, tensor, band=band))
    return PrototypeSet(protos, origin=_ORIGIN_NAMES.get(origin_code, "random"))


def dump_prototypes_text(ps: PrototypeSet) -> str:
    """Human-diffable dump: one prototype per block, decimal floats."""
    lines = [f"prototypes {len(ps.prototypes)} origin {ps.origin}"]
    for i, p in enumerate(ps.prototypes):
        pos = "-" if p.position is None else f"{p.position[0]},{p.position[1]}"
        lines.append(f"prototype {i} size {p.size_class} band {p.band} position {pos}")
        for o in range(p.tensor.shape[0]):
            lines.append(f" orientation {o}")
            for row in p.tensor[o]:
                lines.append("  " + " ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
