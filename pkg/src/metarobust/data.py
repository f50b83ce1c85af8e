"""Synthetic few-shot universes: generation, persistence, class splits and
episode sampling.

A dataset lives in a directory holding ``manifest.txt`` (``key=value``
lines) and ``data.csv`` (``class_id,example_id,v0,...``).  Values are
written with 9 significant digits; ``generate_gaussian_universe`` rounds
its samples to that precision up front so that a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConsistencyError, ParseError
from .rng import make_rng

MANIFEST_FILE = "manifest.txt"
DATA_FILE = "data.csv"
SPLIT_FILE = "split.txt"


@dataclass(frozen=True)
class ClassInfo:
    class_id: int
    example_count: int


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    dim: int
    classes: tuple
    seed: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        ids = [c.class_id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ConsistencyError("class ids must be unique and contiguous from 0")
        if any(c.example_count < 1 for c in self.classes):
            raise ConsistencyError("every class needs at least one example")

    @property
    def num_classes(self):
        return len(self.classes)

    @property
    def class_ids(self):
        return [c.class_id for c in self.classes]


@dataclass
class Dataset:
    """In-memory dataset: ``vectors[class_id, example_id]`` is one input."""

    manifest: DatasetManifest
    vectors: np.ndarray

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 3:
            raise ConsistencyError("vectors must have shape (classes, examples, dim)")
        if v.shape[0] != self.manifest.num_classes or v.shape[2] != self.manifest.dim:
            raise ConsistencyError(
                f"vectors shape {v.shape} disagrees with manifest "
                f"({self.manifest.num_classes} classes, dim {self.manifest.dim})"
            )
        for c in self.manifest.classes:
            if c.example_count != v.shape[1]:
                raise ConsistencyError(
                    f"class {c.class_id}: manifest says {c.example_count} examples, "
                    f"data has {v.shape[1]}"
                )
        self.vectors.setflags(write=False)

    @property
    def dim(self):
        return self.manifest.dim

    @property
    def examples_per_class(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ClassSplit:
    train_classes: tuple
    val_classes: tuple
    test_classes: tuple

    def __post_init__(self):
        parts = [set(self.train_classes), set(self.val_classes), set(self.test_classes)]
        if not all(parts):
            raise ConfigurationError("every split part must be non-empty")
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise ConfigurationError("split parts must be pairwise disjoint")

    def part(self, name):
        try:
            return {"train": self.train_classes, "val": self.val_classes,
                    "test": self.test_classes}[name]
        except KeyError:
            raise ConfigurationError(f"unknown split part {name!r}") from None


@dataclass(frozen=True)
class EpisodeShape:
    """``K``-way ``J``-shot task with a pool of ``M`` candidates and ``Q``
    queries per class."""

    K: int = 5
    J: int = 1
    M: int = 60
    Q: int = 40

    def __post_init__(self):
        if self.K < 2:
            raise ConfigurationError(f"K must be >= 2, got {self.K}")
        if not 1 <= self.J <= self.M:
            raise ConfigurationError(f"need 1 <= J <= M, got J={self.J}, M={self.M}")
        if self.Q < 1:
            raise ConfigurationError(f"Q must be >= 1, got {self.Q}")


@dataclass(frozen=True)
class Episode:
    shape: EpisodeShape
    class_ids: tuple
    support_pool: np.ndarray        # (K, M, dim)
    query_inputs: np.ndarray        # (K*Q, dim)
    query_labels: np.ndarray        # (K*Q,)
    pool_example_ids: np.ndarray = field(repr=False, default=None)   # (K, M)
    query_example_ids: np.ndarray = field(repr=False, default=None)  # (K, Q)

    def support_inputs(self, Z):
        """Raw support vectors and local labels selected by index set ``Z``."""
        Z = np.asarray(Z)
        K, J = Z.shape
        x = self.support_pool[np.arange(K)[:, None], Z].reshape(K * J, -1)
        return x, np.repeat(np.arange(K), J)


def generate_gaussian_universe(num_classes, dim, center_scale, within_std,
                               examples_per_class, seed, name="gaussian"):
    """Sample class centers in a cube and isotropic Gaussian examples around them."""
    if num_classes < 3:
        raise ConfigurationError(f"num_classes must be >= 3, got {num_classes}")
    if dim < 2:
        raise ConfigurationError(f"dim must be >= 2, got {dim}")
    if not within_std > 0:
        raise ConfigurationError(f"within_std must be > 0, got {within_std}")
    if examples_per_class < 1:
        raise ConfigurationError("examples_per_class must be >= 1")
    if center_scale < 0:
        raise ConfigurationError("center_scale must be >= 0")
    rng = make_rng(seed)
    centers = rng.uniform(-center_scale, center_scale, size=(num_classes, dim))
    noise = rng.standard_normal((num_classes, examples_per_class, dim))
    vectors = _round_sig9(centers[:, None, :] + within_std * noise)
    manifest = DatasetManifest(
        name=name, dim=dim,
        classes=tuple(ClassInfo(k, examples_per_class) for k in range(num_classes)),
        seed=int(seed),
    )
    return Dataset(manifest, vectors), centers


def _round_sig9(a):
    flat = [float(f"{v:.9g}") for v in a.ravel().tolist()]
    return np.array(flat, dtype=np.float64).reshape(a.shape)


def split_classes(manifest, fractions, seed, min_classes=5):
    """Shuffle class ids by ``seed`` and cut them into train/val/test parts."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigurationError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {sum(fractions)}")
    n = manifest.num_classes
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    for part, size in zip(("train", "val", "test"), (n_train, n_val, n_test)):
        if size < min_classes:
            raise ConfigurationError(
                f"{part} part gets {size} classes, fewer than the way count {min_classes}"
            )
    order = make_rng(seed).permutation(np.array(manifest.class_ids))
    order = [int(c) for c in order]
    return ClassSplit(
        train_classes=tuple(sorted(order[:n_train])),
        val_classes=tuple(sorted(order[n_train:n_train + n_val])),
        test_classes=tuple(sorted(order[n_train + n_val:])),
    )


def sample_episode(dataset, split_part, shape, seed):
    """Draw ``K`` classes from ``split_part`` and disjoint pool/query examples."""
    pool = sorted(int(c) for c in split_part)
    if len(pool) < shape.K:
        raise ConfigurationError(f"need {shape.K} classes, split part has {len(pool)}")
    n = dataset.examples_per_class
    if shape.M + shape.Q > n:
        raise ConfigurationError(
            f"M + Q = {shape.M + shape.Q} exceeds {n} examples per class"
        )
    rng = make_rng(seed)
    class_ids = rng.choice(np.array(pool), size=shape.K, replace=False)
    picks = np.stack([rng.choice(n, size=shape.M + shape.Q, replace=False)
                      for _ in range(shape.K)])
    pool_ids, query_ids = picks[:, :shape.M], picks[:, shape.M:]
    v = dataset.vectors
    support_pool = v[class_ids[:, None], pool_ids]
    query_inputs = v[class_ids[:, None], query_ids].reshape(shape.K * shape.Q, -1)
    return Episode(
        shape=shape,
        class_ids=tuple(int(c) for c in class_ids),
        support_pool=support_pool,
        query_inputs=query_inputs,
        query_labels=np.repeat(np.arange(shape.K), shape.Q),
        pool_example_ids=pool_ids,
        query_example_ids=query_ids,
    )


# -- persistence -----------------------------------------------------------

def save_dataset(dataset, path):
    os.makedirs(path, exist_ok=True)
    m = dataset.manifest
    with open(os.path.join(path, MANIFEST_FILE), "w", newline="\n") as fh:
        fh.write(f"name={m.name}\n")
        fh.write(f"dim={m.dim}\n")
        fh.write(f"classes={m.num_classes}\n")
        fh.write(f"examples_per_class={dataset.examples_per_class}\n")
        fh.write(f"seed={m.seed}\n")
    header = ["class_id", "example_id"] + [f"v{i}" for i in range(m.dim)]
    lines = [",".join(header)]
    for c in range(m.num_classes):
        for e in range(dataset.examples_per_class):
            vals = ",".join(f"{x:.9g}" for x in dataset.vectors[c, e].tolist())
            lines.append(f"{c},{e},{vals}")
    with open(os.path.join(path, DATA_FILE), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_keyvalue(path):
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value in {os.path.basename(path)}", lineno)
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_dataset(path):
    kv = read_keyvalue(os.path.join(path, MANIFEST_FILE))
    missing = {"name", "dim", "classes", "examples_per_class", "seed"} - kv.keys()
    if missing:
        raise ParseError(f"manifest lacks keys {sorted(missing)}")
    try:
        dim, n_classes = int(kv["dim"]), int(kv["classes"])
        per_class, seed = int(kv["examples_per_class"]), int(kv["seed"])
    except ValueError as exc:
        raise ParseError(f"bad manifest value: {exc}") from None
    manifest = DatasetManifest(
        name=kv["name"], dim=dim,
        classes=tuple(ClassInfo(k, per_class) for k in range(n_classes)), seed=seed,
    )

    rows = {}
    with open(os.path.join(path, DATA_FILE)) as fh:
        header = fh.readline().rstrip("\n").split(",")
        expected = ["class_id", "example_id"] + [f"v{i}" for i in range(dim)]
        if header != expected:
            raise ParseError("malformed header", 1)
        for lineno, raw in enumerate(fh, 2):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 2:
                raise ParseError(f"expected {dim + 2} columns, found {len(parts)}", lineno)
            try:
                c, e = int(parts[0]), int(parts[1])
                vals = [float(p) for p in parts[2:]]
            except ValueError:
                raise ParseError("non-numeric field", lineno) from None
            if not all(math.isfinite(x) for x in vals):
                raise ParseError("non-finite value", lineno)
            rows.setdefault(c, []).append((e, vals, lineno))

    if sorted(rows) != list(range(n_classes)):
        raise ConsistencyError(
            f"manifest lists {n_classes} classes, data has class ids {sorted(rows)[:10]}..."
        )
    vectors = np.empty((n_classes, per_class, dim))
    for c, items in rows.items():
        if len(items) != per_class:
            raise ConsistencyError(
                f"class {c}: manifest example_count {per_class}, data has {len(items)} rows"
            )
        for expect, (e, vals, lineno) in enumerate(items):
            if e != expect:
                raise ParseError(f"rows must be sorted by example_id, got {e}", lineno)
            vectors[c, e] = vals
    return Dataset(manifest, vectors)


def save_split(split, path):
    with open(os.path.join(path, SPLIT_FILE), "w", newline="\n") as fh:
        for name in ("train", "val", "test"):
            fh.write(f"{name}={' '.join(str(c) for c in split.part(name))}\n")


def load_split(path):
    kv = read_keyvalue(os.path.join(path, SPLIT_FILE))
    try:
        return ClassSplit(*(tuple(int(c) for c in kv[p].split()) for p in ("train", "val", "test")))
    except KeyError as exc:
        raise ParseError(f"split file lacks {exc}") from None
