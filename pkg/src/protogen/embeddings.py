"""Labelled embedding datasets, synthetic generation, CSV I/O and global prototypes."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, UsageError


@dataclass(frozen=True)
class Embedding:
    class_id: int
    features: np.ndarray


class Dataset:
    """An immutable collection of labelled embeddings of a common dimension.

    Stored column-wise: ``labels`` is an ``(n,)`` int64 array and ``features``
    an ``(n, d)`` float64 array.  Both are made read-only.
    """

    def __init__(self, labels, features, dim=None):
        labels = np.array(labels, dtype=np.int64).reshape(-1)
        features = np.array(features, dtype=np.float64)
        if features.size == 0:
            if dim is None:
                dim = features.shape[1] if features.ndim == 2 else 0
            features = features.reshape(0, dim)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ValueError(
                f"labels {labels.shape} and features {features.shape} do not line up"
            )
        if dim is not None and features.shape[1] != dim:
            raise ValueError(f"expected dimension {dim}, got {features.shape[1]}")
        if labels.size and labels.min() < 0:
            raise ValueError("class ids must be nonnegative")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        labels.flags.writeable = False
        features.flags.writeable = False
        self.labels = labels
        self.features = features
        self._by_class = None

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, i):
        return Embedding(int(self.labels[i]), self.features[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )

    def __repr__(self):
        return f"Dataset(n={len(self)}, dim={self.dim}, classes={len(self.classes)})"

    @property
    def classes(self):
        """Sorted array of distinct class ids."""
        return np.array(sorted(self.indices_by_class()), dtype=np.int64)

    def indices_by_class(self):
        """Map class id -> int64 array of row indices, in dataset order."""
        if self._by_class is None:
            groups = {}
            for i, c in enumerate(self.labels.tolist()):
                groups.setdefault(c, []).append(i)
            self._by_class = {c: np.array(ix, dtype=np.int64) for c, ix in groups.items()}
        return self._by_class

    def subset_classes(self, class_ids):
        keep = np.isin(self.labels, np.asarray(list(class_ids), dtype=np.int64))
        return Dataset(self.labels[keep], self.features[keep], dim=self.dim)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic contaminated-Gaussian embedding model.

    Class means are standardised random vectors (zero feature mean, feature
    standard deviation ``mean_scale``).  With ``mean_rank < dim`` they are
    drawn from a shared random ``mean_rank``-dimensional subspace before
    standardisation, which mimics the low intrinsic dimension of real
    backbone features.  Samples are isotropic Gaussians of std
    ``within_std`` around their class mean; ``floor(outlier_fraction * M)``
    samples per class are then pushed ``outlier_shift * within_std`` along a
    uniformly random direction.
    """

    n_classes: int
    dim: int
    samples_per_class: int
    mean_scale: float = 1.0
    within_std: float = 1.0
    outlier_fraction: float = 0.0
    outlier_shift: float = 0.0
    seed: int = 0
    mean_rank: int | None = None

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.outlier_shift < 0:
            raise ValueError("outlier_shift must be >= 0")
        if self.within_std < 0 or self.mean_scale < 0:
            raise ValueError("scales must be nonnegative")
        if self.mean_rank is not None and not 1 <= self.mean_rank <= self.dim:
            raise ValueError("mean_rank must lie in [1, dim]")


def _random_directions(rng, n, d):
    v = rng.standard_normal((n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # a zero draw has probability zero; guard anyway
    norms[norms == 0] = 1.0
    return v / norms


def draw_class_means(spec, rng):
    rank = spec.dim if spec.mean_rank is None else spec.mean_rank
    if rank < spec.dim:
        basis, _ = np.linalg.qr(rng.standard_normal((spec.dim, rank)))
        raw = rng.standard_normal((spec.n_classes, rank)) @ basis.T
    else:
        raw = rng.standard_normal((spec.n_classes, spec.dim))
    if spec.dim == 1:
        return raw * spec.mean_scale
    centred = raw - raw.mean(axis=1, keepdims=True)
    std = centred.std(axis=1, keepdims=True)
    std[std == 0] = 1.0
    return centred / std * spec.mean_scale


def generate_synthetic(spec, return_means=False):
    """Draw a class-major dataset from ``spec``; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    means = draw_class_means(spec, rng)
    m, d = spec.samples_per_class, spec.dim
    n_out = int(math.floor(spec.outlier_fraction * m))
    feats = np.empty((spec.n_classes * m, d))
    for c in range(spec.n_classes):
        block = means[c] + spec.within_std * rng.standard_normal((m, d))
        if n_out:
            which = rng.choice(m, size=n_out, replace=False)
            block[which] += spec.outlier_shift * spec.within_std * _random_directions(rng, n_out, d)
        feats[c * m:(c + 1) * m] = block
    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), m)
    ds = Dataset(labels, feats, dim=d)
    if return_means:
        return ds, means
    return ds


def split_classes(dataset, counts):
    """Partition ``dataset`` by class into consecutive groups of sizes ``counts``.

    Classes are taken in sorted id order, so the split is deterministic.
    """
    classes = dataset.classes
    if sum(counts) > len(classes):
        raise UsageError(f"cannot split {len(classes)} classes into {list(counts)}")
    out, start = [], 0
    for n in counts:
        out.append(dataset.subset_classes(classes[start:start + n]))
        start += n
    return out


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def save_embeddings(dataset, path):
    d = dataset.dim
    header = ",".join(["class_id"] + [f"f{j}" for j in range(d)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for c, row in zip(dataset.labels.tolist(), dataset.features):
            fh.write(str(c))
            for v in row.tolist():
                fh.write("," + format(v, ".17g"))
            fh.write("\n")


def load_embeddings(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing header", line=1, path=path)
    header = lines[0].rstrip("\r").split(",")
    if header[0] != "class_id":
        raise ParseError("header must start with 'class_id'", line=1, path=path)
    dim = len(header) - 1
    for j, name in enumerate(header[1:]):
        if name != f"f{j}":
            raise ParseError(f"expected column 'f{j}', found {name!r}", line=1, path=path)

    labels = np.empty(len(lines) - 1, dtype=np.int64)
    feats = np.empty((len(lines) - 1, dim))
    for i, raw in enumerate(lines[1:]):
        lineno = i + 2
        fields = raw.rstrip("\r").split(",")
        if len(fields) != dim + 1:
            raise ParseError(
                f"expected {dim + 1} fields, found {len(fields)}", line=lineno, path=path
            )
        try:
            label = int(fields[0])
        except ValueError:
            raise ParseError(f"bad class id {fields[0]!r}", line=lineno, path=path) from None
        if label < 0:
            raise ParseError(f"negative class id {label}", line=lineno, path=path)
        try:
            values = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", line=lineno, path=path) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", line=lineno, path=path)
        labels[i] = label
        feats[i] = values
    return Dataset(labels, feats, dim=dim)


# --------------------------------------------------------------------------
# global class prototypes
# --------------------------------------------------------------------------

class GlobalPrototypeTable:
    """Per-class mean embeddings over a whole base set."""

    def __init__(self, prototypes, counts):
        self._protos = {int(c): np.asarray(v, dtype=np.float64) for c, v in prototypes.items()}
        self.counts = {int(c): int(n) for c, n in counts.items()}
        for v in self._protos.values():
            v.flags.writeable = False
        dims = {v.shape[0] for v in self._protos.values()}
        if len(dims) > 1:
            raise ValueError(f"inconsistent prototype dimensions {sorted(dims)}")
        self.dim = dims.pop() if dims else 0

    def __contains__(self, class_id):
        return int(class_id) in self._protos

    def __getitem__(self, class_id):
        try:
            return self._protos[int(class_id)]
        except KeyError:
            raise UsageError(f"class {class_id} has no global prototype") from None

    def __len__(self):
        return len(self._protos)

    @property
    def class_ids(self):
        return sorted(self._protos)

    def stack(self, class_ids):
        return np.stack([self[c] for c in class_ids])


def compute_global_prototypes(dataset):
    if len(dataset) == 0:
        raise UsageError("cannot compute global prototypes of an empty dataset")
    protos, counts = {}, {}
    feats = dataset.features
    for c, idx in dataset.indices_by_class().items():
        acc = np.zeros(dataset.dim)
        # fixed left-to-right order for reproducibility
        for i in idx:
            acc += feats[i]
        protos[c] = acc / len(idx)
        counts[c] = len(idx)
    return GlobalPrototypeTable(protos, counts)
