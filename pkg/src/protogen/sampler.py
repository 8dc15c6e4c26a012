"""Reproducible N-way K-shot episode construction."""

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 5
    query_per_class: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        if self.query_per_class < 1:
            raise ValueError("query_per_class must be >= 1")


@dataclass(frozen=True)
class Episode:
    """One few-shot task.

    ``support`` is ``(N, K, d)`` grouped by episode class index; ``query`` is
    ``(N*Q, d)`` with ``query_labels`` in ``[0, N)``.  Episode class index
    ``i`` corresponds to ``class_ids[i]``, and ``class_ids`` is sorted.
    ``support_indices``/``query_indices`` are row numbers in the source
    dataset.
    """

    class_ids: np.ndarray
    support: np.ndarray
    support_indices: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray
    query_indices: np.ndarray

    @property
    def n_way(self):
        return self.support.shape[0]

    @property
    def k_shot(self):
        return self.support.shape[1]


def episode_rng(seed, episode_index):
    """Counter-based generator: depends only on ``(seed, episode_index)``."""
    return np.random.default_rng([int(seed), int(episode_index)])


def sample_episode(dataset, spec, episode_index):
    by_class = dataset.indices_by_class()
    classes = dataset.classes
    if len(classes) < spec.n_way:
        raise CapacityError(
            f"dataset has {len(classes)} classes, episode needs {spec.n_way}"
        )
    rng = episode_rng(spec.seed, episode_index)
    drawn = np.sort(rng.choice(classes, size=spec.n_way, replace=False))
    need = spec.k_shot + spec.query_per_class

    sup_idx = np.empty((spec.n_way, spec.k_shot), dtype=np.int64)
    qry_idx = np.empty((spec.n_way, spec.query_per_class), dtype=np.int64)
    for i, c in enumerate(drawn.tolist()):
        pool = by_class[c]
        if len(pool) < need:
            raise CapacityError(
                f"class {c} has {len(pool)} samples, episode needs {need} "
                f"({spec.k_shot} support + {spec.query_per_class} query)"
            )
        pick = pool[rng.choice(len(pool), size=need, replace=False)]
        sup_idx[i] = pick[:spec.k_shot]
        qry_idx[i] = pick[spec.k_shot:]

    feats = dataset.features
    qry_flat = qry_idx.reshape(-1)
    return Episode(
        class_ids=drawn,
        support=feats[sup_idx],
        support_indices=sup_idx,
        query=feats[qry_flat],
        query_labels=np.repeat(np.arange(spec.n_way, dtype=np.int64), spec.query_per_class),
        query_indices=qry_flat,
    )
