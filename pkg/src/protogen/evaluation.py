"""Nearest-prototype classification and episodic evaluation.

Three ways of building class prototypes are supported, mirroring the usual
ablation table: the support mean, the learned generator, and the global
prototype of each episode class (an oracle that ignores the support set).
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError, UsageError
from .generator import generate_prototypes
from .sampler import sample_episode

DEFAULT_EPISODES = 600
Z_95 = 1.96
STRATEGIES = ("mean", "generator", "global_oracle")


@dataclass(frozen=True)
class PrototypeStrategy:
    kind: str
    params: object = None
    table: object = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.kind == "generator" and self.params is None:
            raise ValueError("generator strategy needs GeneratorParams")
        if self.kind == "global_oracle" and self.table is None:
            raise ValueError("global_oracle strategy needs a GlobalPrototypeTable")

    @classmethod
    def mean(cls):
        return cls("mean")

    @classmethod
    def generator(cls, params):
        return cls("generator", params=params)

    @classmethod
    def global_oracle(cls, table):
        return cls("global_oracle", table=table)

    def prototypes(self, episode):
        if self.kind == "mean":
            return episode.support.mean(axis=1)
        if self.kind == "generator":
            protos, _ = generate_prototypes(self.params, episode.support, mode="eval")
            return protos
        missing = [int(c) for c in episode.class_ids if c not in self.table]
        if missing:
            raise UsageError(f"global_oracle: no global prototype for class ids {missing}")
        return self.table.stack(episode.class_ids)


def classify(query, prototypes):
    """Index of the nearest prototype (Euclidean); ties go to the lowest index."""
    q = np.ascontiguousarray(query, dtype=np.float64).reshape(1, -1)
    p = np.ascontiguousarray(prototypes, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] != q.shape[1]:
        raise ShapeError(f"query of dim {q.shape[1]} vs prototypes of shape {p.shape}")
    return int(kernels.nearest(q, p)[0])


def classify_batch(queries, prototypes):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    p = np.ascontiguousarray(prototypes, dtype=np.float64)
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ShapeError(f"queries {q.shape} vs prototypes {p.shape}")
    return kernels.nearest(q, p)


def ci95(accuracies):
    """Half-width of the normal 95% interval of the mean (sample std, n-1).

    A single episode has no spread estimate; its half-width is defined as 0.
    """
    a = np.asarray(accuracies, dtype=np.float64)
    if a.size < 2 or np.all(a == a[0]):
        return 0.0
    return Z_95 * float(a.std(ddof=1)) / math.sqrt(a.size)


@dataclass
class EvalReport:
    strategy: str
    n_way: int
    k_shot: int
    accuracies: np.ndarray
    proto_dists: np.ndarray
    class_dists: dict = field(default_factory=dict)

    @property
    def episode_count(self):
        return int(self.accuracies.size)

    @property
    def mean_acc(self):
        return float(self.accuracies.mean()) if self.accuracies.size else float("nan")

    @property
    def ci95(self):
        return ci95(self.accuracies)

    @property
    def mean_proto_dist(self):
        return float(self.proto_dists.mean()) if self.proto_dists.size else float("nan")

    def summary(self):
        return {
            "strategy": self.strategy,
            "N": self.n_way,
            "K": self.k_shot,
            "episodes": self.episode_count,
            "mean_acc": self.mean_acc,
            "ci95": self.ci95,
            "mean_proto_dist": self.mean_proto_dist,
        }


def worker_count():
    """Worker threads for episode evaluation, capped by ``PROTOGEN_NUM_THREADS``."""
    raw = os.environ.get("PROTOGEN_NUM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"PROTOGEN_NUM_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _one_episode(dataset, strategies, spec, index, table):
    ep = sample_episode(dataset, spec, index)
    targets = table.stack(ep.class_ids) if table is not None else None
    out = []
    for strat in strategies:
        protos = strat.prototypes(ep)
        preds = kernels.nearest(ep.query, np.ascontiguousarray(protos))
        acc = float(np.mean(preds == ep.query_labels))
        if targets is not None:
            dists = np.linalg.norm(protos - targets, axis=1)
        else:
            dists = np.full(ep.n_way, np.nan)
        out.append((acc, dists))
    return ep.class_ids, out


def run_episodes(dataset, strategies, spec, episode_count=DEFAULT_EPISODES, global_table=None, workers=None):
    """Evaluate several strategies on one shared sequence of episodes.

    Episode ``i`` is always ``sample_episode(dataset, spec, i)``, so reports
    from the same ``spec`` are paired.  Results are reduced in episode order
    regardless of the number of worker threads.
    """
    if episode_count < 1:
        raise ValueError("episode_count must be >= 1")
    if global_table is not None:
        missing = [int(c) for c in dataset.classes if c not in global_table]
        if missing:
            raise UsageError(f"global table lacks class ids {missing}")
    workers = worker_count() if workers is None else max(1, int(workers))

    def task(i):
        return _one_episode(dataset, strategies, spec, i, global_table)

    if workers == 1:
        results = [task(i) for i in range(episode_count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, range(episode_count)))

    reports = []
    for s, strat in enumerate(strategies):
        accs = np.array([r[1][s][0] for r in results])
        per_class = {}
        ep_dists = np.empty(episode_count)
        for e, (class_ids, rows) in enumerate(results):
            dists = rows[s][1]
            ep_dists[e] = dists.mean()
            for c, dist in zip(class_ids.tolist(), dists.tolist()):
                per_class.setdefault(c, []).append(dist)
        reports.append(EvalReport(
            strategy=strat.kind,
            n_way=spec.n_way,
            k_shot=spec.k_shot,
            accuracies=accs,
            proto_dists=ep_dists,
            class_dists={c: float(np.mean(v)) for c, v in sorted(per_class.items())},
        ))
    return reports


def evaluate(dataset, strategy, spec, episode_count=DEFAULT_EPISODES, global_table=None, workers=None):
    return run_episodes(dataset, [strategy], spec, episode_count, global_table, workers)[0]


def compare(dataset, params, global_table, spec, episode_count=DEFAULT_EPISODES, workers=None):
    """Mean, generator and oracle reports on identical episodes, keyed by strategy."""
    strategies = [
        PrototypeStrategy.mean(),
        PrototypeStrategy.generator(params),
        PrototypeStrategy.global_oracle(global_table),
    ]
    reports = run_episodes(dataset, strategies, spec, episode_count, global_table, workers)
    return {r.strategy: r for r in reports}


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def _fmt(v):
    return "nan" if v != v else format(v, ".10g")


def write_episode_csv(reports, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("strategy,episode,accuracy,proto_dist\n")
        for r in reports:
            for e, (a, d) in enumerate(zip(r.accuracies.tolist(), r.proto_dists.tolist())):
                fh.write(f"{r.strategy},{e},{_fmt(a)},{_fmt(d)}\n")


def write_summary_csv(reports, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("strategy,N,K,episodes,mean_acc,ci95,mean_proto_dist\n")
        for r in reports:
            s = r.summary()
            fh.write(
                f"{s['strategy']},{s['N']},{s['K']},{s['episodes']},"
                f"{_fmt(s['mean_acc'])},{_fmt(s['ci95'])},{_fmt(s['mean_proto_dist'])}\n"
            )


def format_table(reports):
    """Human-readable summary: accuracy in percent with two decimals."""
    lines = [f"{'strategy':<14} {'N':>2} {'K':>2} {'episodes':>8}  {'accuracy (%)':<16} {'proto dist':>10}"]
    for r in reports:
        acc = f"{100 * r.mean_acc:.2f} +/- {100 * r.ci95:.2f}"
        lines.append(
            f"{r.strategy:<14} {r.n_way:>2} {r.k_shot:>2} {r.episode_count:>8}  {acc:<16} {r.mean_proto_dist:>10.4f}"
        )
    return "\n".join(lines)
