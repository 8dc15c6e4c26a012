"""Episodic meta-training of the prototype generator.

Each episode contributes one SGD step on the mean distance between the
generated prototypes and the global prototypes of the episode's classes.
After every epoch the generator is scored on validation episodes; the
learning rate is multiplied by ``decay_factor`` whenever that score has not
improved for ``patience`` consecutive epochs, and the parameters of the best
validation epoch are returned.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError, UsageError
from .evaluation import PrototypeStrategy, evaluate
from .generator import AttentionConfig, init_params, loss_and_grads
from .sampler import EpisodeSpec, sample_episode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    episodes_per_epoch: int = 200
    episode_spec: EpisodeSpec = field(default_factory=lambda: EpisodeSpec(5, 5, 15, seed=0))
    initial_lr: float = 0.01
    decay_factor: float = 0.618
    patience: int = 7
    momentum: float = 0.0
    val_spec: EpisodeSpec = field(default_factory=lambda: EpisodeSpec(5, 5, 15, seed=1))
    val_episodes: int = 100
    seed: int = 0
    attention: AttentionConfig | None = None
    squared_loss: bool = False
    improve_tol: float = 1e-6

    def __post_init__(self):
        if self.epochs < 0 or self.episodes_per_epoch < 0:
            raise ValueError("epochs and episodes_per_epoch must be >= 0")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be > 0")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.momentum < 0:
            raise ValueError("momentum must be >= 0")
        if self.val_episodes < 1:
            raise ValueError("val_episodes must be >= 1")


@dataclass
class TrainLog:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.epoch)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,train_loss,val_acc,lr\n")
            for row in zip(self.epoch, self.train_loss, self.val_acc, self.lr):
                e, loss, acc, lr = row
                fh.write(f"{e},{loss!r},{acc!r},{lr!r}\n")


def distance_loss(generated, global_table, episode_class_ids, squared=False):
    """Mean Euclidean distance between generated and global prototypes."""
    gen = np.asarray(generated, dtype=np.float64)
    ids = list(episode_class_ids)
    missing = [int(c) for c in ids if c not in global_table]
    if missing:
        raise UsageError(f"class ids {missing} missing from the global prototype table")
    targets = global_table.stack(ids)
    if gen.shape != targets.shape:
        raise ShapeError(f"generated prototypes {gen.shape} vs targets {targets.shape}")
    sq = ((gen - targets) ** 2).sum(axis=1)
    return float(sq.mean() if squared else np.sqrt(sq).mean())


def sgd_step(params, gradients, lr, momentum=0.0, velocity=None):
    """One (heavy-ball) SGD update, in place.

    ``v <- momentum * v + g`` then ``theta <- theta - lr * v``.  ``velocity``
    is a dict of arrays that is created on first use when ``None`` is passed
    and ``momentum`` is nonzero.  Returns ``params``.
    """
    for name in params.names():
        g = gradients[name]
        theta = params.arrays[name]
        if g.shape != theta.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {theta.shape}")
        if momentum:
            if velocity is None:
                raise UsageError("momentum needs a velocity dict")
            v = velocity.get(name)
            if v is None:
                v = velocity[name] = np.zeros_like(theta)
            v *= momentum
            v += g
            step = v
        else:
            step = g
        theta -= lr * step
    return params


def _dropout_rng(seed, step):
    return np.random.default_rng([int(seed), 0x5EED, int(step)])


def train(dataset_train, dataset_val, global_table, config, val_score_fn=None, initial_params=None):
    """Meta-train a generator; returns ``(best_params, TrainLog)``.

    ``val_score_fn(params, epoch) -> float`` replaces the default validation
    (mean generator accuracy over ``config.val_episodes`` episodes).
    """
    att = config.attention or AttentionConfig.default(dataset_train.dim)
    if att.d_model != dataset_train.dim:
        raise ShapeError(f"d_model={att.d_model} but training embeddings have dimension {dataset_train.dim}")
    if initial_params is not None:
        if initial_params.config != att:
            raise ShapeError("initial_params config differs from the training attention config")
        params = initial_params.copy()
    else:
        params = init_params(att, config.seed)
    missing = [int(c) for c in dataset_train.classes if c not in global_table]
    if missing:
        raise UsageError(f"global table lacks training classes {missing}")

    def default_score(p, epoch):
        rep = evaluate(dataset_val, PrototypeStrategy.generator(p), config.val_spec, config.val_episodes)
        return rep.mean_acc

    score_fn = val_score_fn or default_score
    trace = TrainLog()
    best_params = params.copy()
    best_score = -math.inf
    stale = 0
    lr = config.initial_lr
    velocity = {}
    spec = config.episode_spec

    for epoch in range(config.epochs):
        losses = np.empty(config.episodes_per_epoch)
        for e in range(config.episodes_per_epoch):
            step = epoch * config.episodes_per_epoch + e
            ep = sample_episode(dataset_train, spec, step)
            targets = global_table.stack(ep.class_ids)
            loss, grads = loss_and_grads(
                params, ep.support, targets, train=True,
                rng=_dropout_rng(config.seed, step), squared=config.squared_loss,
            )
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, episode {e}")
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise TrainingError(f"non-finite gradient for {name} at epoch {epoch}, episode {e}")
            sgd_step(params, grads, lr, config.momentum, velocity)
            losses[e] = loss

        score = float(score_fn(params, epoch))
        mean_loss = float(losses.mean()) if losses.size else float("nan")
        trace.epoch.append(epoch)
        trace.train_loss.append(mean_loss)
        trace.val_acc.append(score)
        trace.lr.append(lr)
        log.info("epoch %d loss %.5f val %.4f lr %.6g", epoch, mean_loss, score, lr)

        if score > best_score + config.improve_tol:
            best_score = score
            best_params = params.copy()
            trace.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                lr *= config.decay_factor
                stale = 0

    return best_params, trace
