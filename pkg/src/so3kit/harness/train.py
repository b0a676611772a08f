"""Deterministic training loop, target/feature scaling and prediction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import DivergenceError, DomainError
from ..graph import GeometricGraph, batch_graphs
from ..layers import ModelConfig, QM9Model


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int | None = None  # None trains on the whole set at once
    seed: int = 0
    target: str = "coulomb"
    standardize_targets: bool = True
    standardize_atomic_number: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown training config keys {sorted(unknown)}")
        return cls(**doc)


@dataclass
class Scalers:
    """Affine maps applied to targets and to the atomic-number channel."""

    target_mean: float = 0.0
    target_std: float = 1.0
    z_mean: float = 0.0
    z_std: float = 1.0

    @classmethod
    def fit(cls, graphs, config: TrainConfig) -> "Scalers":
        s = cls()
        if config.standardize_targets:
            y = np.array([g.targets[config.target] for g in graphs])
            s.target_mean, s.target_std = float(y.mean()), float(y.std()) or 1.0
        if config.standardize_atomic_number:
            z = np.concatenate([g.node_features[0][:, -1, 0] for g in graphs])
            s.z_mean, s.z_std = float(z.mean()), float(z.std()) or 1.0
        return s

    def features(self, graph: GeometricGraph) -> GeometricGraph:
        feats = dict(graph.node_features)
        f0 = feats[0].copy()
        f0[:, -1, 0] = (f0[:, -1, 0] - self.z_mean) / self.z_std
        feats[0] = f0
        return graph.with_positions(graph.positions, feats)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainRun:
    seed: int
    epochs: int
    lr: float
    loss_trace: list = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def mse_loss(pred, target):
    diff = pred - np.asarray(target, dtype=np.float64)
    return ad.mean(diff * diff)


def _batches(n: int, batch_size, rng):
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def evaluate_mse(model, batched: GeometricGraph, y) -> float:
    with ad.no_grad():
        return float(mse_loss(model(batched), y).data)


def train(model: QM9Model, graphs, config: TrainConfig | None = None, checkpoint=None) -> TrainRun:
    """Fit ``model`` to standardized targets with an MSE loss.

    ``loss_trace[e]`` is the training loss seen during epoch ``e`` (before
    that epoch's updates when training full-batch). ``final_metrics`` holds
    the full-set MSE before and after training, in standardized units.
    """
    config = config or TrainConfig()
    graphs = list(graphs)
    if not graphs:
        raise DomainError("training set is empty")
    scalers = Scalers.fit(graphs, config)
    prepared = [scalers.features(g) for g in graphs]
    y_all = np.array([(g.targets[config.target] - scalers.target_mean) / scalers.target_std for g in graphs])
    params = model.parameters()
    if config.optimizer == "adam":
        opt = ad.Adam(params, config.lr)
    elif config.optimizer == "sgd":
        opt = ad.SGD(params, config.lr)
    else:
        raise DomainError(f"unknown optimizer {config.optimizer!r}")
    rng = np.random.default_rng(config.seed)
    full = batch_graphs(prepared)
    cache = {}
    run = TrainRun(config.seed, config.epochs, config.lr)
    initial = evaluate_mse(model, full, y_all)
    for epoch in range(config.epochs):
        total = 0.0
        for idx in _batches(len(graphs), config.batch_size, rng):
            key = tuple(idx.tolist())
            batch = full if len(idx) == len(graphs) else cache.get(key)
            if batch is None:
                batch = cache[key] = batch_graphs([prepared[i] for i in idx])
            loss = mse_loss(model(batch), y_all[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(epoch, value)
            opt.step(ad.backward(loss, params))
            total += value * len(idx)
        run.loss_trace.append(total / len(graphs))
    final = evaluate_mse(model, full, y_all)
    if not math.isfinite(final):
        raise DivergenceError(config.epochs, final)
    run.final_metrics = {"initial_mse": initial, "final_mse": final, "ratio": final / initial}
    if checkpoint is not None:
        ad.save_checkpoint(checkpoint, params, opt, {
            "model_config": model.config.to_dict(),
            "scalers": scalers.to_dict(),
            "train_config": asdict(config),
        })
        run.checkpoint = str(checkpoint)
    model.scalers = scalers
    return run


def load_model(checkpoint) -> QM9Model:
    arrays, _, meta = ad.load_checkpoint(checkpoint)
    model = QM9Model(ModelConfig.from_dict(meta["model_config"]))
    model.load_arrays(arrays)
    model.scalers = Scalers(**meta.get("scalers", {}))
    return model


def predict(model: QM9Model, graph: GeometricGraph) -> np.ndarray:
    """Predictions in target units, one per graph in ``graph``."""
    scalers = getattr(model, "scalers", None) or Scalers()
    with ad.no_grad():
        out = model(scalers.features(graph)).data
    return out * scalers.target_std + scalers.target_mean
