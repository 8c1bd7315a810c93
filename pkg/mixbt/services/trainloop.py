"""
The pre-training orchestrator.

`Pretrainer` drives one run: keyed batching, augmented views, the objective looked up in
the objective registry, backward, and an Adam step on a warmup-cosine schedule. It logs a
loss breakdown per step to metrics.csv and evaluates the frozen encoder (k-NN, optional
linear probe, redundancy diagnostic) before training, every `eval_every` epochs and after
the last epoch, writing a checkpoint at each evaluation point.

Nothing here reads the clock or unkeyed randomness, so a config plus a seed determine
every byte of metrics.csv.
"""
import csv
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, TextIO

import numpy as np
from tqdm import tqdm

from mixbt.core.config import settings
from mixbt.core.exceptions import DimensionError, NonFiniteLossError, NumericDomainError
from mixbt.core.logging_config import get_logger
from mixbt.schemas import RunConfig
from mixbt.services.augment import make_views
from mixbt.services.checkpoint import save_checkpoint
from mixbt.services.data import Dataset, batches
from mixbt.services.evaluation import (
    FeatureBank,
    default_k,
    knn_evaluate,
    linear_probe,
    overfitting_gap,
    redundancy_diagnostic,
)
from mixbt.services.model import ModelParams, extract_features, init_params
from mixbt.services.objectives import StepContext, objective_registry
from mixbt.services.optim import OptimState, adam_step, lr_at
from mixbt.utils import diffcore as dc
from mixbt.utils.diffcore import Tensor

logger = get_logger(__name__)

METRICS_COLUMNS = ["step", "epoch", "lr", "invariance", "redundancy", "l_bt", "l_reg", "total"]
EVAL_COLUMNS = ["epoch", "knn_top1", "linear_top1", "offdiag_mean", "diag_mean"]


def format_float(value: float) -> str:
    return format(value, ".17g")


@dataclass
class EvalRecord:
    epoch: int
    knn_top1: float
    linear_top1: Optional[float]
    offdiag_mean: float
    diag_mean: float

    def as_row(self) -> List[str]:
        return [
            str(self.epoch),
            format_float(self.knn_top1),
            "" if self.linear_top1 is None else format_float(self.linear_top1),
            format_float(self.offdiag_mean),
            format_float(self.diag_mean),
        ]


@dataclass
class RunArtifacts:
    params: ModelParams
    state: OptimState
    seed: int
    metrics: List[Dict[str, float]] = field(default_factory=list)
    evals: List[EvalRecord] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    out_dir: Optional[str] = None

    @property
    def knn_history(self) -> List[float]:
        return [record.knn_top1 for record in self.evals]

    @property
    def final_knn_top1(self) -> Optional[float]:
        return self.evals[-1].knn_top1 if self.evals else None

    @property
    def best_knn_top1(self) -> Optional[float]:
        return max(self.knn_history) if self.evals else None

    @property
    def overfitting_gap(self) -> float:
        return overfitting_gap(self.knn_history)

    @property
    def final_total(self) -> Optional[float]:
        return self.metrics[-1]["total"] if self.metrics else None


def resolve_seed(cfg: RunConfig, seed: Optional[int] = None) -> int:
    """--seed flag, then the config's seed, then MIXBT_SEED."""
    if seed is not None:
        return seed
    if cfg.seed is not None:
        return cfg.seed
    return settings.MIXBT_SEED


class Pretrainer:
    """
    Runs the pre-training loop for one RunConfig.
    """
    def __init__(self, cfg: RunConfig, train: Dataset, test: Dataset,
                 out_dir: Optional[str] = None, seed: Optional[int] = None):
        """
        Args:
            cfg: The validated run configuration.
            train: Images the model is trained on; also the k-NN bank.
            test: Held-out images used as k-NN and linear-probe queries.
            out_dir: Run directory for metrics.csv, eval.csv and checkpoints. With None the
                run keeps its results in memory only.
            seed: Overrides the config's seed when given.
        """
        if train.meta.pixels != test.meta.pixels or train.meta.class_count != test.meta.class_count:
            raise DimensionError("pretrain", "train and test splits have different shapes or class counts")
        self.cfg = cfg
        self.train = train
        self.test = test
        self.out_dir = out_dir
        self.seed = resolve_seed(cfg, seed)
        self.objective = objective_registry.get(cfg.objective)
        self.weights = cfg.loss_weights()
        self.schedule = cfg.schedule()
        self.augment = cfg.augment_config()
        self.params = init_params(cfg.encoder_config(train.meta.pixels), cfg.projector_config(), self.seed)
        self.state = OptimState.for_params(self.params.tensors)
        self.steps_per_epoch = len(train) // cfg.batch_size
        self.step = 0
        self.artifacts = RunArtifacts(params=self.params, state=self.state, seed=self.seed, out_dir=out_dir)
        self._metrics_file: Optional[TextIO] = None
        self._metrics_writer = None
        self._eval_file: Optional[TextIO] = None
        self._eval_writer = None
        logger.info(
            f"Pretrainer initialized: objective={cfg.objective}, seed={self.seed}, "
            f"{len(train)} train / {len(test)} test images, {self.steps_per_epoch} steps per epoch"
        )

    # --- output files ---

    def _open_outputs(self) -> None:
        if self.out_dir is None:
            return
        os.makedirs(os.path.join(self.out_dir, "checkpoints"), exist_ok=True)
        self._metrics_file = open(os.path.join(self.out_dir, "metrics.csv"), "w", newline="")
        self._metrics_writer = csv.writer(self._metrics_file, lineterminator="\n")
        self._metrics_writer.writerow(METRICS_COLUMNS)
        self._eval_file = open(os.path.join(self.out_dir, "eval.csv"), "w", newline="")
        self._eval_writer = csv.writer(self._eval_file, lineterminator="\n")
        self._eval_writer.writerow(EVAL_COLUMNS)

    def _close_outputs(self) -> None:
        for handle in (self._metrics_file, self._eval_file):
            if handle is not None:
                handle.close()
        self._metrics_file = self._eval_file = None

    # --- evaluation ---

    def evaluate(self, epoch: int, final: bool = False) -> EvalRecord:
        chunk = settings.EVAL_FEATURE_CHUNK
        bank_features = extract_features(self.params, self.train.images, chunk)
        query_features = extract_features(self.params, self.test.images, chunk)
        classes = self.train.meta.class_count
        bank = FeatureBank.from_features(bank_features, self.train.labels, classes)
        queries = FeatureBank.from_features(query_features, self.test.labels, classes)
        k = self.cfg.knn_k or default_k(len(bank))
        knn = knn_evaluate(bank, queries, k, self.cfg.knn_temperature)

        linear = None
        if final and self.cfg.linear_probe:
            linear = linear_probe(
                bank_features, self.train.labels, query_features, self.test.labels,
                self.cfg.linear_probe_epochs, self.cfg.linear_probe_batch_size, class_count=classes,
                lr=self.cfg.linear_probe_lr, gamma=self.cfg.linear_probe_gamma,
                weight_decay=self.cfg.weight_decay, seed=self.seed,
            )

        offdiag, diag = redundancy_diagnostic(extract_features(self.params, self.test.images, chunk, projector=True))
        record = EvalRecord(epoch=epoch, knn_top1=knn, linear_top1=linear, offdiag_mean=offdiag, diag_mean=diag)
        self.artifacts.evals.append(record)
        if self._eval_writer is not None:
            self._eval_writer.writerow(record.as_row())
            self._eval_file.flush()
            path = os.path.join(self.out_dir, "checkpoints", f"epoch_{epoch:04d}.mxbt")
            save_checkpoint(path, self.params, self.state, epoch)
            self.artifacts.checkpoints.append(path)
        probe_note = f", linear top-1 {linear:.4f}" if linear is not None else ""
        logger.info(f"Epoch {epoch}: k-NN top-1 {knn:.4f} (k={k}){probe_note}, off-diagonal mean {offdiag:.4f}")
        return record

    # --- training ---

    def _dump_batch(self, ctx: StepContext, index: np.ndarray, batch_index: int) -> Optional[str]:
        if self.out_dir is None:
            return None
        path = os.path.join(self.out_dir, f"nan_dump_step{ctx.step}.npz")
        np.savez(
            path,
            batch_indices=index,
            epoch=ctx.epoch,
            batch_index=batch_index,
            lam=np.nan if ctx.lam is None else ctx.lam,
            perm=np.zeros(0, dtype=np.int64) if ctx.perm is None else ctx.perm,
        )
        return path

    def train_step(self, epoch: int, batch_index: int, index: np.ndarray) -> Dict[str, float]:
        self.step += 1
        lr = lr_at(self.schedule, epoch + batch_index / self.steps_per_epoch)
        ctx = StepContext(seed=self.seed, epoch=epoch, step=self.step, alpha=self.cfg.alpha)
        try:
            views = make_views(Tensor(self.train.images[index]), epoch, self.augment,
                               image_shape=self.train.image_shape, seed=self.seed, indices=index)
            breakdown = self.objective(self.params, views, self.weights, ctx)
            dc.backward(breakdown.loss)
            tensors, self.state = adam_step(self.params.tensors, [t.grad for t in self.params.tensors],
                                            self.state, lr, self.cfg.weight_decay)
        except NumericDomainError as e:
            dump = self._dump_batch(ctx, index, batch_index)
            logger.error(f"Non-finite value at step {self.step} (epoch {epoch + 1}, batch {batch_index}): "
                         f"{e.message}. Dump: {dump}")
            raise NonFiniteLossError(self.step, epoch + 1, batch_index, e.message, dump_path=dump) from e

        self.params = ModelParams.from_tensors(tensors, self.params.encoder_depth)
        row = {"step": self.step, "epoch": epoch + 1, "lr": lr, **breakdown.as_row()}
        self.artifacts.metrics.append(row)
        if self._metrics_writer is not None:
            self._metrics_writer.writerow(
                [str(row["step"]), str(row["epoch"])] + [format_float(row[c]) for c in METRICS_COLUMNS[2:]]
            )
        logger.debug(f"step {self.step}: total={breakdown.total:.6g} l_bt={breakdown.l_bt:.6g} l_reg={breakdown.l_reg:.6g}")
        return row

    def run(self) -> RunArtifacts:
        self._open_outputs()
        try:
            self.evaluate(0)
            epochs = range(self.cfg.epochs)
            for epoch in tqdm(epochs, desc="pretrain", disable=not settings.SHOW_PROGRESS):
                for batch_index, index in enumerate(batches(self.train, self.cfg.batch_size, epoch, self.seed)):
                    self.train_step(epoch, batch_index, index)
                if self._metrics_file is not None:
                    self._metrics_file.flush()
                completed = epoch + 1
                if completed % self.cfg.eval_every == 0 or completed == self.cfg.epochs:
                    self.evaluate(completed, final=completed == self.cfg.epochs)
        finally:
            self._close_outputs()
        self.artifacts.params = self.params
        self.artifacts.state = self.state
        logger.info(f"Pre-training finished after {self.step} steps; final k-NN top-1 {self.artifacts.final_knn_top1}")
        return self.artifacts


def pretrain(cfg: RunConfig, train: Dataset, test: Dataset, out_dir: Optional[str] = None,
             seed: Optional[int] = None) -> RunArtifacts:
    """Train a fresh model under `cfg` and return its artifacts."""
    return Pretrainer(cfg, train, test, out_dir=out_dir, seed=seed).run()
