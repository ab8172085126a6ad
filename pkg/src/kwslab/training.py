"""Training loop with validation-AUPRC checkpoint selection, deterministic
given the config seed, plus checkpoint evaluation and the scores-file format."""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics as mx
from . import nncore as nc
from .corpus import DropTally, fit_normalizer, round_half_up
from .errors import (
    CheckpointError,
    InfeasibleTaskError,
    TrainingDivergedError,
    ValidationError,
)
from .losses import LossConfig, total_loss
from .model import DetectorModel, ModelConfig
from .sampling import BalancedBatchSampler, SamplerConfig, augment_window

IMPROVEMENT_EPS = 1e-6

# RNG stream tags under the training seed
_STREAM_INIT = 0
_STREAM_SAMPLER = 1
_STREAM_AUGMENT = 2
_STREAM_RANK = 3


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 30
    patience: int = 5
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int | str = "epoch"
    sampler_seed: int | None = None

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValidationError("patience must lie in [0, max_epochs]")
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if isinstance(self.eval_every, str) and self.eval_every != "epoch":
            raise ValidationError("eval_every must be a step count or 'epoch'")
        if isinstance(self.eval_every, int) and self.eval_every < 1:
            raise ValidationError("eval_every step count must be >= 1")


@dataclass
class EvalRecord:
    epoch: float
    train_loss: float
    val_auprc: float
    val_auroc: float


@dataclass
class TrainReport:
    records: list[EvalRecord]
    best_epoch: float
    best_val_auprc: float
    checkpoint_path: str
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "best_epoch": self.best_epoch,
            "best_val_auprc": self.best_val_auprc,
            "checkpoint_path": self.checkpoint_path,
            "wall_clock_s": self.wall_clock_s,
        }

    def deterministic_view(self) -> dict:
        """Report content minus the inherently non-reproducible wall clock."""
        out = self.to_dict()
        out.pop("wall_clock_s")
        return out


# ---------------------------------------------------------------------------
# task data: normalized signals + lazy window references per partition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowRef:
    session_id: str
    token_index: int
    start: int
    label: int
    word: str


@dataclass
class TaskData:
    spec: object
    split: object
    normalizer: object
    n_channels: int
    sample_rate_hz: float
    n_window_samples: int
    signals: dict[str, np.ndarray]
    partitions: dict[str, list[WindowRef]]
    drop_tallies: dict[str, DropTally] = field(default_factory=dict)
    aug_channel_std: np.ndarray | None = None

    def labels(self, partition: str) -> np.ndarray:
        return np.array([r.label for r in self.partitions[partition]], dtype=np.int64)

    def window(self, ref: WindowRef) -> np.ndarray:
        return self.signals[ref.session_id][:, ref.start : ref.start + self.n_window_samples]

    def stack(self, refs) -> np.ndarray:
        out = np.empty((len(refs), self.n_channels, self.n_window_samples), dtype=np.float32)
        for i, ref in enumerate(refs):
            out[i] = self.window(ref)
        return out


def prepare_task(sessions, split, spec) -> TaskData:
    """Fit the train-partition normalizer, z-score every session, and index
    the in-bounds windows of each partition (ordered by session, then token).

    The windows sliced through TaskData are bit-identical to
    corpus.extract_windows with the same normalizer.
    """
    by_id = {s.session_id: s for s in sessions}
    split.validate(by_id.keys())
    train_sessions = [by_id[sid] for sid in split.train]
    normalizer = fit_normalizer(train_sessions)
    fs = sessions[0].channel_config.sample_rate_hz
    n_channels = sessions[0].channel_config.n_channels
    n = spec.n_window_samples(fs)

    signals = {sid: normalizer.apply(s.signal) for sid, s in by_id.items()}
    partition_of = {sid: "train" for sid in split.train}
    partition_of[split.validation] = "validation"
    partition_of[split.test] = "test"

    partitions = {"train": [], "validation": [], "test": []}
    tallies = {}
    for sid in sorted(by_id):
        session = by_id[sid]
        tally = DropTally()
        refs = []
        for token_index, ev in enumerate(session.word_events()):
            label = 1 if ev.word in spec.keywords else 0
            start = round_half_up((ev.onset_s - spec.beta_neg_s) * fs)
            if start < 0 or start + n > session.n_samples:
                if label:
                    tally.positives += 1
                else:
                    tally.negatives += 1
                continue
            refs.append(WindowRef(sid, token_index, start, label, ev.word))
        partitions[partition_of[sid]].extend(refs)
        tallies[sid] = tally

    total = 0
    acc = np.zeros(n_channels, dtype=np.float64)
    acc_sq = np.zeros(n_channels, dtype=np.float64)
    for sid in split.train:
        sig = signals[sid].astype(np.float64)
        acc += sig.sum(axis=1)
        acc_sq += (sig * sig).sum(axis=1)
        total += sig.shape[1]
    mean = acc / total
    aug_std = np.sqrt(np.maximum(acc_sq / total - mean * mean, 0.0))

    return TaskData(
        spec=spec,
        split=split,
        normalizer=normalizer,
        n_channels=n_channels,
        sample_rate_hz=fs,
        n_window_samples=n,
        signals=signals,
        partitions=partitions,
        drop_tallies=tallies,
        aug_channel_std=aug_std,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _stream_rng(seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *key))))


def score_partition(model: DetectorModel, task: TaskData, partition: str,
                    batch_size: int = 64) -> np.ndarray:
    """Eval-mode probabilities in corpus order (no augmentation)."""
    refs = task.partitions[partition]
    scores = np.empty(len(refs), dtype=np.float64)
    for lo in range(0, len(refs), batch_size):
        chunk = refs[lo : lo + batch_size]
        result = model.forward(task.stack(chunk), training=False)
        scores[lo : lo + len(chunk)] = result.prob.values.astype(np.float64)
    return scores


def train(
    model_config: ModelConfig,
    loss_config: LossConfig,
    sampler_config: SamplerConfig,
    train_config: TrainConfig,
    task: TaskData,
    checkpoint_path: str,
) -> TrainReport:
    """Run balanced-batch epochs, keep the checkpoint with the best
    validation AUPRC, stop early after `patience` epochs without
    improvement > 1e-6. All randomness descends from train_config.seed
    through independent substreams (init / data order / augmentation /
    ranking pairs)."""
    t0 = time.perf_counter()
    val_labels = task.labels("validation")
    if val_labels.sum() < 1:
        raise InfeasibleTaskError("validation partition has no positive examples")

    model = DetectorModel.initialize(model_config, seed=train_config.seed)
    optimizer = nc.AdamW(
        model.params, lr=train_config.lr, weight_decay=train_config.weight_decay
    )

    seed = train_config.seed
    if train_config.sampler_seed is not None:
        sampler_seed = train_config.sampler_seed
    else:
        sampler_seed = int(
            np.random.SeedSequence((seed, _STREAM_SAMPLER)).generate_state(1)[0]
        )
    train_refs = task.partitions["train"]
    train_labels = task.labels("train")
    sampler = BalancedBatchSampler(train_labels, sampler_config, sampler_seed)

    n = task.n_window_samples
    records: list[EvalRecord] = []
    best_auprc = -np.inf
    best_epoch = -1.0
    epochs_since_improvement = 0
    global_step = 0
    eval_every = train_config.eval_every

    def run_validation(epoch_pos: float, mean_loss: float):
        nonlocal best_auprc, best_epoch
        scores = score_partition(model, task, "validation")
        scored = mx.ScoredSet(scores, val_labels)
        val_auprc = mx.auprc(scored)
        val_auroc = mx.auroc(scored)
        records.append(EvalRecord(epoch_pos, mean_loss, val_auprc, val_auroc))
        if val_auprc > best_auprc + IMPROVEMENT_EPS:
            best_auprc = val_auprc
            best_epoch = epoch_pos
            model.save(checkpoint_path)
            return True
        return False

    for epoch in range(1, train_config.max_epochs + 1):
        losses = []
        improved_mid_epoch = False
        for _ in range(sampler.batches_per_epoch):
            batch_idx = sampler.next_batch()
            aug_rng = _stream_rng(seed, _STREAM_AUGMENT, global_step)
            batch = np.empty((len(batch_idx), task.n_channels, n), dtype=np.float32)
            for row, example_idx in enumerate(batch_idx):
                ref = train_refs[example_idx]
                batch[row] = augment_window(
                    task.signals[ref.session_id],
                    ref.start,
                    n,
                    sampler_config.jitter_samples,
                    sampler_config.noise_std_fraction,
                    task.aug_channel_std,
                    aug_rng,
                )
            labels = train_labels[batch_idx]
            try:
                result = model.forward(batch, training=True)
                rank_rng = _stream_rng(seed, _STREAM_RANK, global_step)
                loss, parts = total_loss(
                    result.prob, result.logit, labels, loss_config, rank_rng
                )
            except ValidationError as exc:
                # inside the steady-state loop a contract violation means the
                # forward blew up numerically (non-finite activations)
                raise TrainingDivergedError(
                    f"non-finite values during forward: {exc}",
                    record={"epoch": epoch, "step": global_step, "loss_parts": None},
                ) from exc
            if not np.isfinite(parts["total"]):
                raise TrainingDivergedError(
                    "non-finite training loss",
                    record={"epoch": epoch, "step": global_step, "loss_parts": parts},
                )
            nc.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            losses.append(parts["total"])
            global_step += 1
            if isinstance(eval_every, int) and global_step % eval_every == 0:
                epoch_pos = epoch - 1 + len(losses) / sampler.batches_per_epoch
                if run_validation(epoch_pos, float(np.mean(losses))):
                    improved_mid_epoch = True

        improved = run_validation(float(epoch), float(np.mean(losses)))
        if improved or improved_mid_epoch:
            epochs_since_improvement = 0
        else:
            epochs_since_improvement += 1
        if train_config.patience and epochs_since_improvement >= train_config.patience:
            break

    return TrainReport(
        records=records,
        best_epoch=best_epoch,
        best_val_auprc=best_auprc,
        checkpoint_path=checkpoint_path,
        wall_clock_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# evaluation + scores file
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRow:
    session_id: str
    token_index: int
    label: int
    score: float


def evaluate(checkpoint_path: str, task: TaskData, partition: str,
             batch_size: int = 64) -> list[ScoreRow]:
    """Deterministic eval-mode scores for a partition, in corpus order."""
    model = DetectorModel.load(checkpoint_path)
    if model.config.in_channels != task.n_channels:
        raise CheckpointError(
            f"checkpoint expects {model.config.in_channels} channels, corpus has "
            f"{task.n_channels}"
        )
    refs = task.partitions[partition]
    if not refs:
        warnings.warn(f"partition {partition!r} is empty; returning no scores")
        return []
    scores = score_partition(model, task, partition, batch_size=batch_size)
    return [
        ScoreRow(r.session_id, r.token_index, r.label, float(s))
        for r, s in zip(refs, scores)
    ]


def write_scores_csv(rows, path: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", "token_index", "label", "score"])
        for row in rows:
            writer.writerow([row.session_id, row.token_index, row.label, repr(row.score)])


def read_scores_csv(path: str) -> list[ScoreRow]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                ScoreRow(
                    session_id=rec["session_id"],
                    token_index=int(rec["token_index"]),
                    label=int(rec["label"]),
                    score=float(rec["score"]),
                )
            )
    return rows


def scored_set_from_rows(rows) -> "mx.ScoredSet":
    return mx.ScoredSet(
        scores=np.array([r.score for r in rows], dtype=np.float64),
        labels=np.array([r.label for r in rows], dtype=np.int64),
    )
