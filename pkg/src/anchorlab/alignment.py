"""Alignment-phase training loops.

The main loop pulls a student's embedding of each composite toward a fixed
per-foreground anchor with the loss 1 - cos.  Variants swap the target
(per-class orthogonal vectors) or the objective (cross-entropy on the same
data stream, for a budget-matched control), and a fine-tuning protocol
measures how correlated-label training erodes worst-group accuracy.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .anchors import AnchorSet
from .encoders import (
    EncoderModel,
    clone_unfrozen,
    encode_batch,
    freeze,
    init_encoder,
)
from .errors import ConfigError, ManifestError
from .rng import derive_seed, rng
from .scene import GroupedDataset, make_composite
from .tensor import GradTape, Tensor


@dataclass(frozen=True)
class AlignConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 0.01
    warmup_frac: float = 0.10
    M: int = 5  # contexts per foreground per epoch
    regenerate_per_epoch: bool = True
    early_stop: bool = False
    degradation: str = "perfect"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.M < 1:
            raise ConfigError("epochs, batch size and M must all be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_lr: list[float] = field(default_factory=list)
    epoch_wall_ms: list[float] = field(default_factory=list)
    lr_steps: list[float] = field(default_factory=list)
    data_ids: list[str] = field(default_factory=list)
    final_checksum: str = ""
    early_stopped: bool = False


def write_trainlog_csv(path, log: TrainLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "lr", "wall_ms"])
        for i, (loss, lr, ms) in enumerate(zip(log.epoch_loss, log.epoch_lr,
                                               log.epoch_wall_ms), start=1):
            w.writerow([i, f"{loss:.6f}", f"{lr:.8g}", f"{ms:.1f}"])


def align_loss(student: EncoderModel, composite: np.ndarray, anchor: np.ndarray) -> Tensor:
    """1 - cos(student embedding, anchor) for a single composite."""
    emb = encode_batch(student, composite[None])
    a = Tensor(anchor.reshape(1, -1))
    cos = T.tsum(T.mul(emb, a))
    return Tensor(np.float32(1.0)) - cos


def _align_loss_batch(student: EncoderModel, rasters: np.ndarray,
                      anchors_mat: np.ndarray) -> Tensor:
    embs = encode_batch(student, rasters)
    cos = T.tsum(T.mul(embs, Tensor(anchors_mat)), axis=1)
    return T.tmean(Tensor(np.float32(1.0)) - cos)


def composite_stream(foregrounds, bg_pool, M: int, seed: int, epoch: int):
    """Deterministic per-epoch list of (fg, bg, item_seed, comp_id).

    Each foreground gets M fresh random backgrounds; the draw depends only on
    (seed, epoch, fg, m), so the stream is shared verbatim by any consumer
    with the same seed.
    """
    items = []
    for fg in foregrounds:
        g = rng(seed, "stream", epoch, fg.id)
        for m in range(M):
            bg = bg_pool[int(g.integers(0, len(bg_pool)))]
            item_seed = derive_seed(seed, "stream", epoch, fg.id, bg.id, m)
            items.append((fg, bg, item_seed, f"{fg.id}|{bg.id}|{epoch}|{m}"))
    order = rng(seed, "stream-order", epoch).permutation(len(items))
    return [items[i] for i in order]


def _zero_all_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def _train_loop(student: EncoderModel, target_fn, foregrounds, bg_pool,
                cfg: AlignConfig, extra_params: dict[str, Tensor] | None = None,
                objective: str = "align", labels_fn=None,
                update_encoder: bool = True,
                head_only_epochs: int = 0) -> TrainLog:
    """Shared epoch/batch/step loop for the alignment-style objectives.

    The first `head_only_epochs` epochs update only `extra_params` (frozen
    encoder warm-up); remaining epochs update everything.
    """
    log = TrainLog()
    steps_per_epoch = max(1, -(-len(foregrounds) * cfg.M // cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    sched = T.LrSchedule(cfg.lr, cfg.warmup_frac, total_steps, cfg.lr / 10)
    params = dict(student.trainable_params()) if update_encoder else {}
    if extra_params:
        params.update(extra_params)
    head_opt = None
    if head_only_epochs > 0:
        head_opt = T.AdamW(dict(extra_params or {}), lr=cfg.lr,
                           weight_decay=cfg.weight_decay)
    opt = T.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    all_params = {**student.params, **(extra_params or {})}
    step = 0
    fixed_rasters: np.ndarray | None = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        stream_epoch = epoch if cfg.regenerate_per_epoch else 0
        stream = composite_stream(foregrounds, bg_pool, cfg.M, cfg.seed, stream_epoch)
        if epoch == 0 or cfg.regenerate_per_epoch:
            log.data_ids.extend(cid for _, _, _, cid in stream)
        if cfg.regenerate_per_epoch:
            epoch_rasters = np.stack([make_composite(fg, bg, s, degradation=cfg.degradation).raster
                                      for fg, bg, s, _ in stream])
        else:
            if fixed_rasters is None:
                fixed_rasters = np.stack([make_composite(fg, bg, s, degradation=cfg.degradation).raster
                                          for fg, bg, s, _ in stream])
            epoch_rasters = fixed_rasters
        losses = []
        for b0 in range(0, len(stream), cfg.batch_size):
            batch = stream[b0 : b0 + cfg.batch_size]
            rasters = epoch_rasters[b0 : b0 + cfg.batch_size]
            step += 1
            lr = sched.lr_at(step)
            log.lr_steps.append(lr)
            active_opt = head_opt if (head_opt is not None and epoch < head_only_epochs) else opt
            active_opt.lr = lr
            _zero_all_grads(all_params)
            with GradTape() as tape:
                if objective == "align":
                    targets = np.stack([target_fn(fg) for fg, _, _, _ in batch])
                    loss = _align_loss_batch(student, rasters, targets)
                else:
                    ys = np.array([labels_fn(fg, bg) for fg, bg, _, _ in batch])
                    if len(np.unique(ys)) < 2:
                        warnings.warn("single-class batch in the label stream")
                    embs = encode_batch(student, rasters)
                    logits = T.matmul(embs, extra_params["head_W"]) + extra_params["head_b"]
                    loss = T.softmax_cross_entropy(logits, ys)
                tape.backward(loss)
            active_opt.step()
            losses.append(float(loss.data))
        log.epoch_loss.append(float(np.mean(losses)))
        log.epoch_lr.append(log.lr_steps[-1])
        log.epoch_wall_ms.append((time.perf_counter() - t0) * 1e3)
        if cfg.early_stop and len(log.epoch_loss) >= 4:
            past = log.epoch_loss[-4]
            if past > 0 and (past - log.epoch_loss[-1]) / past < 1e-3:
                log.early_stopped = True
                break
    log.final_checksum = student.param_checksum()
    return log


def train_bap(teacher: EncoderModel, anchors: AnchorSet, foregrounds, bg_pool,
              cfg: AlignConfig) -> tuple[EncoderModel, TrainLog]:
    """Anchor-alignment training of a student cloned from the teacher."""
    for fg in foregrounds:
        if fg.id not in anchors.anchors:
            raise ManifestError(f"no anchor for foreground {fg.id}")
    student = clone_unfrozen(teacher)

    def target_fn(fg):
        return anchors.anchors[fg.id]

    log = _train_loop(student, target_fn, foregrounds, bg_pool, cfg)
    return student, log


def train_orthogonal(teacher: EncoderModel, targets: list[np.ndarray],
                     class_to_target: dict[int, int], foregrounds, bg_pool,
                     cfg: AlignConfig) -> tuple[EncoderModel, TrainLog]:
    """Alignment training toward one static orthogonal vector per class."""
    for fg in foregrounds:
        if fg.y not in class_to_target:
            raise ManifestError(f"class {fg.y} has no target vector assigned")
    student = clone_unfrozen(teacher)

    def target_fn(fg):
        return targets[class_to_target[fg.y]]

    log = _train_loop(student, target_fn, foregrounds, bg_pool, cfg)
    return student, log


def _head_params(d: int, num_classes: int, seed: int) -> dict[str, Tensor]:
    g = rng(seed, "head")
    return {
        "head_W": Tensor(0.01 * g.standard_normal((d, num_classes)), requires_grad=True),
        "head_b": Tensor(np.zeros(num_classes), requires_grad=True),
    }


def train_control(teacher: EncoderModel, foregrounds, bg_pool, cfg: AlignConfig,
                  probe_epochs: int = 10) -> tuple[EncoderModel, TrainLog]:
    """Budget-matched cross-entropy control on the exact same composite stream.

    Consumes exactly the epochs an alignment run would, in two stages within
    that budget: the first `probe_epochs` epochs update the head only
    (frozen-encoder warm-up), the remainder fine-tune everything.  The
    classification head is discarded; only the encoder is returned.
    """
    if probe_epochs >= cfg.epochs:
        raise ConfigError("probe stage must leave at least one fine-tuning epoch")
    student = clone_unfrozen(teacher)
    head = _head_params(student.d, len({fg.y for fg in foregrounds}),
                        derive_seed(cfg.seed, "control-head"))

    def labels_fn(fg, bg):
        return fg.y

    log = _train_loop(student, None, foregrounds, bg_pool, cfg,
                      extra_params=head, objective="ce", labels_fn=labels_fn,
                      head_only_epochs=probe_epochs)
    log.final_checksum = student.param_checksum()
    return student, log


def pretrain_teacher(foregrounds, backgrounds, seed: int, epochs: int = 6,
                     arch: str = "mlp", d: int = 64, M: int = 4,
                     lr: float = 1e-3, degradation: str = "perfect") -> EncoderModel:
    """Learned teacher: joint (class, background-group) supervised pre-training.

    Backgrounds are drawn uniformly regardless of class, and the target is
    the product label class * G + group, so the embedding keeps both
    foreground and background structure, like a generically pre-trained
    backbone.  Returned frozen, head discarded.
    """
    hw = backgrounds[0].raster.shape[:2]
    model = init_encoder(arch, derive_seed(seed, "teacher"), d=d, input_hw=hw)
    num_groups = len({bg.g for bg in backgrounds})
    num_classes = len({fg.y for fg in foregrounds})
    head = _head_params(d, num_classes * num_groups,
                        derive_seed(seed, "teacher-head"))
    cfg = AlignConfig(epochs=epochs, batch_size=128, lr=lr, M=M,
                      degradation=degradation,
                      seed=derive_seed(seed, "teacher-train"))
    _train_loop(model, None, foregrounds, backgrounds, cfg, extra_params=head,
                objective="ce", labels_fn=lambda fg, bg: fg.y * num_groups + bg.g)
    return freeze(model)


def finetune_on_correlated(student: EncoderModel, train: GroupedDataset,
                           test: GroupedDataset, cfg: AlignConfig,
                           ) -> tuple[EncoderModel, dict[str, np.ndarray], dict[str, list[float]]]:
    """Full-parameter cross-entropy fine-tuning on a correlated set.

    Epoch 0 of the returned traces is the frozen-probe baseline (no encoder
    update yet); later entries track the balanced test set after each epoch.
    """
    from .evaluation import group_metrics, train_probe

    model = clone_unfrozen(freeze(student))
    frozen_view = freeze(model)
    probe = train_probe(frozen_view, train,
                        seed=derive_seed(cfg.seed, "ft-probe"))
    head = {"head_W": Tensor(probe.W.copy(), requires_grad=True),
            "head_b": Tensor(probe.b.copy(), requires_grad=True)}
    rasters = train.rasters()
    ys = train.labels()
    test_rasters = test.rasters()
    test_y, test_g = test.labels(), test.groups()

    def eval_now():
        from .encoders import encode_np

        embs = encode_np(model, test_rasters)
        logits = embs @ head["head_W"].data + head["head_b"].data
        preds = logits.argmax(axis=1)
        gm = group_metrics(preds, test_y, test_g)
        return gm.wga, gm.avg

    wga0, avg0 = eval_now()
    traces = {"wga": [wga0], "avg": [avg0]}
    n = len(rasters)
    steps_per_epoch = max(1, -(-n // cfg.batch_size))
    sched = T.LrSchedule(cfg.lr, cfg.warmup_frac, cfg.epochs * steps_per_epoch,
                         cfg.lr / 10)
    opt = T.AdamW({**model.trainable_params(), **head}, lr=cfg.lr,
                  weight_decay=cfg.weight_decay)
    all_params = {**model.params, **head}
    step = 0
    for epoch in range(cfg.epochs):
        order = rng(cfg.seed, "ft-order", epoch).permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            step += 1
            opt.lr = sched.lr_at(step)
            _zero_all_grads(all_params)
            with GradTape() as tape:
                embs = encode_batch(model, rasters[idx])
                logits = T.matmul(embs, head["head_W"]) + head["head_b"]
                loss = T.softmax_cross_entropy(logits, ys[idx])
                tape.backward(loss)
            opt.step()
        w, a = eval_now()
        traces["wga"].append(w)
        traces["avg"].append(a)
    head_np = {"head_W": head["head_W"].data.copy(), "head_b": head["head_b"].data.copy()}
    return model, head_np, traces
