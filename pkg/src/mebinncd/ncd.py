"""Teacher-student training for discovering novel anomaly categories.

Teacher and student share one backbone and classifier heads and differ only in
softmax temperature: the sharp teacher emits pseudo labels over the novel
classes (known-class entries are exactly zero), the smooth student is trained
toward them cross-view. Pseudo labels of low-score regions are blended toward
the reserved normal class so over-detections stop polluting the clusters. The
mean-entropy term is *subtracted* from the minimized total so batch-mean
predictions spread over classes instead of collapsing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from .crop import SubImageRecord, resize_to_model
from .mgvit import MaskGuidedViT, ModelConfig, attention_bias, pool_mask, to_model_input

logger = logging.getLogger(__name__)


class BatchTooSmallError(ValueError):
    pass


class NoLabeledItemsError(ValueError):
    pass


class AllMaskedError(ValueError):
    pass


class ConfigMismatchError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    tau_u: float = 0.07
    tau_c: float = 1.0
    tau_s: float = 0.1
    tau_t_start: float = 0.07
    tau_t_end: float = 0.04
    tau_t_warmup_epochs: int = 40
    tau_t_step_every: int = 4
    lam: float = 0.3
    mu: float = 4.0
    plc_threshold: float = 0.5
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 0.003
    seed: int = 0

    def __post_init__(self):
        for name in ("tau_u", "tau_c", "tau_s", "tau_t_start", "tau_t_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.plc_threshold <= 1.0:
            raise ValueError(f"plc_threshold must lie in [0, 1], got {self.plc_threshold}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.tau_t_step_every < 1 or self.tau_t_warmup_epochs < 0:
            raise ValueError("invalid teacher temperature schedule")


def teacher_temperature(epoch: int, cfg: TrainConfig) -> float:
    """Stepwise-linear teacher temperature for a 1-based epoch index.

    Drops one equal step every ``tau_t_step_every`` epochs until the warmup
    window is spent, then stays at ``tau_t_end``.
    """
    steps_total = max(1, cfg.tau_t_warmup_epochs // cfg.tau_t_step_every)
    step = min((epoch - 1) // cfg.tau_t_step_every, steps_total)
    return cfg.tau_t_start + (cfg.tau_t_end - cfg.tau_t_start) * step / steps_total


# ---------------------------------------------------------------------------
# pseudo labels


def pseudo_labels(teacher_logits: torch.Tensor, tau_t: float, num_known: int) -> torch.Tensor:
    """Sharp-softmax pseudo labels restricted to the novel classes.

    Known-class entries are exactly zero: the softmax runs over the novel
    entries only, which is the limit of masking known logits with -inf.
    """
    if tau_t <= 0:
        raise ValueError("tau_t must be > 0")
    squeeze = teacher_logits.ndim == 1
    logits = teacher_logits.reshape(1, -1) if squeeze else teacher_logits
    if logits.shape[1] <= num_known:
        raise AllMaskedError("no novel classes left after masking known logits")
    out = torch.zeros_like(logits)
    out[:, num_known:] = F.softmax(logits[:, num_known:] / tau_t, dim=1)
    return out.reshape(-1) if squeeze else out


def correct_pseudo_labels(
    q: torch.Tensor, anomaly_scores, num_known: int, threshold: float = 0.5
) -> torch.Tensor:
    """Blend low-score pseudo labels toward the reserved normal class.

    The normal slot is the first novel class (index ``num_known``). With
    weight w = max(threshold - score, 0) the output is w*e + (1-w)*q, so any
    score at or above the threshold leaves q untouched.
    """
    squeeze = q.ndim == 1
    probs = q.reshape(1, -1) if squeeze else q
    scores = torch.as_tensor(anomaly_scores, dtype=probs.dtype).reshape(-1)
    if scores.numel() == 1 and probs.shape[0] > 1:
        scores = scores.expand(probs.shape[0])
    w = (threshold - scores).clamp(min=0.0)[:, None]
    normal = torch.zeros_like(probs)
    normal[:, num_known] = 1.0
    out = w * normal + (1.0 - w) * probs
    return out.reshape(-1) if squeeze else out


# ---------------------------------------------------------------------------
# loss terms


def self_contrastive_loss(anchors: torch.Tensor, candidates: torch.Tensor, tau: float) -> torch.Tensor:
    """InfoNCE over paired views: each anchor's positive is its own pair's
    other view; the denominator runs over every pair's other view."""
    if anchors.shape[0] < 2:
        raise BatchTooSmallError("self-contrastive loss needs at least 2 pairs")
    logits = anchors @ candidates.T / tau
    targets = torch.arange(anchors.shape[0], device=anchors.device)
    return F.cross_entropy(logits, targets)


def supervised_contrastive_loss(
    anchors: torch.Tensor, candidates: torch.Tensor, labels, tau: float
) -> torch.Tensor:
    """Label-driven contrastive loss over labeled items.

    Positives are other items sharing the anchor's label (unlabeled items are
    marked -1); the denominator runs over the whole batch. Anchors without a
    positive partner are skipped; if none remains, raises NoLabeledItemsError.
    """
    labels = torch.as_tensor(labels, dtype=torch.long, device=anchors.device)
    labeled = labels >= 0
    if int(labeled.sum()) < 2:
        raise NoLabeledItemsError("supervised contrastive loss needs >= 2 labeled items")
    sims = anchors @ candidates.T / tau
    log_denom = torch.logsumexp(sims, dim=1)
    same = (labels[:, None] == labels[None, :]) & labeled[:, None] & labeled[None, :]
    same &= ~torch.eye(len(labels), dtype=torch.bool, device=anchors.device)
    pos_counts = same.sum(dim=1)
    eligible = labeled & (pos_counts > 0)
    if not bool(eligible.any()):
        raise NoLabeledItemsError("no labeled item has a same-label partner in the batch")
    per_anchor = ((log_denom[:, None] - sims) * same).sum(dim=1) / pos_counts.clamp(min=1)
    return per_anchor[eligible].mean()


def classification_loss(student_probs: torch.Tensor, targets: torch.Tensor,
                        swap: bool = False) -> torch.Tensor:
    """Mean cross-entropy -sum(target * log(pred)) over matched rows.

    Both arguments stack the two augmented views as [view_a; view_b]. With
    ``swap``, view-a targets supervise view-b predictions and vice versa.
    """
    if student_probs.shape != targets.shape:
        raise ValueError("student_probs and targets must have matching shapes")
    if swap:
        if student_probs.shape[0] % 2:
            raise ValueError("swap requires an even stack of two views")
        half = student_probs.shape[0] // 2
        targets = torch.cat([targets[half:], targets[:half]])
    return -torch.xlogy(targets, student_probs).sum(dim=1).mean()


def entropy_regularizer(student_probs_a: torch.Tensor, student_probs_b: torch.Tensor) -> torch.Tensor:
    """Entropy of the across-batch, across-view mean prediction H(p_bar)."""
    if student_probs_a.numel() == 0:
        raise ValueError("entropy regularizer needs a non-empty batch")
    mean_pred = torch.cat([student_probs_a, student_probs_b]).mean(dim=0)
    return -torch.xlogy(mean_pred, mean_pred).sum()


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class ViewTransform:
    """One sampled augmentation; geometry applies to image and mask alike,
    photometry to the image only."""

    hflip: bool = False
    vflip: bool = False
    quarter_turns: int = 0
    brightness: float = 1.0
    blur_radius: int = 0
    crop_area_frac: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "ViewTransform":
        return cls(
            hflip=bool(rng.random() < 0.5),
            vflip=bool(rng.random() < 0.5),
            quarter_turns=int(rng.integers(0, 4)),
            brightness=float(rng.uniform(0.8, 1.2)),
            blur_radius=int(rng.integers(0, 2)),
            crop_area_frac=float(rng.uniform(0.8, 1.0)),
            offset_x=float(rng.random()),
            offset_y=float(rng.random()),
        )

    def apply(self, image: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        img, msk = image, mask
        if self.hflip:
            img, msk = img[:, ::-1], msk[:, ::-1]
        if self.vflip:
            img, msk = img[::-1, :], msk[::-1, :]
        if self.quarter_turns:
            img = np.rot90(img, self.quarter_turns)
            msk = np.rot90(msk, self.quarter_turns)
        img, msk = np.ascontiguousarray(img), np.ascontiguousarray(msk)
        side = img.shape[0]
        crop_side = max(1, int(round(side * self.crop_area_frac**0.5)))
        if crop_side < side:
            x0 = int(round(self.offset_x * (side - crop_side)))
            y0 = int(round(self.offset_y * (side - crop_side)))
            img = cv2.resize(img[y0 : y0 + crop_side, x0 : x0 + crop_side],
                             (side, side), interpolation=cv2.INTER_LINEAR)
            msk = cv2.resize(msk[y0 : y0 + crop_side, x0 : x0 + crop_side],
                             (side, side), interpolation=cv2.INTER_NEAREST)
        if self.brightness != 1.0:
            img = np.clip(np.rint(img.astype(np.float64) * self.brightness), 0, 255).astype(np.uint8)
        if self.blur_radius > 0:
            k = 2 * self.blur_radius + 1
            img = cv2.blur(img, (k, k))
        return img, msk


def augment(record: SubImageRecord, seed) -> tuple[tuple, tuple]:
    """Two independently transformed (image, mask) views of one record."""
    rng = np.random.default_rng(seed)
    view_a = ViewTransform.sample(rng).apply(record.sub_image, record.sub_mask)
    view_b = ViewTransform.sample(rng).apply(record.sub_image, record.sub_mask)
    return view_a, view_b


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    model: MaskGuidedViT
    history: list[dict]
    head_cumulative_loss: np.ndarray
    inference_head: int


def _batch_tensors(views, records, indices, model_cfg: ModelConfig, dtype):
    images = torch.stack([to_model_input(v[0], dtype) for v in views])
    additive = torch.stack(
        [torch.as_tensor(pool_mask(v[1], model_cfg).additive, dtype=dtype) for v in views]
    )
    scores = torch.tensor([records[i].anomaly_score for i in indices], dtype=dtype)
    labels = torch.tensor(
        [records[i].label if records[i].label is not None else -1 for i in indices],
        dtype=torch.long,
    )
    return images, additive, scores, labels


def compute_batch_loss(model, model_cfg, train_cfg, tau_t, batch):
    """All loss components for one batch of paired views.

    Pseudo-label targets are produced under no_grad: each step's objective
    treats the teacher output as a constant, matching the stop-gradient
    training rule. Terms that do not apply to the batch (no labeled rows, or
    a single pair) enter as zeros.
    """
    images_a, images_b, additive_a, additive_b, scores, labels = batch
    _, logits_a, proj_a = model(images_a, additive_a)
    _, logits_b, proj_b = model(images_b, additive_b)
    num_known = model_cfg.num_known_classes
    zero = images_a.new_zeros(())

    if proj_a.shape[0] >= 2:
        l_rep = self_contrastive_loss(proj_a, proj_b, train_cfg.tau_u)
    else:
        l_rep = zero
    labeled_rows = labels >= 0
    try:
        l_rep_sup = supervised_contrastive_loss(proj_a, proj_b, labels, train_cfg.tau_c)
    except NoLabeledItemsError:
        l_rep_sup = zero

    unlabeled_rows = ~labeled_rows
    heads = model_cfg.num_heads_classifier
    per_head_cls_l = []
    per_head_cls_u = []
    per_head_reg = []
    for h in range(heads):
        probs_a = F.softmax(logits_a[h] / train_cfg.tau_s, dim=1)
        probs_b = F.softmax(logits_b[h] / train_cfg.tau_s, dim=1)
        if bool(labeled_rows.any()):
            one_hot = F.one_hot(labels[labeled_rows], model_cfg.num_classes).to(probs_a.dtype)
            stacked_probs = torch.cat([probs_a[labeled_rows], probs_b[labeled_rows]])
            stacked_targets = torch.cat([one_hot, one_hot])
            # two cross-view terms per item, hence twice the stacked mean
            per_head_cls_l.append(2.0 * classification_loss(stacked_probs, stacked_targets, swap=True))
        else:
            per_head_cls_l.append(zero)
        if bool(unlabeled_rows.any()):
            with torch.no_grad():
                q_a = pseudo_labels(logits_a[h][unlabeled_rows], tau_t, num_known)
                q_b = pseudo_labels(logits_b[h][unlabeled_rows], tau_t, num_known)
                q_a = correct_pseudo_labels(q_a, scores[unlabeled_rows], num_known,
                                            train_cfg.plc_threshold)
                q_b = correct_pseudo_labels(q_b, scores[unlabeled_rows], num_known,
                                            train_cfg.plc_threshold)
            stacked_probs = torch.cat([probs_a[unlabeled_rows], probs_b[unlabeled_rows]])
            stacked_targets = torch.cat([q_a, q_b])
            per_head_cls_u.append(2.0 * classification_loss(stacked_probs, stacked_targets, swap=True))
            per_head_reg.append(entropy_regularizer(probs_a[unlabeled_rows], probs_b[unlabeled_rows]))
        else:
            per_head_cls_u.append(zero)
            per_head_reg.append(zero)

    l_cls_l = torch.stack(per_head_cls_l).mean()
    l_cls_u = torch.stack(per_head_cls_u).mean()
    l_reg = torch.stack(per_head_reg).mean()
    lam, mu = train_cfg.lam, train_cfg.mu
    total = lam * (l_rep_sup + l_cls_l) + (1.0 - lam) * (l_rep + l_cls_u - mu * l_reg)
    per_head_objective = [
        float(lam * per_head_cls_l[h].detach()
              + (1.0 - lam) * (per_head_cls_u[h].detach() - mu * per_head_reg[h].detach()))
        for h in range(heads)
    ]
    components = {
        "loss_rep": float(l_rep.detach()),
        "loss_rep_sup": float(l_rep_sup.detach()),
        "loss_cls_labeled": float(l_cls_l.detach()),
        "loss_cls_unlabeled": float(l_cls_u.detach()),
        "entropy_reg": float(l_reg.detach()),
    }
    return total, components, per_head_objective


def train(
    records: list[SubImageRecord],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dtype: torch.dtype = torch.float32,
) -> TrainState:
    """Train a model on mixed labeled/unlabeled records.

    Fully deterministic for a fixed seed and thread count: shuffling and
    augmentation seeds derive from (seed, epoch, item index). Any non-finite
    total loss aborts with a diagnostic.
    """
    if model_cfg.num_novel_classes < 2:
        raise ConfigMismatchError("need at least 2 novel classes")
    unlabeled = [r for r in records if r.label is None]
    if not unlabeled:
        raise ConfigMismatchError("training requires unlabeled records")
    for r in records:
        if r.label is not None and not 0 <= r.label < model_cfg.num_known_classes:
            raise ConfigMismatchError(
                f"label {r.label} outside the {model_cfg.num_known_classes} known classes"
            )

    torch.manual_seed(train_cfg.seed)
    model = MaskGuidedViT(model_cfg, dtype=dtype, seed=train_cfg.seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=train_cfg.learning_rate)
    prepared = [resize_to_model(r, model_cfg.input_side) for r in records]
    n = len(prepared)
    heads = model_cfg.num_heads_classifier
    head_cum = np.zeros(heads, dtype=np.float64)
    history = []

    for epoch in range(1, train_cfg.epochs + 1):
        tau_t = teacher_temperature(epoch, train_cfg)
        perm = np.random.default_rng(
            np.random.SeedSequence([train_cfg.seed, epoch, 0x5E])
        ).permutation(n)
        sums: dict[str, float] = {}
        total_sum = 0.0
        head_epoch = np.zeros(heads, dtype=np.float64)
        steps = 0
        for start in range(0, n, train_cfg.batch_size):
            indices = perm[start : start + train_cfg.batch_size]
            views_a, views_b = [], []
            for idx in indices:
                va, vb = augment(prepared[idx], np.random.SeedSequence([train_cfg.seed, epoch, int(idx)]))
                views_a.append(va)
                views_b.append(vb)
            images_a, additive_a, scores, labels = _batch_tensors(views_a, prepared, indices, model_cfg, dtype)
            images_b, additive_b, _, _ = _batch_tensors(views_b, prepared, indices, model_cfg, dtype)
            total, components, per_head = compute_batch_loss(
                model, model_cfg, train_cfg, tau_t,
                (images_a, images_b, additive_a, additive_b, scores, labels),
            )
            if not torch.isfinite(total):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} step {steps}: {components}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            total_sum += float(total.detach())
            for key, value in components.items():
                sums[key] = sums.get(key, 0.0) + value
            head_epoch += np.asarray(per_head)
            steps += 1
        head_cum += head_epoch / steps
        entry = {"epoch": epoch, "tau_t": tau_t,
                 "loss_total": total_sum / steps,
                 "head_cumulative_loss": [float(v) for v in head_cum]}
        entry.update({key: value / steps for key, value in sums.items()})
        history.append(entry)
        logger.debug("epoch %d: total %.4f", epoch, entry["loss_total"])

    inference_head = int(np.argmin(head_cum))
    return TrainState(model=model, history=history,
                      head_cumulative_loss=head_cum, inference_head=inference_head)


def predict_proba(
    model: MaskGuidedViT,
    records: list[SubImageRecord],
    head: int,
    tau_s: float = 0.1,
) -> np.ndarray:
    """Student-temperature class distributions for records, one row each."""
    dtype = next(model.parameters()).dtype
    prepared = [resize_to_model(r, model.cfg.input_side) for r in records]
    images = torch.stack([to_model_input(r.sub_image, dtype) for r in prepared])
    additive = torch.stack(
        [torch.as_tensor(pool_mask(r.sub_mask, model.cfg).additive, dtype=dtype) for r in prepared]
    )
    with torch.no_grad():
        _, logits, _ = model(images, additive)
        probs = F.softmax(logits[head] / tau_s, dim=1)
    out = probs.cpu().numpy().astype(np.float64)
    out /= out.sum(axis=1, keepdims=True)  # restore unit sum lost to float32 rounding
    return out


class NoveltyClassifier(BaseEstimator):
    """Estimator facade over the training loop.

    fit() trains on SubImageRecords (label=None marks unlabeled ones);
    predict_proba() / predict() use the classifier head that accumulated the
    smallest training loss.
    """

    def __init__(self, model_config: ModelConfig | None = None,
                 train_config: TrainConfig | None = None):
        self.model_config = model_config
        self.train_config = train_config

    def fit(self, records, y=None):
        model_cfg = self.model_config or ModelConfig()
        train_cfg = self.train_config or TrainConfig()
        state = train(records, model_cfg, train_cfg)
        self.model_ = state.model
        self.history_ = state.history
        self.head_cumulative_loss_ = state.head_cumulative_loss
        self.inference_head_ = state.inference_head
        return self

    def predict_proba(self, records) -> np.ndarray:
        self._check_fitted()
        tau_s = (self.train_config or TrainConfig()).tau_s
        return predict_proba(self.model_, records, self.inference_head_, tau_s)

    def predict(self, records) -> np.ndarray:
        return self.predict_proba(records).argmax(axis=1)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("NoveltyClassifier must be fitted first")
