"""Training loop, k-fold cross-validation over repeats, and evaluation."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .augment import AugmentParams, augment_pixels
from .dataset import stratified_kfold
from .errors import ConfigError, ContractError, DimensionError, NumericError, SplitError
from .metrics import Metrics, aggregate_runs, compute_metrics
from .models import build_model
from .rng import Xoshiro256, derive_seed
from .spectral import image_features

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"alexnet-style": 30, "vgg16-style": 20, "tiny": 30}


@dataclass(frozen=True)
class HyperParams:
    lr: float = 1e-4
    momentum: float = 0.9
    epochs: int = None  # per-backbone default when None
    batch_size: int = 8
    k_folds: int = 3
    repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:  # 0 is allowed: a frozen run is a useful no-op check
            raise ConfigError(f"train.lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"train.momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.k_folds < 2:
            raise ConfigError(f"train.k_folds must be >= 2, got {self.k_folds}")
        if self.repeats < 1:
            raise ConfigError(f"train.repeats must be >= 1, got {self.repeats}")

    def epochs_for(self, backbone):
        return self.epochs if self.epochs is not None else DEFAULT_EPOCHS[backbone]

    def to_json(self):
        return asdict(self)


@dataclass
class Sample:
    """One image prepared for both paths: resized CNN input and spectral features."""

    id: str
    label: int
    cnn_input: np.ndarray   # (h, w, 3) float32 at the configured input size
    fft: np.ndarray         # (fft_dim,) float32


def prepare_sample(image, config):
    """Spectral features come from the native image; the CNN sees a resized copy."""
    if (image.height, image.width) != config.image_size:
        raise DimensionError(
            f"image {image.id!r} is {image.height}x{image.width}, expected {config.image_size[0]}x{config.image_size[1]}")
    feats = image_features(image.pixels, config.spectral_window).values.astype(np.float32)
    h, w = config.input_size
    resized = nn.bilinear_resize(image.pixels.transpose(2, 0, 1), h, w).transpose(1, 2, 0)
    return Sample(image.id, image.label, np.clip(resized, 0, 1).astype(np.float32), feats)


def prepare_samples(images, config):
    return [prepare_sample(im, config) for im in images]


def _batch(samples, config):
    x = np.stack([s.cnn_input.transpose(2, 0, 1) for s in samples])
    f = np.stack([s.fft for s in samples]) if config.fusion != "none" else None
    return x, f


@dataclass
class TrainResult:
    model: object
    epoch_loss: list = field(default_factory=list)
    batch_loss: list = field(default_factory=list)
    train_accuracy: float = None


def train_model(config, samples, hp, seed, augment=None, progress=None):
    """Train one model on ``samples`` (the training folds).

    Augmentation only touches the CNN input; spectral features stay those of
    the original image.
    """
    # overflow surfaces as NumericError with epoch/batch context instead
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(config, samples, hp, seed, augment, progress)


def _train(config, samples, hp, seed, augment, progress):
    if not samples:
        raise SplitError("empty training fold")
    augment = augment if augment is not None else AugmentParams()
    model = build_model(config, seed=derive_seed(seed, "init"))
    opt = nn.SGD(model.parameters(), hp.lr, hp.momentum)
    result = TrainResult(model)
    order = list(range(len(samples)))
    shuffle_rng = Xoshiro256(derive_seed(seed, "shuffle"))
    drop_rng = Xoshiro256(derive_seed(seed, "dropout"))
    for epoch in range(hp.epochs_for(config.backbone)):
        shuffle_rng.shuffle(order)
        losses = []
        for b0 in range(0, len(order), hp.batch_size):
            batch = [samples[i] for i in order[b0:b0 + hp.batch_size]]
            x = np.stack([
                augment_pixels(s.cnn_input, Xoshiro256(derive_seed(seed, "augment", epoch, s.id)),
                               augment).transpose(2, 0, 1)
                for s in batch])
            fft = np.stack([s.fft for s in batch]) if config.fusion != "none" else None
            labels = [s.label for s in batch]
            try:
                logits = model.forward(x, fft, train=True, rng=drop_rng)
                loss = nn.softmax_cross_entropy(logits, labels)
                opt.zero_grad()
                loss.backward()
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b0 // hp.batch_size}: {exc}") from exc
            opt.step()
            if not all(np.isfinite(p.data).all() for p in model.parameters()):
                raise NumericError(f"epoch {epoch} batch {b0 // hp.batch_size}: "
                                   "parameters became non-finite after the update")
            losses.append(float(loss.data))
            result.batch_loss.append(float(loss.data))
        result.epoch_loss.append(float(np.mean(losses)))
        if progress:
            progress(epoch, result.epoch_loss[-1])
    try:
        result.train_accuracy = evaluate(model, samples).accuracy
    except NumericError as exc:
        raise NumericError(f"after epoch {epoch}, scoring the training set: {exc}") from exc
    return result


def predict_scores(model, samples, batch_size=32):
    """Softmax scores in eval mode (dropout off)."""
    if not samples:
        raise ContractError("evaluation set is empty")
    out = []
    for b0 in range(0, len(samples), batch_size):
        x, f = _batch(samples[b0:b0 + batch_size], model.config)
        out.append(model.predict_proba(x, f))
    return np.concatenate(out)


def evaluate(model, samples):
    """Metrics for ``samples``; the model is not modified."""
    scores = predict_scores(model, samples)
    return compute_metrics(scores, [s.label for s in samples], model.config.num_classes)


@dataclass
class FoldResult:
    repeat: int
    fold: int
    seed: int
    test_ids: list
    test_indices: list
    scores: np.ndarray
    metrics: Metrics
    epoch_loss: list
    model: object = None


def _run_fold(args):
    config, samples, hp, augment, repeat, fold, seed, test_idx = args
    held_out = set(test_idx)
    train_idx = [i for i in range(len(samples)) if i not in held_out]
    if not test_idx:
        raise SplitError(f"repeat {repeat} fold {fold} is empty")
    res = train_model(config, [samples[i] for i in train_idx], hp, seed, augment)
    test = [samples[i] for i in test_idx]
    scores = predict_scores(res.model, test)
    metrics = compute_metrics(scores, [s.label for s in test], config.num_classes)
    log.info("repeat %d fold %d: accuracy %.3f", repeat, fold, metrics.accuracy)
    return FoldResult(repeat, fold, seed, [s.id for s in test], list(test_idx), scores,
                      metrics, res.epoch_loss, res.model)


@dataclass
class CVResult:
    folds: list
    repeat_metrics: list
    summary: object
    plans: list


def fold_plan(samples, hp, repeat):
    """Fold assignment for one repeat; each repeat reshuffles."""
    return stratified_kfold([s.label for s in samples], hp.k_folds,
                            derive_seed(hp.seed, "folds", repeat), ids=[s.id for s in samples])


def cross_validate(config, samples, hp, augment=None, jobs=1):
    """k-fold CV repeated ``hp.repeats`` times with fresh folds and initialisations.

    Each repeat's metrics are computed on the pooled out-of-fold predictions;
    the summary is mean and sample std over repeats.
    """
    tasks, plans = [], []
    for r in range(hp.repeats):
        plan = fold_plan(samples, hp, r)
        plans.append(plan)
        for f in range(hp.k_folds):
            tasks.append((config, samples, hp, augment, r, f,
                          derive_seed(hp.seed, "run", r, f), plan.fold_indices(f)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold, tasks))
    else:
        folds = [_run_fold(t) for t in tasks]
    repeat_metrics = []
    labels = np.array([s.label for s in samples])
    for r in range(hp.repeats):
        scores = np.zeros((len(samples), config.num_classes))
        for fr in folds:
            if fr.repeat == r:
                scores[fr.test_indices] = fr.scores
        repeat_metrics.append(compute_metrics(scores, labels, config.num_classes))
    per_fold = [{"repeat": fr.repeat, "fold": fr.fold, "n": fr.metrics.n,
                 **fr.metrics.scalars()} for fr in folds]
    summary = aggregate_runs(repeat_metrics, per_fold, config.fingerprint())
    return CVResult(folds, repeat_metrics, summary, plans)
