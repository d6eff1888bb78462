"""Target model M and the quality estimators scored on its features and logits.

The model is a multinomial logistic regression over 8x8 mean-pooled, per-image
standardized pixels. Besides the maximum softmax probability it carries the statistics
the feature-space scorers need: a training feature bank (KNN), an activation clipping
threshold (ReAct) and a principal subspace with its residual scale (ViM).
"""

from __future__ import annotations

import base64
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from lensbench import SCORER_IDS, ScorerId
from lensbench._io import read_json, write_json
from lensbench._seeds import derive_seed
from lensbench.errors import FormatError
from lensbench.param_space import ParamGrid
from lensbench.scene_sim import (
    CapturedImage,
    ExposureConstants,
    LightCondition,
    Scene,
    auto_expose,
    render,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
FeatureVector = FloatArray

POOL_GRID = 8
STANDARDIZE_EPS = 1e-6

DEFAULT_KNN_K = 10
DEFAULT_REACT_PERCENTILE = 90.0
DEFAULT_ASH_KEEP = 0.10

_CHECKPOINT_FORMAT = "lensbench-model"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class QualityScore:
    value: float
    scorer_id: ScorerId


@dataclass(frozen=True)
class TrainHyper:
    steps: int = 500
    learning_rate: float = 0.1
    l2: float = 1e-4
    init_scale: float = 0.01
    # Clamp the rate to the inverse smoothness bound of the loss
    cap_step: bool = False

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("perception: steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("perception: learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("perception: l2 must be non-negative")


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    weights: FloatArray  # C x D
    bias: FloatArray  # C
    bank_features: FloatArray  # n x D
    bank_labels: npt.NDArray[np.int64]
    react_threshold: float
    vim_basis: FloatArray  # D x d, orthonormal columns
    vim_alpha: float
    loss_history: FloatArray = field(default_factory=lambda: np.zeros(0))

    @property
    def classes(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dims(self) -> int:
        return int(self.weights.shape[1])


def pool_and_standardize(values: FloatArray) -> FloatArray:
    """Features for a batch ``N x H x W`` (or a single ``H x W``) of pixel values."""
    batch = values[np.newaxis] if values.ndim == 2 else values
    n, height, width = batch.shape
    if height % POOL_GRID or width % POOL_GRID:
        raise ValueError(f"perception: image {height}x{width} is not divisible by {POOL_GRID}")
    pooled = batch.reshape(
        n, POOL_GRID, height // POOL_GRID, POOL_GRID, width // POOL_GRID
    ).mean(axis=(2, 4))
    flat = pooled.reshape(n, POOL_GRID * POOL_GRID)
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    flat_std = np.where(std > STANDARDIZE_EPS, std, 1.0)
    features = np.where(std > STANDARDIZE_EPS, (flat - mean) / flat_std, 0.0)
    return features[0] if values.ndim == 2 else features


def extract_features(image: CapturedImage) -> FeatureVector:
    return pool_and_standardize(image.values)


def extract_batch(images: Sequence[CapturedImage]) -> FloatArray:
    return pool_and_standardize(np.stack([img.values for img in images]))


def loss_and_grad(
    W: FloatArray, b: FloatArray, X: FloatArray, y: npt.NDArray[np.int64], l2: float
) -> tuple[float, FloatArray, FloatArray]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient."""
    n = X.shape[0]
    logits = X @ W.T + b
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = -float(log_probs[np.arange(n), y].mean()) + 0.5 * l2 * float(np.sum(W * W))
    delta = np.exp(log_probs)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ X + l2 * W, delta.sum(axis=0)


def _step_cap(X: FloatArray, l2: float) -> float:
    # Smoothness bound of the softmax loss: 0.5 * lambda_max([X 1]^T [X 1] / n) + l2
    augmented = np.hstack([X, np.ones((X.shape[0], 1))])
    gram = augmented.T @ augmented / X.shape[0]
    smoothness = 0.5 * float(np.linalg.eigvalsh(gram)[-1]) + l2
    return 1.0 / smoothness


def _vim_subspace(features: FloatArray) -> FloatArray:
    dims = features.shape[1]
    second_moment = features.T @ features / features.shape[0]
    _, vectors = np.linalg.eigh(second_moment)
    return vectors[:, ::-1][:, : dims // 2].copy()


def _residual_norm(basis: FloatArray, features: FloatArray) -> FloatArray:
    return np.linalg.norm(features - (features @ basis) @ basis.T, axis=1)


def fit_classifier(
    features: FloatArray,
    labels: Sequence[int] | npt.NDArray[np.int64],
    hyper: TrainHyper | None = None,
    seed: int = 0,
    *,
    num_classes: int | None = None,
) -> ClassifierModel:
    hyper = hyper or TrainHyper()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    classes = num_classes if num_classes is not None else int(y.max()) + 1
    if classes < 2:
        raise ValueError("perception: training needs at least 2 classes")
    counts = np.bincount(y, minlength=classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"perception: classes without training samples: {empty.tolist()}")

    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, hyper.init_scale, size=(classes, X.shape[1]))
    b = np.zeros(classes)

    step = hyper.learning_rate
    cap = _step_cap(X, hyper.l2) if hyper.cap_step else step
    if step > cap:
        logger.debug("step size %.4g capped at %.4g", step, cap)
        step = cap

    history = np.empty(hyper.steps + 1)
    for i in range(hyper.steps):
        loss, grad_w, grad_b = loss_and_grad(W, b, X, y, hyper.l2)
        history[i] = loss
        W -= step * grad_w
        b -= step * grad_b
    history[-1] = loss_and_grad(W, b, X, y, hyper.l2)[0]

    basis = _vim_subspace(X)
    residual = _residual_norm(basis, X)
    max_logit = (X @ W.T + b).max(axis=1)
    mean_residual = float(residual.mean())
    alpha = float(max_logit.mean()) / mean_residual if mean_residual > 0 else 0.0

    logger.info("trained %d-class model on %d captures, loss %.4f", classes, len(y), history[-1])
    return ClassifierModel(
        weights=W,
        bias=b,
        bank_features=X.copy(),
        bank_labels=y.copy(),
        react_threshold=float(np.percentile(X, DEFAULT_REACT_PERCENTILE)),
        vim_basis=basis,
        vim_alpha=alpha,
        loss_history=history,
    )


def train(
    scenes: Sequence[Scene],
    lights: Sequence[LightCondition],
    grid: ParamGrid,
    constants: ExposureConstants,
    hyper: TrainHyper | None = None,
    seed: int = 0,
    *,
    num_classes: int | None = None,
) -> ClassifierModel:
    """Fit M on the top-ranked auto-exposure capture of every (scene, light)."""
    images = []
    labels = []
    for scene in scenes:
        for light in lights:
            params = auto_expose(scene, light, grid, constants)[0]
            noise_seed = derive_seed(seed, "train", scene.scene_id, light.id)
            images.append(render(scene, light, params, constants, noise_seed))
            labels.append(scene.class_id)
    return fit_classifier(extract_batch(images), labels, hyper, seed, num_classes=num_classes)


def logits(model: ClassifierModel, features: FloatArray) -> FloatArray:
    return np.atleast_2d(features) @ model.weights.T + model.bias


def predict(model: ClassifierModel, features: FloatArray) -> npt.NDArray[np.int64]:
    return np.argmax(logits(model, features), axis=1)


def class_probabilities(model: ClassifierModel, features: FloatArray) -> FloatArray:
    return softmax(logits(model, features), axis=1)


def _confidence(model: ClassifierModel, features: FloatArray) -> FloatArray:
    return class_probabilities(model, features).max(axis=1)


def _l2_normalize(features: FloatArray) -> FloatArray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / np.where(norms > 0, norms, 1.0)


def _knn(model: ClassifierModel, features: FloatArray, k: int = DEFAULT_KNN_K) -> FloatArray:
    bank = model.bank_features
    if not 1 <= k <= len(bank):
        raise ValueError(f"perception: knn k={k} outside [1, {len(bank)}] (feature bank size)")
    distances = cdist(_l2_normalize(np.atleast_2d(features)), _l2_normalize(bank))
    return -np.partition(distances, k - 1, axis=1)[:, k - 1]


def _react(
    model: ClassifierModel, features: FloatArray, percentile: float | None = None
) -> FloatArray:
    threshold = model.react_threshold
    if percentile is not None and percentile != DEFAULT_REACT_PERCENTILE:
        threshold = float(np.percentile(model.bank_features, percentile))
    clipped = np.minimum(np.atleast_2d(features), threshold)
    return logsumexp(logits(model, clipped), axis=1)


def _ash(
    model: ClassifierModel, features: FloatArray, keep: float = DEFAULT_ASH_KEEP
) -> FloatArray:
    feats = np.atleast_2d(features)
    dims = feats.shape[1]
    survivors = max(1, math.ceil(round(keep * dims, 9)))
    magnitude = np.abs(feats)
    top = np.argsort(-magnitude, axis=1, kind="stable")[:, :survivors]
    mask = np.zeros_like(feats, dtype=bool)
    np.put_along_axis(mask, top, True, axis=1)
    pruned = np.where(mask, feats, 0.0)
    before = magnitude.sum(axis=1, keepdims=True)
    after = np.abs(pruned).sum(axis=1, keepdims=True)
    shaped = pruned * np.where(after > 0, before / np.where(after > 0, after, 1.0), 1.0)
    return logsumexp(logits(model, shaped), axis=1)


def _vim(model: ClassifierModel, features: FloatArray) -> FloatArray:
    feats = np.atleast_2d(features)
    lg = logits(model, feats)
    virtual = model.vim_alpha * _residual_norm(model.vim_basis, feats)
    extended = np.hstack([lg, virtual[:, np.newaxis]])
    # log(1 - p_virtual)
    return logsumexp(lg, axis=1) - logsumexp(extended, axis=1)


_SCORERS: dict[str, Callable[..., FloatArray]] = {
    "confidence": _confidence,
    "knn": _knn,
    "react": _react,
    "ash": _ash,
    "vim": _vim,
}


def score_features(
    model: ClassifierModel, features: FloatArray, scorer_id: ScorerId, **options: Any
) -> FloatArray:
    try:
        scorer = _SCORERS[scorer_id]
    except KeyError:
        raise ValueError(
            f"perception: unknown scorer {scorer_id!r}. Available: {list(SCORER_IDS)}"
        ) from None
    return scorer(model, features, **options)


def confidence(model: ClassifierModel, image: CapturedImage) -> tuple[QualityScore, int]:
    """Maximum softmax probability and the predicted class."""
    feats = extract_features(image)
    value = float(_confidence(model, feats)[0])
    return QualityScore(value, "confidence"), int(predict(model, feats)[0])


def score_knn(model: ClassifierModel, image: CapturedImage, k: int = DEFAULT_KNN_K) -> QualityScore:
    return QualityScore(float(_knn(model, extract_features(image), k)[0]), "knn")


def score_react(
    model: ClassifierModel, image: CapturedImage, percentile: float = DEFAULT_REACT_PERCENTILE
) -> QualityScore:
    return QualityScore(float(_react(model, extract_features(image), percentile)[0]), "react")


def score_ash(
    model: ClassifierModel, image: CapturedImage, keep_fraction: float = DEFAULT_ASH_KEEP
) -> QualityScore:
    return QualityScore(float(_ash(model, extract_features(image), keep_fraction)[0]), "ash")


def score_vim(model: ClassifierModel, image: CapturedImage) -> QualityScore:
    return QualityScore(float(_vim(model, extract_features(image))[0]), "vim")


def score_image(model: ClassifierModel, image: CapturedImage, scorer_id: ScorerId) -> QualityScore:
    value = score_features(model, extract_features(image), scorer_id)
    return QualityScore(float(value[0]), scorer_id)


def score_separation(
    scores: FloatArray, correct: npt.NDArray[np.bool_], *, bins: int = 10
) -> dict[str, Any]:
    """Min-max normalized score distribution of correct vs incorrect captures."""
    values = np.asarray(scores, dtype=np.float64).ravel()
    hits = np.asarray(correct, dtype=bool).ravel()
    lo, hi = float(values.min()), float(values.max())
    normalized = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    edges = np.linspace(0.0, 1.0, bins + 1)

    def summary(selected: FloatArray) -> tuple[float | None, list[float]]:
        if selected.size == 0:
            return None, [0.0] * bins
        hist, _ = np.histogram(selected, bins=edges)
        return float(selected.mean()), (hist / selected.size).tolist()

    mean_correct, hist_correct = summary(normalized[hits])
    mean_incorrect, hist_incorrect = summary(normalized[~hits])
    gap = None
    if mean_correct is not None and mean_incorrect is not None:
        gap = mean_correct - mean_incorrect
    return {
        "mean_correct": mean_correct,
        "mean_incorrect": mean_incorrect,
        "gap": gap,
        "hist_correct": hist_correct,
        "hist_incorrect": hist_incorrect,
        "count_correct": int(hits.sum()),
        "count_incorrect": int((~hits).sum()),
    }


def _encode(array: np.ndarray) -> dict[str, Any]:
    little = array.astype(array.dtype.newbyteorder("<"))
    return {
        "dtype": little.dtype.str,
        "shape": list(array.shape),
        "data": base64.b64encode(np.ascontiguousarray(little).tobytes()).decode("ascii"),
    }


def _decode(blob: dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).reshape(blob["shape"]).copy()


def save_model(path: Path, model: ClassifierModel) -> Path:
    return write_json(
        path,
        {
            "format": _CHECKPOINT_FORMAT,
            "version": _CHECKPOINT_VERSION,
            "classes": model.classes,
            "dims": model.dims,
            "react_threshold": model.react_threshold,
            "vim_alpha": model.vim_alpha,
            "arrays": {
                "weights": _encode(model.weights),
                "bias": _encode(model.bias),
                "bank_features": _encode(model.bank_features),
                "bank_labels": _encode(model.bank_labels),
                "vim_basis": _encode(model.vim_basis),
                "loss_history": _encode(model.loss_history),
            },
        },
    )


def load_model(path: Path) -> ClassifierModel:
    try:
        header = read_json(path)
    except (OSError, ValueError) as exc:
        raise FormatError("perception", f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise FormatError("perception", f"{path} is not a model checkpoint")
    if header.get("version") != _CHECKPOINT_VERSION:
        raise FormatError("perception", f"unsupported checkpoint version {header.get('version')}")
    arrays = {name: _decode(blob) for name, blob in header["arrays"].items()}
    return ClassifierModel(
        weights=arrays["weights"].astype(np.float64),
        bias=arrays["bias"].astype(np.float64),
        bank_features=arrays["bank_features"].astype(np.float64),
        bank_labels=arrays["bank_labels"].astype(np.int64),
        react_threshold=float(header["react_threshold"]),
        vim_basis=arrays["vim_basis"].astype(np.float64),
        vim_alpha=float(header["vim_alpha"]),
        loss_history=arrays["loss_history"].astype(np.float64),
    )
