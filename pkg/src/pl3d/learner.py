"""Per-point feature model, training objective, and momentum-SGD loop.

The model is a small pointwise MLP (position + color -> tanh hidden layers ->
d-vector) plus a linear projection W taking the unified query embedding to the
feature space. Gradients are analytic and hand-derived; `backward` must agree
with central finite differences to 1e-4 relative error, which the test suite
enforces. Weight decay lives in the optimizer step, not in the loss, so the
finite-difference check sees the pure objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyPairSet,
    NoFeaturePairs,
    NonFiniteLoss,
    ZeroVector,
)
from .types import CorrespondenceSet, PipelineConfig, PointCloud, SceneBundle

MOMENTUM = 0.9
WEIGHT_DECAY = 1e-4
NORM_FLOOR = 1e-12


@dataclass
class FeatureModel:
    """MLP parameters plus the query projection.

    `params` maps name -> array in fixed insertion order: w0, b0, ... per
    layer, then wq (the d x d_e projection). Layer weights are (out, in).
    """

    params: dict[str, np.ndarray]
    hidden_widths: tuple[int, ...]
    embed_dim: int
    feature_dim: int

    @property
    def num_layers(self) -> int:
        return len(self.hidden_widths) + 1


@dataclass
class TrainBatch:
    """Everything one full-batch step needs, in model-ready arrays."""

    inputs: np.ndarray            # (N, 6) position + color rows
    pair_point: np.ndarray        # (M,) point row per correspondence
    pair_target: np.ndarray       # (M,) sampled soft mask values
    pair_feat: np.ndarray         # (M, d) sampled 2D features
    pair_has_feat: np.ndarray     # (M,) bool
    q: np.ndarray                 # (d_e,) unified query
    lam: float
    gt_labels: Optional[np.ndarray] = None  # (N,) 0/1 targets, hybrid mode only


@dataclass
class TrainState:
    model: FeatureModel
    velocity: dict[str, np.ndarray]
    epoch: int = 0
    loss_history: list[tuple[int, float, float, float]] = field(default_factory=list)


def init_model(
    embed_dim: int,
    feature_dim: int,
    hidden_widths: tuple[int, ...] = (64, 64),
    seed: int = 0,
) -> FeatureModel:
    """Seeded uniform init in +-1/sqrt(fan_in) for every tensor."""
    rng = np.random.default_rng(seed)
    widths = [6, *hidden_widths, feature_dim]
    params: dict[str, np.ndarray] = {}
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        params[f"w{i}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"b{i}"] = rng.uniform(-bound, bound, size=fan_out)
    bound = 1.0 / np.sqrt(embed_dim)
    params["wq"] = rng.uniform(-bound, bound, size=(feature_dim, embed_dim))
    return FeatureModel(
        params=params,
        hidden_widths=tuple(hidden_widths),
        embed_dim=embed_dim,
        feature_dim=feature_dim,
    )


def model_inputs(cloud: PointCloud) -> np.ndarray:
    """(N, 6) array of positions and colors; colors default to zeros."""
    n = len(cloud)
    out = np.zeros((n, 6))
    out[:, :3] = cloud.positions
    if cloud.colors is not None:
        out[:, 3:] = cloud.colors
    return out


def _forward_full(model: FeatureModel, x: np.ndarray):
    """Forward pass keeping hidden activations for backprop."""
    hidden = []
    h = x
    last = model.num_layers - 1
    for i in range(model.num_layers):
        z = h @ model.params[f"w{i}"].T + model.params[f"b{i}"]
        h = z if i == last else np.tanh(z)
        hidden.append(h)
    return hidden  # hidden[-1] is the (N, d) feature matrix


def forward_features(model: FeatureModel, points: np.ndarray) -> np.ndarray:
    """Per-point features for (N, 3) positions or (N, 6) position+color rows."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] not in (3, 6):
        raise ValueError(f"points must be (N, 3) or (N, 6), got {x.shape}")
    if x.shape[1] == 3:
        x = np.hstack([x, np.zeros_like(x)])
    return _forward_full(model, x)[-1]


def project_query(model: FeatureModel, q: np.ndarray) -> np.ndarray:
    """t = W q, the query mapped into feature space.

    Raises:
        DimensionMismatch: q length differs from W's input width.
    """
    q = np.asarray(q, dtype=np.float64)
    wq = model.params["wq"]
    if q.shape != (wq.shape[1],):
        raise DimensionMismatch(f"query dim {q.shape} != projection input {wq.shape[1]}")
    return wq @ q


def semantic_logits(features: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Raw per-point alignment logits s_p = f_p . t."""
    return np.asarray(features, dtype=np.float64) @ np.asarray(t, dtype=np.float64)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s, dtype=np.float64)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _bce(s: np.ndarray, target: np.ndarray) -> float:
    # softplus(s) - target * s == -[t log sig(s) + (1-t) log(1-sig(s))],
    # finite for any finite s.
    return float(np.mean(np.logaddexp(0.0, s) - target * s))


def loss_mms(s: np.ndarray, m_hat: np.ndarray) -> float:
    """Mean BCE between per-pair logits and sampled soft mask targets.

    Raises:
        EmptyPairSet: no pairs to average over.
    """
    s = np.asarray(s, dtype=np.float64)
    m_hat = np.asarray(m_hat, dtype=np.float64)
    if s.size == 0:
        raise EmptyPairSet("semantic alignment loss needs at least one pair")
    return _bce(s, m_hat)


def loss_spatial(f3d: np.ndarray, f2d: np.ndarray) -> float:
    """Mean (1 - cosine) between per-point features and sampled 2D features.

    Raises:
        NoFeaturePairs: empty input.
        ZeroVector: any vector norm below 1e-12 (cosine undefined).
    """
    a = np.asarray(f3d, dtype=np.float64)
    b = np.asarray(f2d, dtype=np.float64)
    if a.size == 0:
        raise NoFeaturePairs("spatial consistency loss needs feature-bearing pairs")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na < NORM_FLOOR) or np.any(nb < NORM_FLOOR):
        raise ZeroVector("cosine undefined for a near-zero vector")
    cos = np.clip(np.sum(a * b, axis=1) / (na * nb), -1.0, 1.0)
    return float(np.mean(1.0 - cos))


def total_loss(lmms: float, lspatial: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("lam must be >= 0")
    return lmms + lam * lspatial


def make_batch(
    scene: SceneBundle,
    corr: CorrespondenceSet,
    q: np.ndarray,
    lam: float,
    gt_mask: Optional[np.ndarray] = None,
) -> TrainBatch:
    """Assemble the full-batch training arrays for one scene."""
    gt = None
    if gt_mask is not None:
        gt = np.asarray(gt_mask).astype(np.float64)
    return TrainBatch(
        inputs=model_inputs(scene.cloud),
        pair_point=corr.point_index,
        pair_target=corr.logit,
        pair_feat=corr.features if corr.features is not None else np.zeros((len(corr), 0)),
        pair_has_feat=corr.has_feature,
        q=np.asarray(q, dtype=np.float64),
        lam=float(lam),
        gt_labels=gt,
    )


def evaluate_losses(model: FeatureModel, batch: TrainBatch):
    """(L_mms, L_spatial, L_objective) at the current parameters.

    L_objective is what `backward` differentiates: L_mms + lam * L_spatial,
    plus the ground-truth BCE over all points when the batch carries labels.
    The spatial term is 0 when no pair has a feature (there is nothing to
    average), matching the gradient path.
    """
    if batch.pair_point.size == 0:
        raise EmptyPairSet("training needs a non-empty correspondence set")
    feats = _forward_full(model, batch.inputs)[-1]
    t = project_query(model, batch.q)
    s_all = feats @ t
    lmms = _bce(s_all[batch.pair_point], batch.pair_target)

    hf = batch.pair_has_feat
    if hf.any():
        lsp = loss_spatial(feats[batch.pair_point[hf]], batch.pair_feat[hf])
    else:
        lsp = 0.0

    objective = lmms + batch.lam * lsp
    if batch.gt_labels is not None:
        objective += _bce(s_all, batch.gt_labels)
    return lmms, lsp, objective


def backward(model: FeatureModel, batch: TrainBatch) -> dict[str, np.ndarray]:
    """Analytic gradient of the training objective w.r.t. every parameter."""
    if batch.pair_point.size == 0:
        raise EmptyPairSet("training needs a non-empty correspondence set")
    hidden = _forward_full(model, batch.inputs)
    feats = hidden[-1]
    t = project_query(model, batch.q)
    s_all = feats @ t
    n_points = feats.shape[0]
    m = batch.pair_point.size

    # BCE path: dL/ds = sigma(s) - target, averaged over its own pair count.
    ds = np.zeros(n_points)
    pair_ds = (_sigmoid(s_all[batch.pair_point]) - batch.pair_target) / m
    np.add.at(ds, batch.pair_point, pair_ds)
    if batch.gt_labels is not None:
        ds += (_sigmoid(s_all) - batch.gt_labels) / n_points

    # s = F t splits into the feature path and the projection path.
    d_feats = ds[:, None] * t[None, :]
    d_t = feats.T @ ds
    grads: dict[str, np.ndarray] = {"wq": np.outer(d_t, batch.q)}

    hf = batch.pair_has_feat
    if batch.lam != 0.0 and hf.any():
        rows = batch.pair_point[hf]
        f = feats[rows]
        g = batch.pair_feat[hf]
        nf = np.linalg.norm(f, axis=1)
        ng = np.linalg.norm(g, axis=1)
        if np.any(nf < NORM_FLOOR) or np.any(ng < NORM_FLOOR):
            raise ZeroVector("cosine undefined for a near-zero vector")
        cos = np.sum(f * g, axis=1) / (nf * ng)
        # d(1 - cos)/df = -g/(|f||g|) + cos * f/|f|^2
        dcos = -g / (nf * ng)[:, None] + (cos / nf**2)[:, None] * f
        np.add.at(d_feats, rows, batch.lam * dcos / hf.sum())

    # Backprop d_feats through the MLP (final layer linear, rest tanh).
    delta = d_feats
    last = model.num_layers - 1
    for i in range(last, -1, -1):
        h_in = batch.inputs if i == 0 else hidden[i - 1]
        grads[f"w{i}"] = delta.T @ h_in
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.params[f"w{i}"]) * (1.0 - hidden[i - 1] ** 2)
    return grads


def init_state(model: FeatureModel) -> TrainState:
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    return TrainState(model=model, velocity=velocity)


def sgd_step(
    state: TrainState,
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float = MOMENTUM,
    weight_decay: float = WEIGHT_DECAY,
) -> TrainState:
    """v <- momentum v + g + decay * theta; theta <- theta - lr v.

    Decay is skipped for bias vectors (names starting with "b").
    """
    new_params: dict[str, np.ndarray] = {}
    new_vel: dict[str, np.ndarray] = {}
    for name, theta in state.model.params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {theta.shape}")
        decay = 0.0 if name.startswith("b") else weight_decay
        v = momentum * state.velocity[name] + g + decay * theta
        new_vel[name] = v
        new_params[name] = theta - lr * v
    model = FeatureModel(
        params=new_params,
        hidden_widths=state.model.hidden_widths,
        embed_dim=state.model.embed_dim,
        feature_dim=state.model.feature_dim,
    )
    return TrainState(
        model=model, velocity=new_vel, epoch=state.epoch + 1, loss_history=state.loss_history
    )


DEFAULT_LR = 0.05
DEFAULT_EPOCHS = 200


def train(
    scene: SceneBundle,
    fused,
    corr: CorrespondenceSet,
    q: np.ndarray,
    cfg: PipelineConfig,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    gt_mask: Optional[np.ndarray] = None,
) -> TrainState:
    """Full-batch training on one scene's correspondences.

    `fused` rides along for interface symmetry with the fusion stage; the
    alignment loss consumes the per-pair sampled targets in `corr` directly.
    Passing `gt_mask` switches on hybrid supervision: an extra BCE over all
    points with equal weight, folded into the recorded total.

    Raises:
        EmptyPairSet: `corr` is empty.
        NonFiniteLoss: a loss went NaN/inf, message names the epoch.
    """
    del fused
    batch = make_batch(scene, corr, q, cfg.lam, gt_mask=gt_mask)
    model = init_model(scene.embed_dim, scene.feature_dim, cfg.hidden_widths, seed=cfg.seed)
    state = init_state(model)
    for epoch in range(epochs):
        lmms, lsp, objective = evaluate_losses(state.model, batch)
        if not (np.isfinite(lmms) and np.isfinite(lsp) and np.isfinite(objective)):
            raise NonFiniteLoss(f"epoch {epoch}: loss diverged (total={objective})")
        state.loss_history.append((epoch, float(lmms), float(lsp), float(objective)))
        grads = backward(state.model, batch)
        state = sgd_step(state, grads, lr)
    return state
