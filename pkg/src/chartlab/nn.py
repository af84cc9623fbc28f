"""From-scratch MLP machinery: Glorot init, ReLU nets, backprop, Adam, losses.

Models are plain NumPy parameter lists; hidden layers are ReLU, the final
layer is linear.  The ReLU and hinge subgradients at exactly zero are
defined as zero.  Batch losses are averaged (not summed) so learning rates
do not depend on batch size.  Everything is float64 and deterministic given
the seeds.

Checkpoint format (version 1), little-endian:

    magic    4 bytes  b"CLMW"
    version  u32      1
    n_widths u32
    widths   n_widths x u32
    per layer, in order: weights (fan_in x fan_out f64, C order), bias (f64)

Optimizer state is not persisted; a loaded model starts with fresh moments.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_CKPT_MAGIC = b"CLMW"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths, input first, output last; >= 2 entries."""

    layer_widths: tuple[int, ...]

    def validate(self):
        if len(self.layer_widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"non-positive layer width in {self.layer_widths}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning rate and epsilon must be positive")


@dataclass
class MlpModel:
    """Weights, biases, and Adam moments for one MLP."""

    spec: MlpSpec
    weights: list        # per layer, (fan_in, fan_out)
    biases: list         # per layer, (fan_out,)
    m_w: list = field(repr=False, default=None)
    v_w: list = field(repr=False, default=None)
    m_b: list = field(repr=False, default=None)
    v_b: list = field(repr=False, default=None)
    step: int = 0
    seed: int = 0
    version: int = 0     # bumped on every update; guards stale caches

    def __post_init__(self):
        if self.m_w is None:
            self.m_w = [np.zeros_like(w) for w in self.weights]
            self.v_w = [np.zeros_like(w) for w in self.weights]
            self.m_b = [np.zeros_like(b) for b in self.biases]
            self.v_b = [np.zeros_like(b) for b in self.biases]

    @property
    def in_width(self) -> int:
        return self.spec.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.spec.layer_widths[-1]


@dataclass
class ForwardCache:
    model: MlpModel
    model_version: int
    inputs: list    # input to each layer, (n, fan_in)
    preacts: list   # pre-activation of each layer, (n, fan_out)
    squeeze: bool   # input arrived as a single vector


def glorot_init(spec: MlpSpec, seed: int) -> MlpModel:
    """Uniform Glorot weights in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(spec=spec, weights=weights, biases=biases, seed=seed)


def forward(model: MlpModel, x, want_cache: bool = False):
    """Run the net on a batch (n, in) or a single vector (in,).

    With ``want_cache=True`` returns ``(output, cache)`` for ``backward``.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.in_width:
        raise ValueError(f"input width {x.shape} does not match model width {model.in_width}")
    inputs, preacts = [], []
    h = x
    last = model.spec.n_layers - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = z if layer == last else np.maximum(z, 0.0)
    out = h[0] if squeeze else h
    if want_cache:
        return out, ForwardCache(model, model.version, inputs, preacts, squeeze)
    return out


def backward(model: MlpModel, cache: ForwardCache, grad_out):
    """Exact gradients for the cached forward pass.

    Returns ``(grads_w, grads_b, grad_input)`` where the parameter gradients
    mirror the model's layer lists.
    """
    if cache.model is not model or cache.model_version != model.version:
        raise ValueError("stale forward cache: model was updated after the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ValueError(f"grad shape {g.shape} does not match output {cache.preacts[-1].shape}")
    grads_w = [None] * model.spec.n_layers
    grads_b = [None] * model.spec.n_layers
    for layer in range(model.spec.n_layers - 1, -1, -1):
        grads_w[layer] = cache.inputs[layer].T @ g
        grads_b[layer] = g.sum(axis=0)
        g = g @ model.weights[layer].T
        if layer > 0:
            g = g * (cache.preacts[layer - 1] > 0.0)
    return grads_w, grads_b, (g[0] if cache.squeeze else g)


def adam_step(model: MlpModel, grads_w, grads_b, config: AdamConfig) -> None:
    """Bias-corrected Adam update, in place."""
    for gw, w in zip(grads_w, model.weights):
        if gw.shape != w.shape:
            raise ValueError(f"gradient shape {gw.shape} does not match weights {w.shape}")
    model.step += 1
    model.version += 1
    t = model.step
    b1, b2 = config.beta1, config.beta2
    lr = config.learning_rate
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for params, grads, ms, vs in ((model.weights, grads_w, model.m_w, model.v_w),
                                  (model.biases, grads_b, model.m_b, model.v_b)):
        for p, g, m, v in zip(params, grads, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + config.epsilon)


# --- losses ------------------------------------------------------------------

def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _safe_unit(diff, dist):
    """Row-wise diff/dist with the zero-distance direction defined as 0."""
    out = np.zeros_like(diff)
    nz = dist > 0.0
    out[nz] = diff[nz] / dist[nz, None]
    return out


def triplet_loss(v_n, v_c, v_f, margin: float):
    """Hinge triplet loss averaged over the batch, plus its gradients.

    loss_i = max(||v_n - v_c|| - ||v_n - v_f|| + margin, 0); the hinge
    derivative at zero is 0, as is the distance gradient at zero distance.
    Returns ``(loss, (g_n, g_c, g_f))``.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    v_n, squeeze = _rows(v_n)
    v_c, _ = _rows(v_c)
    v_f, _ = _rows(v_f)
    if v_n.shape != v_c.shape or v_n.shape != v_f.shape:
        raise ValueError("triplet embeddings must share one shape")
    n = v_n.shape[0]
    diff_c = v_n - v_c
    diff_f = v_n - v_f
    d_c = np.linalg.norm(diff_c, axis=1)
    d_f = np.linalg.norm(diff_f, axis=1)
    slack = d_c - d_f + margin
    active = slack > 0.0
    loss = float(np.sum(np.where(active, slack, 0.0)) / n)
    u_c = _safe_unit(diff_c, d_c)
    u_f = _safe_unit(diff_f, d_f)
    scale = active[:, None] / n
    g_n = scale * (u_c - u_f)
    g_c = -scale * u_c
    g_f = scale * u_f
    if squeeze:
        g_n, g_c, g_f = g_n[0], g_c[0], g_f[0]
    return loss, (g_n, g_c, g_f)


def mse_loss(predicted, target):
    """Mean over the batch of squared Euclidean error; gradient w.r.t. predictions."""
    pred, squeeze = _rows(predicted)
    tgt, _ = _rows(target)
    if pred.shape != tgt.shape:
        raise ValueError("prediction and target shapes differ")
    n = pred.shape[0]
    diff = pred - tgt
    loss = float(np.sum(diff * diff) / n)
    grad = 2.0 * diff / n
    return loss, (grad[0] if squeeze else grad)


def siamese_loss(predicted, embeddings, pairs, eps: float = 1e-8, gamma=None,
                 ref_distances=None):
    """Distance-matching loss between chart points and embeddings.

    For each pair (i, j): gamma_ij * (||x_i - x_j|| - ||v_i - v_j||)^2 with
    gamma_ij = 1 / (||x_i - x_j|| + eps) treated as a constant, summed over
    the pairs and divided by the number of samples (not pairs).  Gradients
    flow only into the predicted points.

    ``gamma`` overrides the per-pair weights; finite-difference checks pass
    the base-point weights here so they difference the same frozen-gamma
    function the analytic gradient belongs to.  ``ref_distances`` supplies
    the per-pair embedding distances when the caller has them precomputed
    (they are constants, and recomputing them per step dominates runtime
    for high-dimensional references).
    """
    x = np.asarray(predicted, dtype=np.float64)
    i_idx, j_idx = (np.asarray(p, dtype=np.intp) for p in pairs)
    if i_idx.size == 0:
        raise ValueError("siamese loss needs at least one pair")
    n = x.shape[0]
    dx = x[i_idx] - x[j_idx]
    d_hat = np.linalg.norm(dx, axis=1)
    if ref_distances is None:
        v = np.asarray(embeddings, dtype=np.float64)
        if x.shape[0] != v.shape[0]:
            raise ValueError("predicted and embedding sample counts differ")
        d_emb = np.linalg.norm(v[i_idx] - v[j_idx], axis=1)
    else:
        d_emb = np.asarray(ref_distances, dtype=np.float64)
    if gamma is None:
        gamma = 1.0 / (d_hat + eps)
    resid = d_hat - d_emb
    loss = float(np.sum(gamma * resid * resid) / n)
    # d loss / d d_hat per pair (gamma is stop-gradient), then chain into points
    coeff = (2.0 * gamma * resid / n)[:, None] * _safe_unit(dx, d_hat)
    grad = np.zeros_like(x)
    for dim in range(x.shape[1]):
        grad[:, dim] += np.bincount(i_idx, weights=coeff[:, dim], minlength=n)
        grad[:, dim] -= np.bincount(j_idx, weights=coeff[:, dim], minlength=n)
    return loss, grad


def ae_loss(original, reconstruction):
    """Mean squared reconstruction error; gradient w.r.t. the reconstruction."""
    orig, squeeze = _rows(original)
    recon, _ = _rows(reconstruction)
    if orig.shape != recon.shape:
        raise ValueError("original and reconstruction shapes differ")
    n = orig.shape[0]
    diff = recon - orig
    loss = float(np.sum(diff * diff) / n)
    grad = 2.0 * diff / n
    return loss, (grad[0] if squeeze else grad)


# --- checkpoints -------------------------------------------------------------

def save_model(model: MlpModel, path) -> None:
    path = Path(path)
    widths = model.spec.layer_widths
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _CKPT_MAGIC, _CKPT_VERSION, len(widths)))
        fh.write(struct.pack(f"<{len(widths)}I", *widths))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    raw = Path(path).read_bytes()
    magic, version, n_widths = struct.unpack_from("<4sII", raw)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    widths = struct.unpack_from(f"<{n_widths}I", raw, off)
    off += 4 * n_widths
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(raw, "<f8", count=fan_in * fan_out, offset=off) \
            .reshape(fan_in, fan_out).copy()
        off += 8 * fan_in * fan_out
        b = np.frombuffer(raw, "<f8", count=fan_out, offset=off).copy()
        off += 8 * fan_out
        weights.append(w)
        biases.append(b)
    return MlpModel(spec=MlpSpec(tuple(int(w) for w in widths)),
                    weights=weights, biases=biases)
