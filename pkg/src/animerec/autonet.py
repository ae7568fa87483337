"""Dense feed-forward autoencoder for rating prediction.

Encodes a length-n rating row into a d-dimensional bottleneck and decodes it
back, training on a reconstruction loss that can ignore unrated (zero) cells.
Everything is plain numpy so gradients stay inspectable and deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

ACTIVATIONS = ("selu", "relu", "elu", "tanh", "none")

# a pooled batch loss beyond this is treated as divergence even while it is
# still technically finite (relu saturation can freeze an exploded run
# before the float range overflows)
LOSS_DIVERGENCE_CAP = 1e30


class AutonetError(Exception):
    pass


class TrainingDiverged(AutonetError):
    """Raised when the training loss becomes NaN/Inf or blows past the cap."""


def activation_apply(kind: str, x):
    """Apply an activation elementwise. Works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "selu":
        # expm1 is evaluated on min(x, 0) so the discarded branch cannot
        # overflow for large positive preactivations
        return SELU_LAMBDA * np.where(
            x >= 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "elu":
        return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "none":
        return x
    raise AutonetError(f"unknown activation {kind!r}")


def activation_grad(kind: str, x):
    """Derivative of the activation w.r.t. its pre-activation input."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "selu":
        return SELU_LAMBDA * np.where(
            x >= 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    if kind == "relu":
        return np.where(x > 0, 1.0, 0.0)
    if kind == "elu":
        return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "none":
        return np.ones_like(x)
    raise AutonetError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise AutonetError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise AutonetError(f"unknown activation {self.activation!r}")


@dataclass
class AutoencoderModel:
    layers: list[LayerSpec]
    weights: list[np.ndarray]  # per layer, shape (output_dim, input_dim)
    biases: list[np.ndarray]   # per layer, shape (output_dim,)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.output_dim != b.input_dim:
                raise AutonetError("layer dims do not chain")
        if self.layers[0].input_dim != self.layers[-1].output_dim:
            raise AutonetError("autoencoder must map n -> n")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def bottleneck_index(self) -> int:
        widths = [l.output_dim for l in self.layers]
        return int(np.argmin(widths))

    @property
    def bottleneck_dim(self) -> int:
        return self.layers[self.bottleneck_index].output_dim

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel(
            layers=list(self.layers),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.01
    batch_size: int = 32
    seed: int = 0
    hidden_activation: str = "selu"
    final_activation: str = "relu"   # "relu" or "none"
    loss_masking: str = "masked"     # "masked" or "unmasked"
    refeed: bool = False
    optimizer: str = "sgd"           # "sgd" or "adam"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.0             # hook; off by default
    hidden_dims: tuple = (512, 128)
    bottleneck_dim: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise AutonetError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise AutonetError("learning_rate must be > 0")
        if self.loss_masking not in ("masked", "unmasked"):
            raise AutonetError("loss_masking must be 'masked' or 'unmasked'")
        if self.final_activation not in ("relu", "none"):
            raise AutonetError("final_activation must be 'relu' or 'none'")

    def layer_dims(self, n: int) -> list[int]:
        """Full width sequence n -> hidden -> d -> reversed hidden -> n."""
        return [n, *self.hidden_dims, self.bottleneck_dim,
                *reversed(self.hidden_dims), n]


def build_model(layer_dims, hidden_activation="selu", final_activation="relu",
                seed=0, final_bias=0.0) -> AutoencoderModel:
    """Glorot-uniform initialised autoencoder over the given width sequence.

    final_bias seeds the last layer's bias vector. With a relu output on
    rating-scale targets a small positive value here keeps output units from
    starting (and dying) in the flat region; hidden biases stay at zero.
    """
    if layer_dims[0] != layer_dims[-1]:
        raise AutonetError("autoencoder must map n -> n")
    rng = np.random.default_rng(seed)
    layers, weights, biases = [], [], []
    n_layers = len(layer_dims) - 1
    for k in range(n_layers):
        fan_in, fan_out = layer_dims[k], layer_dims[k + 1]
        act = final_activation if k == n_layers - 1 else hidden_activation
        layers.append(LayerSpec(fan_in, fan_out, act))
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.full(fan_out, final_bias if k == n_layers - 1
                              else 0.0))
    return AutoencoderModel(layers, weights, biases)


def _forward_cached(model: AutoencoderModel, X: np.ndarray, drop_masks=None):
    """Forward pass for a batch, keeping pre-activations for backprop.

    drop_masks, when given, holds one multiplicative mask (or None) per layer;
    training uses it for inverted dropout on hidden activations.
    """
    acts = [X]
    pres = []
    for k, (spec, W, b) in enumerate(zip(model.layers, model.weights,
                                         model.biases)):
        Z = acts[-1] @ W.T + b
        pres.append(Z)
        A = activation_apply(spec.activation, Z)
        if drop_masks is not None and drop_masks[k] is not None:
            A = A * drop_masks[k]
        acts.append(A)
    return acts, pres


def forward(model: AutoencoderModel, x):
    """Run one input vector through the network.

    Returns (output, bottleneck) where bottleneck holds the activations of
    the narrowest layer.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise AutonetError(
            f"input length {x.shape} does not match model dim {model.input_dim}")
    acts, _ = _forward_cached(model, x[None, :])
    return acts[-1][0], acts[model.bottleneck_index + 1][0]


def forward_batch(model: AutoencoderModel, X):
    """Forward pass over rows of X. Returns (outputs, bottlenecks)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise AutonetError("batch shape does not match model input dim")
    acts, _ = _forward_cached(model, X)
    return acts[-1], acts[model.bottleneck_index + 1]


def masked_mse(actual, predicted) -> float:
    """Mean squared error over the cells where the actual rating is nonzero."""
    r = np.asarray(actual, dtype=np.float64)
    y = np.asarray(predicted, dtype=np.float64)
    if r.shape != y.shape:
        raise AutonetError("actual/predicted length mismatch")
    mask = r != 0
    denom = int(mask.sum())
    if denom == 0:
        raise AutonetError("masked loss undefined: every actual entry is zero")
    diff = (r - y)[mask]
    return float(np.dot(diff, diff) / denom)


def masked_rmse(actual, predicted) -> float:
    return float(np.sqrt(masked_mse(actual, predicted)))


def unmasked_mse(actual, predicted) -> float:
    """Plain mean squared error over every cell; zeros count as targets."""
    r = np.asarray(actual, dtype=np.float64)
    y = np.asarray(predicted, dtype=np.float64)
    if r.shape != y.shape:
        raise AutonetError("actual/predicted length mismatch")
    if r.size == 0:
        raise AutonetError("empty vectors")
    diff = (r - y).ravel()
    return float(np.dot(diff, diff) / diff.size)


def _loss_and_output_grad(R, Y, masking):
    """Pooled batch loss and dL/dY.

    Masked: sum of squared errors over nonzero-target cells divided by the
    number of such cells. Unmasked: mean over all cells. Returns
    (loss, grad, n_terms); n_terms == 0 means the batch carries no signal.
    """
    if masking == "masked":
        mask = (R != 0).astype(np.float64)
        denom = mask.sum()
        if denom == 0:
            return 0.0, np.zeros_like(Y), 0
        diff = mask * (R - Y)
        loss = float(np.sum(diff * diff) / denom)
        grad = -2.0 * diff / denom
        return loss, grad, int(denom)
    diff = R - Y
    denom = R.size
    loss = float(np.sum(diff * diff) / denom)
    grad = -2.0 * diff / denom
    return loss, grad, denom


def loss_gradients(model: AutoencoderModel, X, R, masking="masked",
                   drop_masks=None):
    """Analytic gradients of the pooled batch loss w.r.t. weights and biases.

    Returns (loss, grads_W, grads_b, n_terms).
    """
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    acts, pres = _forward_cached(model, X, drop_masks)
    loss, dY, n_terms = _loss_and_output_grad(R, acts[-1], masking)
    grads_W = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for k in range(len(model.layers) - 1, -1, -1):
        delta = dY * activation_grad(model.layers[k].activation, pres[k])
        if drop_masks is not None and drop_masks[k] is not None:
            delta = delta * drop_masks[k]
        grads_W[k] = delta.T @ acts[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            dY = delta @ model.weights[k]
    return loss, grads_W, grads_b, n_terms


class _Optimizer:
    """SGD with momentum, or Adam, over the model's parameter list."""

    def __init__(self, model, config):
        self.kind = config.optimizer
        self.lr = config.learning_rate
        self.momentum = config.momentum
        self.b1, self.b2, self.eps = (config.adam_beta1, config.adam_beta2,
                                      config.adam_eps)
        shapes = [w for w in model.weights] + [b for b in model.biases]
        self.vel = [np.zeros_like(p) for p in shapes]
        self.m = [np.zeros_like(p) for p in shapes]
        self.v = [np.zeros_like(p) for p in shapes]
        self.t = 0
        if self.kind not in ("sgd", "adam"):
            raise AutonetError(f"unknown optimizer {self.kind!r}")

    def step(self, model, grads_W, grads_b):
        params = model.weights + model.biases
        grads = grads_W + grads_b
        if self.kind == "sgd":
            for p, g, v in zip(params, grads, self.vel):
                v *= self.momentum
                v -= self.lr * g
                p += v
            return
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train(model: AutoencoderModel, rows, config: TrainConfig,
          eval_hook=None):
    """Mini-batch gradient descent reconstructing the given rows.

    Each row is both input and target. With masked loss, gradients only flow
    through cells whose target is nonzero. With refeed on, every batch takes a
    second step on its own dense first-pass output. Returns (model, history)
    where history holds one pooled training loss per epoch. An eval_hook
    callable (epoch, model) runs after every epoch, e.g. to track a
    validation metric.
    """
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise AutonetError("training rows do not match model input dim")
    rng = np.random.default_rng(config.seed)
    opt = _Optimizer(model, config)
    n = X.shape[0]
    history = []
    n_layers = len(model.layers)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sq_sum = 0.0
        term_sum = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            masks = None
            if config.dropout > 0:
                # inverted dropout on hidden layers only
                keep = 1.0 - config.dropout
                masks = [
                    (rng.random((len(idx), l.output_dim)) < keep) / keep
                    if k < n_layers - 1 else None
                    for k, l in enumerate(model.layers)
                ]
            loss, gW, gb, n_terms = loss_gradients(
                model, X[idx], X[idx], config.loss_masking, masks)
            if not np.isfinite(loss) or loss > LOSS_DIVERGENCE_CAP:
                raise TrainingDiverged(
                    f"loss {loss:.3e} diverged at epoch {epoch}, batch "
                    f"{start // config.batch_size}")
            if n_terms > 0:
                sq_sum += loss * n_terms
                term_sum += n_terms
                opt.step(model, gW, gb)
            if config.refeed:
                dense, _ = forward_batch(model, X[idx])
                _, gW2, gb2, n2 = loss_gradients(
                    model, dense, dense, config.loss_masking)
                if n2 > 0:
                    opt.step(model, gW2, gb2)
        if term_sum == 0:
            raise AutonetError("no unmasked training signal in any batch")
        epoch_loss = sq_sum / term_sum
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(f"epoch {epoch} loss is non-finite")
        history.append(epoch_loss)
        if eval_hook is not None:
            eval_hook(epoch, model)
    for w in model.weights + model.biases:
        if not np.all(np.isfinite(w)):
            raise TrainingDiverged("non-finite weights after training")
    return model, history


def predict_ratings(model: AutoencoderModel, user_row):
    """Forward pass with predictions clamped into the [0, 10] rating range."""
    out, _ = forward(model, user_row)
    return np.clip(out, 0.0, 10.0)


# --- checkpoint persistence -------------------------------------------------
# Manifest (JSON) describes shape/activations/metadata; the binary block is
# little-endian float32: all weight matrices in layer order (row-major), then
# all bias vectors in layer order.

def checkpoint_manifest(model: AutoencoderModel, meta: dict | None = None) -> dict:
    return {
        "format": "animerec-autonet-v1",
        "layer_dims": [model.layers[0].input_dim]
                      + [l.output_dim for l in model.layers],
        "activations": [l.activation for l in model.layers],
        "meta": dict(meta or {}),
    }


def weights_to_bytes(model: AutoencoderModel) -> bytes:
    parts = [np.ascontiguousarray(w, dtype="<f4").tobytes() for w in model.weights]
    parts += [np.ascontiguousarray(b, dtype="<f4").tobytes() for b in model.biases]
    return b"".join(parts)


def save_checkpoint(model, manifest_path, weights_path, meta=None):
    manifest = checkpoint_manifest(model, meta)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(weights_path, "wb") as fh:
        fh.write(weights_to_bytes(model))


def model_from_bytes(manifest: dict, blob: bytes) -> AutoencoderModel:
    dims = manifest["layer_dims"]
    activations = manifest["activations"]
    layers = [LayerSpec(dims[k], dims[k + 1], activations[k])
              for k in range(len(activations))]
    n_w = sum(l.input_dim * l.output_dim for l in layers)
    n_b = sum(l.output_dim for l in layers)
    flat = np.frombuffer(blob, dtype="<f4")
    if flat.size != n_w + n_b:
        raise AutonetError(
            f"checkpoint holds {flat.size} floats, expected {n_w + n_b}")
    weights, biases = [], []
    off = 0
    for l in layers:
        cnt = l.output_dim * l.input_dim
        weights.append(flat[off:off + cnt].astype(np.float64)
                       .reshape(l.output_dim, l.input_dim))
        off += cnt
    for l in layers:
        biases.append(flat[off:off + l.output_dim].astype(np.float64))
        off += l.output_dim
    return AutoencoderModel(layers, weights, biases)


def load_checkpoint(manifest_path, weights_path):
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "animerec-autonet-v1":
        raise AutonetError("unrecognized checkpoint manifest format")
    with open(weights_path, "rb") as fh:
        blob = fh.read()
    return model_from_bytes(manifest, blob), manifest
