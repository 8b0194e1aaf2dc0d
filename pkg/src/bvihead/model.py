"""Three-layer classification heads in three variants.

A head maps feature vectors to class log-probabilities through exactly
three dense layers (F -> H1 -> H2 -> K) with ReLU between them. The
variant decides the layer family: plain deterministic (with training-time
dropout), MC dropout (dropout also active at inference), or stochastic
variational layers whose weights carry mean-field Gaussian posteriors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dist import DiagonalGaussian, PriorSpec
from .errors import ConfigError, NumericError, ShapeError
from .fsio import atomic_write_text
from .layers import (
    DETERMINISTIC_INFERENCE,
    ESTIMATORS,
    FLIPOUT,
    MC_INFERENCE,
    DenseDeterministic,
    DenseVariational,
    DropoutSpec,
    dense_forward,
    draw_layer_noise,
    dropout_forward,
    variational_forward_flipout,
    variational_forward_reparam,
    zero_layer_noise,
)
from .tensor import Tensor

DETERMINISTIC = "deterministic"
MC_DROPOUT = "mc-dropout"
STOCHASTIC_VI = "stochastic-vi"
VARIANTS = (DETERMINISTIC, MC_DROPOUT, STOCHASTIC_VI)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class HeadConfig:
    input_dim: int
    hidden_dims: tuple[int, int]
    num_classes: int
    variant: str
    dropout_rate: float = 0.2
    estimator: str = FLIPOUT

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if len(self.hidden_dims) != 2:
            raise ConfigError(f"expected exactly two hidden dims, got {self.hidden_dims}")
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(int(d) <= 0 for d in dims):
            raise ConfigError(f"all layer dims must be positive, got {dims}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        return [(dims[i], dims[i + 1]) for i in range(3)]


@dataclass
class Head:
    config: HeadConfig
    layers: list = field(default_factory=list)
    dropout: DropoutSpec | None = None

    def parameters(self) -> list[Tensor]:
        """All leaf parameter tensors, in a fixed order."""
        params = []
        for layer in self.layers:
            if isinstance(layer, DenseDeterministic):
                params.extend([layer.weight, layer.bias])
            else:
                params.extend(
                    [
                        layer.weight_post.mu,
                        layer.weight_post.rho,
                        layer.bias_post.mu,
                        layer.bias_post.rho,
                    ]
                )
        return params


def _he_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / d_in)
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def build_head(cfg: HeadConfig, init_seed: int) -> Head:
    """Deterministically initialise a head from its config and seed.

    Weights (or posterior means) use fan-in scaled uniform draws, biases
    start at zero, and variational scales start at rho = -3 so the
    posterior is born narrow.
    """
    rng = np.random.default_rng(init_seed)
    layers = []
    for d_in, d_out in cfg.layer_dims:
        w = _he_uniform(rng, d_in, d_out)
        if cfg.variant == STOCHASTIC_VI:
            layers.append(
                DenseVariational(
                    weight_post=DiagonalGaussian(
                        Tensor(w), Tensor(np.full((d_in, d_out), -3.0))
                    ),
                    bias_post=DiagonalGaussian(
                        Tensor(np.zeros(d_out)), Tensor(np.full(d_out, -3.0))
                    ),
                    estimator=cfg.estimator,
                    prior=PriorSpec(),
                )
            )
        else:
            layers.append(
                DenseDeterministic(Tensor(w), Tensor(np.zeros(d_out)))
            )
    dropout = None
    if cfg.variant in (DETERMINISTIC, MC_DROPOUT):
        dropout = DropoutSpec(
            cfg.dropout_rate, mc_at_inference=cfg.variant == MC_DROPOUT
        )
    return Head(config=cfg, layers=layers, dropout=dropout)


# ---- noise bundles --------------------------------------------------------


def draw_noise_bundle(head: Head, m: int, rng: np.random.Generator) -> list:
    """One entry per layer: NoiseDraw for variational layers, dropout mask
    noise for the two hidden activations of dropout variants, None otherwise."""
    bundle = []
    for i, layer in enumerate(head.layers):
        if isinstance(layer, DenseVariational):
            bundle.append(draw_layer_noise(layer, m, rng))
        elif i < 2 and head.dropout is not None and head.dropout.rate > 0:
            d_out = layer.weight.shape[1]
            bundle.append(rng.uniform(size=(m, d_out)))
        else:
            bundle.append(None)
    return bundle


def zero_noise_bundle(head: Head, m: int) -> list:
    """Zero-noise bundle: VI layers collapse to posterior means, no dropout."""
    bundle = []
    for layer in head.layers:
        if isinstance(layer, DenseVariational):
            bundle.append(zero_layer_noise(layer, m))
        else:
            bundle.append(None)
    return bundle


def forward(head: Head, x: Tensor, noise: list, phase: str) -> tuple[Tensor, Tensor]:
    """Batched forward pass returning (log_probs, total KL).

    KL is zero for non-variational variants. Any non-finite intermediate
    raises NumericError naming the offending layer.
    """
    if len(x.shape) != 2 or x.shape[1] != head.config.input_dim:
        raise ShapeError(
            f"input {x.shape} does not match head input dim {head.config.input_dim}"
        )
    if len(noise) != len(head.layers):
        raise ConfigError(
            f"noise bundle has {len(noise)} entries for {len(head.layers)} layers"
        )
    kl_total: Tensor | None = None
    h = x
    for i, layer in enumerate(head.layers):
        if isinstance(layer, DenseVariational) and noise[i] is None:
            raise ConfigError(f"layer {i}: variational layer needs a noise draw")
        try:
            if isinstance(layer, DenseVariational):
                if layer.estimator == FLIPOUT:
                    h, kl = variational_forward_flipout(layer, h, noise[i])
                else:
                    h, kl = variational_forward_reparam(layer, h, noise[i])
                kl_total = kl if kl_total is None else kl_total + kl
            else:
                h = dense_forward(layer, h)
            if i < 2:
                h = h.relu()
                if head.dropout is not None:
                    drop_phase = phase
                    if phase == MC_INFERENCE and not head.dropout.mc_at_inference:
                        drop_phase = DETERMINISTIC_INFERENCE
                    h = dropout_forward(head.dropout, h, noise[i], drop_phase)
        except NumericError as exc:
            raise NumericError(f"layer {i}: {exc}") from exc
    log_probs = h.log_softmax()
    if kl_total is None:
        kl_total = Tensor(0.0)
    return log_probs, kl_total


def inference_phase(head: Head) -> str:
    """The phase mc_predict should use for this head's variant."""
    if head.config.variant == DETERMINISTIC:
        return DETERMINISTIC_INFERENCE
    return MC_INFERENCE


# ---- checkpoint serialization ----------------------------------------------


def _encode_array(arr: np.ndarray) -> list[str]:
    return [repr(float(v)) for v in arr.reshape(-1)]


def _decode_array(values: list[str], shape: tuple[int, ...]) -> np.ndarray:
    arr = np.array([float(v) for v in values], dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise ConfigError(
            f"checkpoint array has {arr.size} values, expected shape {shape}"
        )
    return arr.reshape(shape)


def head_to_dict(head: Head) -> dict:
    cfg = head.config
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": {
            "input_dim": cfg.input_dim,
            "hidden_dims": list(cfg.hidden_dims),
            "num_classes": cfg.num_classes,
            "variant": cfg.variant,
            "dropout_rate": cfg.dropout_rate,
            "estimator": cfg.estimator,
        },
        "layers": [],
    }
    for layer in head.layers:
        if isinstance(layer, DenseDeterministic):
            doc["layers"].append(
                {
                    "kind": "deterministic",
                    "weight": _encode_array(layer.weight.data),
                    "bias": _encode_array(layer.bias.data),
                }
            )
        else:
            doc["layers"].append(
                {
                    "kind": "variational",
                    "weight_mu": _encode_array(layer.weight_post.mu.data),
                    "weight_rho": _encode_array(layer.weight_post.rho.data),
                    "bias_mu": _encode_array(layer.bias_post.mu.data),
                    "bias_rho": _encode_array(layer.bias_post.rho.data),
                }
            )
    return doc


def head_from_dict(doc: dict) -> Head:
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r}"
        )
    c = doc["config"]
    cfg = HeadConfig(
        input_dim=int(c["input_dim"]),
        hidden_dims=tuple(int(h) for h in c["hidden_dims"]),
        num_classes=int(c["num_classes"]),
        variant=c["variant"],
        dropout_rate=float(c["dropout_rate"]),
        estimator=c["estimator"],
    )
    head = build_head(cfg, init_seed=0)
    if len(doc["layers"]) != 3:
        raise ConfigError(f"checkpoint has {len(doc['layers'])} layers, expected 3")
    for layer, entry, (d_in, d_out) in zip(head.layers, doc["layers"], cfg.layer_dims):
        if isinstance(layer, DenseDeterministic):
            if entry["kind"] != "deterministic":
                raise ConfigError("checkpoint layer kind does not match variant")
            layer.weight.data = _decode_array(entry["weight"], (d_in, d_out))
            layer.bias.data = _decode_array(entry["bias"], (d_out,))
        else:
            if entry["kind"] != "variational":
                raise ConfigError("checkpoint layer kind does not match variant")
            layer.weight_post.mu.data = _decode_array(entry["weight_mu"], (d_in, d_out))
            layer.weight_post.rho.data = _decode_array(entry["weight_rho"], (d_in, d_out))
            layer.bias_post.mu.data = _decode_array(entry["bias_mu"], (d_out,))
            layer.bias_post.rho.data = _decode_array(entry["bias_rho"], (d_out,))
    return head


def save_head(head: Head, path) -> None:
    atomic_write_text(path, json.dumps(head_to_dict(head), indent=1, sort_keys=True))


def load_head(path) -> Head:
    with open(path, "r", encoding="utf-8") as fh:
        return head_from_dict(json.load(fh))
