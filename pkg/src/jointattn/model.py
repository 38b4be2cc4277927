"""Joint attention (squeeze + excitation over joints) and the Conv2D classifier.

Input sequences are ``T x C x J`` (or batched ``B x T x C x J``). The joint
axis is treated as the channel axis: attention yields one gate per joint,
the gated tensor is laid out as ``J x T x C`` and fed through five
``3 x 1`` convolutions that span every joint at once while sliding along
frames and coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as tf
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_joints: int = 16
    n_coords: int = 3
    n_classes: int = 2
    channels: tuple[int, ...] = (32, 32, 64, 64, 64)
    kernel: tuple[int, int] = (3, 1)
    padding: tuple[int, int] = (1, 0)
    stride: tuple[int, int] = (1, 1)
    reduction: int = 2
    attention: bool = True

    @property
    def hidden(self) -> int:
        return max(1, self.n_joints // self.reduction)

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            out.append(f"{f.name}={v}")
        return out

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            default = getattr(cls, f.name)
            if isinstance(default, bool):
                kwargs[f.name] = raw.strip().lower() in ("1", "true", "yes")
            elif isinstance(default, tuple):
                kwargs[f.name] = tuple(int(x) for x in raw.split(",") if x.strip())
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


@dataclass
class Network:
    """Configuration plus named parameter tensors in declaration order.

    Parameter tensors are immutable; training swaps in new ones.
    """

    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def with_params(self, arrays) -> "Network":
        new = {name: Tensor(a, requires_grad=True, name=name) for name, a in zip(self.params, arrays)}
        return Network(self.config, new)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.attention:
        shapes["attention.W1"] = (cfg.hidden, cfg.n_joints)
        shapes["attention.W2"] = (cfg.n_joints, cfg.hidden)
    cin = cfg.n_joints
    for i, cout in enumerate(cfg.channels, 1):
        shapes[f"conv{i}.kernel"] = (cout, cin) + tuple(cfg.kernel)
        shapes[f"conv{i}.bias"] = (cout,)
        cin = cout
    shapes["fc.weight"] = (cfg.n_classes, cin)
    shapes["fc.bias"] = (cfg.n_classes,)
    return shapes


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[1], shape[0]
    receptive = int(np.prod(shape[2:]))
    return shape[1] * receptive, shape[0] * receptive


def init_network(cfg: ModelConfig, rng: np.random.Generator | int = 0) -> Network:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith("bias"):
            arr = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return Network(cfg, params)


# ---------------------------------------------------------------------------
# attention


def squeeze(S: Tensor) -> Tensor:
    """Per-joint mean over frames and coordinates: ``T x C x J -> J``."""
    keep = (0,) if S.ndim == 4 else ()
    return tf.global_average_pool_per_channel(S, channel_axis=-1, keep_axes=keep)


def excite(z: Tensor, W1: Tensor, W2: Tensor) -> Tensor:
    """``sigmoid(W2 relu(W1 z))`` for ``z`` of shape ``J`` or ``B x J``."""
    single = z.ndim == 1
    zb = tf.reshape(z, (1, z.shape[0])) if single else z
    hidden = tf.relu(tf.matmul(zb, tf.transpose(W1)))
    a = tf.sigmoid(tf.matmul(hidden, tf.transpose(W2)))
    return tf.reshape(a, (a.shape[1],)) if single else a


def apply_attention(S: Tensor, A: Tensor) -> Tensor:
    """Scale each joint's whole trajectory by its attention value."""
    if A.shape[-1] != S.shape[-1]:
        raise ShapeError(f"attention length {A.shape[-1]} does not match {S.shape[-1]} joints")
    lead = (A.shape[0],) if A.ndim == 2 else ()
    return tf.mul(S, tf.reshape(A, lead + (1,) * (S.ndim - A.ndim) + (A.shape[-1],)))


# ---------------------------------------------------------------------------
# full forward pass


def forward(net: Network, S: Tensor) -> tuple[Tensor, Tensor | None]:
    """Class probabilities and per-joint attention.

    Returns ``(probs, A_z)``; ``A_z`` is ``None`` when attention is disabled.
    Batched inputs give ``B x n_classes`` and ``B x J`` outputs.
    """
    cfg = net.config
    single = S.ndim == 3
    if S.ndim not in (3, 4) or S.shape[-2:] != (cfg.n_coords, cfg.n_joints):
        raise ShapeError(
            f"input shape {S.shape} does not match configured (T, {cfg.n_coords}, {cfg.n_joints})"
        )
    x = tf.reshape(S, (1,) + S.shape) if single else S
    p = net.params
    attn = None
    if cfg.attention:
        attn = excite(squeeze(x), p["attention.W1"], p["attention.W2"])
        x = apply_attention(x, attn)
    h = tf.transpose(x, (0, 3, 1, 2))  # B x J x T x C
    pooled = _conv_packed(h, net) if _packable(cfg) else _conv_batched(h, net)
    logits = tf.add(tf.matmul(pooled, tf.transpose(p["fc.weight"])), tf.reshape(p["fc.bias"], (1, cfg.n_classes)))
    probs = tf.softmax(logits, axis=-1)
    if single:
        probs = tf.reshape(probs, (cfg.n_classes,))
        if attn is not None:
            attn = tf.reshape(attn, (cfg.n_joints,))
    return probs, attn


def _packable(cfg: ModelConfig) -> bool:
    return cfg.stride[0] == 1 and cfg.kernel[0] == 2 * cfg.padding[0] + 1


def _conv_batched(h: Tensor, net: Network) -> Tensor:
    cfg, p = net.config, net.params
    for i in range(1, len(cfg.channels) + 1):
        k = p[f"conv{i}.kernel"]
        h = tf.conv2d(h, k, stride=cfg.stride, padding=cfg.padding)
        h = tf.bias_relu(h, tf.reshape(p[f"conv{i}.bias"], (1, k.shape[0], 1, 1)))
    return tf.mean(h, axis=(2, 3))


def _conv_packed(h: Tensor, net: Network) -> Tensor:
    """Same result as :func:`_conv_batched` for "same"-length temporal kernels.

    The batch is laid end to end along the frame axis with ``pad`` zero rows
    around every sample, so each layer is a single unbatched convolution.
    Gap rows are re-zeroed after every layer.
    """
    cfg, p = net.config, net.params
    b, j, t, c = h.shape
    g = cfg.padding[0]
    span = t + 2 * g
    h = tf.pad(tf.transpose(h, (1, 0, 2, 3)), ((0, 0), (0, 0), (g, g), (0, 0)))
    h = tf.reshape(h, (j, b * span, c))
    mask = np.zeros((1, b, span, 1))
    mask[:, :, g : g + t] = 1.0
    mask = mask.reshape(1, b * span, 1)
    for i in range(1, len(cfg.channels) + 1):
        k = p[f"conv{i}.kernel"]
        h = tf.conv2d(h, k, stride=(1, cfg.stride[1]), padding=(g, cfg.padding[1]))
        h = tf.bias_relu(h, tf.reshape(p[f"conv{i}.bias"], (k.shape[0], 1, 1)), mask)
    cout, _, wo = h.shape
    h = tf.reshape(h, (cout, b, span, wo))
    pooled = tf.scale(tf.sum_(h, axis=(2, 3)), 1.0 / (t * wo))
    return tf.transpose(pooled)


def predict(net: Network, S: Tensor) -> int:
    """Argmax class; an exact tie resolves to class 0."""
    probs, _ = forward(net, S)
    return int(np.argmax(probs.data))


# ---------------------------------------------------------------------------
# serialization


def save_network(net: Network, path) -> None:
    lines = ["#network"] + net.config.to_lines()
    for name, t in net.params.items():
        lines.append(f"#param {name} " + " ".join(str(n) for n in t.shape))
        lines.append(" ".join(f"{v:.17g}" for v in t.data.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_network(path) -> Network:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "#network":
        raise ValueError(f"{path}: not a network file")
    kv = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("#param"):
        if lines[i].strip():
            key, _, val = lines[i].partition("=")
            kv[key.strip()] = val.strip()
        i += 1
    cfg = ModelConfig.from_mapping(kv)
    expected = parameter_shapes(cfg)
    params = {}
    while i < len(lines):
        head = lines[i].split()
        if len(head) < 2 or head[0] != "#param":
            raise ValueError(f"{path}:{i + 1}: expected '#param' line")
        name, shape = head[1], tuple(int(x) for x in head[2:])
        if expected.get(name) != shape:
            raise ValueError(f"{path}:{i + 1}: unexpected parameter {name} {shape}")
        values = [float(v) for v in lines[i + 1].split()] if i + 1 < len(lines) else []
        params[name] = Tensor(np.asarray(values).reshape(shape), requires_grad=True, name=name)
        i += 2
    if list(params) != list(expected):
        raise ValueError(f"{path}: parameter list does not match configuration")
    return Network(cfg, params)
