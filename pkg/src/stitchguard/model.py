"""ResNet-34 embedding network, pooling and two-layer classifier.

Input chunks are ``(batch, frames, feature_dim)``. The ResNet treats them
as one-channel images (time x frequency), averages out the frequency axis
after the last stage and hands ``(batch, frames', channels)`` to the
pooling layer. The classifier is ``FC1 -> mish -> FC2 -> mish -> output``.

Stitched inference skips FC2 and its activation, feeding ``mish(FC1(.))``
straight into the output layer.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, IoFailure, ShapeMismatch, StitchedTrainForbidden, VersionMismatch
from .nn.layers import BatchNorm, Conv2d, Dense, Identity, Mish, Module, ReLU, Sequential, Softmax
from .pooling import PoolingConfig, build_pooling

NORMAL = "normal"
STITCHED = "stitched"
STITCH_MODES = (NORMAL, STITCHED)

CHECKPOINT_MAGIC = b"STGD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    block_counts: tuple[int, ...] = (3, 4, 6, 3)
    channel_widths: tuple[int, ...] = (64, 128, 256, 512)
    pooling: PoolingConfig = field(default_factory=PoolingConfig)
    fc1_dim: int = 256
    fc2_dim: int = 256
    num_classes: int = 2
    # test-only: (1 x 3) kernels and no time stride, so frames never mix
    frame_independent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "block_counts", tuple(int(b) for b in self.block_counts))
        object.__setattr__(self, "channel_widths", tuple(int(c) for c in self.channel_widths))
        if len(self.block_counts) != 4 or len(self.channel_widths) != 4:
            raise InvalidConfig("ResNet needs four stages")
        if min(self.block_counts) < 1 or min(self.channel_widths) < 1:
            raise InvalidConfig("block counts and widths must be positive")
        if self.fc1_dim != self.fc2_dim:
            raise InvalidConfig(
                f"fc1_dim ({self.fc1_dim}) must equal fc2_dim ({self.fc2_dim}) for stitched inference")
        if self.fc1_dim < 1:
            raise InvalidConfig("fc dims must be positive")
        if self.num_classes != 2:
            raise InvalidConfig("only binary bona fide / fake classification is supported")
        if self.pooling.input_dim != self.channel_widths[-1]:
            object.__setattr__(self, "pooling", replace(self.pooling, input_dim=self.channel_widths[-1]))


def desk_config(pooling: str = "MH", **overrides) -> ModelConfig:
    """Narrow ResNet-34 for CPU-scale experiments and tests."""
    pool_cfg = PoolingConfig(kind=pooling, input_dim=64, heads=4, dict_size=8, attention_hidden=16)
    return ModelConfig(channel_widths=(8, 16, 32, 64), pooling=pool_cfg, fc1_dim=32, fc2_dim=32, **overrides)


class BasicBlock(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, frame_independent: bool,
                 rng: np.random.Generator):
        super().__init__()
        kernel = (1, 3) if frame_independent else (3, 3)
        s = (1, stride) if frame_independent else (stride, stride)
        self.conv1 = Conv2d(in_ch, out_ch, kernel, s, rng=rng)
        self.bn1 = BatchNorm(out_ch)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, kernel, (1, 1), rng=rng)
        self.bn2 = BatchNorm(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Sequential(Conv2d(in_ch, out_ch, (1, 1), s, padding=(0, 0), rng=rng), BatchNorm(out_ch))
        else:
            self.shortcut = Identity()
        self.relu_out = ReLU()

    def forward(self, x, train=False):
        y = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, train), train))
        y = self.bn2.forward(self.conv2.forward(y, train), train)
        return self.relu_out.forward(y + self.shortcut.forward(x, train))

    def backward(self, grad):
        g = self.relu_out.backward(grad)
        g_main = self.conv1.backward(self.bn1.backward(self.relu1.backward(
            self.conv2.backward(self.bn2.backward(g)))))
        return g_main + self.shortcut.backward(g)


class ResNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        kernel = (1, 3) if cfg.frame_independent else (3, 3)
        w0 = cfg.channel_widths[0]
        self.stem = Sequential(Conv2d(1, w0, kernel, (1, 1), rng=rng), BatchNorm(w0), ReLU())
        blocks = []
        in_ch = w0
        for stage, (count, width) in enumerate(zip(cfg.block_counts, cfg.channel_widths)):
            for i in range(count):
                stride = 2 if stage > 0 and i == 0 else 1
                blocks.append(BasicBlock(in_ch, width, stride, cfg.frame_independent, rng))
                in_ch = width
        self.body = Sequential(*blocks)

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ShapeMismatch(f"expected (batch, frames, dim) chunks, got {x.shape}")
        y = self.body.forward(self.stem.forward(x[..., None], train), train)
        self._cache = y.shape
        return y.mean(axis=2)

    def backward(self, grad):
        shape = self._cached()
        g = np.broadcast_to(grad[:, :, None, :] / shape[2], shape)
        return self.stem.backward(self.body.backward(g))[..., 0]


class Model(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.resnet = ResNet(cfg, rng)
        self.pooling = build_pooling(cfg.pooling, rng)
        self.fc1 = Dense(cfg.pooling.output_dim, cfg.fc1_dim, rng)
        self.act1 = Mish()
        self.fc2 = Dense(cfg.fc1_dim, cfg.fc2_dim, rng)
        self.act2 = Mish()
        self.out = Dense(cfg.fc2_dim, cfg.num_classes, rng)
        self.softmax = Softmax()
        self.metadata: dict[str, str] = {}

    @property
    def dtype(self):
        return self.out.params["weight"].dtype

    def children(self):
        names = ("resnet", "pooling", "fc1", "act1", "fc2", "act2", "out", "softmax")
        return [(n, getattr(self, n)) for n in names]

    def embed(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        return self.pooling.forward(self.resnet.forward(x, train), train)

    def forward(self, x, mode: str = NORMAL, train: bool = False) -> np.ndarray:
        """Return ``(batch, 2)`` class probabilities; column 1 is *fake*."""
        if mode not in STITCH_MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if train and mode == STITCHED:
            raise StitchedTrainForbidden("stitched mode is inference-only")
        h = self.act1.forward(self.fc1.forward(self.embed(x, train)))
        if mode == NORMAL:
            h = self.act2.forward(self.fc2.forward(h))
        probs = self.softmax.forward(self.out.forward(h))
        self._cache = mode
        return probs

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Backpropagate a gradient taken with respect to the output logits."""
        mode = self._cached()
        g = self.out.backward(grad_logits)
        if mode == NORMAL:
            g = self.fc2.backward(self.act2.backward(g))
        g = self.fc1.backward(self.act1.backward(g))
        return self.resnet.backward(self.pooling.backward(g))


def build(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(cfg, np.random.default_rng(seed)).astype(dtype)


def forward(model: Model, chunk: np.ndarray, mode: str = NORMAL, train: bool = False) -> np.ndarray:
    """Probabilities for a single ``frames x dim`` chunk."""
    return model.forward(np.asarray(chunk)[None], mode, train)[0]


def embed(model: Model, chunk: np.ndarray) -> np.ndarray:
    return model.embed(np.asarray(chunk)[None])[0]


# -- checkpoints ------------------------------------------------------------

def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    raw = name.encode()
    dims = value.shape
    head = struct.pack(f"<I{len(raw)}sI{len(dims)}I", len(raw), raw, len(dims), *dims)
    return head + np.ascontiguousarray(value, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise IoFailure(f"{self.path}: checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def save(model: Model, path, metadata: dict[str, str] | None = None) -> None:
    """Write a ``.stgd`` checkpoint (parameters stored as float32)."""
    from .config import config_to_kv, format_kv

    kv = config_to_kv(model.cfg)
    meta = {**model.metadata, **(metadata or {})}
    kv.update({k if "." in k else f"meta.{k}": str(v) for k, v in meta.items()})
    text = format_kv(kv).encode()
    state = model.state_dict()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(text)), text,
             struct.pack("<I", len(state))]
    parts += [_pack_tensor(name, state[name]) for name in sorted(state)]
    body = b"".join(parts)
    try:
        Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Return the config key/value table and the tensor table."""
    from .config import parse_kv

    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    r = _Reader(blob, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise IoFailure(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(blob) < 4 or zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise IoFailure(f"{path}: checksum mismatch (truncated or corrupt)")
    kv = parse_kv(r.take(r.u32()).decode())
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    return kv, tensors


def load(path, cfg: ModelConfig | None = None) -> Model:
    """Load a checkpoint. With ``cfg`` the tensors are loaded into a model
    built from that config instead of the stored one (shapes must agree)."""
    from .config import model_config_from_kv

    kv, tensors = read_checkpoint(path)
    if cfg is None:
        cfg = model_config_from_kv(kv)
    model = build(cfg)
    model.load_state_dict(tensors)
    model.metadata = {k: v for k, v in kv.items() if not k.startswith(("model.", "pooling."))}
    return model


def grad_check_model(model: Model, x: np.ndarray, labels: np.ndarray, focal=None, epsilon: float = 1e-5,
                     max_entries: int | None = None, seed: int = 0, report: dict | None = None) -> float:
    """Finite-difference check of the whole network under focal loss in
    train phase, normal mode. Casts ``model`` to float64 in place."""
    from .nn.gradcheck import grad_check
    from .nn.losses import FocalLossConfig, focal_loss

    focal = focal or FocalLossConfig()
    model.astype(np.float64)
    x = np.array(x, dtype=np.float64, copy=True)

    def loss_and_grads(with_grads):
        probs = model.forward(x, NORMAL, train=True)
        loss, g = focal_loss(probs, labels, focal)
        if not with_grads:
            return loss, None
        dx = model.backward(g)
        grads = dict(model.gradients())
        grads["<input>"] = dx
        return loss, grads

    arrays = dict(model.parameters())
    arrays["<input>"] = x
    return grad_check(loss_and_grads, arrays, epsilon, max_entries, np.random.default_rng(seed), report)
