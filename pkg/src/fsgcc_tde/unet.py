"""Convolutional U-Net denoiser for FS-GCC magnitudes, with training and file I/O.

Layout for encoder filters E (k layers) and decoder filters D (k + 1 layers):

* encoder: k convs, stride 2, kernel (10, 5), each followed by BN + ReLU;
* bottleneck: conv D[0], stride 1, BN + ReLU (no upsampling in front);
* decoder j = 1..k-1: upsample x2, conv D[j], BN + ReLU, then concatenate
  the output of encoder layer k-j (decoder features first);
* output: upsample x2, 1x1 conv to D[k] = 1 channel, ReLU, no BN.

With E = (8, 16, 32, 64) and D = (64, 32, 16, 8, 1) the skips join the
encoder outputs of layers i, ii, iii to decoder layers viii, vii, vi.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn

log = logging.getLogger(__name__)

PUBLISHED_PARAMETER_COUNT = 301_097
MAGIC = b"FSGCCUNET1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    encoder_filters: tuple = (8, 16, 32, 64)
    decoder_filters: tuple = (64, 32, 16, 8, 1)
    kernel: tuple = (10, 5)

    def __post_init__(self):
        object.__setattr__(self, "encoder_filters", tuple(self.encoder_filters))
        object.__setattr__(self, "decoder_filters", tuple(self.decoder_filters))
        object.__setattr__(self, "kernel", tuple(self.kernel))
        if len(self.decoder_filters) != len(self.encoder_filters) + 1:
            raise ValueError("need exactly one more decoder layer than encoder layers")
        if self.decoder_filters[-1] != 1:
            raise ValueError("the output layer must have a single filter")

    @property
    def depth(self) -> int:
        return len(self.encoder_filters)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 17
    early_stop_patience: int = 10
    lr_halving_patience: int = 3
    validation_fraction: float = 0.2
    batch_size: int = 16
    seed: int = 0
    mirror_lags: bool = True  # random lag reversal, i.e. swapping the two microphones

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for batch normalisation")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _layer_specs(arch: Architecture):
    """(name, in_ch, out_ch, kernel, stride, batchnorm) for every conv, in order."""
    e, d, k = arch.encoder_filters, arch.decoder_filters, arch.kernel
    specs, ch = [], 1
    for i, f in enumerate(e):
        specs.append((f"conv{i + 1}", ch, f, k, (2, 2), True))
        ch = f
    depth = arch.depth
    specs.append((f"conv{depth + 1}", ch, d[0], k, (1, 1), True))
    ch = d[0]
    for j in range(1, depth):
        specs.append((f"conv{depth + 1 + j}", ch, d[j], k, (1, 1), True))
        ch = d[j] + e[depth - 1 - j]
    specs.append((f"conv{2 * depth + 1}", ch, d[-1], (1, 1), (1, 1), False))
    return specs


@dataclass
class UNetModel:
    arch: Architecture = field(default_factory=Architecture)
    params: dict = field(default_factory=dict)  # trainable arrays, declaration order
    bn: dict = field(default_factory=dict)  # name -> BatchNormParams
    training: bool = True
    train_fingerprint: str = ""

    @classmethod
    def create(cls, arch: Architecture | None = None, seed: int = 0) -> "UNetModel":
        """He-uniform kernels, zero biases, identity batch norm."""
        arch = arch or Architecture()
        rng = np.random.default_rng(seed)
        model = cls(arch)
        for name, cin, cout, (kh, kw), _, has_bn in _layer_specs(arch):
            bound = np.sqrt(6.0 / (cin * kh * kw))
            model.params[f"{name}.w"] = rng.uniform(-bound, bound, (cout, cin, kh, kw))
            model.params[f"{name}.b"] = np.zeros(cout)
            if has_bn:
                bn = nn.BatchNormParams.fresh(cout)
                model.bn[name] = bn
                model.params[f"{name}.gamma"] = bn.gamma
                model.params[f"{name}.beta"] = bn.beta
        return model

    def train_mode(self):
        self.training = True
        return self

    def eval_mode(self):
        self.training = False
        return self

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _conv(self, name: str, stride) -> nn.ConvLayerParams:
        return nn.ConvLayerParams(self.params[f"{name}.w"], self.params[f"{name}.b"], stride)

    def _bn(self, name: str) -> nn.BatchNormParams:
        bn = self.bn[name]
        bn.gamma = self.params[f"{name}.gamma"]
        bn.beta = self.params[f"{name}.beta"]
        return bn

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (batch, 1, H, W) input, got {x.shape}")
        h, w = x.shape[2:]
        for size in (h, w):
            if size < 2 ** self.arch.depth or size & (size - 1):
                raise ValueError(f"spatial size {size} must be a power of two >= {2 ** self.arch.depth}")

    def forward(self, x: np.ndarray):
        """Returns (output, tape); the tape feeds ``backward``."""
        self.check_input(x)
        tape = []
        skips = []
        specs = _layer_specs(self.arch)
        depth = self.arch.depth
        h = np.asarray(x, dtype=np.float64)
        for idx, (name, _, cout, _, stride, has_bn) in enumerate(specs):
            upsample = idx > depth
            if upsample:
                h = nn.upsample_nearest_2x(h)
            z, conv_cache = nn.conv2d_forward(h, self._conv(name, stride))
            bn_cache = None
            if has_bn:
                z, bn_cache = nn.batchnorm_forward(z, self._bn(name), self.training)
            a = nn.relu(z)
            tape.append((name, upsample, conv_cache, bn_cache, z, None))
            h = a
            if idx < depth:
                skips.append(a)
            elif depth < idx < 2 * depth:
                skip = skips[2 * depth - 1 - idx]
                tape[-1] = tape[-1][:5] + (a.shape[1],)
                h = nn.concat_channels(a, skip)
        return h, tape

    def backward(self, dout: np.ndarray, tape) -> dict:
        if not self.training:
            raise RuntimeError("backward requires training mode")
        depth = self.arch.depth
        grads = {}
        dskips = [None] * depth
        g = dout
        for idx in range(len(tape) - 1, -1, -1):
            name, upsample, conv_cache, bn_cache, z, concat_split = tape[idx]
            if concat_split is not None:
                g, dskip = nn.concat_backward(g, concat_split)
                dskips[2 * depth - 1 - idx] = dskip
            if idx < depth and dskips[idx] is not None:
                g = g + dskips[idx]
            g = nn.relu_backward(g, z)
            if bn_cache is not None:
                g, grads[f"{name}.gamma"], grads[f"{name}.beta"] = nn.batchnorm_backward(g, bn_cache)
            g, grads[f"{name}.w"], grads[f"{name}.b"] = nn.conv2d_backward(g, conv_cache)
            if upsample:
                g = nn.upsample_backward(g)
        return {k: grads[k] for k in self.params}

    def copy(self) -> "UNetModel":
        return copy.deepcopy(self)


def unet_forward(model: UNetModel, x: np.ndarray) -> np.ndarray:
    return model.forward(x)[0]


def unet_backward(model: UNetModel, x: np.ndarray, target: np.ndarray):
    """Gradients of the MSE loss w.r.t. every trainable array. Returns (loss, grads)."""
    if not model.training:
        raise RuntimeError("unet_backward requires a model in training mode")
    pred, tape = model.forward(x)
    loss = nn.mse_loss(pred, target)
    return loss, model.backward(nn.mse_grad(pred, target), tape)


def normalize_max(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale each (H, W) matrix by its own maximum. Returns (scaled, scales)."""
    m = np.asarray(mats, dtype=np.float64)
    scale = m.max(axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    return m / scale, scale


def denoise(model: UNetModel, magnitudes: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Apply the network to one (L, W) or a stack (n, L, W) of magnitude matrices."""
    mags = np.asarray(magnitudes, dtype=np.float64)
    single = mags.ndim == 2
    if single:
        mags = mags[None]
    scaled, scale = normalize_max(mags)
    was_training = model.training
    model.eval_mode()
    out = np.empty_like(scaled)
    for i in range(0, len(scaled), batch_size):
        out[i:i + batch_size] = unet_forward(model, scaled[i:i + batch_size, None])[:, 0]
    model.training = was_training
    out *= scale
    return out[0] if single else out


def mirror_lags(mats: np.ndarray) -> np.ndarray:
    """Reverse the lag axis about the zero-lag column W/2.

    Swapping the microphones conjugates the PHAT spectrum, which mirrors
    every sub-band GCC magnitude in lag. Column 0 (lag -W/2) has no partner
    inside the crop and stays put.
    """
    return np.roll(mats[..., ::-1], 1, axis=-1)


def split_indices(n: int, validation_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * validation_fraction)))
    if n - n_val < 2:
        raise ValueError("dataset too small for a train/validation split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _batches(idx: np.ndarray, batch_size: int):
    out = [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def evaluate_loss(model: UNetModel, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> float:
    model.eval_mode()
    total = 0.0
    for i in range(0, len(x), batch_size):
        pred = unet_forward(model, x[i:i + batch_size])
        total += float(np.sum((pred - y[i:i + batch_size]) ** 2))
    return total / y.size


def train(model: UNetModel, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig = TrainConfig(),
          progress=None):
    """Adam training with plateau LR halving and early stopping on validation loss.

    ``inputs``/``targets`` are (n, L, W) magnitude stacks; each matrix is
    scaled by its own maximum first. Returns the best-validation snapshot
    and a per-epoch history of dicts (epoch, train_loss, val_loss, lr).
    """
    if len(inputs) == 0:
        raise ValueError("empty training set")
    if inputs.shape != targets.shape:
        raise ValueError("inputs and targets differ in shape")
    x = normalize_max(inputs)[0][:, None]
    y = normalize_max(targets)[0][:, None]
    tr, va = split_indices(len(x), config.validation_fraction, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    opt = nn.AdamState(config.learning_rate, config.beta1, config.beta2, config.eps)

    best, best_loss = model.copy(), np.inf
    since_best = since_lr = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        model.train_mode()
        order = rng.permutation(tr)
        seen, acc = 0, 0.0
        for batch in _batches(order, config.batch_size):
            xb, yb = x[batch], y[batch]
            if config.mirror_lags:
                flip = rng.random(len(batch)) < 0.5
                xb, yb = xb.copy(), yb.copy()
                xb[flip] = mirror_lags(xb[flip])
                yb[flip] = mirror_lags(yb[flip])
            loss, grads = unet_backward(model, xb, yb)
            nn.adam_step(model.params, grads, opt)
            acc += loss * len(batch)
            seen += len(batch)
        train_loss = acc / seen
        val_loss = evaluate_loss(model, x[va], y[va])
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": opt.lr})
        if progress:
            progress(history[-1])
        log.info("epoch %d train %.6g val %.6g lr %.3g", epoch, train_loss, val_loss, opt.lr)
        if val_loss < best_loss:
            best, best_loss = model.copy(), val_loss
            since_best = since_lr = 0
        else:
            since_best += 1
            since_lr += 1
            if since_best >= config.early_stop_patience:
                log.info("early stop after %d epochs without improvement", since_best)
                break
            if since_lr >= config.lr_halving_patience:
                opt.lr *= 0.5
                since_lr = 0
    best.train_fingerprint = config.fingerprint()
    best.eval_mode()
    return best, history


def _blocks(model: UNetModel):
    """Every stored array in declaration order: trainables, then running stats."""
    out = list(model.params.items())
    for name, bn in model.bn.items():
        out.append((f"{name}.running_mean", bn.running_mean))
        out.append((f"{name}.running_var", bn.running_var))
    return out


def save_model(model: UNetModel, path) -> None:
    blocks = _blocks(model)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": asdict(model.arch),
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
        "train_fingerprint": model.train_fingerprint,
        "parameter_count": model.parameter_count(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class ModelFileError(ValueError):
    pass


def load_model(path, expected_arch: Architecture | None = None) -> UNetModel:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ModelFileError("not a U-Net model file (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise ModelFileError("truncated header")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos:pos + hlen])
    except ValueError as exc:
        raise ModelFileError(f"unreadable header: {exc}") from None
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format version {header.get('format_version')}")
    arch = Architecture(**header["architecture"])
    if expected_arch is not None and arch != expected_arch:
        raise ModelFileError(f"architecture mismatch: file has {arch}")
    model = UNetModel.create(arch)
    expected = {name: tuple(arr.shape) for name, arr in _blocks(model)}
    declared = [(name, tuple(shape)) for name, shape in header["blocks"]]
    if [n for n, _ in declared] != list(expected) or any(expected[n] != s for n, s in declared):
        raise ModelFileError("block layout does not match the architecture")
    need = sum(int(np.prod(s)) for _, s in declared) * 8
    if len(data) - pos != need:
        raise ModelFileError(f"payload is {len(data) - pos} bytes, expected {need}")
    for name, shape in declared:
        size = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += size * 8
        layer, _, field_name = name.rpartition(".")
        if field_name in ("running_mean", "running_var"):
            setattr(model.bn[layer], field_name, arr)
        else:
            model.params[name] = arr
    for name in model.bn:
        model._bn(name)
    model.train_fingerprint = header.get("train_fingerprint", "")
    model.eval_mode()
    return model
