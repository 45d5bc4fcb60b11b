"""Generator, discriminator and loss terms of the colorization GAN.

The generator is a stack of stride-1 5x5 convolutions.  Every layer listed
in ``cond_layers`` receives the grayscale image as an extra input channel,
every layer in ``noise_layers`` receives noise planes derived from ``z``.
Hidden layers are conv -> batchnorm -> relu, the output layer is conv -> tanh.

The discriminator downsamples with stride-2 convolutions and ends in a dense
logit; losses are evaluated on logits for numerical stability.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .colorspace import gray_tensor, rgb_array, yuv_to_rgb_tensor
from .nn import BatchNorm, Conv2D, Dense, activation, batchnorm, conv2d, dense, init_layer
from .tensor import ShapeError, Tensor


class SpecError(ValueError):
    """A network spec violates its structural invariants."""


class SpecMismatchError(ValueError):
    """Input or checkpoint does not match the network's embedded spec."""


def _layer_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


@dataclass
class GeneratorSpec:
    size: int = 64
    widths: list[int] = field(default_factory=lambda: [64, 128, 256, 128, 64, 2])
    kernel: int = 5
    stride: int = 1
    noise_layers: list[int] = field(default_factory=lambda: [1, 2, 3])
    cond_layers: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    noise_channels: int = 1
    z_dim: int = 100
    noise_mode: str = "project"  # "project" | "tile"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    @property
    def num_layers(self) -> int:
        return len(self.widths)

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    @property
    def channels_per_noise_site(self) -> int:
        return self.z_dim if self.noise_mode == "tile" else self.noise_channels

    def input_channels(self, layer: int) -> int:
        """Channel count entering 1-based ``layer``."""
        prev = self.widths[layer - 2] if layer > 1 else 0
        cond = 1 if layer in self.cond_layers else 0
        noise = self.channels_per_noise_site if layer in self.noise_layers else 0
        return prev + cond + noise

    def validate(self) -> None:
        n = self.num_layers
        if n < 1:
            raise SpecError("generator needs at least one layer")
        if self.stride != 1:
            raise SpecError("generator convolutions must use stride 1")
        if self.out_channels not in (2, 3):
            raise SpecError(f"output channels must be 2 (YUV) or 3 (RGB), got {self.out_channels}")
        layers = set(range(1, n + 1))
        if not set(self.cond_layers) <= layers or not set(self.noise_layers) <= layers:
            raise SpecError(f"injection layers must lie in 1..{n}")
        if 1 not in self.cond_layers:
            raise SpecError("layer 1 must receive the grayscale condition")
        if not set(self.noise_layers) <= set(self.cond_layers):
            raise SpecError("noise layers must be a subset of condition layers")
        if self.noise_mode not in ("project", "tile"):
            raise SpecError(f"unknown noise mode {self.noise_mode!r}")
        if self.size < 1 or self.z_dim < 1 or self.noise_channels < 1:
            raise SpecError("size, z_dim and noise_channels must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DiscriminatorSpec:
    size: int = 64
    widths: list[int] = field(default_factory=lambda: [64, 128, 256, 512])
    kernels: list[int] = field(default_factory=lambda: [5, 5, 5, 3])
    stride: int = 2
    in_channels: int = 3
    conditional: bool = False
    leaky_slope: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def trail(self) -> list[int]:
        sizes, s = [], self.size
        for _ in self.widths:
            s = math.ceil(s / self.stride)
            sizes.append(s)
        return sizes

    @property
    def head_inputs(self) -> int:
        return self.trail()[-1] ** 2 * self.widths[-1]

    def validate(self) -> None:
        if len(self.widths) != len(self.kernels) or not self.widths:
            raise SpecError("discriminator widths and kernels must have equal, nonzero length")
        if self.stride != 2:
            raise SpecError("discriminator convolutions use stride 2")
        if self.in_channels != 3:
            raise SpecError("discriminator scores 3-channel RGB images")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

class Generator:
    def __init__(self, spec: GeneratorSpec, seed: int = 0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = dtype
        self.convs: list[Conv2D] = []
        self.bns: list[BatchNorm | None] = []
        self.projections: dict[int, Dense] = {}
        n = spec.num_layers
        for i in range(1, n + 1):
            conv = Conv2D(spec.input_channels(i), spec.widths[i - 1], spec.kernel, 1, dtype, name=f"g.conv{i}")
            init_layer(conv, _layer_seed(seed, 0, i))
            self.convs.append(conv)
            if i < n:
                self.bns.append(BatchNorm(spec.widths[i - 1], spec.bn_eps, spec.bn_momentum, dtype, name=f"g.bn{i}"))
            else:
                self.bns.append(None)
            if i in spec.noise_layers and spec.noise_mode == "project":
                proj = Dense(spec.z_dim, spec.size * spec.size * spec.noise_channels, dtype, name=f"g.noise{i}")
                init_layer(proj, _layer_seed(seed, 1, i))
                self.projections[i] = proj
        self.trace: list[tuple[int, tuple, tuple]] = []

    def layers(self):
        yield from self.convs
        yield from (b for b in self.bns if b is not None)
        yield from (self.projections[i] for i in sorted(self.projections))

    def parameters(self) -> dict[str, Tensor]:
        return {p.name: p for layer in self.layers() for p in layer.parameters()}

    def buffers(self) -> dict[str, Tensor]:
        return {b.name: b for layer in self.layers() for b in layer.buffers()}

    def noise_planes(self, layer: int, z: Tensor) -> Tensor:
        s, spec = self.spec.size, self.spec
        m = z.shape[0]
        if spec.noise_mode == "tile":
            return Tensor(np.broadcast_to(z.data[:, None, None, :], (m, s, s, spec.z_dim)), dtype=z.dtype)
        return T.reshape(dense(z, self.projections[layer]), (m, s, s, spec.noise_channels))

    def __call__(self, y: Tensor, z: Tensor, bn_mode: str = "train") -> Tensor:
        return generator_forward(self, y, z, bn_mode)


def build_generator(spec: GeneratorSpec, seed: int = 0, dtype=np.float32) -> Generator:
    return Generator(spec, seed, dtype)


def generator_forward(net: Generator, y: Tensor, z: Tensor, bn_mode: str = "train") -> Tensor:
    """Map grayscale ``y`` [m,s,s,1] and noise ``z`` [m,s_z] to tanh-bounded channels."""
    spec = net.spec
    y, z = T.as_tensor(y), T.as_tensor(z)
    if y.ndim != 4 or y.shape[-1] != 1:
        raise ShapeError(f"grayscale input must be [m,s,s,1], got {y.shape}")
    if y.shape[1] != spec.size or y.shape[2] != spec.size:
        raise SpecMismatchError(f"generator built for {spec.size}x{spec.size} inputs, got {y.shape[1]}x{y.shape[2]}")
    if z.ndim != 2 or z.shape != (y.shape[0], spec.z_dim):
        raise ShapeError(f"noise must be [{y.shape[0]},{spec.z_dim}], got {z.shape}")
    net.trace = []
    feats = None
    n = spec.num_layers
    for i in range(1, n + 1):
        parts = [] if feats is None else [feats]
        if i in spec.cond_layers:
            parts.append(y)
        if i in spec.noise_layers:
            parts.append(net.noise_planes(i, z))
        x = T.concat_channels(parts)
        h = conv2d(x, net.convs[i - 1])
        if i < n:
            h = T.relu(batchnorm(h, net.bns[i - 1], bn_mode))
        else:
            h = T.tanh(h)
        net.trace.append((i, x.shape, h.shape))
        feats = h
    return feats


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------

class Discriminator:
    def __init__(self, spec: DiscriminatorSpec, seed: int = 0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = dtype
        self.convs: list[Conv2D] = []
        self.bns: list[BatchNorm | None] = []
        c_in = spec.in_channels + (1 if spec.conditional else 0)
        for i, (w, k) in enumerate(zip(spec.widths, spec.kernels), start=1):
            conv = Conv2D(c_in, w, k, spec.stride, dtype, name=f"d.conv{i}")
            init_layer(conv, _layer_seed(seed, 2, i))
            self.convs.append(conv)
            self.bns.append(None if i == 1 else BatchNorm(w, spec.bn_eps, spec.bn_momentum, dtype, name=f"d.bn{i}"))
            c_in = w
        self.head = Dense(spec.head_inputs, 1, dtype, name="d.head")
        init_layer(self.head, _layer_seed(seed, 3, 0))
        self.trace: list[tuple[int, tuple, tuple]] = []

    def layers(self):
        yield from self.convs
        yield from (b for b in self.bns if b is not None)
        yield self.head

    def parameters(self) -> dict[str, Tensor]:
        return {p.name: p for layer in self.layers() for p in layer.parameters()}

    def buffers(self) -> dict[str, Tensor]:
        return {b.name: b for layer in self.layers() for b in layer.buffers()}

    def __call__(self, x: Tensor, y: Tensor | None = None, bn_mode: str = "train") -> Tensor:
        return discriminator_forward(self, x, y, bn_mode)


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0, dtype=np.float32) -> Discriminator:
    return Discriminator(spec, seed, dtype)


def discriminator_logits(net: Discriminator, x: Tensor, y: Tensor | None = None,
                         bn_mode: str = "train") -> Tensor:
    spec = net.spec
    x = T.as_tensor(x)
    if x.ndim != 4 or x.shape[-1] != spec.in_channels:
        raise ShapeError(f"discriminator input must be [m,s,s,{spec.in_channels}], got {x.shape}")
    if x.shape[1] != spec.size or x.shape[2] != spec.size:
        raise SpecMismatchError(f"discriminator built for {spec.size}x{spec.size} inputs, got {x.shape[1]}x{x.shape[2]}")
    if spec.conditional:
        if y is None:
            raise ShapeError("conditional discriminator needs the grayscale image")
        x = T.concat_channels([x, T.as_tensor(y)])
    net.trace = []
    h = x
    for i, (conv, bn) in enumerate(zip(net.convs, net.bns), start=1):
        inp = h.shape
        h = conv2d(h, conv)
        if bn is not None:
            h = batchnorm(h, bn, bn_mode)
        h = activation("leaky_relu", h, spec.leaky_slope)
        net.trace.append((i, inp, h.shape))
    flat = T.reshape(h, (h.shape[0], -1))
    return dense(flat, net.head)


def discriminator_forward(net: Discriminator, x: Tensor, y: Tensor | None = None,
                          bn_mode: str = "train") -> Tensor:
    """Probability [m,1] that each image is real."""
    return T.sigmoid(discriminator_logits(net, x, y, bn_mode))


# ---------------------------------------------------------------------------
# color assembly
# ---------------------------------------------------------------------------

def assemble_color(y: np.ndarray, g_out: np.ndarray, mode: str = "YUV") -> np.ndarray:
    """Display-range RGB from grayscale [...,1] and generator output.

    YUV mode stacks (y, U, V) and converts back to RGB, pulling out-of-gamut
    pixels toward gray so the luma of the result still equals ``y``.  RGB
    mode maps the tanh output from [-1, 1] to [0, 1].
    """
    y = np.asarray(y, dtype=np.float64)
    g_out = np.asarray(g_out, dtype=np.float64)
    if y.shape[:-1] != g_out.shape[:-1] or y.shape[-1] != 1:
        raise ShapeError(f"grayscale {y.shape} and generator output {g_out.shape} do not align")
    if mode == "YUV":
        if g_out.shape[-1] != 2:
            raise ShapeError(f"YUV mode expects 2 chroma channels, got {g_out.shape[-1]}")
        return rgb_array(np.concatenate([y, g_out], axis=-1), gamut="desaturate")
    if mode == "RGB":
        if g_out.shape[-1] != 3:
            raise ShapeError(f"RGB mode expects 3 channels, got {g_out.shape[-1]}")
        return (g_out + 1) / 2
    raise ValueError(f"unknown mode {mode!r}")


def fake_to_model_rgb(y: Tensor, g_out: Tensor, mode: str) -> Tensor:
    """Differentiable model-range RGB ([-1, 1]) seen by the discriminator."""
    if mode == "YUV":
        rgb = yuv_to_rgb_tensor(y, g_out)
        return T.add(T.scale(rgb, 2.0), Tensor(np.array(-1.0, dtype=rgb.dtype)))
    if mode == "RGB":
        return g_out
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_discriminator(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """-(1/m) sum[log D(x) + log(1 - D(G(y, z)))], evaluated from logits."""
    real = T.mean(T.softplus(T.scale(real_logits, -1.0)))
    fake = T.mean(T.softplus(fake_logits))
    return T.add(real, fake)


def loss_generator(fake_logits: Tensor, variant: str = "nonsaturating") -> Tensor:
    """``saturating``: (1/m) sum log(1 - D(G)); ``nonsaturating``: -(1/m) sum log D(G)."""
    if variant == "saturating":
        return T.scale(T.mean(T.softplus(fake_logits)), -1.0)
    if variant == "nonsaturating":
        return T.mean(T.softplus(T.scale(fake_logits, -1.0)))
    raise ValueError(f"unknown generator loss variant {variant!r}")


def loss_l1_gray(y: Tensor, g_rgb: Tensor, mode: str = "RGB") -> Tensor:
    """Mean absolute luma error between ``y`` and display-range RGB ``g_rgb``."""
    if mode != "RGB":
        raise ValueError("the grayscale L1 term applies to RGB mode only")
    if g_rgb.shape[:-1] != y.shape[:-1] or g_rgb.shape[-1] != 3:
        raise ShapeError(f"shapes {y.shape} and {g_rgb.shape} do not align")
    return T.mean(T.absolute(T.sub(y, gray_tensor(g_rgb))))


def combined_generator_objective(loss_g: Tensor, loss_l1: Tensor | None, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if loss_l1 is None or lam == 0:
        return loss_g
    return T.add(loss_g, T.scale(loss_l1, lam))

