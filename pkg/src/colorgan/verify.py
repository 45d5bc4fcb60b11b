"""Finite-difference verification suite over every differentiable op."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .colorspace import gray_tensor, yuv_to_rgb_tensor
from .gradcheck import GradCheckReport, grad_check
from .models import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    combined_generator_objective,
    discriminator_logits,
    fake_to_model_rgb,
    generator_forward,
    loss_discriminator,
    loss_generator,
    loss_l1_gray,
)
from .nn import BatchNorm, Conv2D, Dense, batchnorm, conv2d, dense, init_layer
from .tensor import Tensor

F64 = np.float64


def _t(rng, shape, name, low=None):
    data = rng.normal(size=shape)
    if low is not None:
        # keep clear of kinks / domain edges
        data = np.sign(data) * (np.abs(data) + low)
    return Tensor(data, requires_grad=True, dtype=F64, name=name)


def _project(fn: Callable[[], Tensor], shape, rng) -> Callable[[], Tensor]:
    """Scalarize ``fn`` with a fixed random weighting so gradients stay O(1)."""
    w = Tensor(rng.normal(size=shape), dtype=F64)
    return lambda: T.tensor_sum(T.mul(fn(), w))


def op_cases(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], list[Tensor], float]]:
    """(name, scalar function, inputs, tolerance) for each differentiable op."""
    rng = np.random.default_rng(seed)
    cases = []

    def add_case(name, fn, inputs, shape=None, tol=1e-4):
        if shape is not None:
            fn = _project(fn, shape, rng)
        cases.append((name, fn, inputs, tol))

    a, b = _t(rng, (4, 4), "a"), _t(rng, (4, 4), "b")
    add_case("add", lambda: T.add(a, b), [a, b], (4, 4))
    add_case("sub", lambda: T.sub(a, b), [a, b], (4, 4))
    add_case("mul", lambda: T.mul(a, b), [a, b], (4, 4))
    c = _t(rng, (4, 1), "c")
    add_case("mul_broadcast", lambda: T.mul(a, c), [a, c], (4, 4))
    add_case("scale", lambda: T.scale(a, -2.5), [a], (4, 4))
    pos = Tensor(rng.uniform(0.5, 2.0, (4, 4)), requires_grad=True, dtype=F64, name="pos")
    add_case("log", lambda: T.log(pos), [pos], (4, 4))
    add_case("exp", lambda: T.exp(a), [a], (4, 4))
    add_case("tanh", lambda: T.tanh(a), [a], (4, 4))
    add_case("sigmoid", lambda: T.sigmoid(a), [a], (4, 4))
    add_case("softplus", lambda: T.softplus(a), [a], (4, 4))
    k = _t(rng, (4, 4), "kinked", low=0.05)
    add_case("relu", lambda: T.relu(k), [k], (4, 4))
    add_case("leaky_relu", lambda: T.leaky_relu(k, 0.2), [k], (4, 4))
    add_case("abs", lambda: T.absolute(k), [k], (4, 4))
    add_case("square", lambda: T.square(a), [a], (4, 4))

    ma, mb = _t(rng, (5, 4), "A"), _t(rng, (4, 3), "B")
    add_case("matmul", lambda: T.matmul(ma, mb), [ma, mb], (5, 3))
    add_case("reshape", lambda: T.reshape(ma, (2, 10)), [ma], (2, 10))
    x1, x2 = _t(rng, (2, 3, 3, 2), "x1"), _t(rng, (2, 3, 3, 1), "x2")
    add_case("concat_channels", lambda: T.concat_channels([x1, x2]), [x1, x2], (2, 3, 3, 3))
    add_case("slice_channels", lambda: T.slice_channels(x1, 1, 2), [x1], (2, 3, 3, 1))
    add_case("sum_axis", lambda: T.tensor_sum(x1, (1, 2)), [x1], (2, 2))
    add_case("mean_axis", lambda: T.tensor_mean(x1, 0), [x1], (3, 3, 2))
    add_case("mean_all", lambda: T.tensor_mean(T.square(x1)), [x1])

    for stride, k_, shape in ((1, 3, (1, 5, 5, 2)), (2, 3, (2, 5, 5, 2)), (1, 5, (2, 6, 6, 2)), (2, 5, (1, 7, 7, 2))):
        layer = Conv2D(shape[-1], 3, k_, stride, F64, name=f"conv_s{stride}k{k_}")
        init_layer(layer, int(rng.integers(1 << 30)))
        layer.kernel.data = rng.normal(size=layer.kernel.shape)
        layer.bias.data = rng.normal(size=layer.bias.shape)
        x = _t(rng, shape, "x")
        out = -(-shape[1] // stride)
        add_case(f"conv2d stride{stride} k{k_}", (lambda x=x, layer=layer: conv2d(x, layer)),
                 [x, layer.kernel, layer.bias], (shape[0], out, out, 3))

    bn = BatchNorm(2, dtype=F64, name="bn")
    bn.gamma.data = rng.uniform(0.5, 1.5, 2)
    bn.beta.data = rng.normal(size=2)
    xb = _t(rng, (8, 4, 4, 2), "x")
    add_case("batchnorm train", lambda: batchnorm(xb, bn, "train"), [xb, bn.gamma, bn.beta], (8, 4, 4, 2))
    add_case("batchnorm eval", lambda: batchnorm(xb, bn, "eval"), [xb, bn.gamma, bn.beta], (8, 4, 4, 2))

    dl = Dense(6, 3, F64, name="dense")
    dl.weight.data = rng.normal(size=(6, 3))
    dl.bias.data = rng.normal(size=3)
    xd = _t(rng, (4, 6), "x")
    add_case("dense", lambda: dense(xd, dl), [xd, dl.weight, dl.bias], (4, 3))

    rgb = _t(rng, (2, 3, 3, 3), "rgb")
    add_case("gray", lambda: gray_tensor(rgb), [rgb], (2, 3, 3, 1))
    yy, uv = _t(rng, (2, 3, 3, 1), "y"), _t(rng, (2, 3, 3, 2), "uv")
    add_case("yuv_to_rgb", lambda: yuv_to_rgb_tensor(yy, uv), [yy, uv], (2, 3, 3, 3))

    lr, lf = _t(rng, (6, 1), "real_logits"), _t(rng, (6, 1), "fake_logits")
    add_case("loss_discriminator", lambda: loss_discriminator(lr, lf), [lr, lf])
    add_case("loss_generator saturating", lambda: loss_generator(lf, "saturating"), [lf])
    add_case("loss_generator nonsaturating", lambda: loss_generator(lf, "nonsaturating"), [lf])
    gy = Tensor(rng.uniform(0, 1, (2, 3, 3, 1)), dtype=F64)
    grgb = Tensor(rng.uniform(0, 1, (2, 3, 3, 3)), requires_grad=True, dtype=F64, name="g_rgb")
    add_case("loss_l1_gray", lambda: loss_l1_gray(gy, grgb), [grgb])
    add_case("combined objective",
             lambda: combined_generator_objective(loss_generator(lf), loss_l1_gray(gy, grgb), 10.0), [lf, grgb])
    return cases


def end_to_end_case(seed: int = 0, mode: str = "YUV", size: int = 8, m: int = 4):
    """Tiny generator -> discriminator -> loss graph (widths 4).

    With m=2 the deepest discriminator batchnorm sees two values per channel,
    which makes its output nearly constant and the generator gradients vanish
    into rounding noise, so the default batch is 4.
    """
    rng = np.random.default_rng(seed)
    out = 2 if mode == "YUV" else 3
    gspec = GeneratorSpec(size=size, widths=[4, 4, 4, 4, 4, out], z_dim=6)
    dspec = DiscriminatorSpec(size=size, widths=[4, 4, 4, 4])
    G = build_generator(gspec, seed=seed, dtype=F64)
    D = build_discriminator(dspec, seed=seed + 1, dtype=F64)
    # larger weights than the 0.02 init keep the graph far from flat regions
    for net in (G, D):
        for p in net.parameters().values():
            if p.ndim > 1:
                p.data = rng.normal(scale=0.3, size=p.shape)
    y = Tensor(rng.uniform(0, 1, (m, size, size, 1)), dtype=F64)
    z = Tensor(rng.normal(size=(m, 6)), dtype=F64)
    real = Tensor(rng.uniform(-1, 1, (m, size, size, 3)), dtype=F64)

    def f():
        g_out = generator_forward(G, y, z, "batch")
        fake = fake_to_model_rgb(y, g_out, mode)
        ld = loss_discriminator(discriminator_logits(D, real, None, "batch"),
                                discriminator_logits(D, fake, None, "batch"))
        lg = loss_generator(discriminator_logits(D, fake, None, "batch"))
        return T.add(ld, lg)

    params = {**G.parameters(), **D.parameters()}
    # a bias feeding straight into batchnorm is cancelled by the mean subtraction
    cancelled = [t for name, t in params.items()
                 if name.endswith(".bias") and name.replace(".conv", ".bn").replace(".bias", ".gamma") in params]
    return f, [t for t in params.values() if not any(t is c for c in cancelled)], cancelled


def cancelled_bias_report(f, cancelled, name: str, tol: float = 1e-10) -> GradCheckReport:
    """Biases ahead of batchnorm must receive a zero gradient."""
    for t in cancelled:
        t.grad = None
    f().backward()
    worst = max((float(np.abs(t.grad).max()) for t in cancelled if t.grad is not None), default=0.0)
    return GradCheckReport(name, worst < tol, worst, None, None, sum(t.size for t in cancelled))


def run_suite(seeds=(0, 1, 2), e2e_seed: int = 0, log: Callable[[str], None] | None = None) -> list[GradCheckReport]:
    reports = []
    for seed in seeds:
        for name, fn, inputs, tol in op_cases(seed):
            rep = grad_check(fn, inputs, tol=tol, name=f"{name} [seed {seed}]")
            reports.append(rep)
            if log:
                log(rep.line())
    for mode in ("YUV", "RGB"):
        f, params, cancelled = end_to_end_case(e2e_seed, mode)
        for rep in (grad_check(f, params, tol=1e-3, name=f"end-to-end G->D->loss {mode}", max_elements=12,
                               seed=e2e_seed),
                    cancelled_bias_report(f, cancelled, f"pre-batchnorm biases have zero gradient {mode}")):
            reports.append(rep)
            if log:
                log(rep.line())
    return reports
