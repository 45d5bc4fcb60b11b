import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colorgan import tensor as T
from colorgan.colorspace import gray_of
from colorgan.gradcheck import grad_check
from colorgan.models import (
    DiscriminatorSpec,
    GeneratorSpec,
    SpecError,
    SpecMismatchError,
    assemble_color,
    build_discriminator,
    build_generator,
    combined_generator_objective,
    discriminator_forward,
    discriminator_logits,
    generator_forward,
    loss_discriminator,
    loss_generator,
    loss_l1_gray,
)
from colorgan.tensor import ShapeError, Tensor


def shape_walk(spec: GeneratorSpec):
    """Independent channel bookkeeping: (input channels, output channels) per layer and parameter count."""
    chans, params = [], 0
    prev = 0
    z_planes = spec.z_dim if spec.noise_mode == "tile" else spec.noise_channels
    for i, width in enumerate(spec.widths, start=1):
        c_in = prev
        if i in spec.cond_layers:
            c_in += 1
        if i in spec.noise_layers:
            c_in += z_planes
            if spec.noise_mode == "project":
                params += spec.z_dim * spec.size * spec.size * spec.noise_channels + spec.size * spec.size * spec.noise_channels
        chans.append((c_in, width))
        params += spec.kernel ** 2 * c_in * width + width
        if i < len(spec.widths):
            params += 2 * width
        prev = width
    return chans, params


def count(params):
    return sum(p.size for p in params.values())


def all_ablation_specs(size):
    for cond in ([1], [1, 2, 3, 4, 5, 6]):
        for k in range(1, 7):
            noise = list(range(1, k + 1))
            if not set(noise) <= set(cond):
                continue
            for mode in ("project", "tile"):
                for out in (2, 3):
                    yield GeneratorSpec(size=size, widths=[4, 6, 6, 4, 3, out], noise_layers=noise,
                                        cond_layers=cond, z_dim=5, noise_mode=mode)


class TestGeneratorShapes:
    @pytest.mark.parametrize("size", [16, 32, 64])
    def test_spatial_preservation(self, size):
        spec = GeneratorSpec(size=size, widths=[4, 4, 4, 4, 4, 2], z_dim=8)
        G = build_generator(spec, seed=0)
        out = generator_forward(G, Tensor(np.zeros((2, size, size, 1))), Tensor(np.zeros((2, 8))), "batch")
        assert out.shape == (2, size, size, 2)
        assert all(o[1:3] == (size, size) for _, _, o in G.trace)

    def test_channel_bookkeeping_all_flags(self):
        for spec in all_ablation_specs(8):
            G = build_generator(spec, seed=1)
            y, z = Tensor(np.ones((2, 8, 8, 1))), Tensor(np.ones((2, 5)))
            generator_forward(G, y, z, "batch")
            chans, params = shape_walk(spec)
            assert [(inp[-1], out[-1]) for _, inp, out in G.trace] == chans
            assert count(G.parameters()) == params

    def test_default_parameter_count(self):
        spec = GeneratorSpec()
        assert count(build_generator(spec).parameters()) == shape_walk(spec)[1]

    def test_first_cond_only(self):
        spec = GeneratorSpec(size=8, widths=[5, 7, 3, 3, 3, 2], cond_layers=[1], noise_layers=[1])
        assert spec.input_channels(2) == 5

    @pytest.mark.parametrize("kwargs", [
        {"cond_layers": [2, 3]},
        {"cond_layers": [1], "noise_layers": [1, 2]},
        {"noise_layers": [7]},
        {"widths": [4, 4, 4]},
        {"noise_mode": "concat"},
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(SpecError):
            build_generator(GeneratorSpec(size=8, **kwargs))

    def test_size_mismatch(self):
        G = build_generator(GeneratorSpec(size=8, widths=[2, 2, 2, 2, 2, 2], z_dim=3))
        with pytest.raises(SpecMismatchError):
            generator_forward(G, Tensor(np.zeros((2, 16, 16, 1))), Tensor(np.zeros((2, 3))))

    def test_noise_shape_checked(self):
        G = build_generator(GeneratorSpec(size=8, widths=[2, 2, 2, 2, 2, 2], z_dim=3))
        with pytest.raises(ShapeError):
            generator_forward(G, Tensor(np.zeros((2, 8, 8, 1))), Tensor(np.zeros((2, 4))))


class TestGeneratorOutput:
    def setup_method(self):
        self.G = build_generator(GeneratorSpec(size=8, widths=[4, 4, 4, 4, 4, 2], z_dim=6), seed=3)
        self.y = Tensor(np.random.default_rng(0).random((4, 8, 8, 1)))

    def test_tanh_codomain(self):
        z = Tensor(np.random.default_rng(1).normal(size=(4, 6)) * 50)
        out = generator_forward(self.G, self.y, z, "batch").data
        assert np.all(np.abs(out) < 1)

    def test_noise_changes_output(self):
        rng = np.random.default_rng(2)
        a = generator_forward(self.G, self.y, Tensor(rng.normal(size=(4, 6))), "batch").data
        b = generator_forward(self.G, self.y, Tensor(rng.normal(size=(4, 6))), "batch").data
        assert np.abs(a - b).max() > 0

    def test_default_yuv_shape(self):
        G = build_generator(GeneratorSpec(widths=[2, 2, 2, 2, 2, 2]))
        out = generator_forward(G, Tensor(np.zeros((64, 64, 64, 1))), Tensor(np.zeros((64, 100))), "batch")
        assert out.shape == (64, 64, 64, 2)


class TestDiscriminator:
    @pytest.mark.parametrize("size,trail", [(64, [32, 16, 8, 4]), (32, [16, 8, 4, 2]), (16, [8, 4, 2, 1]),
                                            (20, [10, 5, 3, 2])])
    def test_trail(self, size, trail):
        spec = DiscriminatorSpec(size=size, widths=[2, 2, 2, 2])
        assert spec.trail() == trail
        D = build_discriminator(spec)
        discriminator_logits(D, Tensor(np.zeros((2, size, size, 3))), bn_mode="batch")
        assert [out[1] for _, _, out in D.trace] == trail

    def test_default_head(self):
        assert DiscriminatorSpec().head_inputs == 4 * 4 * 512

    def test_first_layer_has_no_batchnorm(self):
        D = build_discriminator(DiscriminatorSpec(size=8, widths=[2, 2, 2, 2]))
        assert D.bns[0] is None and all(b is not None for b in D.bns[1:])

    def test_output_range_and_shape(self):
        D = build_discriminator(DiscriminatorSpec(size=16, widths=[4, 4, 4, 4]), seed=0)
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, (8, 16, 16, 3)))
        p = discriminator_forward(D, x, bn_mode="batch").data
        assert p.shape == (8, 1) and np.all((p > 0) & (p < 1))

    def test_untrained_near_half(self):
        for seed in range(5):
            D = build_discriminator(DiscriminatorSpec(size=16, widths=[8, 8, 8, 8]), seed=seed)
            x = Tensor(np.random.default_rng(seed).uniform(-1, 1, (16, 16, 16, 3)))
            assert 0.2 < discriminator_forward(D, x, bn_mode="batch").data.mean() < 0.8

    def test_conditional_needs_gray(self):
        D = build_discriminator(DiscriminatorSpec(size=8, widths=[2, 2, 2, 2], conditional=True))
        assert D.convs[0].c_in == 4
        with pytest.raises(ShapeError):
            discriminator_logits(D, Tensor(np.zeros((2, 8, 8, 3))))
        out = discriminator_logits(D, Tensor(np.zeros((2, 8, 8, 3))), Tensor(np.zeros((2, 8, 8, 1))), "batch")
        assert out.shape == (2, 1)


class TestAssemble:
    def test_zero_chroma_is_gray(self):
        y = np.random.default_rng(0).random((2, 4, 4, 1))
        out = assemble_color(y, np.zeros((2, 4, 4, 2)), "YUV")
        np.testing.assert_allclose(out, np.repeat(y, 3, axis=-1), atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_yuv_luma_identity(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.random((3, 5, 5, 1))
        uv = np.tanh(rng.normal(scale=3, size=(3, 5, 5, 2)))
        out = assemble_color(y, uv, "YUV")
        assert np.abs(gray_of(out) - y).max() <= 2 / 255

    def test_rgb_denormalizes(self):
        g = np.random.default_rng(1).uniform(-1, 1, (1, 2, 2, 3))
        np.testing.assert_array_equal(assemble_color(np.zeros((1, 2, 2, 1)), g, "RGB"), (g + 1) / 2)

    def test_misaligned(self):
        with pytest.raises(ShapeError):
            assemble_color(np.zeros((1, 2, 2, 1)), np.zeros((1, 2, 2, 3)), "YUV")


def logit(p):
    return Tensor(np.log(np.asarray(p, dtype=np.float64) / (1 - np.asarray(p, dtype=np.float64))),
                  requires_grad=True)


class TestLosses:
    def test_discriminator_equilibrium(self):
        assert loss_discriminator(logit([[0.5]]), logit([[0.5]])).item() == pytest.approx(2 * np.log(2))

    def test_discriminator_perfect_limit(self):
        assert loss_discriminator(logit([[1 - 1e-9]]), logit([[1e-9]])).item() < 1e-8

    def test_discriminator_gradient_signs(self):
        real, fake = logit([[0.3]]), logit([[0.6]])
        loss_discriminator(real, fake).backward()
        assert real.grad.item() < 0 < fake.grad.item()

    def test_generator_at_half(self):
        assert loss_generator(logit([[0.5]]), "saturating").item() == pytest.approx(-np.log(2))
        assert loss_generator(logit([[0.5]]), "nonsaturating").item() == pytest.approx(np.log(2))

    @pytest.mark.parametrize("variant", ["saturating", "nonsaturating"])
    def test_generator_decreasing(self, variant):
        ps = np.linspace(0.01, 0.99, 30)
        vals = [loss_generator(logit([[p]]), variant).item() for p in ps]
        assert np.all(np.diff(vals) < 0)

    def test_extreme_logits_finite(self):
        big = Tensor(np.array([[1e4], [-1e4]]), requires_grad=True)
        assert np.isfinite(loss_discriminator(big, big).item())
        assert np.isfinite(loss_generator(big, "nonsaturating").item())

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            loss_generator(logit([[0.5]]), "wasserstein")

    def test_l1_exact_recovery(self):
        y = np.random.default_rng(0).random((2, 3, 3, 1))
        assert loss_l1_gray(Tensor(y), Tensor(np.repeat(y, 3, axis=-1))).item() == pytest.approx(0, abs=1e-15)

    def test_l1_max(self):
        assert loss_l1_gray(Tensor(np.zeros((1, 2, 2, 1))), Tensor(np.ones((1, 2, 2, 3)))).item() == pytest.approx(1)

    def test_l1_matches_loop(self):
        rng = np.random.default_rng(3)
        y, g = rng.random((2, 3, 4, 1)), rng.random((2, 3, 4, 3))
        total = 0.0
        for idx in itertools.product(range(2), range(3), range(4)):
            r, gg, b = g[idx]
            total += abs(y[idx][0] - (0.299 * r + 0.587 * gg + 0.114 * b))
        assert loss_l1_gray(Tensor(y), Tensor(g)).item() == pytest.approx(total / 24, abs=1e-6)

    def test_l1_rejects_yuv(self):
        with pytest.raises(ValueError):
            loss_l1_gray(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.zeros((1, 1, 1, 3))), mode="YUV")

    def test_combined_arithmetic(self):
        lg, l1 = Tensor(np.array(-0.69)), Tensor(np.array(0.01))
        assert combined_generator_objective(lg, l1, 0.0) is lg
        assert combined_generator_objective(lg, l1, 100.0).item() == pytest.approx(0.31)
        with pytest.raises(ValueError):
            combined_generator_objective(lg, l1, -1.0)

    def test_combined_gradient_is_sum(self):
        rng = np.random.default_rng(4)
        G = build_generator(GeneratorSpec(size=4, widths=[3, 3, 3, 3, 3, 3], z_dim=2), seed=0, dtype=np.float64)
        D = build_discriminator(DiscriminatorSpec(size=4, widths=[2, 2, 2, 2]), seed=1, dtype=np.float64)
        y, z = Tensor(rng.random((4, 4, 4, 1))), Tensor(rng.normal(size=(4, 2)))
        kernel = G.convs[-1].kernel

        def parts():
            out = generator_forward(G, y, z, "batch")
            lg = loss_generator(discriminator_logits(D, out, bn_mode="batch"))
            l1 = loss_l1_gray(y, T.scale(T.add(out, Tensor(np.array(1.0))), 0.5))
            return lg, l1

        grads = []
        for pick in (lambda lg, l1: lg, lambda lg, l1: T.scale(l1, 10.0),
                     lambda lg, l1: combined_generator_objective(lg, l1, 10.0)):
            kernel.grad = None
            pick(*parts()).backward()
            grads.append(kernel.grad.copy())
        np.testing.assert_allclose(grads[2], grads[0] + grads[1], atol=1e-12)
        rep = grad_check(lambda: combined_generator_objective(*parts(), 10.0), [kernel], max_elements=20)
        assert rep.passed, rep.line()
