"""
Test suite for the spectral low-rank adapter
"""

import itertools

import numpy as np
import pytest

from conftest import orthogonal
from speclora.adapter import SpecLoraAdapter, build_mask, rescale_singular_values
from speclora.configs import AdapterConfig, Direction, Mode, Variant
from speclora.errors import ConfigError, DimensionError
from speclora.linalg import frobenius_norm, thin_svd

VARIANTS = list(Variant)
DIRECTIONS = list(Direction)


def make_adapter(w, **overrides) -> SpecLoraAdapter:
    return SpecLoraAdapter.init(w, AdapterConfig(**overrides))


def perturbed(adapter: SpecLoraAdapter, rng) -> SpecLoraAdapter:
    """Move d and B away from their initial values"""
    return adapter.with_parameters(
        {
            "d": rng.uniform(0.5, 2.0, size=adapter.d.size),
            "a": adapter.a,
            "b": rng.standard_normal(adapter.b.shape),
        }
    )


def test_build_mask_top():
    """Top mask puts d in the first k rows and ones elsewhere"""
    mask = build_mask(3, 4, 2, [2.0, 3.0], Direction.TOP)
    assert np.array_equal(mask, [[2, 2, 1, 1], [3, 3, 1, 1], [1, 1, 1, 1]])


def test_build_mask_bottom():
    """Bottom mask puts d in the last k rows"""
    mask = build_mask(3, 3, 1, [5.0], Direction.BOTTOM)
    assert np.array_equal(mask, [[1, 1, 1], [1, 1, 1], [1, 1, 5]])


def test_build_mask_empty_and_errors():
    """Test k = 0 gives all ones and bad k or d raise"""
    assert np.array_equal(build_mask(2, 5, 0, []), np.ones((2, 5)))
    with pytest.raises(DimensionError):
        build_mask(3, 3, 2, [1.0])
    with pytest.raises(DimensionError):
        build_mask(2, 3, 3, [1.0, 1.0, 1.0])


def test_identity_at_init(rng):
    """Fresh adapters reproduce W: bitwise for hadamard, to 1e-10 for svd_exact"""
    for trial in range(50):
        n, m = (int(x) for x in rng.integers(1, 33, size=2))
        w = rng.standard_normal((n, m))
        limit = min(n, m)
        variant = VARIANTS[trial % 2]
        direction = DIRECTIONS[(trial // 2) % 2]
        k = [0, 1, limit // 2, limit][trial % 4]
        adapter = make_adapter(w, rank=1, k=k, variant=variant, direction=direction, seed=trial)
        effective = adapter.effective_weight()
        if variant is Variant.HADAMARD:
            assert np.array_equal(effective, w)
        else:
            assert frobenius_norm(effective - w) <= 1e-10 * frobenius_norm(w)


@pytest.mark.slow
def test_identity_at_init_large(rng):
    """Test identity at init on a full-size layer"""
    w = rng.standard_normal((64, 96))
    for variant, direction, k in itertools.product(VARIANTS, DIRECTIONS, [0, 1, 32, 64]):
        adapter = make_adapter(w, rank=4, k=k, variant=variant, direction=direction)
        assert frobenius_norm(adapter.merge() - w) <= 1e-10 * frobenius_norm(w)


def test_init_state(rng):
    """Test the initial d, A and B values"""
    w = rng.standard_normal((6, 5))
    adapter = make_adapter(w, rank=3, k=2, seed=11)
    assert np.array_equal(adapter.d, np.ones(2))
    assert np.array_equal(adapter.b, np.zeros((3, 5)))
    assert adapter.a.shape == (6, 3)
    assert np.all(np.abs(adapter.a) <= np.sqrt(6.0 / 3))
    again = make_adapter(w, rank=3, k=2, seed=11)
    assert np.array_equal(adapter.a, again.a)


def test_init_rejects_oversized_config(rng):
    """Test that r or k larger than the weight raise ConfigError"""
    w = rng.standard_normal((3, 5))
    with pytest.raises(ConfigError):
        make_adapter(w, rank=4)
    with pytest.raises(ConfigError):
        make_adapter(w, k=4)


def test_k_zero_is_plain_lora(rng):
    """With k = 0 the adapter reduces to plain LoRA"""
    w = rng.standard_normal((4, 6))
    adapter = perturbed(make_adapter(w, rank=2, alpha=3.0, k=0), rng)
    assert adapter.d.size == 0
    expected = w + 1.5 * adapter.a @ adapter.b
    assert np.allclose(adapter.merge(), expected, rtol=0, atol=1e-12)


def test_parameter_count():
    """Test the trainable count formula r(n + m) + k"""
    assert AdapterConfig(rank=2, k=200).trainable_parameters(768, 768) == 3272


def test_parameter_count_matches_tensors(rng):
    """Test the trainable count against the tensor sizes"""
    w = rng.standard_normal((7, 9))
    for rank, k in [(1, 0), (2, 3), (3, 7)]:
        adapter = make_adapter(w, rank=rank, k=k)
        assert adapter.trainable_parameters == rank * (7 + 9) + k


def test_effective_weight_hadamard_example():
    """Test the hadamard effective weight on a hand-worked example"""
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    adapter = make_adapter(w, rank=1, k=1)
    adapter = adapter.with_parameters({"d": np.array([3.0]), "a": adapter.a, "b": adapter.b})
    assert np.array_equal(adapter.effective_weight(), [[3.0, 2.0], [3.0, 4.0]])


def test_svd_exact_matches_explicit_reconstruction(rng):
    """W_eff equals [U~_{1:k} U_{k+1:p}] diag(sigma) V^T with the first k rows of U~ scaled by d"""
    for _ in range(20):
        n, m = (int(x) for x in rng.integers(2, 13, size=2))
        k = int(rng.integers(1, min(n, m) + 1))
        w = rng.standard_normal((n, m))
        adapter = make_adapter(w, rank=1, k=k, variant=Variant.SVD_EXACT)
        d = rng.uniform(0.5, 2.0, size=k)
        adapter = adapter.with_parameters({"d": d, "a": adapter.a, "b": adapter.b})

        f = thin_svd(w)
        u_tilde = f.u.copy()
        u_tilde[:k, :k] = d[:, None] * f.u[:k, :k]
        oracle = (u_tilde * f.sigma) @ f.v.T
        assert frobenius_norm(adapter.effective_weight() - oracle) <= 1e-9 * frobenius_norm(oracle)


def test_forward_on_basis_vectors(rng):
    """Forward on basis vectors returns the columns of the effective weight"""
    w = rng.standard_normal((5, 4))
    adapter = perturbed(make_adapter(w, rank=2, k=2), rng)
    y = adapter.forward(np.eye(4), Mode.EVAL)
    assert np.allclose(y, adapter.effective_weight().T, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant,direction", list(itertools.product(VARIANTS, DIRECTIONS)))
def test_merge_matches_forward(rng, variant, direction):
    """Test that the merged weight reproduces eval-mode forward"""
    w = rng.standard_normal((6, 8))
    adapter = perturbed(make_adapter(w, rank=2, k=3, variant=variant, direction=direction), rng)
    merged = adapter.merge()
    for _ in range(20):
        x = rng.standard_normal((3, 8))
        expected = adapter.forward(x, Mode.EVAL)
        assert frobenius_norm(x @ merged.T - expected) <= 1e-10 * max(frobenius_norm(expected), 1.0)


def test_dropout_zero_train_equals_eval(rng):
    """Test that train and eval forward agree when dropout is off"""
    w = rng.standard_normal((4, 5))
    adapter = perturbed(make_adapter(w, rank=2, k=2, dropout_p=0.0), rng)
    x = rng.standard_normal((3, 5))
    assert np.array_equal(adapter.forward(x, Mode.TRAIN), adapter.forward(x, Mode.EVAL))


def test_dropout_masks_only_lora_path(rng):
    """Dropout leaves the spectral path untouched"""
    w = rng.standard_normal((4, 5))
    adapter = perturbed(make_adapter(w, rank=2, k=2, dropout_p=0.5, seed=3), rng)
    x = rng.standard_normal((64, 5))
    train = adapter.forward(x, Mode.TRAIN)
    assert not np.allclose(train, adapter.forward(x, Mode.EVAL))
    # same step draws the same mask
    assert np.array_equal(train, adapter.forward(x, Mode.TRAIN))

    frozen_path = adapter.with_parameters({"d": adapter.d, "a": adapter.a, "b": np.zeros_like(adapter.b)})
    assert np.array_equal(frozen_path.forward(x, Mode.TRAIN), frozen_path.forward(x, Mode.EVAL))

    next_step = adapter.with_parameters(adapter.parameters(), step=1)
    assert not np.array_equal(train, next_step.forward(x, Mode.TRAIN))


def test_forward_shape_mismatch(rng):
    """Test that a wrong input width raises DimensionError"""
    adapter = make_adapter(rng.standard_normal((4, 5)))
    with pytest.raises(DimensionError):
        adapter.forward(np.ones((2, 4)))
    with pytest.raises(DimensionError):
        adapter.backward(np.ones((2, 5)), np.ones((2, 5)))


def test_backward_zero_upstream(rng):
    """Test that a zero upstream gradient gives zero gradients"""
    w = rng.standard_normal((4, 6))
    adapter = perturbed(make_adapter(w, rank=2, k=2, variant=Variant.SVD_EXACT), rng)
    grads = adapter.backward(rng.standard_normal((3, 6)), np.zeros((3, 4)))
    for value in grads.as_dict().values():
        assert not np.any(value)


def test_backward_single_entry_hadamard(rng):
    """Test hadamard gradients for a single upstream entry"""
    w = rng.standard_normal((3, 4))
    adapter = make_adapter(w, rank=1, k=2)
    x = np.zeros((1, 4))
    x[0, 0] = 1.0
    g_y = np.zeros((1, 3))
    g_y[0, 0] = 1.0
    grads = adapter.backward(x, g_y, Mode.EVAL)
    assert grads.grad_d[0] == w[0, 0]
    assert grads.grad_d[1] == 0.0


@pytest.mark.parametrize("variant,direction", list(itertools.product(VARIANTS, DIRECTIONS)))
def test_backward_matches_finite_differences(rng, variant, direction):
    """L = sum(g_y * y) is linear in y, so the central difference is exact up to rounding"""
    w = rng.standard_normal((5, 4))
    adapter = perturbed(make_adapter(w, rank=2, alpha=2.0, k=3, variant=variant, direction=direction), rng)
    x = rng.standard_normal((3, 4))
    g_y = rng.standard_normal((3, 5))
    grads = adapter.backward(x, g_y, Mode.EVAL).as_dict()

    h = 1e-6
    params = adapter.parameters()
    for name, value in params.items():
        for index in np.ndindex(value.shape):
            plus = {key: p.copy() for key, p in params.items()}
            minus = {key: p.copy() for key, p in params.items()}
            plus[name][index] += h
            minus[name][index] -= h
            loss_plus = np.sum(g_y * adapter.with_parameters(plus).forward(x))
            loss_minus = np.sum(g_y * adapter.with_parameters(minus).forward(x))
            numeric = (loss_plus - loss_minus) / (2 * h)
            assert grads[name][index] == pytest.approx(numeric, rel=1e-5, abs=1e-6)


def test_hadamard_differs_from_exact(rng):
    """The masked product and the singular-vector rescale are different maps"""
    w = rng.standard_normal((6, 6))
    d = np.array([2.0, 0.5])
    results = {}
    for variant in VARIANTS:
        adapter = make_adapter(w, rank=1, k=2, variant=variant)
        adapter = adapter.with_parameters({"d": d, "a": adapter.a, "b": adapter.b})
        results[variant] = adapter.effective_weight()
    gap = frobenius_norm(results[Variant.HADAMARD] - results[Variant.SVD_EXACT])
    assert gap > 1e-3 * frobenius_norm(w)


def test_exact_variant_spectral_effect(rng):
    """Amplifying the top block raises the top singular values and leaves trailing directions aligned"""
    n, m = 40, 30
    sigma = np.concatenate([[40.0, 30.0], np.linspace(12.0, 1.0, m - 2)])
    w = (orthogonal(rng, n)[:, :m] * sigma) @ orthogonal(rng, m).T
    adapter = make_adapter(w, rank=1, k=2, variant=Variant.SVD_EXACT)
    adapter = adapter.with_parameters({"d": np.array([1.2, 1.1]), "a": adapter.a, "b": adapter.b})

    before = thin_svd(w)
    after = thin_svd(adapter.effective_weight())
    assert np.all(after.sigma[:2] >= before.sigma[:2])
    alignment = np.abs(np.sum(before.v[:, 2:] * after.v[:, 2:], axis=0))
    assert alignment.min() >= 0.999


def test_rescale_singular_values(rng):
    """Test rescaling the leading singular values"""
    w = rng.standard_normal((5, 7))
    assert np.array_equal(rescale_singular_values(w, [1.0, 1.0]), w)
    scaled = rescale_singular_values(w, [3.0], Direction.TOP)
    before = thin_svd(w).sigma
    assert thin_svd(scaled).sigma[0] == pytest.approx(3.0 * before[0], rel=1e-12)
    bottom = rescale_singular_values(w, [0.5], Direction.BOTTOM)
    assert thin_svd(bottom).sigma[-1] == pytest.approx(0.5 * before[-1], rel=1e-10)


def test_frozen_weight_is_read_only(rng):
    """Test that the frozen weight cannot be written through the adapter"""
    w = rng.standard_normal((3, 3))
    adapter = make_adapter(w, k=2, variant=Variant.SVD_EXACT)
    with pytest.raises(ValueError):
        adapter.w_frozen[0, 0] = 1.0
    with pytest.raises(ValueError):
        adapter.m_cached[0, 0] = 1.0
    w[0, 0] = 100.0
    assert adapter.w_frozen[0, 0] != 100.0


def test_with_parameters_checks_shapes(rng):
    """Test that replacing a parameter with the wrong shape raises"""
    adapter = make_adapter(rng.standard_normal((4, 4)), rank=2, k=2)
    with pytest.raises(DimensionError):
        adapter.with_parameters({"d": np.ones(3), "a": adapter.a, "b": adapter.b})


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
