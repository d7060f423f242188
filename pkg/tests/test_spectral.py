"""
Test suite for spectral comparison of weight pairs
"""

import json
import math

import numpy as np
import pytest

from conftest import orthogonal
from speclora.adapter import rescale_singular_values
from speclora.errors import DimensionError, DomainError
from speclora.linalg import SvdFactors, thin_svd
from speclora.spectral import (
    SpectralReport,
    analyze_pairs,
    compare_spectra,
    degenerate_indices,
    effective_rank,
    spectral_entropy,
    spectrum_summary,
    vector_alignment,
)


def planted_weight(rng, n, m, sigma):
    """W = U diag(sigma) V^T with random orthogonal factors"""
    p = len(sigma)
    u = orthogonal(rng, n)[:, :p]
    v = orthogonal(rng, m)[:, :p]
    return (u * np.asarray(sigma)) @ v.T


@pytest.mark.parametrize(
    "sigma,expected",
    [
        ([1.0, 1.0, 1.0, 1.0], math.log(4.0)),
        ([5.0, 0.0, 0.0], 0.0),
        ([2.0, 1.0], 0.6365141683),
    ],
)
def test_spectral_entropy(sigma, expected):
    """Test spectral entropy on known spectra"""
    assert spectral_entropy(sigma) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize(
    "sigma,expected",
    [
        ([1.0, 1.0, 1.0, 1.0], 4.0),
        ([5.0, 0.0, 0.0], 1.0),
        ([2.0, 1.0], 1.8898815748),
    ],
)
def test_effective_rank(sigma, expected):
    """Test effective rank on known spectra"""
    assert effective_rank(sigma) == pytest.approx(expected, abs=1e-9)


def test_entropy_rejects_zero_spectrum():
    """Test that an all-zero spectrum raises DomainError"""
    with pytest.raises(DomainError):
        spectral_entropy([0.0, 0.0])
    with pytest.raises(DomainError):
        effective_rank([0.0])


def test_effective_rank_bounds(rng):
    """Test that effective rank stays between 1 and the rank"""
    sigma = np.sort(rng.uniform(0.0, 3.0, size=10))[::-1]
    value = effective_rank(sigma)
    assert 1.0 <= value <= 10.0


def test_identical_pair(rng):
    """Comparing a weight with itself gives unit ratios and unit alignments"""
    w = rng.standard_normal((6, 4))
    report = compare_spectra(w, w, matrix_name="layer.0.q")
    assert report.matrix_name == "layer.0.q"
    assert np.allclose(report.sigma_ratio, 1.0, atol=1e-12)
    assert np.allclose(report.left_alignment, 1.0, atol=1e-12)
    assert np.allclose(report.right_alignment, 1.0, atol=1e-12)
    assert report.effective_rank_pre == report.effective_rank_ft


def test_scaled_pair(rng):
    """Test that a scaled matrix gives constant ratios and full alignment"""
    w = rng.standard_normal((5, 8))
    report = compare_spectra(w, 2.0 * w)
    assert np.allclose(report.sigma_ratio, 2.0, atol=1e-12)
    assert np.allclose(report.left_alignment, 1.0, atol=1e-12)
    assert np.allclose(report.right_alignment, 1.0, atol=1e-12)
    assert report.spectral_entropy_ft == pytest.approx(report.spectral_entropy_pre, abs=1e-12)


def test_compare_spectra_errors(rng):
    """Test shape and zero-spectrum errors in compare_spectra"""
    with pytest.raises(DimensionError):
        compare_spectra(rng.standard_normal((3, 4)), rng.standard_normal((4, 3)))
    with pytest.raises(DomainError):
        compare_spectra(np.zeros((3, 3)), rng.standard_normal((3, 3)))


@pytest.mark.parametrize("d", [[2.0, 1.5], [0.7, 0.8], [3.0, 2.5, 1.2]])
def test_planted_rescale_recovered(rng, d):
    """Top-k ratios match the planted factors and trailing directions stay put"""
    sigma = [10.0, 8.0, 6.0, 4.0, 3.0, 2.0]
    w = planted_weight(rng, 9, 7, sigma)
    k = len(d)
    report = compare_spectra(w, rescale_singular_values(w, d))

    assert np.allclose(report.sigma_ratio[:k], d, atol=5e-2)
    assert min(report.left_alignment[k:]) >= 0.999
    assert min(report.right_alignment[k:]) >= 0.999


def test_alignment_identical_factors(rng):
    """Test that identical factors align perfectly"""
    f = thin_svd(rng.standard_normal((6, 4)))
    left, right = vector_alignment(f, f)
    assert np.allclose(left, 1.0) and np.allclose(right, 1.0)


def test_alignment_is_symmetric_and_sign_blind(rng):
    """Test that alignment ignores order and sign flips"""
    f_pre = thin_svd(rng.standard_normal((6, 4)))
    f_ft = thin_svd(rng.standard_normal((6, 4)))
    forward = vector_alignment(f_pre, f_ft)
    backward = vector_alignment(f_ft, f_pre)
    assert np.allclose(forward[0], backward[0]) and np.allclose(forward[1], backward[1])

    flipped = SvdFactors(u=-f_ft.u, sigma=f_ft.sigma, v=-f_ft.v)
    again = vector_alignment(f_pre, flipped)
    assert np.allclose(forward[0], again[0]) and np.allclose(forward[1], again[1])


def test_alignment_orthogonal_replacement(rng):
    """Test that replaced directions have zero alignment"""
    basis = orthogonal(rng, 6)
    u = basis[:, :3]
    u_ft = u.copy()
    u_ft[:, 0] = basis[:, 3]
    v = orthogonal(rng, 3)
    sigma = np.array([3.0, 2.0, 1.0])

    left, right = vector_alignment(SvdFactors(u, sigma, v), SvdFactors(u_ft, sigma, v))
    assert left[0] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(left[1:], 1.0, atol=1e-12)
    assert np.allclose(right, 1.0, atol=1e-12)


def test_alignment_planted_rotation(rng):
    """Rotating inside the top-2 left subspace only moves the first two alignments"""
    n, m = 7, 5
    sigma = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
    u = orthogonal(rng, n)[:, :m]
    v = orthogonal(rng, m)
    theta = 0.3
    rotation = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    u_ft = u.copy()
    u_ft[:, :2] = u[:, :2] @ rotation

    report = compare_spectra((u * sigma) @ v.T, (u_ft * sigma) @ v.T)
    assert report.left_alignment[0] < 1.0 and report.left_alignment[1] < 1.0
    assert report.left_alignment[0] == pytest.approx(math.cos(theta), abs=1e-8)
    assert np.allclose(report.left_alignment[2:], 1.0, atol=1e-8)
    assert np.allclose(report.right_alignment, 1.0, atol=1e-8)
    assert np.allclose(report.sigma_ratio, 1.0, atol=1e-10)


def test_signed_cosines_reported(rng):
    """Test that signed cosines keep the sign"""
    w = rng.standard_normal((4, 4))
    report = compare_spectra(w, w)
    assert np.allclose(np.abs(report.left_cosine), report.left_alignment)
    assert np.allclose(np.abs(report.right_cosine), report.right_alignment)


def test_degenerate_indices():
    """Test degenerate index detection"""
    assert degenerate_indices([3.0, 3.0, 1.0]) == [0, 1]
    assert degenerate_indices([2.0, 1.0]) == []
    assert degenerate_indices([4.0]) == []


def test_degenerate_spectrum_flagged():
    """Test that repeated singular values are flagged in the report"""
    report = compare_spectra(np.eye(3), 2.0 * np.eye(3))
    assert report.degenerate_indices == [0, 1, 2]


def test_infinite_ratio_sentinel_roundtrip():
    """A zero pre-trained singular value with a nonzero fine-tuned one reports 'inf'"""
    report = compare_spectra(np.diag([1.0, 0.0]), np.eye(2))
    assert math.isinf(report.sigma_ratio[1])

    dumped = report.model_dump(mode="json")
    assert dumped["sigma_ratio"] == [1.0, "inf"]
    text = json.dumps(dumped)
    restored = SpectralReport.model_validate_json(text)
    assert math.isinf(restored.sigma_ratio[1])
    assert restored.sigma_ratio[0] == 1.0

    rows = report.csv_rows()
    assert len(rows) == 2
    assert rows[1]["sigma_ratio"] == "inf"


def test_analyze_pairs_filters_and_sorts(rng):
    """Test glob filtering and name ordering"""
    names = [f"layer.{i}.{part}" for i in range(2) for part in ("q", "k", "v", "up", "down")]
    pre = {name: rng.standard_normal((4, 3)) for name in names}
    ft = {name: value * 1.5 for name, value in pre.items()}
    ft["extra.only_ft"] = rng.standard_normal((2, 2))

    reports = analyze_pairs(pre, ft, "layer.0.*")
    assert [r.matrix_name for r in reports] == sorted(f"layer.0.{p}" for p in ("q", "k", "v", "up", "down"))
    assert len(analyze_pairs(pre, ft)) == 10
    assert analyze_pairs(pre, ft, "layer.9.*") == []


def test_spectrum_summary():
    """Test the single-matrix summary"""
    summary = spectrum_summary(np.eye(4))
    assert summary["sigma_max"] == 1.0
    assert summary["frobenius_norm"] == 2.0
    assert summary["spectral_entropy"] == pytest.approx(math.log(4.0))
    assert summary["effective_rank"] == pytest.approx(4.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
