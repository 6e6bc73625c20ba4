import pytest
import torch
from hypothesis import assume, given, strategies as st

from idf.curve_enhancer import CurveEstimator, curve_step, enhance, estimate_curves
from idf.errors import ContractViolation, DimensionError, StateError
from idf.trainer import grad_check

unit = st.floats(0, 1)
coef = st.floats(-1, 1)


def test_curve_step_examples():
    img = torch.rand(3, 4, 4)
    assert torch.equal(curve_step(img, torch.zeros_like(img)), img)
    edges = torch.tensor([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    assert torch.equal(curve_step(edges, torch.tensor([1.0, -1.0, 0.3]).reshape(3, 1, 1)), edges)
    half = torch.full((3, 1, 1), 0.5)
    assert curve_step(half, half)[0, 0, 0].item() == pytest.approx(0.625)


def test_curve_step_errors():
    with pytest.raises(DimensionError):
        curve_step(torch.rand(3, 2, 2), torch.rand(3, 2, 3))
    with pytest.raises(ContractViolation):
        curve_step(torch.rand(3, 2, 2), torch.full((3, 2, 2), 1.5))


@given(unit, coef)
def test_curve_step_range(x, a):
    y = curve_step(torch.tensor([x], dtype=torch.float64), torch.tensor([a], dtype=torch.float64)).item()
    assert 0 <= y <= 1
    assert x * x - 1e-15 <= y <= 1 - (1 - x) ** 2 + 1e-15


@given(st.floats(0.001, 0.999), coef, coef)
def test_curve_step_strictly_increasing_in_coefficient(x, a1, a2):
    # below ~1e-9 the change vanishes in float64 rounding
    assume(abs(a1 - a2) > 1e-9)
    lo, hi = sorted((a1, a2))
    f = lambda a: curve_step(torch.tensor([x], dtype=torch.float64), torch.tensor([a], dtype=torch.float64)).item()
    assert f(lo) < f(hi)


def test_enhance_zero_maps_is_identity():
    img = torch.rand(3, 5, 6)
    assert torch.equal(enhance(img, torch.zeros(8, 3, 5, 6)), img)


@pytest.mark.parametrize("x0", [0.5, 0.1, 0.01])
def test_enhance_unit_maps_matches_closed_form(x0):
    img = torch.full((3, 1, 1), x0, dtype=torch.float64)
    out = enhance(img, torch.ones(8, 3, 1, 1, dtype=torch.float64))
    # x <- 2x - x^2 means 1 - x squares each step
    assert out[0, 0, 0].item() == pytest.approx(1 - (1 - x0) ** (2 ** 8), abs=1e-12)


def test_enhance_batched_matches_single():
    imgs = torch.rand(2, 3, 4, 4)
    maps = torch.rand(2, 8, 3, 4, 4) * 2 - 1
    out = enhance(imgs, maps)
    for b in range(2):
        assert torch.allclose(out[b], enhance(imgs[b], maps[b]))
    with pytest.raises(DimensionError):
        enhance(imgs[0], maps)


def test_enhance_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(1)
    img = torch.rand(3, 4, 4, generator=g, dtype=torch.float64)
    maps = (torch.rand(8, 3, 4, 4, generator=g, dtype=torch.float64) * 1.6 - 0.8).requires_grad_()
    weights = torch.rand(3, 4, 4, generator=g, dtype=torch.float64)
    report = grad_check(lambda: (enhance(img, maps) * weights).sum(), [maps], 1e-3, n_coords=60)
    assert report.passed, report


def test_estimate_curves_shape_and_range():
    net = CurveEstimator()
    maps = estimate_curves(net, torch.rand(3, 12, 10))
    assert maps.shape == (8, 3, 12, 10)
    assert maps.abs().max() <= 1
    assert estimate_curves(net, torch.rand(2, 3, 12, 10)).shape == (2, 8, 3, 12, 10)


def test_zero_head_gives_identity_enhancement():
    net = CurveEstimator(zero_head=True)
    img = torch.rand(3, 9, 7)
    maps = estimate_curves(net, img)
    assert torch.count_nonzero(maps) == 0
    assert torch.equal(enhance(img, maps), img)


def test_estimate_curves_errors():
    with pytest.raises(StateError):
        estimate_curves(None, torch.rand(3, 4, 4))
    with pytest.raises(DimensionError):
        estimate_curves(CurveEstimator(), torch.rand(4, 4, 4))


def test_estimate_curves_gradient_matches_finite_differences():
    net = CurveEstimator(n_iter=2, width=4, init_std=0.3).double()
    img = torch.rand(3, 6, 6, dtype=torch.float64)
    w = torch.rand(2, 3, 6, 6, dtype=torch.float64)
    report = grad_check(lambda: (estimate_curves(net, img) * w).sum(), list(net.parameters()), 1e-3, n_coords=40)
    assert report.passed, report


def test_skip_concatenation_widths():
    net = CurveEstimator(n_iter=8, width=32)
    assert len(net.convs) == 7
    assert [c.in_channels for c in net.convs] == [3, 32, 32, 32, 64, 64, 64]
    assert net.convs[-1].out_channels == 24
