import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from idf.config import EnhancementLossConfig
from idf.enhancement_losses import loss_col, loss_dce, loss_dce_terms, loss_exp, loss_spa, loss_tva
from idf.errors import DimensionError, ParameterError
from idf.trainer import grad_check

CFG = EnhancementLossConfig()


def spa_oracle(i0, i_n, region=4):
    """Nested loops over regions and their up/down/left/right neighbours."""
    y0, yn = i0.mean(0).numpy(), i_n.mean(0).numpy()
    rows, cols = y0.shape[0] // region, y0.shape[1] // region

    def mean(y, r, c):
        return y[r * region:(r + 1) * region, c * region:(c + 1) * region].mean()

    total = 0.0
    for r, c in itertools.product(range(rows), range(cols)):
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                dn = abs(mean(yn, r, c) - mean(yn, rr, cc))
                d0 = abs(mean(y0, r, c) - mean(y0, rr, cc))
                total += (dn - d0) ** 2
    return total / (rows * cols)


def tva_oracle(maps):
    n = maps.shape[0]
    total = 0.0
    for k in range(n):
        for c in range(3):
            a = maps[k, c].numpy()
            gx = np.mean([abs(a[i, j + 1] - a[i, j]) for i in range(a.shape[0]) for j in range(a.shape[1] - 1)])
            gy = np.mean([abs(a[i + 1, j] - a[i, j]) for i in range(a.shape[0] - 1) for j in range(a.shape[1])])
            total += (gx + gy) ** 2
    return total / n


def test_spa_examples():
    i0 = torch.rand(3, 8, 12, dtype=torch.float64)
    assert loss_spa(i0, i0).item() == 0
    assert loss_spa(i0, i0 + 0.1).item() == pytest.approx(0, abs=1e-15)


def test_spa_two_region_gradient_pair_matches_oracle():
    x = torch.linspace(0, 1, 8, dtype=torch.float64)
    i0 = (x[None, :] * 0.3 + x[:, None] * 0.1).expand(3, 8, 8).clone()
    i_n = (x[None, :] ** 2 * 0.8 + 0.1).expand(3, 8, 8).clone()
    assert loss_spa(i0, i_n).item() == pytest.approx(spa_oracle(i0, i_n), rel=1e-12)


@pytest.mark.parametrize("shape", [(3, 16, 16), (3, 12, 20), (3, 4, 4)])
def test_spa_random_matches_oracle(shape):
    g = torch.Generator().manual_seed(sum(shape))
    i0, i_n = torch.rand(shape, generator=g, dtype=torch.float64), torch.rand(shape, generator=g, dtype=torch.float64)
    assert loss_spa(i0, i_n).item() == pytest.approx(spa_oracle(i0, i_n), rel=1e-12)


def test_spa_errors():
    with pytest.raises(DimensionError):
        loss_spa(torch.rand(3, 8, 8), torch.rand(3, 8, 4))
    with pytest.raises(ParameterError):
        loss_spa(torch.rand(3, 3, 3), torch.rand(3, 3, 3))


def test_exp_examples():
    assert loss_exp(torch.full((3, 16, 16), 0.6, dtype=torch.float64)).item() == pytest.approx(0, abs=1e-15)
    assert loss_exp(torch.zeros(3, 16, 16)).item() == pytest.approx(0.6)
    img = torch.empty(3, 32, 16, dtype=torch.float64)
    img[:, :16], img[:, 16:] = 0.2, 0.8
    assert loss_exp(img).item() == pytest.approx(0.3)
    with pytest.raises(ParameterError):
        loss_exp(torch.zeros(3, 8, 16))


def test_exp_squared_switch():
    img = torch.empty(3, 32, 16, dtype=torch.float64)
    img[:, :16], img[:, 16:] = 0.2, 0.8
    cfg = EnhancementLossConfig(exp_squared=True)
    assert loss_exp(img, cfg).item() == pytest.approx((0.16 + 0.04) / 2)


def test_tva_examples():
    assert loss_tva(torch.full((8, 3, 5, 5), 0.3)).item() == 0
    step = torch.zeros(2, 3, 4, 4, dtype=torch.float64)
    step[..., 2:] = 1.0
    assert loss_tva(step).item() == pytest.approx(tva_oracle(step), rel=1e-12)
    maps = torch.rand(3, 3, 5, 6, dtype=torch.float64)
    assert loss_tva(maps).item() == pytest.approx(tva_oracle(maps), rel=1e-12)


def test_tva_squared_homogeneity():
    single = torch.rand(1, 3, 5, 5, dtype=torch.float64)
    single[:, 1:] = 0
    assert loss_tva(2 * single).item() == pytest.approx(4 * loss_tva(single).item(), rel=1e-12)


def test_col_examples():
    gray = torch.rand(1, 6, 6).expand(3, 6, 6)
    assert loss_col(gray).item() == 0
    img = torch.tensor([0.5, 0.3, 0.3], dtype=torch.float64).reshape(3, 1, 1).expand(3, 4, 4)
    assert loss_col(img).item() == pytest.approx(0.08)
    rnd = torch.rand(3, 5, 5, dtype=torch.float64)
    for perm in itertools.permutations(range(3)):
        assert loss_col(rnd[list(perm)]).item() == pytest.approx(loss_col(rnd).item(), rel=1e-12)


def test_dce_examples():
    img = torch.full((3, 16, 16), 0.6, dtype=torch.float64)
    maps = torch.zeros(8, 3, 16, 16, dtype=torch.float64)
    assert loss_dce(img, img, maps).item() == pytest.approx(0, abs=1e-15)
    rnd = torch.rand(3, 16, 16)
    zero_w = EnhancementLossConfig(w_spa=0, w_exp=0, w_tva=0, w_col=0)
    assert loss_dce(rnd, rnd * 0.5, torch.rand(8, 3, 16, 16), zero_w).item() == 0


def test_dce_is_sum_of_oracle_terms():
    g = torch.Generator().manual_seed(7)
    i0 = torch.rand(3, 16, 16, generator=g, dtype=torch.float64)
    i_n = torch.rand(3, 16, 16, generator=g, dtype=torch.float64)
    maps = torch.rand(2, 3, 16, 16, generator=g, dtype=torch.float64)
    y = i_n.mean(0).numpy()
    exp_oracle = abs(y.mean() - 0.6)
    c = i_n.mean((1, 2)).numpy()
    col_oracle = (c[0] - c[1]) ** 2 + (c[0] - c[2]) ** 2 + (c[1] - c[2]) ** 2
    expected = spa_oracle(i0, i_n) + exp_oracle + tva_oracle(maps) + col_oracle
    assert loss_dce(i0, i_n, maps).item() == pytest.approx(expected, rel=1e-12)


def test_dce_linear_in_weights():
    i0, i_n, maps = torch.rand(3, 16, 16, dtype=torch.float64), torch.rand(3, 16, 16, dtype=torch.float64), \
        torch.rand(8, 3, 16, 16, dtype=torch.float64)
    w1 = EnhancementLossConfig(w_spa=1.0, w_exp=0.5, w_tva=2.0, w_col=0.0)
    w2 = EnhancementLossConfig(w_spa=0.2, w_exp=1.5, w_tva=0.0, w_col=3.0)
    w12 = EnhancementLossConfig(w_spa=1.2, w_exp=2.0, w_tva=2.0, w_col=3.0)
    lhs = loss_dce(i0, i_n, maps, w12).item()
    assert lhs == pytest.approx(loss_dce(i0, i_n, maps, w1).item() + loss_dce(i0, i_n, maps, w2).item(), rel=1e-12)


def test_batched_losses_average_over_batch():
    i0, i_n = torch.rand(4, 3, 16, 16, dtype=torch.float64), torch.rand(4, 3, 16, 16, dtype=torch.float64)
    maps = torch.rand(4, 2, 3, 16, 16, dtype=torch.float64)
    batched = loss_dce_terms(i0, i_n, maps)
    singles = [loss_dce_terms(i0[b], i_n[b], maps[b]) for b in range(4)]
    for name in ("spa", "exp", "tva", "col", "total"):
        assert getattr(batched, name).item() == pytest.approx(np.mean([getattr(s, name).item() for s in singles]))


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_losses_non_negative(seed):
    g = torch.Generator().manual_seed(seed)
    i0, i_n = torch.rand(3, 16, 16, generator=g), torch.rand(3, 16, 16, generator=g)
    maps = torch.rand(2, 3, 16, 16, generator=g) * 2 - 1
    terms = loss_dce_terms(i0, i_n, maps)
    assert min(terms.spa, terms.exp, terms.tva, terms.col) >= 0


@pytest.mark.parametrize("name", ["spa", "exp", "tva", "col"])
def test_loss_gradients_match_finite_differences(name):
    g = torch.Generator().manual_seed(11)
    size = 16 if name == "spa" else 32
    i0 = torch.rand(3, size, size, generator=g, dtype=torch.float64)
    i_n = torch.rand(3, size, size, generator=g, dtype=torch.float64).requires_grad_()
    maps = (torch.rand(2, 3, size, size, generator=g, dtype=torch.float64) * 2 - 1).requires_grad_()
    fn, params = {
        "spa": (lambda: loss_spa(i0, i_n), [i_n]),
        "exp": (lambda: loss_exp(i_n), [i_n]),
        "tva": (lambda: loss_tva(maps), [maps]),
        "col": (lambda: loss_col(i_n), [i_n]),
    }[name]
    report = grad_check(fn, params, 1e-3, n_coords=50)
    assert report.passed, report
