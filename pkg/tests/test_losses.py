import itertools

import numpy as np
import pytest

from grada import autodiff as ad
from grada.autodiff import Tensor, backward
from grada.errors import GradaError
from grada.losses import (class_correlation_diagnostics, cls_loss, elbo_loss,
                          entropy_reg, gaussian_kl, nwd_loss, total_objective)
from grada.selfcheck import (check_entropy_gradient, check_nwd_gradient,
                             check_total_objective_gradient)


def row_stochastic(rng, b, k):
    p = rng.random((b, k))
    return p / p.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# reconstruction + KL


def test_kl_zero_at_prior():
    kl = gaussian_kl(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2))))
    assert float(kl.data) == 0.0


def test_kl_single_dim_value():
    kl = gaussian_kl(Tensor([[1.0]]), Tensor([[0.0]]))
    assert float(kl.data) == pytest.approx(0.5, abs=1e-15)


def test_kl_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mu = Tensor(rng.standard_normal((4, 3)) * 2)
        ls = Tensor(rng.uniform(-3, 2, (4, 3)))
        assert float(gaussian_kl(mu, ls).data) >= 0.0


def test_recon_constant_half_probability():
    # Any binary target with at least one edge: the reweighted normalized
    # mean collapses to the plain per-entry log-likelihood ln(1/2).
    for seed in range(3):
        rng = np.random.default_rng(seed)
        n = 5
        a = np.zeros((n, n))
        iu = np.triu_indices(n, 1)
        a[iu] = rng.random(len(iu[0])) < 0.5
        a += a.T
        if a.sum() == 0:
            a[0, 1] = a[1, 0] = 1.0
        probs = Tensor(np.full((n, n), 0.5))
        recon, kl, elbo = elbo_loss(probs, a, Tensor(np.zeros((n, 2))),
                                    Tensor(np.zeros((n, 2))))
        assert float(recon.data) == pytest.approx(np.log(0.5), abs=1e-12)
        assert float(kl.data) == 0.0
        assert float(elbo.data) == pytest.approx(np.log(0.5), abs=1e-12)


def test_recon_zero_edge_graph_warns_and_uses_weight_one():
    n = 3
    a = np.zeros((n, n))
    probs = Tensor(np.full((n, n), 0.5))
    with pytest.warns(RuntimeWarning):
        recon, _, _ = elbo_loss(probs, a, Tensor(np.zeros((n, 1))),
                                Tensor(np.zeros((n, 1))))
    assert float(recon.data) == pytest.approx(0.5 * np.log(0.5), abs=1e-12)


def test_elbo_is_recon_minus_kl():
    rng = np.random.default_rng(1)
    n = 4
    a = np.zeros((n, n))
    a[0, 1] = a[1, 0] = 1.0
    probs = Tensor(rng.uniform(0.2, 0.8, (n, n)))
    mu = Tensor(rng.standard_normal((n, 2)))
    ls = Tensor(rng.uniform(-1, 0.5, (n, 2)))
    recon, kl, elbo = elbo_loss(probs, a, mu, ls)
    assert float(elbo.data) == pytest.approx(float(recon.data) - float(kl.data))


# ---------------------------------------------------------------------------
# entropy regularizer


def test_entropy_all_zero_latents():
    z = Tensor(np.zeros((2, 2)))
    val = float(entropy_reg(z, [(0, 2)]).data)
    assert val == pytest.approx(0.5 * np.log(0.5), abs=1e-12)


def test_entropy_two_element_example():
    z = Tensor(np.array([[0.0], [1e6]]))
    val = float(entropy_reg(z, [(0, 2)]).data)
    assert val == pytest.approx(0.5 * np.log(0.5) / 2.0, abs=1e-9)


def test_entropy_large_positive_latents_vanish():
    z = Tensor(np.full((3, 2), 1e6))
    assert float(entropy_reg(z, [(0, 3)]).data) == pytest.approx(0.0, abs=1e-12)


def test_entropy_large_negative_latents_stay_finite():
    z = Tensor(np.full((3, 2), -1e6))
    assert float(entropy_reg(z, [(0, 3)]).data) == pytest.approx(0.0, abs=1e-12)


def test_entropy_averages_over_graphs():
    z = Tensor(np.vstack([np.zeros((2, 1)), np.full((4, 1), 1e6)]))
    val = float(entropy_reg(z, [(0, 2), (2, 6)]).data)
    assert val == pytest.approx(0.5 * np.log(0.5) / 2.0, abs=1e-9)


def test_entropy_gradient():
    assert check_entropy_gradient(np.random.default_rng(2)).passed


# ---------------------------------------------------------------------------
# nuclear-norm discrepancy


def test_nwd_identical_inputs_zero():
    p = Tensor(row_stochastic(np.random.default_rng(3), 4, 2))
    assert float(nwd_loss(p, p).data) == pytest.approx(0.0, abs=1e-12)


def test_nwd_onehot_vs_uniform():
    one_hot = np.zeros((4, 2))
    one_hot[:2, 0] = 1.0
    one_hot[2:, 1] = 1.0
    uniform = np.full((4, 2), 0.5)
    # Oracle: numpy SVD on both 4x2 matrices.
    expected = (np.linalg.svd(one_hot, compute_uv=False).sum()
                - np.linalg.svd(uniform, compute_uv=False).sum()) / 4.0
    got = float(nwd_loss(Tensor(one_hot), Tensor(uniform)).data)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx((np.sqrt(8.0) - np.sqrt(2.0)) / 4.0, abs=1e-12)


def test_nwd_identity_matrices():
    eye = Tensor(np.eye(2))
    assert float(nwd_loss(eye, eye).data) == 0.0
    assert float(ad.nuclear_norm(eye).data) == pytest.approx(2.0, abs=1e-12)


def test_nwd_antisymmetric_for_equal_batches():
    rng = np.random.default_rng(4)
    p = Tensor(row_stochastic(rng, 5, 3))
    q = Tensor(row_stochastic(rng, 5, 3))
    assert float(nwd_loss(p, q).data) == pytest.approx(-float(nwd_loss(q, p).data))


def test_nwd_empty_batch_errors():
    p = Tensor(np.zeros((0, 2)))
    q = Tensor(np.full((2, 2), 0.5))
    with pytest.raises(GradaError):
        nwd_loss(p, q)


def test_nwd_gradient():
    assert check_nwd_gradient(np.random.default_rng(5)).passed


# ---------------------------------------------------------------------------
# classification loss


def test_cls_uniform_binary():
    logits = Tensor(np.zeros((3, 2)))
    assert float(cls_loss(logits, np.array([0, 1, 0])).data) == pytest.approx(np.log(2.0))


def test_cls_scalar_example():
    loss = cls_loss(Tensor([[2.0, 0.0]]), np.array([1]))
    assert float(loss.data) == pytest.approx(np.log(1.0 + np.exp(2.0)), abs=1e-12)


def test_cls_confident_limit():
    logits = Tensor(np.array([[500.0, -500.0], [-500.0, 500.0]]))
    assert float(cls_loss(logits, np.array([0, 1])).data) == pytest.approx(0.0, abs=1e-12)


def test_cls_rejects_out_of_range_labels():
    with pytest.raises(GradaError):
        cls_loss(Tensor(np.zeros((2, 2))), np.array([0, 2]))
    with pytest.raises(GradaError):
        cls_loss(Tensor(np.zeros((2, 2))), np.array([-1, 0]))


# ---------------------------------------------------------------------------
# total objective


def test_total_all_disabled_is_zero():
    total = total_objective(None, None, None, None, 1.0)
    assert float(total.data) == 0.0
    assert backward(total) == {}


def test_total_lambda_zero_ignores_entropy():
    cls = Tensor(1.5)
    ent = Tensor(123.0)
    total = total_objective(cls, None, ent, None, 0.0)
    assert float(total.data) == pytest.approx(1.5)


def test_total_combination_signs():
    total = total_objective(Tensor(2.0), Tensor(0.5), Tensor(-0.3), Tensor(0.1), 2.0)
    assert float(total.data) == pytest.approx(2.0 - 0.5 + 2.0 * (-0.3) + 0.1)


def test_total_gradient_with_adversarial_wiring():
    result = check_total_objective_gradient(np.random.default_rng(6))
    assert result.passed, result.line()


# ---------------------------------------------------------------------------
# correlation diagnostics


def test_diagnostics_uniform():
    d = class_correlation_diagnostics(np.full((4, 2), 0.5))
    assert d.intra == pytest.approx(2.0, abs=1e-12)
    assert d.inter == pytest.approx(2.0, abs=1e-12)
    assert d.nuclear == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_diagnostics_onehot_balanced():
    p = np.zeros((4, 2))
    p[:2, 0] = 1.0
    p[2:, 1] = 1.0
    d = class_correlation_diagnostics(p)
    assert d.intra == pytest.approx(4.0, abs=1e-12)
    assert d.inter == pytest.approx(0.0, abs=1e-12)
    assert d.nuclear == pytest.approx(np.sqrt(8.0), abs=1e-12)


def test_diagnostics_identity_sums_to_batch():
    rng = np.random.default_rng(7)
    for _ in range(30):
        b, k = rng.integers(2, 9), rng.integers(2, 5)
        d = class_correlation_diagnostics(row_stochastic(rng, b, k))
        assert d.intra + d.inter == pytest.approx(b, abs=1e-9)
        assert d.intra == pytest.approx(d.frob ** 2, abs=1e-9)


def test_frobenius_nuclear_sandwich():
    rng = np.random.default_rng(8)
    for _ in range(30):
        b, k = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        p = row_stochastic(rng, b, k)
        d = class_correlation_diagnostics(p)
        assert d.frob - 1e-12 <= d.nuclear <= np.sqrt(min(b, k)) * d.frob + 1e-12


def test_onehot_maximizes_nuclear_norm_grid_search():
    # Exhaustive search over row-stochastic 4x2 matrices on an 11-point grid
    # per row: the nuclear norm peaks at sqrt(b*k) for balanced one-hot rows
    # and equals sqrt(b/k) for uniform rows.
    grid = np.linspace(0.0, 1.0, 11)
    best = 0.0
    for combo in itertools.product(grid, repeat=4):
        p = np.column_stack([combo, 1.0 - np.asarray(combo)])
        nuc = np.linalg.svd(p, compute_uv=False).sum()
        assert nuc <= np.sqrt(8.0) + 1e-9
        best = max(best, nuc)
    assert best == pytest.approx(np.sqrt(8.0), abs=1e-9)
    uniform = np.full((4, 2), 0.5)
    assert np.linalg.svd(uniform, compute_uv=False).sum() == pytest.approx(
        np.sqrt(2.0), abs=1e-9)
