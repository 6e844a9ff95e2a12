"""Numeric self-checks: finite-difference gradient suites, SVD and nuclear
norm oracles, a Monte Carlo check of the closed-form KL, augmentation
statistics, and the prediction-matrix correlation identities.

Each check returns its measured error so failures are diagnosable; the CLI
prints one line per check and exits nonzero if any fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses, model as mdl
from .autodiff import Tensor
from .graphs import AugmentConfig, Graph, augment_adjacency

FD_STEP = 1e-5
GRAD_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    error: float
    threshold: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name}: measured error {self.error:.3e} "
                f"(threshold {self.threshold:.1e})")


def finite_difference_gradient(fn, tensor: Tensor, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` with respect to one
    leaf tensor's entries. ``fn`` must rebuild its graph from the live leaf
    data on every call."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fn().item()
        flat[i] = orig - h
        f_minus = fn().item()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def gradient_check(fn, tensors, h: float = FD_STEP) -> float:
    """Worst relative error between tape gradients and central differences
    over the given leaf tensors."""
    grads = ad.backward(fn())
    worst = 0.0
    for t in tensors:
        entry = grads.get(t.tid)
        analytic = entry.data if entry is not None else np.zeros_like(t.data)
        fd = finite_difference_gradient(fn, t, h)
        scale = max(1.0, float(np.abs(fd).max()))
        worst = max(worst, float(np.abs(analytic - fd).max()) / scale)
    return worst


def _result(name, error, threshold) -> CheckResult:
    return CheckResult(name, error < threshold, float(error), threshold)


# ---------------------------------------------------------------------------
# individual checks


def check_primitive_gradients(rng: np.random.Generator) -> CheckResult:
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    c = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    mask = rng.random((3, 4)) < 0.3

    cases = {
        "matmul": lambda: ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))),
        "add_mul_div": lambda: ad.tsum(ad.div(ad.mul(a, c), ad.add(pos, 1.0))),
        "sub_neg": lambda: ad.tsum(ad.sub(a, ad.neg(c))),
        "exp_log": lambda: ad.tsum(ad.log(ad.add(ad.exp(a), 1.0))),
        "sigmoid": lambda: ad.tsum(ad.sigmoid(ad.mul(a, 3.0))),
        "softplus": lambda: ad.tsum(ad.softplus(a)),
        "relu_family": lambda: ad.add(
            ad.tsum(ad.add(ad.relu(a), ad.leaky_relu(c, 0.2))),
            ad.tsum(ad.elu(ad.matmul(a, b)))),
        "softmax": lambda: ad.tsum(ad.mul(ad.softmax(a, axis=1), c)),
        "logsumexp": lambda: ad.tsum(ad.logsumexp(a, axis=1)),
        "mean_sum": lambda: ad.add(ad.tmean(ad.mul(a, a)), ad.tsum(ad.tmean(c, axis=0))),
        "transpose": lambda: ad.tsum(ad.mul(ad.transpose(a), b)),
        "concat_slice": lambda: ad.tsum(ad.mul(
            ad.slice_rows(ad.concat([a, c], axis=0), 1, 5), 2.0)),
        "masked_fill": lambda: ad.tsum(ad.sigmoid(ad.masked_fill(a, mask, -4.0))),
        "clamp": lambda: ad.tsum(ad.clamp(ad.mul(pos, 2.0), 0.0, 100.0)),
    }
    worst = 0.0
    for fn in cases.values():
        worst = max(worst, gradient_check(fn, [a, b, c, pos]))
    return _result("primitive gradients vs finite differences", worst, GRAD_TOL)


def check_softmax_cross_entropy_gradient(rng: np.random.Generator) -> CheckResult:
    logits = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    labels = rng.integers(0, 3, size=5)
    err = gradient_check(lambda: losses.cls_loss(logits, labels), [logits])
    return _result("softmax cross-entropy gradient", err, 1e-6)


def check_elbo_gradient(rng: np.random.Generator) -> CheckResult:
    n, f = 5, 3
    a = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    a[iu] = rng.random(len(iu[0])) < 0.5
    a += a.T
    if a.sum() == 0:
        a[0, 1] = a[1, 0] = 1.0
    # Resample until every decoder pre-activation clears the relu kink by
    # much more than the finite-difference step.
    while True:
        z = Tensor(rng.standard_normal((n, f)), requires_grad=True)
        w0 = Tensor(rng.standard_normal((f, 4)) * 0.5, requires_grad=True)
        w1 = Tensor(rng.standard_normal((4, f)) * 0.5, requires_grad=True)
        if np.abs((z.data @ w0.data) @ w1.data).min() > 1e-3:
            break
    mu = Tensor(rng.standard_normal((n, f)), requires_grad=True)
    log_sigma = Tensor(rng.uniform(-1.0, 0.5, (n, f)), requires_grad=True)
    dec = mdl.DecoderParams(w0, w1)

    def fn():
        _, _, elbo = losses.elbo_loss(mdl.decode(dec, z), a, mu, log_sigma)
        return ad.neg(elbo)

    err = gradient_check(fn, [z, mu, log_sigma, w0, w1])
    return _result("reconstruction+KL objective gradient", err, GRAD_TOL)


def check_entropy_gradient(rng: np.random.Generator) -> CheckResult:
    z = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    err = gradient_check(lambda: losses.entropy_reg(z, [(0, 2), (2, 6)]), [z])
    return _result("entropy regularizer gradient", err, GRAD_TOL)


def check_nwd_gradient(rng: np.random.Generator) -> CheckResult:
    ls = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    lt = Tensor(rng.standard_normal((4, 3)), requires_grad=True)

    def fn():
        return losses.nwd_loss(ad.softmax(ls, axis=1), ad.softmax(lt, axis=1))

    err = gradient_check(fn, [ls, lt])
    return _result("nuclear-norm discrepancy gradient (U V^T)", err, GRAD_TOL)


def check_total_objective_gradient(rng: np.random.Generator) -> CheckResult:
    """Full combined objective with the adversarial wiring active: the
    classifier's gradient must equal d(cls)/dw - d(nwd)/dw and the pooled
    features' gradient must carry +lambda_grl * d(nwd)/d(features)."""
    f, h, k = 3, 4, 2
    cls = mdl.ClassifierParams(
        w1=Tensor(rng.standard_normal((f, h)) * 0.7, requires_grad=True),
        b1=Tensor(rng.standard_normal(h) * 0.1, requires_grad=True),
        w2=Tensor(rng.standard_normal((h, k)) * 0.7, requires_grad=True),
        b2=Tensor(rng.standard_normal(k) * 0.1, requires_grad=True),
    )
    pooled_s = Tensor(rng.standard_normal((5, f)), requires_grad=True)
    pooled_t = Tensor(rng.standard_normal((4, f)), requires_grad=True)
    labels = rng.integers(0, k, size=5)
    lam = 0.7

    tensors = [cls.w1, cls.b1, cls.w2, cls.b2, pooled_s, pooled_t]

    def cls_only():
        logits, _ = mdl.classify(cls, pooled_s)
        return losses.cls_loss(logits, labels)

    def nwd_only():
        _, p_s = mdl.classify(cls, pooled_s)
        _, p_t = mdl.classify(cls, pooled_t)
        return losses.nwd_loss(p_s, p_t)

    def wired():
        logits, _ = mdl.classify(cls, pooled_s)
        nwd = losses.adversarial_nwd(pooled_s, pooled_t, cls, lam)
        return ad.add(losses.cls_loss(logits, labels), nwd)

    g_wired = ad.backward(wired())
    worst = 0.0
    for t in tensors:
        fd_cls = finite_difference_gradient(cls_only, t)
        fd_nwd = finite_difference_gradient(nwd_only, t)
        if t in (pooled_s, pooled_t):
            expected = fd_cls + lam * fd_nwd
        else:
            expected = fd_cls - fd_nwd
        got = g_wired[t.tid].data
        scale = max(1.0, float(np.abs(expected).max()))
        worst = max(worst, float(np.abs(got - expected).max()) / scale)
    return _result("combined objective gradient with adversarial wiring", worst, GRAD_TOL)


def check_grad_reverse_contract(rng: np.random.Generator) -> CheckResult:
    x = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    c = Tensor(rng.standard_normal((3, 2)))
    worst = 0.0
    for lam in (0.0, 0.5, 1.0):
        out = ad.tsum(ad.mul(ad.grad_reverse(x, lam), c))
        if not np.array_equal(ad.grad_reverse(x, lam).data, x.data):
            worst = max(worst, 1.0)
        g = ad.backward(out).get(x.tid)
        expected = -lam * c.data
        worst = max(worst, float(np.abs(g.data - expected).max()))
    # Two reversals with unit strength restore the plain gradient.
    twice = ad.tsum(ad.mul(ad.grad_reverse(ad.grad_reverse(x, 1.0), 1.0), c))
    g2 = ad.backward(twice)[x.tid].data
    worst = max(worst, float(np.abs(g2 - c.data).max()))
    return _result("gradient reversal sign contract", worst, 1e-12)


def check_svd_reconstruction(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(50):
        m = rng.integers(1, 9)
        n = rng.integers(1, 5)
        mat = rng.standard_normal((m, n))
        u, s, v = ad._jacobi_svd(mat)
        rec = u @ np.diag(s) @ v.T
        scale = max(1.0, float(np.linalg.norm(mat)))
        worst = max(worst, float(np.linalg.norm(rec - mat)) / scale)
        if s.size:
            worst = max(worst, float(np.abs(u.T @ u - np.eye(s.size)).max()))
            worst = max(worst, float(np.abs(v.T @ v - np.eye(s.size)).max()))
            if np.any(np.diff(s) > 0) or np.any(s < 0):
                worst = max(worst, 1.0)
    return _result("SVD reconstruction and orthonormality", worst, 1e-10)


def check_nuclear_norm_oracle(rng: np.random.Generator) -> CheckResult:
    """Nuclear norm from the Jacobi SVD against the eigendecomposition of
    M^T M, plus the Frobenius sandwich bounds."""
    worst = 0.0
    for _ in range(100):
        b = rng.integers(1, 9)
        k = rng.integers(1, 5)
        mat = rng.standard_normal((b, k))
        _, s, _ = ad._jacobi_svd(mat)
        nuc = float(s.sum())
        # Gram matrix on the smaller side: same nonzero spectrum, no
        # spurious null-space eigenvalues whose roots would add noise.
        gram = mat.T @ mat if k <= b else mat @ mat.T
        eig = np.linalg.eigh(gram)[0]
        oracle = float(np.sqrt(np.clip(eig, 0.0, None)).sum())
        worst = max(worst, abs(nuc - oracle))
        fro = float(np.linalg.norm(mat))
        r = min(b, k)
        if nuc < fro - 1e-9 or nuc > np.sqrt(r) * fro + 1e-9:
            worst = max(worst, 1.0)
    return _result("nuclear norm vs eigendecomposition oracle", worst, 1e-8)


def check_kl_monte_carlo(rng: np.random.Generator) -> CheckResult:
    """Closed-form Gaussian KL against a 1e5-sample Monte Carlo estimate of
    E_q[log q - log p]."""
    # Ranges keep the KL well away from zero and sigma away from 1, where
    # the estimator's variance peaks relative to the KL itself.
    worst = 0.0
    for _ in range(10):
        mu = rng.uniform(1.3, 2.3)
        log_sigma = rng.uniform(-1.2, -0.2)
        closed = float(losses.gaussian_kl(
            Tensor([[mu]]), Tensor([[log_sigma]])).data)
        sigma = np.exp(log_sigma)
        z = mu + sigma * rng.standard_normal(100_000)
        log_q = -0.5 * np.log(2 * np.pi) - log_sigma - (z - mu) ** 2 / (2 * sigma ** 2)
        log_p = -0.5 * np.log(2 * np.pi) - z ** 2 / 2
        mc = float(np.mean(log_q - log_p))
        worst = max(worst, abs(closed - mc) / abs(closed))
    return _result("closed-form KL vs Monte Carlo", worst, 0.01)


def check_augmentation_statistics(rng: np.random.Generator) -> CheckResult:
    """Empirical per-edge drop and per-pair add frequencies on a fixed
    10-node graph over 1e4 trials."""
    n = 10
    setup = np.random.default_rng(7)
    a = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    a[iu] = setup.random(len(iu[0])) < 0.4
    a += a.T
    g = Graph(a, np.zeros((n, 1)))
    cfg = AugmentConfig(p_add=0.1, p_drop=0.1)
    p_edge = a[iu].sum() / len(iu[0])

    edges = a[iu] == 1.0
    non_edges = ~edges
    dropped = 0.0
    added = 0.0
    trials = 10_000
    for _ in range(trials):
        out = augment_adjacency(g, cfg, rng)
        vals = out[iu]
        dropped += np.sum(vals[edges] == 0.0)
        added += np.sum(vals[non_edges] == 1.0)
    drop_freq = dropped / (trials * edges.sum())
    add_freq = added / (trials * non_edges.sum())
    err = max(abs(drop_freq - cfg.p_drop), abs(add_freq - cfg.p_add * p_edge))
    return _result("augmentation drop/add statistics", err, 0.02)


def check_correlation_identities(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(100):
        b = int(rng.integers(2, 9))
        k = int(rng.integers(2, 5))
        p = rng.random((b, k))
        p = p / p.sum(axis=1, keepdims=True)
        d = losses.class_correlation_diagnostics(p)
        worst = max(worst, abs(d.intra + d.inter - b))
        if d.nuclear < d.frob - 1e-9:
            worst = max(worst, 1.0)
    one_hot = np.zeros((4, 2))
    one_hot[:2, 0] = 1.0
    one_hot[2:, 1] = 1.0
    d = losses.class_correlation_diagnostics(one_hot)
    worst = max(worst, abs(d.inter), abs(d.nuclear - np.sqrt(8.0)))
    uniform = np.full((4, 2), 0.5)
    d = losses.class_correlation_diagnostics(uniform)
    worst = max(worst, abs(d.nuclear - np.sqrt(2.0)))
    return _result("prediction-matrix correlation identities", worst, 1e-9)


# ---------------------------------------------------------------------------
# runner


def _with_corrupted_nuclear_gradient(fn):
    """Run ``fn`` with the nuclear norm's backward scaled by 1.01: a
    negative control proving the gradient checks have teeth."""
    real = ad.nuclear_norm

    def corrupted(m):
        out = real(m)
        bw = out._backward
        if bw is not None:
            out._backward = lambda g: tuple(1.01 * x for x in bw(g))
        return out

    ad.nuclear_norm = corrupted
    try:
        return fn()
    finally:
        ad.nuclear_norm = real


def run_selfcheck(corrupt_nuclear_grad: bool = False, printer=print) -> bool:
    """Run every check, print one line each, return True when all pass."""
    rng = np.random.default_rng(2024)
    checks = [
        check_primitive_gradients,
        check_softmax_cross_entropy_gradient,
        check_elbo_gradient,
        check_entropy_gradient,
        check_nwd_gradient,
        check_total_objective_gradient,
        check_grad_reverse_contract,
        check_svd_reconstruction,
        check_nuclear_norm_oracle,
        check_kl_monte_carlo,
        check_augmentation_statistics,
        check_correlation_identities,
    ]
    all_passed = True
    for check in checks:
        if corrupt_nuclear_grad and check is check_nwd_gradient:
            result = _with_corrupted_nuclear_gradient(lambda: check(rng))
        else:
            result = check(rng)
        printer(result.line())
        all_passed = all_passed and result.passed
    return all_passed
