"""Runtime self-checks: finite-difference gradient checks and metric oracles.

Used by the CLI `selftest` command to validate a build in place. The
pytest suite carries its own independent oracles; this module exists so
a deployed binary can prove its numerics without the test tree.
"""

import numpy as np

from . import nn
from .metrics import ScoredPairs, auc, eer
from .model import Mode, ModelConfig, MultiTaskPpgModel


def finite_difference_grad(f, x, step=1e-3):
    """Central finite differences of scalar f at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


def max_rel_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(build, inputs, tol=1e-4, step=1e-3):
    """Compare autodiff gradients of `build(*inputs)` against finite differences.

    `build` maps Tensors to a Tensor; the check reduces it to a scalar via a
    fixed random weighting so every output element contributes.
    """
    rng = np.random.default_rng(0)
    out = build(*inputs)
    weights = rng.normal(size=out.data.shape)

    def scalar():
        return float(np.sum(build(*inputs).data * weights))

    for t in inputs:
        t.zero_grad()
    out = build(*inputs)
    out.backward(weights)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        num = finite_difference_grad(scalar, t.data, step=step)
        worst = max(worst, max_rel_error(t.grad, num))
    return worst


def run_gradient_suite(n_shapes=3, tol=1e-4, rng_seed=0):
    """Gradient-check every differentiable op on randomized small shapes."""
    rng = np.random.default_rng(rng_seed)
    failures = []

    def check(name, build, inputs, step=1e-3):
        err = gradcheck(build, inputs, tol=tol, step=step)
        if err >= tol:
            failures.append((name, err))

    def T(*shape):
        return nn.Tensor(rng.normal(size=shape), requires_grad=True)

    for _ in range(n_shapes):
        B, C, L = rng.integers(1, 3), int(rng.integers(2, 5)), int(rng.integers(8, 16))
        K = int(rng.integers(1, 4))
        Cout = int(rng.integers(1, 4))
        check(
            "conv1d",
            lambda x, w, b: nn.conv1d(x, w, b, padding="valid"),
            [T(B, C, L), T(Cout, C, K), T(Cout)],
        )
        check("linear", nn.linear, [T(B, L), T(Cout, L), T(Cout)])
        check("relu", nn.relu, [T(B, L)])
        check("sigmoid", nn.sigmoid, [T(B, L)])
        check("global_avg_pool", nn.global_avg_pool, [T(B, C, L)])
        # Fine step: near-ties inside a pooling window flip the argmax under
        # a coarse probe, measuring the wrong element's slope.
        check("maxpool1d", nn.maxpool1d, [T(B, C, L)], step=1e-5)
        check("l2_normalize", nn.l2_normalize, [T(B, L)])
        check("se_block", nn.se_block, [T(B, 4, L), T(2, 4), T(4, 2)])
        target = (rng.uniform(size=(B, L)) > 0.5).astype(float)
        check(
            "bce_loss",
            lambda p, t=target: nn.bce_loss(nn.sigmoid(p), t),
            [T(B, L)],
        )
    return failures


def run_metric_suite(n_sets=50, rng_seed=1):
    """Compare auc/eer against brute-force oracles on random score sets."""
    rng = np.random.default_rng(rng_seed)
    failures = []
    for i in range(n_sets):
        n = int(rng.integers(4, 30))
        scores = np.round(rng.uniform(size=n), 2)  # rounding injects ties
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0], labels[-1] = 0, 1
        sp = ScoredPairs(scores, labels)
        pos, neg = scores[labels == 1], scores[labels == 0]
        brute = np.mean(
            [(p > q) + 0.5 * (p == q) for p in pos for q in neg]
        )
        if abs(auc(sp) - brute) > 1e-12:
            failures.append(("auc", i, auc(sp), float(brute)))
        # Exhaustive threshold scan oracle for EER.
        best = None
        cands = np.concatenate([np.unique(scores), [np.inf]])
        pts = [(np.mean(neg >= t), np.mean(pos < t)) for t in cands]
        for (fa1, fr1), (fa2, fr2) in zip(pts, pts[1:]):
            d1, d2 = fa1 - fr1, fa2 - fr2
            if d1 >= 0 >= d2:
                s = 0.0 if d1 == d2 else d1 / (d1 - d2)
                best = fa1 + s * (fa2 - fa1)
                break
        if best is None or abs(eer(sp) - best) > 1e-9:
            failures.append(("eer", i, eer(sp), best))
    return failures


def run_network_check(tol=1e-4):
    """End-to-end gradient check through a reduced multi-task network."""
    cfg = ModelConfig(
        in_channels=2, input_len=24, bottleneck_channels=4, path_channels=4,
        identity_kernel=5, identity_dilation=2, se_reduction=4, embed_dim=4,
    )
    model = MultiTaskPpgModel(cfg, seed=7)
    rng = np.random.default_rng(3)
    # Jitter every parameter: zero-initialized biases leave relu inputs
    # sitting exactly on the kink, where finite differences measure the
    # subgradient instead of the derivative.
    for p in model.params.values():
        p.data += rng.normal(0.0, 0.05, p.data.shape)
    x = rng.normal(size=(2, 2, 24))
    target = np.array([[1.0], [0.0]])
    # Freeze batchnorm statistics so the finite-difference probe sees a
    # deterministic function of the parameters.
    names = sorted(model.params)

    def loss_value():
        out = model.forward(x, Mode.QUALITY, training=False)
        return float(nn.bce_loss(out, target).data)

    for p in model.params.values():
        p.zero_grad()
    loss = nn.bce_loss(model.forward(x, Mode.QUALITY, training=False), target)
    loss.backward()
    worst = 0.0
    for name in names:
        p = model.params[name]
        if p.grad is None:
            continue
        # Fine step: a coarse probe steps across relu/maxpool kinks in a
        # deep composition and measures the wrong one-sided slope.
        num = finite_difference_grad(loss_value, p.data, step=1e-5)
        worst = max(worst, max_rel_error(p.grad, num))
    return worst if worst >= tol else None


def run_selftest(verbose=print):
    """Full self-check; returns True when everything passes."""
    ok = True
    grad_failures = run_gradient_suite()
    verbose(f"gradient suite: {'PASS' if not grad_failures else f'FAIL {grad_failures}'}")
    ok &= not grad_failures
    net = run_network_check()
    verbose(f"network gradient check: {'PASS' if net is None else f'FAIL ({net:.2e})'}")
    ok &= net is None
    metric_failures = run_metric_suite()
    verbose(
        f"metric oracles: {'PASS' if not metric_failures else f'FAIL {metric_failures}'}"
    )
    ok &= not metric_failures
    return bool(ok)
