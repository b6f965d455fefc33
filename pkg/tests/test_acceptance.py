"""Acceptance suite: one PASS/FAIL line per criterion, collected at the end of the run.

Image-dataset criteria read the standard IDX files from ``$DPLLM_DATA_DIR/mnist``
and ``$DPLLM_DATA_DIR/fashion-mnist`` (default ``<repo>/data``).  When the files
are absent those criteria fail with a "dataset unavailable" line; they are
never skipped or replaced by a different dataset.
"""

import itertools
import math

import numpy as np
import pytest

from dpllm import accountant as A
from dpllm import data as D
from dpllm import gradients as G
from dpllm import interpret as I
from dpllm.dp_optimizer import TrainConfig, accuracy_of, noisy_step, steps_per_epoch, train
from dpllm.evaluation import ModelSpec, sweep
from dpllm.model import forward, init_params, predict
from dpllm.projection import generate

from conftest import data_root, onehot

MNIST_Q = 500 / 60000
MNIST_STEPS = 20 * 120
_trained = {}


def image_data(name):
    root = data_root() / name
    tr, te = D.find_idx_pair(root, "train"), D.find_idx_pair(root, "test")
    if tr is None or te is None:
        return None, f"dataset unavailable: no IDX files under {root}"
    train_set = D.load_idx(*tr, num_classes=10)
    return (train_set, D.load_idx(*te, num_classes=10)), ""


def mnist_config(seed, sigma=1.3, dp=True):
    return TrainConfig(batch_size=500, epochs=20, learning_rate=0.001, lr_decay=0.8, lr_decay_period=5,
                       optimizer="adam", dp_enabled=dp, clip=0.001, noise_multiplier=sigma, delta=1e-5, seed=seed)


def train_image_model(name, train_set, test_set, seed, sigma, beta=1 / 30, M=30, P=300, dp=True):
    key = (name, seed, sigma, beta, M, P, dp)
    if key not in _trained:
        params = init_params(10, M, train_set.dim, P, beta, seed=seed)
        proj = params.projections()
        params, report = train(train_set, params, mnist_config(seed, sigma, dp), projections=proj)
        _trained[key] = (params, proj, accuracy_of(params, proj, test_set), report)
    return _trained[key]


# --- 1-3: image benchmarks --------------------------------------------------

@pytest.mark.slow
def test_criterion_1_mnist_private_accuracy(criterion):
    predicted = A.compute_epsilon(MNIST_Q, 1.3, MNIST_STEPS, 1e-5)
    sets, why = image_data("mnist")
    if sets is None:
        criterion(1, False, f"{why} (accountant alone gives eps={predicted:.3f} for this schedule)")
    runs = [train_image_model("mnist", *sets, seed, 1.3) for seed in range(3)]
    acc = float(np.mean([r[2] for r in runs]))
    eps = [r[3].epsilon for r in runs]
    ok = acc >= 0.925 and all(1.8 <= e <= 2.2 for e in eps)
    criterion(1, ok, f"mean accuracy {acc:.4f} (need >= 0.925), ledger eps {eps} (need in [1.8, 2.2])")


@pytest.mark.slow
def test_criterion_2_mnist_higher_privacy(criterion):
    sigma = A.calibrate_sigma(MNIST_Q, MNIST_STEPS, 1e-5, 0.5)
    sets, why = image_data("mnist")
    if sets is None:
        criterion(2, False, f"{why} (calibrated sigma={sigma:.4f} for eps=0.5)")
    runs = [train_image_model("mnist", *sets, seed, sigma) for seed in range(3)]
    acc = float(np.mean([r[2] for r in runs]))
    criterion(2, acc >= 0.90, f"sigma={sigma:.4f}, mean accuracy {acc:.4f} (need >= 0.900)")


@pytest.mark.slow
def test_criterion_3_fashion_mnist(criterion):
    sigma_half = A.calibrate_sigma(MNIST_Q, MNIST_STEPS, 1e-5, 0.5)
    sets, why = image_data("fashion-mnist")
    if sets is None:
        criterion(3, False, why)
    acc2 = float(np.mean([train_image_model("fashion", *sets, s, 1.3, beta=1.0)[2] for s in range(3)]))
    acc05 = float(np.mean([train_image_model("fashion", *sets, s, sigma_half, beta=1.0)[2] for s in range(3)]))
    criterion(3, acc2 >= 0.785 and acc05 >= 0.80,
              f"eps=2: {acc2:.4f} (need >= 0.785); eps=0.5: {acc05:.4f} (need >= 0.800)")


# --- 4-5: accountant --------------------------------------------------------

def test_criterion_4a_accountant_mnist_golden(criterion):
    eps = A.compute_epsilon(MNIST_Q, 1.3, MNIST_STEPS, 1e-5)
    criterion("4a", abs(eps / 2.0 - 1) <= 0.10, f"q=500/60000 sigma=1.3 T=2400: eps={eps:.4f} (need 2.0 +- 10%)")


def test_criterion_4b_accountant_medical_golden(criterion):
    q = 256 / 100140
    steps = 20 * steps_per_epoch(100140, TrainConfig(batch_size=256))
    eps = A.compute_epsilon(q, 1.25, steps, 2e-5)
    criterion("4b", abs(eps / 1.5 - 1) <= 0.15,
              f"q=256/100140 sigma=1.25 T={steps}: eps={eps:.4f} (need 1.5 +- 15%)")


def test_criterion_5_dominates_linear_composition(criterion):
    worst = 0.0
    failures = []
    grid = list(itertools.product([0.001, 0.01, 0.05], [0.8, 1.3, 4.0], [100, 1000, 10000]))
    for q, sigma, T in grid:
        ma = A.compute_epsilon(q, sigma, T, 1e-5)
        lin = A.linear_composition_epsilon(q, sigma, T, 1e-5)
        worst = max(worst, ma / lin)
        if not ma <= lin:
            failures.append((q, sigma, T, ma, lin))
    criterion(5, not failures and len(grid) == 27,
              f"{27 - len(failures)}/27 grid points with moments eps <= linear composition eps; "
              f"largest ratio {worst:.3g}")


# --- 6-9: numerical invariants ----------------------------------------------

def test_criterion_6_gradient_oracle(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        K, M, Dm, P = (int(v) for v in rng.integers([2, 1, 2, 1], [6, 5, 10, 8]))
        P = min(P, Dm)
        params = init_params(K, M, Dm, P, float(rng.uniform(0.1, 3)), seed=int(rng.integers(2**31)))
        params = params.with_flat(rng.normal(0, 0.7, size=params.num_params))
        proj = params.projections()
        x = rng.normal(size=Dm)
        y = onehot(int(rng.integers(K)), K)
        analytic = G.per_example_grad(params, proj, x, y).flat()
        numeric = G.finite_difference_grad(params, proj, x, y, step=1e-5)
        worst = max(worst, np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic))
    criterion(6, worst < 1e-5, f"max relative error ||analytic - fd|| / ||analytic|| over 100 draws = {worst:.2e}")


def closed_form_logistic(W, b, x, k):
    """Multinomial logistic regression written independently of the model code."""
    logits = W @ x + b
    top = logits.max()
    lse = top + math.log(math.fsum(np.exp(logits - top)))
    p = np.exp(logits - lse)
    resid = p - onehot(k, len(b))
    return lse - logits[k], np.concatenate([np.outer(resid, x), resid[:, None]], axis=1), int(np.argmax(logits)), p


def test_criterion_7_logistic_regression_collapse(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    agree = 0
    trials = 0
    for projected in (False, True):
        for _ in range(50):
            K, Dm = int(rng.integers(2, 11)), int(rng.integers(2, 30))
            P = int(rng.integers(1, Dm + 1)) if projected else None
            base = init_params(K, 1, Dm, P, float(rng.uniform(0.05, 5)), seed=int(rng.integers(2**31)))
            params = base.with_flat(rng.normal(0, 1, size=base.num_params))
            proj = params.projections()
            x = rng.normal(size=Dm)
            k = int(rng.integers(K))
            z = proj.project(0, x)  # logistic regression on the (projected) features
            loss, grad, pred, probs = closed_form_logistic(params.filters[:, 0], params.biases[:, 0], z, k)
            ours = G.per_example_grad(params, proj, x, onehot(k, K)).flat()
            worst = max(worst, abs(G.loss(params, proj, x, onehot(k, K)) - loss),
                        np.max(np.abs(ours - grad.reshape(-1))),
                        np.max(np.abs(forward(params, proj, x).probs - probs)))
            agree += predict(params, proj, x) == pred
            trials += 1
    criterion(7, worst <= 1e-12 and agree == trials,
              f"max abs deviation in loss/gradient/probabilities {worst:.2e}; predictions agree {agree}/{trials}")


def test_criterion_8_clipping_and_noise(criterion):
    rng = np.random.default_rng(8)
    C = 0.001
    violations = 0
    for _ in range(10_000):
        scale = C * 10 ** rng.uniform(-2, 2)
        h = G.PerExampleGrad.from_flat(rng.normal(size=24) * scale / math.sqrt(24), 2, 3, 3)
        c = G.clip(h, C)
        n, cn = h.norm(), c.norm()
        bound = cn <= C * (1 + 1e-12)
        equality = abs(cn - C) <= 1e-12 * C
        violations += not (bound and (equality == (n >= C) or (n < C and cn == n)))
    # noise: 10^4 steps from one state, SGD with unit rate exposes the gradient
    params = init_params(2, 2, 3, 2, 1.0, seed=8).with_flat(rng.normal(size=12))
    proj = params.projections()
    X, labels = rng.normal(size=(4, 3)), rng.integers(0, 2, size=4)
    sigma, L = 1.3, 4
    cfg = TrainConfig(batch_size=L, clip=C, noise_multiplier=sigma, optimizer="sgd", learning_rate=1.0)
    noise_rng = np.random.default_rng(88)
    deltas = np.array([params.flat() - noisy_step(params, proj, X, labels, cfg, noise_rng)[0].flat()
                       for _ in range(10_000)])
    ratio = deltas.std(axis=0) / (sigma * C / L)
    worst = float(np.max(np.abs(ratio - 1)))
    criterion(8, violations == 0 and worst < 0.03,
              f"clip violations {violations}/10000; worst per-coordinate noise std deviation {worst:.3%} (need < 3%)")


def test_criterion_9_random_projection_distances(criterion):
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(20, 784))
    proj = generate(9, 1, 300, 784)
    low = proj.project_batch(pts)[:, 0]
    ratios = [np.linalg.norm(low[i] - low[j]) / np.linalg.norm(pts[i] - pts[j])
              for i, j in itertools.combinations(range(20), 2)]
    frac = float(np.mean([(0.65 <= r <= 1.35) for r in ratios]))
    criterion(9, frac >= 0.95, f"{frac:.1%} of 190 pairwise distances within factor 1 +- 0.35 (need >= 95%)")


# --- 10-12: trade-offs, medical pipeline, explanations ----------------------

@pytest.mark.slow
def test_criterion_10_tradeoff_shape(criterion):
    sets, why = image_data("mnist")
    if sets is None:
        criterion(10, False, why)
    train_set, test_set = sets
    nonpriv = sweep("num_filters", [1, 5, 30], train_set, test_set, ModelSpec(), mnist_config(0, dp=False), 5)
    priv = sweep("num_filters", [5, 30, 100], train_set, test_set, ModelSpec(), mnist_config(0), 5)
    dims = sweep("proj_dim", [50, 300], train_set, test_set, ModelSpec(), mnist_config(0), 5)
    mono = all(b.mean >= a.mean - 2 * max(a.std, b.std) for a, b in zip(nonpriv.points, nonpriv.points[1:]))
    pm = {p.value: p.mean for p in priv.points}
    drop = pm[100] < max(pm[5], pm[30])
    d50, d300 = dims.points
    dim_ok = d300.mean >= d50.mean
    criterion(10, mono and drop and dim_ok,
              f"non-private M sweep {[round(p.mean, 4) for p in nonpriv.points]} nondecreasing={mono}; "
              f"private M=100 {pm[100]:.4f} vs best mid {max(pm[5], pm[30]):.4f}; "
              f"private D'=50 {d50.mean:.4f} vs D'=300 {d300.mean:.4f}")


def test_criterion_11_medical_pipeline(criterion):
    # powerset bijection on {0,1}^3
    cube = np.array(list(itertools.product([0, 1], repeat=3)))
    dense, mask, report = D.powerset_transform(cube, 8)
    bijection = mask.all() and sorted(np.array(report.dense_to_original)[dense].tolist()) == list(range(8))

    X, bits = D.synthetic_medical(n=110_300, seed=0)
    labels, keep, rep = D.powerset_transform(bits, 4)
    documented = float(np.sort(D.SYNTHETIC_CLASS_SHARES)[-4:].sum())
    kept = keep.mean()
    fraction_ok = abs(kept - documented) < 0.005

    raw_train, raw_test = D.split(D.Dataset(X[keep], labels, 4), 0.1, seed=0)
    std = D.Standardizer.fit(raw_train.features)  # training rows only
    train_set = D.Dataset(std.transform(raw_train.features), raw_train.labels, 4)
    test_set = D.Dataset(std.transform(raw_test.features), raw_test.labels, 4)
    majority = np.bincount(test_set.labels).max() / len(test_set)

    def run(dp):
        params = init_params(4, 2, 62, None, 1.0, seed=0)
        cfg = TrainConfig(batch_size=256, epochs=20, learning_rate=0.01, optimizer="adam", dp_enabled=dp,
                          clip=0.001, noise_multiplier=1.25, delta=2e-5, seed=0)
        trained, report = train(train_set, params, cfg)
        return accuracy_of(trained, trained.projections(), test_set), report

    acc_np, _ = run(False)
    acc_dp, rep_dp = run(True)
    eps_ok = rep_dp.epsilon is not None and abs(rep_dp.epsilon / 1.5 - 1) <= 0.15
    beats = acc_np >= majority + 0.10
    criterion(11, bijection and fraction_ok and eps_ok and beats,
              f"bijection={bijection}; kept {kept:.4f} vs documented {documented:.4f}; "
              f"DP run completed with eps={rep_dp.epsilon:.4f} over {rep_dp.steps} steps (need 1.5 +- 15%); "
              f"non-private accuracy {acc_np:.4f} vs majority {majority:.4f} (need +0.10); DP accuracy {acc_dp:.4f}")


@pytest.mark.slow
def test_criterion_12_explanation_consistency_mnist(criterion):
    sets, why = image_data("mnist")
    if sets is None:
        criterion(12, False, why)
    _, test_set = sets
    params, proj, _, _ = train_image_model("mnist", *sets, 0, 1.3)
    worst = 0.0
    for i, x in enumerate(test_set.features):
        rep = I.local_explanation(params, proj, x, 3, i)
        worst = max(worst, abs(rep.weighted_filter @ x + rep.weighted_bias - rep.scores[rep.predicted_class]))
    criterion(12, worst <= 1e-9, f"max |weighted filter . x + bias - f_k(x)| over {len(test_set)} inputs = {worst:.2e}")

