"""Acceptance criteria 1-11, each at its stated tolerance and runtime budget.

Every test records a one-line PASS/FAIL summary that is printed at the end
of the session (see ``conftest.py``).  Criterion 9 uses the MNIST digits
subset bundled with mlxtend.
"""

import math
import time

import numpy as np
import pytest

from glik.bayes_linear import FeatureMap, fit_batch, init_posterior, update_one
from glik.data import Dataset, four_blobs, ionosphere_like, separable_binary
from glik.evalharness import (
    StreamConfig,
    accuracy,
    active_learning_run,
    dirichlet_construction_check,
    nll,
    steps_to_reach,
    streaming_run,
)
from glik.gp import EQKernel, HeteroGP, landscape, landscape_argmax, log_marginal_likelihood, log_marginal_likelihood_grad
from glik.likelihood_approx import ApproxConfig
from glik.matching import (
    BetaLogit,
    ChiSqLog,
    ExpLog,
    GammaLog,
    InvGammaLog,
    MatchMethod,
    kl_q_to_p,
    match,
    numeric_mode_hessian,
    numeric_moments,
    variational_numeric,
)
from glik.mlp import LossKind, SGDConfig, init_mlp, loss_and_grad, predict_proba_point, train
from glik.special_fns import digamma, trigamma

from oracles import beta_logit_variational_grid

FAMILIES = {
    "GammaLog": lambda a, b: GammaLog(a, b),
    "InvGammaLog": lambda a, b: InvGammaLog(a, b),
    "ExpLog": lambda a, b: ExpLog(a),
    "ChiSqLog": lambda a, b: ChiSqLog(a),
    "BetaLogit": lambda a, b: BetaLogit(a, b),
}
N_DRAWS = 200
TOY_VARIANTS = ["exact", "gauss", "moment-ori", "moment", "laplace", "variational"]


def _log_uniform(rng, size, lo=0.1, hi=50.0):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


@pytest.fixture(scope="module")
def draws():
    """Criterion 1 draws: matches and oracle errors per family, plus elapsed time."""
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    out = {}
    for name, make in FAMILIES.items():
        rows = []
        for a, b in _log_uniform(rng, (N_DRAWS, 2)):
            d = make(a, b)
            nm, mm = numeric_moments(d), match(d, MatchMethod.MOMENT)
            nl, lm = numeric_mode_hessian(d), match(d, MatchMethod.LAPLACE)
            vm = match(d, MatchMethod.VARIATIONAL)
            if name == "BetaLogit":
                ref_mean, ref_var = beta_logit_variational_grid(a, b)
            else:
                vn = variational_numeric(d)
                ref_mean, ref_var = vn.mean, vn.variance
            rows.append(
                {
                    "density": d,
                    "moment": max(abs(nm.mean - mm.mean), abs(nm.variance - mm.variance)),
                    "laplace": max(abs(nl.mean - lm.mean), abs(nl.variance - lm.variance)),
                    "variational": max(abs(ref_mean - vm.mean), abs(ref_var - vm.variance)),
                    "lap_q": lm,
                    "var_q": vm,
                }
            )
        out[name] = rows
    return out, time.perf_counter() - t0


def test_c01_formula_oracle_agreement(draws, acceptance):
    rows, elapsed = draws
    worst = {
        key: max(r[key] for name, rs in rows.items() for r in rs if key != "variational" or name != "BetaLogit")
        for key in ("moment", "laplace", "variational")
    }
    beta = max(r["variational"] for r in rows["BetaLogit"])
    ok = (
        worst["moment"] <= 1e-6
        and worst["laplace"] <= 1e-8
        and worst["variational"] <= 1e-4
        and beta <= 2e-3
        and elapsed < 60
    )
    detail = (
        f"moment {worst['moment']:.1e}, laplace {worst['laplace']:.1e}, "
        f"variational {worst['variational']:.1e}, beta grid {beta:.1e}, {elapsed:.0f}s"
    )
    acceptance(1, "formula vs oracle agreement", ok, detail)
    assert worst["moment"] <= 1e-6
    assert worst["laplace"] <= 1e-8
    assert worst["variational"] <= 1e-4
    assert beta <= 2e-3
    assert elapsed < 60


def test_c02_anchored_constants(acceptance):
    q = match(ExpLog(1.0), MatchMethod.MOMENT)
    mean_err, var_err = abs(q.mean + 0.57722), abs(q.variance - 1.64493)
    rng = np.random.default_rng(2)
    offset_err = 0.0
    for alpha, beta in _log_uniform(rng, (100, 2)):
        d = GammaLog(alpha, beta)
        gap = match(d, MatchMethod.VARIATIONAL).mean - match(d, MatchMethod.LAPLACE).mean
        offset_err = max(offset_err, abs(gap + 0.5 / alpha))
    ok = mean_err <= 1e-5 and var_err <= 1e-5 and offset_err <= 1e-12
    acceptance(2, "ExpLog(1) constants and -0.5/alpha offset", ok, f"mean {mean_err:.1e}, var {var_err:.1e}, offset {offset_err:.1e}")
    assert mean_err <= 1e-5 and var_err <= 1e-5
    assert offset_err <= 1e-12


def test_c03_chisq_gamma_identity(acceptance):
    mismatches = []
    for k in (1, 2, 5, 10):
        for method in (MatchMethod.LAPLACE, MatchMethod.VARIATIONAL, MatchMethod.MOMENT):
            a, b = match(ChiSqLog(k), method), match(GammaLog(k / 2, 0.5), method)
            if (a.mean, a.variance) != (b.mean, b.variance):
                mismatches.append((k, method.value))
    acceptance(3, "ChiSqLog(k) == GammaLog(k/2, 1/2)", not mismatches, f"{len(mismatches)} of 12 differ")
    assert not mismatches


def test_c04_kl_ordering(draws, acceptance):
    rows, _ = draws
    violations, worst = 0, -math.inf
    for name in ("GammaLog", "ExpLog", "InvGammaLog", "ChiSqLog"):
        for r in rows[name]:
            gap = kl_q_to_p(r["var_q"], r["density"]) - kl_q_to_p(r["lap_q"], r["density"])
            worst = max(worst, gap)
            violations += gap > 1e-9
    acceptance(4, "KL(variational) <= KL(laplace) + 1e-9", violations == 0, f"{violations} violations, max gap {worst:.1e}")
    assert violations == 0


def test_c05_conjugate_updates(acceptance):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    seq_err = ridge_err = 0.0
    for _ in range(20):
        N, D, K = int(rng.integers(1, 201)), int(rng.integers(1, 21)), int(rng.integers(1, 5))
        prior = float(rng.uniform(0.5, 3.0))
        X = rng.standard_normal((N, D))
        Y = rng.standard_normal((N, K))
        V = rng.uniform(0.1, 3.0, (N, K))
        s0 = init_posterior(D, K, prior)
        batch = fit_batch(s0, X, (Y, V))
        for _ in range(5):
            s = s0
            for n in rng.permutation(N):
                s = update_one(s, X[n], (Y[n], V[n]))
            seq_err = max(seq_err, np.abs(s.means - batch.means).max(), np.abs(s.covs - batch.covs).max())
        v = float(rng.uniform(0.1, 3.0))
        hom = fit_batch(s0, X, (Y, np.full((N, K), v)))
        ridge = np.linalg.solve(X.T @ X + (v / prior) * np.eye(D), X.T @ Y).T
        ridge_err = max(ridge_err, np.abs(hom.means - ridge).max())
    elapsed = time.perf_counter() - t0
    ok = seq_err <= 1e-8 and ridge_err <= 1e-9 and elapsed < 60
    acceptance(5, "sequential == batch, mean == ridge", ok, f"seq {seq_err:.1e}, ridge {ridge_err:.1e}, {elapsed:.0f}s")
    assert seq_err <= 1e-8 and ridge_err <= 1e-9
    assert elapsed < 60


def test_c06_dirichlet_construction(acceptance):
    worst = 0.0
    for alpha in ((1.0, 1.0), (2.0, 3.0, 5.0), (0.1, 0.1)):
        rep = dirichlet_construction_check(alpha, 100_000, rng_seed=6)
        worst = max(worst, float(np.max(np.abs(rep.mean - np.array(alpha) / sum(alpha)) / rep.mean_stderr)))
    acceptance(6, "Dirichlet via normalised Gammas", worst <= 3, f"max |z| of means {worst:.2f}")
    assert worst <= 3


def test_c07_toy_four_class(acceptance):
    t0 = time.perf_counter()
    train_set, test_set = four_blobs(100, 0.6, rng_seed=0), four_blobs(100, 0.6, rng_seed=1)
    g = np.linspace(-4.5, 4.5, 61)
    grid = np.array([(a, b) for b in g for a in g])
    train_acc, regions, test_nll = {}, {}, {}
    for name in TOY_VARIANTS:
        net, hist = train(
            init_mlp([2, 64, 64, 4], rng_seed=0), train_set.features, train_set.labels, LossKind.parse(name, 0.1), SGDConfig(), 300, 0
        )
        train_acc[name] = hist.accuracy[-1]
        regions[name] = len(set(np.argmax(predict_proba_point(net, grid), axis=1)))
        p = predict_proba_point(net, test_set.features)
        test_nll[name] = nll(p, test_set.labels)
        assert accuracy(predict_proba_point(net, train_set.features), train_set.labels) == pytest.approx(hist.accuracy[-1])
    elapsed = time.perf_counter() - t0
    matched = [m for m in TOY_VARIANTS if m not in ("exact", "gauss")]
    ok = (
        min(train_acc.values()) >= 0.95
        and all(r == 4 for r in regions.values())
        and all(test_nll[m] <= test_nll["gauss"] for m in matched)
        and elapsed < 180
    )
    detail = (
        f"min train acc {min(train_acc.values()):.3f}, gauss NLL {test_nll['gauss']:.3f}, "
        f"max matched NLL {max(test_nll[m] for m in matched):.3f}, {elapsed:.0f}s"
    )
    acceptance(7, "toy four-class reproduction", ok, detail)
    assert min(train_acc.values()) >= 0.95
    assert all(r == 4 for r in regions.values())
    assert all(test_nll[m] <= test_nll["gauss"] for m in matched)
    assert elapsed < 180


def test_c08_gp_landscape_direction(acceptance):
    t0 = time.perf_counter()
    ds = ionosphere_like(rng_seed=0)
    lls, lvs = np.linspace(-2.0, 4.0, 20), np.linspace(-2.0, 6.0, 20)
    best = {}
    for method in ("laplace", "variational", "moment-ori"):
        values = landscape(ds.features, ds.labels, 2, lls, lvs, ApproxConfig(method, 0.1))
        best[method] = landscape_argmax(lls, lvs, values)[0]
    elapsed = time.perf_counter() - t0
    ok = best["laplace"] >= best["variational"] and best["laplace"] >= best["moment-ori"] and elapsed < 180
    detail = ", ".join(f"{m} {v:.2f}" for m, v in best.items()) + f", {elapsed:.0f}s"
    acceptance(8, "Laplace argmax log-lengthscale is largest", ok, detail)
    assert best["laplace"] >= best["variational"]
    assert best["laplace"] >= best["moment-ori"]
    assert elapsed < 180


def test_c09_streaming_direction(acceptance):
    mnist = pytest.importorskip("mlxtend.data")
    t0 = time.perf_counter()
    X, y = mnist.mnist_data()
    ds = Dataset(X / 255.0, y, 10)
    final = {m: [] for m in ("laplace", "variational", "moment-ori", "adf")}
    for seed in range(5):
        stream, test = ds.split(4000, rng_seed=seed)
        fmap = FeatureMap.random_relu(ds.D, 512, seed=seed)
        for method in final:
            rec = streaming_run(stream, test, method, fmap, StreamConfig(cadence=1000), rng_seed=seed)[-1]
            final[method].append((rec.test_accuracy, rec.test_loglik))
    elapsed = time.perf_counter() - t0
    acc = {m: np.mean([a for a, _ in v]) for m, v in final.items()}
    ll = {m: np.mean([b for _, b in v]) for m, v in final.items()}
    ok = (
        ll["moment-ori"] >= ll["laplace"]
        and ll["variational"] >= ll["laplace"]
        and acc["adf"] <= acc["variational"]
        and elapsed < 300
    )
    detail = (
        f"loglik mo {ll['moment-ori']:.3f} / var {ll['variational']:.3f} / lap {ll['laplace']:.3f}, "
        f"acc adf {acc['adf']:.3f} / var {acc['variational']:.3f}, {elapsed:.0f}s"
    )
    acceptance(9, "streaming direction (MNIST subset)", ok, detail)
    assert ll["moment-ori"] >= ll["laplace"]
    assert ll["variational"] >= ll["laplace"]
    assert acc["adf"] <= acc["variational"]
    assert elapsed < 300


def test_c10_active_learning(acceptance):
    t0 = time.perf_counter()
    steps = {"entropy": [], "random": []}
    for seed in range(20):
        pool, test = separable_binary(1500, rng_seed=seed).split(1000, rng_seed=seed)
        for acq in steps:
            rec = active_learning_run(pool, test, 2, 50, "variational", seed, acq)
            reached = steps_to_reach(rec, 0.9)
            # never reaching the threshold within 50 steps counts as 51
            steps[acq].append(51 if reached is None else reached)
    elapsed = time.perf_counter() - t0
    mean = {k: float(np.mean(v)) for k, v in steps.items()}
    ok = mean["entropy"] <= mean["random"] and elapsed < 60
    acceptance(10, "entropy selection no slower than random", ok, f"entropy {mean['entropy']:.2f}, random {mean['random']:.2f} steps, {elapsed:.0f}s")
    assert mean["entropy"] <= mean["random"]
    assert elapsed < 60


def _mlp_relative_error(kind, rng):
    net = init_mlp([3, 5, 4] if not kind.binary else [3, 5, 1], rng_seed=int(rng.integers(1 << 30)))
    X = rng.standard_normal((7, 3))
    y = rng.integers(0, 2 if kind.binary else 4, 7)
    _, g = loss_and_grad(net, X, y, kind, 0.01)
    theta = net.flat()
    fd = np.empty_like(theta)
    h = 1e-5
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fp = loss_and_grad(net.with_flat(theta + e), X, y, kind, 0.01)[0]
        fm = loss_and_grad(net.with_flat(theta - e), X, y, kind, 0.01)[0]
        fd[i] = (fp - fm) / (2 * h)
    return float(np.linalg.norm(g.flat() - fd) / max(np.linalg.norm(fd), 1e-12))


def test_c11_gradient_and_numeric_hygiene(acceptance):
    rng = np.random.default_rng(11)
    kinds = [LossKind.exact(), LossKind.gauss()]
    kinds += [LossKind.parse(m, 0.1) for m in ("moment-ori", "moment", "laplace", "variational")]
    kinds += [LossKind.matched(ApproxConfig(m, 0.1, 0.1), binary=True) for m in ("moment", "laplace", "variational")]
    mlp_err = max(_mlp_relative_error(k, rng) for k in kinds for _ in range(3))

    gp_err = 0.0
    for _ in range(5):
        N = 25
        X = rng.standard_normal((N, 2))
        gp = HeteroGP(X, rng.standard_normal((N, 3)), rng.uniform(0.1, 1.0, (N, 3)), EQKernel.from_log(*rng.uniform(-1, 1, 2)))
        _, grad = log_marginal_likelihood_grad(gp)
        h = 1e-5
        lp = gp.kernel.log_params
        fd = np.array(
            [
                (
                    log_marginal_likelihood(gp.with_kernel(EQKernel.from_log(*(lp + h * e))))
                    - log_marginal_likelihood(gp.with_kernel(EQKernel.from_log(*(lp - h * e))))
                )
                / (2 * h)
                for e in np.eye(2)
            ]
        )
        gp_err = max(gp_err, float(np.max(np.abs(grad - fd) / np.abs(fd))))

    x = _log_uniform(rng, 500, 1e-3, 1e3)
    di = np.max(np.abs(digamma(x + 1) - digamma(x) - 1 / x) / np.maximum(1.0, np.abs(digamma(x + 1))))
    tri = np.max(np.abs(trigamma(x + 1) - trigamma(x) + 1 / x**2) / np.maximum(1.0, np.abs(trigamma(x))))
    rec_err = float(max(di, tri))
    ok = mlp_err <= 1e-4 and gp_err <= 1e-5 and rec_err <= 1e-9
    acceptance(11, "gradient and recurrence checks", ok, f"mlp {mlp_err:.1e}, gp {gp_err:.1e}, recurrences {rec_err:.1e}")
    assert mlp_err <= 1e-4
    assert gp_err <= 1e-5
    assert rec_err <= 1e-9
