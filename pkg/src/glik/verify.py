"""Self-checks against independent numerical oracles.

Each suite returns a list of ``Check`` results; ``run_all`` is what
``glik verify`` executes.  The suites are small enough to run in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bayes_linear import fit_batch, init_posterior, update_one
from .gp import EQKernel, HeteroGP, log_marginal_likelihood, log_marginal_likelihood_grad, predict_latent
from .matching import (
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


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    passed: bool
    detail: str


def _check(suite, name, err, tol):
    return Check(suite, name, bool(err <= tol), f"max error {err:.3g} (tol {tol:g})")


def matching_suite(n_draws: int = 10, rng_seed: int = 0):
    rng = np.random.default_rng(rng_seed)
    out = []
    families = [
        lambda a, b: GammaLog(a, b),
        lambda a, b: InvGammaLog(a, b),
        lambda a, b: ExpLog(a),
        lambda a, b: ChiSqLog(2 * a),
        lambda a, b: BetaLogit(a, b),
    ]
    err_mom = err_lap = err_var = 0.0
    kl_ok = True
    for make in families:
        for _ in range(n_draws):
            a, b = np.exp(rng.uniform(np.log(0.2), np.log(20), size=2))
            d = make(a, b)
            nm = numeric_moments(d)
            mm = match(d, MatchMethod.MOMENT)
            err_mom = max(err_mom, abs(nm.mean - mm.mean), abs(nm.variance - mm.variance))
            nl = numeric_mode_hessian(d)
            lm = match(d, MatchMethod.LAPLACE)
            err_lap = max(err_lap, abs(nl.mean - lm.mean), abs(nl.variance - lm.variance))
            vm = match(d, MatchMethod.VARIATIONAL)
            if not isinstance(d, BetaLogit):
                vn = variational_numeric(d)
                err_var = max(err_var, abs(vn.mean - vm.mean), abs(vn.variance - vm.variance))
            kl_ok &= kl_q_to_p(vm, d) <= kl_q_to_p(lm, d) + 1e-9
    out.append(_check("matching", "moment vs numeric moments", err_mom, 1e-6))
    out.append(_check("matching", "laplace vs numeric mode/curvature", err_lap, 1e-8))
    out.append(_check("matching", "variational closed form vs optimiser", err_var, 1e-4))
    out.append(Check("matching", "KL(q||p) ordering", kl_ok, "variational <= laplace"))
    em = match(ExpLog(1.0), MatchMethod.MOMENT)
    out.append(_check("matching", "ExpLog(1) moments", max(abs(em.mean + 0.5772156649), abs(em.variance - math.pi**2 / 6)), 1e-9))
    return out


def bayes_linear_suite(rng_seed: int = 0):
    rng = np.random.default_rng(rng_seed)
    N, D, K = 60, 6, 3
    X = rng.standard_normal((N, D))
    Y = rng.standard_normal((N, K))
    V = rng.uniform(0.2, 2.0, (N, K))
    s0 = init_posterior(D, K, 1.5)
    batch = fit_batch(s0, X, (Y, V))
    seq = s0
    for n in rng.permutation(N):
        seq = update_one(seq, X[n], (Y[n], V[n]))
    err = max(np.abs(batch.means - seq.means).max(), np.abs(batch.covs - seq.covs).max())
    # homoscedastic case against a dense ridge solve
    v = 0.7
    hom = fit_batch(s0, X, (Y, np.full((N, K), v)))
    ridge = np.linalg.solve(X.T @ X / v + np.eye(D) / 1.5, X.T @ Y / v).T
    return [
        _check("bayes_linear", "sequential vs batch posterior", err, 1e-8),
        _check("bayes_linear", "posterior mean vs ridge solve", np.abs(hom.means - ridge).max(), 1e-9),
    ]


def gp_suite(rng_seed: int = 0):
    rng = np.random.default_rng(rng_seed)
    N = 30
    X = rng.standard_normal((N, 2))
    Y = rng.standard_normal((N, 2))
    V = rng.uniform(0.1, 1.0, (N, 2))
    gp = HeteroGP(X, Y, V, EQKernel(1.4, 0.8))
    val, grad = log_marginal_likelihood_grad(gp)
    h = 1e-5
    fd = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        lp = gp.kernel.log_params
        hi = log_marginal_likelihood(gp.with_kernel(EQKernel.from_log(*(lp + e))))
        lo = log_marginal_likelihood(gp.with_kernel(EQKernel.from_log(*(lp - e))))
        fd[i] = (hi - lo) / (2 * h)
    rel = np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8))
    # dense-inverse oracle for the predictive equations
    Xs = rng.standard_normal((5, 2))
    mean, var = predict_latent(gp, Xs)
    k = gp.kernel
    Kxx = k.variance * np.exp(-0.5 * ((X[:, None] - X[None]) ** 2).sum(-1) / k.lengthscale**2)
    Kxx += gp.jitter * k.variance * np.eye(N)
    Ksx = k.variance * np.exp(-0.5 * ((Xs[:, None] - X[None]) ** 2).sum(-1) / k.lengthscale**2)
    err = 0.0
    dense_ml = 0.0
    for j in range(2):
        A = np.linalg.inv(Kxx + np.diag(V[:, j]))
        err = max(err, np.abs(Ksx @ A @ Y[:, j] - mean[:, j]).max())
        err = max(err, np.abs(k.variance - np.einsum("ij,jk,ik->i", Ksx, A, Ksx) - var[:, j]).max())
        _, logdet = np.linalg.slogdet(Kxx + np.diag(V[:, j]))
        dense_ml += -0.5 * Y[:, j] @ A @ Y[:, j] - 0.5 * logdet - 0.5 * N * math.log(2 * math.pi)
    return [
        _check("gp", "log ML gradient vs finite differences (relative)", rel, 1e-5),
        _check("gp", "predictive equations vs dense inverse", err, 1e-8),
        _check("gp", "log ML vs dense determinant", abs(dense_ml - val), 1e-8),
    ]


def run_all():
    return matching_suite() + bayes_linear_suite() + gp_suite()
