"""Independent reference implementations used as test oracles.

These deliberately avoid the library's batched code paths: dense solves go
through scipy's cho_factor/cho_solve, nearest neighbors through a direct
O(n^2) scan, and joint densities through explicit matrix algebra.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from deep_vecchia.kernel import gram


def dense_gp_nll(X, y, p):
    """Exact GP negative marginal log-likelihood via a dense Cholesky."""
    n = X.shape[0]
    K = gram(X, None, p, add_noise_diag=True)
    cf = cho_factor(K, lower=True)
    alpha = cho_solve(cf, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return 0.5 * (y @ alpha + logdet + n * np.log(2.0 * np.pi))


def dense_gp_predict(X, y, p, Xstar):
    """Exact GP predictive mean and latent variance at Xstar."""
    K = gram(X, None, p, add_noise_diag=True)
    cf = cho_factor(K, lower=True)
    Ks = gram(Xstar, X, p)
    mu = Ks @ cho_solve(cf, y)
    var = p.output_var - np.einsum("ij,ji->i", Ks, cho_solve(cf, Ks.T))
    return mu, var


def vecchia_joint_cov(X, p, ordering, sets):
    """Dense covariance of the Gaussian implied by the Vecchia factorization,
    in ordering coordinates: y = B y + e gives (I-B)^-1 D (I-B)^-T."""
    n = X.shape[0]
    pos = ordering.positions()
    B = np.zeros((n, n))
    D = np.zeros(n)
    sv, tau2 = p.output_var, p.noise_var
    for i in range(n):
        pi = pos[i]
        g = np.asarray(sets[i], dtype=np.int64)
        if g.shape[0] == 0:
            D[pi] = sv + tau2
            continue
        Kgg = gram(X[g], None, p, add_noise_diag=True)
        kig = gram(X[i].reshape(1, -1), X[g], p)[0]
        b = np.linalg.solve(Kgg, kig)
        B[pi, pos[g]] = b
        D[pi] = sv + tau2 - kig @ b
    I = np.eye(n)
    Minv = np.linalg.inv(I - B)
    return Minv @ np.diag(D) @ Minv.T


def gaussian_kl(S0, S1):
    """KL(N(0, S0) || N(0, S1)) for positive-definite covariances."""
    n = S0.shape[0]
    _, ld1 = np.linalg.slogdet(S1)
    _, ld0 = np.linalg.slogdet(S0)
    tr = np.trace(np.linalg.solve(S1, S0))
    return 0.5 * (tr - n + ld1 - ld0)


def ordered_knn_naive(E, ordering, m):
    """Direct O(n^2) predecessor k-NN, independent of the blocked search."""
    perm = ordering.perm
    n = perm.shape[0]
    pos = np.empty(n, dtype=int)
    pos[perm] = np.arange(n)
    sets = [None] * n
    for i in range(n):
        pred = [j for j in range(n) if pos[j] < pos[i]]
        if not pred:
            sets[i] = np.empty(0, dtype=np.int64)
            continue
        scored = sorted((float(np.sum((E[j] - E[i]) ** 2)), j) for j in pred)
        sets[i] = np.array([j for _, j in scored[: min(m, len(pred))]], dtype=np.int64)
    return sets


def knn_naive(E, q, m):
    """Direct unconstrained k-NN of one query."""
    scored = sorted((float(np.sum((E[j] - q) ** 2)), j) for j in range(E.shape[0]))
    return np.array([j for _, j in scored[:m]], dtype=np.int64)


def sample_gp(X, p, seed):
    """Draw y ~ N(0, K + tau^2 I) for simulation-based tests."""
    rng = np.random.default_rng(seed)
    K = gram(X, None, p, add_noise_diag=True)
    return np.linalg.cholesky(K) @ rng.standard_normal(X.shape[0])
