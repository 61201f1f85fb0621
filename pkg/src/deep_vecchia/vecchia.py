"""Single-layer Vecchia GP: conditional Gaussian moments, mini-batch marginal
log-likelihood with analytic log-parameter gradients, Adam fitting, and test
prediction.

Each observation conditions on the noisy responses of its conditioning set,
so every term uses K_gg + tau^2 I; with full conditioning sets the chained
factorization reproduces the exact GP marginal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .kernel import KernelParams, matern52_dlambda_factor, matern52_profile
from .neighbors import ConditioningSets

_JITTER = 1e-8
_CHUNK_ELEMS = 1 << 20  # cap on B*q*max(q,d) per slab; keeps slabs cache-friendly
_LOG2PI = math.log(2.0 * math.pi)


class FactorizationError(RuntimeError):
    """Cholesky failed even after one jitter retry."""


class FitDivergedError(RuntimeError):
    def __init__(self, step: int, layer: int | None = None):
        where = f"layer {layer}, " if layer is not None else ""
        super().__init__(f"non-finite loss ({where}step {step})")
        self.step = step
        self.layer = layer


@dataclass
class EmbeddingDataset:
    """One layer's intermediate representations with the shared responses."""

    E: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)
    layer_index: int = 0

    def __post_init__(self):
        self.E = np.ascontiguousarray(np.asarray(self.E, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.E.ndim != 2:
            raise ValueError("E must be 2-D")
        if self.y.shape != (self.E.shape[0],):
            raise ValueError(
                f"response length {self.y.shape} does not match {self.E.shape[0]} rows"
            )
        if not (np.all(np.isfinite(self.E)) and np.all(np.isfinite(self.y))):
            raise ValueError("embedding dataset must be finite")

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def dim(self) -> int:
        return self.E.shape[1]


@dataclass(frozen=True)
class GaussianPrediction:
    mean: float
    var_latent: float
    var_observation: float


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings for type-II maximum likelihood in log-parameter space."""

    steps: int = 300
    batch_size: int = 128
    learning_rate: float = 0.05
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _chol_with_jitter(K: np.ndarray):
    """Batched Cholesky; on failure, jitter only the failing members once."""
    try:
        np.linalg.cholesky(K)
        return K
    except np.linalg.LinAlgError:
        pass
    K = K.copy()
    q = K.shape[-1]
    diag = np.arange(q)
    for b in range(K.shape[0]):
        try:
            np.linalg.cholesky(K[b])
        except np.linalg.LinAlgError:
            K[b, diag, diag] += _JITTER
    try:
        np.linalg.cholesky(K)
        return K
    except np.linalg.LinAlgError as e:
        raise FactorizationError("conditioning-set Gram matrix is not positive definite") from e


def _group_moments(Eg, yg, T, yt, p: KernelParams, want_grad: bool):
    """Moments (and optionally NLL gradient pieces) for one equal-size slab.

    Eg (B,q,d) neighbor embeddings, yg (B,q) their responses, T (B,d) targets,
    yt (B,) target responses or None.  Returns dict of per-item arrays.
    """
    B, q, d = Eg.shape
    lam = p.lengthscales
    sv = p.output_var
    tau2 = p.noise_var
    Egs = Eg / lam
    Ts = T / lam

    nrm = np.einsum("bqd,bqd->bq", Egs, Egs)
    S_gg = nrm[:, :, None] + nrm[:, None, :] - 2.0 * (Egs @ Egs.transpose(0, 2, 1))
    np.clip(S_gg, 0.0, None, out=S_gg)
    ii = np.arange(q)
    S_gg[:, ii, ii] = 0.0
    diff_t = Ts[:, None, :] - Egs
    U_tg = diff_t**2
    S_tg = U_tg.sum(axis=-1)

    P_gg = sv * matern52_profile(S_gg)
    K = P_gg.copy()
    K[:, ii, ii] += tau2
    k_tg = sv * matern52_profile(S_tg)

    K = _chol_with_jitter(K)
    rhs = np.stack([yg, k_tg], axis=-1)
    sol = np.linalg.solve(K, rhs)
    alpha, v = sol[..., 0], sol[..., 1]

    mu = np.einsum("bq,bq->b", k_tg, alpha)
    varf = sv - np.einsum("bq,bq->b", k_tg, v)
    np.clip(varf, 0.0, None, out=varf)
    out = {"mu": mu, "varf": varf}
    if yt is None:
        return out

    w = varf + tau2
    resid = yt - mu
    out["nll"] = 0.5 * (_LOG2PI + np.log(w) + resid**2 / w)
    if not want_grad:
        return out

    c_w = 0.5 / w - 0.5 * resid**2 / w**2
    c_mu = -resid / w
    pvec = c_mu[:, None] * alpha - 2.0 * c_w[:, None] * v
    W = (-c_mu)[:, None, None] * (v[:, :, None] * alpha[:, None, :]) + c_w[:, None, None] * (
        v[:, :, None] * v[:, None, :]
    )
    M_gg = sv * matern52_dlambda_factor(S_gg)
    M_tg = sv * matern52_dlambda_factor(S_tg)

    g_sig = (
        np.einsum("bq,bq->b", pvec, k_tg)
        + np.einsum("bqp,bqp->b", W, P_gg)
        + c_w * sv
    )
    # d K / d log lambda_d = M_gg * (e_a - e_b)_d^2 expanded to avoid a (B,q,q,d) tensor
    W2 = W * M_gg
    sq = Egs**2
    cross = np.einsum("bqd,bqd->bd", Egs, W2 @ Egs)  # sum_qp W2_qp e_qd e_pd
    g_lam = (
        np.einsum("bq,bqd->bd", W2.sum(axis=2), sq)
        + np.einsum("bq,bqd->bd", W2.sum(axis=1), sq)
        - 2.0 * cross
        + np.einsum("bq,bq,bqd->bd", pvec, M_tg, U_tg)
    )
    g_tau = tau2 * np.einsum("bqq->b", W) + c_w * tau2

    grad = np.empty((B, p.dim + 2))
    grad[:, 0] = g_sig
    grad[:, 1:-1] = g_lam
    grad[:, -1] = g_tau
    out["grad"] = grad
    return out


def _empty_set_terms(yt, p: KernelParams, want_grad: bool):
    """Prior terms for observations with no predecessors."""
    sv, tau2 = np.float64(p.output_var), np.float64(p.noise_var)
    w = sv + tau2  # numpy scalar: overflow propagates as inf, not OverflowError
    out = {
        "mu": np.zeros_like(yt),
        "varf": np.full_like(yt, sv),
    }
    if yt is None:
        return out
    out["nll"] = 0.5 * (_LOG2PI + np.log(w) + yt**2 / w)
    if want_grad:
        c_w = 0.5 / w - 0.5 * yt**2 / w**2
        grad = np.zeros((yt.shape[0], p.dim + 2))
        grad[:, 0] = c_w * sv
        grad[:, -1] = c_w * tau2
        out["grad"] = grad
    return out


def _batched(E, y, targets, y_targets, sets, p: KernelParams, want_grad: bool):
    """Run the grouped computation over arbitrary-size conditioning sets.

    Returns per-item arrays aligned with `sets` order, plus the summed grad.
    """
    n_items = len(sets)
    d = targets.shape[1]
    mu = np.empty(n_items)
    varf = np.empty(n_items)
    nll = np.empty(n_items) if y_targets is not None else None
    grad_total = np.zeros(p.dim + 2) if want_grad else None

    groups = {}
    for j, g in enumerate(sets):
        groups.setdefault(len(g), []).append(j)

    for q, items in sorted(groups.items()):
        items = np.asarray(items)
        yt_all = y_targets[items] if y_targets is not None else None
        if q == 0:
            res = _empty_set_terms(
                yt_all if yt_all is not None else np.zeros(len(items)), p, want_grad
            )
            mu[items] = res["mu"]
            varf[items] = res["varf"]
            if y_targets is not None:
                nll[items] = res["nll"]
                if want_grad:
                    grad_total += res["grad"].sum(axis=0)
            continue
        chunk = max(1, _CHUNK_ELEMS // max(q * max(q, d), 1))
        for a in range(0, len(items), chunk):
            sub = items[a : a + chunk]
            idx = np.stack([sets[j] for j in sub])
            res = _group_moments(
                E[idx],
                y[idx],
                targets[sub],
                y_targets[sub] if y_targets is not None else None,
                p,
                want_grad,
            )
            mu[sub] = res["mu"]
            varf[sub] = res["varf"]
            if y_targets is not None:
                nll[sub] = res["nll"]
                if want_grad:
                    grad_total += res["grad"].sum(axis=0)
    return mu, varf, nll, grad_total


def conditional_moments(ds: EmbeddingDataset, g, target, p: KernelParams):
    """Posterior mean and latent variance of one target given the noisy
    responses indexed by g; the empty set returns the prior (0, sigma^2)."""
    g = np.asarray(g, dtype=np.int64)
    target = np.asarray(target, dtype=np.float64).reshape(1, -1)
    mu, varf, _, _ = _batched(ds.E, ds.y, target, None, [g], p, want_grad=False)
    return float(mu[0]), float(varf[0])


def _training_items(ds: EmbeddingDataset, G: ConditioningSets, batch):
    idx = np.arange(ds.n) if batch is None else np.asarray(batch, dtype=np.int64)
    sets = [G.sets[i] for i in idx]
    return idx, sets


def vecchia_nll(ds: EmbeddingDataset, G: ConditioningSets, p: KernelParams, batch=None) -> float:
    """Negative sum of per-observation conditional log densities over batch
    (full data when batch is None)."""
    idx, sets = _training_items(ds, G, batch)
    _, _, nll, _ = _batched(ds.E, ds.y, ds.E[idx], ds.y[idx], sets, p, want_grad=False)
    return float(nll.sum())


def nll_and_grad(ds: EmbeddingDataset, G: ConditioningSets, p: KernelParams, batch=None):
    """Batch NLL and its gradient with respect to the log-parameter vector."""
    idx, sets = _training_items(ds, G, batch)
    _, _, nll, grad = _batched(ds.E, ds.y, ds.E[idx], ds.y[idx], sets, p, want_grad=True)
    return float(nll.sum()), grad


def default_init(ds: EmbeddingDataset, seed: int = 0) -> KernelParams:
    """Median-heuristic lengthscales on a subsample; unit output variance,
    noise variance 0.01."""
    rng = np.random.default_rng(seed)
    n = ds.n
    sub = ds.E
    if n > 1024:
        sub = ds.E[rng.choice(n, size=1024, replace=False)]
    scales = np.ones(ds.dim)
    if sub.shape[0] >= 2:
        for j in range(ds.dim):
            med = np.median(pdist(sub[:, j : j + 1]))
            if np.isfinite(med) and med > 0.0:
                scales[j] = med
    return KernelParams(0.0, np.log(scales), math.log(0.01))


def fit(ds: EmbeddingDataset, G: ConditioningSets, init: KernelParams, opt: OptimizerConfig):
    """Adam ascent of the mini-batch Vecchia log-likelihood in log-parameter
    space.  Deterministic per seed.  Returns (params, per-epoch full-data NLL
    trace); the trace starts at the initial parameters."""
    theta = init.to_vector()
    params = init
    trace = [vecchia_nll(ds, G, params)]
    if opt.steps == 0:
        return init, trace

    n = ds.n
    bs = min(opt.batch_size, n)
    steps_per_epoch = max(1, math.ceil(n / bs))
    rng = np.random.default_rng(opt.seed)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    for step in range(1, opt.steps + 1):
        batch = rng.choice(n, size=bs, replace=False) if bs < n else None
        nll_b, g = nll_and_grad(ds, G, params, batch)
        g = g / bs
        if not (np.isfinite(nll_b) and np.all(np.isfinite(g))):
            raise FitDivergedError(step)
        m1 = opt.beta1 * m1 + (1.0 - opt.beta1) * g
        m2 = opt.beta2 * m2 + (1.0 - opt.beta2) * g * g
        hat1 = m1 / (1.0 - opt.beta1**step)
        hat2 = m2 / (1.0 - opt.beta2**step)
        theta = theta - opt.learning_rate * hat1 / (np.sqrt(hat2) + opt.eps)
        try:
            params = KernelParams.from_vector(theta)
        except ValueError as e:  # parameters left the representable range
            raise FitDivergedError(step) from e
        if step % steps_per_epoch == 0:
            trace.append(vecchia_nll(ds, G, params))
    if opt.steps % steps_per_epoch != 0:
        trace.append(vecchia_nll(ds, G, params))
    if not np.all(np.isfinite(trace)):
        raise FitDivergedError(opt.steps)
    return params, trace


def predict(ds: EmbeddingDataset, p: KernelParams, queries: np.ndarray, query_sets):
    """Per-query conditional moments against training data, with observation
    variance var_latent + tau^2."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise ValueError("queries must be a matrix")
    sets = [np.asarray(g, dtype=np.int64) for g in query_sets]
    if len(sets) != queries.shape[0]:
        raise ValueError("one conditioning set per query required")
    mu, varf, _, _ = _batched(ds.E, ds.y, queries, None, sets, p, want_grad=False)
    tau2 = p.noise_var
    return [
        GaussianPrediction(float(m), float(vf), float(vf + tau2))
        for m, vf in zip(mu, varf)
    ]
