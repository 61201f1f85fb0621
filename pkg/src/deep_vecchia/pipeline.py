"""Orchestration: build a deep Vecchia ensemble from a composite model and
training data, batch prediction, metrics, diagnostics, and checkpointing.

Responses are centered and scaled by training moments before any layer is
fit; predictions are mapped back to the original units on output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataio
from .composite import CompositeModel, extract_datasets, forward_batch, model_hash
from .ensemble import CombinedPrediction, EnsembleConfig, combine, weights
from .kernel import KernelParams
from .neighbors import (
    ConditioningSets,
    ivf_build,
    ivf_conditioning_sets,
    ivf_query,
    knn_exact,
    random_ordering,
)
from .vecchia import (
    EmbeddingDataset,
    FitDivergedError,
    OptimizerConfig,
    default_init,
    fit,
    predict,
)

ENSEMBLE_CHECKPOINT_KIND = "deep_vecchia_ensemble"


@dataclass(frozen=True)
class BackendSpec:
    """Neighbor-search backend: exact brute force or IVF with probes."""

    kind: str = "exact"
    n_list: int = 64
    n_probe: int = 8

    def __post_init__(self):
        if self.kind not in ("exact", "ivf"):
            raise ValueError(f"backend kind must be 'exact' or 'ivf', got {self.kind!r}")


@dataclass
class LayerState:
    dataset: EmbeddingDataset
    cond_sets: ConditioningSets
    params: KernelParams
    ivf: object = None  # IvfIndex when the backend is ivf


@dataclass
class FittedEnsemble:
    layers: list
    config: EnsembleConfig
    backend: BackendSpec
    m: int
    seed: int
    y_mean: float
    y_std: float
    model_hash: str
    opt: OptimizerConfig = OptimizerConfig()
    loss_traces: list = field(default_factory=list)
    model: CompositeModel | None = None

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def noise_vars(self) -> np.ndarray:
        return np.array([ls.params.noise_var for ls in self.layers])


@dataclass
class LayerExplanation:
    layer_index: int
    neighbor_indices: np.ndarray
    neighbor_distances: np.ndarray
    neighbor_responses: np.ndarray  # original units
    weight: float


def _layer_conditioning(E, ordering, m, seed, backend: BackendSpec):
    from .neighbors import ordered_knn_exact

    if backend.kind == "exact":
        return ordered_knn_exact(E, ordering, m), None
    idx = ivf_build(E, n_list=min(backend.n_list, E.shape[0]), seed=seed)
    return ivf_conditioning_sets(idx, ordering, m, min(backend.n_probe, idx.n_list)), idx


def build_from_datasets(
    datasets,
    m: int,
    seed: int,
    opt: OptimizerConfig,
    cfg: EnsembleConfig = EnsembleConfig(),
    backend: BackendSpec = BackendSpec(),
    model_hash_value: str = "",
    model: CompositeModel | None = None,
) -> FittedEnsemble:
    """Fit one Vecchia GP per embedding dataset under one shared ordering.

    The datasets must share the response vector; responses are standardized
    here and every layer is fit on the standardized scale.
    """
    if not datasets:
        raise ValueError("at least one embedding dataset required")
    n = datasets[0].n
    y = datasets[0].y
    for ds in datasets[1:]:
        if ds.n != n or not np.array_equal(ds.y, y):
            raise ValueError("all layers must share the same response vector")
    if n < 2 * m:
        warnings.warn(f"n = {n} is below the recommended 2m = {2 * m}", stacklevel=2)

    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if y_std == 0.0:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    ordering = random_ordering(n, seed)
    layers = []
    traces = []
    for k, ds in enumerate(datasets):
        ds_std = EmbeddingDataset(E=ds.E, y=ys, layer_index=ds.layer_index)
        cond, ivf = _layer_conditioning(ds_std.E, ordering, m, seed + 1000 + k, backend)
        init = default_init(ds_std, seed=seed)
        layer_opt = replace(opt, seed=opt.seed + k)
        try:
            params, trace = fit(ds_std, cond, init, layer_opt)
        except FitDivergedError as e:
            raise FitDivergedError(e.step, layer=ds.layer_index) from e
        layers.append(LayerState(dataset=ds_std, cond_sets=cond, params=params, ivf=ivf))
        traces.append(trace)
    return FittedEnsemble(
        layers=layers,
        config=cfg,
        backend=backend,
        m=m,
        seed=seed,
        y_mean=y_mean,
        y_std=y_std,
        model_hash=model_hash_value,
        opt=opt,
        loss_traces=traces,
        model=model,
    )


def build(
    model: CompositeModel,
    X: np.ndarray,
    y: np.ndarray,
    m: int,
    seed: int,
    opt: OptimizerConfig,
    cfg: EnsembleConfig = EnsembleConfig(),
    backend: BackendSpec = BackendSpec(),
) -> FittedEnsemble:
    """Extract every intermediate space of the model and fit the ensemble."""
    datasets = extract_datasets(model, X, np.asarray(y, dtype=np.float64))
    if not datasets:
        raise ValueError("model has no intermediate layers to ensemble")
    return build_from_datasets(
        datasets,
        m=m,
        seed=seed,
        opt=opt,
        cfg=cfg,
        backend=backend,
        model_hash_value=model_hash(model),
        model=model,
    )


def _check_model(fe: FittedEnsemble, model: CompositeModel):
    if fe.model_hash and model_hash(model) != fe.model_hash:
        raise dataio.ModelHashMismatchError(
            "supplied composite model does not match the fitted ensemble"
        )


def _query_sets(fe: FittedEnsemble, ls: LayerState, Q: np.ndarray):
    if fe.backend.kind == "exact":
        idx, dist = knn_exact(ls.dataset.E, Q, fe.m)
        return idx, dist
    idx_out, dist_out = [], []
    n_probe = min(fe.backend.n_probe, ls.ivf.n_list)
    for q in Q:
        sel = ivf_query(ls.ivf, q, fe.m, n_probe)
        idx_out.append(sel)
        dist_out.append(np.linalg.norm(ls.dataset.E[sel] - q, axis=1))
    return idx_out, dist_out


def _member_moments(fe: FittedEnsemble, per_layer_queries):
    """Per-layer standardized predictions for a stack of queries.

    Returns (preds[k][j], neighbor index/dist lists) for diagnostics.
    """
    if len(per_layer_queries) != fe.n_layers:
        raise ValueError(
            f"expected embeddings for {fe.n_layers} layers, got {len(per_layer_queries)}"
        )
    preds, idxs, dists = [], [], []
    for ls, Q in zip(fe.layers, per_layer_queries):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.shape[1] != ls.dataset.dim:
            raise ValueError(
                f"layer {ls.dataset.layer_index} expects dim {ls.dataset.dim}, got {Q.shape[1]}"
            )
        idx, dist = _query_sets(fe, ls, Q)
        preds.append(predict(ls.dataset, ls.params, Q, idx))
        idxs.append(idx)
        dists.append(dist)
    return preds, idxs, dists


def _combine_one(fe: FittedEnsemble, members, cfg: EnsembleConfig):
    """Combine one query's standardized member moments under cfg."""
    noise = fe.noise_vars()
    if cfg.space == "y":
        triples = [
            (p.mean, p.var_observation, ls.params.output_var + ls.params.noise_var)
            for p, ls in zip(members, fe.layers)
        ]
    else:
        triples = [
            (p.mean, max(p.var_latent, 1e-300), ls.params.output_var)
            for p, ls in zip(members, fe.layers)
        ]
    w, fallback = weights(triples, cfg)
    combined = combine(triples, w, cfg.space, noise)
    combined.uniform_fallback = fallback
    return combined


def _unscale(fe: FittedEnsemble, c: CombinedPrediction) -> CombinedPrediction:
    s2 = fe.y_std**2
    return CombinedPrediction(
        mean=fe.y_mean + fe.y_std * c.mean,
        variance=s2 * c.variance,
        weights=c.weights,
        member_means=fe.y_mean + fe.y_std * c.member_means,
        member_vars=s2 * c.member_vars,
        uniform_fallback=c.uniform_fallback,
    )


def predict_batch_embeddings(fe: FittedEnsemble, per_layer_queries, cfg: EnsembleConfig | None = None):
    """Predict from precomputed per-layer query embeddings (original units out)."""
    cfg = fe.config if cfg is None else cfg
    preds, _, _ = _member_moments(fe, per_layer_queries)
    out = []
    for j in range(len(preds[0])):
        members = [preds[k][j] for k in range(fe.n_layers)]
        out.append(_unscale(fe, _combine_one(fe, members, cfg)))
    return out


def predict_batch(fe: FittedEnsemble, model: CompositeModel, Xstar: np.ndarray, cfg: EnsembleConfig | None = None):
    """Forward-map queries through the model, predict per layer, and combine."""
    _check_model(fe, model)
    inters, _ = forward_batch(model, np.asarray(Xstar, dtype=np.float64))
    return predict_batch_embeddings(fe, inters, cfg)


def explain(fe: FittedEnsemble, model: CompositeModel, xstar: np.ndarray):
    """Which training points each layer conditions on for one query, with the
    weight that layer received in the combined prediction."""
    _check_model(fe, model)
    xstar = np.asarray(xstar, dtype=np.float64).reshape(1, -1)
    inters, _ = forward_batch(model, xstar)
    preds, idxs, dists = _member_moments(fe, inters)
    members = [preds[k][0] for k in range(fe.n_layers)]
    combined = _combine_one(fe, members, fe.config)
    out = []
    for k, ls in enumerate(fe.layers):
        sel = idxs[k][0]
        out.append(
            LayerExplanation(
                layer_index=ls.dataset.layer_index,
                neighbor_indices=sel,
                neighbor_distances=dists[k][0],
                neighbor_responses=fe.y_mean + fe.y_std * ls.dataset.y[sel],
                weight=float(combined.weights[k]),
            )
        )
    return out


def metrics(preds, ytrue, y_mean: float = 0.0, y_std: float = 1.0):
    """(RMSE, mean NLL) on the standardized scale given the training moments."""
    ytrue = np.asarray(ytrue, dtype=np.float64)
    if len(preds) != ytrue.shape[0]:
        raise ValueError(f"{len(preds)} predictions vs {ytrue.shape[0]} truths")
    mu = np.array([p.mean for p in preds])
    var = np.array([p.variance for p in preds])
    mus = (mu - y_mean) / y_std
    ys = (ytrue - y_mean) / y_std
    vs = var / y_std**2
    rmse = float(np.sqrt(np.mean((mus - ys) ** 2)))
    nll = float(np.mean(0.5 * (np.log(2.0 * np.pi * vs) + (ys - mus) ** 2 / vs)))
    return rmse, nll


def uncertainty_split(pred: CombinedPrediction, fe: FittedEnsemble):
    """(epistemic, aleatoric) in original units; aleatoric is the averaged
    per-layer noise, epistemic the remainder floored at zero."""
    aleatoric = float(fe.y_std**2 * np.mean(fe.noise_vars()))
    epistemic = max(0.0, pred.variance - aleatoric)
    return epistemic, aleatoric


# -- persistence --------------------------------------------------------------


def save_ensemble(fe: FittedEnsemble, path) -> None:
    meta = {
        "kind": ENSEMBLE_CHECKPOINT_KIND,
        "m": fe.m,
        "seed": fe.seed,
        "y_mean": fe.y_mean,
        "y_std": fe.y_std,
        "model_hash": fe.model_hash,
        "backend": {"kind": fe.backend.kind, "n_list": fe.backend.n_list, "n_probe": fe.backend.n_probe},
        "config": {
            "scheme": fe.config.scheme,
            "space": fe.config.space,
            "use_softmax": fe.config.use_softmax,
            "temperature": fe.config.temperature,
        },
        "opt": {
            "steps": fe.opt.steps,
            "batch_size": fe.opt.batch_size,
            "learning_rate": fe.opt.learning_rate,
            "seed": fe.opt.seed,
            "beta1": fe.opt.beta1,
            "beta2": fe.opt.beta2,
            "eps": fe.opt.eps,
        },
        "layers": [
            {
                "layer_index": ls.dataset.layer_index,
                "dim": ls.dataset.dim,
                "log_output_var": ls.params.log_output_var,
                "log_lengthscales": ls.params.log_lengthscales.tolist(),
                "log_noise_var": ls.params.log_noise_var,
            }
            for ls in fe.layers
        ],
        "loss_traces": [[float(v) for v in t] for t in fe.loss_traces],
        "has_model": fe.model is not None,
    }
    arrays = {"y": dataio.as_column(fe.layers[0].dataset.y)}
    for k, ls in enumerate(fe.layers):
        arrays[f"layer{k}_embeddings"] = ls.dataset.E
        arrays[f"layer{k}_sets"] = ls.cond_sets.to_padded().astype(np.float64)
    if fe.model is not None:
        meta["model_layers"] = [
            {"activation": l.activation, "leaky_slope": l.leaky_slope} for l in fe.model.layers
        ]
        for i, l in enumerate(fe.model.layers):
            arrays[f"model_w{i}"] = l.weight
            arrays[f"model_b{i}"] = l.bias.reshape(1, -1)
    dataio.save_checkpoint(dataio.Checkpoint(meta=meta, arrays=arrays), path)


def load_ensemble(path, model: CompositeModel | None = None) -> FittedEnsemble:
    """Load a fitted ensemble; when a model is supplied its hash must match."""
    from .composite import LayerSpec

    c = dataio.load_checkpoint(path)
    meta = c.meta
    if meta.get("kind") != ENSEMBLE_CHECKPOINT_KIND:
        raise dataio.SchemaVersionError(f"{path}: not an ensemble checkpoint")
    ys = dataio.as_vector(c.arrays["y"])
    layers = []
    for k, lm in enumerate(meta["layers"]):
        ds = EmbeddingDataset(E=c.arrays[f"layer{k}_embeddings"], y=ys, layer_index=lm["layer_index"])
        cond = ConditioningSets.from_padded(c.arrays[f"layer{k}_sets"].astype(np.int64))
        params = KernelParams(
            lm["log_output_var"], np.asarray(lm["log_lengthscales"]), lm["log_noise_var"]
        )
        layers.append(LayerState(dataset=ds, cond_sets=cond, params=params, ivf=None))
    backend = BackendSpec(**meta["backend"])
    cfg = EnsembleConfig(**meta["config"])
    opt = OptimizerConfig(**meta["opt"]) if "opt" in meta else OptimizerConfig()
    stored_model = None
    if meta.get("has_model"):
        specs = []
        for i, lm in enumerate(meta["model_layers"]):
            specs.append(
                LayerSpec(c.arrays[f"model_w{i}"], c.arrays[f"model_b{i}"][0], lm["activation"], lm["leaky_slope"])
            )
        stored_model = CompositeModel(tuple(specs))
    fe = FittedEnsemble(
        layers=layers,
        config=cfg,
        backend=backend,
        m=meta["m"],
        seed=meta["seed"],
        y_mean=meta["y_mean"],
        y_std=meta["y_std"],
        model_hash=meta["model_hash"],
        opt=opt,
        loss_traces=meta.get("loss_traces", []),
        model=stored_model,
    )
    if backend.kind == "ivf":
        for k, ls in enumerate(fe.layers):
            ls.ivf = ivf_build(
                ls.dataset.E, n_list=min(backend.n_list, ls.dataset.n), seed=fe.seed + 1000 + k
            )
    if model is not None:
        _check_model(fe, model)
    return fe
