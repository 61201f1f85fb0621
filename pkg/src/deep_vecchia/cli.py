"""Command-line surface: extract, fit, predict, eval, explain, demo-scurve.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Flag values may come
from a TOML config file (`--config`); explicit flags always win.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dataio
from .composite import extract_datasets, forward_batch, load_model, model_hash
from .ensemble import SCHEMES, EnsembleConfig
from .pipeline import (
    BackendSpec,
    FittedEnsemble,
    build,
    build_from_datasets,
    load_ensemble,
    metrics,
    predict_batch_embeddings,
    save_ensemble,
    uncertainty_split,
)
from .vecchia import EmbeddingDataset, OptimizerConfig

EXPORT_MANIFEST_VERSION = 1


class _UsageError(Exception):
    pass


def _add_fit_flags(p):
    p.add_argument("--m", type=int, help="conditioning-set size (default 32)")
    p.add_argument("--seed", type=int, help="ordering / fit seed (default 0)")
    p.add_argument("--steps", type=int, help="Adam steps per layer (default 300)")
    p.add_argument("--batch", type=int, help="mini-batch size (default 128)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.05)")
    p.add_argument("--scheme", choices=SCHEMES, help="combining scheme (default posterior_variance)")
    p.add_argument("--space", choices=("y", "f"), help="combining space (default y)")
    p.add_argument("--softmax", action="store_true", help="use temperature softmax weights")
    p.add_argument("--temperature", type=float, help="softmax temperature (default 1.0)")
    p.add_argument("--backend", choices=("exact", "ivf"), help="neighbor search backend (default exact)")
    p.add_argument("--n-list", type=int, help="IVF cluster count (default 64)")
    p.add_argument("--n-probe", type=int, help="IVF probe count (default 8)")


_FIT_DEFAULTS = {
    "m": 32,
    "seed": 0,
    "steps": 300,
    "batch": 128,
    "lr": 0.05,
    "scheme": "posterior_variance",
    "space": "y",
    "softmax": False,
    "temperature": 1.0,
    "backend": "exact",
    "n_list": 64,
    "n_probe": 8,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dve",
        description="Deep Vecchia ensembles over composite-model intermediate representations.",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("--config", help="TOML config file; explicit flags override it")
    parser.add_argument("--threads", type=int, help="cap BLAS threads (env DVE_THREADS as fallback)")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("extract", argument_default=argparse.SUPPRESS,
                       help="write per-layer DVEB embeddings for a dataset")
    p.add_argument("--model", required=True, help="composite-model checkpoint directory")
    p.add_argument("--x", required=True, help="input matrix (.dveb or .csv)")
    p.add_argument("--y", help="optional response vector to include as y.dveb")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", help="dataset split tag recorded in the manifest")

    p = sub.add_parser("fit", argument_default=argparse.SUPPRESS,
                       help="fit a deep Vecchia ensemble and write a checkpoint")
    p.add_argument("--model", help="composite-model checkpoint directory")
    p.add_argument("--x", help="input matrix (with --model)")
    p.add_argument("--y", help="response vector (with --model)")
    p.add_argument("--embeddings", help="embedding export directory (instead of --model/--x/--y)")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    _add_fit_flags(p)

    p = sub.add_parser("predict", argument_default=argparse.SUPPRESS,
                       help="predict for query points; CSV of mean,var,epistemic,aleatoric")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x", help="query matrix (checkpoint must hold the model)")
    p.add_argument("--query-embeddings", help="embedding export directory for the queries")
    p.add_argument("--out", help="output CSV path (default stdout)")

    p = sub.add_parser("eval", argument_default=argparse.SUPPRESS,
                       help="RMSE/NLL of a prediction CSV against a truth vector, as JSON")
    p.add_argument("--pred", required=True, help="CSV from the predict subcommand")
    p.add_argument("--truth", required=True, help="response vector (.dveb or .csv)")
    p.add_argument("--checkpoint", help="use this checkpoint's response scaling for the metrics")

    p = sub.add_parser("explain", argument_default=argparse.SUPPRESS,
                       help="per-layer neighbor report for one query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x", help="query matrix (one row used)")
    p.add_argument("--query-embeddings", help="embedding export directory for the query")
    p.add_argument("--row", type=int, help="row of the query input to explain (default 0)")

    p = sub.add_parser("demo-scurve", argument_default=argparse.SUPPRESS,
                       help="end-to-end S-curve run; prints both MSEs as JSON")
    p.add_argument("--seed", type=int, help="seed (default 7)")
    p.add_argument("--n", type=int, help="training sample count (default 1000)")
    p.add_argument("--noise-sd", type=float, help="response noise level (default 0.1)")
    p.add_argument("--m", type=int, help="conditioning-set size (default 32)")
    return parser


def _load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _merged(ns: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config-file values < explicit flags."""
    values = dict(defaults)
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        raw = _load_config(cfg_path)
        table = raw.get(ns.command, raw) if ns.command else raw
        for key, val in table.items():
            key = key.replace("-", "_")
            if key in values:
                values[key] = val
    for key, val in vars(ns).items():
        if key not in ("config", "command", "threads"):
            values[key] = val
    return values


def _read_vector(path) -> np.ndarray:
    m = dataio.read_matrix(path)
    if m.shape[1] == 1:
        return m[:, 0]
    if m.shape[0] == 1:
        return m[0]
    raise _UsageError(f"{path}: expected a vector, got shape {m.shape}")


def _write_export_dir(out, datasets, y, manifest_extra):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    layers = []
    for ds in datasets:
        fname = f"layer_{ds.layer_index}.dveb"
        dataio.write_matrix(ds.E, out / fname)
        layers.append({"name": f"layer_{ds.layer_index}", "file": fname, "dim": ds.dim})
    manifest = {
        "format_version": EXPORT_MANIFEST_VERSION,
        "rows": int(datasets[0].n) if datasets else 0,
        "layers": layers,
        **manifest_extra,
    }
    if y is not None:
        dataio.write_matrix(dataio.as_column(y), out / "y.dveb")
        manifest["response_file"] = "y.dveb"
    (out / "manifest.json").write_bytes(
        (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode("utf-8")
    )
    return manifest


def read_export_dir(path, require_y: bool = True):
    """Load an embedding export directory into per-layer datasets."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise dataio.MissingSiblingError(f"{path}: no manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != EXPORT_MANIFEST_VERSION:
        raise dataio.SchemaVersionError(f"{path}: unsupported manifest version")
    y = None
    if manifest.get("response_file"):
        y = _read_vector(path / manifest["response_file"])
    elif require_y:
        raise dataio.MissingSiblingError(f"{path}: manifest declares no response file")
    datasets = []
    for k, lm in enumerate(manifest["layers"], start=1):
        E = dataio.read_matrix(path / lm["file"])
        if E.shape != (manifest["rows"], lm["dim"]):
            raise dataio.SchemaVersionError(
                f"{path}: {lm['file']} has shape {E.shape}, manifest says {(manifest['rows'], lm['dim'])}"
            )
        yk = y if y is not None else np.zeros(E.shape[0])
        datasets.append(EmbeddingDataset(E=E, y=yk, layer_index=k))
    return datasets, manifest


def cmd_extract(ns) -> int:
    v = _merged(ns, {"model": None, "x": None, "y": None, "out": None, "split": "train"})
    model = load_model(v["model"])
    X = dataio.read_matrix(v["x"])
    y = _read_vector(v["y"]) if v.get("y") else np.zeros(X.shape[0])
    datasets = extract_datasets(model, X, y)
    _write_export_dir(
        v["out"],
        datasets,
        y if v.get("y") else None,
        {"model_hash": model_hash(model), "split": v["split"]},
    )
    print(json.dumps({"layers": len(datasets), "rows": int(X.shape[0]), "out": str(v["out"])}))
    return 0


def cmd_fit(ns) -> int:
    v = _merged(ns, {**_FIT_DEFAULTS, "model": None, "x": None, "y": None, "embeddings": None, "out": None})
    opt = OptimizerConfig(steps=v["steps"], batch_size=v["batch"], learning_rate=v["lr"], seed=v["seed"])
    cfg = EnsembleConfig(
        scheme=v["scheme"], space=v["space"], use_softmax=v["softmax"], temperature=v["temperature"]
    )
    backend = BackendSpec(kind=v["backend"], n_list=v["n_list"], n_probe=v["n_probe"])
    if v.get("embeddings"):
        datasets, manifest = read_export_dir(v["embeddings"])
        fe = build_from_datasets(
            datasets, m=v["m"], seed=v["seed"], opt=opt, cfg=cfg, backend=backend,
            model_hash_value=manifest.get("model_hash", ""),
        )
    else:
        if not (v.get("model") and v.get("x") and v.get("y")):
            raise _UsageError("fit needs either --embeddings or all of --model/--x/--y")
        model = load_model(v["model"])
        X = dataio.read_matrix(v["x"])
        y = _read_vector(v["y"])
        fe = build(model, X, y, m=v["m"], seed=v["seed"], opt=opt, cfg=cfg, backend=backend)
    save_ensemble(fe, v["out"])
    print(json.dumps({"layers": fe.n_layers, "out": str(v["out"])}))
    return 0


def _load_queries(fe: FittedEnsemble, v) -> list:
    if v.get("query_embeddings"):
        datasets, _ = read_export_dir(v["query_embeddings"], require_y=False)
        return [ds.E for ds in datasets]
    if not v.get("x"):
        raise _UsageError("need --x or --query-embeddings")
    if fe.model is None:
        raise _UsageError("checkpoint holds no model; pass --query-embeddings instead of --x")
    X = dataio.read_matrix(v["x"])
    inters, _ = forward_batch(fe.model, X)
    return inters


def cmd_predict(ns) -> int:
    v = _merged(ns, {"checkpoint": None, "x": None, "query_embeddings": None, "out": None})
    fe = load_ensemble(v["checkpoint"])
    queries = _load_queries(fe, v)
    preds = predict_batch_embeddings(fe, queries)
    rows = []
    for p in preds:
        epi, ale = uncertainty_split(p, fe)
        rows.append((p.mean, p.variance, epi, ale))
    out = open(v["out"], "w", newline="") if v.get("out") else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["mean", "var", "epistemic", "aleatoric"])
        for row in rows:
            writer.writerow([repr(float(x)) for x in row])
    finally:
        if v.get("out"):
            out.close()
    return 0


def cmd_eval(ns) -> int:
    v = _merged(ns, {"pred": None, "truth": None, "checkpoint": None})
    with open(v["pred"], newline="") as fh:
        reader = csv.DictReader(fh)
        means, variances = [], []
        for row in reader:
            means.append(float(row["mean"]))
            variances.append(float(row["var"]))
    ytrue = _read_vector(v["truth"])
    y_mean, y_std = 0.0, 1.0
    if v.get("checkpoint"):
        fe = load_ensemble(v["checkpoint"])
        y_mean, y_std = fe.y_mean, fe.y_std

    class _P:
        __slots__ = ("mean", "variance")

        def __init__(self, m, var):
            self.mean = m
            self.variance = var

    preds = [_P(m, var) for m, var in zip(means, variances)]
    rmse, nll = metrics(preds, ytrue, y_mean, y_std)
    print(json.dumps({"rmse": rmse, "nll": nll}))
    return 0


def cmd_explain(ns) -> int:
    v = _merged(ns, {"checkpoint": None, "x": None, "query_embeddings": None, "row": 0})
    fe = load_ensemble(v["checkpoint"])
    queries = _load_queries(fe, v)
    row = v["row"]
    queries = [Q[row : row + 1] for Q in queries]
    preds = predict_batch_embeddings(fe, queries)
    report = {"prediction": {"mean": preds[0].mean, "var": preds[0].variance}, "layers": []}
    # reuse the member moments path for the per-layer detail
    from .pipeline import _combine_one, _member_moments

    member_preds, idxs, dists = _member_moments(fe, queries)
    members = [member_preds[k][0] for k in range(fe.n_layers)]
    combined = _combine_one(fe, members, fe.config)
    for k, ls in enumerate(fe.layers):
        sel = idxs[k][0]
        report["layers"].append(
            {
                "layer_index": ls.dataset.layer_index,
                "weight": float(combined.weights[k]),
                "neighbor_indices": [int(i) for i in sel],
                "neighbor_distances": [float(d) for d in dists[k][0]],
                "neighbor_responses": [float(fe.y_mean + fe.y_std * ls.dataset.y[i]) for i in sel],
            }
        )
    print(json.dumps(report))
    return 0


def cmd_demo_scurve(ns) -> int:
    from .experiments import demo_scurve

    v = _merged(ns, {"seed": 7, "n": 1000, "noise_sd": 0.1, "m": 32})
    result = demo_scurve(seed=v["seed"], n=v["n"], noise_sd=v["noise_sd"], m=v["m"])
    print(json.dumps(result))
    return 0


_COMMANDS = {
    "extract": cmd_extract,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "demo-scurve": cmd_demo_scurve,
}


def _thread_limit(ns):
    threads = getattr(ns, "threads", None)
    if threads is None:
        env = os.environ.get("DVE_THREADS")
        threads = int(env) if env else None
    if threads is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def run(argv) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    if getattr(ns, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        with _thread_limit(ns):
            return _COMMANDS[ns.command](ns)
    except _UsageError as e:
        print(f"dve: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures map to exit 2
        print(f"dve: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
