"""Forward-hook activation export for pretrained torch networks.

Captures the post-activation outputs of named submodules for every row of a
dataset and writes them in the embedding-export layout consumed by the deep
Vecchia pipeline: `layer_<k>.dveb`, optional `y.dveb`, and `manifest.json`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dveb import DvebError, read_matrix, write_matrix

MANIFEST_VERSION = 1


class ExportError(Exception):
    pass


class MissingLayerError(ExportError):
    pass


class TrainModeError(ExportError):
    """Capture from a train-mode model (dropout/batch-norm active) is not
    deterministic and is rejected."""


@dataclass
class ExportManifest:
    rows: int
    layers: list
    model_hash: str
    split: str
    response_file: str | None = None

    def to_json(self) -> dict:
        doc = {
            "format_version": MANIFEST_VERSION,
            "rows": self.rows,
            "layers": self.layers,
            "model_hash": self.model_hash,
            "split": self.split,
        }
        if self.response_file:
            doc["response_file"] = self.response_file
        return doc


def model_fingerprint(model: torch.nn.Module) -> str:
    """Content hash over parameter names and values (little-endian float64)."""
    h = hashlib.sha256()
    for name, param in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(param.detach().cpu().double().numpy()).astype("<f8").tobytes())
    return h.hexdigest()


def _resolve_layers(model: torch.nn.Module, layer_names):
    modules = dict(model.named_modules())
    missing = [n for n in layer_names if n not in modules]
    if missing:
        raise MissingLayerError(f"model has no module(s) named {missing}")
    return [(n, modules[n]) for n in layer_names]


def capture_activations(model: torch.nn.Module, layer_names, X: np.ndarray, batch_size: int = 2048):
    """Post-activation outputs of the named modules, row order preserved.

    The model must be in eval mode; outputs are returned as float64 arrays in
    the order of layer_names.
    """
    if model.training:
        raise TrainModeError("model is in train mode; call .eval() first")
    for name, mod in model.named_modules():
        if mod.training:
            raise TrainModeError(f"submodule {name or '<root>'} is in train mode")
    pairs = _resolve_layers(model, layer_names)
    dtype = next(model.parameters()).dtype if any(True for _ in model.parameters()) else torch.float64

    collected = {name: [] for name, _ in pairs}
    hooks = []

    def make_hook(name):
        def hook(_mod, _inp, out):
            if not torch.is_tensor(out):
                raise ExportError(f"layer {name} returned a non-tensor output")
            collected[name].append(out.detach().cpu().double().numpy())

        return hook

    for name, mod in pairs:
        hooks.append(mod.register_forward_hook(make_hook(name)))
    try:
        with torch.no_grad():
            for a in range(0, X.shape[0], batch_size):
                xb = torch.as_tensor(X[a : a + batch_size], dtype=dtype)
                model(xb)
    finally:
        for h in hooks:
            h.remove()

    out = []
    for name, _ in pairs:
        act = np.concatenate(collected[name], axis=0) if collected[name] else np.zeros((0, 0))
        if act.ndim != 2 or act.shape[0] != X.shape[0]:
            raise ExportError(
                f"layer {name} produced shape {act.shape} for {X.shape[0]} input rows"
            )
        out.append(act)
    return out


def export(
    model: torch.nn.Module,
    layer_names,
    X: np.ndarray,
    y: np.ndarray | None,
    out_dir,
    split: str = "train",
    batch_size: int = 2048,
) -> ExportManifest:
    """Write `layer_<k>.dveb` per selected layer plus `y.dveb`/`manifest.json`."""
    X = np.asarray(X, dtype=np.float64)
    activations = capture_activations(model, layer_names, X, batch_size=batch_size)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = []
    for k, (name, act) in enumerate(zip(layer_names, activations), start=1):
        fname = f"layer_{k}.dveb"
        write_matrix(act, out_dir / fname)
        layers.append({"name": name, "file": fname, "dim": int(act.shape[1])})
    manifest = ExportManifest(
        rows=int(X.shape[0]),
        layers=layers,
        model_hash=model_fingerprint(model),
        split=split,
    )
    if y is not None:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ExportError(f"y has {y.shape[0]} rows, X has {X.shape[0]}")
        write_matrix(y.reshape(-1, 1), out_dir / "y.dveb")
        manifest.response_file = "y.dveb"
    (out_dir / "manifest.json").write_bytes(
        (json.dumps(manifest.to_json(), sort_keys=True, indent=2) + "\n").encode("utf-8")
    )
    return manifest


@dataclass
class VerifyReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


def verify(out_dir) -> VerifyReport:
    """Re-read an export directory and check it against its manifest."""
    out_dir = Path(out_dir)
    report = VerifyReport()
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        report.findings.append("manifest.json is missing")
        return report
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != MANIFEST_VERSION:
        report.findings.append(f"unsupported manifest version {manifest.get('format_version')}")
        return report
    rows = manifest.get("rows")
    for lm in manifest.get("layers", []):
        fpath = out_dir / lm["file"]
        if not fpath.exists():
            report.findings.append(f"{lm['file']}: missing")
            continue
        try:
            m = read_matrix(fpath)
        except DvebError as e:
            report.findings.append(f"{lm['file']}: {e}")
            continue
        if m.shape != (rows, lm["dim"]):
            report.findings.append(
                f"{lm['file']}: shape {m.shape} does not match manifest {(rows, lm['dim'])}"
            )
    rf = manifest.get("response_file")
    if rf:
        fpath = out_dir / rf
        if not fpath.exists():
            report.findings.append(f"{rf}: missing")
        else:
            try:
                yv = read_matrix(fpath)
                if yv.shape[0] != rows:
                    report.findings.append(
                        f"{rf}: {yv.shape[0]} rows, manifest says {rows}"
                    )
            except DvebError as e:
                report.findings.append(f"{rf}: {e}")
    return report
