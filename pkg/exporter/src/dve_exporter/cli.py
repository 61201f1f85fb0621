"""dve-export: run or verify embedding exports from saved torch models.

Exit codes: 0 clean, 1 usage error, 2 export/verify findings.
"""

from __future__ import annotations

import argparse
import sys

import torch

from .dveb import read_matrix
from .export import ExportError, export, verify


def build_parser():
    parser = argparse.ArgumentParser(prog="dve-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("export", help="capture layer activations from a saved torch module")
    p.add_argument("--model", required=True, help="torch.save()'d nn.Module file")
    p.add_argument("--layers", required=True, nargs="+", help="named modules to capture")
    p.add_argument("--x", required=True, help="input matrix (.dveb)")
    p.add_argument("--y", help="optional response vector (.dveb)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="train")

    p = sub.add_parser("verify", help="check an export directory against its manifest")
    p.add_argument("out_dir")
    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 1
    if ns.command == "verify":
        report = verify(ns.out_dir)
        for finding in report.findings:
            print(finding, file=sys.stderr)
        print("clean" if report.ok else f"{len(report.findings)} finding(s)")
        return 0 if report.ok else 2
    try:
        model = torch.load(ns.model, weights_only=False)
        model.eval()
        X = read_matrix(ns.x)
        y = read_matrix(ns.y)[:, 0] if ns.y else None
        manifest = export(model, ns.layers, X, y, ns.out, split=ns.split)
    except (ExportError, OSError) as e:
        print(f"dve-export: {e}", file=sys.stderr)
        return 2
    print(f"exported {len(manifest.layers)} layers x {manifest.rows} rows to {ns.out}")
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))
