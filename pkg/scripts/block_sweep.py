"""Sweep IBN variants over the shipped shapes and print the GC-IBN vs DW-IBN comparison.

    python3 scripts/block_sweep.py [--shapes configs/sweep_shapes.json] [--out runs/sweep]
"""

import argparse
from pathlib import Path

from nas_forge import strict_json
from nas_forge.analyzer import parse_shapes_doc, recommend_filters, run_block_sweep
from nas_forge.cli import sweep_summary
from nas_forge.cost_model import default_config
from nas_forge.report import emit_report

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--shapes", default=ROOT / "configs" / "sweep_shapes.json")
    ap.add_argument("--out", default=ROOT / "runs" / "sweep")
    args = ap.parse_args()

    with open(args.shapes, encoding="utf-8") as fh:
        shapes, menu, thresholds = parse_shapes_doc(strict_json.loads(fh.read()))
    table = run_block_sweep(shapes, menu, default_config())
    out = Path(args.out)
    emit_report(table, "csv", out / "sweep.csv")
    emit_report(table, "svg", out / "sweep.svg")

    print(sweep_summary(table))
    # the two rows the directional check looks at, per shape
    for shape in table.shapes():
        for r in table.select(h=shape[0], w=shape[1], c=shape[2], k=3):
            if r.variant in ("DepthwiseIbn", "FusedIbn") or (r.variant == "GcIbn" and r.g == 2):
                print(f"{shape} {r.variant:<13} m={str(r.m):<2} g={r.g!s:<4} params={r.params:>7} "
                      f"latency={r.latency_us:8.3f}us util={r.utilization:.3f} "
                      f"param_ratio={r.param_ratio:.3f} latency_ratio={r.latency_ratio:.3f}")
    print()
    for rule in recommend_filters(table, thresholds):
        print(f"drop {rule.variant} at {rule.regime}: {rule.reason} {rule.justification}")


if __name__ == "__main__":
    main()
