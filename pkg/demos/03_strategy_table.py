"""Compare swap strategies over every ordered instrument pair and a handful of seeds.

Prints the summary table that `timbreswap eval` writes to metrics.csv, plus the
condition-only generation accuracy of the three classifiers.

usage: python demos/03_strategy_table.py [artifact_root]
"""
from _common import prepared

from timbreswap import pipeline

config = prepared()
report, gen = pipeline.evaluate(config)
print(f"\n{'strategy':10s} {'chroma':>8s} {'KAD':>8s} {'inst acc':>9s} {'fallbacks':>10s}")
for r in report.rows:
    print(f"{r['strategy']:10s} {r['chroma']:8.4f} {r['kad']:8.2f} {r['inst_acc']:9.3f} {r['no_change']:5d}/{r['n']}")
print(f"\ncondition-only samples ({gen['n']}): teacher {gen['teacher']:.3f}, distilled {gen['distilled']:.3f}, "
      f"non-distilled {gen['nondistilled']:.3f}")
