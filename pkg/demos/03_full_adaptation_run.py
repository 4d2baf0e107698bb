"""End-to-end adaptation on the default synthetic benchmark.

The benchmark draws 2000 unlabeled 8-dimensional samples from four
Gaussian classes whose geometry is a rotated, shifted copy of a source
domain. Teacher B scores the source geometry (boundaries misplaced, one
class pushed by a logit bias); teacher C knows the target geometry only
roughly but hedges. The two-stage procedure distills their fused
predictions into a small network and then self-trains on prototypes.

Ground-truth labels exist only for reporting; training never sees them.
"""

import time

import numpy as np

from dualdistill import PipelineConfig, bayes_accuracy, default_benchmark, run
from dualdistill.synth import teacher_accuracy

pair, dataset, teacher_b, teacher_c = default_benchmark(seed=0)

print("=" * 70)
print("1. The playing field")
print("=" * 70)
acc_b = teacher_accuracy(teacher_b, dataset)
acc_c = teacher_accuracy(teacher_c, dataset)
ceiling = bayes_accuracy(pair.target, n_draws=200_000)
print(f"  teacher B (sharp, source-fit, biased): {acc_b:.1%}")
print(f"  teacher C (smooth, roughly target-aware): {acc_c:.1%}")
print(f"  Bayes ceiling of the target domain: {ceiling:.1%}")

print()
print("=" * 70)
print("2. Two-stage training (25 distillation epochs + 10 self-training)")
print("=" * 70)
cfg = PipelineConfig(seed=0)
start = time.time()
result = run(cfg, dataset, teacher_b, teacher_c)
elapsed = time.time() - start

print(f"  {'epoch':>5} {'stage':>5} {'accuracy':>9} {'GU':>7}  notes")
for record in result.records:
    note = ""
    if record.fusion is not None:
        note = f"fused ({record.fusion.branch}, alpha={record.fusion.alpha:.3f})"
    if record.epoch in (1, 5, 10, 15, 20, 25, 26, 30, 35) or record.fusion is not None:
        print(f"  {record.epoch:>5} {record.stage:>5} {record.target_accuracy:>9.4f} "
              f"{record.gu_of_target:>7.4f}  {note}")

stage_one = result.records[cfg.stage_one_epochs - 1].target_accuracy
final = result.records[-1].target_accuracy
print()
print(f"  stage-one model: {stage_one:.1%}   full model: {final:.1%}   "
      f"({elapsed:.1f}s on one core)")
print(f"  gain over the best teacher: {final - max(acc_b, acc_c):+.1%}")

print()
print("=" * 70)
print("3. What the pieces contributed (paired seeds)")
print("=" * 70)
from dataclasses import replace

for name in ("mix", "im", "sr", "self"):
    variant = run(replace(cfg, **{f"use_{name}": False}), dataset, teacher_b, teacher_c)
    v_final = variant.records[-1]
    print(f"  without {name:4s}: accuracy {v_final.target_accuracy:.4f} "
          f"({v_final.target_accuracy - final:+.4f}), "
          f"prediction diversity GU {v_final.gu_of_target:.4f} "
          f"({v_final.gu_of_target - result.records[-1].gu_of_target:+.4f})")
print("  Removing the diversity term (im) is the clearest mechanism-level")
print("  change: the marginal entropy of the predictions drops.")
