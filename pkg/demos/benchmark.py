"""
Three architectures, one synthetic budget
=========================================

Train MS-CNN, WaveNet and Skip-WaveNet on the same synthetic echograms with
the same iteration budget and print a comparison table next to the published
numbers. Published values come from real radar data at much larger scale, so
only the shape of the table is comparable. Runs for several minutes.
"""
import sys

from threadpoolctl import threadpool_limits

from snowlayers.benchmark import format_table, run_benchmark

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 400

with threadpool_limits(1):
    result = run_benchmark(n_train=64, n_test=16, seeds=(0, 1, 2), iterations=iterations,
                           log_fn=lambda v, r: print(f"{v:12s} seed {r['seed']}  ODS {r['ods']:.3f}  "
                                                     f"MAE {r['mae'] if r['mae'] is None else round(r['mae'], 3)}"))

print(format_table(result))
soft = result["soft_check"]
print(f"skipwavenet MAE <= mscnn MAE: {soft['holds']} ({soft['skipwavenet_mae']:.3f} vs {soft['mscnn_mae']:.3f})")
