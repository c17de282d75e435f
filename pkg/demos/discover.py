"""End to end: train on one domain, discover classes in unseen ones.

Run:  python demos/discover.py [seed]

The source domain carries labels for the seen classes only; the other classes
appear unlabelled. After training, target-domain features are embedded,
the class count is estimated from silhouette scores, and k-means clusters are
matched to the truth. The same run in flat space is shown alongside, together
with where the learnable curvature ended up.
"""

import sys
import time

from hidisc.benchmark import BENCH_SPEC, run_once
from hidisc.domains import DomainShift, simulate_domains
from hidisc.evaluation import evaluate_features
from hidisc.training import TrainConfig, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

ds = simulate_domains(BENCH_SPEC, 3, DomainShift(), seed=seed)
source = ds.select_domains(["d0"])
target = ds.select_domains(["d1", "d2"])
print(f"seen classes {list(ds.known_classes)}; {len(source.labels)} source rows, {len(target.labels)} target rows")

t0 = time.perf_counter()
res = train(source, TrainConfig(seed=seed, epochs=50))
print(f"trained in {time.perf_counter() - t0:.1f}s")
first, last = res.log.records[0], res.log.records[-1]
print(f"  loss {first.total:.3f} -> {last.total:.3f}   curvature {TrainConfig().init_curvature} -> {last.c:.3g}")

report = evaluate_features(
    res.encoder.tangent(target.features), target.labels, target.domains, ds.known_classes, k_max=20, seed=seed
)
print(report.to_text(timestamp="demo"), end="")

print("\nsame split, true class count given, both geometries:")
for geometry in ("hyperbolic", "euclidean"):
    r = run_once(TrainConfig(geometry=geometry), seed, geometry)
    print(f"  {geometry:<10} all={r.all_acc:.3f} old={r.old_acc:.3f} new={r.new_acc:.3f}")
