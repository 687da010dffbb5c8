"""
Coverage against patch budget
=============================

Every strategy here is a prefix-nested greedy, so a single run at K_max gives
the coverage for every smaller budget. The same tables come out of
``patchroute compare``.
"""

import sys
import tempfile
from pathlib import Path

from patchroute import clustered_dataset, coverage_curve
from patchroute.pipeline import STRATEGIES, RoutingSetup, selector
from patchroute.reports import write_cdf_csv, write_curve_csv

n_scenes = int(sys.argv[1]) if len(sys.argv) > 1 else 20
ds = clustered_dataset(seed=0, n_scenes=n_scenes)
setup = RoutingSetup()

curves = {name: coverage_curve(ds.scenes, selector(name, setup), 60, setup.criterion) for name in STRATEGIES}

print(f"{n_scenes} scenes, {ds.n_boxes} objects; object coverage by budget")
print("K    " + "  ".join(f"{n:>14s}" for n in STRATEGIES))
for k in (5, 10, 20, 40, 60):
    print(f"{k:<4d} " + "  ".join(f"{curves[n].object_rate(k):14.4f}" for n in STRATEGIES))

# greedy on true coverage sets has diminishing returns, rank by rank
print("exact-greedy mean gain, ranks 1-8:", curves["exact-greedy"].avg_marginal[:8].round(1))

out = Path(tempfile.mkdtemp(prefix="patchroute-"))
write_curve_csv(out / "curve_issga-linear.csv", curves["issga-linear"])
write_cdf_csv(out / "cdf_issga-linear.csv", curves["issga-linear"].per_image_rates(40))
print("tables written to", out)
