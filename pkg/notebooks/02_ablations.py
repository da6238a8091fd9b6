"""
Ablations on synthetic data
===========================

Compares the baseline, Gaussian heads alone, and the coalition term on the
user side, item side and both. Numbers are from synthetic clustered ratings,
not MovieLens, and a few seeds; read them as a smoke test of the wiring
rather than evidence about the method.

``python3 notebooks/02_ablations.py`` takes a few minutes.
"""

import numpy as np

from rvrec import dataset as D
from rvrec.config import ExperimentConfig
from rvrec.pipeline import run
from rvrec.synthetic import synthetic_ratings

ds = D.prepare(synthetic_ratings(n_users=400, n_items=300, ratings_per_user=(20, 60), n_clusters=6, seed=1), 3.5, 5)
print(ds)

variants = {
    "mf": dict(peo=False, msvr_mode="off"),
    "heads": dict(msvr_mode="off"),
    "heads, no residual": dict(msvr_mode="off", peo_bias=False),
    "u": dict(msvr_mode="u"),
    "i": dict(msvr_mode="i"),
    "ui": dict(msvr_mode="ui"),
    "ui, no enhance": dict(msvr_mode="ui", enhance="off"),
}
seeds = (0, 1, 2)
table = {}
for name, kw in variants.items():
    hr5, hr10 = [], []
    for seed in seeds:
        cfg = ExperimentConfig(d=16, epochs=15, learning_rate=0.01, seed=seed, **kw)
        report = run(cfg, ds=ds).report
        hr5.append(report.hr[5])
        hr10.append(report.hr[10])
    table[name] = (np.mean(hr5), np.std(hr5), np.mean(hr10), np.std(hr10))

print(f"{'variant':<20}{'HR@5':>16}{'HR@10':>16}")
for name, (m5, s5, m10, s10) in table.items():
    print(f"{name:<20}{m5:>10.3f} ±{s5:.3f}{m10:>10.3f} ±{s10:.3f}")

# What this run showed (15 epochs, three seeds): the Gaussian heads alone gave
# the best HR@5 (0.48 against 0.34 for MF). Dropping the residual input from
# the mean head (peo_bias off) collapsed ranking to near chance. The coalition
# variants sat between the two.
# The "replace" enhancement averages a user's vector with a few of its items,
# and turning it off recovered part of the gap ("ui, no enhance").
