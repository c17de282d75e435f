"""Picking which synthetic domains to train on.

Run:  python demos/choose_domains.py

Several shifted copies of a simulated source domain are scored by how far
their feature statistics sit from the source and from each other (Frechet
distance between fitted Gaussians). The most diverse ones are kept, which here
means the strongest shift wins over the gentle ones.
"""

from hidisc.domains import DomainShift, DomainStats, SyntheticSpec, diversity_score, select_top_domains, simulate_domains

spec = SyntheticSpec(n_classes=7, dim=16, n_per_class=60)
source = simulate_domains(spec, 1, DomainShift(), seed=0)

# candidate domains: same classes, increasingly aggressive shifts
candidates = {
    "near_copy": DomainShift(rotation=0.02, bias=0.05),
    "mild": DomainShift(rotation=0.2, bias=0.5),
    "default": DomainShift(),
    "strong": DomainShift(rotation=0.6, bias=2.0),
    "rescaled": DomainShift(rotation=0.3, bias=1.0, scale=0.4),
}

stats = []
for shift in candidates.values():
    ds = simulate_domains(spec, 2, shift, seed=0).select_domains(["d1"])
    stats.append(DomainStats.fit(ds.features))

table = diversity_score(DomainStats.fit(source.features), stats, list(candidates))
print(table.to_text(), end="")
top = select_top_domains(table, 2)
print(f"kept for training: {', '.join(top)}")
assert top[0] == "strong"
