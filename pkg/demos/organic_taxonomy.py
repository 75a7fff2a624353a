"""Build a taxonomy from holdings alone and compare it with the planted one."""

from collections import Counter

from etfrisk import generate_synthetic_universe
from etfrisk.synth import SynthSpec
from etfrisk.taxonomy import build_organic_taxonomy

uni = generate_synthetic_universe(SynthSpec(seed=1))
tax, report = build_organic_taxonomy(uni.etfs, uni.securities, uni.holdings)

level, top = tax.levels
print(f"{len(level.categories)} categories under {len(top.categories)} asset classes")
for cat, n in sorted(level.sizes().items()):
    print(f"  {cat:<24} {n:3d}  parent={level.parent_map[cat]}")

# how well the holdings-only build lines up with the planted truth
truth = uni.planted.levels[0].assignment
pairs = Counter((truth[e], level.assignment[e]) for e in truth)
matched = sum(max(n for (t, _), n in pairs.items() if t == planted) for planted in set(truth.values()))
print(f"majority-match agreement: {matched}/{len(truth)}")

print("\nbuild decisions:")
print("\n".join(report.to_text().splitlines()[:15]))
