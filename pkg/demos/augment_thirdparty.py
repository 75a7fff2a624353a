"""Tidy a vendor grouping: mixed asset classes, tiny groups, missing labels."""

import dataclasses

from etfrisk import generate_synthetic_universe
from etfrisk.synth import SynthSpec
from etfrisk.taxonomy import AugmentParams, augment_thirdparty

uni = generate_synthetic_universe(SynthSpec(seed=2))

# scramble the vendor labels a little: one bond fund filed under an equity group,
# one fund in a singleton group, one without any label
etfs = list(uni.etfs)
equity_cat = next(e.thirdparty_category for e in etfs if e.asset_class == "Equity")
bond = next(k for k, e in enumerate(etfs) if e.asset_class == "Bond")
etfs[bond] = dataclasses.replace(etfs[bond], thirdparty_category=equity_cat, addv=1.0)
etfs[0] = dataclasses.replace(etfs[0], thirdparty_category="Vendor Oddball")
etfs[1] = dataclasses.replace(etfs[1], thirdparty_category=None)

tax, report = augment_thirdparty(etfs, uni.returns, AugmentParams(vtilde=0.1, nstar=3))
print("\n".join(report.to_text().splitlines()))
level = tax.levels[0]
for e in (etfs[0].id, etfs[1].id, etfs[bond].id):
    print(f"{e}: {level.assignment[e]} ({level.parent_map[level.assignment[e]]})")
