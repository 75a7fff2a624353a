"""Does a scalar style score explain pairwise correlations?"""

import numpy as np

from etfrisk import generate_synthetic_universe
from etfrisk.diagnostics import style_factor_diagnostic
from etfrisk.riskmodel import build_heterotic
from etfrisk.synth import SynthSpec

uni = generate_synthetic_universe(SynthSpec(seed=4))
model = build_heterotic(uni.planted, uni.returns, 252)
psi = model.correlation_matrix()

# a volatility score: realized vol, standardized
vol = np.sqrt(model.total_var)
score = (vol - vol.mean()) / vol.std()
res = style_factor_diagnostic(psi, score)
print("volatility score vs model correlations")
print("\n".join(res.lines()))

# a score that does drive correlations fits perfectly
beta = np.random.default_rng(0).uniform(-1, 1, size=len(score))
planted = np.outer(beta, beta)
np.fill_diagonal(planted, 1.0)
print("\nplanted product structure")
print("\n".join(style_factor_diagnostic(planted, beta).lines()))
