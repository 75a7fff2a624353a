"""Taxonomy-driven factor risk models for ETF universes."""

from .data import (AssetClass, DataError, Etf, HoldingsTable, ReturnsPanel, Security, Taxonomy,
                   TaxonomyLevel, Universe, load_taxonomy, load_universe, save_taxonomy)
from .diagnostics import StyleDiagnosticResult, style_factor_diagnostic
from .exposures import compute_exposures, threshold_exposures
from .returns import CleanPanel, preprocess_returns
from .riskmodel import (RiskModel, build_general, build_heterotic, compute_factor_returns,
                        invert_model, load_model, save_model)
from .synth import SynthSpec, generate_synthetic_universe
from .taxonomy import augment_thirdparty, build_organic_taxonomy

__version__ = "0.1.0"
