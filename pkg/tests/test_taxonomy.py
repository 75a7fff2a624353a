import numpy as np
import pytest
from conftest import make_panel
from hypothesis import given, settings, strategies as st

from etfrisk.data import AssetClass, Etf, HoldingsTable, LevelKind, Security, binary_level
from etfrisk.exposures import Mode
from etfrisk.taxonomy import (AugmentParams, OrganicConfig, assign_na_categories, augment_thirdparty,
                              build_organic_taxonomy, category_average_returns, default_mstar,
                              reclassify_small_categories, split_by_attribute,
                              split_categories_by_assetclass)

# -- organic -------------------------------------------------------------------


def _equity_universe(industries: dict[str, int]):
    """One ETF per unit count, each holding a single stock of its industry."""
    etfs, secs, rows = [], [], []
    n = 0
    for path, count in industries.items():
        for _ in range(count):
            sid, eid = f"S{n:03d}", f"E{n:03d}"
            secs.append(Security(sid, AssetClass.EQUITY, {path: 1.0}, market_cap=1e10, region="US"))
            etfs.append(Etf(eid, asset_class="Equity"))
            rows.append((eid, sid, 1.0))
            n += 1
    return etfs, secs, HoldingsTable.from_rows(rows)


def test_organic_defaults_recorded():
    etfs, secs, h = _equity_universe({"Tech/Soft": 5})
    tax, report = build_organic_taxonomy(etfs, secs, h)
    assert tax.metadata["nupper"] == "30" and tax.metadata["nlower"] == "3"
    assert "param nupper=30" in report.to_text()


def test_small_sector_is_not_recursed():
    etfs, secs, h = _equity_universe({"Tech/Soft": 5})
    tax, _ = build_organic_taxonomy(etfs, secs, h)
    assert tax.levels[0].categories == ("Equity.Tech",)
    assert tax.levels[1].categories == ("Equity",)


def test_large_sector_splits_into_industries():
    etfs, secs, h = _equity_universe({"Tech/Soft": 20, "Tech/Hard": 20})
    tax, report = build_organic_taxonomy(etfs, secs, h)
    assert tax.levels[0].sizes() == {"Equity.Tech.Hard": 20, "Equity.Tech.Soft": 20}
    assert all(p == "Equity" for p in tax.levels[0].parent_map.values())


def test_industry_split_rejected_when_groups_are_tiny():
    etfs, secs, h = _equity_universe({f"Tech/I{k}": 2 for k in range(20)})
    tax, report = build_organic_taxonomy(etfs, secs, h)
    assert tax.levels[0].categories == ("Equity.Tech",)
    assert any("rejected" in d for d in report.decisions)


def test_organic_asset_classes_and_multi_asset():
    secs = [Security("S1", AssetClass.EQUITY, {"Tech": 1.0}), Security("S2", AssetClass.BOND, {"Treasury": 1.0}),
            Security("S3", AssetClass.COMMODITY, {"Metals": 1.0}),
            Security("S4", AssetClass.CURRENCY, region="EU")]
    etfs = [Etf(f"E{k}") for k in range(5)]
    h = HoldingsTable.from_rows([("E0", "S1", 1.0), ("E1", "S2", 1.0), ("E2", "S3", 1.0), ("E3", "S4", 1.0),
                                 ("E4", "S1", 0.5), ("E4", "S2", 0.5)])
    tax, _ = build_organic_taxonomy(etfs, secs, h)
    lv1, lv2 = tax.levels
    assert lv1.assignment == {"E0": "Equity.Tech", "E1": "Bond.Treasury", "E2": "Commodity.Metals",
                              "E3": "Currency.EU", "E4": "MultiAsset – Other"}
    assert lv2.assignment["E4"] == "MultiAsset"


def test_organic_weighted_mode_keeps_weights():
    secs = [Security("S1", AssetClass.EQUITY, {"Tech": 1.0}), Security("S2", AssetClass.EQUITY, {"Health": 1.0})]
    etfs = [Etf("E0"), Etf("E1")]
    h = HoldingsTable.from_rows([("E0", "S1", 0.6), ("E0", "S2", 0.4), ("E1", "S2", 1.0)])
    tax, _ = build_organic_taxonomy(etfs, secs, h, OrganicConfig(weighted_wstar=0.3, mode=Mode.WEIGHTED))
    lv = tax.levels[0]
    assert lv.kind is LevelKind.WEIGHTED
    assert lv.assignment["E0"] == pytest.approx({"Equity.Tech": 0.6, "Equity.Health": 0.4})
    assert lv.assignment["E1"] == {"Equity.Health": 1.0}


def test_uncovered_etf_with_known_asset_class():
    secs = [Security("S1", AssetClass.BOND)]
    etfs = [Etf("E0", asset_class="Bond")]
    h = HoldingsTable.from_rows([("E0", "S1", 1.0)])
    tax, _ = build_organic_taxonomy(etfs, secs, h)
    assert tax.levels[0].assignment["E0"] == "Bond.Broad"


# -- asset-class splitting -----------------------------------------------------


def _mixed(shares: dict[str, float]):
    assign, ac, addv = {}, {}, {}
    for k, (cls, v) in enumerate(shares.items()):
        assign[f"E{k}"] = "A"
        ac[f"E{k}"] = cls
        addv[f"E{k}"] = v
    return binary_level("category", assign), ac, addv


def test_dominant_share_keeps_and_relabels():
    lv, ac, addv = _mixed({"Equity": 95.0, "Bond": 5.0})
    out, rep = split_categories_by_assetclass(lv, ac, addv, 0.1)
    assert out.categories == ("A",) and out.parent_map == {"A": "Equity"}
    assert rep.entries[0].decision == "relabeled"
    assert rep.relabeled == {"E1": ("Bond", "Equity")}


def test_even_shares_split():
    lv, ac, addv = _mixed({"Equity": 50.0, "Bond": 50.0})
    out, rep = split_categories_by_assetclass(lv, ac, addv, 0.1)
    assert out.assignment == {"E0": "A.Equity", "E1": "A.Bond"}
    assert out.parent_map == {"A.Bond": "Bond", "A.Equity": "Equity"}


def test_strict_threshold_splits_all_present_classes():
    lv, ac, addv = _mixed({"Equity": 60.0, "Bond": 30.0, "Commodity": 10.0})
    out, rep = split_categories_by_assetclass(lv, ac, addv, 0.1)
    assert rep.entries[0].decision == "split"
    assert set(out.categories) == {"A.Equity", "A.Bond", "A.Commodity"}
    assert sum(rep.entries[0].shares.values()) == pytest.approx(1.0, abs=1e-12)


def test_zero_addv_falls_back_to_counts():
    lv, ac, addv = _mixed({"Equity": 0.0, "Bond": 0.0})
    out, rep = split_categories_by_assetclass(lv, ac, addv, 0.1)
    assert rep.entries[0].count_fallback and rep.entries[0].decision == "split"
    assert "ETF-count" in rep.lines()[0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["Equity", "Bond", "Commodity"]), st.floats(0, 1e6)),
                min_size=1, max_size=8),
       st.floats(1e-3, 1e3))
def test_split_depends_only_on_shares(pairs, scale):
    assign = {f"E{k}": ("A" if k % 2 else "B") for k in range(len(pairs))}
    ac = {f"E{k}": p[0] for k, p in enumerate(pairs)}
    addv = {f"E{k}": p[1] for k, p in enumerate(pairs)}
    lv = binary_level("category", assign)
    a, ra = split_categories_by_assetclass(lv, ac, addv)
    b, rb = split_categories_by_assetclass(lv, ac, {k: v * scale for k, v in addv.items()})
    assert [e.decision for e in ra.entries] == [e.decision for e in rb.entries]
    assert a == b


# -- category averages ---------------------------------------------------------


def test_category_average_examples():
    panel = make_panel([[0.01, 0.02], [0.03, np.nan], [0.05, 0.07]], ["A1", "A2", "B1"])
    lv = binary_level("c", {"A1": "A", "A2": "A", "B1": "B"})
    avg = category_average_returns(panel, lv)
    assert avg.series("A")[0] == pytest.approx(0.02, abs=1e-15)
    assert avg.series("A")[1] == 0.02  # only A1 present
    assert avg.series("B").tolist() == [0.05, 0.07]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(1, 10), st.integers(0, 2 ** 31))
def test_category_average_equals_group_mean(n, t, seed):
    r = np.random.default_rng(seed)
    values = r.normal(size=(n, t))
    labels = r.integers(0, 3, size=n)
    panel = make_panel(values)
    lv = binary_level("c", {f"E{k}": f"C{labels[k]}" for k in range(n)})
    avg = category_average_returns(panel, lv)
    for c in lv.categories:
        rows = [k for k in range(n) if f"C{labels[k]}" == c]
        np.testing.assert_allclose(avg.series(c), values[rows].mean(axis=0), rtol=0, atol=1e-12)


# -- reclassification ----------------------------------------------------------


def _orthonormal(rng, t, k):
    q, _ = np.linalg.qr(rng.normal(size=(t, k + 1)))
    # columns orthogonal to the constant so they are centred
    x = q - q.mean(axis=0)
    q2, _ = np.linalg.qr(np.column_stack([np.ones(t), x]))
    return q2[:, 1:k + 1].T


def test_reclassify_picks_max_correlation(rng):
    u, v, w = _orthonormal(rng, 60, 3)
    x = 0.4 * u + 0.9 * v + np.sqrt(1 - 0.16 - 0.81) * w
    values = [u, u, u, v, v, v, x]
    ids = ["B1a", "B1b", "B1c", "B2a", "B2b", "B2c", "S"]
    lv = binary_level("c", dict(zip(ids, ["B1"] * 3 + ["B2"] * 3 + ["Small"])),
                      {"B1": "Bond", "B2": "Bond", "Small": "Bond"})
    out, rep = reclassify_small_categories(lv, make_panel(values, ids), 3)
    (move,) = rep.moves
    assert move.chosen == "B2" and move.reason == "argmax"
    assert move.rho["B1"] == pytest.approx(0.4, abs=1e-12)
    assert move.rho["B2"] == pytest.approx(0.9, abs=1e-12)
    assert "Small" not in out.categories and out.assignment["S"] == "B2"


def test_exact_copy_has_unit_correlation(rng):
    base = rng.normal(size=(2, 40))
    values = [base[0]] * 3 + [base[1]] * 3 + [base[1]]
    ids = [f"E{k}" for k in range(7)]
    lv = binary_level("c", dict(zip(ids, ["A"] * 3 + ["B"] * 3 + ["C"])), {"A": "X", "B": "X", "C": "X"})
    _, rep = reclassify_small_categories(lv, make_panel(values, ids))
    assert rep.moves[0].chosen == "B" and rep.moves[0].rho["B"] == pytest.approx(1.0, abs=1e-12)


def test_short_overlap_goes_to_largest(rng):
    values = rng.normal(size=(8, 10))
    ids = [f"E{k}" for k in range(8)]
    lv = binary_level("c", dict(zip(ids, ["A"] * 3 + ["B"] * 4 + ["C"])), {"A": "X", "B": "X", "C": "X"})
    _, rep = reclassify_small_categories(lv, make_panel(values, ids))
    assert rep.moves[0].chosen == "B" and rep.moves[0].reason == "largest"


def test_no_candidate_merges_into_other(rng):
    values = rng.normal(size=(3, 30))
    lv = binary_level("c", {"E0": "A", "E1": "A", "E2": "B"}, {"A": "Bond", "B": "Bond"})
    out, rep = reclassify_small_categories(lv, make_panel(values, ["E0", "E1", "E2"]))
    assert out.categories == ("Bond – Other",)
    assert rep.merged == {"Bond – Other": ["A", "B"]}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_no_small_category_left_behind(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(6, 20))
    labels = r.integers(0, 5, size=n)
    parents = {f"C{k}": ("X" if k < 3 else "Y") for k in range(5)}
    ids = [f"E{k:02d}" for k in range(n)]
    lv = binary_level("c", {e: f"C{l}" for e, l in zip(ids, labels)}, parents,
                      categories=sorted({f"C{l}" for l in labels}))
    out, rep = reclassify_small_categories(lv, make_panel(r.normal(size=(n, 40)), ids), 3)
    sizes = out.sizes()
    for c, size in sizes.items():
        if size < 3:
            assert c.endswith(" – Other")
    for ac in ("X", "Y"):
        others = [c for c in out.categories if out.parent_map[c] == ac and c.endswith(" – Other")]
        assert len(others) <= 1


# -- N/A assignment ------------------------------------------------------------


def _peer(i, cat, **attrs):
    return Etf(i, asset_class="Equity", thirdparty_category=cat, attributes=attrs)


def test_na_single_match():
    peers = [_peer("P1", "A", region="US"), _peer("P2", "B", region="EU")]
    (a,) = assign_na_categories([_peer("U", None, region="US")], peers, {"P1": "A", "P2": "B"})
    assert a.category == "A" and a.rule == "match-count"


def test_na_most_matching_members():
    peers = [_peer(f"A{k}", "A", region="US") for k in range(5)] + [_peer(f"B{k}", "B", region="US")
                                                                    for k in range(3)]
    assign = {p.id: p.thirdparty_category for p in peers}
    (a,) = assign_na_categories([_peer("U", None, region="US")], peers, assign)
    assert a.category == "A" and a.matches == {"A": 5, "B": 3}


def test_na_full_tie_and_no_match():
    peers = [_peer("P1", "B", region="US", style="Value"), _peer("P2", "A", region="US", style="Growth"),
             _peer("P3", "B", region="EU"), _peer("P4", "A", region="EU")]
    assign = {p.id: p.thirdparty_category for p in peers}
    out = assign_na_categories([_peer("U1", None, region="US"), _peer("U2", None, region="JP")], peers, assign)
    assert [(a.etf_id, a.category, a.rule) for a in out] == [
        ("U1", "A", "first-id"), ("U2", "Equity – Other", "other")]


# -- attribute split -----------------------------------------------------------


def test_default_mstar():
    lv = binary_level("c", {f"E{k}": f"C{k % 3}" for k in range(10)})
    assert default_mstar(lv) == 3


def test_attribute_split_respects_mstar():
    lv = binary_level("c", {"E0": "G", "E1": "G"}, {"G": "Bond"})
    out, rep = split_by_attribute(lv, {"E0": "short", "E1": "long"}, {"E0": 1.0, "E1": 1.0}, mstar=4)
    assert out == lv and rep.entries[0].decision == "skipped"


def test_attribute_split_half_and_half():
    ids = [f"E{k}" for k in range(10)]
    lv = binary_level("c", {e: "G" for e in ids}, {"G": "Bond"})
    attr = {e: ("short" if k < 5 else "long") for k, e in enumerate(ids)}
    out, rep = split_by_attribute(lv, attr, {e: 1.0 for e in ids}, mstar=4, name="duration")
    assert out.sizes() == {"G.long": 5, "G.short": 5}
    assert out.parent_map == {"G.long": "Bond", "G.short": "Bond"}


def test_attribute_missing_label_is_unknown():
    ids = [f"E{k}" for k in range(4)]
    lv = binary_level("c", {e: "G" for e in ids}, {"G": "Bond"})
    out, _ = split_by_attribute(lv, {"E0": "long", "E1": "long"}, {e: 1.0 for e in ids}, mstar=1)
    assert out.sizes() == {"G.long": 2, "G.unknown": 2}


# -- augmentation --------------------------------------------------------------


def test_augment_pure_input_adds_asset_class_level(rng):
    etfs = [Etf(f"E{k}", asset_class="Equity" if k < 3 else "Bond", addv=1.0,
                thirdparty_category="Eq" if k < 3 else "Fi") for k in range(6)]
    panel = make_panel(rng.normal(size=(6, 30)), [e.id for e in etfs])
    tax, report = augment_thirdparty(etfs, panel)
    lv1, lv2 = tax.levels
    assert lv1.assignment == {e.id: e.thirdparty_category for e in etfs}
    assert lv1.parent_map == {"Eq": "Equity", "Fi": "Bond"}
    assert report.decisions == []
    assert tax.metadata["vtilde"] == "0.1" and tax.metadata["nstar"] == "3"


def test_augment_with_attribute_split(rng):
    etfs = [Etf(f"E{k}", asset_class="Bond", addv=1.0, thirdparty_category="Fi",
                attributes={"duration_bucket": "short" if k < 4 else "long"}) for k in range(8)]
    panel = make_panel(rng.normal(size=(8, 30)), [e.id for e in etfs])
    tax, report = augment_thirdparty(etfs, panel, AugmentParams(split_attribute="duration_bucket"))
    assert tax.levels[0].sizes() == {"Fi.long": 4, "Fi.short": 4}
    assert "mstar 8" in report.decisions
