"""Acceptance criteria, one test each; the terminal summary prints a pass/fail line per criterion."""

import itertools
from pathlib import Path

import numpy as np
import pytest
from conftest import make_panel
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from etfrisk.cli import main
from etfrisk.data import Etf, HoldingsTable, binary_level
from etfrisk.diagnostics import style_factor_diagnostic
from etfrisk.exposures import (BROAD, HIGH_YIELD, INVESTMENT_GRADE, LINEAR_SCORES, LINEAR_SCORES_NOTCHED,
                               ExposureMatrix, RatingMethod, RatingScale, average_credit_rating,
                               compute_exposures, threshold_exposures)
from etfrisk.returns import CLIPPED, FILLED, preprocess_returns
from etfrisk.riskmodel import build_general, build_heterotic, invert_model
from etfrisk.synth import SynthSpec, generate_synthetic_universe
from etfrisk.taxonomy import AugmentParams, augment_thirdparty, reclassify_small_categories

crit = pytest.mark.criterion


def masked_corr(x, y):
    ok = ~(np.isnan(x) | np.isnan(y))
    return np.corrcoef(x[ok], y[ok])[0, 1]


# -- 1 -------------------------------------------------------------------------


@crit(1, "exposure matrix equals the explicit weight x membership product (50 instances, 1e-12)")
def test_exposure_oracle():
    r = np.random.default_rng(101)
    for _ in range(50):
        n, m, k = r.integers(1, 11), r.integers(1, 21), r.integers(1, 7)
        omega = r.random((n, m)) * (r.random((n, m)) < 0.6)
        omega[np.arange(n), r.integers(0, m, n)] += 0.1
        omega /= omega.sum(axis=1, keepdims=True)
        lam = r.random((m, k)) * (r.random((m, k)) < 0.5)
        covered = r.random(m) < 0.85
        sums = lam.sum(axis=1, keepdims=True)
        lam = np.where(sums > 0, lam / np.where(sums > 0, sums, 1), 0.0) * covered[:, None]

        etfs = [f"E{i}" for i in range(n)]
        secs = [f"S{a:02d}" for a in range(m)]
        cats = [f"C{c}" for c in range(k)]
        rows = [(etfs[i], secs[a], float(omega[i, a])) for i in range(n) for a in range(m) if omega[i, a] > 0]
        membership = {secs[a]: {cats[c]: float(lam[a, c]) for c in range(k) if lam[a, c] > 0}
                      for a in range(m) if lam[a].sum() > 0}
        out = compute_exposures(HoldingsTable.from_rows(rows), membership, etfs, cats)
        expect = np.zeros((n, k))
        for i, a, c in itertools.product(range(n), range(m), range(k)):
            expect[i, c] += omega[i, a] * lam[a, c]
        assert np.abs(out.W - expect).max() <= 1e-12


# -- 2 -------------------------------------------------------------------------


WSTAR = 0.5 + 1e-9


@st.composite
def exposure_rows(draw):
    k = draw(st.integers(1, 6))
    raw = draw(arrays(np.float64, k, elements=st.floats(0, 1)))
    if raw.sum() == 0:
        return raw
    row = raw / raw.sum()
    if draw(st.booleans()) and k >= 2:
        row = np.zeros(k)
        row[:2] = 0.5
    return row


@crit(2, "threshold W*=0.5+1e-9 assigns at most one category and Broad iff all entries below W*")
@settings(max_examples=300, deadline=None)
@given(st.lists(exposure_rows(), min_size=1, max_size=8))
def test_threshold_semantics(rows):
    k = max(len(x) for x in rows)
    W = np.array([np.pad(x, (0, k - len(x))) for x in rows])
    ids = tuple(f"E{i}" for i in range(len(W)))
    E = ExposureMatrix(ids, tuple(f"C{c}" for c in range(k)), W, np.ones(len(W)))
    cls = threshold_exposures(E, WSTAR)
    for i, e in enumerate(ids):
        a = cls.assignments[e]
        assert a == BROAD or a in E.category_ids
        assert (a == BROAD) == bool((W[i] < WSTAR).all())
        if a != BROAD:
            assert W[i, E.category_ids.index(a)] >= WSTAR


# -- 3 -------------------------------------------------------------------------


@crit(3, "credit rating: AAA/A 50/50 gives AA, default-rate relabel invariance, BBB-/BB+ boundary")
def test_credit_rating():
    H = HoldingsTable.from_rows([("E1", "S1", 0.5), ("E1", "S2", 0.5)])
    r = average_credit_rating(H, {"S1": "AAA", "S2": "A"})
    assert r.value[0] == 2.0 and r.labels[0] == "AA"

    table = RatingScale(("AAA", "BBB", "B"), {"AAA": 0.01, "BBB": 0.20, "B": 4.0}, "BBB")
    rename = {"AAA": "top", "BBB": "mid", "B": "low"}
    r = np.random.default_rng(3)
    for _ in range(20):
        w = r.dirichlet(np.ones(3))
        labels = r.choice(table.labels, size=3)
        rows = [("E1", f"S{a}", float(w[a])) for a in range(3)]
        base = average_credit_rating(HoldingsTable.from_rows(rows), {f"S{a}": labels[a] for a in range(3)},
                                     RatingMethod.DEFAULT_RATE, default_rates=table)
        moved = average_credit_rating(HoldingsTable.from_rows(rows),
                                      {f"S{a}": rename[labels[a]] for a in range(3)},
                                      RatingMethod.DEFAULT_RATE, default_rates=table.relabel(rename))
        assert base.value[0] == moved.value[0]
        assert rename[base.labels[0]] == moved.labels[0]
        assert base.groups[0] == moved.groups[0]

    assert LINEAR_SCORES_NOTCHED.group("BBB-") == INVESTMENT_GRADE
    assert LINEAR_SCORES_NOTCHED.group("BB+") == HIGH_YIELD
    assert LINEAR_SCORES.group("BBB") == INVESTMENT_GRADE and LINEAR_SCORES.group("BB") == HIGH_YIELD


# -- 4 -------------------------------------------------------------------------


def augment_fixture():
    # X: 95/5 equity/bond by ADDV, W: pure equity, Y: 50/50
    etfs = [
        Etf("E1", asset_class="Equity", addv=60.0, thirdparty_category="X"),
        Etf("E2", asset_class="Equity", addv=35.0, thirdparty_category="X"),
        Etf("E3", asset_class="Bond", addv=5.0, thirdparty_category="X"),
        Etf("E4", asset_class="Equity", addv=10.0, thirdparty_category="W"),
        Etf("E5", asset_class="Equity", addv=10.0, thirdparty_category="W"),
        Etf("E6", asset_class="Equity", addv=10.0, thirdparty_category="W"),
        Etf("E7", asset_class="Equity", addv=50.0, thirdparty_category="Y"),
        Etf("E8", asset_class="Bond", addv=50.0, thirdparty_category="Y"),
    ]
    r = np.random.default_rng(44)
    T = 80
    x, w = r.normal(size=T), r.normal(size=T)
    rows = [x + 0.3 * r.normal(size=T) for _ in range(3)]
    rows += [w + 0.3 * r.normal(size=T) for _ in range(4)]
    rows.append(r.normal(size=T))
    return etfs, make_panel(np.array(rows) * 0.01, [e.id for e in etfs])


@crit(4, "8-ETF augmentation fixture reproduces the hand-traced staged outcome")
def test_augmentation_trace():
    etfs, panel = augment_fixture()
    tax, report = augment_thirdparty(etfs, panel, AugmentParams(vtilde=0.1, nstar=3))
    level, top = tax.levels

    assert level.assignment == {"E1": "X", "E2": "X", "E3": "X", "E4": "W", "E5": "W", "E6": "W",
                                "E7": "W", "E8": "Bond – Other"}
    assert level.parent_map == {"W": "Equity", "X": "Equity", "Bond – Other": "Bond"}
    assert top.assignment == {e: ("Bond" if e == "E8" else "Equity") for e in level.assignment}

    # oracle correlations of E7 against the candidate averages (current members only)
    V = panel.values
    rho_w = np.corrcoef(V[6], V[3:6].mean(axis=0))[0, 1]
    rho_x = np.corrcoef(V[6], V[0:3].mean(axis=0))[0, 1]
    assert rho_w > rho_x
    assert report.decisions == [
        "split-asset_class X: relabeled -> X [Bond:0.05,Equity:0.95]",
        "split-asset_class Y: split -> Y.Bond,Y.Equity [Bond:0.5,Equity:0.5]",
        "relabel E3: Bond -> Equity",
        f"reclass E7: Y.Equity -> W by argmax [W:{rho_w:.6f},X:{rho_x:.6f}]",
        "merge Bond – Other: Y.Bond (no candidate of size >= n_*)",
    ]
    text = report.to_text()
    assert "param vtilde=0.1" in text and "param nstar=3" in text


# -- 5 -------------------------------------------------------------------------


def random_reclass_case(seed):
    r = np.random.default_rng(seed)
    T = 60
    assign, parents, rows = {}, {}, []
    n = 0
    for ac in ("Equity", "Bond"):
        for k in range(r.integers(2, 5)):
            cat = f"{ac}{k}"
            parents[cat] = ac
            common = r.normal(size=T)
            for _ in range(r.integers(1, 5)):
                e = f"E{n:02d}"
                assign[e] = cat
                rows.append(common * r.uniform(0, 1) + r.normal(size=T))
                n += 1
    values = np.array(rows) * 0.01
    values[r.random(values.shape) < 0.05] = np.nan
    ids = list(assign)
    return binary_level("category", assign, parents), make_panel(values, ids)


@crit(5, "reclassification picks the max-correlation candidate (100 runs); ties go to the first id")
def test_reclassification_argmax():
    moved = 0
    for seed in range(100):
        level, panel = random_reclass_case(seed)
        out, report = reclassify_small_categories(level, panel, nstar=3, min_overlap=20)
        groups = level.groups()
        idx = panel.index()
        for mv in report.moves:
            moved += 1
            assert mv.reason == "argmax"
            for b in mv.candidates:
                avg = np.nanmean(panel.values[[idx[e] for e in groups[b]]], axis=0)
                assert mv.rho[b] == pytest.approx(masked_corr(panel.values[idx[mv.etf_id]], avg), abs=1e-12)
            assert all(mv.rho[mv.chosen] >= mv.rho[b] for b in mv.candidates)
            assert mv.chosen == min(b for b in mv.candidates if mv.rho[b] == max(mv.rho.values()))
            assert out.assignment[mv.etf_id] == mv.chosen
    assert moved > 50

    # identical candidate averages: the lexicographically first id wins
    r = np.random.default_rng(9)
    base = r.normal(size=(3, 40))
    values = np.vstack([base, base, r.normal(size=(1, 40))])
    ids = ["B1", "B2", "B3", "A1", "A2", "A3", "S1"]
    assign = {"B1": "B", "B2": "B", "B3": "B", "A1": "A", "A2": "A", "A3": "A", "S1": "S"}
    level = binary_level("category", assign, {"A": "Equity", "B": "Equity", "S": "Equity"},
                         categories=["B", "A", "S"])
    out, report = reclassify_small_categories(level, make_panel(values, ids))
    (mv,) = report.moves
    assert mv.rho["A"] == mv.rho["B"] and mv.chosen == "A" and out.assignment["S1"] == "A"


# -- 6 -------------------------------------------------------------------------


@crit(6, "returns prep: planted 0.25 becomes a category-mean fill, idempotent, clipped values never averaged")
def test_returns_prep():
    level = binary_level("category", {"A1": "A", "A2": "A", "A3": "A", "B1": "B"}, {"A": "Equity", "B": "Bond"})
    ids = ["A1", "A2", "A3", "B1"]
    values = np.array([[0.25, 0.01, -0.02], [0.01, 0.02, 0.00], [0.03, -0.01, 0.01], [0.0, 0.001, 0.002]])
    clean = preprocess_returns(make_panel(values, ids), level, rstar=0.1)
    assert clean.base.values[0, 0] == pytest.approx(np.mean([0.01, 0.03]), abs=1e-15)
    assert [(e.etf_id, e.action) for e in clean.fill_log] == [("A1", CLIPPED), ("A1", FILLED)]

    again = preprocess_returns(clean.base, level, rstar=0.1)
    assert again.base == clean.base and again.fill_log == ()

    # poisoned: two huge returns on the same date; each fill must use only the clean peer
    poisoned = values.copy()
    poisoned[1, 0] = -0.9
    out = preprocess_returns(make_panel(poisoned, ids), level, rstar=0.1)
    assert out.base.values[0, 0] == pytest.approx(0.03, abs=1e-15)
    assert out.base.values[1, 0] == pytest.approx(0.03, abs=1e-15)
    fills = [e.value_after for e in out.fill_log if e.action == FILLED]
    assert all(abs(v) <= 0.1 for v in fills)


# -- 7-9 -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def synth_universe():
    return generate_synthetic_universe(SynthSpec(seed=21))


@crit(7, "synthetic N=100, K=12, F=4: diagonal calibration < 1e-8 and PSD at T=21 and T=252")
def test_calibration(synth_universe):
    uni = synth_universe
    assert len(uni.planted.levels[0].categories) == 12 and len(uni.planted.levels[1].categories) == 4
    for T in (21, 252):
        model = build_heterotic(uni.planted, uni.returns, T)
        G = model.covariance_matrix()
        X = uni.returns.values[:, -T:]
        sample_var = X.var(axis=1, ddof=1)
        assert len(model.etf_ids) == 100
        assert np.abs(np.diag(G) / sample_var - 1).max() < 1e-8
        vals = np.linalg.eigvalsh(G)
        assert vals.min() >= -1e-10 * vals.max()


@crit(8, "zero idiosyncratic noise: relative max error of model vs sample covariance < 1e-6")
def test_zero_noise_recovery():
    uni = generate_synthetic_universe(SynthSpec(idio_vol=0.0, category_vol=0.0, seed=22))
    model = build_heterotic(uni.planted, uni.returns, 252)
    C = np.cov(uni.returns.values[:, -252:])
    G = model.covariance_matrix()
    assert np.abs(G - C).max() / np.abs(C).max() < 1e-6


@crit(9, "N=100 inversion: |G G^-1 - I| < 1e-8, agrees with dense inversion")
def test_inversion(synth_universe):
    model = build_heterotic(synth_universe.planted, synth_universe.returns, 252)
    G = model.covariance_matrix()
    inv = invert_model(model)
    assert np.abs(G @ inv - np.eye(100)).max() < 1e-8
    dense = np.linalg.inv(G)
    assert np.abs(inv - dense).max() < 1e-8 * np.abs(dense).max()


# -- 10 ------------------------------------------------------------------------


@crit(10, "style diagnostic: intercept equals mean pairwise correlation (100 cases), planted product R^2 >= 1-1e-9")
def test_style_diagnostic():
    r = np.random.default_rng(10)
    for _ in range(100):
        n = int(r.integers(3, 40))
        A = r.normal(size=(n, n + int(r.integers(1, 30))))
        psi = np.corrcoef(A)
        np.fill_diagonal(psi, 1.0)
        psi = (psi + psi.T) / 2
        beta = r.normal(size=n) * r.choice([1.0, 0.0], p=[0.9, 0.1])
        res = style_factor_diagnostic(psi, beta)
        assert abs(res.intercept - psi[np.tril_indices(n, -1)].mean()) < 1e-10
    beta = r.uniform(-1, 1, size=30)
    psi = np.outer(beta, beta)
    np.fill_diagonal(psi, 1.0)
    res = style_factor_diagnostic(psi, beta)
    assert res.r_squared >= 1 - 1e-9 and "product" in res.coefficients


# -- 11 ------------------------------------------------------------------------


def run_pipeline(root: Path):
    data = root / "data"
    steps = [
        ["synth", "generate", "--out", str(data), "--missing-rate", "0.01", "--seed", "11"],
        ["taxonomy", "organic", "--data", str(data), "--out", str(root / "tax.tsv")],
        ["returns", "prep", "--data", str(data), "--taxonomy", str(root / "tax.tsv"),
         "--out", str(root / "clean.csv")],
        ["model", "build", "--heterotic", "--taxonomy", str(root / "tax.tsv"),
         "--returns", str(root / "clean.csv"), "--out", str(root / "model")],
    ]
    for argv in steps:
        assert main(argv) == 0


@crit(11, "two seeded pipeline runs (synth, taxonomy, model) are byte-identical")
def test_determinism(tmp_path):
    run_pipeline(tmp_path / "a")
    run_pipeline(tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 10
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


# -- 12 ------------------------------------------------------------------------


@crit(12, "general build on an indicator matrix equals the indicator heterotic build to 1e-10")
def test_binary_weighted_consistency(synth_universe):
    uni = synth_universe
    for T in (21, 252):
        general = build_general(uni.planted.levels[0], uni.returns, T)
        heterotic = build_heterotic(uni.planted, uni.returns, T, principal_components=False)
        assert general.etf_ids == heterotic.etf_ids
        assert np.abs(general.covariance_matrix() - heterotic.covariance_matrix()).max() < 1e-10
