"""
Command-line pipeline driver.

    etfrisk synth generate --out data/
    etfrisk taxonomy organic --data data/ --out tax.tsv
    etfrisk returns prep --data data/ --taxonomy tax.tsv --out clean.csv
    etfrisk model build --heterotic --taxonomy tax.tsv --returns clean.csv --out model/
    etfrisk model invert --model model/ --out inverse.csv
    etfrisk diagnose style --model model/ --beta beta.csv

Every run writes a JSON manifest next to its output. Parameters come from
flags, then from the ``key=value`` file named by ``--config`` or the
``RISKMODEL_CONFIG`` environment variable, then from built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import (ConfigError, DataError, TaxonomyLevel, binary_level, load_returns, load_taxonomy,
                   load_universe, save_taxonomy, taxonomy_hash)
from .diagnostics import style_factor_diagnostic
from .exposures import DEFAULT_WSTAR, TIE_GUARD, Mode
from .returns import DEFAULT_RSTAR, preprocess_returns
from .riskmodel import build_general, build_heterotic, invert_model, load_model, save_model
from .synth import SynthSpec, generate_synthetic_universe
from .taxonomy import (DEFAULT_NLOWER, DEFAULT_NSTAR, DEFAULT_NUPPER, DEFAULT_VTILDE, DEFAULT_WINDOW,
                       AugmentParams, OrganicConfig, augment_thirdparty, build_organic_taxonomy)

CONFIG_ENV = "RISKMODEL_CONFIG"
MANIFEST = "manifest.json"

# name -> (type, default)
PARAMS = {
    "wstar": (float, DEFAULT_WSTAR),
    "vtilde": (float, DEFAULT_VTILDE),
    "nstar": (int, DEFAULT_NSTAR),
    "mstar": (int, None),
    "nupper": (int, DEFAULT_NUPPER),
    "nlower": (int, DEFAULT_NLOWER),
    "rstar": (float, DEFAULT_RSTAR),
    "lookback": (int, None),
    "window": (int, DEFAULT_WINDOW),
    "seed": (int, 0),
}


class UsageError(DataError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{Path(path).name} line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in PARAMS:
            raise ConfigError(f"{Path(path).name} line {n}: unknown key {k!r}")
        out[k] = v
    return out


def resolve(args: argparse.Namespace, names: Sequence[str]) -> dict:
    path = args.config or os.environ.get(CONFIG_ENV)
    config = read_config(path) if path else {}
    out = {}
    for name in names:
        typ, default = PARAMS[name]
        flag = getattr(args, name, None)
        if flag is not None:
            out[name] = flag
        elif name in config:
            try:
                out[name] = typ(config[name])
            except ValueError:
                raise ConfigError(f"config key {name}: not a valid {typ.__name__}: {config[name]!r}") from None
        else:
            out[name] = default
    return out


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def universe_digest(root: str | Path) -> str:
    h = hashlib.sha256()
    for name in ("etfs.csv", "securities.csv", "holdings.csv", "returns.csv"):
        p = Path(root) / name
        if p.exists():
            h.update(name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(path: Path, command: str, params: dict, inputs: dict, outputs: Sequence[str],
                   extra: dict | None = None) -> None:
    body = {
        "command": command,
        "version": __version__,
        "params": {k: v for k, v in sorted(params.items())},
        "inputs": inputs,
        "outputs": sorted(outputs),
    }
    body.update(extra or {})
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sidecar(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    p = resolve(args, ["seed"])
    spec = SynthSpec(n_days=args.days, missing_rate=args.missing_rate, idio_vol=args.idio_vol,
                     category_vol=args.category_vol, seed=p["seed"])
    uni = generate_synthetic_universe(spec)
    out = Path(args.out)
    uni.write(out)
    params = {"seed": p["seed"], "days": args.days, "missing_rate": args.missing_rate,
              "idio_vol": args.idio_vol, "category_vol": args.category_vol}
    write_manifest(out / MANIFEST, "synth generate", params, {},
                   ["etfs.csv", "securities.csv", "holdings.csv", "returns.csv", "planted_taxonomy.tsv"],
                   {"universe_hash": universe_digest(out)})


def cmd_organic(args) -> None:
    p = resolve(args, ["wstar", "nupper", "nlower"])
    uni = load_universe(args.data)
    cfg = OrganicConfig(wstar=p["wstar"], guard=TIE_GUARD, nupper=p["nupper"], nlower=p["nlower"],
                        mode=Mode(args.mode))
    tax, report = build_organic_taxonomy(uni.etfs, uni.securities, uni.holdings, cfg)
    _write_taxonomy(args, tax, report, "taxonomy organic", {**p, "mode": args.mode})


def cmd_augment(args) -> None:
    p = resolve(args, ["vtilde", "nstar", "mstar", "window"])
    uni = load_universe(args.data)
    params = AugmentParams(vtilde=p["vtilde"], nstar=p["nstar"], window=p["window"],
                           split_attribute=args.split_attribute, mstar=p["mstar"])
    tax, report = augment_thirdparty(uni.etfs, uni.returns, params)
    _write_taxonomy(args, tax, report, "taxonomy augment",
                    {**p, "split_attribute": args.split_attribute})


def _write_taxonomy(args, tax, report, command: str, params: dict) -> None:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_taxonomy(tax, out)
    rep = out.with_name(out.name + ".report.txt")
    rep.write_text(report.to_text(), encoding="utf-8")
    write_manifest(_sidecar(out), command, params, {"universe_hash": universe_digest(args.data)},
                   [out.name, rep.name], {"taxonomy_hash": taxonomy_hash(tax)})


def _fill_level(uni, tax) -> TaxonomyLevel:
    """Third-party categories where known when the taxonomy came from augmentation."""
    lv = tax.levels[0]
    if tax.metadata.get("route") != "augment":
        return lv
    assign = {e.id: (e.thirdparty_category or lv.assignment.get(e.id)) for e in uni.etfs}
    return binary_level("thirdparty", {e: c for e, c in assign.items() if c is not None})


def cmd_prep(args) -> None:
    p = resolve(args, ["rstar", "lookback"])
    uni = load_universe(args.data)
    tax = load_taxonomy(args.taxonomy)
    clean = preprocess_returns(uni.returns, tax.levels[0], p["rstar"], p["lookback"],
                               fill_level=_fill_level(uni, tax))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    clean.to_csv(out)
    outputs = [out.name]
    log_path = Path(args.log) if args.log else out.with_name(out.stem + ".fill_log.csv")
    clean.log_to_csv(log_path)
    outputs.append(log_path.name)
    write_manifest(_sidecar(out), "returns prep", p,
                   {"universe_hash": universe_digest(args.data), "taxonomy_hash": taxonomy_hash(tax)},
                   outputs, {"dropped": list(clean.dropped), "lookback_used": clean.lookback})


def cmd_build(args) -> None:
    p = resolve(args, ["lookback"])
    tax = load_taxonomy(args.taxonomy)
    panel = load_returns(args.returns)
    if args.general:
        model = build_general(tax.levels[0], panel, p["lookback"], augment=args.augment)
    else:
        model = build_heterotic(tax, panel, p["lookback"], principal_components=not args.no_pc)
    out = Path(args.out)
    params = {**p, "construction": "general" if args.general else "heterotic",
              "principal_components": not args.no_pc, "augment": args.augment}
    save_model(model, out, {"taxonomy_hash": taxonomy_hash(tax),
                            "returns_hash": file_digest(args.returns)})
    write_manifest(out / "run.manifest.json", "model build", params,
                   {"taxonomy_hash": taxonomy_hash(tax), "returns_hash": file_digest(args.returns)},
                   ["loadings.csv", "factors.csv", "factor_cov.csv", "specific.csv", MANIFEST])


def _write_matrix(path: Path, ids: Sequence[str], M: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("etf_id", *ids))
        for e, row in zip(ids, M):
            w.writerow((e, *(repr(float(v)) for v in row)))


def cmd_invert(args) -> None:
    model = load_model(args.model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        inv = invert_model(model)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_matrix(out, model.etf_ids, inv)
    write_manifest(_sidecar(out), "model invert", {},
                   {"model_manifest": file_digest(Path(args.model) / MANIFEST)}, [out.name])


def _read_beta(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"etf_id", "value"}:
        raise DataError(f"{Path(path).name}: expected columns etf_id,value")
    return {r["etf_id"]: float(r["value"]) for r in rows}


def cmd_style(args) -> None:
    beta = _read_beta(args.beta)
    if args.model:
        model = load_model(args.model)
        ids, psi = model.etf_ids, model.correlation_matrix()
        inputs = {"model_manifest": file_digest(Path(args.model) / MANIFEST)}
    else:
        panel = load_returns(args.returns)
        if np.isnan(panel.values).any():
            raise DataError("returns contain missing values; preprocess first")
        ids, psi = panel.etf_ids, np.corrcoef(panel.values)
        inputs = {"returns_hash": file_digest(args.returns)}
    missing = [e for e in ids if e not in beta]
    if missing:
        raise DataError(f"no style value for {missing[0]}")
    res = style_factor_diagnostic(psi, np.array([beta[e] for e in ids]))
    text = "\n".join(res.lines()) + "\n"
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="utf-8")
        inputs["beta_hash"] = file_digest(args.beta)
        write_manifest(_sidecar(out), "diagnose style", {}, inputs, [out.name])


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add(p, *names):
    for name in names:
        typ, _ = PARAMS[name]
        p.add_argument(f"--{name}", type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="etfrisk", description="ETF taxonomy and factor risk model pipeline")
    root.add_argument("--config", help="key=value parameter file (else $RISKMODEL_CONFIG)")
    root.add_argument("--version", action="version", version=__version__)
    sub = root.add_subparsers(dest="group", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth").add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = synth.add_parser("generate")
    g.add_argument("--out", required=True)
    g.add_argument("--days", type=int, default=300)
    g.add_argument("--missing-rate", type=float, default=0.0)
    g.add_argument("--idio-vol", type=float, default=SynthSpec.idio_vol)
    g.add_argument("--category-vol", type=float, default=SynthSpec.category_vol)
    _add(g, "seed")
    g.set_defaults(func=cmd_synth)

    tax = sub.add_parser("taxonomy").add_subparsers(dest="action", required=True, parser_class=_Parser)
    o = tax.add_parser("organic")
    o.add_argument("--data", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.BINARY.value)
    _add(o, "wstar", "nupper", "nlower")
    o.set_defaults(func=cmd_organic)
    a = tax.add_parser("augment")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--split-attribute", default=None)
    _add(a, "vtilde", "nstar", "mstar", "window")
    a.set_defaults(func=cmd_augment)

    ret = sub.add_parser("returns").add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = ret.add_parser("prep")
    r.add_argument("--data", required=True)
    r.add_argument("--taxonomy", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--log", default=None)
    _add(r, "rstar", "lookback")
    r.set_defaults(func=cmd_prep)

    mod = sub.add_parser("model").add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = mod.add_parser("build")
    kind = b.add_mutually_exclusive_group()
    kind.add_argument("--heterotic", action="store_true")
    kind.add_argument("--general", action="store_true")
    b.add_argument("--taxonomy", required=True)
    b.add_argument("--returns", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--no-pc", action="store_true", help="indicator loadings instead of block PCs")
    b.add_argument("--augment", action="store_true", help="general build: scale weights by block PCs")
    _add(b, "lookback")
    b.set_defaults(func=cmd_build)
    i = mod.add_parser("invert")
    i.add_argument("--model", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_invert)

    diag = sub.add_parser("diagnose").add_subparsers(dest="action", required=True, parser_class=_Parser)
    s = diag.add_parser("style")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--returns")
    s.add_argument("--beta", required=True, help="CSV with columns etf_id,value")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_style)
    return root


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (DataError, OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
