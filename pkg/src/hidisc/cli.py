"""``hidisc`` command line.

Subcommands: ``gen-synth``, ``score-domains``, ``train``, ``eval``, ``gradcheck``.
Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .data import FeatureDataset, read_features, write_features
from .domains import DomainShift, DomainStats, SyntheticSpec, diversity_score, select_top_domains, simulate_domains
from .errors import ConfigurationError, DataFormatError, DomainError, InvalidInputError, ShapeError
from .evaluation import evaluate_features
from .formats import (
    Checkpoint,
    coerce_value,
    config_keys,
    load_checkpoint,
    read_config,
    save_checkpoint,
    train_config_from,
)
from .gradcheck import format_report, run_checks
from .training import train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hidisc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- helpers -------------------------------------------------------------------------


def _known_list(value) -> list[str]:
    """``--known`` takes a comma list or the path of a file holding one."""
    if value is None:
        return []
    if isinstance(value, list):
        return value
    p = Path(value)
    if p.is_file():
        value = p.read_text(encoding="utf-8")
    return [s.strip() for s in value.replace("\n", ",").split(",") if s.strip()]


def _load_many(paths, known) -> FeatureDataset:
    if not paths:
        raise ConfigurationError("no feature files given")
    parts = [read_features(p, known) for p in paths]
    return FeatureDataset.concat(parts)


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- gen-synth ------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    if args.dim < 1:
        raise ConfigurationError(f"invalid dimension {args.dim}")
    spec = SyntheticSpec(
        n_classes=args.classes, dim=args.dim, n_per_class=args.per_class, n_known=args.known_count,
    )
    shift = DomainShift(args.rotation, args.bias, args.scale, args.jitter)
    ds = simulate_domains(spec, args.domains, shift, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for dom in ds.domain_ids:
        path = out / f"{dom}.features"
        write_features(ds.select_domains([dom]), path)
        print(f"wrote {path}")
    known = out / "known.txt"
    known.write_text(",".join(ds.known_classes) + "\n", encoding="utf-8")
    print(f"wrote {known}")
    return EXIT_OK


# --- score-domains ------------------------------------------------------------------------


def cmd_score_domains(args) -> int:
    source = read_features(args.source)
    synths = [read_features(p) for p in args.synth]
    dims = {source.dim} | {s.dim for s in synths}
    if len(dims) > 1:
        raise ShapeError(f"feature dimensions differ across files: {sorted(dims)}")
    names = [Path(p).stem for p in args.synth]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = diversity_score(
            DomainStats.fit(source.features), [DomainStats.fit(s.features) for s in synths], names
        )
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    top = select_top_domains(table, min(args.top, len(names)))
    sys.stdout.write(table.to_text())
    print(f"selected: {','.join(top)}")
    return EXIT_OK


# --- train --------------------------------------------------------------------------


def _train_overrides(args) -> dict:
    kinds = config_keys()
    over = {}
    for k, raw in _parse_set(args.set).items():
        if k not in kinds:
            raise ConfigurationError(f"unknown config key {k!r}")
        over[k] = coerce_value(k, kinds[k], raw)
    for name in ("epochs", "seed", "batch_size", "lr", "radius"):
        v = getattr(args, name)
        if v is not None:
            over[name] = v
    if args.ablation:
        over["geometry"] = args.ablation
    return over


def cmd_train(args) -> int:
    values = read_config(args.config) if args.config else {}
    over = _train_overrides(args)
    values.update(over)
    cfg = train_config_from(values)
    paths = args.data or values.get("train") or []
    known = _known_list(args.known) or values.get("known", [])
    out = Path(args.out or values.get("output") or ".")
    data = _load_many(paths, known)
    if not data.known_classes:
        warnings.warn("no known-class list given: every training label is treated as seen", stacklevel=1)
    result = train(data, cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(Checkpoint.from_result(result, cfg), out / "checkpoint.npz")
    (out / "train.log").write_text(result.log.to_text(), encoding="utf-8", newline="\n")
    last = result.log.records[-1] if result.log.records else None
    print(f"wrote {out / 'checkpoint.npz'}")
    print(f"wrote {out / 'train.log'}")
    if last is not None:
        print(f"final total={last.total:.6g} c={last.c:.6g}")
    return EXIT_OK


# --- eval ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    values = read_config(args.config) if args.config else {}
    ckpt = load_checkpoint(args.checkpoint)
    known = _known_list(args.known) or values.get("known") or list(ckpt.prototypes.class_ids)
    k_max = args.k_max if args.k_max is not None else values.get("k_max", 1000)
    data = _load_many(args.data, known)
    if data.dim != ckpt.encoder.head.dims[0]:
        raise ShapeError(f"checkpoint expects dimension {ckpt.encoder.head.dims[0]}, data has {data.dim}")
    feats = ckpt.encoder.tangent(data.features)
    report = evaluate_features(
        feats, data.labels, data.domains, known, k=args.k, k_max=k_max, seed=args.seed,
    )
    text = report.to_text()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    sys.stdout.write(text)
    return EXIT_OK


# --- gradcheck ------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    results = run_checks(seed=args.seed, cases=args.cases)
    sys.stdout.write(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


# --- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hidisc", description="Hyperbolic domain-generalized category discovery on feature vectors.")
    p.add_argument("--version", action="version", version=f"hidisc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="write simulated multi-domain feature files")
    g.add_argument("--classes", type=int, default=7)
    g.add_argument("--domains", type=int, default=3)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--per-class", type=int, default=60)
    g.add_argument("--known-count", type=int, default=None, help="number of seen classes (default: half, rounded up)")
    g.add_argument("--rotation", type=float, default=DomainShift.rotation)
    g.add_argument("--bias", type=float, default=DomainShift.bias)
    g.add_argument("--scale", type=float, default=DomainShift.scale)
    g.add_argument("--jitter", type=float, default=DomainShift.jitter)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="synth")
    g.set_defaults(func=cmd_gen_synth)

    s = sub.add_parser("score-domains", help="rank synthetic domains by the FID diversity score")
    s.add_argument("source")
    s.add_argument("synth", nargs="+")
    s.add_argument("--top", type=int, default=2)
    s.set_defaults(func=cmd_score_domains)

    t = sub.add_parser("train", help="train an encoder; writes checkpoint.npz and train.log")
    t.add_argument("--data", nargs="+", help="feature files (source plus any synthetic domains)")
    t.add_argument("--known", help="seen classes: comma list or a file holding one")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--out", help="output directory")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--radius", type=float)
    t.add_argument("--ablation", choices=["euclidean"], help="train the flat-space loss analogues instead")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="cluster embedded target features and report All/Old/New")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--known", help="seen classes (default: the checkpoint's prototype classes)")
    e.add_argument("--k", type=int, help="cluster count; skips estimation")
    e.add_argument("--k-max", type=int, help="upper bound for K estimation (default 1000)")
    e.add_argument("--config", help="config file; only known and k_max are used")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="report file")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--cases", type=int, default=100)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ShapeError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, DomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
