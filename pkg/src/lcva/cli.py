"""Command line entry point: ``lcva synth|train|eval|bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .data import (
    PairedDataset,
    build_knn_graph,
    file_sha256,
    generate_synthetic_spillover,
    load_pairs_csv,
    load_units_csv,
    save_pairs_csv,
    save_units_csv,
    split_pairs,
    synthesize_counterfactual_matching,
)
from .errors import LcvaError, NumericError, UsageError
from .estimators import (
    ESTIMATOR_NAMES,
    Estimator,
    estimator_from_checkpoint,
    estimator_to_checkpoint,
    make_estimator,
)
from .metrics import MetricsReport, format_table
from .pipeline import evaluate

log = logging.getLogger("lcva")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_dataset(cfg: ExperimentConfig) -> PairedDataset:
    """Materialize the configured dataset: CSV ingestion or the generator."""
    data = cfg.data
    if data.units_csv is None:
        return generate_synthetic_spillover(cfg.synthetic_spec())
    units = load_units_csv(data.units_csv)
    if not units:
        raise UsageError(f"{data.units_csv} holds no units")
    provenance = {"units_csv": data.units_csv, "units_sha256": file_sha256(data.units_csv)}
    if data.pairs_csv:
        pairs = load_pairs_csv(data.pairs_csv, units)
        provenance["pairs_sha256"] = file_sha256(data.pairs_csv)
    else:
        pairs = build_knn_graph(units, data.knn_k)
        provenance["knn_k"] = data.knn_k
    if data.match_counterfactuals:
        units = synthesize_counterfactual_matching(units)
        provenance["counterfactuals"] = "matched"
    return PairedDataset(units, pairs, provenance)


def _fit(cfg: ExperimentConfig, name: str, train: PairedDataset) -> Estimator:
    est = make_estimator(name, lcva=cfg.lcva_hyper(), forest=cfg.forest_hyper())
    log.info("fitting %s on %d pairs", name, len(train.pairs))
    return est.fit(train)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: ExperimentConfig) -> int:
    ds = build_dataset(cfg)
    out = _out_dir(cfg)
    save_units_csv(out / "units.csv", ds.units)
    save_pairs_csv(out / "pairs.csv", ds.pairs, ds.units)
    manifest = {
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json", exclude={"out"}),
        "provenance": ds.provenance,
        "counts": ds.counts(),
        "files": {name: file_sha256(out / name) for name in ("units.csv", "pairs.csv")},
        "version": __version__,
    }
    if "true_ate" in ds.provenance:
        manifest["true_ate"] = ds.provenance["true_ate"]
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out / 'units.csv'}, {out / 'pairs.csv'}, {out / 'manifest.json'}")
    return 0


def cmd_train(cfg: ExperimentConfig) -> int:
    ds = build_dataset(cfg)
    train, _ = split_pairs(ds, cfg.split.train_fraction, cfg.seed)
    out = _out_dir(cfg)
    try:
        est = _fit(cfg, cfg.estimator, train)
    except NumericError as exc:
        _write_json(out / "trace.json", {"estimator": cfg.estimator, "status": "diverged",
                                         "error": str(exc)})
        raise
    checkpoint = estimator_to_checkpoint(est)
    checkpoint["config"] = cfg.model_dump(mode="json", exclude={"out"})
    _write_json(out / "model.json", checkpoint)
    _write_json(out / "trace.json", {"estimator": cfg.estimator, "status": "ok",
                                     "objective": list(getattr(est, "trace", []))})
    print(f"wrote {out / 'model.json'}, {out / 'trace.json'}")
    return 0


def _emit_reports(out: Path, stem: str, reports: list) -> None:
    table = format_table(reports)
    doc = [r.model_dump(mode="json") for r in reports]
    _write_json(out / f"{stem}.json", doc[0] if stem == "report" else doc)
    (out / f"{stem}.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def cmd_eval(cfg: ExperimentConfig, checkpoint_path: str) -> int:
    try:
        doc = json.loads(Path(checkpoint_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {checkpoint_path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{checkpoint_path}: not JSON ({exc.msg})") from None
    est = estimator_from_checkpoint(doc)
    if est.name != cfg.estimator:
        raise UsageError(f"checkpoint holds {est.name!r} but config names {cfg.estimator!r}")
    ds = build_dataset(cfg)
    _, test = split_pairs(ds, cfg.split.train_fraction, cfg.seed)
    report = evaluate(est, test, cfg.metrics, seed=cfg.seed)
    _emit_reports(_out_dir(cfg), "report", [report])
    return 0


def cmd_bench(cfg: ExperimentConfig) -> int:
    ds = build_dataset(cfg)
    train, test = split_pairs(ds, cfg.split.train_fraction, cfg.seed)
    reports: list[MetricsReport] = []
    for name in ESTIMATOR_NAMES:
        est = _fit(cfg, name, train)
        reports.append(evaluate(est, test, cfg.metrics, seed=cfg.seed))
    _emit_reports(_out_dir(cfg), "bench", reports)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, metavar="N", help="run seed; overrides the config")
    common.add_argument("--out", metavar="DIR", help="output directory; overrides the config")
    common.add_argument("--set", action="append", default=[], metavar="K=V", dest="overrides",
                        help="override a config key, e.g. lcva.epochs=50 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lcva", description="Paired-spillover causal effect estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write units.csv, pairs.csv and manifest.json")
    sub.add_parser("train", parents=[common], help="fit the configured estimator")
    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint on the test split")
    ev.add_argument("--checkpoint", required=True, metavar="PATH")
    sub.add_parser("bench", parents=[common], help="train and score all five estimators")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        return cmd_bench(cfg)
    except LcvaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
