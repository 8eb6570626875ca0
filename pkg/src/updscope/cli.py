"""Command-line entry point: ``updscope <command> [options]``.

Option values are resolved as: command-line flag, then environment
variable ``UPDSCOPE_<OPTION>`` (upper case, dashes as underscores), then
the ``--config`` file (flat ``key = value`` lines, ``#`` comments), then
the built-in default.

Exit codes: 0 success, 1 some items failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import geo, metrics, morphology, perception, selftest, synthetic, weightfile
from .fileio import ManifestError, atomic_write_text, read_csv, read_manifest, write_csv
from .pipeline import PipelineConfig, detect_rows, rank_rows
from .ranking import RANKING_COLUMNS, FactorRanking, ranking_rows, read_rankings_full
from .raster import load_image, save_image
from .segmentation import class_name, load_segmentation, save_segmentation
from .swin import ConfigError, SwinClassifier, SwinConfig, SwinWeights, complexity_msa, complexity_wmsa
from .trainer import TrainConfig, TrainingError, train_head, write_loss_curve

ENV_PREFIX = "UPDSCOPE_"
EXIT_OK, EXIT_ITEMS_FAILED, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("updscope")

DETECT_COLUMNS = ["image_id", "label", "p_upd", "error"]
ERROR_COLUMNS = ["image_id", "error"]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config resolution


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_").lower()] = value
    return values


def _env_values() -> dict[str, str]:
    return {
        k[len(ENV_PREFIX):].lower(): v
        for k, v in os.environ.items()
        if k.startswith(ENV_PREFIX) and k != ENV_PREFIX + "CONFIG"
    }


def _truthy(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _apply_defaults(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Install config/env values as parser defaults so flags still win."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_defaults(sub, values)
            continue
        key = action.dest.lower()
        if key not in values or action.default is argparse.SUPPRESS:
            continue
        value = values[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = _truthy(value)
        action.default = value
        action.required = False


# ---------------------------------------------------------------------------
# helpers


def _load_manifest(path):
    try:
        return read_manifest(path)
    except (OSError, ManifestError) as exc:
        raise UsageError(str(exc)) from None


def _require_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _pipeline_config(args, **extra) -> PipelineConfig:
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    return PipelineConfig(
        weights=_require_file(args.weights, "weights"),
        workers=args.workers,
        chunk_size=args.chunk_size,
        **extra,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def _model_config(args) -> SwinConfig:
    try:
        return SwinConfig(
            patch_size=args.patch_size,
            embed_dim=args.embed_dim,
            depths=tuple(int(v) for v in str(args.depths).split(",")),
            num_heads=tuple(int(v) for v in str(args.heads).split(",")),
            window_size=args.window_size,
            mlp_ratio=args.mlp_ratio,
            seed=args.seed,
        )
    except (ConfigError, ValueError) as exc:
        raise UsageError(f"invalid model configuration: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_init_weights(args) -> int:
    cfg = _model_config(args)
    weightfile.save(SwinWeights.initialize(cfg), args.out)
    print(f"wrote {args.out} ({cfg})")
    return EXIT_OK


def cmd_detect(args) -> int:
    rows = _load_manifest(_require_file(args.manifest, "manifest"))
    results = detect_rows(rows, _pipeline_config(args))
    out = []
    for r in results:
        if r.error:
            out.append({"image_id": r.image_id, "label": "", "p_upd": "", "error": r.error})
        else:
            out.append({"image_id": r.image_id, "label": r.label, "p_upd": _fmt(r.p_upd), "error": ""})
    write_csv(args.out, DETECT_COLUMNS, out)
    failed = sum(1 for r in results if r.error)
    if failed:
        logger.error("%d of %d images failed", failed, len(results))
    return EXIT_ITEMS_FAILED if failed else EXIT_OK


def _errors_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".errors.csv")


def cmd_rank(args) -> int:
    rows = _load_manifest(_require_file(args.manifest, "manifest"))
    cfg = _pipeline_config(
        args,
        explainer=args.explainer,
        channel_budget=args.channel_budget,
        min_pixels=args.min_pixels,
        top_k=args.top_k,
        force=args.force,
        heatmap_dir=Path(args.heatmaps) if args.heatmaps else None,
    )
    results = rank_rows(rows, cfg)
    write_csv(args.out, RANKING_COLUMNS, ranking_rows(r.ranking for r in results if r.ranking is not None))
    errors = [{"image_id": r.image_id, "error": r.error} for r in results if r.error]
    err_path = _errors_path(args.out)
    if errors:
        write_csv(err_path, ERROR_COLUMNS, errors)
        logger.error("%d of %d images failed; see %s", len(errors), len(results), err_path)
    elif err_path.exists():
        err_path.unlink()
    skipped = sum(1 for r in results if r.skipped)
    if skipped:
        logger.info("%d images predicted non-disorder were not ranked (use --force)", skipped)
    return EXIT_ITEMS_FAILED if errors else EXIT_OK


def _judgments(rankings: dict[str, FactorRanking], manifest_rows):
    judged = []
    for row in manifest_rows:
        if not row.gt_ranking:
            continue
        pred = rankings.get(row.image_id, FactorRanking(row.image_id))
        judged.append(metrics.RankingJudgment(tuple(pred.class_ids), row.gt_ranking, row.image_id))
    return judged


def cmd_eval(args) -> int:
    rows = _load_manifest(_require_file(args.manifest, "manifest"))
    rankings = read_rankings_full(_require_file(args.rankings, "rankings"))
    judged = _judgments(rankings, rows)
    if not judged:
        raise UsageError("manifest has no gt_ranking entries to evaluate against")
    table = metrics.ranking_table(judged, args.k_max)
    out_rows = [
        {"metric": m, **{f"top@{k}": _fmt(v) for k, v in enumerate(vals, start=1)}}
        for m, vals in table.items()
    ]
    write_csv(args.out, ["metric"] + [f"top@{k}" for k in range(1, args.k_max + 1)], out_rows)
    text = metrics.format_ranking_table(table)
    atomic_write_text(Path(args.out).with_suffix(".txt"), text)
    print(text, end="")
    return EXIT_OK


def _read_predictions(path) -> dict[str, tuple[int, float]]:
    preds = {}
    for row in read_csv(path):
        if row.get("error"):
            continue
        preds[row["image_id"]] = (int(row["label"]), float(row["p_upd"]))
    return preds


def cmd_eval_detect(args) -> int:
    rows = _load_manifest(_require_file(args.manifest, "manifest"))
    preds = _read_predictions(_require_file(args.predictions, "predictions"))
    pairs = [(preds[r.image_id][0], r.label) for r in rows if r.label is not None and r.image_id in preds]
    if not pairs:
        raise UsageError("no images with both a prediction and a manifest label")
    m = metrics.detection_metrics([p for p, _ in pairs], [y for _, y in pairs])
    write_csv(args.out, ["accuracy", "recall", "precision", "f1", "flags"],
              [{**{k: _fmt(v) for k, v in m.as_row().items()}, "flags": ";".join(m.flags)}])
    text = metrics.format_detection_table({"all": m})
    atomic_write_text(Path(args.out).with_suffix(".txt"), text)
    print(text, end="")
    return EXIT_OK


def cmd_qscore(args) -> int:
    records = perception.read_comparisons(_require_file(args.comparisons, "comparisons"))
    out = []
    for attr in perception.ATTRIBUTES:
        if not any(r.attribute == attr for r in records):
            continue
        for q in perception.compute_q_scores(records, attr):
            out.append({"image_id": q.image_id, "attribute": attr, "wins": q.wins,
                        "losses": q.losses, "ties": q.ties, "q_score": _fmt(q.score)})
    write_csv(args.out, ["image_id", "attribute", "wins", "losses", "ties", "q_score"], out)
    return EXIT_OK


def cmd_label(args) -> int:
    records = perception.read_comparisons(_require_file(args.comparisons, "comparisons"))
    qs = {}
    for attr in perception.ATTRIBUTES:
        if any(r.attribute == attr for r in records):
            qs[attr] = perception.compute_q_scores(records, attr)
    labeled = perception.label_dataset(
        qs, args.low_pct, args.high_pct, args.min_votes, votes=perception.vote_counts(records)
    )
    cols = ["image_id", "label", "combined_score", *perception.ATTRIBUTES]
    write_csv(args.out, cols, [
        {"image_id": r.image_id, "label": "" if r.label is None else r.label,
         "combined_score": _fmt(r.combined_score), **{a: _fmt(r.scores[a]) for a in perception.ATTRIBUTES}}
        for r in labeled
    ])
    n_pos = sum(r.label == 1 for r in labeled)
    n_neg = sum(r.label == 0 for r in labeled)
    print(f"{len(labeled)} eligible images: {n_pos} disorder, {n_neg} non-disorder")
    return EXIT_OK


def cmd_train_head(args) -> int:
    rows = [r for r in _load_manifest(_require_file(args.manifest, "manifest")) if r.label is not None]
    if not rows:
        raise UsageError("manifest has no labeled rows (column 'label')")
    weights = weightfile.load(_require_file(args.weights, "weights"))
    model = SwinClassifier(weights, chunk_size=args.chunk_size)
    feats, labels = [], []
    for r in rows:
        feats.append(model.features(load_image(r.image_path).data[None])[0])
        labels.append(r.label)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    result = train_head(np.stack(feats), np.array(labels), cfg)
    weightfile.save(weights, args.out, head=(result.weight, result.bias))
    if args.loss_csv:
        write_loss_curve(result.history, args.loss_csv)
    last = result.history[-1] if result.history else None
    if last:
        print(f"epoch {last.epoch}: train_loss={last.train_loss:.4f} "
              f"val_loss={last.val_loss:.4f} val_accuracy={last.val_accuracy:.4f}")
    return EXIT_OK


def cmd_stratify(args) -> int:
    rows = _load_manifest(_require_file(args.manifest, "manifest"))
    preds = _read_predictions(args.predictions) if args.predictions else {}
    rankings = read_rankings_full(args.rankings) if args.rankings else {}
    results = []
    for r in rows:
        if r.morphology is not None:
            b = morphology.parse_bin(r.morphology)
        elif r.segmentation_path is not None:
            b = morphology.bin_for_ratio(morphology.estimate_ratio(load_segmentation(r.segmentation_path)))
        else:
            b = morphology.MorphologyBin.UNBINNED
        judgment = None
        if r.gt_ranking and r.image_id in rankings:
            judgment = metrics.RankingJudgment(tuple(rankings[r.image_id].class_ids), r.gt_ranking, r.image_id)
        pred = preds.get(r.image_id, (None, None))[0]
        results.append(morphology.ImageResult(r.image_id, b, pred, r.label, judgment))
    report = morphology.stratified_report(results, args.k_max)
    out_rows = []
    for b, row in report.rows.items():
        d = row.detection
        out = {"morphology": b.label, "n_images": row.n_images}
        if d:
            out.update({k: _fmt(v) for k, v in d.as_row().items()})
        if row.map_at_k:
            out.update({f"map@{k}": _fmt(v) for k, v in enumerate(row.map_at_k, start=1)})
        out_rows.append(out)
    cols = ["morphology", "n_images", "accuracy", "recall", "precision", "f1"]
    cols += [f"map@{k}" for k in range(1, args.k_max + 1)]
    write_csv(args.out, cols, out_rows)
    text = morphology.format_stratified(report, args.k_max)
    atomic_write_text(Path(args.out).with_suffix(".txt"), text)
    print(text, end="")
    return EXIT_OK


def cmd_map(args) -> int:
    rows = _load_manifest(_require_file(args.manifest, "manifest"))
    preds = _read_predictions(_require_file(args.predictions, "predictions"))
    rankings = read_rankings_full(args.rankings) if args.rankings else {}
    records, errors = [], []
    for r in rows:
        if r.image_id not in preds:
            continue
        if r.lat is None or r.lon is None:
            errors.append((r.image_id, "missing lat/lon"))
            continue
        label, p = preds[r.image_id]
        records.append(geo.StudyRecord(r.image_id, r.lat, r.lon, label, p,
                                       rankings.get(r.image_id, FactorRanking(r.image_id))))
    doc = geo.emit_geojson(records, args.top_k, errors=errors)
    geo.validate_geojson(doc)
    atomic_write_text(args.out, geo.dumps(doc))
    if args.grid_out:
        good = {f["id"] for f in doc["features"]}
        cells = geo.grid_aggregate([r for r in records if r.image_id in good], args.cell_size)
        write_csv(args.grid_out, ["cell_lat", "cell_lon", "count", "upd_rate"], [
            {"cell_lat": c.cell_lat, "cell_lon": c.cell_lon, "count": c.count, "upd_rate": _fmt(c.upd_rate)}
            for c in cells
        ])
    for image_id, msg in errors:
        logger.error("%s rejected: %s", image_id, msg)
    return EXIT_ITEMS_FAILED if errors else EXIT_OK


def cmd_complexity(args) -> int:
    try:
        msa = complexity_msa(args.h, args.w, args.C)
        wmsa = complexity_wmsa(args.h, args.w, args.C, args.M)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(json.dumps({"h": args.h, "w": args.w, "C": args.C, "M": args.M, "msa": msa, "wmsa": wmsa}))
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "segmentation").mkdir(parents=True, exist_ok=True)
    scenes = synthetic.generate_dataset(args.n, args.size, args.seed)
    rows = []
    for s in scenes:
        save_image(s.image, out / "images" / f"{s.image_id}.png")
        save_segmentation(s.segmentation, out / "segmentation" / f"{s.image_id}.png")
        rows.append({
            "image_id": s.image_id,
            "image_path": f"images/{s.image_id}.png",
            "segmentation_path": f"segmentation/{s.image_id}.png",
            "gt_ranking": str(s.planted_class) if s.planted_class else "",
            "lat": _fmt(s.lat),
            "lon": _fmt(s.lon),
            "label": s.label,
        })
    write_csv(out / "manifest.csv",
              ["image_id", "image_path", "segmentation_path", "gt_ranking", "lat", "lon", "label"], rows)
    print(f"wrote {len(rows)} scenes to {out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = selftest.run_all(seed=args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_ITEMS_FAILED


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def common_options(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without defaults, so a value
        # given before the subcommand is not reset by the subparser
        def default(value):
            return argparse.SUPPRESS if suppress else value

        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--config", default=default(None), help="flat key = value config file")
        p.add_argument("--seed", type=int, default=default(0))
        p.add_argument("--workers", type=int, default=default(1))
        p.add_argument("--chunk-size", type=int, default=default(16), help="images per forward batch")
        p.add_argument("-v", "--verbose", action="store_true", default=default(False))
        return p

    parser = argparse.ArgumentParser(prog="updscope", description=__doc__.splitlines()[0],
                                     parents=[common_options(False)])
    common = common_options(True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        return p

    def model_opts(p):
        p.add_argument("--patch-size", type=int, default=4)
        p.add_argument("--embed-dim", type=int, default=32)
        p.add_argument("--depths", default="2,2,2,2")
        p.add_argument("--heads", default="2,4,8,16")
        p.add_argument("--window-size", type=int, default=7)
        p.add_argument("--mlp-ratio", type=float, default=4.0)

    p = add("init-weights", cmd_init_weights, "write seed-initialized weights")
    model_opts(p)
    p.add_argument("--out", required=True)

    p = add("detect", cmd_detect, "classify every manifest image")
    p.add_argument("--manifest")
    p.add_argument("--weights")
    p.add_argument("--out", required=True)

    p = add("rank", cmd_rank, "explain and rank semantic factors per image")
    p.add_argument("--manifest")
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--heatmaps", help="directory for activation-map PNGs")
    p.add_argument("--explainer", default="scorecam")
    p.add_argument("--channel-budget", type=int, default=None)
    p.add_argument("--min-pixels", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--force", action="store_true", help="also rank images predicted non-disorder")

    p = add("eval", cmd_eval, "top@k ranking metrics against manifest gt_ranking")
    p.add_argument("--rankings")
    p.add_argument("--manifest")
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--out", required=True)

    p = add("eval-detect", cmd_eval_detect, "detection metrics against manifest labels")
    p.add_argument("--predictions")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)

    p = sub.add_parser("dataset", help="perception-score dataset construction", parents=[common])
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    q = dsub.add_parser("qscore", help="Q scores per image and attribute", parents=[common])
    q.set_defaults(func=cmd_qscore)
    q.add_argument("--comparisons")
    q.add_argument("--out", required=True)
    q = dsub.add_parser("label", help="percentile disorder labels", parents=[common])
    q.set_defaults(func=cmd_label)
    q.add_argument("--comparisons")
    q.add_argument("--low-pct", type=float, default=5.0)
    q.add_argument("--high-pct", type=float, default=95.0)
    q.add_argument("--min-votes", type=int, default=100)
    q.add_argument("--out", required=True)

    p = add("train-head", cmd_train_head, "train the linear head on frozen features")
    p.add_argument("--manifest")
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=8)

    p = add("stratify", cmd_stratify, "metrics per street-canyon bin")
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--rankings")
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--out", required=True)

    p = add("map", cmd_map, "GeoJSON map and grid aggregate")
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--rankings")
    p.add_argument("--top-k", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-out")
    p.add_argument("--cell-size", type=float, default=0.01)

    p = add("complexity", cmd_complexity, "attention cost for h, w, C, M")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--M", type=int, default=7)

    p = add("synth", cmd_synth, "generate the planted-texture benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--size", type=int, default=128)

    add("selftest", cmd_selftest, "run the built-in oracle checks")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    config_path = known.config or os.environ.get(ENV_PREFIX + "CONFIG")

    parser = build_parser()
    try:
        values = read_config_file(config_path) if config_path else {}
        values.update(_env_values())
    except (OSError, UsageError) as exc:
        print(f"updscope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _apply_defaults(parser, values)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, TrainingError, perception.DatasetError, metrics.MetricError,
            weightfile.WeightFileError, FileNotFoundError) as exc:
        print(f"updscope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
