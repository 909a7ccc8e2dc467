"""Command-line entry points.

Subcommands: ingest, detect, featurize, train, simulate, eval, serve, synth.
Exit codes: 0 ok, 2 validation error, 3 data error, 4 internal error. Every
command accepts --seed and --config <json> (config supplies defaults for
unset options).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import al, synth
from .audio_io import MIN_POOL_DURATION_S, decode, resample
from .detector import DetectorParams, compute_spectrogram, detect, region_to_record, write_regions_jsonl
from .embstore import read_chunked, read_pooled, write_pooled
from .errors import DataError, PamCuratorError, ValidationError
from .features import lda9_features, pool_embeddings, rocca_features
from .learners import train_lda, train_logreg
from .manifest import IngestStore
from .metrics import cohens_kappa, mapped_top1, spec_at_sens
from .pool import dump_pool, load_pool

CANONICAL_RATE = 32_000


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"bad --config file: {exc}") from exc


def _cfg_get(args, config: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, default)


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    if args.mode == "audio":
        manifest, truths = synth.make_synthetic_corpus(
            out,
            n_files=int(_cfg_get(args, config, "n", 50)),
            positive_fraction=float(_cfg_get(args, config, "positive_fraction", 0.2)),
            seed=args.seed,
        )
        print(f"wrote {manifest} ({len(truths)} positive files)")
    else:
        n = int(_cfg_get(args, config, "n", 10_000))
        frac = float(_cfg_get(args, config, "positive_fraction", 0.02))
        records, features, oracle = synth.make_synthetic_pool(
            n=n, positive_fraction=frac, seed=args.seed)
        out.mkdir(parents=True, exist_ok=True)
        dump_pool(records, out / "pool.jsonl")
        ids = sorted(features)
        write_pooled(out / "features.emb", ids,
                     np.stack([features[k] for k in ids]))
        (out / "oracle.json").write_text(json.dumps(
            {k: oracle[k] for k in sorted(oracle)}, indent=0), encoding="utf-8")
        print(f"wrote pool of {n} samples to {out}")
    return 0


def cmd_ingest(args) -> int:
    from .manifest import data_dir
    out = args.out if args.out else data_dir() / "store"
    store = IngestStore(out)
    report = store.ingest(args.manifest)
    print(f"fetched={len(report.fetched)} skipped={len(report.skipped)} "
          f"quarantined={len(report.quarantined)} failed={len(report.failed)}")
    for sid in report.quarantined:
        print(f"quarantined: {sid}", file=sys.stderr)
    for sid, msg in report.failed:
        print(f"failed: {sid}: {msg}", file=sys.stderr)
    return 0 if report.ok else 3


def _detector_params(config: dict) -> DetectorParams:
    fields = {f for f in DetectorParams.__dataclass_fields__}
    return DetectorParams(**{k: v for k, v in config.items() if k in fields})


def cmd_detect(args) -> int:
    params_doc = {}
    if args.params:
        params_doc = json.loads(Path(args.params).read_text(encoding="utf-8"))
    params = _detector_params(params_doc)
    in_dir = Path(args.in_dir)
    audio_files = sorted(list(in_dir.glob("*.wav")) + list(in_dir.glob("*.flac")))
    if not audio_files:
        raise DataError(f"no audio files in {in_dir}")
    records = []
    for path in audio_files:
        for seg in decode(path):
            if seg.duration_s < MIN_POOL_DURATION_S:
                continue
            seg32 = resample(seg, CANONICAL_RATE)
            spec = compute_spectrogram(seg32)
            for region in detect(seg32, params):
                records.append(region_to_record(region, spec, seg.sample_id))
    write_regions_jsonl(args.out, records)
    print(f"wrote {len(records)} regions from {len(audio_files)} files to {args.out}")
    return 0


def cmd_featurize(args) -> int:
    config = _load_config(args.config)
    kind = args.kind
    out = Path(args.out)
    if kind == "pooled":
        chunks = read_chunked(args.chunks)
        vectors = [pool_embeddings(m) for m in chunks]
        write_pooled(out, [v.sample_id for v in vectors],
                     np.stack([v.values for v in vectors]), kind="embedding")
        print(f"pooled {len(vectors)} chunk records -> {out}")
        return 0
    params = _detector_params(config)
    slice_len = int(_cfg_get(args, config, "slice_len", 6))
    in_dir = Path(args.in_dir)
    audio_files = sorted(list(in_dir.glob("*.wav")) + list(in_dir.glob("*.flac")))
    if not audio_files:
        raise DataError(f"no audio files in {in_dir}")
    ids, rows = [], []
    for path in audio_files:
        for seg in decode(path):
            if seg.duration_s < MIN_POOL_DURATION_S:
                continue
            seg32 = resample(seg, CANONICAL_RATE)
            regions = detect(seg32, params)
            if kind == "lda9":
                vec = lda9_features(regions, seg.sample_id, slice_len=slice_len)
            else:  # rocca: one vector per file via the longest region
                spec = compute_spectrogram(seg32)
                if regions:
                    best = max(regions, key=lambda r: r.pixel_count)
                    vec = rocca_features(best, spec, seg.sample_id)
                else:
                    from .features import ROCCA_V1_LENGTH, FeatureVector
                    vec = FeatureVector(seg.sample_id, "rocca",
                                        np.zeros(ROCCA_V1_LENGTH),
                                        meta={"empty": True})
            ids.append(vec.sample_id)
            rows.append(vec.values)
    write_pooled(out, ids, np.stack(rows), kind=kind)
    print(f"wrote {len(ids)} {kind} vectors -> {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    ids, X, _ = read_pooled(args.features)
    row = {sid: i for i, sid in enumerate(ids)}
    records = load_pool(args.pool)
    labeled = [r for r in records if r.label_state in ("positive", "negative",
                                                       "pseudo_positive")]
    missing = [r.sample_id for r in labeled if r.feature_ref not in row]
    if missing:
        raise DataError(f"{len(missing)} labeled samples lack features "
                        f"(first: {missing[0]})")
    y = np.array([1.0 if r.is_positive else 0.0 for r in labeled])
    Xl = X[[row[r.feature_ref] for r in labeled]]
    l2 = float(_cfg_get(args, config, "l2_lambda", 1e-2))
    if args.model == "logreg":
        model = train_logreg(Xl, y, l2, seed=args.seed)
    else:
        model = train_lda(Xl, y.astype(int))
    model.save(args.out)
    print(f"trained {args.model} on {len(labeled)} labeled samples -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if args.pool and args.features and args.oracle:
        records = load_pool(args.pool)
        ids, X, _ = read_pooled(args.features)
        features = {sid: X[i] for i, sid in enumerate(ids)}
        oracle = {k: bool(v) for k, v in json.loads(
            Path(args.oracle).read_text(encoding="utf-8")).items()}
    else:
        records, features, oracle = synth.make_synthetic_pool(
            n=int(_cfg_get(args, config, "n", 10_000)),
            positive_fraction=float(_cfg_get(args, config, "positive_fraction", 0.02)),
            seed=int(_cfg_get(args, config, "pool_seed", 123)))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    cfg = al.ALConfig(
        strategy=args.strategy,
        batch_size=args.batch_size,
        flip_rate=args.flip_rate,
        seeds=seeds,
        negative_sample_multiplier=float(_cfg_get(
            args, config, "negative_sample_multiplier", 5.0)),
        l2_lambda=float(_cfg_get(args, config, "l2_lambda", 0.02)),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / f"history_{args.strategy}_flip{args.flip_rate:g}.csv"
    al.run_simulation(records, features, cfg, oracle, out_csv=out_csv,
                      iteration_cap=args.iterations)
    # Dataset-wide positivity: the dashed reference line in the figures.
    constant = sum(1 for v in oracle.values() if v) / len(oracle)
    meta_path = out_dir / "meta.json"
    meta_path.write_text(json.dumps({
        "dataset_positivity": constant,
        "strategy": args.strategy,
        "flip_rate": args.flip_rate,
        "batch_size": args.batch_size,
        "seeds": list(seeds),
    }, indent=2, sort_keys=True), encoding="utf-8")
    print(f"wrote {out_csv}")
    return 0


def _read_label_csv(path: str) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = row.get("sample_id") or row.get("id")
            out[key] = row
    return out


def cmd_eval(args) -> int:
    preds = _read_label_csv(args.preds)
    truth = _read_label_csv(args.truth)
    shared = sorted(set(preds) & set(truth))
    if not shared:
        raise DataError("no overlapping sample_ids between preds and truth")
    if args.metric == "spec_at_sens":
        scores = [float(preds[k]["score"]) for k in shared]
        labels = [1 if truth[k]["label"] in ("1", "positive") else 0
                  for k in shared]
        row = spec_at_sens(scores, labels, args.target_sens)
    elif args.metric == "cohens_kappa":
        row = cohens_kappa([preds[k]["label"] for k in shared],
                           [truth[k]["label"] for k in shared])
    elif args.metric == "mapped_top1":
        if not args.mapping:
            raise ValidationError("mapped_top1 requires --mapping <json>")
        mapping = json.loads(Path(args.mapping).read_text(encoding="utf-8"))
        row = mapped_top1([preds[k]["label"] for k in shared],
                          [truth[k]["label"] for k in shared], mapping)
    else:
        raise ValidationError(f"unknown metric {args.metric!r}")
    writer = csv.writer(sys.stdout)
    writer.writerow(["name", "value", "support", "defined", "params"])
    writer.writerow([row.name, repr(row.value), row.support, row.defined,
                     json.dumps(row.params, sort_keys=True)])
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .al import ALConfig
    from .service import CurationService, create_app

    config = _load_config(args.config)
    records = load_pool(args.pool)
    ids, X, _ = read_pooled(args.features)
    features = {sid: X[i] for i, sid in enumerate(ids)}
    oracle = None
    if args.oracle:
        oracle = {k: bool(v) for k, v in json.loads(
            Path(args.oracle).read_text(encoding="utf-8")).items()}
    cfg = ALConfig(
        strategy=str(_cfg_get(args, config, "strategy", "entropy")),
        batch_size=int(_cfg_get(args, config, "batch_size", 500)),
        l2_lambda=float(_cfg_get(args, config, "l2_lambda", 0.02)),
    )
    vocab = config.get("vocab")
    service = CurationService(
        records, features, cfg, seed=args.seed, oracle=oracle,
        audio_dir=args.audio_dir, state_dir=args.state_dir, vocab=vocab)
    app = create_app(service)
    print(f"run_id={service.run_id} listening on :{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pam-curator",
        description="Passive-acoustic-monitoring curation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON file of option defaults")

    p = sub.add_parser("synth", help="generate a synthetic corpus or pool")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["audio", "pool"], default="pool")
    p.add_argument("--n", type=int)
    p.add_argument("--positive-fraction", dest="positive_fraction", type=float)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="fetch + verify a manifest into a store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="store directory (default: $PAM_DATA_DIR/store)")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("detect", help="run the whistle/moan detector")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--params", help="JSON file of DetectorParams overrides")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("featurize", help="compute feature vectors")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--chunks", help="DORICHK1 file (kind=pooled)")
    p.add_argument("--kind", choices=["lda9", "rocca", "pooled"], default="lda9")
    p.add_argument("--slice-len", dest="slice_len", type=int)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a classifier from a labeled pool")
    p.add_argument("--features", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--model", choices=["logreg", "lda"], default="logreg")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run active-learning simulations")
    p.add_argument("--pool")
    p.add_argument("--features")
    p.add_argument("--oracle")
    p.add_argument("--strategy", choices=al.STRATEGIES, default="entropy")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=500)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--flip-rate", dest="flip_rate", type=float, default=0.0)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="compute an evaluation metric")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--mapping", help="train->test class map JSON (mapped_top1)")
    p.add_argument("--target-sens", dest="target_sens", type=float, default=0.95)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the labeling service")
    p.add_argument("--pool", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--oracle")
    p.add_argument("--audio-dir", dest="audio_dir")
    p.add_argument("--state-dir", dest="state_dir")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)
    common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except PamCuratorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
