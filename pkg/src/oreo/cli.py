"""Command-line entry point.

    oreo synth|train|embed|eval|analyze|ablate|render-attention
         --config <path> [--out <dir>] [--seed <u64>] [--deterministic]

Exit codes: 0 success, 1 internal error, 2 input/protocol error.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import traceback

import numpy as np

from .analysis import attribute_impact_analysis, write_impact_csvs
from .config import (
    check_keys,
    load_json,
    parse_data_source,
    parse_model_config,
    parse_synth_spec,
    parse_train_config,
    require,
    resolve_path,
)
from .datagen import generate_dataset
from .errors import ConfigError, DataError, OreoError, ProtocolError
from .fileio import load_embeddings, load_sidecar, write_pgm
from .manifest import export_dataset, load_manifest
from .metrics import (
    cmc,
    cosine,
    open_set_identification,
    pool_set,
    roc_verification,
    tar_at_far,
    tpir_at_fpir,
)
from .model import render_attention_raster
from .trainer import attention_masks, embed_dataset, load_model, train

FAR_TARGETS = (1e-3, 1e-2, 1e-1)
FPIR_TARGETS = (1e-3, 1e-2, 1e-1)

ABLATION_ROWS = (
    ("baseline", dict(oan=False, obs=False, stl=False, attr_loss=False)),
    ("oan", dict(oan=True, obs=False, stl=False, attr_loss=True)),
    ("obs", dict(oan=False, obs=True, stl=False, attr_loss=True)),
    ("obs_stl", dict(oan=False, obs=True, stl=True, attr_loss=True)),
    ("oan_obs_stl", dict(oan=True, obs=True, stl=True, attr_loss=True)),
)


def _load_dataset(source):
    kind, payload = source
    if kind == "manifest":
        return load_manifest(payload)
    return generate_dataset(payload)


def _dataset_stems(source):
    kind, payload = source
    if kind == "synth":
        total = payload.n_identities * payload.images_per_identity
        return [f"img_{i:06d}" for i in range(total)]
    stems = []
    with open(payload, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            if row:
                stems.append(os.path.splitext(os.path.basename(row[0]))[0])
    return stems


def _empty_report():
    return {"cmc": None, "roc": None, "tpir": None, "rank1": None, "adp": None, "mcnemar": None}


def _finite(x):
    return None if x is None or not math.isfinite(x) else x


def cmd_synth(args):
    cfg = load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    check_keys(cfg, {"synth", "out", "image_format"}, "config")
    spec = parse_synth_spec(require(cfg, "synth", "config"), "config.synth")
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = args.out or resolve_path(cfg.get("out"), base)
    if not out:
        raise ConfigError("synth needs an output directory (config 'out' or --out)")
    dataset = generate_dataset(spec)
    manifest = export_dataset(dataset, out, image_format=cfg.get("image_format", "pgm"))
    print(f"wrote {len(dataset)} images ({spec.n_identities} identities) -> {manifest}")
    return 0


def cmd_train(args):
    cfg = load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    check_keys(cfg, {"data", "model", "train", "out"}, "config")
    source = parse_data_source(require(cfg, "data", "config"), base)
    model_cfg = parse_model_config(cfg.get("model", {}))
    train_cfg = parse_train_config(cfg.get("train", {}))
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.deterministic:
        train_cfg = dataclasses.replace(train_cfg, deterministic=True)
    out = args.out or resolve_path(cfg.get("out"), base)
    if not out:
        raise ConfigError("train needs a run directory (config 'out' or --out)")
    dataset = _load_dataset(source)
    result = train(dataset, model_cfg, train_cfg, out)
    print(f"trained {result.steps} steps -> {result.checkpoint}")
    return 0


def cmd_embed(args):
    cfg = load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    check_keys(cfg, {"checkpoint", "data", "out"}, "config")
    ckpt = resolve_path(require(cfg, "checkpoint", "config"), base)
    source = parse_data_source(require(cfg, "data", "config"), base)
    out = args.out or resolve_path(cfg.get("out"), base)
    if not out:
        raise ConfigError("embed needs an output file (config 'out' or --out)")
    dataset = _load_dataset(source)
    emb_path, sidecar = embed_dataset(ckpt, dataset, out)
    print(f"embedded {len(dataset)} images -> {emb_path} (+{os.path.basename(sidecar)})")
    return 0


def _pooled_selection(embeddings, rows, indices, what):
    """Pool the selected rows by set_id; rows without one stay singletons.

    Returns (pooled embeddings, pooled identities)."""
    groups = {}
    for idx in indices:
        if idx < 0 or idx >= len(rows):
            raise ProtocolError(f"{what}: index {idx} out of range (0..{len(rows) - 1})")
        _, identity, set_id, _ = rows[idx]
        key = set_id if set_id is not None else f"__row_{idx}"
        groups.setdefault(key, []).append((idx, identity))
    emb, ids = [], []
    for key in sorted(groups):
        members = groups[key]
        identities = {identity for _, identity in members}
        if len(identities) > 1:
            raise ProtocolError(f"{what}: set '{key}' mixes identities {sorted(identities)}")
        emb.append(pool_set([embeddings[idx] for idx, _ in members]))
        ids.append(members[0][1])
    return np.array(emb), np.array(ids)


def _plain_selection(embeddings, rows, indices, what):
    ids = []
    for idx in indices:
        if idx < 0 or idx >= len(rows):
            raise ProtocolError(f"{what}: index {idx} out of range (0..{len(rows) - 1})")
        ids.append(rows[idx][1])
    return embeddings[np.asarray(indices, dtype=int)], np.array(ids)


def cmd_eval(args):
    cfg = load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    check_keys(cfg, {"embeddings", "sidecar", "protocol", "pool_sets", "out"}, "config")
    emb_path = resolve_path(require(cfg, "embeddings", "config"), base)
    sidecar_path = resolve_path(cfg.get("sidecar"), base) or emb_path + ".csv"
    if not os.path.exists(emb_path):
        raise DataError(f"embedding file not found: {emb_path}")
    if not os.path.exists(sidecar_path):
        raise DataError(f"sidecar not found: {sidecar_path}")
    embeddings = load_embeddings(emb_path)
    rows = load_sidecar(sidecar_path)
    if len(rows) != len(embeddings):
        raise DataError(
            f"sidecar has {len(rows)} rows but embedding file holds {len(embeddings)}"
        )
    protocol = require(cfg, "protocol", "config")
    pool = bool(cfg.get("pool_sets", False))
    select = _pooled_selection if pool else _plain_selection
    report = _empty_report()

    kind = require(protocol, "kind", "config.protocol")
    if kind == "verification_pairs":
        check_keys(protocol, {"kind", "pairs"}, "config.protocol")
        pairs_path = resolve_path(require(protocol, "pairs", "config.protocol"), base)
        if not os.path.exists(pairs_path):
            raise DataError(f"pairs file not found: {pairs_path}")
        scores, genuine = [], []
        with open(pairs_path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["a", "b", "genuine"]:
                raise DataError(f"{pairs_path}: expected header a,b,genuine, got {header}")
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise DataError(f"{pairs_path}:{line_no}: expected 3 fields")
                a, b, g = int(row[0]), int(row[1]), int(row[2])
                if not (0 <= a < len(embeddings) and 0 <= b < len(embeddings)):
                    raise ProtocolError(f"{pairs_path}:{line_no}: pair index out of range")
                scores.append(cosine(embeddings[a], embeddings[b]))
                genuine.append(bool(g))
        points = roc_verification(np.array(scores), np.array(genuine))
        report["roc"] = {
            "points": [[p.far, p.tar, p.threshold] for p in points],
            "tar_at_far": {
                f"{target:g}": dict(
                    zip(("tar", "achieved_far", "threshold"), map(_finite, tar_at_far(points, target)))
                )
                for target in FAR_TARGETS
            },
        }
    elif kind in ("ident_closed", "ident_open"):
        check_keys(protocol, {"kind", "gallery", "probe", "max_rank"}, "config.protocol")
        g_emb, g_ids = select(embeddings, rows, require(protocol, "gallery", "config.protocol"), "gallery")
        p_emb, p_ids = select(embeddings, rows, require(protocol, "probe", "config.protocol"), "probe")
        if kind == "ident_closed":
            max_rank = protocol.get("max_rank")
            rates = cmc(g_emb, g_ids, p_emb, p_ids, max_rank=max_rank)
            report["cmc"] = rates.tolist()
            report["rank1"] = float(rates[0])
        else:
            mated = np.isin(p_ids, g_ids)
            if mated.all():
                raise ProtocolError("open-set protocol needs at least one non-mated probe")
            points = open_set_identification(g_emb, g_ids, p_emb, p_ids)
            report["tpir"] = {
                "points": [[p.fpir, p.tpir, _finite(p.threshold)] for p in points],
                "tpir_at_fpir": {
                    f"{target:g}": dict(
                        zip(
                            ("tpir", "achieved_fpir", "threshold"),
                            map(_finite, tpir_at_fpir(points, target)),
                        )
                    )
                    for target in FPIR_TARGETS
                },
            }
    else:
        raise ConfigError(f"unknown protocol kind: {kind}")

    out = args.out or resolve_path(cfg.get("out"), base)
    if out:
        with open(out, "w") as f:
            json.dump(report, f, indent=2)
        print(f"report -> {out}")
    else:
        json.dump(report, sys.stdout, indent=2)
        print()
    return 0


def cmd_analyze(args):
    cfg = load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    check_keys(cfg, {"embeddings", "data", "attributes", "seed", "out"}, "config")
    emb_path = resolve_path(require(cfg, "embeddings", "config"), base)
    source = parse_data_source(require(cfg, "data", "config"), base)
    dataset = _load_dataset(source)
    embeddings = load_embeddings(emb_path)
    attrs = cfg.get("attributes", "all")
    attr_indices = None if attrs == "all" else [int(a) for a in attrs]
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = args.out or resolve_path(cfg.get("out"), base)
    if not out:
        raise ConfigError("analyze needs an output directory (config 'out' or --out)")
    os.makedirs(out, exist_ok=True)

    report = attribute_impact_analysis(dataset, embeddings, attr_indices=attr_indices, seed=seed)
    write_impact_csvs(report, out)
    full = _empty_report()
    full["adp"] = report.adp
    full["mcnemar"] = report.to_dict()["mcnemar_with_vs_without"]
    full["cmc"] = report.to_dict()["attributes"]
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(full, f, indent=2)
    print(f"adp={report.adp:.3f} over {len(report.attributes)} attributes -> {out}/report.json")
    return 0


def cmd_ablate(args):
    cfg = load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    check_keys(
        cfg, {"train_data", "eval_data", "model", "train", "seeds", "analysis_seed", "out"}, "config"
    )
    train_source = parse_data_source(require(cfg, "train_data", "config"), base, "config.train_data")
    eval_source = parse_data_source(require(cfg, "eval_data", "config"), base, "config.eval_data")
    model_cfg = parse_model_config(cfg.get("model", {}))
    base_train = parse_train_config(cfg.get("train", {}))
    if args.deterministic:
        base_train = dataclasses.replace(base_train, deterministic=True)
    seeds = [int(s) for s in cfg.get("seeds", [base_train.seed])]
    if args.seed is not None:
        seeds = [args.seed]
    analysis_seed = int(cfg.get("analysis_seed", 0))
    out = args.out or resolve_path(cfg.get("out"), base)
    if not out:
        raise ConfigError("ablate needs an output directory (config 'out' or --out)")
    os.makedirs(out, exist_ok=True)

    train_set = _load_dataset(train_source)
    eval_set = _load_dataset(eval_source)
    table = []
    for seed in seeds:
        for row_name, toggles in ABLATION_ROWS:
            run_dir = os.path.join(out, f"seed{seed}", row_name)
            cell_cfg = dataclasses.replace(base_train, seed=seed, **toggles)
            result = train(train_set, model_cfg, cell_cfg, run_dir)
            emb_path, _ = embed_dataset(result.checkpoint, eval_set, os.path.join(run_dir, "eval.emb"))
            embeddings = load_embeddings(emb_path)
            report = attribute_impact_analysis(eval_set, embeddings, seed=analysis_seed)
            with open(os.path.join(run_dir, "report.json"), "w") as f:
                json.dump(report.to_dict(), f, indent=2)
            rank1_w = float(np.mean([a.rank1_with for a in report.attributes]))
            rank1_wo = float(np.mean([a.rank1_without for a in report.attributes]))
            table.append(
                {
                    "seed": seed,
                    "method": row_name,
                    "oan": int(toggles["oan"]),
                    "obs": int(toggles["obs"]),
                    "stl": int(toggles["stl"]),
                    "attr_loss": int(toggles["attr_loss"]),
                    "rank1_without": rank1_wo,
                    "rank1_with": rank1_w,
                    "adp": report.adp,
                }
            )
            print(
                f"seed {seed} {row_name:12s} adp={report.adp:6.2f} "
                f"rank1 w/o={rank1_wo:5.1f} w/={rank1_w:5.1f}"
            )

    table_path = os.path.join(out, "ablation.csv")
    with open(table_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(table[0].keys()))
        writer.writeheader()
        writer.writerows(table)
    print(f"ablation table -> {table_path}")
    return 0


def cmd_render_attention(args):
    cfg = load_json(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    check_keys(cfg, {"checkpoint", "data", "out", "normalize"}, "config")
    ckpt = resolve_path(require(cfg, "checkpoint", "config"), base)
    source = parse_data_source(require(cfg, "data", "config"), base)
    out = args.out or resolve_path(cfg.get("out"), base)
    if not out:
        raise ConfigError("render-attention needs an output directory (config 'out' or --out)")
    normalize = bool(cfg.get("normalize", False))
    dataset = _load_dataset(source)
    stems = _dataset_stems(source)
    model, _ = load_model(ckpt)
    a2, a3 = attention_masks(model, dataset)
    os.makedirs(out, exist_ok=True)
    size = model.config.image_size
    for i, stem in enumerate(stems):
        write_pgm(os.path.join(out, f"{stem}_A2.pgm"), render_attention_raster(a2[i], size, normalize))
        write_pgm(os.path.join(out, f"{stem}_A3.pgm"), render_attention_raster(a3[i], size, normalize))
    print(f"wrote {2 * len(stems)} attention rasters -> {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="oreo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": cmd_synth,
        "train": cmd_train,
        "embed": cmd_embed,
        "eval": cmd_eval,
        "analyze": cmd_analyze,
        "ablate": cmd_ablate,
        "render-attention": cmd_render_attention,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output path override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible mode")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OreoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
