"""Command-line interface: one subcommand per pipeline stage.

Exit codes: 0 success, 1 other pipeline error, 2 missing input,
3 invariant violation, 4 configuration error, 5 malformed file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import yaml

from . import classify, pipeline
from .benchmark import benchmark_cluster_config, run_benchmark, run_design_comparison
from .config import build_config, dump_config, load_config
from .dictionary import dictionary_metrics
from .errors import CastError, ConfigError, IntegrityError, ParseError
from .io import load_clusters, load_dictionary, load_embeddings, load_labels, load_proposals, read_frame_geometry, write_records, FORMAT_VERSION
from .metrics import clusters_per_character, contingency_from_assignment, k_metric, nmi, purity
from .negsample import MinSize, Rect, ler
from .pipeline import FILES
from .shotseg import ingest_shots, naive_segment, save_shots
from .synthgen import generate

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING = 2
EXIT_INTEGRITY = 3
EXIT_CONFIG = 4
EXIT_PARSE = 5


def _path(args, key: str, explicit):
    return Path(explicit) if explicit is not None else Path(args.workdir) / FILES[key]


def _config(args):
    overrides = list(args.set or ())
    for key in ("k_min", "k_max"):
        if getattr(args, key, None) is not None:
            overrides.append(f"cluster.{key}={getattr(args, key)}")
    return load_config(args.config, overrides, args.seed)


def _print_table(rows: dict, out=sys.stdout) -> None:
    width = max((len(k) for k in rows), default=0)
    for k, v in rows.items():
        val = f"{v:.4f}" if isinstance(v, float) else str(v)
        print(f"{k:<{width}}  {val}", file=out)


def _write_json(path, payload) -> None:
    if path:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- subcommands -------------------------------------------------------------


def cmd_segment(args) -> int:
    out = _path(args, "shots", args.out)
    if args.histograms:
        hist = np.load(pipeline.require(args.histograms))
        cfg = _config(args)
        shots = naive_segment(hist, cfg.shots.threshold, args.fps, args.video_id)
    elif args.shots:
        shots = ingest_shots(pipeline.require(args.shots), args.fps)
    else:
        raise ConfigError("segment needs --histograms or --shots")
    save_shots(out, shots)
    print(f"{len(shots)} shots -> {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    if args.skip_window is not None:
        args.set = list(args.set or ()) + [f"tracker.skip_window_frames={args.skip_window}"]
    out = _path(args, "tracklets", args.out)
    n = pipeline.stage_track(_config(args), _path(args, "proposals", args.proposals), _path(args, "embeddings", args.embeddings), out)
    print(f"{n} tracklets -> {out}")
    return EXIT_OK


def cmd_triplets(args) -> int:
    out = _path(args, "triplets", args.out)
    n = pipeline.stage_triplets(_config(args), _path(args, "tracklets", args.tracklets), _path(args, "proposals", args.proposals), out)
    print(f"{n} triplets -> {out}")
    return EXIT_OK


def cmd_refine(args) -> int:
    out = _path(args, "refined", args.out)
    curve = pipeline.stage_refine(
        _config(args), _path(args, "embeddings", args.embeddings), _path(args, "triplets", args.triplets), out,
        _path(args, "head", args.head),
    )
    print("epoch\tmean_loss")
    for k, v in enumerate(curve):
        print(f"{k}\t{v:.9g}")
    print(f"refined embeddings -> {out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    out = _path(args, "clusters", args.out)
    result = pipeline.stage_cluster(_config(args), _path(args, "refined", args.embeddings), _path(args, "proposals", args.proposals), out)
    print(f"eps {result.eps:.6g}: {len(result.clusters.clusters)} clusters, {len(result.clusters.noise)} noise -> {out}")
    if result.warning:
        print(f"warning: {result.warning}", file=sys.stderr)
    return EXIT_OK


def cmd_dict(args) -> int:
    out = _path(args, "dictionary", args.out)
    n = pipeline.stage_dictionary(_config(args), _path(args, "clusters", args.clusters), _path(args, "refined", args.embeddings), out)
    print(f"{n} dictionary entries -> {out}")
    return EXIT_OK


def cmd_name(args) -> int:
    out = _path(args, "named", args.out)
    outcome = pipeline.stage_name(
        _config(args),
        _path(args, "dictionary", args.dictionary),
        _path(args, "clusters", args.clusters),
        out,
        journal=_path(args, "journal", args.journal),
        answers=args.answers,
        truth=args.truth,
        stream=sys.stderr if args.answers or args.truth else sys.stdout,
        crop_dir=args.crops,
    )
    print(f"{len(outcome.named)} named entries, {len(outcome.merges)} merge directives -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = _path(args, "model", args.out)
    model = pipeline.stage_train(
        _config(args),
        _path(args, "named", args.dictionary),
        _path(args, "clusters", args.clusters),
        _path(args, "refined", args.embeddings),
        _path(args, "negatives", args.negatives),
        _path(args, "head", args.head),
        out,
    )
    print(f"{len(model.classes)} classes ({model.design.value}) -> {out}")
    return EXIT_OK


def cmd_label(args) -> int:
    out = _path(args, "dense_labels", args.out)
    n = pipeline.stage_label(_config(args), _path(args, "model", args.model), _path(args, "proposals", args.proposals),
                             _path(args, "refined", args.embeddings), out)
    print(f"{n} labeled frames -> {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    labels = classify.load_dense_labels(pipeline.require(_path(args, "dense_labels", args.labels)))
    grouping = {}
    if args.groups:
        grouping = yaml.safe_load(pipeline.require(args.groups).read_text(encoding="utf-8")) or {}
        if not isinstance(grouping, dict):
            raise ConfigError("groups file must map names to groups")
    st = classify.screen_time(classify.frame_name_sets(labels), grouping)
    print(f"frames: {st.frames}")
    print("name\tscreen_time")
    for k, v in st.per_name.items():
        print(f"{k}\t{v:.4f}")
    if st.per_group:
        print("group\tshare")
        for k, v in st.per_group.items():
            print(f"{k}\t{v:.4f}")
    _write_json(args.json, {"frames": st.frames, "per_name": st.per_name, "per_group": st.per_group})
    return EXIT_OK


def cmd_eval(args) -> int:
    truth = load_labels(pipeline.require(_path(args, "truth", args.truth)))
    report: dict = {}
    clusters = load_clusters(pipeline.require(_path(args, "clusters", args.clusters)))
    assignment = clusters.assignment()
    labelled = {p: c for p, c in assignment.items() if p in truth}
    if labelled:
        table = contingency_from_assignment(labelled, truth)
        cpc = clusters_per_character(labelled, truth)
        report["clustering"] = {
            "clusters": len(clusters.clusters),
            "noise": len(clusters.noise),
            "purity": purity(table),
            "k_metric": k_metric(table),
            "nmi": nmi(table),
            "clusters_per_character_median": cpc.median,
            "clusters_per_character_mean": cpc.mean,
        }
    dict_path = _path(args, "named", args.dictionary)
    if dict_path.exists():
        entries = load_dictionary(dict_path)
        report["dictionary"] = dictionary_metrics(entries, clusters, truth).as_dict()
    model_path = _path(args, "model", args.model)
    emb_path = _path(args, "refined", args.embeddings)
    if model_path.exists() and emb_path.exists():
        model = classify.load_model(model_path)
        emb = load_embeddings(emb_path)
        ids = [p for p in emb.ids if p in truth]
        gold = [truth[p] if truth[p] is not None else classify.UNKNOWN for p in ids]
        if ids:
            report["classifier"] = classify.evaluate(model, emb.rows(ids), gold).as_dict()
    for section, rows in report.items():
        print(f"[{section}]")
        _print_table({k: v for k, v in rows.items() if not isinstance(v, (dict, list))})
    _write_json(args.json, report)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    spec = dataclasses.replace(cfg.synth, rng_seed=cfg.seed)
    scene = generate(spec)
    out = Path(args.out)
    bench = build_config(
        {**cfg.as_dict(), "cluster": {**cfg.as_dict()["cluster"], **_k_range(spec.num_identities, args)}},
        seed=cfg.seed,
    )
    pipeline.write_synthetic(scene, out, bench)
    print(f"{len(scene.proposals)} proposals, {spec.num_identities} identities, {spec.num_shots} shots -> {out}")
    return EXIT_OK


def _k_range(n: int, args) -> dict:
    if args.keep_k_range:
        return {}
    cc = benchmark_cluster_config(n)
    out = {"k_min": cc.k_min, "k_max": cc.k_max}
    # explicit --k-min / --k-max win over the scene-adapted range
    return {k: v for k, v in out.items() if getattr(args, k, None) is None}


def cmd_run_all(args) -> int:
    workdir = Path(args.workdir)
    if args.synthetic:
        cfg = _config(args)
        spec = dataclasses.replace(cfg.synth, rng_seed=cfg.seed)
        if not (workdir / FILES["proposals"]).exists():
            data = cfg.as_dict()
            data["cluster"] = {**data["cluster"], **_k_range(spec.num_identities, args)}
            cfg = build_config(data, seed=cfg.seed)
            pipeline.write_synthetic(generate(spec), workdir, cfg)
    config_path = args.config
    if config_path is None and (workdir / FILES["config"]).exists():
        config_path = workdir / FILES["config"]
    args.config = config_path
    cfg = _config(args)
    report = pipeline.run_all(workdir, cfg, answers_from=args.naming, force=args.force, only_through=args.until)
    for s in report.manifest["stages"]:
        state = "ran" if s["name"] in report.executed else "up to date"
        print(f"{s['name']:<16} {state:<11} {', '.join(s['outputs'])}")
    print(f"manifest -> {workdir / FILES['manifest']}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    cc = dataclasses.replace(cfg.cluster, **_k_range(cfg.synth.num_identities, args))
    runs, designs = [], []
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        spec = dataclasses.replace(cfg.synth, rng_seed=seed)
        rc = dataclasses.replace(cfg.refine, rng_seed=seed)
        runs.append(run_benchmark(spec, cfg.tracker, rc, cc))
        designs.append(run_design_comparison(spec, cfg.tracker, rc, cc, cfg.classify.reject_threshold))
    print(f"{'seed':<6}{'space':<9}{'silhouette':>11}{'purity':>9}{'clusters':>9}{'per-char':>9}")
    for r in runs:
        for tag, sc in (("base", r.base), ("refined", r.refined)):
            print(f"{r.seed:<6}{tag:<9}{sc.silhouette:>11.4f}{sc.purity:>9.4f}{sc.clusters:>9}{sc.clusters_per_character:>9.2f}")
    print(f"{'seed':<6}{'F1 per-character':>17}{'F1 per-cluster':>15}{'mean diff':>10}{'t':>9}{'p':>9}")
    for d in designs:
        c = d.comparison
        t = "-" if c.t_statistic is None else f"{c.t_statistic:.3f}"
        pv = "-" if c.p_value is None else f"{c.p_value:.3f}"
        print(f"{d.seed:<6}{d.per_character.f1:>17.4f}{d.per_cluster.f1:>15.4f}{c.mean_difference:>10.4f}{t:>9}{pv:>9}")
    if args.json:
        report = {
            "benchmark": [{"seed": r.seed, "base": r.base.as_dict(), "refined": r.refined.as_dict()} for r in runs],
            "designs": [{"seed": d.seed, **d.comparison.as_dict()} for d in designs],
        }
        Path(args.json).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_negsample(args) -> int:
    src = _path(args, "proposals", args.proposals)
    props = load_proposals(pipeline.require(src), _config(args).ingest)
    geometry = read_frame_geometry(src)
    size = MinSize(args.min_w, args.min_h, args.min_area)
    frame = Rect(0.0, 0.0, geometry.width, geometry.height)
    by_frame = defaultdict(list)
    for p in props:
        by_frame[(p.video_id, p.shot_id, p.frame_index)].append(Rect.from_xywh(p.box.x, p.box.y, p.box.w, p.box.h))
    records = []
    for (video, shot, fi) in sorted(by_frame, key=lambda k: (k[0], k[2], k[1])):
        for k, r in enumerate(ler(frame, by_frame[(video, shot, fi)], size)):
            records.append({"rect_id": f"{shot}/f{fi}/r{k}", "video_id": video, "shot_id": shot, "frame_index": fi, **r.as_xywh()})
    out = Path(args.out) if args.out else Path(args.workdir) / "background_rects.jsonl"
    header = {"kind": "rectangles", "version": FORMAT_VERSION, "frame_width": geometry.width, "frame_height": geometry.height}
    write_records(out, header, records)
    print(f"{len(records)} background rectangles over {len(by_frame)} frames -> {out}")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _k_flags(sp) -> None:
    sp.add_argument("--k-min", dest="k_min", type=int, help="smallest acceptable cluster count")
    sp.add_argument("--k-max", dest="k_max", type=int, help="largest acceptable cluster count")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-w", "--workdir", default=".", help="directory holding the stage files (default: .)")
    common.add_argument("-c", "--config", help="YAML config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config field")
    common.add_argument("--seed", type=int, help="global random seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="castid", description="Character identity pipeline for animated video.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("segment", cmd_segment, "write a shots file from frame histograms or an external segmentation")
    sp.add_argument("--histograms", help=".npy array, one color histogram per sampled frame")
    sp.add_argument("--shots", help="external shots file to validate and normalize")
    sp.add_argument("--fps", type=float, default=1.0, help="sampling rate of the frames")
    sp.add_argument("--video-id", default="")
    sp.add_argument("-o", "--out")

    sp = add("track", cmd_track, "track proposals per shot into tracklets")
    sp.add_argument("--proposals")
    sp.add_argument("--embeddings")
    sp.add_argument("--skip-window", type=int, help="longest frame gap a link may bridge")
    sp.add_argument("-o", "--out")

    sp = add("sample-triplets", cmd_triplets, "sample (anchor, positive, negative) triplets from tracklets")
    sp.add_argument("--tracklets")
    sp.add_argument("--proposals")
    sp.add_argument("-o", "--out")

    sp = add("refine", cmd_refine, "train the projection head on triplets and write refined embeddings")
    sp.add_argument("--embeddings")
    sp.add_argument("--triplets")
    sp.add_argument("--head", help="where to write the learned head")
    sp.add_argument("-o", "--out")

    sp = add("cluster", cmd_cluster, "cluster embeddings with confidence filtering")
    sp.add_argument("--embeddings")
    sp.add_argument("--proposals")
    _k_flags(sp)
    sp.add_argument("-o", "--out")

    sp = add("dict", cmd_dict, "build dictionary entries from clusters")
    sp.add_argument("--clusters")
    sp.add_argument("--embeddings")
    sp.add_argument("-o", "--out")

    sp = add("name", cmd_name, "name dictionary entries interactively or from a script")
    sp.add_argument("--dictionary")
    sp.add_argument("--clusters")
    sp.add_argument("--answers", help="scripted answers, one command per line")
    sp.add_argument("--truth", help="ground-truth labels; names entries by majority vote")
    sp.add_argument("--journal", help="decision journal used to resume a session")
    sp.add_argument("--crops", help="directory of crop images keyed by proposal id")
    sp.add_argument("-o", "--out")

    sp = add("train", cmd_train, "train the character classifier from named entries")
    sp.add_argument("--dictionary", help="named dictionary")
    sp.add_argument("--clusters")
    sp.add_argument("--embeddings", help="refined embeddings")
    sp.add_argument("--negatives", help="base-space background embeddings")
    sp.add_argument("--head")
    sp.add_argument("-o", "--out")

    sp = add("label", cmd_label, "densely label every proposal with a character name")
    sp.add_argument("--model")
    sp.add_argument("--proposals")
    sp.add_argument("--embeddings")
    sp.add_argument("-o", "--out")

    sp = add("stats", cmd_stats, "screen-time statistics from dense labels")
    sp.add_argument("--labels", help="dense labels file")
    sp.add_argument("--groups", help="YAML mapping name -> group")
    sp.add_argument("--json", help="also write the table as JSON")

    sp = add("eval", cmd_eval, "score clusters, dictionary and classifier against ground truth")
    sp.add_argument("--truth")
    sp.add_argument("--clusters")
    sp.add_argument("--dictionary")
    sp.add_argument("--model")
    sp.add_argument("--embeddings")
    sp.add_argument("--json", help="also write the report as JSON")

    sp = add("synth", cmd_synth, "generate a synthetic benchmark scene")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--keep-k-range", action="store_true", help="do not adapt the cluster-count range to the scene")
    _k_flags(sp)

    sp = add("bench", cmd_bench, "base vs refined clustering and classifier designs on synthetic scenes")
    sp.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds, starting at --seed")
    sp.add_argument("--keep-k-range", action="store_true", help="do not adapt the cluster-count range to the scene")
    _k_flags(sp)
    sp.add_argument("--json", help="also write the results as JSON")

    sp = add("run-all", cmd_run_all, "run every stage, resuming from the manifest")
    sp.add_argument("--synthetic", action="store_true", help="generate synthetic inputs first when absent")
    sp.add_argument("--naming", choices=("answers", "truth"), help="naming source (default: answers.txt, else truth)")
    sp.add_argument("--force", action="store_true", help="recompute every stage")
    sp.add_argument("--until", choices=pipeline.STAGE_NAMES, help="stop after this stage")
    sp.add_argument("--keep-k-range", action="store_true", help=argparse.SUPPRESS)
    _k_flags(sp)

    sp = add("negsample", cmd_negsample, "background rectangles avoiding every proposal box")
    sp.add_argument("--proposals")
    sp.add_argument("--min-w", type=float, default=32.0)
    sp.add_argument("--min-h", type=float, default=32.0)
    sp.add_argument("--min-area", type=float, default=2048.0)
    sp.add_argument("-o", "--out")

    add("config", cmd_config, "print the resolved configuration")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except CastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
