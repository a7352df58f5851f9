"""``lionxa`` command line: synthesis, converters, training, evaluation, reports, self-checks.

Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 failed verification.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import config as C
from .errors import CheckpointError, ConfigError, LionXAError
from .lidar_io import parse_scan, write_labels, write_scan
from .metrics import report, report_csv, report_json, stats_csv, stats_table
from .networks import Seg2DNet, Seg3DNet, load_checkpoint
from .pipeline import Preprocessor, read_scan_pair, read_split, split_mapping, synth_split, write_split
from .projection import compute_normals, project, write_range_image
from .targetlike import resample_beams
from .voxel import voxelize, write_voxels

OK, USAGE, DATA, VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config(spec, seed=None):
    """A preset name or a config file path, with an optional seed override."""
    path = Path(spec)
    if path.is_file():
        cfg = C.load(path.read_text(encoding="utf-8"))
    elif spec in C.PRESETS:
        cfg = C.preset(spec)
    else:
        raise ConfigError(f"{spec!r} is neither a config file nor a preset ({', '.join(C.PRESETS)})")
    return cfg if seed is None else replace(cfg, seed=seed)


def _write(path, blob):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(blob, str):
        path.write_text(blob, encoding="utf-8")
    else:
        path.write_bytes(blob)


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = load_config(args.config, args.seed)
    scans = synth_split(cfg, args.split, args.count)
    paths = write_split(args.out_dir, scans)
    print(f"wrote {len(scans)} {args.split} scans ({len(paths)} files) to {args.out_dir}")


def _sensor(cfg, which):
    return (cfg.source if which == "source" else cfg.target).spec()


def cmd_project(args):
    cfg = load_config(args.config, args.seed)
    cloud = parse_scan(Path(args.scan).read_bytes())
    sensor = _sensor(cfg, args.sensor)
    img, pmap = project(cloud, sensor, args.width or sensor.horizontal_resolution)
    _write(args.out, write_range_image(compute_normals(img)))
    print(f"{img.height}x{img.width} image, {int(img.valid.sum())} valid pixels, "
          f"{len(pmap.unprojected)} points outside the field of view")


def cmd_voxelize(args):
    cloud = parse_scan(Path(args.scan).read_bytes())
    vs = voxelize(cloud, args.voxel_size)
    _write(args.out, write_voxels(vs))
    print(f"{len(cloud)} points -> {len(vs)} voxels")


def cmd_targetlike(args):
    cfg = load_config(args.config, args.seed)
    scan = read_scan_pair(args.scan, split_mapping(cfg, "source"))
    tl = resample_beams(scan.cloud, scan.labels, cfg.source.spec(), cfg.target.spec())
    out = Path(args.out)
    _write(out.with_suffix(".bin"), write_scan(tl.cloud))
    _write(out.with_suffix(".label"), write_labels(scan.raw_ids[tl.source_index]))
    print(f"kept {len(tl.cloud)} of {len(scan.cloud)} points")


def _train_report(cfg, cms, best_iters):
    rep = report(cms, cfg.class_names)
    rep["scenario"] = cfg.name
    rep["best_iters"] = {"2d": best_iters[0], "3d": best_iters[1]}
    return rep


def cmd_train(args):
    from .trainer import Trainer, load_data
    cfg = load_config(args.config, args.seed)
    if args.max_iter:
        cfg = replace(cfg, train=replace(cfg.train, max_iter=args.max_iter,
                                         val_every=min(cfg.train.val_every, args.max_iter)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.cfg", C.render(cfg))
    data = load_data(cfg, args.data_dir)

    def progress(rec):
        if not args.quiet:
            print(json.dumps(rec), flush=True)

    res = Trainer(cfg, out, data).run(progress)
    rep = _train_report(cfg, res.test_cms, res.best_iters)
    _write(out / "report.json", report_json(rep))
    _write(out / "report.csv", report_csv(rep))
    print(json.dumps({m: round(v, 2) for m, v in res.test_miou.items()}))


def cmd_eval(args):
    from .trainer import evaluate, load_data, load_stats
    cfg = load_config(args.config, args.seed)
    net2d = Seg2DNet(cfg.num_classes, features=cfg.train.features, stages=cfg.train.stages)
    net3d = Seg3DNet(cfg.num_classes, features=cfg.train.features)
    for net, path in ((net2d, args.checkpoint_2d), (net3d, args.checkpoint_3d)):
        if not Path(path).is_file():
            raise CheckpointError(f"missing checkpoint {path}")
        net.load_state_dict(load_checkpoint(path))
    stats_path = Path(args.stats) if args.stats else Path(args.checkpoint_2d).parent / "stats.json"
    if stats_path.is_file():
        train_stats, target_stats = load_stats(stats_path)
    else:
        d = load_data(cfg)
        train_stats, target_stats = d["target_stats" if cfg.oracle else "source_stats"], d["target_stats"]
    if args.data_dir:
        scans = read_split(args.data_dir, split_mapping(cfg, "test"))
    else:
        scans = synth_split(cfg, "test")
    prep = Preprocessor(cfg, train_stats, target_stats)
    cms = evaluate(net2d, net3d, [prep.eval_sample(s) for s in scans], cfg.num_classes)
    rep = report(cms, cfg.class_names)
    rep["scenario"] = cfg.name
    if args.out_dir:
        _write(Path(args.out_dir) / "report.json", report_json(rep))
        _write(Path(args.out_dir) / "report.csv", report_csv(rep))
    print(json.dumps({m: round(b["miou"], 2) for m, b in rep["modalities"].items()}))


def _run_miou(run):
    path = Path(run)
    if path.is_dir():
        path = path / "report.json"
    rep = json.loads(path.read_text(encoding="utf-8"))
    return {m: b["miou"] for m, b in rep["modalities"].items()}


def cmd_report(args):
    if args.cells:
        b, m, o = args.cells
        rows = {"cells": (b, m, o)}
    else:
        if len(args.runs) != 3:
            raise UsageError("--runs needs exactly three runs: baseline method oracle")
        b, m, o = (_run_miou(r) for r in args.runs)
        rows = {mod: (b[mod], m[mod], o[mod]) for mod in b if mod in m and mod in o}
    table = stats_table(rows)
    text = json.dumps(table, indent=2)
    if args.out_dir:
        _write(Path(args.out_dir) / "domain_stats.csv", stats_csv(table))
        _write(Path(args.out_dir) / "domain_stats.txt", text + "\n")
    print(text)


def cmd_verify(args):
    from .verify import run
    checks = run(args.suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.ok]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return VERIFY if failed else OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="lionxa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_, config=True):
        sp = sub.add_parser(name, help=help_)
        if config:
            sp.add_argument("--config", required=True, help="config file or preset name")
            sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("synth", cmd_synth, "write synthetic scans and labels")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--split", choices=["source", "target", "val", "test"], default="source")
    sp.add_argument("--count", type=int, default=10)

    sp = add("project", cmd_project, "scan -> range image file")
    sp.add_argument("--scan", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sensor", choices=["source", "target"], default="target")
    sp.add_argument("--width", type=int, default=None)

    sp = add("voxelize", cmd_voxelize, "scan -> voxel set file", config=False)
    sp.add_argument("--scan", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--voxel-size", type=float, default=0.05)

    sp = add("targetlike", cmd_targetlike, "source scan -> target-like scan and labels")
    sp.add_argument("--scan", required=True, help="source .bin (labels read from the matching .label)")
    sp.add_argument("--out", required=True, help="output stem; .bin and .label are written")

    sp = add("train", cmd_train, "train one configuration")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--data-dir", default=None, help="directory with source/ target/ val/ test/ splits")
    sp.add_argument("--max-iter", type=int, default=None)
    sp.add_argument("--quiet", action="store_true")

    sp = add("eval", cmd_eval, "evaluate checkpoints on target test data")
    sp.add_argument("--checkpoint-2d", required=True)
    sp.add_argument("--checkpoint-3d", required=True)
    sp.add_argument("--data-dir", default=None, help="directory of target scans (default: synthetic test split)")
    sp.add_argument("--stats", default=None, help="normalisation stats (default: stats.json next to the 2D checkpoint)")
    sp.add_argument("--out-dir", default=None)

    sp = add("report", cmd_report, "domain-gap statistics over baseline/method/oracle", config=False)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--runs", nargs="+", help="baseline, method and oracle run dirs or report.json files")
    g.add_argument("--cells", nargs=3, type=float, metavar=("BASELINE", "METHOD", "ORACLE"))
    sp.add_argument("--out-dir", default=None)

    sp = add("verify", cmd_verify, "run the self-check suites", config=False)
    sp.add_argument("--suite", choices=["gradcheck", "geometry", "losses", "all"], default="all")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE
    try:
        code = args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (LionXAError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA
    return OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
