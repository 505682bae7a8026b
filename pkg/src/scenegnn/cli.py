"""Command-line entry point: ``scenegnn <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The default output directory comes from ``SCENEGNN_OUT`` (else ``./scenegnn-out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import diffcore as dc
from .evaluator import baseline_reports, evaluate, merge_reports, write_report
from .ingest import TrackFormatError, parse_tracks, preprocess, write_tracks
from .lanemap import LaneMapError, load_lane_map
from .models import RecurrentModel, SingleStepModel, build_model
from .scenegraph import build_graph, to_dot
from .synthgen import make_benchmark, manifest_hash
from .trainer import (LossMode, TrainConfig, TrainingDivergence, ablate_sample, build_samples,
                      config_dict, read_config_file, recording_graphs, train)

log = logging.getLogger("scenegnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "SCENEGNN_OUT"
GRADCHECK_TOL = {"single": 1e-5, "recurrent": 1e-4}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "scenegnn-out"))


def _read(path: str | Path) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p.read_text()


def _load_dataset(data: Path, tracks: str | None = None, map_path: str | None = None):
    recs = parse_tracks(_read(tracks or data / "tracks.csv"))
    lane_map = load_lane_map(_read(map_path or data / "map.json"))
    return recs, lane_map


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = Path(args.out or default_out() / "benchmark")
    _, _, manifest = make_benchmark(args.seed, out)
    print(f"wrote {manifest['n_recordings']} recordings ({manifest['labelled_frames']} labelled frames) to {out}")
    print(f"manifest sha256 {manifest_hash(manifest)}")
    return EXIT_OK


def cmd_convert(args) -> int:
    recs = parse_tracks(_read(args.input))
    radius = None if args.radius <= 0 else args.radius
    cleaned = [preprocess(r, iou_threshold=args.iou, alpha=args.alpha,
                          speeds_from_positions=args.speeds_from_positions, radius=radius) for r in recs]
    out = Path(args.out or default_out() / "tracks.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_tracks(cleaned))
    for r in cleaned:
        if r.warnings:
            log.warning("%s: %s", r.id, dict(r.warnings))
    print(f"wrote {len(cleaned)} recordings to {out}")
    return EXIT_OK


def _select(recs, rec_id):
    if rec_id is None:
        return recs
    chosen = [r for r in recs if r.id == rec_id]
    if not chosen:
        raise KeyError(f"recording {rec_id!r} not found")
    return chosen


def cmd_graph_build(args) -> int:
    recs, lane_map = _load_dataset(Path(args.data), args.tracks, args.map)
    doc = {"recordings": []}
    for rec in _select(recs, args.recording):
        graphs = recording_graphs(rec, lane_map, args.delta)
        doc["recordings"].append({"id": rec.id, "graphs": [g.to_dict() for g in graphs]})
    out = Path(args.out or default_out() / "graphs.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc))
    print(f"wrote graphs of {len(doc['recordings'])} recordings to {out}")
    return EXIT_OK


def cmd_graph_dot(args) -> int:
    recs, lane_map = _load_dataset(Path(args.data), args.tracks, args.map)
    rec = _select(recs, args.recording)[0]
    frames = [f for f in rec.frames if f.frame_index == args.frame]
    if not frames:
        raise KeyError(f"frame {args.frame} not in recording {rec.id}")
    dot = to_dot(build_graph(frames[0], lane_map, ego_id=rec.ego_id), name=f"{rec.id}:{args.frame}")
    if args.out:
        Path(args.out).write_text(dot)
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    # command-line flags win over the config file
    for key in ("lr", "max_epochs", "seed"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.loss is not None:
        values["loss_mode"] = args.loss
    return TrainConfig.from_mapping(values)


def cmd_train(args) -> int:
    config = _train_config(args)
    recs, lane_map = _load_dataset(Path(args.data), args.tracks, args.map)
    seq_len = args.seq_len if args.model == "recurrent" else None
    split = build_samples(recs, lane_map, seq_len, seed=config.seed)
    if args.ablate:
        split = split.map(ablate_sample)
    if args.model == "recurrent":
        model = RecurrentModel(seed=config.seed, max_len=seq_len)
    else:
        model = SingleStepModel(seed=config.seed)

    def progress(e):
        log.info("epoch %d train %.4f val %.4f lr %.1e", e.epoch, e.train_l1, e.val_l1, e.lr)

    result = train(model, split, config, progress)
    out = Path(args.out or default_out() / "train")
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or _default_name(args.model, seq_len, args.ablate)
    extra = {"name": name, "ablate": bool(args.ablate), "train_seed": config.seed,
             "train_config": config_dict(config), "data": str(args.data)}
    result.save(out / "checkpoint.json", extra)
    (out / "train_log.csv").write_text(result.log_csv())
    print(f"best epoch {result.best_epoch} val L1 {result.best_val:.4f}; checkpoint {out / 'checkpoint.json'}")
    return EXIT_OK


def _default_name(model: str, seq_len: int | None, ablate: bool) -> str:
    name = "Single Step" if model == "single" else f"Recurrent{seq_len}"
    return name + (" no edge data" if ablate else "")


def cmd_eval(args) -> int:
    header = dc.load_checkpoint(args.checkpoint)
    model = build_model(header)
    model.store.load_state_dict({"params": header["params"], "adam": header.get("adam")})
    seed = int(header.get("train_seed", 0))
    mode = LossMode(args.loss or header.get("train_config", {}).get("loss_mode", "all"))
    data = Path(args.data or header.get("data", ""))
    recs, lane_map = _load_dataset(data, args.tracks, args.map)
    seq_len = header.get("seq_len") if header["model"] == "recurrent" else None
    split = build_samples(recs, lane_map, seq_len, seed=seed)
    if header.get("ablate"):
        split = split.map(ablate_sample)
    name = header.get("name", header["model"])
    report = evaluate(model, split.test, mode, name, args.dataset)
    if args.baselines:
        report.baselines = baseline_reports(split.test, split.train, mode, args.dataset, args.train_mean)
    out = Path(args.out or default_out() / "eval")
    csv_path, json_path = write_report(report, out, args.stem)
    for r in report.rows():
        print(f"{r.model:28s} L1 {r.l1:.4f}  MSE {r.mse:.4f}  FDE3 {r.fde3:.3f} m")
    print(f"report {csv_path} and {json_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    worst = {"single": 0.0, "recurrent": 0.0}
    for r in run_suite(args.seed, args.entries):
        worst[r.model] = max(worst[r.model], r.max_error)
        log.info("%s: %d entries, max relative error %.3e", r.model, r.checked, r.max_error)
    ok = True
    for kind, err in worst.items():
        status = "ok" if err < GRADCHECK_TOL[kind] else "FAIL"
        ok &= err < GRADCHECK_TOL[kind]
        print(f"{kind}: max relative error {err:.3e} (tolerance {GRADCHECK_TOL[kind]:g}) {status}")
    print(f"max relative error {max(worst.values()):.3e}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_report(args) -> int:
    table = merge_reports(args.inputs)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _data_args(p, required_data: bool = True):
    p.add_argument("--data", required=required_data, help="dataset directory with tracks.csv and map.json")
    p.add_argument("--tracks", help="track CSV (overrides DATA/tracks.csv)")
    p.add_argument("--map", help="lane map JSON (overrides DATA/map.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenegnn", description="Scene graphs and GNN acceleration prediction.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="parse, clean and re-emit a track CSV")
    p.add_argument("input")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--iou", type=float, default=0.2, help="duplicate IoU threshold")
    p.add_argument("--alpha", type=float, default=0.5, help="speed smoothing factor")
    p.add_argument("--radius", type=float, default=80.0, help="ego radius in m (<= 0 disables)")
    p.add_argument("--speeds-from-positions", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("graph", help="scene graph construction and export")
    gsub = p.add_subparsers(dest="graph_command", required=True, parser_class=_Parser)
    g = gsub.add_parser("build", help="frames to COO graph JSON")
    _data_args(g)
    g.add_argument("--recording")
    g.add_argument("--delta", type=int, default=10, help="label horizon in frames")
    g.add_argument("--out")
    g.set_defaults(func=cmd_graph_build)
    g = gsub.add_parser("export-dot", help="one frame's scene graph as Graphviz DOT")
    _data_args(g)
    g.add_argument("--recording")
    g.add_argument("--frame", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_graph_dot)

    p = sub.add_parser("train", help="train a model")
    _data_args(p)
    p.add_argument("--model", choices=["single", "recurrent"], default="single")
    p.add_argument("--seq-len", type=int, default=10)
    p.add_argument("--loss", choices=[m.value for m in LossMode])
    p.add_argument("--config", help="key=value file with training options")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablate", action="store_true", help="zero all edge attributes")
    p.add_argument("--name", help="model name in reports")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _data_args(p, required_data=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baselines", action="store_true", help="add Mean and Zero rows")
    p.add_argument("--train-mean", action="store_true", help="also report a train-mean baseline")
    p.add_argument("--loss", choices=[m.value for m in LossMode])
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--stem", default="report")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks of both models")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entries", type=int, default=40, help="sampled entries per tensor at full width")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="merge report CSVs into one table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, KeyError, TrackFormatError, LaneMapError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
