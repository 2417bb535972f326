"""
Engagement Detector - Command Line Interface
Batch front end wiring every stage: simulate -> track -> extract -> fuse ->
mrmr -> train -> eval -> sweep -> report.
"""

import os
import sys
import logging
import argparse
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
from typing import Optional

import pandas as pd

from . import config
from . import utils
from .acoustic_features import AcousticStream, read_localization, read_sad
from .body_features import read_faces, read_skeletons
from .classify import (SvmConfig, classifier_fitter, cluster_mixing, cross_validate, evaluate,
                       fit_classifier, format_metrics, format_side_by_side, stratified_kfold)
from .core import SPATIAL_IDS, ClassLabel5, check_sequence, class_names, manifest_for, validate_frame
from .fusion import (acoustic_records, face_records, fuse, laser_records, make_channels,
                     read_feature_records, read_fused_csv, read_timeline, skeleton_records,
                     span_of, write_feature_records, write_fused_csv)
from .laser_tracking import LidarConfig, read_scans, track_stream, write_pedestrian_features
from .model_store import load_model, save_model
from .scenarios import builtin, builtin_scenarios, cards_multiuser, scenario_suite
from .selection import MrmrRanking, rank_dataset
from .simulator import STREAM_FILES, SensorConfig, read_script, simulate, write_script, write_streams

logger = logging.getLogger(__name__)

FEATURE_FILES = {
    "laser": "laser_features.jsonl",
    "skeleton": "skeleton_features.jsonl",
    "face": "face_features.jsonl",
    "audio": "acoustic_features.jsonl",
}
PEDESTRIANS_FILE = "pedestrians.jsonl"


class StageError(Exception):
    """A pipeline stage failed; carries the stage name for the exit message."""

    def __init__(self, stage_name, message):
        self.stage = stage_name
        super().__init__(message)


@contextmanager
def stage(name):
    logger.info(f"Stage '{name}' started")
    try:
        yield
    except StageError:
        raise
    except (ValueError, TypeError, IndexError, OSError, KeyError) as e:
        raise StageError(name, str(e)) from e
    logger.info(f"Stage '{name}' finished")


# --- Run configuration ---

@dataclass(frozen=True)
class RunConfig:
    run_dir: str = "run"
    seed: int = config.DEFAULT_SEED
    manifest: str = "32"
    labels: int = 5
    features: str = "multimodal"
    classifier: str = "svm"
    k: int = config.DEFAULT_K
    mrmr_k: Optional[int] = None
    mrmr_scheme: str = config.MRMR_SCHEME
    fold_scheme: str = "truncate"
    class_weight: str = "none"
    n_pass_by: int = 4
    n_approach: int = 4

    def config_hash(self):
        payload = asdict(self)
        payload.pop("run_dir")
        return utils.config_hash(payload)

    def header(self):
        return utils.provenance_header(self.seed, self.config_hash())

    def path(self, *parts):
        return os.path.join(self.run_dir, *parts)


def run_config_from_args(args):
    def pick(value, key):
        return value if value is not None else config.get_setting(key)

    return RunConfig(
        run_dir=args.run_dir,
        seed=int(pick(args.seed, 'seed')),
        manifest=str(pick(args.manifest, 'manifest')),
        labels=args.labels,
        features=args.features,
        classifier=pick(args.classifier, 'classifier'),
        k=int(pick(args.k, 'k')),
        mrmr_k=args.mrmr_k,
        mrmr_scheme=pick(args.mrmr_scheme, 'mrmr_scheme'),
        fold_scheme=args.fold_scheme,
        class_weight=args.class_weight,
        n_pass_by=getattr(args, "pass_by", 4),
        n_approach=getattr(args, "approach", 4),
    )


# --- Dataset helpers ---

def labeled(dataset, n_classes):
    """(dataset, class indices, class names) for the requested taxonomy."""
    if n_classes == 3:
        dataset = dataset.with_labels3()
    return dataset, dataset.label_indices(n_classes), class_names(n_classes)


def feature_ids_for(dataset, run, ranking=None, features=None):
    features = features or run.features
    if features == "spatial":
        ids = tuple(fid for fid in SPATIAL_IDS if fid in dataset.feature_ids)
    else:
        ids = tuple(dataset.feature_ids)
    if run.mrmr_k:
        if ranking is None:
            raise ValueError("--mrmr-k needs a ranking (run 'mrmr' first)")
        ids = tuple(fid for fid in ranking.feature_ids if fid in ids)[:run.mrmr_k]
    return ids


def load_ranking(run, path=None):
    path = path or run.path("ranking.tsv")
    if not os.path.isfile(path):
        return None
    return MrmrRanking.read(path, run.mrmr_scheme)


def classifier_config(run):
    """Training configuration for the run, or None for the classifier defaults."""
    if run.class_weight == "none":
        return None
    if run.classifier != "svm":
        raise ValueError(f"--class-weight {run.class_weight} applies to the svm classifier only")
    return SvmConfig(class_weight=True)


def cross_validated(X, y, names, run):
    plan = stratified_kfold(y, run.k, run.seed, run.fold_scheme)
    fit = classifier_fitter(run.classifier, classifier_config(run))
    return cross_validate(X, y, plan, names, fit, run.seed)


def write_table(path, df, header):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(header + "\n")
        df.to_csv(f, index=False, lineterminator="\n", float_format="%.6f")
    logger.info(f"Table written to {path}")


def write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    logger.info(f"Report written to {path}")


# --- Stage implementations ---

def simulate_to(script, out_dir, run):
    result = simulate(script, SensorConfig(seed=run.seed))
    checksums = write_streams(result, out_dir)
    write_script(os.path.join(out_dir, "script.ini"), script)
    return checksums


def track_recording(streams_dir):
    lidar = LidarConfig.read(os.path.join(streams_dir, STREAM_FILES["lidar"]))
    scans = read_scans(os.path.join(streams_dir, STREAM_FILES["laser"]), lidar)
    outputs = track_stream(scans, lidar)
    write_pedestrian_features(os.path.join(streams_dir, PEDESTRIANS_FILE), outputs)
    pedestrians = [f for output in outputs for f in output.features]
    write_feature_records(os.path.join(streams_dir, FEATURE_FILES["laser"]),
                          laser_records(pedestrians, [output.t for output in outputs]))
    return outputs


def _laser_span(streams_dir):
    path = os.path.join(streams_dir, FEATURE_FILES["laser"])
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path} missing: run 'track' first")
    return span_of(record.t for record in read_feature_records(path))


def extract_recording(streams_dir):
    t0, t1 = _laser_span(streams_dir)
    skeletons = read_skeletons(os.path.join(streams_dir, STREAM_FILES["skeleton"]))
    faces = read_faces(os.path.join(streams_dir, STREAM_FILES["face"]))
    acoustic = AcousticStream(read_sad(os.path.join(streams_dir, STREAM_FILES["sad"])),
                              read_localization(os.path.join(streams_dir, STREAM_FILES["localization"])))
    write_feature_records(os.path.join(streams_dir, FEATURE_FILES["skeleton"]), skeleton_records(skeletons))
    write_feature_records(os.path.join(streams_dir, FEATURE_FILES["face"]), face_records(faces))
    write_feature_records(os.path.join(streams_dir, FEATURE_FILES["audio"]), acoustic_records(acoustic, t0, t1))


def fuse_recording_dir(streams_dir, manifest):
    t0, t1 = _laser_span(streams_dir)
    records = {name: read_feature_records(os.path.join(streams_dir, filename))
               for name, filename in FEATURE_FILES.items()}
    channels = make_channels(laser=records["laser"], skeleton=records["skeleton"],
                             face=records["face"], audio=records["audio"])
    timeline = read_timeline(os.path.join(streams_dir, STREAM_FILES["timeline"]))
    frames = fuse(channels, timeline, t0, t1, manifest)
    problems = [v for frame in frames for v in validate_frame(frame, manifest)] + check_sequence(frames)
    if problems:
        raise ValueError(f"{streams_dir}: {len(problems)} invalid frames, first: {problems[0].message}")
    return frames


def train_model(dataset, run, ranking=None):
    dataset, y, names = labeled(dataset, run.labels)
    ids = feature_ids_for(dataset, run, ranking)
    trained = fit_classifier(dataset.matrix(ids), y, run.classifier, classifier_config(run), run.seed, ids)
    return trained, names


def sweep_table(dataset, run, ranking):
    """One cross-validated row per K; the top-K features keep their dataset column order."""
    dataset, y, names = labeled(dataset, run.labels)
    rows = []
    for k in range(len(ranking), 1, -1):
        top = set(ranking.top(k))
        ids = tuple(fid for fid in dataset.feature_ids if fid in top)
        result = cross_validated(dataset.matrix(ids), y, names, run)
        row = {"k": k, "macro_precision": result.metrics.macro_precision(),
               "accuracy": result.metrics.accuracy}
        for i, name in enumerate(names):
            row[f"{name}_precision"] = result.metrics.precision[i]
            row[f"{name}_recall"] = result.metrics.recall[i]
        rows.append(row)
        logger.debug(f"Sweep K={k}: macro precision {row['macro_precision']:.3f}")
    return pd.DataFrame(rows)


def report_text(dataset, run, ranking=None):
    """Multimodal vs spatial-only tables for the 3- and 5-class taxonomies."""
    sections = [run.header(),
                f"classifier: {run.classifier} (linear one-vs-rest hinge loss for svm; no kernel)"
                if run.classifier == "svm" else f"classifier: {run.classifier}",
                f"cross-validation: stratified {run.k}-fold ({run.fold_scheme}), pooled test predictions",
                ""]
    tables = []
    for n_classes in (3, 5):
        ds, y, names = labeled(dataset, n_classes)
        conditions = {}
        for features in ("multimodal", "spatial"):
            ids = feature_ids_for(ds, replace(run, labels=n_classes), ranking, features)
            conditions[features] = (len(ids), cross_validated(ds.matrix(ids), y, names, run).metrics)
        (n_multi, multi), (n_spatial, spatial) = conditions["multimodal"], conditions["spatial"]
        sections.append(f"== {n_classes} classes ({len(y)} frames) ==")
        sections.append(format_side_by_side(multi, spatial, f"multimodal ({n_multi})", f"spatial ({n_spatial})"))
        sections.append("")
        for features, (_, metrics) in conditions.items():
            frame = metrics.to_frame()
            frame.insert(0, "features", features)
            frame.insert(0, "n_classes", n_classes)
            tables.append(frame)
    if ranking is not None:
        sections.append("MRMR top features: " + ", ".join(ranking.top(min(10, len(ranking)))))
    return "\n".join(sections).rstrip("\n") + "\n", pd.concat(tables, ignore_index=True)


# --- Commands ---

def cmd_simulate(args, run):
    with stage("simulate"):
        if args.script:
            script = read_script(args.script)
        else:
            script = builtin(args.scenario, seed=run.seed)
        out_dir = args.out or run.path("streams", script.name)
        checksums = simulate_to(script, out_dir, run)
    for name, (path, digest) in checksums.items():
        print(f"{digest}  {path}")
    return 0


def cmd_track(args, run):
    with stage("track"):
        for streams_dir in args.streams:
            outputs = track_recording(streams_dir)
            print(f"{streams_dir}: {len(outputs)} scans, "
                  f"max {max((o.n_pedestrians for o in outputs), default=0)} pedestrians")
    return 0


def cmd_extract(args, run):
    with stage("extract"):
        for streams_dir in args.streams:
            extract_recording(streams_dir)
            print(f"{streams_dir}: features extracted")
    return 0


def cmd_fuse(args, run):
    with stage("fuse"):
        manifest = manifest_for(run.manifest)
        frames = []
        for streams_dir in args.streams:
            frames.extend(fuse_recording_dir(streams_dir, manifest))
        out = args.out or run.path("fused.csv")
        write_fused_csv(out, frames, manifest, run.header())
    print(f"{out}: {len(frames)} frames, {len(manifest)} features")
    return 0


def cmd_mrmr(args, run):
    with stage("mrmr"):
        dataset, y, _ = labeled(read_fused_csv(args.data or run.path("fused.csv")), run.labels)
        ids = feature_ids_for(dataset, replace(run, mrmr_k=None))
        ranking = rank_dataset(dataset.matrix(ids), y, args.top or len(ids), run.mrmr_scheme, ids)
        out = args.out or run.path("ranking.tsv")
        ranking.write(out, run.header())
    sys.stdout.write(ranking.to_text())
    return 0


def cmd_train(args, run):
    with stage("train"):
        dataset = read_fused_csv(args.data or run.path("fused.csv"))
        trained, names = train_model(dataset, run, load_ranking(run, args.ranking))
        out = args.out or run.path(f"model_{run.classifier}.json")
        save_model(out, trained, names, run.seed, run.config_hash())
    print(f"{out}: {trained.kind} on {len(trained.feature_ids)} features")
    return 0


def cmd_eval(args, run):
    with stage("eval"):
        trained, document = load_model(args.model)
        n_classes = len(document.get("class_names") or ()) or run.labels
        dataset, y, names = labeled(read_fused_csv(args.data or run.path("fused.csv")), n_classes)
        metrics = evaluate(trained, dataset.matrix(trained.feature_ids), y, names)
        if args.out:
            write_table(args.out, metrics.to_frame(), run.header())
    print(format_metrics(metrics, f"{trained.kind} on {len(y)} frames"))
    return 0


def cmd_sweep(args, run):
    with stage("sweep"):
        dataset = read_fused_csv(args.data or run.path("fused.csv"))
        ranking = load_ranking(run, args.ranking)
        if ranking is None:
            ds, y, _ = labeled(dataset, run.labels)
            ranking = rank_dataset(ds.matrix(ds.feature_ids), y, None, run.mrmr_scheme, ds.feature_ids)
        table = sweep_table(dataset, run, ranking)
        write_table(args.out or run.path("sweep.csv"), table, run.header())
    print(table.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return 0


def cmd_report(args, run):
    with stage("report"):
        dataset = read_fused_csv(args.data or run.path("fused.csv"))
        text, table = report_text(dataset, run, load_ranking(run, args.ranking))
        write_text(args.out or run.path("report.txt"), text)
        write_table(run.path("metrics.csv"), table, run.header())
    sys.stdout.write(text)
    return 0


def cmd_clusters(args, run):
    with stage("clusters"):
        dataset = read_fused_csv(args.data or run.path("fused.csv"))
        y = dataset.label_indices(5)
        pair = (ClassLabel5.LEAVE_INTERACTION.class_index, ClassLabel5.SOMEONE.class_index)
        result = cluster_mixing(dataset.X, y, pair, args.clusters, run.seed)
    names = [ClassLabel5.LEAVE_INTERACTION.value, ClassLabel5.SOMEONE.value]
    print(f"mixing {result.mixing:.3f} ({len(result.sizes)} clusters)")
    for k, (size, shares) in enumerate(zip(result.sizes, result.shares)):
        print(f"cluster {k}: {size} frames, " + ", ".join(f"{n} {s:.2f}" for n, s in zip(names, shares)))
    return 0


def cmd_pipeline(args, run):
    with stage("simulate"):
        scripts = scenario_suite(run.n_pass_by, run.n_approach, run.seed)
        scripts.append(cards_multiuser(seed=run.seed))
        dirs = []
        for i, script in enumerate(scripts):
            out_dir = run.path("streams", f"{i:02d}_{script.name}")
            simulate_to(script, out_dir, run)
            dirs.append(out_dir)
    with stage("track"):
        for streams_dir in dirs:
            track_recording(streams_dir)
    with stage("extract"):
        for streams_dir in dirs:
            extract_recording(streams_dir)
    with stage("fuse"):
        manifest = manifest_for(run.manifest)
        frames = [frame for streams_dir in dirs for frame in fuse_recording_dir(streams_dir, manifest)]
        write_fused_csv(run.path("fused.csv"), frames, manifest, run.header())
        dataset = read_fused_csv(run.path("fused.csv"))
    with stage("mrmr"):
        ds, y, _ = labeled(dataset, run.labels)
        ranking = rank_dataset(ds.matrix(ds.feature_ids), y, None, run.mrmr_scheme, ds.feature_ids)
        ranking.write(run.path("ranking.tsv"), run.header())
    with stage("train"):
        trained, names = train_model(dataset, run, ranking)
        save_model(run.path(f"model_{run.classifier}.json"), trained, names, run.seed, run.config_hash())
    with stage("report"):
        text, table = report_text(dataset, run, ranking)
        write_text(run.path("report.txt"), text)
        write_table(run.path("metrics.csv"), table, run.header())
    sys.stdout.write(text)
    return 0


# --- Argument parsing ---

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed for every stochastic stage")
    common.add_argument("--manifest", choices=["32", "99"], default=None, help="Feature manifest edition")
    common.add_argument("--labels", type=int, choices=[3, 5], default=5, help="Label taxonomy")
    common.add_argument("--features", choices=["multimodal", "spatial"], default="multimodal",
                        help="Use every manifest feature or only the spatial ones")
    common.add_argument("--classifier", choices=["svm", "mlp"], default=None)
    common.add_argument("--k", type=int, default=None, help="Number of cross-validation folds")
    common.add_argument("--mrmr-k", dest="mrmr_k", type=int, default=None,
                        help="Restrict classifiers to the top-K ranked features")
    common.add_argument("--mrmr-scheme", dest="mrmr_scheme", choices=["mid", "miq"], default=None)
    common.add_argument("--fold-scheme", dest="fold_scheme", choices=["truncate", "balanced"],
                        default="truncate")
    common.add_argument("--class-weight", dest="class_weight", choices=["none", "balanced"], default="none",
                        help="Reweight classes inversely to their frequency (svm only)")
    common.add_argument("--run-dir", dest="run_dir", default="run", help="Directory for every output")
    common.add_argument("--log-level", dest="log_level", default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--log-file", dest="log_file", default=None)

    parser = argparse.ArgumentParser(prog=config.APP_NAME, description=config.APP_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"{config.APP_NAME} {config.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Simulate a scenario into sensor streams")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--script", help="Scenario script (INI)")
    source.add_argument("--scenario", choices=sorted(builtin_scenarios()), default="approach_interact_leave")
    p.add_argument("--out", help="Output directory for the streams")
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("track", cmd_track, "Track pedestrians in laser scans"),
                             ("extract", cmd_extract, "Extract body and acoustic features"),
                             ("fuse", cmd_fuse, "Synchronize, impute and label into a fused CSV")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("streams", nargs="+", help="Stream directories")
        if name == "fuse":
            p.add_argument("--out", help="Fused CSV path")
        p.set_defaults(func=func)

    p = sub.add_parser("mrmr", parents=[common], help="Rank features with MRMR")
    p.add_argument("--data", help="Fused CSV")
    p.add_argument("--top", type=int, default=None, help="Number of features to rank")
    p.add_argument("--out", help="Ranking file")
    p.set_defaults(func=cmd_mrmr)

    for name, func, text in (("train", cmd_train, "Train a classifier on a fused CSV"),
                             ("sweep", cmd_sweep, "Cross-validated precision for K = n .. 2 features"),
                             ("report", cmd_report, "Multimodal vs spatial-only cross-validation report")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", help="Fused CSV")
        p.add_argument("--ranking", help="Ranking file")
        p.add_argument("--out", help="Output path")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="Fused CSV")
    p.add_argument("--out", help="Metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", parents=[common], help="Run every stage on builtin scenarios")
    p.add_argument("--pass-by", dest="pass_by", type=int, default=4)
    p.add_argument("--approach", type=int, default=4)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("clusters", parents=[common], help="k-means mixing of leaveInteraction and someone")
    p.add_argument("--data", help="Fused CSV")
    p.add_argument("--clusters", type=int, default=None)
    p.set_defaults(func=cmd_clusters)
    return parser


def main(argv=None):
    """Main entry point for the command line."""
    args = build_parser().parse_args(argv)
    utils.setup_logging(log_path=args.log_file or config.log_path(), level=args.log_level)
    logger.info(f"===== {config.APP_NAME} v{config.APP_VERSION} '{args.command}' =====")
    try:
        run = run_config_from_args(args)
        return args.func(args, run)
    except StageError as e:
        logger.error(f"Stage '{e.stage}' failed: {e}", exc_info=True)
        print(f"error [{e.stage}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
