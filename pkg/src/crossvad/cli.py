"""Command line entry point: ``crossvad {synth,flow,train,score,eval}``.

Every subcommand reads the same YAML run config (see ``crossvad.config``),
validates it completely before touching the output directory, and stamps the
config hash into ``<out>/run_config.<command>.json``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import torch

from .config import RunConfig, RunConfigError, check_paths, load_run_config, parse_run_config
from .dataset import export_ucsd_layout, generate_synthetic_dataset, load_ucsd_dataset, summarize
from .flow import FlowSource, encode_flow_hsi, estimate_m_ref, flow_path, save_flow
from .gan.training import ModelBundle, train
from .eval.experiments import (ExperimentReport, ReportRow, ScoreSeries, default_ablation_configs,
                               run_ablation, run_flow_comparison, run_vgg_layer_sweep)
from .eval.render import render_outputs, save_flow_png
from .inference.features import FeatureExtractor
from .inference.scoring import read_score_manifest, score_clip, write_clip_artifacts

logger = logging.getLogger("crossvad")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", type=Path, required=True, help="run output directory")
    common.add_argument("--threads", type=int, default=1, help="torch intra-op threads (default 1, keeps runs bit-reproducible)")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="crossvad", description="Cross-channel GAN video anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write the seeded synthetic dataset (UCSD layout)")
    sub.add_parser("flow", parents=[common], help="compute .flo files and HSI previews for every clip")
    sub.add_parser("train", parents=[common], help="train the translators and save a checkpoint")
    sub.add_parser("score", parents=[common], help="score test clips into manifests and heat maps")
    sub.add_parser("eval", parents=[common], help="AUC reports: scores, ablation, flow_comparison, vgg_sweep")
    return parser


def _config(args) -> RunConfig:
    if args.config is None:
        return parse_run_config({}, args.seed)
    return load_run_config(args.config, args.seed)


def _stamp(cfg: RunConfig, command: str, out: Path, **extra) -> None:
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "config_hash": cfg.hash(), "config": cfg.raw, **extra}
    (out / f"run_config.{command}.json").write_text(json.dumps(record, indent=1, sort_keys=True, default=str))


def _manifest(cfg: RunConfig, out: Path):
    manifest = load_ucsd_dataset(cfg.dataset_root(out), cfg.dataset.resolution)
    s = summarize(manifest)
    logger.info("dataset %s: %d clips, %d frames %s", cfg.dataset_root(out), s.clips, s.frames, s.per_split)
    return manifest


def cmd_synth(cfg: RunConfig, out: Path) -> None:
    manifest = generate_synthetic_dataset(cfg.synthetic)
    root = export_ucsd_layout(manifest, cfg.dataset_root(out))
    logger.info("wrote %d clips to %s", len(manifest.clips), root)


def cmd_flow(cfg: RunConfig, out: Path) -> None:
    manifest = _manifest(cfg, out)
    source = FlowSource(cfg.backend)
    source.check_available(manifest.clips)
    m_ref = cfg.flow.m_ref or estimate_m_ref(manifest, source)
    n = 0
    for clip in manifest.clips:
        for t, ff in enumerate(source.clip_flows(clip)):
            save_flow(flow_path(out / "flows", clip.clip_id, t), ff)
            if cfg.flow.write_png:
                save_flow_png(out / "flows_png" / clip.clip_id / f"{t}.png", encode_flow_hsi(ff, m_ref))
            n += 1
    (out / "flows" / "m_ref.json").write_text(json.dumps({"m_ref": m_ref}))
    logger.info("wrote %d flow fields (m_ref=%.4f)", n, m_ref)


def cmd_train(cfg: RunConfig, out: Path) -> None:
    manifest = _manifest(cfg, out)
    source = FlowSource(cfg.backend)
    source.check_available(manifest.train_clips)
    ckpt = cfg.checkpoint_path(out)
    resume = ModelBundle.load(ckpt) if cfg.resume else None
    if resume is not None:
        logger.info("resuming %s after epoch %d", ckpt, resume.epochs_done)
    start = time.perf_counter()
    bundle = train(manifest, source, cfg.train, m_ref=cfg.flow.m_ref, resume=resume)
    bundle.save(ckpt)
    bundle.write_history_csv(out / "loss_history.csv")
    logger.info("trained to epoch %d in %.1fs, checkpoint %s", bundle.epochs_done, time.perf_counter() - start, ckpt)


def _load_bundle(cfg: RunConfig, out: Path, directions) -> ModelBundle:
    bundle = ModelBundle.load(cfg.checkpoint_path(out))
    missing = [d for d in directions if d not in bundle.directions]
    if missing:
        raise RunConfigError(f"checkpoint {cfg.checkpoint_path(out)} has no generator for "
                             f"direction(s) {', '.join(missing)}; it holds {', '.join(bundle.directions)}")
    return bundle


def cmd_score(cfg: RunConfig, out: Path) -> None:
    bundle = _load_bundle(cfg, out, cfg.pipeline.required_generators())
    manifest = _manifest(cfg, out)
    source = FlowSource(cfg.backend)
    source.check_available(manifest.test_clips)
    extractor = FeatureExtractor(cfg.pipeline.extractor) if cfg.pipeline.direction != "flow" else None
    scores_dir = cfg.scores_dir(out)
    for clip in manifest.test_clips:
        scores = score_clip(bundle, clip, source, cfg.pipeline, extractor, keep_heatmaps=True)
        path = write_clip_artifacts(scores, scores_dir)
        logger.info("%s: %d scores -> %s", clip.clip_id, len(scores.raw), path)


def _eval_scores(cfg: RunConfig, out: Path) -> ExperimentReport:
    paths = sorted(cfg.scores_dir(out).glob("*.scores.json"))
    if not paths:
        raise RunConfigError(f"no *.scores.json manifests in {cfg.scores_dir(out)}")
    manifests = [read_score_manifest(p) for p in paths]
    start = time.perf_counter()
    series = ScoreSeries.from_manifests(manifests)
    hashes = sorted({m.get("config_hash", "") for m in manifests})
    report = ExperimentReport("scores")
    report.series["scores"] = series
    report.rows.append(ReportRow("scores", cfg.pipeline.direction, series.auc(), time.perf_counter() - start,
                                 None, "ok", ",".join(hashes)))
    return report


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    experiment = cfg.eval.experiment
    if experiment == "scores":
        report = _eval_scores(cfg, out)
    else:
        manifest = _manifest(cfg, out)
        source = FlowSource(cfg.backend)
        if experiment == "ablation":
            source.check_available(manifest.clips)
            sup = cfg.pipeline.suppression
            configs = default_ablation_configs(cfg.train, cfg.pipeline,
                                               dataclasses.replace(sup, enabled=True))
            report = run_ablation(manifest, source, configs, m_ref=cfg.flow.m_ref)
        elif experiment == "flow_comparison":
            specs = cfg.sources or {"farneback": cfg.backend}
            sources = {name: FlowSource(spec, name) for name, spec in specs.items()}
            report = run_flow_comparison(manifest, sources, cfg.train, cfg.pipeline)
        else:
            bundle = _load_bundle(cfg, out, ("ba",))
            report = run_vgg_layer_sweep(manifest, source, bundle, cfg.eval.layers, cfg.pipeline)
    eval_dir = out / "eval"
    csv_path, txt_path = report.write(eval_dir)
    if cfg.eval.render:
        render_outputs(report, eval_dir)
    sys.stdout.write(report.to_text())
    logger.info("report written to %s and %s", csv_path, txt_path)


COMMANDS = {"synth": cmd_synth, "flow": cmd_flow, "train": cmd_train, "score": cmd_score, "eval": cmd_eval}


def _validate(cfg: RunConfig, command: str, out: Path) -> None:
    check_paths(cfg, command, out)
    if command != "synth" and not cfg.dataset_root(out).is_dir() and not (
            command == "eval" and cfg.eval.experiment == "scores"):
        raise RunConfigError(f"dataset directory {cfg.dataset_root(out)} does not exist; run `synth` first "
                             "or set dataset.root")
    needs = None
    if command == "score":
        needs = cfg.pipeline.required_generators()
    elif command == "eval" and cfg.eval.experiment == "vgg_sweep":
        needs = ("ba",)
    if needs:
        if not cfg.checkpoint_path(out).is_file():
            raise RunConfigError(f"missing path(s): checkpoint {cfg.checkpoint_path(out)}")
        _load_bundle(cfg, out, needs)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"crossvad: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        _validate(cfg, args.command, args.out)
    except (RunConfigError, ValueError, KeyError, RuntimeError) as exc:
        print(f"crossvad: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        _stamp(cfg, args.command, args.out)
        COMMANDS[args.command](cfg, args.out)
    except RunConfigError as exc:
        print(f"crossvad: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"crossvad: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
