"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, augment, config, features as feat, metrics, pipeline
from . import model as mdl
from .audio import read_wav
from .errors import DataError, StitchGuardError, UsageError

log = logging.getLogger("stitchguard")

FEATURE_CHOICES = {"lfcc": "lfcc", "llfb": "llfb", "dctdft": "dctdft"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _limit_threads(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load_kv(path) -> dict[str, str]:
    if path is None:
        return {}
    kv = config.read_config_file(path)
    config.check_sections(kv)
    return kv


# -- subcommands ------------------------------------------------------------

def cmd_extract(args) -> int:
    kv = _load_kv(args.config)
    kv["features.kind"] = args.feature
    if args.dim is not None:
        kv["features.dim"] = str(args.dim)
    if args.nfft is not None:
        kv["features.nfft"] = str(args.nfft)
    fcfg = config.feature_config_from_kv(kv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = pipeline.read_manifest(args.manifest)
    for e in entries:
        fm = pipeline.utterance_features(read_wav(e.path), fcfg, normalize=False)
        feat.write_features(fm, out / f"{e.utt_id}.feat")
    (out / "features.cfg").write_text(config.format_kv(config.feature_config_to_kv(fcfg)))
    print(f"extracted {len(entries)} utterances -> {out}")
    return 0


def cmd_augment(args) -> int:
    entries = pipeline.read_manifest(args.manifest)
    dspecs = [augment.DistortionSpec("volume")]
    if args.noise_manifest:
        dspecs.append(augment.DistortionSpec("noise", noise_manifest=Path(args.noise_manifest)))
    if args.music_manifest:
        dspecs.append(augment.DistortionSpec("music", noise_manifest=Path(args.music_manifest)))
    if args.babble_manifest:
        dspecs.append(augment.DistortionSpec("babble", noise_manifest=Path(args.babble_manifest)))
    if args.rir_manifest:
        dspecs.append(augment.DistortionSpec("reverb", rir_manifest=Path(args.rir_manifest)))
    cspecs = [augment.CompressionSpec("telephony")]
    if args.codec_cmd:
        for codec in augment.REAL_CODECS:
            cspecs.append(augment.CompressionSpec(codec, args.codec_cmd, args.decode_cmd))
    else:
        cspecs.append(augment.CompressionSpec("surrogate"))
    if args.from_plan:
        plan = augment.read_plan(args.plan)
    else:
        candidates = args.expansion * len(entries)
        dbudget = args.distortion_budget if args.distortion_budget is not None else min(60000, candidates)
        cbudget = args.compression_budget if args.compression_budget is not None else min(40000, candidates)
        plan = augment.build_plan(entries, dspecs, cspecs, args.expansion, dbudget, cbudget, args.seed)
        augment.write_plan(plan, args.plan)
    sources = {e.utt_id: e.path for e in entries}
    labels = {e.utt_id: e.label for e in entries}
    out = Path(args.out)
    rendered = augment.execute_plan(plan, sources, out, {c.codec: c for c in cspecs}, workers=args.threads or 1)
    src_of = {e.out_id: e.src_id for e in plan.entries}
    pipeline.write_manifest(
        [pipeline.ManifestEntry(o, p.resolve(), labels[src_of[o]]) for o, p in sorted(rendered.items())],
        out / "manifest.tsv")
    print(f"rendered {len(rendered)} augmented utterances -> {out}")
    return 0


def _feature_config_for(kv, features_dir) -> feat.FeatureConfig:
    if not any(k.startswith("features.") for k in kv) and features_dir:
        cached = Path(features_dir) / "features.cfg"
        if cached.exists():
            return config.feature_config_from_kv(config.read_config_file(cached))
    return config.feature_config_from_kv(kv)


def _checkpoint_meta(fcfg, tcfg, result, seed) -> dict[str, str]:
    meta = config.feature_config_to_kv(fcfg)
    meta.update(config.section_kv(tcfg.chunk, "chunk"))
    meta["meta.seed"] = str(seed)
    meta["meta.best_epoch"] = str(result.best_epoch)
    return meta


def _write_log(result, path) -> None:
    Path(path).write_text("".join(e.line() + "\n" for e in result.log))


def cmd_train(args) -> int:
    kv = _load_kv(args.config)
    fcfg = _feature_config_for(kv, args.features)
    tcfg = config.train_config_from_kv(kv)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    mcfg = config.model_config_from_kv(kv)
    entries = pipeline.read_manifest(args.manifest)
    with _limit_threads(args.threads):
        model = mdl.build(mcfg, seed=tcfg.seed)
        result = pipeline.train(entries, fcfg, tcfg, model, args.features)
    mdl.save(result.model, args.out, _checkpoint_meta(fcfg, tcfg, result, tcfg.seed))
    _write_log(result, args.log or f"{args.out}.log")
    last = result.log[-1].line() if result.log else "no epochs"
    print(f"trained -> {args.out} ({last})")
    return 0


def cmd_finetune(args) -> int:
    model = mdl.load(args.model)
    kv = _load_kv(args.config)
    fcfg = config.feature_config_from_kv({k: v for k, v in model.metadata.items() if k.startswith("features.")})
    base = pipeline.TrainConfig(chunk=config.chunk_from_kv(model.metadata))
    tcfg = config.train_config_from_kv(kv, base)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    entries = pipeline.read_manifest(args.manifest)
    with _limit_threads(args.threads):
        result = pipeline.finetune(model, entries, fcfg, tcfg, args.features)
    ft = pipeline.finetune_config(tcfg)
    meta = _checkpoint_meta(fcfg, ft, result, tcfg.seed)
    mdl.save(result.model, args.out, meta)
    _write_log(result, args.log or f"{args.out}.log")
    print(f"fine-tuned -> {args.out} (lr {ft.optimizer.learning_rate:g}, overlap {ft.chunk.overlap_ratio:g})")
    return 0


def cmd_infer(args) -> int:
    model = mdl.load(args.model)
    fcfg = config.feature_config_from_kv({k: v for k, v in model.metadata.items() if k.startswith("features.")})
    chunk = config.chunk_from_kv(model.metadata)
    kv = {}
    if args.chunk_ms is not None:
        kv["chunk.chunk_ms"] = str(args.chunk_ms)
    if args.overlap is not None:
        kv["chunk.overlap_ratio"] = str(args.overlap)
    chunk = config.chunk_from_kv(kv, chunk)
    entries = pipeline.read_manifest(args.manifest)
    with _limit_threads(args.threads):
        records = [pipeline.score_utterance(model, read_wav(e.path), fcfg, chunk, args.mode, e.utt_id, e.label,
                                            args.aggregation)
                   for e in entries]
    metrics.write_scores(records, args.out)
    print(f"scored {len(records)} utterances -> {args.out}")
    return 0


def cmd_eer(args) -> int:
    labels = None
    if args.labels:
        labels = {e.utt_id: e.label for e in pipeline.read_manifest(args.labels)}
    records = metrics.read_scores(args.scores, labels)
    missing = [r.utt_id for r in records if r.label is None]
    if missing:
        raise DataError(f"no label for {len(missing)} utterances (e.g. {missing[0]}); pass --labels")
    result = metrics.compute_eer(records)
    print(f"EER {result.eer:.4f}")
    print(f"threshold {result.threshold:.6f}")
    return 0


def cmd_final_score(args) -> int:
    print(f"final {metrics.final_score(args.r1, args.r2):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stitchguard", description="Deepfake audio detection toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", help="compute feature files for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--feature", choices=sorted(FEATURE_CHOICES), default="lfcc")
    s.add_argument("--dim", type=int)
    s.add_argument("--nfft", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("augment", help="build and render an augmentation plan")
    s.add_argument("--manifest", required=True)
    s.add_argument("--plan", required=True)
    s.add_argument("--from-plan", action="store_true", help="render an existing plan instead of drawing one")
    s.add_argument("--noise-manifest")
    s.add_argument("--music-manifest")
    s.add_argument("--babble-manifest")
    s.add_argument("--rir-manifest")
    s.add_argument("--codec-cmd")
    s.add_argument("--decode-cmd")
    s.add_argument("--expansion", type=int, default=5)
    s.add_argument("--distortion-budget", type=int)
    s.add_argument("--compression-budget", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--features")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", help="continue training at 70%% overlap and 1/100 learning rate")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--features")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("infer", help="score utterances")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=mdl.STITCH_MODES, default=mdl.STITCHED)
    s.add_argument("--chunk-ms", type=int)
    s.add_argument("--overlap", type=float)
    s.add_argument("--aggregation", choices=pipeline.AGGREGATIONS, default="mean")
    s.add_argument("--threads", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eer", help="equal error rate of a score file")
    s.add_argument("--scores", required=True)
    s.add_argument("--labels")
    s.set_defaults(func=cmd_eer)

    s = sub.add_parser("final-score", help="40/60 weighted two-round score")
    s.add_argument("--r1", type=float, required=True)
    s.add_argument("--r2", type=float, required=True)
    s.set_defaults(func=cmd_final_score)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StitchGuardError as exc:
        print(f"stitchguard {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"stitchguard {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"stitchguard {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
