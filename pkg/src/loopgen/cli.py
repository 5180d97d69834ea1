"""Command line entry points.

Subcommands cover the whole workflow: build a corpus, train the two
feature classifiers, train a generator, sample clips, score them, and
plot metric curves across runs.

Conventions shared by every subcommand:
  * outputs go to an explicit directory; relative paths are resolved
    under $LOOPGEN_OUT_ROOT when that variable is set
  * the exact configuration used is written into the output directory
  * inputs are never mutated
  * exit codes: 0 ok, 2 bad input or configuration, 3 runtime failure
    (divergence or a numerical routine leaving its envelope)
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import melpipe, metrics, viz
from .config import RunConfig
from .errors import LoopgenError, ConfigError, InputError, NumericalError, TrainingDiverged
from .featurenets import (
    N_DISTRACTORS,
    TrainClassifierConfig,
    build_general,
    build_scnn,
    freeze,
    load_feature_network,
    save_feature_network,
    train_classifier,
)
from .generator import generate_batch
from .melpipe import CorpusManifest, MelClip
from .trainer import RunManifest, Trainer, convergence_threshold, load_for_generation

OUT_ROOT_ENV = "LOOPGEN_OUT_ROOT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def resolve_out(path) -> Path:
    """Output location, honoring the $LOOPGEN_OUT_ROOT override for
    relative paths."""
    path = Path(path)
    root = os.environ.get(OUT_ROOT_ENV, "")
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def write_command_record(out_dir: Path, name: str, args: argparse.Namespace,
                         filename: str = "command.json"):
    """Drop the exact invocation into the output directory."""
    options = {k: v for k, v in vars(args).items() if k != "func"}
    record = {"command": name, "options": options}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / filename).write_text(
        json.dumps(record, indent=2, sort_keys=True, default=str) + "\n"
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    out = resolve_out(args.out)
    if args.synthetic is not None:
        seed, n_clips, n_classes = args.synthetic
        manifest = melpipe.make_synthetic_corpus(seed, n_clips, n_classes, out)
    else:
        manifest = melpipe.ingest_wav_directory(args.input, out)
    write_command_record(out, "preprocess", args)
    print(f"corpus: {len(manifest.entries)} clips, {len(manifest.tags())} tags -> {out}")
    print(f"digest: {manifest.digest()}")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    corpus = CorpusManifest.load(args.corpus)
    n_tags = len(corpus.tags())
    torch.manual_seed(args.seed)
    if args.kind == "domain":
        fnet = build_scnn(max(n_tags, 2))
    else:
        fnet = build_general(args.embedding_dim,
                             class_count=max(n_tags, 2) + N_DISTRACTORS)
    config = TrainClassifierConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed
    )
    fnet, report = train_classifier(fnet, corpus, config)
    out = resolve_out(args.out)
    save_feature_network(
        fnet, out, train_config=config,
        corpus_id=corpus.digest(), report=report,
    )
    write_command_record(out.parent, "train-classifier", args,
                         filename=f"{out.stem}.command.json")
    print(f"{args.kind} network -> {out.with_suffix('.pt')}")
    print(f"test accuracy: {report.accuracy:.4f} (best epoch {report.best_epoch})")
    return EXIT_OK


def cmd_train(args) -> int:
    run_config = RunConfig.from_file(args.config)
    corpus = CorpusManifest.load(run_config.corpus)
    adapters = {
        "general": freeze(load_feature_network(run_config.general_net)),
        "domain": freeze(load_feature_network(run_config.domain_net)),
    }
    out = resolve_out(run_config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_config.save(out / "config.json")
    trainer = Trainer(corpus, adapters, run_config.train_config())
    manifest = trainer.run(out)
    # fold the full run config (paths and export options included) into
    # the manifest document
    manifest_path = out / "run.json"
    payload = json.loads(manifest_path.read_text())
    payload["run_config"] = run_config.to_dict()
    manifest_path.write_text(json.dumps(payload, indent=2) + "\n")
    last = manifest.records[-1]
    print(f"tau: {manifest.tau:.6f}")
    print(f"converged step: {manifest.converged_step}")
    print(f"final: step {last.step}  fad {last.fad:.6f}  is {last.inception:.6f}")
    print(f"run dir: {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    generator, stats = load_for_generation(checkpoint)
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = generate_batch(generator, args.seed, args.n)
    for i, mel in enumerate(values):
        clip = MelClip(mel, tag="generated")
        stem = out / f"clip_{i:04d}"
        melpipe.save_clip(clip, stem.with_suffix(".f32"),
                          source_id=f"gen-{args.seed}-{i:04d}")
        if args.png:
            viz.save_mel_png(clip, stem.with_suffix(".png"), title=stem.name)
        if args.wav:
            melpipe.write_wav(stem.with_suffix(".wav"),
                              melpipe.clip_to_waveform(clip, stats))
    write_command_record(out, "generate", args)
    print(f"wrote {len(values)} clips to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    corpus = CorpusManifest.load(args.corpus)
    general = freeze(load_feature_network(args.general_net))
    domain = freeze(load_feature_network(args.domain_net))
    embedder = metrics.RandomEmbedder()

    real_clips = corpus.load_split(args.split)
    if not real_clips:
        raise InputError(f"split {args.split!r} has no clips")

    if args.checkpoint:
        checkpoint = Path(args.checkpoint)
        if not checkpoint.exists():
            raise ConfigError(f"checkpoint not found: {checkpoint}")
        generator, _ = load_for_generation(checkpoint)
        n_fake = args.n if args.n > 0 else len(real_clips)
        fake_clips = [
            MelClip(v, tag="generated")
            for v in generate_batch(generator, args.seed, n_fake)
        ]
        fake_source = "generated"
    else:
        # No checkpoint: sanity mode. Score one half of the split against
        # the other; a healthy corpus lands under tau with coverage near 1.
        rng = np.random.default_rng(args.seed)
        order = rng.permutation(len(real_clips))
        half = len(real_clips) // 2
        if half < 2:
            raise InputError(
                f"split {args.split!r} has {len(real_clips)} clips, "
                "need at least 4 for a real-vs-real comparison"
            )
        fake_clips = [real_clips[i] for i in order[half:]]
        real_clips = [real_clips[i] for i in order[:half]]
        fake_source = "real-heldout"

    real_fad = metrics.embed_for_fad(general, real_clips, source="real")
    fake_fad = metrics.embed_for_fad(general, fake_clips, source=fake_source)
    tau = convergence_threshold(real_fad)
    fad_val = metrics.fad(real_fad, fake_fad)
    n_splits = min(metrics.IS_SPLITS, 2 * len(fake_clips))
    is_val = metrics.inception_score(domain, fake_clips, n_splits=n_splits)
    real_dc = metrics.embed_for_dc(embedder, real_clips, source="real")
    fake_dc = metrics.embed_for_dc(embedder, fake_clips, source=fake_source)
    density, coverage = metrics.density_coverage(real_dc, fake_dc)

    n_real, n_fake = len(real_clips), len(fake_clips)
    reports = [
        metrics.metric_report("fad", fad_val, n_real=n_real, n_fake=n_fake,
                              embedder_digest=general.digest),
        metrics.metric_report("tau", tau, n_real=n_real,
                              embedder_digest=general.digest, splits=3),
        metrics.metric_report("is", is_val, n_fake=n_fake,
                              embedder_digest=domain.digest, splits=n_splits),
        metrics.metric_report("density", density, n_real=n_real, n_fake=n_fake,
                              embedder_digest=embedder.digest(),
                              k=metrics.DC_NEIGHBORS),
        metrics.metric_report("coverage", coverage, n_real=n_real, n_fake=n_fake,
                              embedder_digest=embedder.digest(),
                              k=metrics.DC_NEIGHBORS),
    ]
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(reports, indent=2) + "\n")
    write_command_record(out, "evaluate", args)
    for r in reports:
        print(f"{r['metric']}: {r['value']:.6f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    runs = []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        if not (run_dir / "run.json").exists():
            raise ConfigError(f"no run.json under {run_dir}")
        manifest = RunManifest.load(run_dir)
        if not manifest.records:
            raise InputError(f"{run_dir} has no eval records to plot")
        runs.append((run_dir.name, manifest.records))
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    viz.save_metric_curves(runs, out)
    print(f"figure: {out}")
    print(f"data: {out.with_suffix(out.suffix + '.json')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopgen",
        description="Train and evaluate unconditional loop generators on mel clips.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build a mel-clip corpus")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", nargs=3, type=int,
                     metavar=("SEED", "CLIPS", "CLASSES"),
                     help="generate a procedural corpus")
    src.add_argument("--input", help="directory of .wav loops with .json sidecars")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-classifier", help="train a frozen-to-be feature network")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", choices=("domain", "general"), required=True)
    p.add_argument("--out", required=True, help="checkpoint path (suffix added)")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embedding-dim", type=int, default=128,
                   help="embedding width (general networks only)")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train", help="train a generator from a run config")
    p.add_argument("--config", required=True, help="run config (.toml or .json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample clips from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-wav", dest="wav", action="store_false",
                   help="skip Griffin-Lim audio rendering")
    p.add_argument("--no-png", dest="png", action="store_false",
                   help="skip spectrogram images")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated (or held-out real) clips")
    p.add_argument("--corpus", required=True)
    p.add_argument("--general-net", required=True)
    p.add_argument("--domain-net", required=True)
    p.add_argument("--checkpoint", default="",
                   help="generator to score; omit for a real-vs-real sanity check")
    p.add_argument("--split", default="test", help="real split to score against")
    p.add_argument("--n", type=int, default=0,
                   help="generated sample count (0: match the real split)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="overlay metric curves from finished runs")
    p.add_argument("runs", nargs="+", help="run directories containing run.json")
    p.add_argument("--out", required=True, help="figure path (.png)")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrainingDiverged, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (LoopgenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
