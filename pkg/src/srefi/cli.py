"""Command line entry point: ``srefi generate``, ``srefi evaluate`` and ``srefi fixture``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import dataset, evaluation, fixtures, pipeline, reshape
from .errors import SrefiError

log = logging.getLogger("srefi")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {text}")
    return value


def _group(text: str) -> tuple[str, str]:
    gender, sep, ethnicity = text.partition("/")
    if not sep or not gender or not ethnicity:
        raise argparse.ArgumentTypeError(f"group must look like gender/ethnicity, got {text!r}")
    return gender, ethnicity


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srefi", description="Synthetic face generation by region recombination.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="expand real identities or mint synthetic ones")
    g.add_argument("--manifest", required=True, type=Path)
    g.add_argument("--mode", required=True, choices=("expand", "synth"))
    g.add_argument("--images-per-identity", type=int, required=True)
    g.add_argument("--identity-count", type=int, default=1, help="synthetic identities to mint (synth mode)")
    g.add_argument("--c-donor", type=int, default=8, help="donor budget per face, 5..16")
    g.add_argument("--proximal-n", type=int, default=10, help="nearest subjects forming the synth donor pool")
    g.add_argument("--seed", type=_u64, default=0)
    g.add_argument("--embedding-provider", choices=("file", "desk"), default="file")
    g.add_argument("--pyramid-levels", type=int, default=4)
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--dump-stages", action="store_true", help="write mosaics and pyramid levels under _stages/")
    g.add_argument("--export-bands", type=Path, help="write the ratio bands used for reshaping to this CSV")
    g.add_argument("--export-mesh-svg", action="store_true", help="write mesh overlays under _mesh/")
    g.add_argument("--split-eyes", action="store_true", help="allow different donors for the two eyes")
    g.add_argument("--no-reshape", action="store_true")
    g.add_argument("--min-group-size", type=int, default=20, help="faces needed for per-group ratio bands")
    g.add_argument("--on-degenerate", choices=("skip", "abort"), default="skip")

    e = sub.add_parser("evaluate", help="score a matching experiment and write its ROC")
    e.add_argument("--experiment", required=True, choices=evaluation.EXPERIMENTS)
    e.add_argument("--real-manifest", required=True, type=Path)
    e.add_argument("--synth-manifest", type=Path)
    e.add_argument("--embedding-provider", choices=("file", "desk"), default="file")
    e.add_argument("--out", required=True, type=Path, help="ROC CSV path")
    e.add_argument("--dump-scores", type=Path, help="per-pair score CSV path")

    f = sub.add_parser("fixture", help="draw a procedural face dataset")
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--subjects", type=int, default=10)
    f.add_argument("--images-per-subject", type=int, default=3)
    f.add_argument("--size", type=int, default=512)
    f.add_argument("--group", type=_group, action="append", help="gender/ethnicity; repeat for several groups")
    f.add_argument("--seed", type=_u64, default=0)
    f.add_argument("--with-embeddings", action="store_true", help="also write desk embedding sidecars")
    return parser


def cmd_generate(args: argparse.Namespace) -> int:
    manifest = dataset.load_manifest(args.manifest)
    config = pipeline.RunConfig(
        mode=args.mode,
        images_per_identity=args.images_per_identity,
        identity_count=args.identity_count,
        c_donor=args.c_donor,
        proximal_n=args.proximal_n,
        pyramid_levels=args.pyramid_levels,
        master_seed=args.seed,
        embedding_provider=args.embedding_provider,
        output_dir=args.out,
        split_eyes=args.split_eyes,
        reshape=not args.no_reshape,
        min_group_size=args.min_group_size,
        on_degenerate=args.on_degenerate,
        dump_stages=args.dump_stages,
        export_mesh_svg=args.export_mesh_svg,
    )
    store = pipeline.FaceStore(manifest, config)
    records = pipeline.run(manifest, config, store)
    path = pipeline.write_outputs(records, args.out)
    for rec in records:
        if args.dump_stages:
            pipeline.dump_stages(rec, args.out, config.pyramid_levels)
        if args.export_mesh_svg:
            pipeline.export_mesh_svg(rec, args.out)
    if args.export_bands is not None:
        reshape.write_bands_csv(store.all_bands(), args.export_bands)
    print(f"wrote {len(records)} images; manifest {path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    real = dataset.load_manifest(args.real_manifest)
    synth = dataset.load_manifest(args.synth_manifest) if args.synth_manifest else None
    curve, pairs = evaluation.run_experiment(
        args.experiment, real, synth, args.embedding_provider, args.out, args.dump_scores
    )
    print(f"{args.experiment}: {len(pairs)} pairs ({curve.n_mated} mated), auc={curve.auc:.6f}")
    return 0


def cmd_fixture(args: argparse.Namespace) -> int:
    groups = tuple(args.group) if args.group else (("female", "caucasian"),)
    path = fixtures.make_fixture(
        args.out, args.subjects, args.images_per_subject, args.size, groups, args.seed, args.with_embeddings
    )
    print(f"fixture manifest {path}")
    return 0


COMMANDS = {"generate": cmd_generate, "evaluate": cmd_evaluate, "fixture": cmd_fixture}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SrefiError as exc:
        print(f"srefi: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"srefi: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
