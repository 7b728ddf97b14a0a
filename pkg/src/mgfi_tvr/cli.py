"""Command-line entry point: ``mgfi-tvr <command> ...``.

Exit codes: 0 success, 1 validation or check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys

from .checkpoint import init_checkpoint, load_checkpoint, save_checkpoint
from .embeddings import blob_path_for, generate_synthetic, load_dataset, save_dataset
from .errors import DegenerateInputError, DimensionError, FormatError
from .gradcheck import gradcheck_all
from .metrics import evaluate
from .objective import ObjectiveConfig, config_for_modules, gallery_scores, similarity_matrix
from .trainer import TrainConfig, train_stage_audio, train_stage_vt

logger = logging.getLogger("mgfi_tvr")

# row order of the ablation table; a-s alone slots in after the visual-only rows
ABLATION_ROWS = (
    (),
    ("s-f",),
    ("w-f",),
    ("s-f", "w-f"),
    ("a-s",),
    ("w-f", "a-s"),
    ("s-f", "a-s"),
    ("s-f", "w-f", "a-s"),
)


class UsageError(Exception):
    pass


def _range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(",")
    lo, hi = int(lo), int(hi or lo)
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    return lo, hi


def _modules(text: str) -> tuple[str, ...]:
    mods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = set(mods) - {"s-f", "w-f", "a-s"}
    if bad:
        raise argparse.ArgumentTypeError(f"unknown modules: {', '.join(sorted(bad))}")
    return tuple(m for m in ("s-f", "w-f", "a-s") if m in mods)


def _label(mods) -> str:
    return "+".join(("base",) + tuple(mods))


def _load(path: str):
    return load_dataset(path, blob_path_for(path))


def _objective(ck, args, mods) -> ObjectiveConfig:
    base = ObjectiveConfig(
        temperature=ck.temperature,
        absent_audio=getattr(args, "absent_audio", "zero"),
        workers=getattr(args, "workers", 1),
    )
    return config_for_modules(mods, base)


def _reports(items, ck, args, mods, directions):
    if "a-s" in mods and not any(it.audio.present for it in items):
        logger.warning("a-s requested but the dataset has no audio; zero policy applied")
    sm = similarity_matrix(items, ck.mgfi, ck.cmfi, _objective(ck, args, mods))
    return [evaluate(sm, d) for d in directions]


def _directions(d: str):
    return ("t2v", "v2t") if d == "both" else (d,)


# -- commands -------------------------------------------------------------


def cmd_synth(args) -> int:
    items = generate_synthetic(
        args.count,
        args.dim,
        frame_range=args.frames,
        word_range=args.words,
        audio_fraction=args.audio_frac,
        audio_informative_fraction=args.audio_informative_frac,
        seed=args.seed,
        noise=args.noise,
        keyword_weight=args.keyword_weight,
    )
    out = Path(args.out)
    save_dataset(items, out, blob_path_for(out))
    print(f"wrote {len(items)} items (dim {args.dim}) to {out} and {blob_path_for(out)}")
    return 0


def cmd_train(args) -> int:
    if args.stage == "audio" and not args.init_checkpoint:
        raise UsageError("--stage audio requires --init-checkpoint")
    items = _load(args.data)
    temperature = 1.0 if args.unit_temperature else args.temperature
    cfg = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        stage=args.stage,
        seed=args.seed,
        temperature=temperature,
        weight_decay=args.weight_decay,
        max_steps=args.max_steps,
        unfreeze_head=args.unfreeze_head,
        metric="cosine",
    )
    if args.lr is not None:
        cfg = replace(cfg, **({"lr_head": args.lr} if args.stage == "vt" else {"lr_audio_head": args.lr}))
    init = load_checkpoint(args.init_checkpoint) if args.init_checkpoint else None
    if init is not None and init.dim != items[0].dim:
        raise DimensionError(f"checkpoint dim {init.dim} != dataset dim {items[0].dim}")
    if args.stage == "vt":
        if init is None:
            init = init_checkpoint(items[0].dim, seed=args.seed, temperature=temperature)
        elif args.unit_temperature or args.temperature_given:
            init = replace(init, temperature=temperature)
        result = train_stage_vt(items, cfg, init)
    else:
        result = train_stage_audio(items, cfg, init)
    save_checkpoint(result.checkpoint, args.out_checkpoint)
    log_path = Path(args.log) if args.log else Path(str(args.out_checkpoint) + ".log")
    log_path.write_text("".join(line + "\n" for line in result.log))
    last = result.losses[-1] if result.losses else float("nan")
    print(f"stage={args.stage} steps={len(result.losses)} final_loss={last:.6f} -> {args.out_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    items = _load(args.data)
    ck = load_checkpoint(args.checkpoint)
    records = []
    for rep in _reports(items, ck, args, args.modules, _directions(args.direction)):
        print(f"[{_label(args.modules)}] {rep.summary()}")
        records.append(rep.as_record(modules=_label(args.modules)))
    if args.report_out:
        Path(args.report_out).write_text("".join(r + "\n" for r in records))
    return 0


def cmd_ablate(args) -> int:
    items = _load(args.data)
    ck = load_checkpoint(args.checkpoint)
    records = []
    for mods in ABLATION_ROWS:
        for rep in _reports(items, ck, args, mods, _directions(args.direction)):
            print(f"{_label(mods):18s} {rep.summary()}")
            records.append(rep.as_record(modules=_label(mods)))
    if args.report_out:
        Path(args.report_out).write_text("".join(r + "\n" for r in records))
    return 0


def cmd_score(args) -> int:
    gallery = _load(args.gallery)
    pool = _load(args.query_data) if args.query_data else gallery
    by_id = {it.id: it for it in pool}
    if args.query_item not in by_id:
        raise FormatError(f"query item {args.query_item!r} not found")
    if args.top_k < 0:
        raise UsageError("--top-k must be >= 0")
    k = args.top_k
    if k > len(gallery):
        logger.warning("top-k %d exceeds gallery size %d; clamping", k, len(gallery))
        k = len(gallery)
    if k == 0:
        return 0
    ck = load_checkpoint(args.checkpoint)
    scores = gallery_scores(by_id[args.query_item], gallery, ck.mgfi, ck.cmfi, _objective(ck, args, args.modules))
    order = sorted(range(len(gallery)), key=lambda i: (-scores[i], gallery[i].id))
    for i in order[:k]:
        print(f"{gallery[i].id}\t{scores[i]:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck_all(args.seed)
    for line in report.lines():
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'} ({report.seconds:.1f}s, seed {args.seed})")
    return 0 if report.passed else 1


# -- parser ---------------------------------------------------------------


class _TrackTemperature(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.temperature_given = True


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgfi-tvr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic embedding bundle")
    p.add_argument("--count", type=int, default=256)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--frames", type=_range, default=(4, 8), help="min,max frames per video")
    p.add_argument("--words", type=_range, default=(3, 8), help="min,max words per caption")
    p.add_argument("--audio-frac", type=float, default=0.0)
    p.add_argument("--audio-informative-frac", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--keyword-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="manifest path; the blob goes next to it as .bin")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--data", required=True)
    p.add_argument("--stage", choices=("vt", "audio"), default="vt")
    p.add_argument("--init-checkpoint")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, help="learning rate of the stage's trainable head")
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=100.0, action=_TrackTemperature)
    p.add_argument("--paper-literal", dest="unit_temperature", action="store_true",
                   help="unscaled mode: temperature 1 with cosine scores")
    p.add_argument("--unfreeze-head", action="store_true", help="also train MGFI in the audio stage")
    p.add_argument("--log", help="run log path (default: <out-checkpoint>.log)")
    p.set_defaults(func=cmd_train, temperature_given=False)

    def add_eval_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--direction", choices=("t2v", "v2t", "both"), default="t2v")
        p.add_argument("--report-out")
        p.add_argument("--absent-audio", choices=("zero", "drop-term"), default="zero")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="retrieval metrics for one module combination")
    add_eval_flags(p)
    p.add_argument("--modules", type=_modules, default=("s-f", "w-f", "a-s"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="metrics for every module combination")
    add_eval_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("score", help="rank gallery videos for one caption")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-item", required=True, help="id of the item whose caption is the query")
    p.add_argument("--query-data", help="bundle holding the query item (default: the gallery)")
    p.add_argument("--gallery", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--modules", type=_modules, default=("s-f", "w-f", "a-s"))
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (FormatError, DimensionError, DegenerateInputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
