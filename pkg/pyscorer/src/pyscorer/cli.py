"""Command-line entry points: serve a scorer, verify shared fixtures."""

from __future__ import annotations

import argparse
import sys

from .fixture import FIXTURE_STEPS, fixture_aesthetic, fixture_steps
from .models import ModelsScorer, StartupError
from .protocol import VocabularyFileError, load_vocabulary, serve
from .verify import verify_bag_loss


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _make_parser() -> _Parser:
    parser = _Parser(prog="pyscorer",
                     description="Reference scorer for the crop-scorer/1 "
                                 "wire protocol.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="answer score requests on stdio")
    p_serve.add_argument("--mode", choices=("fixture", "models"),
                         default="fixture")
    p_serve.add_argument("--vocab", required=True,
                         help="vocabulary file (one word per line)")
    p_serve.add_argument("--seed", type=int, default=0,
                         help="fixture-mode hash seed")
    p_serve.add_argument("--steps", type=int, default=FIXTURE_STEPS,
                         help="fixture-mode word steps per response")
    p_serve.add_argument("--checkpoint-dir", default="checkpoints",
                         help="models-mode directory holding captioner.pt "
                              "and aesthetic.pt")

    p_verify = sub.add_parser(
        "verify-bag-loss",
        help="recompute caption losses over a shared fixture file")
    p_verify.add_argument("fixtures", help="JSONL fixture file")
    return parser


def cmd_serve(args) -> int:
    try:
        tokens = load_vocabulary(args.vocab)
    except (OSError, VocabularyFileError) as exc:
        print(f"pyscorer: {exc}", file=sys.stderr)
        return 2

    if args.mode == "models":
        try:
            handler = ModelsScorer(args.checkpoint_dir, len(tokens))
        except StartupError as exc:
            print(f"pyscorer: {exc}", file=sys.stderr)
            return 2
        name = "pyscorer-models"
    else:
        if args.steps < 1:
            print("pyscorer: --steps must be at least 1", file=sys.stderr)
            return 2

        def handler(req):
            return (fixture_steps(req.pixels, len(tokens),
                                  steps=args.steps, seed=args.seed),
                    fixture_aesthetic(req.pixels))

        name = "pyscorer-fixture"

    serve(handler, tokens, name)
    return 0


def cmd_verify(args) -> int:
    try:
        ok = verify_bag_loss(args.fixtures)
    except OSError as exc:
        print(f"pyscorer: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError) as exc:
        print(f"pyscorer: malformed fixture file: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 2


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
