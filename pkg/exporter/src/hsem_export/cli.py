import argparse
import sys

from .export import DEFAULT_MODEL, DEFAULT_SEPARATOR, SIDES, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsem-export",
        description="Embed passages or questions with a pretrained encoder "
                    "and write an HSEM1 file.")
    parser.add_argument("--input", required=True,
                        help="JSONL of passages or questions")
    parser.add_argument("--out", required=True, help="HSEM1 output path")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help=f"encoder checkpoint (default: {DEFAULT_MODEL})")
    parser.add_argument("--side", choices=SIDES, default="passage")
    parser.add_argument("--passages",
                        help="passages JSONL; with --side question+prev each "
                             "question is paired with its gold_hop1 passage")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--max-length", type=int, default=256)
    parser.add_argument("--separator", default=DEFAULT_SEPARATOR,
                        help="inserted between question and passage text for "
                             "--side question+prev")
    parser.add_argument("--companion",
                        help="existing HSEM1 file; error out unless the "
                             "model's dimension matches it")
    parser.add_argument("--no-normalize", dest="normalize",
                        action="store_false",
                        help="skip L2 normalization after mean pooling")
    return parser


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        job = ExportJob(input_path=args.input, output_path=args.out,
                        model_name=args.model, side=args.side,
                        batch_size=args.batch_size,
                        max_length=args.max_length,
                        passages_path=args.passages,
                        companion_path=args.companion,
                        separator=args.separator, normalize=args.normalize)
        summary = export(job)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {summary.rows_written} rows, d={summary.dimension}")
    return 0


def main() -> None:
    sys.exit(run())
