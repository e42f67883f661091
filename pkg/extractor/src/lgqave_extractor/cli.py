"""Command line: extract --video V --question "..." --answers a1,a2,... --out DIR"""

import argparse
import sys

from .adapter import ExtractionJob, run_job
from .encoders import EncoderLoadError


def build_parser():
    p = argparse.ArgumentParser(prog="lgqave-extract", description=__doc__)
    p.add_argument("--video", required=True, help="video file or directory of frames")
    p.add_argument("--question", required=True)
    p.add_argument("--answers", required=True, help="comma-separated answer options")
    p.add_argument("--out", required=True)
    p.add_argument("--video-id", default="")
    p.add_argument("--label", type=int, default=0, help="index of the correct answer if known")
    p.add_argument("--category", default="")
    p.add_argument("--qa-mode", default="multi_choice", choices=["multi_choice", "open_ended"])
    p.add_argument("--vision-encoder", default="stub", help="'stub' or 'clip:<model id>'")
    p.add_argument("--text-encoder", default="stub", help="'stub' or 'roberta:<model id>'")
    p.add_argument("--grounding", default="saliency", help="'saliency' or 'prompted:<model id>'")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        job = ExtractionJob(
            video=args.video,
            question=args.question,
            answers=[a.strip() for a in args.answers.split(",") if a.strip()],
            out_dir=args.out,
            video_id=args.video_id,
            label=args.label,
            category=args.category,
            qa_mode=args.qa_mode,
            vision_encoder=args.vision_encoder,
            text_encoder=args.text_encoder,
            grounding=args.grounding,
        )
        entry = run_job(job)
    except EncoderLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(entry['frames'])} frames for {entry['video_id']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
