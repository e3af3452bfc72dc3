"""motionfuse CLI entry point: argument parsing, dispatch and exit codes only."""

import argparse
import sys

from motionfuse.commands import (
    SAMPLE_MODES,
    cmd_ablate,
    cmd_eval,
    cmd_gen_data,
    cmd_gradcheck,
    cmd_sample,
    cmd_sensitivity,
    cmd_train,
)
from motionfuse.config import load_config
from motionfuse.errors import (
    CheckpointError,
    ConfigError,
    MotionFuseError,
    ParseError,
    ValidationError,
)
from motionfuse.log import log_err, print_version

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_GRADCHECK = 3

VALIDATION_ERRORS = (ConfigError, ParseError, ValidationError, CheckpointError)


def exit_code(err):
    return EXIT_VALIDATION if isinstance(err, VALIDATION_ERRORS) else EXIT_RUNTIME


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file (default: ./motionfuse.cfg)")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key (repeatable)",
    )

    p = argparse.ArgumentParser(prog="motionfuse")
    sub = p.add_subparsers(dest="cmd")

    p.add_argument(
        "-v",
        "--version",
        action="store_true",
        help="Show version information and exit",
    )

    sub.add_parser("gen-data", parents=[common], help="Generate the synthetic clip dataset")
    sub.add_parser("train", parents=[common], help="Train the denoiser on the dataset")

    s = sub.add_parser("sample", parents=[common], help="Sample a video from a checkpoint")
    s.add_argument("checkpoint", help="Checkpoint directory")
    s.add_argument("clip", nargs="?", help="Clip directory providing the conditions")
    s.add_argument("--mode", choices=SAMPLE_MODES, default="joint", help="Which conditions to keep")

    e = sub.add_parser("eval", parents=[common], help="Score generated clips against references")
    e.add_argument("generated", help="Directory of generated clip directories")
    e.add_argument("reference", help="Directory of reference clip directories")

    g = sub.add_parser("gradcheck", parents=[common], help="Run the finite-difference suite")
    g.add_argument(
        "--inject-fault",
        action="store_true",
        help="Corrupt every analytic gradient (the suite must then fail)",
    )

    sub.add_parser("ablate", parents=[common], help="Train the four control-branch variants")

    sens = sub.add_parser("sensitivity", parents=[common], help="Own vs swapped condition test")
    sens.add_argument("checkpoint", help="Checkpoint directory")
    sens.add_argument("--clips", type=int, default=4, help="Number of clips with a person to use")
    return p


def run(args):
    cfg = load_config(args.config, args.set, args.seed, args.out)
    if args.cmd == "gen-data":
        cmd_gen_data(cfg)
    elif args.cmd == "train":
        cmd_train(cfg)
    elif args.cmd == "sample":
        cmd_sample(cfg, args.checkpoint, args.clip, args.mode)
    elif args.cmd == "eval":
        cmd_eval(cfg, args.generated, args.reference)
    elif args.cmd == "gradcheck":
        if not cmd_gradcheck(cfg, args.inject_fault):
            return EXIT_GRADCHECK
    elif args.cmd == "ablate":
        cmd_ablate(cfg)
    elif args.cmd == "sensitivity":
        cmd_sensitivity(cfg, args.checkpoint, args.clips)
    return EXIT_OK


def main(argv=None):
    p = build_parser()
    args = p.parse_args(argv)

    try:
        if args.version:
            print_version()
        elif args.cmd is None:
            p.print_help()
        else:
            sys.exit(run(args))
    except KeyboardInterrupt:
        sys.exit(0)
    except MotionFuseError as e:
        log_err(str(e))
        sys.exit(exit_code(e))
    except (OSError, ValueError, ArithmeticError, RuntimeError) as e:
        log_err(f"{type(e).__name__}: {e}")
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    main()
