import argparse
import logging
import sys
from typing import List, Optional

from src.core.errors import ConfigError
from src.core.gradcheck import DEFAULT_EPS, DEFAULT_SAMPLES
from src.ui.commands import (
    EXIT_USAGE,
    CommandResult,
    cmd_analyze,
    cmd_degrade,
    cmd_eval,
    cmd_gradcheck,
    cmd_materialize,
    cmd_sr,
    cmd_train,
    run_command,
)

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors here are exit code 1"""

    def error(self, message):
        raise ConfigError(message)


class MaffsrnApp:
    """Command-line front end: parses a subcommand, runs it, prints its JSON block"""

    def __init__(self, argv: Optional[List[str]] = None):
        self.argv = list(sys.argv[1:] if argv is None else argv)
        self.parser = self.build_parser()

    def build_parser(self) -> argparse.ArgumentParser:
        parser = _Parser(prog="maffsrn", description="Lightweight super-resolution toolkit")
        parser.add_argument('--debug', '-d', action='store_true', help="verbose logging")
        sub = parser.add_subparsers(dest='command', parser_class=_Parser)

        analyze = sub.add_parser('analyze', help="parameter / multi-add / memory report")
        analyze.add_argument('--config', help="network config JSON")
        analyze.add_argument('--hr', default="1280x720", help="HR size WxH (default 1280x720)")

        degrade = sub.add_parser('degrade', help="modcrop + bicubic downscale")
        degrade.add_argument('--input', required=True)
        degrade.add_argument('--scale', type=int, required=True)
        degrade.add_argument('--output', required=True)

        sr = sub.add_parser('sr', help="super-resolve one image")
        sr.add_argument('--ckpt', required=True)
        sr.add_argument('--input', required=True)
        sr.add_argument('--output', required=True)

        evaluate = sub.add_parser('eval', help="Y-channel PSNR/SSIM over an HR directory")
        evaluate.add_argument('--hr-dir', required=True)
        evaluate.add_argument('--ckpt', help="checkpoint (omit for the bicubic baseline)")
        evaluate.add_argument('--scale', type=int)
        evaluate.add_argument('--border', type=int, help="pixels cropped per side (default: scale)")
        evaluate.add_argument('--workers', type=int)

        train = sub.add_parser('train', help="train a network or run the smoke overfit")
        train.add_argument('--data-dir')
        train.add_argument('--config')
        train.add_argument('--smoke', action='store_true')
        train.add_argument('--seed', type=int, default=0)
        train.add_argument('--epochs', type=int)
        train.add_argument('--batch', type=int)
        train.add_argument('--patch', type=int)
        train.add_argument('--lr', type=float)
        train.add_argument('--optimizer', choices=['adam', 'adamp'])
        train.add_argument('--loss', choices=['l1', 'l2'])
        train.add_argument('--checkpoint-every', type=int)
        train.add_argument('--checkpoint-dir')
        train.add_argument('--val-dir')
        train.add_argument('--loss-csv')
        train.add_argument('--output', help="final checkpoint path")
        train.add_argument('--no-augment', action='store_true')

        gradcheck = sub.add_parser('gradcheck', help="finite-difference gradient check")
        gradcheck.add_argument('--config')
        gradcheck.add_argument('--samples', type=int, default=DEFAULT_SAMPLES)
        gradcheck.add_argument('--eps', type=float, default=DEFAULT_EPS)
        gradcheck.add_argument('--seed', type=int, default=0)
        gradcheck.add_argument('--tolerance', type=float, default=1e-4)
        gradcheck.add_argument('--size', default="9x9", help="LR input WxH")

        materialize = sub.add_parser('materialize', help="write <root>/LR_x{s}/*.png")
        materialize.add_argument('--root', required=True)
        materialize.add_argument('--scale', type=int, required=True)
        return parser

    def dispatch(self, args: argparse.Namespace) -> CommandResult:
        command = args.command
        if command == 'analyze':
            return run_command(cmd_analyze, config=args.config, hr=args.hr)
        if command == 'degrade':
            return run_command(cmd_degrade, input=args.input, scale=args.scale, output=args.output)
        if command == 'sr':
            return run_command(cmd_sr, ckpt=args.ckpt, input=args.input, output=args.output)
        if command == 'eval':
            return run_command(cmd_eval, hr_dir=args.hr_dir, ckpt=args.ckpt, scale=args.scale,
                               border=args.border, workers=args.workers)
        if command == 'train':
            return run_command(cmd_train, data_dir=args.data_dir, config=args.config, smoke=args.smoke,
                               seed=args.seed, epochs=args.epochs, batch=args.batch, patch=args.patch,
                               lr=args.lr, optimizer=args.optimizer, loss=args.loss,
                               checkpoint_every=args.checkpoint_every, checkpoint_dir=args.checkpoint_dir,
                               val_dir=args.val_dir, loss_csv=args.loss_csv, output=args.output,
                               no_augment=args.no_augment)
        if command == 'gradcheck':
            return run_command(cmd_gradcheck, config=args.config, samples=args.samples, eps=args.eps,
                               seed=args.seed, tolerance=args.tolerance, size=args.size)
        if command == 'materialize':
            return run_command(cmd_materialize, root=args.root, scale=args.scale)
        raise ConfigError("No subcommand given")

    def execute(self) -> CommandResult:
        try:
            args = self.parser.parse_args(self.argv)
            return self.dispatch(args)
        except ConfigError as e:
            logger.error(f"Usage error: {e}")
            return CommandResult(EXIT_USAGE, {"error": "ConfigError", "message": str(e)})

    def run(self) -> int:
        """Run the command; the JSON block goes to stdout, logs to stderr"""
        result = self.execute()
        print(result.to_json(), file=sys.stdout)
        sys.stdout.flush()
        return result.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    try:
        app = MaffsrnApp(argv)
        return app.run()
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except Exception as e:
        logger.error(f"Fatal error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
