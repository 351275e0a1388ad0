import argparse

from constants import SweepAxis, MODEL_NAME


def _experiment_flags():
    """Flags shared by the subcommands that execute an experiment config."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--config', required=True, type=str, help='experiment TOML file')
    parser.add_argument('--out', default=None, type=str, help='output directory (default: output_dir of the config)')
    parser.add_argument('--seed-override', default=None, type=int, help='run this single seed instead of the config seeds')
    parser.add_argument('--threads', default=1, type=int, help='worker processes for seeds / sweep points')
    parser.add_argument('--plots', action='store_true', help='also write SVG charts of the round metrics')
    return parser


def get_parser():
    parser = argparse.ArgumentParser(prog='fedsplit', description=MODEL_NAME)
    subparsers = parser.add_subparsers(dest='command', required=True)
    experiment = _experiment_flags()

    # run
    subparsers.add_parser('run', parents=[experiment], help='federated runs, one per seed')

    # sweep
    sweep = subparsers.add_parser('sweep', parents=[experiment], help='one run per axis value per seed')
    sweep.add_argument('--axis', required=True, choices=[ax.value for ax in SweepAxis])

    # calibrate
    calibrate = subparsers.add_parser('calibrate', help='convert between noise multiplier and epsilon')
    target = calibrate.add_mutually_exclusive_group(required=True)
    target.add_argument('--z', nargs='+', type=float, help='noise multiplier(s) -> epsilon')
    target.add_argument('--epsilon', nargs='+', type=float, help='epsilon target(s) -> noise multiplier')
    calibrate.add_argument('--rounds', default=100, type=int)
    calibrate.add_argument('--delta', default=None, type=float)
    calibrate.add_argument('--n-clients', default=None, type=int, help='derive delta with the 10^-k <= 1/n rule')

    # bounds
    bounds = subparsers.add_parser('bounds', help='Monte-Carlo check of the noisy-SGD variance lower bound')
    bounds.add_argument('--eta', default=0.1, type=float)
    bounds.add_argument('--mu', default=1.0, type=float)
    bounds.add_argument('--beta', default=1.0, type=float)
    bounds.add_argument('--sigma', default=1.0, type=float)
    bounds.add_argument('--K', default=1, type=int)
    bounds.add_argument('--steps', default=50, type=int)
    bounds.add_argument('--trials', default=2000, type=int)
    bounds.add_argument('--dim', default=1, type=int)
    bounds.add_argument('--seed', default=0, type=int)
    bounds.add_argument('--clip', default=1.0, type=float, help='per-sample clip bound of the sensitivity check')
    bounds.add_argument('--sensitivity', action='store_true', help='also enumerate adjacent datasets (2 eta t c bound)')
    bounds.add_argument('--out', default='experiments/bounds', type=str)

    return parser
