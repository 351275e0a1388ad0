"""fedsplit command line: run, sweep, calibrate, bounds.

Exit codes: 0 success, 1 invalid config or input file, 2 usage error, 3 a property check failed.
"""
import sys
import math
import logging
import pathlib
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from accountant import CalibrationError, calibrate_z, delta_rule, epsilon_for
from args import get_parser
from config import ConfigError, ExperimentConfig, load_config
from constants import (BOUNDS_COLUMNS, BOUNDS_CSV, CSV_COLUMNS, DELTA, EPSILON, ROUNDS_CSV, SUMMARY_JSON,
                       BOUND, ESTIMATE, HALF_WIDTH, T, Stream, SweepAxis)
from experiment import (RunResult, check_budget_growth, check_controller_steps, check_scaling_law,
                        report_rows, reports_frame, run_seeds, summarize)
from helpers import get_loglevel, plot_round_metrics, setup_logger, write_json, write_jsonl
from paramvec import RngStream
from synthdata import ClientDataset
from theory import (DIVERGENT, ConvexSpec, check_lower_bound, empirical_sensitivity, monte_carlo_divergence,
                    sensitivity_bound)

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CHECK_FAILED = 3

FLOAT_FORMAT = '%.17g'


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.with_seeds((args.seed_override,))
    return cfg


def _output_dir(args, cfg: ExperimentConfig) -> pathlib.Path:
    out = pathlib.Path(args.out or cfg.output_dir).joinpath(cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log_to_file(out_dir: pathlib.Path, command: str):
    setup_logger(loglevel=get_loglevel(), output_log_file=out_dir.joinpath('logs', f'fedsplit_{command}.log'))


def write_run(results: Sequence[RunResult], cfg: ExperimentConfig, out_dir: pathlib.Path,
              plots: bool = False) -> pd.DataFrame:
    """Per-seed JSONL report streams, the merged round CSV and the summary JSON."""
    for result in results:
        write_jsonl(report_rows(result), out_dir.joinpath(f'reports_seed{result.seed}.jsonl'))
    frame = pd.concat([reports_frame(r) for r in results], ignore_index=True)
    frame.to_csv(out_dir.joinpath(ROUNDS_CSV), columns=list(CSV_COLUMNS), index=False, float_format=FLOAT_FORMAT)
    summary = summarize(results)
    write_json(summary, out_dir.joinpath(SUMMARY_JSON))
    LOGGER.info(f"{cfg.name}: privacy budget (epsilon={summary[EPSILON]:.4g}, delta={summary[DELTA]:.0e}) "
                f"for z={cfg.privacy.z}, T={cfg.total_rounds}")
    if plots:
        plot_round_metrics(frame, out_dir.joinpath('rounds.svg'), title=cfg.name)
    return frame


def _controller_failures(cfg: ExperimentConfig, results: Sequence[RunResult]) -> list[str]:
    if not cfg.method.adaptive_intermediary:
        return []
    return [msg for r in results for msg in check_controller_steps(r)]


def _report(failures: Sequence[str]) -> int:
    for msg in failures:
        LOGGER.error(f"check failed: {msg}")
    return EXIT_CHECK_FAILED if failures else EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out_dir = _output_dir(args, cfg)
    _log_to_file(out_dir, 'run')
    LOGGER.info(f"Running '{cfg.name}' for seeds {list(cfg.seeds)} -> {out_dir}")

    results = run_seeds(cfg, args.threads)
    write_run(results, cfg, out_dir, args.plots)
    return _report(_controller_failures(cfg, results))


def _point_label(axis: SweepAxis, value: float) -> str:
    shown = int(value) if axis in (SweepAxis.V, SweepAxis.N_CLIENTS, SweepAxis.ROUNDS, SweepAxis.FREQUENCY) else value
    return f'{axis.value}={shown}'


def cmd_sweep(args) -> int:
    cfg = _load(args)
    axis = SweepAxis(args.axis)
    values = cfg.sweep.values_for(axis)
    out_dir = _output_dir(args, cfg)
    _log_to_file(out_dir, 'sweep')
    LOGGER.info(f"Sweeping '{cfg.name}' over {axis.value} = {list(values)}")

    frames, by_value, failures = [], {}, []
    for value in values:
        point = cfg.with_axis_value(axis, value)
        results = run_seeds(point, args.threads)
        frame = write_run(results, point, out_dir.joinpath(_point_label(axis, value)), args.plots)
        frame.insert(0, axis.value, value)
        frames.append(frame)
        by_value[value] = results
        failures += _controller_failures(point, results)

    merged = pd.concat(frames, ignore_index=True)
    merged.to_csv(out_dir.joinpath(f'sweep_{axis.value}.csv'), columns=[axis.value] + list(CSV_COLUMNS), index=False,
                  float_format=FLOAT_FORMAT)
    write_json({_point_label(axis, v): summarize(rs) for v, rs in by_value.items()},
               out_dir.joinpath(f'sweep_{axis.value}_{SUMMARY_JSON}'))

    if axis == SweepAxis.V:
        rounds = cfg.total_rounds
        window = (cfg.sweep.window[0], min(cfg.sweep.window[1], rounds))
        if window[0] > rounds:
            LOGGER.warning(f"scaling-law window {cfg.sweep.window} starts after the last round {rounds}; check skipped")
        else:
            failures += check_scaling_law({int(v): rs for v, rs in by_value.items()}, window, cfg.sweep.tolerance)
    elif axis in (SweepAxis.ROUNDS, SweepAxis.FREQUENCY) and cfg.privacy.z > 0:
        # keyed by the aggregation count T of each point
        failures += check_budget_growth([(rs[0].budget.rounds, rs[0].budget.epsilon) for rs in by_value.values()])
    return _report(failures)


def cmd_calibrate(args) -> int:
    if (args.delta is None) == (args.n_clients is None):
        print("error: give exactly one of --delta or --n-clients", file=sys.stderr)
        return EXIT_USAGE
    delta = args.delta if args.delta is not None else delta_rule(args.n_clients)

    rows = []
    if args.z is not None:
        for z in args.z:
            rows.append({'z': z, 'rounds': args.rounds, DELTA: delta,
                         EPSILON: epsilon_for(z, args.rounds, delta) if z > 0 else math.inf})
    else:
        for eps in args.epsilon:
            rows.append({EPSILON: eps, 'rounds': args.rounds, DELTA: delta,
                         'z': calibrate_z(eps, args.rounds, delta)})
    print(pd.DataFrame(rows).to_string(index=False, float_format=lambda x: f'{x:.6g}'))
    return EXIT_OK


def _sensitivity_data(args, n: int, stream: RngStream) -> ClientDataset:
    features = stream.generator.normal(0.0, 1.0, size=(n, args.dim))
    return ClientDataset(0, features, np.zeros(n))


def cmd_bounds(args) -> int:
    spec = ConvexSpec(mu=args.mu, beta=args.beta, eta=args.eta, sigma=args.sigma, K=args.K,
                      steps=args.steps, dim=args.dim)
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if spec.regime == DIVERGENT:
        print(f"divergent regime: rate base a = {spec.rate_base:.6g} >= 1, the bound grows without limit")
    else:
        LOGGER.info(f"convergent regime: rate base a = {spec.rate_base:.6g}, bound plateaus at {spec.plateau:.6g}")

    stream = RngStream(args.seed, Stream.MONTE_CARLO)
    estimates = monte_carlo_divergence(spec, args.trials, stream, progress=True)
    checks = check_lower_bound(spec, estimates)
    frame = pd.DataFrame([{T: c.t, BOUND: c.bound, ESTIMATE: c.estimate, HALF_WIDTH: c.half_width}
                          for c in checks], columns=list(BOUNDS_COLUMNS))
    frame['passed'] = [c.passed for c in checks]
    frame.to_csv(out_dir.joinpath(BOUNDS_CSV), index=False, float_format=FLOAT_FORMAT)

    n_passed = sum(c.passed for c in checks)
    print(f"variance lower bound, one-sided non-rejection (estimate + simultaneous 95% half-width >= bound): "
          f"{'PASS' if n_passed == len(checks) else 'FAIL'} ({n_passed}/{len(checks)} steps, {args.trials} trials)")
    failures = [f"t={c.t}: estimate {c.estimate:.6g} + {c.half_width:.3g} < bound {c.bound:.6g}"
                for c in checks if not c.passed]

    if args.sensitivity:
        if args.eta * args.mu > 2:
            LOGGER.warning(f"eta * mu = {args.eta * args.mu} > 2: clipped steps are not nonexpansive")
        sens_stream = RngStream(args.seed, Stream.MONTE_CARLO, path=(1,))
        data = _sensitivity_data(args, 4, sens_stream)
        pool = _sensitivity_data(args, 8, sens_stream)
        worst = empirical_sensitivity(data, pool, args.eta, args.clip, args.steps, mu=args.mu)
        bad = [t for t, w in enumerate(worst) if w > sensitivity_bound(t, args.eta, args.clip) + 1e-12]
        print(f"sensitivity bound 2*eta*t*c: {'PASS' if not bad else 'FAIL'} ({len(worst)} steps)")
        failures += [f"t={t}: deviation {worst[t]:.6g} > {sensitivity_bound(t, args.eta, args.clip):.6g}"
                     for t in bad]
    return _report(failures)


COMMANDS = {'run': cmd_run, 'sweep': cmd_sweep, 'calibrate': cmd_calibrate, 'bounds': cmd_bounds}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = get_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    setup_logger(loglevel=get_loglevel())

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CalibrationError, FileNotFoundError, ValueError) as e:
        LOGGER.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
