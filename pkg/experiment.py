"""Multi-round federated runs built from an ``ExperimentConfig``.

A run builds the federation for one seed, starts every client at v = 1 (or the fixed v of a
non-adaptive config), and after each round lets the intermediary controller re-target v from
the measured noise and diversity levels. Clients whose v changes are re-split from scratch.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import pandas as pd
from tqdm import tqdm

from accountant import PrivacyBudget, delta_rule, epsilon_for, privacy_budget
from config import ExperimentConfig
from constants import (AUC_DEFINED, CLIP_C, DELTA, EPSILON, EPSILON_SO_FAR, FINAL, GUARDED, LAMBDA, MEAN,
                       N_PARTICIPANTS, PHI, ROUND, ROUND_COLUMNS, SEED, SIM_STD, STD, TEST_ACC, TEST_AUC, TRAIN_LOSS, V,
                       V_NEXT, V_PER_CLIENT, V_TARGET, XI, TargetCount)
from dpmech import ClipState
from federation import RoundConfig, RoundReport, ServerHyper, init_server_state, run_round
from intermediary import (RatioObservation, SplitPlan, initial_plan, initialize_plan, rebase_ratio, target_v,
                          update_plan)
from localtrain import DPSGDConfig, LocalConfig
from paramvec import ParamVector
from synthdata import ClientDataset, generate_federation, holdout, load_csv, split_client
from utils import AverageMeter, mean_std, relative_spread

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Federation:
    train: tuple[ClientDataset, ...]
    test: tuple[ClientDataset, ...]

    @property
    def sample_counts(self) -> tuple[int, ...]:
        return tuple(len(d) for d in self.train)


@dataclass(frozen=True)
class RunResult:
    seed: int
    reports: tuple[RoundReport, ...]
    theta: ParamVector
    budget: PrivacyBudget


def build_federation(cfg: ExperimentConfig, seed: int) -> Federation:
    """Client datasets (synthetic or CSV) with a held-out test shard per client."""
    d = cfg.dataset
    data_seed = seed if d.seed is None else d.seed
    if d.synthetic:
        clients = generate_federation(d.n_clients, d.samples_per_client, d.dim, d.heterogeneity, data_seed)
    else:
        clients = [load_csv(path, d.label_column, client_id=i) for i, path in enumerate(d.csv_paths)]
        dims = {c.dim for c in clients}
        if len(dims) != 1:
            raise ValueError(f"CSV clients disagree on the feature count: {sorted(dims)}")
    splits = [holdout(c, d.test_fraction, data_seed) for c in clients]
    return Federation(train=tuple(s[0] for s in splits), test=tuple(s[1] for s in splits))


def resolve_delta(cfg: ExperimentConfig) -> float:
    if cfg.privacy.delta_rule:
        return delta_rule(cfg.dataset.client_count)
    return cfg.privacy.delta


def round_config(cfg: ExperimentConfig, seed: int) -> RoundConfig:
    tr, m = cfg.training, cfg.method
    dp = DPSGDConfig(z=tr.dp_sgd_z, c=tr.dp_sgd_c) if tr.dp_sgd_z > 0 else None
    return RoundConfig(local=LocalConfig(eta=tr.eta, epochs=tr.epochs, batch_size=tr.batch_size, dp=dp,
                                         frequency=tr.aggregation_frequency),
                       z=cfg.privacy.z, seed=seed, subsample_ratio=cfg.privacy.subsample_ratio,
                       clip_adaptive=m.clip_adaptive,
                       clip_lr=m.clip_lr, clip_quantile=m.clip_quantile,
                       clip_quantile_noise=m.clip_quantile_noise)


def min_shard_size(cfg: ExperimentConfig) -> int:
    """Smallest shard a split may leave: one DP-SGD batch when local DP-SGD is on, else one sample."""
    return cfg.training.batch_size if cfg.training.dp_sgd_z > 0 else 1


def _resplit(fed: Federation, partitions: list, old: SplitPlan, new: SplitPlan, seed: int, round: int) -> list:
    out = []
    for d, part, v_old, v_new in zip(fed.train, partitions, old.v_per_client, new.v_per_client):
        out.append(part if v_old == v_new else (d, split_client(d, v_new, seed, round)))
    return out


def run_experiment(cfg: ExperimentConfig, seed: int, progress: bool = True) -> RunResult:
    """All rounds of one seed."""
    fed = build_federation(cfg, seed)
    m = cfg.method
    counts = fed.sample_counts
    v0 = 1 if m.adaptive_intermediary else m.fixed_v
    min_shard = min_shard_size(cfg)
    plan = initial_plan(len(fed.train), v0, counts, min_shard)
    if any(v < v0 for v in plan.v_per_client):
        LOGGER.warning(f"v={v0} would leave shards under {min_shard} samples, capped to {plan.v_per_client}")
    partitions = [(d, split_client(d, v, seed, 0)) for d, v in zip(fed.train, plan.v_per_client)]

    rcfg = round_config(cfg, seed)
    clip = None
    if m.clip_init > 0:
        clip = ClipState(C=m.clip_init, eta_C=m.clip_lr, gamma=m.clip_quantile, sigma_b=m.clip_quantile_noise)
    hyper = ServerHyper(server_lr=m.server_lr, beta1=m.beta1, beta2=m.beta2, tau=m.tau)
    state = init_server_state(ParamVector.zeros(fed.train[0].dim), m.optimizer, hyper, clip)

    delta = resolve_delta(cfg)
    z = cfg.privacy.z
    budget = privacy_budget(z, cfg.total_rounds, delta, cfg.privacy.subsample_ratio)
    initialized = False
    reports = []
    for t in tqdm(range(1, cfg.total_rounds + 1), desc=f'{cfg.name} seed {seed}', disable=not progress):
        state, report = run_round(state, partitions, rcfg, fed.test)
        report = replace(report, epsilon_so_far=epsilon_for(z, t, delta) if z > 0 else math.inf)
        reports.append(report)
        LOGGER.info(f"Round {t}: xi={report.xi:.4g} phi={report.phi:.4g} lambda={report.lam:.4g} "
                    f"C={report.clip_C:.4g} v={max(report.v_per_client)} N={report.n_participants} "
                    f"loss={report.train_loss:.4f} acc={report.test_acc:.4f} auc={report.test_auc:.4f}")

        if not m.adaptive_intermediary or t == cfg.total_rounds:
            continue
        if report.guarded or report.phi <= 0:
            LOGGER.debug(f"Round {t}: guarded metrics, intermediary plan kept at v={plan.v}")
            continue
        obs = RatioObservation.from_levels(report.xi, report.phi, plan.v)
        N = len(fed.train) if m.target_count == TargetCount.CLIENTS else report.n_participants
        if initialized:
            new_plan = update_plan(plan, obs, N, t, counts, min_shard)
        else:
            new_plan = initialize_plan(plan, obs, N, t, counts, min_shard)
            initialized = True
        reports[-1] = replace(report, v_target=target_v(N, *rebase_ratio(obs)), v_next=new_plan.v)
        if new_plan is not plan:
            LOGGER.info(f"Round {t}: intermediaries per client {plan.v_per_client} -> {new_plan.v_per_client}")
            partitions = _resplit(fed, partitions, plan, new_plan, seed, t)
            plan = new_plan

    return RunResult(seed=seed, reports=tuple(reports), theta=state.theta, budget=budget)


def _run_for_pool(cfg: ExperimentConfig, seed: int) -> RunResult:
    return run_experiment(cfg, seed, progress=False)


def run_seeds(cfg: ExperimentConfig, threads: int = 1) -> list[RunResult]:
    """One run per seed, in seed order; ``threads`` > 1 spreads seeds over worker processes."""
    if threads > 1 and len(cfg.seeds) > 1:
        from multiprocessing import Pool
        with Pool(processes=min(threads, len(cfg.seeds))) as pool:
            return pool.starmap(_run_for_pool, [(cfg, seed) for seed in cfg.seeds])
    return [run_experiment(cfg, seed) for seed in tqdm(cfg.seeds, desc='seeds', disable=len(cfg.seeds) < 2)]


def reports_frame(result: RunResult) -> pd.DataFrame:
    """One row per round: the round-CSV columns followed by the update direction spread."""
    rows = [{ROUND: r.round, SEED: result.seed, XI: r.xi, PHI: r.phi, LAMBDA: r.lam, CLIP_C: r.clip_C,
             V: max(r.v_per_client), N_PARTICIPANTS: r.n_participants, TRAIN_LOSS: r.train_loss,
             TEST_ACC: r.test_acc, TEST_AUC: r.test_auc, EPSILON_SO_FAR: r.epsilon_so_far, GUARDED: r.guarded,
             SIM_STD: r.sim_std} for r in result.reports]
    return pd.DataFrame(rows, columns=list(ROUND_COLUMNS))


def report_rows(result: RunResult) -> list[dict]:
    """Every RoundReport field, for the per-seed JSONL stream."""
    return [{ROUND: r.round, SEED: result.seed, XI: r.xi, PHI: r.phi, LAMBDA: r.lam, CLIP_C: r.clip_C,
             V_PER_CLIENT: list(r.v_per_client), N_PARTICIPANTS: r.n_participants,
             TRAIN_LOSS: r.train_loss, TEST_ACC: r.test_acc, TEST_AUC: r.test_auc,
             EPSILON_SO_FAR: r.epsilon_so_far, GUARDED: r.guarded, AUC_DEFINED: r.auc_defined,
             SIM_STD: r.sim_std, V_TARGET: r.v_target, V_NEXT: r.v_next}
            for r in result.reports]


def summarize(results: Sequence[RunResult]) -> dict:
    """Final-round metrics as mean and std across seeds, plus the run's privacy budget."""
    if not results:
        raise ValueError("nothing to summarize")
    finals = [r.reports[-1] for r in results]
    summary = {SEED: [r.seed for r in results]}
    for name in (TEST_ACC, TEST_AUC, TRAIN_LOSS):
        values = [getattr(f, name) for f in finals]
        mean, std = mean_std(values)
        summary[name] = {MEAN: mean, STD: std, FINAL: values}
    budget = results[0].budget
    summary[EPSILON] = budget.epsilon
    summary[DELTA] = budget.delta
    summary['z'] = budget.z
    summary['rounds'] = budget.rounds
    summary['sampling_ratio'] = budget.sampling_ratio
    return summary


def window_mean(reports: Sequence[RoundReport], attr: str, window: tuple[int, int], scale: float = 1.0) -> float:
    """Mean of ``attr * scale`` over rounds window[0] … window[1] (inclusive)."""
    meter = AverageMeter(attr)
    for r in reports:
        if window[0] <= r.round <= window[1]:
            meter.update(getattr(r, attr) * scale)
    if meter.count == 0:
        raise ValueError(f"no rounds inside window {window}")
    return meter.avg


def check_scaling_law(results_by_v: dict[int, Sequence[RunResult]], window: tuple[int, int],
                      tolerance: float) -> list[str]:
    """xi_v * v and phi_v / v must each stay within ``tolerance`` of their mean across v.

    Returns the failure messages (empty when the check passes).
    """
    xi_scaled, phi_scaled = {}, {}
    for v, results in sorted(results_by_v.items()):
        xi_scaled[v] = sum(window_mean(r.reports, 'xi', window, v) for r in results) / len(results)
        phi_scaled[v] = sum(window_mean(r.reports, 'phi', window, 1.0 / v) for r in results) / len(results)
        LOGGER.info(f"v={v}: mean xi*v={xi_scaled[v]:.4g}, mean phi/v={phi_scaled[v]:.4g} over rounds {window}")
    failures = []
    for label, values in (('xi*v', xi_scaled), ('phi/v', phi_scaled)):
        spread = relative_spread(list(values.values()))
        if spread > tolerance:
            failures.append(f"{label} varies by {spread:.1%} across v (tolerance {tolerance:.0%}): {values}")
    return failures


def check_controller_steps(result: RunResult) -> list[str]:
    """After the initial jump, v moves by at most one per round."""
    # the controller initialises after the first round with usable metrics
    first = next((r.round for r in result.reports if not r.guarded and r.phi > 0), None)
    failures = []
    for prev, cur in zip(result.reports, result.reports[1:]):
        if prev.round == first:
            continue
        v_prev, v_cur = max(prev.v_per_client), max(cur.v_per_client)
        if abs(v_cur - v_prev) > 1:
            failures.append(f"seed {result.seed}: v jumped {v_prev} -> {v_cur} at round {cur.round}")
    return failures


def check_budget_growth(budgets: Sequence[tuple[int, float]]) -> list[str]:
    """Larger round counts must give strictly larger epsilon."""
    ordered = sorted(budgets)
    return [f"epsilon does not grow from T={a} ({ea:.4g}) to T={b} ({eb:.4g})"
            for (a, ea), (b, eb) in zip(ordered, ordered[1:]) if a < b and not eb > ea]


def final_accuracy(results: Sequence[RunResult]) -> Optional[float]:
    return mean_std([r.reports[-1].test_acc for r in results])[0] if results else None
