"""Experiment orchestration: sweeps over environment settings and seeds, training,
baseline evaluation on held-out users, and result files."""
from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as C
from .baselines import (
    ToyTask,
    episodes_to_target,
    fixed_macro_policy,
    msbl_toy_curve,
    oracle_skyline,
    q_learning,
    skyline_policy,
)
from .core import make_rng
from .environments import ConversationalEnv, RankingEnv, ToyEnv
from .msbl import (
    LevelConfig,
    LevelStack,
    evaluate_families,
    learn_macro_policy,
    multiscale_inference,
    policy_learning,
    policy_learning_recursive,
    save_multiscale,
)
from .optim import OptimizerConfig
from .policies import (
    FamilyMode,
    FixedPolicy,
    PolicyFamily,
    UniformPolicy,
    feedback_actions,
    temperature_actions,
    with_objective,
)

RESULT_COLUMNS = ("experiment_id", "seed", "policy_id", "level", "mean_reward", "standard_error", "episodes")
TIMING_COLUMNS = ("experiment_id", "seed", "policy_id", "wall_clock_s")


@dataclass
class ResultRow:
    experiment_id: str
    seed: int
    policy_id: str
    level: int
    mean_reward: float
    standard_error: float
    episodes: int
    wall_clock_s: float = 0.0


def level_config(d: dict, mode=FamilyMode.POLICY_MODIFICATION, macro_actions=(), learn=True) -> LevelConfig:
    opt = OptimizerConfig(
        learning_rate=d["learning_rate"], weight_decay=d["weight_decay"], batch_size=d["batch_size"], epochs=d["epochs"]
    )
    return LevelConfig(d["n_samples"], mode, tuple(macro_actions), tuple(d["hidden_dims"]), d["beta"], opt, learn=learn)


def sweep_points(cfg: dict) -> list:
    """(label, params) for every combination of swept values, in config order."""
    base = cfg["environment"]["params"]
    keys = list(cfg["sweep"])
    points = []
    for values in itertools.product(*(cfg["sweep"][k] for k in keys)):
        params = dict(base)
        params.update(zip(keys, values))
        label = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in zip(keys, values)) or "default"
        points.append((label, params))
    return points


def point_config(cfg: dict, params: dict, seed: int) -> dict:
    """Single-point config that reproduces one (sweep point, seed) cell."""
    out = copy.deepcopy(cfg)
    out["environment"]["params"] = params
    out["sweep"] = {}
    out["seeds"] = [seed]
    return out


def _rows(exp_id, seed, policy_id, result, episodes, wall) -> list:
    return [
        ResultRow(exp_id, seed, policy_id, lvl, est.value, est.standard_error, episodes, wall)
        for lvl, est in sorted(result.summaries.items())
    ]


class _Clock:
    def __init__(self) -> None:
        self.t = time.perf_counter()

    def lap(self) -> float:
        now = time.perf_counter()
        out, self.t = now - self.t, now
        return out


# --- conversational -----------------------------------------------------------------

def run_conv_cell(cfg: dict, label: str, params: dict, seed: int, art: Path) -> dict:
    env = ConversationalEnv(C.env_spec("conversational", params))
    s = env.spec
    lv = cfg["training"]["levels"]
    stack = LevelStack(
        (
            level_config(lv[0], FamilyMode.POLICY_MODIFICATION, temperature_actions(s.temperatures)),
            level_config(lv[1], FamilyMode.FEEDBACK_MODIFICATION, feedback_actions(s.l3_weights)),
            level_config(lv[2]),
        )
    )
    exp_id = f"{cfg['experiment']}/{label}"
    root = make_rng(seed)
    E = cfg["evaluation"]["episodes"]
    clock = _Clock()
    msp = policy_learning_recursive(env, stack, root.spawn("msbl"))
    save_multiscale(msp, art / "msbl", env.name)
    rows = _rows(exp_id, seed, "msbl", multiscale_inference(msp, env, E, root.spawn("evaluate")), E, clock.lap())
    F1 = msp.families[1]
    first = lambda pi, w: PolicyFamily.explicit([with_objective(pi, w)])
    plain_objective = [1.0, 0.0]
    todo = cfg["baselines"]
    if "two_level" in todo:
        cfg2 = level_config(lv[1])
        pi2 = learn_macro_policy(msp.datasets[2], len(F1), cfg2, root.spawn("two-level").spawn("train-L2"))
        res = evaluate_families(env, FixedPolicy(1, 0), {1: F1, 2: first(pi2, plain_objective)}, E, root.spawn("evaluate"))
        rows += _rows(exp_id, seed, "msbl_2level", res, E, clock.lap())
    if "l1_only" in todo:
        fams = {1: PolicyFamily.explicit([msp.policies[1]]), 2: first(FixedPolicy(1, 0), plain_objective)}
        res = evaluate_families(env, FixedPolicy(1, 0), fams, E, root.spawn("evaluate"))
        rows += _rows(exp_id, seed, "l1_only", res, E, clock.lap())
    if "random" in todo:
        res = evaluate_families(env, UniformPolicy(len(msp.families[2])), msp.families, E, root.spawn("evaluate"))
        rows += _rows(exp_id, seed, "random_L3", res, E, clock.lap())
    if "skyline" in todo:
        sky = oracle_skyline(env, 3, msp.families, cfg["evaluation"]["skyline_budget"], root.spawn("skyline"))
        res = evaluate_families(env, skyline_policy(env, 3, sky), msp.families, E, root.spawn("evaluate"))
        rows += _rows(exp_id, seed, "skyline", res, E, clock.lap())
    if "fixed" in todo:
        for j, tau in enumerate(s.temperatures):
            fams = {1: F1, 2: first(fixed_macro_policy(j, len(F1)), plain_objective)}
            res = evaluate_families(env, FixedPolicy(1, 0), fams, E, root.spawn("evaluate"))
            rows += _rows(exp_id, seed, f"fixed_tau={tau:g}", res, E, clock.lap())
    return {"rows": rows, "curves": {f"L{k}": h for k, h in msp.histories.items()}}


# --- ranking -------------------------------------------------------------------------

def run_ranking_cell(cfg: dict, label: str, params: dict, seed: int, art: Path) -> dict:
    env = RankingEnv(C.env_spec("ranking", params))
    lv = cfg["training"]["levels"]
    stack = LevelStack((level_config(lv[0], macro_actions=env.boosts, learn=False), level_config(lv[1])))
    exp_id = f"{cfg['experiment']}/{label}"
    root = make_rng(seed)
    E = cfg["evaluation"]["episodes"]
    G = env.spec.groups
    clock = _Clock()
    msp = policy_learning(env, stack, root.spawn("msbl"))
    save_multiscale(msp, art / "msbl", env.name)
    rows = _rows(exp_id, seed, "msbl", multiscale_inference(msp, env, E, root.spawn("evaluate")), E, clock.lap())
    fams = {1: msp.families[1]}
    todo = cfg["baselines"]
    if "random" in todo:
        rows += _rows(exp_id, seed, "random_boost", evaluate_families(env, UniformPolicy(G), fams, E, root.spawn("evaluate")), E, clock.lap())
    if "fixed" in todo:
        for j in range(G):
            res = evaluate_families(env, fixed_macro_policy(j, G), fams, E, root.spawn("evaluate"))
            rows += _rows(exp_id, seed, f"fixed_boost={j}", res, E, clock.lap())
    if "no_boost" in todo:
        res = evaluate_families(env, FixedPolicy(1, 0), {1: env.no_boost_family()}, E, root.spawn("evaluate"))
        rows += _rows(exp_id, seed, "no_boost", res, E, clock.lap())
    if "skyline" in todo:
        sky = oracle_skyline(env, 2, fams, cfg["evaluation"]["skyline_budget"], root.spawn("skyline"))
        res = evaluate_families(env, skyline_policy(env, 2, sky), fams, E, root.spawn("evaluate"))
        rows += _rows(exp_id, seed, "skyline", res, E, clock.lap())
    return {"rows": rows, "curves": {f"L{k}": h for k, h in msp.histories.items()}}


# --- toy ------------------------------------------------------------------------------

def run_toy_cell(cfg: dict, label: str, params: dict, seed: int, art: Path) -> dict:
    env = ToyEnv(C.env_spec("toy", params))
    q = cfg["q_learning"]
    exp_id = f"{cfg['experiment']}/{label}"
    clock = _Clock()
    table = q_learning(
        ToyTask(env, q["reward_delivery"]),
        q["episodes"],
        alpha=q["alpha"],
        gamma=q["gamma"],
        epsilon=(q["epsilon_start"], q["epsilon_end"]),
        rng=make_rng(seed).spawn("q-learning"),
        q_init=q["q_init"],
        checkpoint=q["checkpoint"],
    )
    q_wall = clock.lap()
    grid = cfg["training"]["sample_grid"]
    macro_cfg = level_config(cfg["training"]["levels"][1])
    msbl_curve = msbl_toy_curve(env, make_rng(seed).spawn("msbl"), grid, macro_cfg)
    m_wall = clock.lap()
    family = env.boost_family()
    V = env.macro_value_table(family)
    rows = [ResultRow(exp_id, seed, "msbl", 2, msbl_curve[-1][1], 0.0, grid[-1], m_wall)]
    todo = cfg["baselines"]
    if "qlearning" in todo:
        rows.append(ResultRow(exp_id, seed, "qlearning", 2, table.curve[-1][1], 0.0, q["episodes"], q_wall))
    if "uniform" in todo:
        rows.append(ResultRow(exp_id, seed, "uniform", 2, float(V.mean()), 0.0, 0, 0.0))
    if "skyline" in todo:
        rows.append(ResultRow(exp_id, seed, "skyline", 2, oracle_skyline(env, 2, {1: family}).value, 0.0, 0, 0.0))
    return {"rows": rows, "curves": {"qlearning": table.curve, "msbl": msbl_curve}}


RUNNERS = {"toy": run_toy_cell, "conversational": run_conv_cell, "ranking": run_ranking_cell}


def _cell(args):
    kind, cfg, label, params, seed, art = args
    art = Path(art)
    art.mkdir(parents=True, exist_ok=True)
    (art / "config.yaml").write_text(C.dump(point_config(cfg, params, seed)), encoding="utf-8")
    out = RUNNERS[kind](cfg, label, params, seed, art)
    out.update(label=label, seed=seed)
    return out


# --- output -------------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def results_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([r.experiment_id, r.seed, r.policy_id, r.level, f"{r.mean_reward:.10g}", f"{r.standard_error:.10g}", r.episodes])
    return buf.getvalue()


def timings_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    seen = set()
    for r in rows:
        key = (r.experiment_id, r.seed, r.policy_id)
        if key not in seen:
            seen.add(key)
            w.writerow([*key, f"{r.wall_clock_s:.3f}"])
    return buf.getvalue()


def aggregate(rows: list) -> dict:
    """Mean and standard deviation over seeds plus the pooled standard error per
    (experiment, policy, level); pooled SE = sqrt(sum of squared per-seed SEs) / seeds."""
    groups = {}
    for r in rows:
        groups.setdefault((r.experiment_id, r.policy_id, r.level), []).append(r)
    out = {}
    for (exp, pol, lvl), rs in sorted(groups.items()):
        m = np.array([r.mean_reward for r in rs])
        se = np.array([r.standard_error for r in rs])
        out.setdefault(exp, {}).setdefault(pol, {})[str(lvl)] = {
            "mean": float(m.mean()),
            "sd_over_seeds": float(m.std(ddof=1)) if len(m) > 1 else 0.0,
            "pooled_se": float(np.sqrt(np.sum(se**2)) / len(se)),
            "seeds": len(rs),
        }
    return out


def toy_summary(cells: list) -> dict:
    by_point = {}
    for c in cells:
        by_point.setdefault(c["label"], []).append(c)
    out = {}
    for label, cs in by_point.items():
        cs = sorted(cs, key=lambda c: c["seed"])
        target = float(np.median([c["curves"]["qlearning"][-1][1] for c in cs]))
        n0 = [episodes_to_target(c["curves"]["qlearning"], target) for c in cs]
        nl2 = [episodes_to_target(c["curves"]["msbl"], target) for c in cs]
        m0, m2 = float(np.median(n0)), float(np.median(nl2))
        censored = not (np.isfinite(m0) and np.isfinite(m2))
        ratio = None if censored else m0 / m2
        out[label] = {
            "target": target,
            "n0": [None if not np.isfinite(v) else v for v in n0],
            "n_l2": [None if not np.isfinite(v) else v for v in nl2],
            "median_n0": None if not np.isfinite(m0) else m0,
            "median_n_l2": None if not np.isfinite(m2) else m2,
            "ratio": ratio,
            "censored": censored,
            "in_band_10_62": ratio is not None and 10 <= ratio <= 62,
        }
    return out


def _write_curves(run_dir: Path, cells: list) -> None:
    for c in cells:
        d = run_dir / "curves" / c["label"]
        d.mkdir(parents=True, exist_ok=True)
        for name, curve in c["curves"].items():
            if curve and isinstance(curve[0], tuple):
                text = "episode,expected_value\n" + "".join(f"{e},{v:.10g}\n" for e, v in curve)
            else:
                text = "epoch,objective\n" + "".join(f"{i},{v:.10g}\n" for i, v in enumerate(curve))
            _atomic_write(d / f"seed{c['seed']}_{name}.csv", text)


def run(cfg: dict, out_root: Path, jobs: int = 1, log=print) -> Path:
    """Execute every (sweep point, seed) cell and write results.csv, timings.csv,
    summary.json, curves/ and artifacts/ under ``out_root / experiment``."""
    kind = cfg["environment"]["kind"]
    run_dir = Path(out_root) / cfg["experiment"]
    run_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(run_dir / "config.yaml", C.dump(cfg))
    tasks = [
        (kind, cfg, label, params, seed, str(run_dir / "artifacts" / label / f"seed{seed}"))
        for label, params in sweep_points(cfg)
        for seed in cfg["seeds"]
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_cell, tasks))
    else:
        cells = []
        for t in tasks:
            log(f"running {t[2]} seed {t[4]}")
            cells.append(_cell(t))
    rows = [r for c in cells for r in c["rows"]]
    _atomic_write(run_dir / "results.csv", results_csv(rows))
    _atomic_write(run_dir / "timings.csv", timings_csv(rows))
    _write_curves(run_dir, cells)
    summary = {"experiment": cfg["experiment"], "kind": kind, "seeds": cfg["seeds"], "results": aggregate(rows)}
    if kind == "toy":
        summary["sample_efficiency"] = toy_summary(cells)
    _atomic_write(run_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    return run_dir


def format_table(summary: dict, levels: Optional[tuple] = None) -> str:
    """Plain-text table: one line per (experiment, policy) with mean and pooled SE per level."""
    lines = []
    for exp, pols in summary["results"].items():
        lines.append(exp)
        all_levels = sorted({int(l) for p in pols.values() for l in p})
        show = [l for l in all_levels if levels is None or l in levels]
        lines.append("  " + "policy".ljust(20) + "".join(f"L{l} mean (se)".rjust(22) for l in show))
        for pol, by_level in pols.items():
            cells = []
            for l in show:
                s = by_level.get(str(l))
                cells.append(("-" if s is None else f"{s['mean']:.4f} ({s['pooled_se']:.4f})").rjust(22))
            lines.append("  " + pol.ljust(20) + "".join(cells))
    return "\n".join(lines)
