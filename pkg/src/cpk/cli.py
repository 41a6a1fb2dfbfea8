"""Command-line entry point: ``cpk explain | optimize | compare-baseline | domains``.

Every subcommand is deterministic given ``--seed`` and writes plain files
into ``--out``.  Failures print a one-line JSON object to stderr and exit
with status 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .cmdp import CmdpInstance, aggregate_cost, deviation_cost, extract_policy, solve_cmdp_milp, sweep_kappa
from .divergence import DivergenceConfig
from .domains import (DOMAINS, NAV_ACTIONS, NAV_FEATURES, make_nav_domain, make_toy_mdp,
                      policy_iteration_trace)
from .errors import CpkError
from .explain import ActionText, Explanation, explain_policies, render
from .mdp import (Outcome, PiecewisePolicy, Policy, TabularMdp, TabularPolicy, expected_return_exact, load_json,
                  policy_from_dict, rollout, save_json, trajectory_outcomes)
from .outcomes import OnlineEvaluator
from .regions import RegionMdp, bridge, lift_policy
from .rules import Binarizer, grid_thresholds

NAV_GRID = 0.1
TOY_KAPPAS = (0.0, 2.0, 6.0, 8.0)
NAV_KAPPAS = (1.0, 2.0, math.inf)
TOL = 1e-6


# ---------------------------------------------------------------- domain setup


class Setup:
    """Resolved domain: environment, policies, outcomes and text/feature conventions."""

    def __init__(self, kind: str, mdp, pi_b: Policy, pi_e: Policy | None, outcomes: tuple,
                 candidates: list | None = None):
        self.kind, self.mdp, self.pi_b, self.pi_e = kind, mdp, pi_b, pi_e
        self.outcomes, self.candidates = outcomes, candidates or []

    @property
    def tabular(self) -> bool:
        return isinstance(self.mdp, TabularMdp)

    def binarizer(self) -> Binarizer:
        if self.tabular:
            return Binarizer.onehot(self.mdp.n_states)
        return Binarizer.thresholds(grid_thresholds(NAV_GRID), list(NAV_FEATURES))

    def action_text(self) -> ActionText:
        if self.tabular:
            names = self.mdp.action_names or tuple(str(a) for a in range(self.mdp.n_actions))
            return ActionText(tuple(names))
        return ActionText(NAV_ACTIONS, "going {e} instead of {b}")

    def samples(self) -> list:
        if self.tabular:
            return [int(s) for s in np.flatnonzero(self.mdp.initial_dist > 0)]
        return self.mdp.initial_states()


def _generic_outcomes(mdp: TabularMdp) -> tuple:
    length = Outcome("trajectory length", lambda s, a: 0.0 if s in mdp.absorbing else 1.0,
                     higher_is_better=False, phrases=((1, "longer trajectory"), (-1, "shorter trajectory")))
    ret = Outcome("return", lambda s, a: float(mdp.reward[s, a]))
    return (length, ret)


def _load_policy(spec: str, named: dict) -> Policy:
    if spec in named:
        return named[spec]
    return policy_from_dict(load_json(spec))


def _nav_optimum(mdp, pi_b, candidates, cfg, seed) -> Policy:
    rm = bridge(mdp, pi_b, candidates, _nav_binarizer(), cfg, seed)
    sol = solve_cmdp_milp(rm.cmdp(math.inf))
    return lift_policy(rm.assignment_of(extract_policy(sol)), pi_b, rm.regionset)


def _nav_binarizer() -> Binarizer:
    return Binarizer.thresholds(grid_thresholds(NAV_GRID), list(NAV_FEATURES))


def resolve(args, need_pi_e: bool = True) -> Setup:
    cfg = _cfg(args)
    if args.mdp:
        mdp = TabularMdp.from_dict(load_json(args.mdp))
        if not args.pi_b:
            raise ValueError("--mdp requires --pi-b")
        pi_b = _load_policy(args.pi_b, {})
        pi_e = _load_policy(args.pi_e, {}) if args.pi_e else None
        if need_pi_e and pi_e is None:
            raise ValueError("--mdp requires --pi-e for this subcommand")
        return Setup("custom", mdp, pi_b, pi_e, _generic_outcomes(mdp))
    if args.domain == "toy":
        mdp, pi_b, pi_e, outs = make_toy_mdp()
        named = {"b": pi_b, "e": pi_e}
        pi_b = _load_policy(args.pi_b, named) if args.pi_b else pi_b
        pi_e = _load_policy(args.pi_e, named) if args.pi_e else pi_e
        return Setup("toy", mdp, pi_b, pi_e, outs)
    if args.domain == "nav2d":
        mdp, pi_b, e1, e2, outs = make_nav_domain()
        named = {"b": pi_b, "e1": e1, "e2": e2}
        pi_b = _load_policy(args.pi_b, named) if args.pi_b else pi_b
        cands = [_load_policy(c, named) for c in args.candidates] if args.candidates else [e1, e2]
        if args.pi_e == "opt" or (args.pi_e is None and need_pi_e):
            pi_e = _nav_optimum(mdp, pi_b, cands, cfg, args.seed)
        else:
            pi_e = _load_policy(args.pi_e, named) if args.pi_e else None
        return Setup("nav2d", mdp, pi_b, pi_e, outs, cands)
    raise ValueError(f"unknown domain {args.domain!r}; choose from {', '.join(DOMAINS)}")


def _cfg(args) -> DivergenceConfig:
    return DivergenceConfig(args.kappa_pi, args.kappa_t, args.d_max)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return repr(round(float(v), 10))


def _kname(k: float) -> str:
    return "inf" if math.isinf(k) else f"{k:g}"


# ---------------------------------------------------------------- explain


def _explain(setup: Setup, pi_e: Policy, args) -> tuple[Explanation, object, object, object]:
    evaluator = OnlineEvaluator(setup.mdp, setup.outcomes, B=args.bootstrap_b, ci_level=args.ci_level,
                                seed=args.seed)
    b = setup.binarizer()
    return explain_policies(setup.mdp, setup.pi_b, pi_e, setup.outcomes, setup.samples(), b, b,
                            setup.action_text(), _cfg(args), evaluator, args.seed)


def cmd_explain(args) -> int:
    setup = resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    expl, labeled, h_aggr, h_exp = _explain(setup, setup.pi_e, args)
    text = render(expl)
    (out / "explanation.txt").write_text(text, encoding="utf-8")
    payload = expl.to_dict()
    payload["h_aggr"] = h_aggr.to_dict()
    payload["h_exp"] = h_exp.to_dict()
    payload["action_pairs"] = [{"label": k, "action_b": p[0], "action_e": p[1]}
                               for p, k in sorted(labeled.action_pair_index.items(), key=lambda kv: kv[1])]
    save_json(payload, out / "explanation.json")
    labeled.to_csv(out / "diverging_states.csv", setup.mdp.state_repr)
    _explain_figure(setup, setup.pi_e, out / "explanation.png", args.seed)
    sys.stdout.write(text)
    return 0


def _explain_figure(setup: Setup, pi_e: Policy, path, seed: int) -> None:
    samples = setup.samples()
    if setup.tabular:
        ev = OnlineEvaluator(setup.mdp, setup.outcomes, seed=seed)
        vb = [ev.point(setup.pi_b, s) for s in samples]
        ve = [ev.point(pi_e, s) for s in samples]
        plotting.plot_outcomes([setup.mdp.state_repr(s) for s in samples], vb, ve,
                               [o.name for o in setup.outcomes], path)
    else:
        s0 = samples[0]
        trajs = {"π_b": rollout(setup.mdp, setup.pi_b, s0, seed=seed), "π_e": rollout(setup.mdp, pi_e, s0, seed=seed)}
        plotting.plot_nav(trajs, path, reward_boxes=setup.mdp.reward_boxes, goal_x=setup.mdp.goal_x)


# ---------------------------------------------------------------- optimize


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _frontier_tabular(setup: Setup, kappas, basis: str):
    C = deviation_cost(setup.mdp, setup.pi_b)
    fallback = np.array([setup.pi_b.greedy(s) for s in range(setup.mdp.n_states)])
    inst = CmdpInstance(setup.mdp, C, 0.0, fallback=fallback)
    pts = sweep_kappa(inst, kappas, basis)
    return [(p.kappa, p.expected_cost, p.aggregate_changes, p.expected_return, p.policy) for p in pts]


def _frontier_nav(rm: RegionMdp, pi_b: PiecewisePolicy, kappas):
    rows = []
    C = rm.deviation_cost()
    for k in kappas:
        sol = solve_cmdp_milp(rm.cmdp(k))
        pol = extract_policy(sol)
        lifted = lift_policy(rm.assignment_of(pol), pi_b, rm.regionset)
        rows.append((k, sol.expected_cost, aggregate_cost(rm.mdp, pol, C), rm.offset + sol.objective, lifted))
    return rows


def _kappas(args, default) -> list[float]:
    ks = sorted(float(k) for k in args.kappa) if args.kappa else list(default)
    if not ks:
        raise ValueError("kappa list is empty")
    return ks


def cmd_optimize(args) -> int:
    setup = resolve(args, need_pi_e=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if setup.tabular:
        basis = args.kappa_basis or ("aggregate" if setup.kind == "toy" else "expected")
        rows = _frontier_tabular(setup, _kappas(args, TOY_KAPPAS), basis)
    else:
        rm = bridge(setup.mdp, setup.pi_b, setup.candidates, _nav_binarizer(), _cfg(args), args.seed)
        save_json(rm.to_dict(), out / "region_mdp.json")
        rows = _frontier_nav(rm, setup.pi_b, _kappas(args, NAV_KAPPAS))
    _write_csv(out / "frontier.csv", ["kappa", "expected_cost", "aggregate_changes", "expected_return"],
               [[_kname(k), _fmt(c), _fmt(a), _fmt(r)] for k, c, a, r, _ in rows])
    summary = []
    for k, c, a, r, pol in rows:
        save_json(pol.to_dict(), out / f"policy_kappa_{_kname(k)}.json")
        expl, *_ = _explain(setup, pol, args)
        text = render(expl)
        (out / f"explanation_kappa_{_kname(k)}.txt").write_text(text, encoding="utf-8")
        summary.append(f"kappa={_kname(k)} expected_cost={_fmt(c)} expected_return={_fmt(r)}")
    plotting.plot_frontier([(r[1], r[3]) for r in rows], out / "frontier.png")
    sys.stdout.write("\n".join(summary) + "\n")
    return 0


# ---------------------------------------------------------------- compare-baseline


def _match(points, p) -> bool:
    return any(abs(p[0] - q[0]) <= TOL and abs(p[1] - q[1]) <= TOL for q in points)


def cmd_compare_baseline(args) -> int:
    setup = resolve(args, need_pi_e=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if setup.tabular:
        basis = args.kappa_basis or ("aggregate" if setup.kind == "toy" else "expected")
        ks = _kappas(args, [float(k) for k in range(9)] if setup.kind == "toy" else (0.0, math.inf))
        cm = _frontier_tabular(setup, ks, basis)
        C = deviation_cost(setup.mdp, setup.pi_b)
        trace = policy_iteration_trace(setup.mdp, setup.pi_b)
        pi = [(c, aggregate_cost(setup.mdp, p, C), r) for p, c, r in trace]
    else:
        rm = bridge(setup.mdp, setup.pi_b, setup.candidates, _nav_binarizer(), _cfg(args), args.seed)
        ks = _kappas(args, (0.0, 1.0, 2.0, 3.0, math.inf))
        cm = _frontier_nav(rm, setup.pi_b, ks)
        C = rm.deviation_cost()
        trace = policy_iteration_trace(rm.mdp, rm.policy_for(rm.baseline_assignment()), rm.groups, C,
                                       rm.allowed, rm.offset)
        pi = [(c, aggregate_cost(rm.mdp, p, C), r) for p, c, r in trace]
    rows = [["CMDP", _kname(k), _fmt(c), _fmt(a), _fmt(r)] for k, c, a, r, _ in cm]
    rows += [["PI", "", _fmt(c), _fmt(a), _fmt(r)] for c, a, r in pi]
    _write_csv(out / "baseline.csv", ["method", "kappa", "expected_cost", "aggregate_changes", "expected_return"],
               rows)
    cm_pts = [(c, r) for _, c, _, r, _ in cm]
    pi_pts = [(c, r) for c, _, r in pi]
    subset = all(_match(cm_pts, p) for p in pi_pts)
    start, best = cm_pts[0], max(cm_pts, key=lambda p: p[1])
    inter = [p for p in cm_pts if not _match([start, best], p)]
    pi_inter = [p for p in inter if _match(pi_pts, p)]
    meta = {
        "domain": setup.kind,
        "pi_subset_of_cmdp": subset,
        "cmdp_points": len(set((round(c, 9), round(r, 9)) for c, r in cm_pts)),
        "pi_points": len(set((round(c, 9), round(r, 9)) for c, r in pi_pts)),
        "cmdp_intermediate_points": [list(p) for p in sorted(set(inter))],
        "pi_intermediate_points": [list(p) for p in sorted(set(pi_inter))],
        "pi_reaches_optimum": _match(pi_pts, best),
        "tolerance": TOL,
    }
    save_json(meta, out / "baseline_meta.json")
    plotting.plot_frontier(cm_pts, out / "baseline.png", pi_pts)
    sys.stdout.write(json.dumps(meta, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------- domains


def cmd_domains(args) -> int:
    if args.action == "list":
        sys.stdout.write("\n".join(DOMAINS) + "\n")
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.domain
    if name == "toy":
        mdp, pi_b, pi_e, _ = make_toy_mdp()
        save_json(mdp.to_dict(), out / "toy_mdp.json")
        save_json(pi_b.to_dict(), out / "toy_pi_b.json")
        save_json(pi_e.to_dict(), out / "toy_pi_e.json")
    elif name == "nav2d":
        mdp, pi_b, e1, e2, _ = make_nav_domain()
        save_json({"reward_boxes": [[list(map(list, b)), v] for b, v in mdp.reward_boxes],
                   "goal_x": mdp.goal_x, "goal_reward": mdp.goal_reward, "step_cost": mdp.step_cost,
                   "step_size": mdp.step_size, "initial_box": [list(b) for b in mdp.initial_box],
                   "actions": list(mdp.action_names), "starts": [list(s) for s in mdp.starts]},
                  out / "nav2d_domain.json")
        for tag, pol in (("pi_b", pi_b), ("pi_e1", e1), ("pi_e2", e2)):
            save_json(pol.to_dict(), out / f"nav2d_{tag}.json")
    else:
        raise ValueError(f"unknown domain {name!r}; choose from {', '.join(DOMAINS)}")
    sys.stdout.write(f"exported {name} to {out}\n")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpk", description="Sparse contrastive explanations and budgeted policy "
                                                        "improvement for episodic MDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--domain", default="toy", help="bundled domain: toy or nav2d")
        sp.add_argument("--mdp", help="tabular MDP JSON (overrides --domain)")
        sp.add_argument("--pi-b", help="baseline policy: JSON path or bundled name (b)")
        sp.add_argument("--pi-e", help="new policy: JSON path or bundled name (e, e1, e2, opt)")
        sp.add_argument("--candidates", nargs="+", help="candidate policies for the region bridge")
        sp.add_argument("--kappa", action="append", type=float, help="budget; repeat for a sweep")
        sp.add_argument("--kappa-basis", choices=("expected", "aggregate"),
                        help="budget scale (toy default: aggregate change count)")
        sp.add_argument("--kappa-pi", type=float, default=0.1)
        sp.add_argument("--kappa-t", type=float, default=0.1)
        sp.add_argument("--d-max", type=int, default=3)
        sp.add_argument("--bootstrap-b", type=int, default=200)
        sp.add_argument("--ci-level", type=float, default=0.95)
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--out", default="out")

    for name, fn in (("explain", cmd_explain), ("optimize", cmd_optimize),
                     ("compare-baseline", cmd_compare_baseline)):
        sp = sub.add_parser(name)
        common(sp)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("domains")
    sp.add_argument("action", choices=("list", "export"))
    sp.add_argument("--domain", default="toy")
    sp.add_argument("--out", default="out")
    sp.set_defaults(func=cmd_domains)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CpkError, ValueError, KeyError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
