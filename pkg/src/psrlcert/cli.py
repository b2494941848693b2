"""Command-line entry point: ``python -m psrlcert <verb> --config FILE``.

Verbs and the files they write under ``--out`` (default ``run.out``):

``train``
    ``g.mlp``, ``q.mlp`` (MLPv1) and ``train_log.csv``.
``certify``
    ``cert_seed<N>.txt`` per initial-state seed, ``certificates.txt`` with the
    medians, and ``timing.txt`` with wall times (kept apart so that the other
    files are reproducible byte for byte).
``eval``
    ``eval.csv`` and ``eval.txt``.
``attack``
    ``attack.csv`` with one row per grid budget of the sweep, and
    ``attack_certified.csv`` when certificates exist in the output directory
    (starts where the unperturbed policy already crashes are left out).
``report``
    prints and writes ``report.txt`` summarising whatever the directory holds.
"""

from __future__ import annotations

import argparse
import logging
import statistics
import sys
from pathlib import Path

from . import env
from .config import ConfigError, RunConfig, load_config, with_overrides
from .evaluation import AttackConfig, attacked_rollout, evaluate
from .nn import ShapeError, TrainingFault, WeightFileError, load_params, save_params
from .policy import PsrlPolicy
from .tasc import certify, parse_report
from .train import train_pipeline

log = logging.getLogger("psrlcert")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _out_dir(cfg: RunConfig, args) -> Path:
    return Path(args.out or cfg.run.out)


def load_policy(cfg: RunConfig, g_path, q_path) -> PsrlPolicy:
    preset = cfg.preset
    g = load_params(g_path)
    q = load_params(q_path)
    if g.in_dim != preset.obs_dim:
        raise ShapeError(f"{g_path}: g takes {g.in_dim} inputs but {preset.name} frames have {preset.obs_dim}")
    if q.out_dim != env.N_ACTIONS:
        raise ShapeError(f"{q_path}: q has {q.out_dim} outputs, expected {env.N_ACTIONS}")
    return PsrlPolicy(g, q)


def _policy_from_args(cfg: RunConfig, args) -> PsrlPolicy:
    out = _out_dir(cfg, args)
    return load_policy(cfg, args.checkpoint_g or out / "g.mlp", args.checkpoint_q or out / "q.mlp")


def cmd_train(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg, args)
    tcfg = cfg.train_config(args.seed)
    log.info("training %s on %s (seed %d)", tcfg.variant, cfg.run.scenario, tcfg.seed)
    pol, train_log = train_pipeline(cfg.preset, tcfg)
    out.mkdir(parents=True, exist_ok=True)
    save_params(pol.g, out / "g.mlp")
    save_params(pol.q, out / "q.mlp")
    _write(out / "train_log.csv", train_log.to_csv())


def _seeds(cfg: RunConfig, args) -> tuple[int, ...]:
    return (args.seed,) if args.seed is not None else cfg.run.seeds


def aggregate_certificates(reports: list[dict[str, str]]) -> str:
    """Lower medians of eps_safety and explored nodes, so both stay observed values."""
    def index(label: str) -> int:
        return int(label.split("/")[0])

    denominators = {r["eps_safety"].split("/")[1] for r in reports}
    eps = statistics.median_low(index(r["eps_safety"]) for r in reports)
    nodes = statistics.median_low(int(r["nodes_explored"]) for r in reports)
    lines = [
        "certificate aggregate v1",
        f"runs = {len(reports)}",
        f"median_eps_safety = {eps}/{denominators.pop()}",
        f"median_nodes_explored = {nodes}",
        f"truncated_runs = {sum(r['truncated'] == 'true' for r in reports)}",
        f"nominal_unsafe_runs = {sum(r['nominal_unsafe'] == 'true' for r in reports)}",
    ]
    return "\n".join(lines) + "\n"


def cmd_certify(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg, args)
    pol = _policy_from_args(cfg, args)
    reports, timing = [], ["seed,wall_time_s"]
    for seed in _seeds(cfg, args):
        cert = certify(pol, env.reset(cfg.preset, seed), cfg.cert.tv, cfg.grid, cfg.cert.budget,
                       cfg.run.norm, cfg.smoothing if cfg.run.norm == "l2" else None)
        text = cert.to_report()
        _write(out / f"cert_seed{seed}.txt", text)
        reports.append(parse_report(text))
        timing.append(f"{seed},{cert.wall_time:.3f}")
        log.info("seed %d: eps_safety %s (%d nodes)", seed, cert.label, cert.nodes_explored)
    _write(out / "certificates.txt", aggregate_certificates(reports))
    _write(out / "timing.txt", "\n".join(timing) + "\n")


def cmd_eval(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg, args)
    pol = _policy_from_args(cfg, args)
    seeds = (args.seed,) if args.seed is not None else cfg.eval.seeds
    rep = evaluate(pol, cfg.preset, seeds, cfg.eval.eps_for_mse)
    _write(out / "eval.csv", ",".join(rep.CSV_FIELDS) + "\n" + rep.csv_row() + "\n")
    _write(out / "eval.txt", rep.summary())


def _attack_cfg(cfg: RunConfig, eps: float) -> AttackConfig:
    a = cfg.attack
    return AttackConfig(eps, cfg.run.norm, a.pgd_steps, a.step_size, a.restarts, a.seed)


def cmd_attack(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg, args)
    pol = _policy_from_args(cfg, args)
    grid = cfg.grid
    seeds = [args.seed] if args.seed is not None else list(cfg.eval.seeds[:cfg.attack.episodes])
    rows = ["eps,episodes,attack_success_rate"]
    for k in range(min(cfg.attack.sweep_max, grid.max_index) + 1):
        hits = [attacked_rollout(pol, cfg.preset, s, _attack_cfg(cfg, grid.value(k)),
                                 smoothing=cfg.smoothing).unsafe_reached for s in seeds]
        rows.append(f"{grid.label(k)},{len(hits)},{'%.10g' % (sum(hits) / len(hits))}")
    _write(out / "attack.csv", "\n".join(rows) + "\n")

    # certificates cover tv states, i.e. tv - 1 attacked transitions from the certified start
    certified = ["seed,eps,unsafe_reached"]
    for seed in _seeds(cfg, args):
        path = out / f"cert_seed{seed}.txt"
        if not path.exists():
            continue
        rep = parse_report(path.read_text(encoding="utf-8"))
        if rep["nominal_unsafe"] == "true":
            continue  # no budget is certified for this start
        k = int(rep["eps_safety"].split("/")[0])
        res = attacked_rollout(pol, cfg.preset, seed, _attack_cfg(cfg, grid.value(k)),
                               steps=int(rep["horizon"]) - 1, smoothing=cfg.smoothing)
        certified.append(f"{seed},{rep['eps_safety']},{str(res.unsafe_reached).lower()}")
    if len(certified) > 1:
        _write(out / "attack_certified.csv", "\n".join(certified) + "\n")


def cmd_report(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg, args)
    parts = [f"run: {cfg.run.scenario} / {cfg.run.variant} / {cfg.run.norm}"]
    for name in ("certificates.txt", "eval.txt", "attack.csv", "attack_certified.csv"):
        path = out / name
        if path.exists():
            parts.append(f"--- {name}\n" + path.read_text(encoding="utf-8").rstrip())
    text = "\n".join(parts) + "\n"
    _write(out / "report.txt", text)
    sys.stdout.write(text)


COMMANDS = {
    "train": cmd_train,
    "certify": cmd_certify,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psrlcert", description="Train and certify partially-supervised policies.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in COMMANDS:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, help="training seed for train; single start-state seed otherwise")
        p.add_argument("--out", help="output directory (default: run.out)")
        p.add_argument("--checkpoint-g", help="MLPv1 file for g (default: <out>/g.mlp)")
        p.add_argument("--checkpoint-q", help="MLPv1 file for q (default: <out>/q.mlp)")
        p.add_argument("--norm", choices=("linf", "l2"))
        p.add_argument("--tv", type=int, help="verification horizon in states")
        p.add_argument("--budget", type=int, help="node budget of the certification search")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, run={"norm": args.norm} if args.norm else {},
                             cert={k: v for k, v in (("tv", args.tv), ("budget", args.budget)) if v is not None})
        if cfg.cert.tv < 1:
            raise ConfigError("--tv must be at least 1")
        COMMANDS[args.verb](cfg, args)
    except (ConfigError, ShapeError, WeightFileError, TrainingFault, OSError, ValueError) as exc:
        print(f"psrlcert {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
