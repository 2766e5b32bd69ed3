"""Command-line entry point: train, evaluate, ablation, replay, encounter."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import POLICIES, dump_config, load_config
from .harness.ablation import ablation
from .harness.episode import EpisodeLog
from .harness.replay import ReplayError, replay
from .harness.scenario import scripted_encounter
from .harness.training import (LEARNED, checkpoint_ref, evaluate, load_policy, save_policy,
                               train)


def _train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(ep, ep_log, report):
        logging.info("episode %d: %s, mean reward %.4f", ep, ep_log.result["outcome"],
                     report.reward_mean[-1])

    res = train(cfg, args.policy, args.team_size, args.seed, args.episodes, progress)
    ckpt = out / f"{args.policy}_V{args.team_size}_seed{args.seed}.ckpt"
    save_policy(ckpt, args.policy, res.model, cfg, args.team_size, args.seed)
    res.report.write_csv(out)
    dump_config(cfg, out / "config.yaml")
    print(f"checkpoint: {ckpt}")
    print(f"training win rate: {res.report.win_curve[-1] if res.report.win_curve else 0.0:.3f}")
    return 0


def _evaluate(args) -> int:
    if args.checkpoint:
        cfg, policy, model, meta = load_policy(args.checkpoint)
        team_size = args.team_size or meta["team_size"]
        ref = checkpoint_ref(args.checkpoint)
    else:
        cfg, policy, model, ref = load_config(args.config), args.policy, None, None
        team_size = args.team_size or 3
    if args.workers is not None:
        cfg = cfg.replace(harness={"workers": args.workers})
    report = evaluate(cfg, policy, team_size, args.seed, args.games, model, ref)
    t = report.tally()
    print(f"{policy} V{team_size}: {t.wins} wins, {t.losses} losses, {t.draws} draws "
          f"over {t.games} games; win rate {t.win_rate:.3f}")
    if args.out:
        for p in report.write_csv(args.out):
            print(f"wrote {p}")
    return 0


def _ablation(args) -> int:
    cfg = load_config(args.config)

    def progress(run):
        print(f"{run.policy} V{run.team_size} seed {run.seed}: win rate {run.report.win_rate:.3f}",
              flush=True)

    res = ablation(cfg, args.out, train_missing=not args.no_train,
                   checkpoint_dir=args.checkpoints, progress=progress)
    for n in cfg.harness.team_sizes:
        for policy in cfg.harness.red_policies:
            print(f"V{n} {policy}: mean win rate {res.mean_win_rate(policy, n):.3f}")
    return 0


def _replay(args) -> int:
    log = EpisodeLog.read(args.log)
    try:
        res = replay(log)
    except ReplayError as exc:
        print(f"cannot replay: {exc}", file=sys.stderr)
        return 2
    if res.matched:
        print(f"replay identical: {res.lines} lines")
        return 0
    print(f"replay diverged at line {res.first_mismatch}\n  log:    {res.expected}\n  replay: {res.got}")
    return 1


def _scenario(args) -> int:
    if args.checkpoint:
        cfg, policy, model, _ = load_policy(args.checkpoint)
        ref = checkpoint_ref(args.checkpoint)
    else:
        cfg = load_config(args.config)
        policy, ref = "PFSM-DRL", None
        print("no checkpoint given; training PFSM-DRL at V3 first", flush=True)
        model = train(cfg, policy, 3, args.seed).model
    log, report = scripted_encounter(cfg, args.seed, model, policy, ref)
    print("\n".join(report.lines()))
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        log.write(path)
        print(f"log written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfsm-swarm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a learned red policy against the blue team")
    t.add_argument("--config", help="YAML configuration (defaults if omitted)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--policy", choices=LEARNED, default="PFSM-DRL")
    t.add_argument("--team-size", type=int, default=3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--episodes", type=int, help="override the configured episode count")
    t.set_defaults(func=_train)

    e = sub.add_parser("evaluate", help="play evaluation games and report the win rate")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="trained policy checkpoint")
    src.add_argument("--policy", choices=[q for q in POLICIES if q not in LEARNED] + ["Oracle"],
                     help="evaluate a rule-based red policy instead")
    e.add_argument("--config", help="YAML configuration for --policy")
    e.add_argument("--games", type=int, default=50)
    e.add_argument("--team-size", type=int)
    e.add_argument("--seed", type=int, default=0, help="evaluation seed stream")
    e.add_argument("--workers", type=int, help="parallel game processes (0: one per CPU)")
    e.add_argument("--out", help="directory for the games CSV")
    e.set_defaults(func=_evaluate)

    a = sub.add_parser("ablation", help="every red policy at every team size and seed")
    a.add_argument("--config", help="YAML configuration")
    a.add_argument("--out", default="results/ablation")
    a.add_argument("--checkpoints", help="checkpoint directory (default: OUT/checkpoints)")
    a.add_argument("--no-train", action="store_true", help="fail instead of training missing policies")
    a.set_defaults(func=_ablation)

    r = sub.add_parser("replay", help="re-simulate a logged episode and compare")
    r.add_argument("--log", required=True)
    r.set_defaults(func=_replay)

    s = sub.add_parser("encounter", help="two learned reds against one FSM blue")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint", help="trained PFSM-DRL checkpoint (trains one if omitted)")
    s.add_argument("--config", help="YAML configuration when training")
    s.add_argument("--out", help="where to write the episode log")
    s.set_defaults(func=_scenario)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
