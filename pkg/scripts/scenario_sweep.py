"""Run the scripted two-on-one encounter over many seeds and summarize it.

    python3 scripts/scenario_sweep.py --checkpoint results/ckpt/PFSM-DRL_V3_seed0.ckpt --seeds 20
"""
import argparse
from pathlib import Path

import numpy as np

from pfsm_swarm.harness.scenario import scripted_encounter
from pfsm_swarm.harness.training import checkpoint_ref, load_policy


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--logs", help="directory for the per-seed episode logs")
    args = p.parse_args()

    cfg, policy, model, _ = load_policy(args.checkpoint)
    ref = checkpoint_ref(args.checkpoint)
    reports = []
    for seed in range(args.seeds):
        log, rep = scripted_encounter(cfg, seed, model, policy, ref)
        reports.append(rep)
        print(f"seed {seed:3d}  {rep.outcome:8s} red jitter {rep.red_jitter:7.2f}  "
              f"blue jitter {rep.blue_jitter:3d}  red deadlocks {rep.red_deadlock}  "
              f"{'reproducing' if rep.reproducing else ''}")
        if args.logs:
            Path(args.logs).mkdir(parents=True, exist_ok=True)
            log.write(Path(args.logs) / f"scenario_seed{seed}.jsonl")
    print(f"mean jitter per agent: red {np.mean([r.red_jitter for r in reports]):.2f}, "
          f"blue {np.mean([r.blue_jitter for r in reports]):.2f}; "
          f"red deadlocks {sum(r.red_deadlock for r in reports)}; "
          f"reproducing {sum(r.reproducing for r in reports)}/{len(reports)}")


if __name__ == "__main__":
    main()
