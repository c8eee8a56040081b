"""Sweep static detectors and a trained selector over SNR on paired seeds and
write one merged CSV (one row per policy and SNR).

    python scripts/snr_sweep.py --model runs/demo/theta3.json --snr 46:54:2 --blocks 500
"""

import argparse
import logging
from pathlib import Path

from detsel.sim import SimConfig, parse_snr_list, rows_to_csv, point_row, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", help="retrained model for the dynamic policy")
    ap.add_argument("--snr", default="46:54:2")
    ap.add_argument("--blocks", type=int, default=500)
    ap.add_argument("--modulation", type=int, default=8)
    ap.add_argument("--channel", default="iid")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--static", default="1,2,3,4,5", help="static detectors to include")
    ap.add_argument("--out", default="runs/sweep.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    base = SimConfig(modulation=args.modulation, snr_db=parse_snr_list(args.snr),
                     channel=args.channel, blocks=args.blocks, seed=args.seed)
    policies = [f"static:{d}" for d in args.static.split(",") if d]
    if args.model:
        policies.append(f"dynamic:{args.model}")
    rows = []
    for pol in policies:
        rows += [point_row(p.as_dict()) for p in simulate(base.replace(policy=pol)).points]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(rows_to_csv(rows))
    print(Path(args.out).read_text())


if __name__ == "__main__":
    main()
