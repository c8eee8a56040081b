"""End-to-end run: generate a training set, train / calibrate / retrain the
selector, then compare the dynamic policy with static DR-ML on paired seeds.

    python scripts/run_pipeline.py --workdir runs/demo --eval-snr 51

Defaults follow the acceptance run: training SNRs 30..51 dB, no class merge
and gamma = 1e-5 (see README for why the uncoded target needs them).
"""

import argparse
import json
import logging
import time
from pathlib import Path

from detsel.features import read_dataset, write_dataset
from detsel.model import save_model
from detsel.pipeline import PipelineConfig, calibrate_stage, retrain_stage, train_stage
from detsel.sim import SimConfig, parse_snr_list, generate_dataset, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="runs/demo")
    ap.add_argument("--modulation", type=int, default=8)
    ap.add_argument("--train-snr", default="30:51:3")
    ap.add_argument("--train-blocks", type=int, default=200)
    ap.add_argument("--eval-snr", default="51")
    ap.add_argument("--eval-blocks", type=int, default=500)
    ap.add_argument("--n-max", type=int, default=20_000)
    ap.add_argument("--gamma", type=float, default=1e-5)
    ap.add_argument("--merge", default="none", help="FROM:TO or none")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--skip-drml", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    wd = Path(args.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ds_path = wd / "train.csv"
    if ds_path.exists():
        ds = read_dataset(ds_path)
    else:
        gcfg = SimConfig(modulation=args.modulation, snr_db=parse_snr_list(args.train_snr),
                         blocks=args.train_blocks, res_per_block=1024, seed=args.seed + 1000)
        ds, stats = generate_dataset(gcfg)
        write_dataset(ds_path, ds)
    print(f"dataset: {len(ds)} samples, classes {ds.class_counts().tolist()} "
          f"({time.perf_counter() - t0:.0f} s)")

    merge = (0, 0) if args.merge == "none" else tuple(int(v) for v in args.merge.split(":"))
    pcfg = PipelineConfig(n_max=args.n_max, gamma=args.gamma, seed=args.seed,
                          merge_from=merge[0], merge_to=merge[1])
    m1, ranking, _ = train_stage(ds, pcfg)
    print("ranking:", ranking.ranked_names)
    m2, cal = calibrate_stage(ds, m1)
    print("margins:", [round(d, 3) for d in m2.margins.delta], "under:", cal["recount"])
    m3, _, zeta = retrain_stage(ds, m2)
    for name, m in (("theta1", m1), ("theta2", m2), ("theta3", m3)):
        save_model(wd / f"{name}.json", m)
    print("relabel counts:", m3.metadata["relabel_counts"])

    ecfg = SimConfig(modulation=args.modulation, snr_db=parse_snr_list(args.eval_snr),
                     blocks=args.eval_blocks, res_per_block=1024, seed=args.seed)
    policies = ["dynamic:" + str(wd / "theta3.json"), "twostage:" + str(wd / "theta2.json"), "genie"]
    if not args.skip_drml:
        policies.append("static:5")
    summary = {}
    for pol in policies:
        rep = simulate(ecfg.replace(policy=pol))
        (wd / f"sim_{pol.split(':')[0]}.json").write_text(rep.to_json())
        for p in rep.points:
            summary.setdefault(str(p.snr_db), {})[pol.split(":")[0]] = {
                "block_errors": p.block_errors, "re_errors": p.re_errors,
                "avg_ed": round(p.avg_ed_per_layer, 3),
                "util": [round(u, 4) for u in p.utilization]}
    print(json.dumps(summary, indent=1))
    print(f"total {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
