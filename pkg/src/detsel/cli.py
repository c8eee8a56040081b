"""Command-line entry point: ``detsel <subcommand> ...``.

Failures print a single ``error: <kind>: <message>`` line on stderr and exit
nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .features import FEATURE_NAMES, mifs_rank, read_dataset, write_dataset
from .model import load_model, save_model
from .pipeline import PipelineConfig, calibrate_stage, retrain_stage, train_stage
from .sim import REPORT_COLUMNS, Policy, load_config, point_row, rows_to_csv, generate_dataset, simulate

log = logging.getLogger("detsel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"--{n} is required for {args.cmd}")


def cmd_generate(args):
    _need(args, "config", "out")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    ds, stats = generate_dataset(cfg)
    write_dataset(args.out, ds)
    print(f"generated total={stats.total} retained={stats.retained} excluded={stats.excluded} "
          f"out={args.out}")


def cmd_rank(args):
    _need(args, "dataset")
    ds = read_dataset(args.dataset)
    if len(ds) == 0:
        raise ValueError(f"dataset {args.dataset} is empty")
    rk = mifs_rank(ds.features, ds.z)
    rep = {
        "ranking": rk.ranked_names,
        "relevance": {FEATURE_NAMES[i]: float(rk.relevance[i]) for i in range(len(FEATURE_NAMES))},
        "selected": [FEATURE_NAMES[i] for i in rk.top(args.top)],
    }
    best = max(rep["relevance"], key=rep["relevance"].get)
    rep["most_relevant"] = best
    text = _json(rep)
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)


def _pipeline_config(args) -> PipelineConfig:
    kw = {"top_k": args.top, "n_max": args.n_max, "holdout": args.holdout,
          "max_iter": args.max_iter, "activation": args.activation}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.gamma is not None:
        kw["gamma"] = args.gamma
    if args.merge == "none":
        kw["merge_from"] = kw["merge_to"] = 0
    else:
        try:
            kw["merge_from"], kw["merge_to"] = (int(v) for v in args.merge.split(":"))
        except ValueError:
            raise UsageError(f"--merge expects FROM:TO or none, got {args.merge!r}") from None
    return PipelineConfig(**kw)


def cmd_train(args):
    _need(args, "dataset", "out")
    ds = read_dataset(args.dataset)
    model, ranking, res = train_stage(ds, _pipeline_config(args))
    save_model(args.out, model)
    _write(str(args.out) + ".trace.json", _json({"cost": [float(c) for c in res.trace],
                                                  "events": list(res.events)}))
    names = [FEATURE_NAMES[i] for i in model.scaler.selected]
    print(f"trained features={','.join(names)} iterations={res.iterations} "
          f"cost={res.trace[-1]!r} out={args.out}")


def cmd_calibrate(args):
    _need(args, "dataset", "model", "out")
    ds = read_dataset(args.dataset)
    model, report = calibrate_stage(ds, load_model(args.model), args.gamma)
    save_model(args.out, model)
    _write(str(args.out) + ".calibration.json", _json(report))
    print("calibrated delta=" + ",".join(repr(float(d)) for d in model.margins.delta)
          + f" out={args.out}")


def cmd_retrain(args):
    _need(args, "dataset", "model", "out")
    ds = read_dataset(args.dataset)
    model, res, _ = retrain_stage(ds, load_model(args.model))
    save_model(args.out, model)
    _write(str(args.out) + ".trace.json", _json({"cost": [float(c) for c in res.trace],
                                                  "events": list(res.events)}))
    print(f"retrained iterations={res.iterations} margin_free={model.margin_free} out={args.out}")


def cmd_simulate(args):
    _need(args, "config")
    cfg = load_config(args.config)
    over = {}
    if args.policy is not None:
        over["policy"] = args.policy
    elif args.model is not None:
        over["policy"] = f"dynamic:{args.model}"
    if args.seed is not None:
        over["seed"] = args.seed
    if over:
        cfg = cfg.replace(**over)
    pol = Policy.parse(cfg.policy)
    if pol.uses_mlp and not Path(pol.model_path).exists():
        raise FileNotFoundError(f"model file not found: {pol.model_path}")
    rep = simulate(cfg)
    out = args.out or cfg.out
    if out:
        _write(str(out) + ".json", rep.to_json())
        _write(str(out) + ".csv", rep.to_csv())
    sys.stdout.write(rep.to_csv())


def cmd_report(args):
    if not args.reports:
        raise UsageError("report needs at least one report file")
    rows = []
    for path in args.reports:
        d = json.loads(Path(path).read_text())
        if not isinstance(d, dict) or set(d) != {"config", "per_snr", "totals"}:
            raise ValueError(f"{path}: not a simulation report")
        for p in d["per_snr"]:
            try:
                rows.append(point_row(p))
            except (KeyError, TypeError):
                raise ValueError(f"{path}: per_snr entry does not match the report schema") from None
    rows.sort(key=lambda r: (r[0], r[1]))
    text = rows_to_csv(rows)
    assert next(csv.reader(io.StringIO(text))) == list(REPORT_COLUMNS)
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)


COMMANDS = {
    "generate": cmd_generate, "rank": cmd_rank, "train": cmd_train, "calibrate": cmd_calibrate,
    "retrain": cmd_retrain, "simulate": cmd_simulate, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="detsel", description="MLP-based MIMO detector selection toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--dataset")
        s.add_argument("--model")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--gamma", type=float)
        s.add_argument("--policy")
        if name in ("rank", "train"):
            s.add_argument("--top", type=int, default=3, help="number of selected features")
        if name == "train":
            s.add_argument("--n-max", type=int, default=20_000)
            s.add_argument("--holdout", type=float, default=0.1)
            s.add_argument("--max-iter", type=int, default=500)
            s.add_argument("--activation", choices=("exact", "pwl"), default="exact")
            s.add_argument("--merge", default="3:4", help="class merge FROM:TO, or none")
        if name == "report":
            s.add_argument("reports", nargs="*")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        COMMANDS[args.cmd](args)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001 - every failure becomes one line
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
