"""Command line entry point (``fairsurv``).

Every subcommand writes its outputs under ``--out`` and prints the written
paths as JSON on stdout. Failures exit nonzero with ``{"error", "message"}``
JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .bias import audit
from .core import build_time_grid, kaplan_meier_censoring, read_csv, write_csv
from .fairness import ALGORITHMS, FairnessConfig, train_fair
from .metrics import default_integration_range, evaluate
from .models import HEAD_MODES, TrainConfig, load_model, save_model, train
from .scm import SCMConfig, generate, save_latent


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _out(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_rows(rows, out, stem, fmt, title=""):
    path = os.path.join(out, stem + harness._EXT[fmt])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(harness.render_rows(rows, fmt, title))
    return path


def _columns(text):
    return None if not text else [int(c) for c in text.split(",")]


def cmd_generate(args):
    blob = _load_json(args.config)
    n = args.n or blob.pop("n", 1000)
    cfg = SCMConfig.from_dict(blob.get("scm", blob))
    data, latent = generate(cfg, n, args.seed)
    out = _out(args)
    paths = [os.path.join(out, "data.csv"), os.path.join(out, "latent.json"), os.path.join(out, "scm.json")]
    write_csv(data, paths[0])
    save_latent(latent, paths[1])
    with open(paths[2], "w", encoding="utf-8") as fh:
        json.dump({"scm": cfg.to_dict(), "n": n, "seed": args.seed}, fh, indent=2)
    return paths


def cmd_shift(args):
    spec = _load_json(args.config)
    for name in ("kind", "target", "strength"):
        if getattr(args, name) is not None:
            spec[name] = getattr(args, name)
    if args.columns:
        spec["columns"] = _columns(args.columns)
    shift = harness.ShiftSpec(**spec)
    data = read_csv(args.input)
    path = os.path.join(_out(args), "shifted.csv")
    write_csv(shift.apply(data, args.seed), path)
    return [path]


def cmd_train(args):
    blob = _load_json(args.config)
    tc = TrainConfig(**{**blob.get("train", {}), "seed": args.seed})
    data = read_csv(args.input)
    val = read_csv(args.val, data.attribute_domain) if args.val else None
    grid = build_time_grid(data.time, args.interval_count)
    data = harness.clip_to_grid(data, grid)
    val = harness.clip_to_grid(val, grid) if val is not None else None
    if args.algorithm == harness.BASE:
        model, trace = train(args.model, data, val, grid, tc)
    else:
        model, trace = train_fair(args.model, data, val, grid, tc,
                                  FairnessConfig(args.algorithm, **blob.get("fairness", {})))
    out = _out(args)
    paths = [os.path.join(out, "model.json"), os.path.join(out, "trace.json")]
    save_model(model, paths[0])
    with open(paths[1], "w", encoding="utf-8") as fh:
        json.dump({"train_loss": trace.train_loss, "val_loss": trace.val_loss, "best_epoch": trace.best_epoch},
                  fh, indent=2)
    return paths


def cmd_evaluate(args):
    model = load_model(args.model)
    test = read_csv(args.input)
    ref = read_csv(args.train) if args.train else test
    censoring = kaplan_meier_censoring(ref)
    integration = default_integration_range(ref.time)
    curves = model.predict_survival_curve(test.features)
    rep = evaluate(curves, test, censoring, model.grid, integration, bootstrap=args.bootstrap, seed=args.seed)
    out = _out(args)
    if args.format == "json":
        path = os.path.join(out, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        return [path]
    return [_write_rows(rep.rows(), out, "report", args.format, "evaluation")]


def cmd_audit(args):
    data = read_csv(args.input)
    prof = audit(data, _columns(args.columns), args.bins, args.projections, args.seed)
    out = _out(args)
    if args.format == "json":
        path = os.path.join(out, "bias.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(prof.to_json())
        return [path]
    return [_write_rows([prof.row()], out, "bias", args.format, "bias profile")]


def cmd_sweep(args):
    blob = _load_json(args.config)
    if args.seed_given:
        blob["seeds"] = [args.seed]
    cfg = harness.ExperimentConfig.from_dict(blob)
    out = args.out or cfg.out
    if not out:
        raise UsageError("sweep needs --out or an 'out' entry in the config")
    records = harness.run_experiment(cfg, out)
    failed = [r.id for r in records if not r.ok]
    return {"records": len(records), "selected": len(harness.selected(records)), "failed": failed,
            "out": out}


def cmd_stats(args):
    records = harness.load_records(args.input)
    out = _out(args)
    paths = [_write_rows(harness.compare_groups(records, args.metric), out, "group_tests", args.format,
                         "group comparison")]
    try:
        ranking = harness.rank_algorithms(records, args.metric)
    except ValueError as exc:
        ranking = {"skipped": str(exc)}
    for name, blob in (("ranking.json", ranking), ("cd_diagram.json", ranking.get("cd_diagram", ranking))):
        paths.append(os.path.join(out, name))
        with open(paths[-1], "w", encoding="utf-8") as fh:
            json.dump(blob, fh, indent=2)
    return paths


def cmd_report(args):
    return harness.emit_report(harness.load_records(args.input), args.format, _out(args))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=harness.FORMATS, default="json")

    p = _Parser(prog="fairsurv", description="Fairness experiments for discrete-time survival models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="draw a synthetic dataset")
    g.add_argument("--n", type=int)
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("shift", parents=[common], help="corrupt one group of a dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--kind", choices=harness.SHIFT_KINDS)
    s.add_argument("--target")
    s.add_argument("--strength", type=float)
    s.add_argument("--columns", help="comma separated feature columns for the x shift")
    s.set_defaults(fn=cmd_shift)

    t = sub.add_parser("train", parents=[common], help="fit a base or fair model")
    t.add_argument("--input", required=True, help="training CSV")
    t.add_argument("--val", help="validation CSV")
    t.add_argument("--model", choices=sorted(HEAD_MODES), default="deephit")
    t.add_argument("--algorithm", choices=(harness.BASE,) + ALGORITHMS, default=harness.BASE)
    t.add_argument("--interval-count", type=int, default=10)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="score a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True, help="test CSV")
    e.add_argument("--train", help="training CSV for the censoring curve and integration range")
    e.add_argument("--bootstrap", type=int, default=0)
    e.set_defaults(fn=cmd_evaluate)

    a = sub.add_parser("audit", parents=[common], help="bias profile of a dataset")
    a.add_argument("--input", required=True)
    a.add_argument("--columns")
    a.add_argument("--bins", type=int, default=10)
    a.add_argument("--projections", type=int, default=100)
    a.set_defaults(fn=cmd_audit)

    w = sub.add_parser("sweep", parents=[common], help="run or resume an experiment")
    w.set_defaults(fn=cmd_sweep)

    st = sub.add_parser("stats", parents=[common], help="group and algorithm tests over a sweep")
    st.add_argument("--input", required=True, help="sweep output directory")
    st.add_argument("--metric", default="ctd")
    st.set_defaults(fn=cmd_stats)

    r = sub.add_parser("report", parents=[common], help="summary tables of a sweep")
    r.add_argument("--input", required=True, help="sweep output directory")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.seed_given = args.seed is not None
        args.seed = 0 if args.seed is None else args.seed
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        result = args.fn(args)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result if isinstance(result, dict) else {"written": result}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
