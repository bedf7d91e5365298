"""Command-line interface: ``ppstl {train,check,evaluate,monitor,synth,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from ppstl import formula as fm
from ppstl.bench import MODES, STRATEGIES, BenchSpec, format_rows, run_bench, write_rows
from ppstl.engine import monitor, robustness_of
from ppstl.errors import PpstlError, SynthesisError, TraceFormatError
from ppstl.evaluate import curve, evaluate, verdict_rows, write_curve_csv
from ppstl.formula import Fragment
from ppstl.parser import format_number, parse
from ppstl.synth import synth_generate, write_metadata
from ppstl.trace import Dataset, load_csv, normalize_apply, write_csv
from ppstl.trainer import config_to_dict, load_config, load_norm, load_pool, save_norm, save_pool, train


class UsageError(Exception):
    pass


def _fmt(v: float) -> str:
    if v == np.inf:
        return "inf"
    if v == -np.inf:
        return "-inf"
    return format_number(float(v))


def _vector(vals) -> str:
    return "[" + ", ".join(_fmt(v) for v in vals) + "]"


def _load_data(path) -> Dataset:
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return load_csv(path)


def _load_pool(path):
    if not Path(path).is_file():
        raise UsageError(f"pool file not found: {path}")
    return load_pool(path)


def cmd_train(args) -> int:
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    data = _load_data(args.data)
    pool = _load_pool(args.pool) if args.pool else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    with log_path.open("w", encoding="utf-8") as log:
        def observe(rec):
            log.write(json.dumps({
                "epoch": rec.epoch,
                "batch": rec.batch,
                "pairs": [p.original.id for p in rec.pairs],
                "cut_lengths": [len(p) for p in rec.pairs],
                "generations": rec.result.generations,
                "hypervolume": rec.result.hv_history,
                "learned": [str(e.formula) for e in rec.entries],
            }) + "\n")
            print(f"epoch {rec.epoch} batch {rec.batch}: {len(rec.pairs)} pairs, "
                  f"{rec.result.generations} generations, {len(rec.entries)} formulas")

        result = train(data, pool, cfg, observer=observe)
    save_pool(result.pool, out / "pool.jsonl")
    save_norm(result.norm, result.names, out / "norm.json")
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n", encoding="utf-8")
    print(f"pool: {len(result.pool)} formulas -> {out / 'pool.jsonl'}")
    return 0


def cmd_check(args) -> int:
    data = _load_data(args.data)
    f = parse(args.formula, data.names)
    frag = fm.fragment_of(f)
    if args.at is None:
        at_last = frag == Fragment.PPSTL
    else:
        at_last = args.at == "last"
    for t in data.traces:
        rob = robustness_of(f, t, data.names)
        pos = len(t) - 1 if at_last else 0
        print(f"trace {t.id}")
        print(f"rob = {_vector(rob)}")
        print(f"check at {'last' if at_last else 'first'} position ({pos}): "
              f"{'true' if rob[pos] >= 0 else 'false'}")
        if frag in (Fragment.GPPSTL, Fragment.FPPSTL):
            mt = monitor(f, [t], data.names)[0]
            print("verdicts = [" + ", ".join(str(v) for v in mt.verdicts) + "]")
    return 0


def cmd_evaluate(args) -> int:
    pool = _load_pool(args.pool)
    data = _load_data(args.data)
    norm = None
    if args.norm:
        if not Path(args.norm).is_file():
            raise UsageError(f"normalization file not found: {args.norm}")
        norm, names = load_norm(args.norm)
        if names is not None and tuple(names) != tuple(data.names):
            raise TraceFormatError(f"normalization signals {list(names)} differ from data {list(data.names)}")
    rep = evaluate(pool, data, norm)
    m = rep.metrics
    print(f"P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f} FAR={m.far:.4f} MCC={m.mcc:.4f}")
    pre = "n/a" if rep.mean_preemptiveness is None else f"{rep.mean_preemptiveness:.3f} {rep.unit}s"
    print(f"confusion: {dataclasses.asdict(rep.confusion)}; mean preemptiveness: {pre}")
    if args.report:
        rep.write(args.report)
    if args.curve:
        write_curve_csv(curve(pool, data, norm), args.curve)
    if args.verdicts:
        with open(args.verdicts, "w", encoding="utf-8") as fh:
            fh.write("trace_id,position,verdict\n")
            for tid, i, v in verdict_rows(pool, data, norm):
                fh.write(f"{tid},{i},{v}\n")
    return 0


def cmd_monitor(args) -> int:
    pool = _load_pool(args.pool)
    data = _load_data(args.data)
    if args.norm:
        norm, _ = load_norm(args.norm)
        data = normalize_apply(norm, data)
    if not pool:
        return 0
    for tid, i, v in verdict_rows(pool, data, None):
        print(f"{tid} {i} {v}")
    return 0


def cmd_synth(args) -> int:
    planted = parse(args.planted)
    names = args.vars.split(",") if args.vars else None
    rng = np.random.default_rng(args.seed)
    data = synth_generate(planted, args.n_good, args.n_fail, args.len, rng, names=names)
    write_csv(data, args.out)
    write_metadata(args.out, planted, args.seed, n_good=args.n_good, n_fail=args.n_fail,
                   length=args.len, names=list(data.names))
    print(f"wrote {len(data)} traces to {args.out}")
    return 0


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_bench(args) -> int:
    strategies = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    spec = BenchSpec(args.mode, args.sweep, strategies, args.budget, args.reps,
                     base_length=args.base_length, seed=args.seed if args.seed is not None else 0,
                     pin_allocator=not args.no_pin_allocator)
    rows = run_bench(spec)
    print(format_rows(rows))
    if args.out:
        write_rows(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppstl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="learn a pool of safety formulas from labeled traces")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--pool", help="existing pool file to start from")
    t.add_argument("--out", default="ppstl-out", help="output directory")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("check", help="print robustness and verdicts of a formula on traces")
    c.add_argument("--formula", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--at", choices=("first", "last"))
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("evaluate", help="score a pool on labeled test traces")
    e.add_argument("--pool", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--norm")
    e.add_argument("--report")
    e.add_argument("--curve", help="CSV of metrics after each training checkpoint")
    e.add_argument("--verdicts", help="CSV dump of per-position verdicts")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("monitor", help="stream verdicts of a pool until the first alarm per trace")
    m.add_argument("--pool", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--norm")
    m.set_defaults(func=cmd_monitor)

    s = sub.add_parser("synth", help="generate a planted synthetic dataset")
    s.add_argument("--planted", required=True)
    s.add_argument("--n-good", type=int, required=True)
    s.add_argument("--n-fail", type=int, required=True)
    s.add_argument("--len", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vars", help="comma-separated signal names (default: those of the formula)")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="time all-prefix monitoring strategies")
    b.add_argument("--mode", choices=MODES, default="length")
    b.add_argument("--sweep", type=_int_list, required=True)
    b.add_argument("--strategies", default=",".join(STRATEGIES))
    b.add_argument("--budget", type=float, default=180.0)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--base-length", type=int, default=1000)
    b.add_argument("--seed", type=int)
    b.add_argument("--no-pin-allocator", action="store_true",
                   help="leave the C allocator at its defaults (timings may jump with array size)")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except BrokenPipeError:
        sys.stderr.close()
        return 0
    except SynthesisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, PpstlError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
