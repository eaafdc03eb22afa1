"""Command-line entry point: sdgzsl <command> [options].

Exit codes: 0 success, 1 usage / I-O / validation error, 2 a check command
(gradcheck, tc-bench) ran but did not meet its threshold.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from sdgzsl.config import (
    ABLATIONS,
    SYNTHETIC_PRESET,
    EvalConfig,
    TrainConfig,
    apply_ablation,
    apply_override,
    from_dict,
)
from sdgzsl.data import SyntheticSpec, generate_synthetic, load_bundle, save_bundle
from sdgzsl.errors import ConfigError, SDGZSLError
from sdgzsl.evaluation import DEFAULT_RATIOS, REPRESENTATIONS, evaluate_gzsl, retrieval_map
from sdgzsl.tensor import Rng, precision

log = logging.getLogger("sdgzsl")

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2
SECTIONS = ("train", "synthetic", "eval")
TC_REL_TOLERANCE = 0.15
TC_ZERO_TOLERANCE = 0.05


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------- run config


def load_run_config(path) -> dict:
    """Read a run-config JSON file; only the train / synthetic / eval / out keys are allowed."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS) - {"out"})
    if unknown:
        raise ConfigError(f"unknown run-config keys: {', '.join(unknown)}")
    return doc


def resolve(args, base_train: dict | None = None) -> dict:
    doc = load_run_config(getattr(args, "config", None))
    if base_train:
        doc["train"] = {**base_train, **doc.get("train", {})}
    for assignment in getattr(args, "set", None) or []:
        if assignment.split("=", 1)[0].split(".")[0] not in SECTIONS:
            raise ConfigError(f"override {assignment!r} must start with one of {', '.join(SECTIONS)}")
        apply_override(doc, assignment)
    return doc


def dump_config(resolved: dict, out_dir: Path | None) -> None:
    text = json.dumps(resolved, indent=2, sort_keys=True) + "\n"
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.json").write_text(text, encoding="utf-8")
    log.info("resolved config:\n%s", text.rstrip())


def _eval_config(doc: dict, seed: int | None) -> EvalConfig:
    cfg = from_dict(EvalConfig, doc.get("eval"))
    return dataclasses.replace(cfg, seed=seed) if seed is not None else cfg


# ----------------------------------------------------------------- commands


def cmd_synth_data(args) -> int:
    doc = resolve(args)
    spec_dict = dict(doc.get("synthetic", {}))
    if args.spec:
        spec_dict = {**json.loads(Path(args.spec).read_text(encoding="utf-8")), **spec_dict}
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    spec = from_dict(SyntheticSpec, spec_dict).validate()
    out = Path(args.out)
    bundle, truth = generate_synthetic(spec)
    manifest = save_bundle(bundle, out, extra={f"truth/{k}": v for k, v in truth.items()})
    dump_config({"synthetic": spec.to_dict(), "out": str(out)}, out)
    print(f"wrote {manifest} ({bundle.features.shape[0]} rows, {bundle.seen_classes.size} seen / "
          f"{bundle.unseen_classes.size} unseen classes)")
    return EXIT_OK


def _train_config(args, bundle, resume_cfg: TrainConfig | None) -> tuple[TrainConfig, dict]:
    if resume_cfg is not None:
        base = resume_cfg.to_dict()
    elif args.preset == "synthetic":
        base = dict(SYNTHETIC_PRESET)
    else:
        base = {}
    doc = resolve(args, base)
    train_dict = doc.setdefault("train", {})
    train_dict.setdefault("feature_dim", bundle.feature_dim)
    train_dict.setdefault("attr_dim", bundle.attr_dim)
    if args.seed is not None:
        train_dict["seed"] = args.seed
    if args.epochs is not None:
        train_dict["epochs"] = args.epochs
    cfg = TrainConfig.from_dict(train_dict)
    if args.ablation:
        cfg = apply_ablation(cfg, args.ablation)
    cfg.validate()
    doc["train"] = cfg.to_dict()
    return cfg, doc


def cmd_train(args) -> int:
    from sdgzsl.trainer import TrainLog, load_checkpoint, save_checkpoint, train

    bundle = load_bundle(args.data)
    out = Path(args.out)
    state = load_checkpoint(args.resume) if args.resume else None
    cfg, doc = _train_config(args, bundle, state.cfg if state is not None else None)
    doc.update(data=str(args.data), ablation=args.ablation or "full", resume=args.resume, out=str(out))
    dump_config(doc, out)

    ckpt_path = out / "checkpoint.sdt"
    log_path = out / "train_log.csv"
    history = TrainLog.read_csv(log_path) if state is not None and log_path.exists() else TrainLog()
    if state is not None:
        history.records = [r for r in history.records if r.epoch < state.epoch]

    def on_epoch(model, rec):
        history.append(rec)
        if args.checkpoint_every and (model.epoch % args.checkpoint_every == 0 or model.epoch == cfg.epochs):
            save_checkpoint(model, ckpt_path)
            history.write_csv(log_path)

    model, _ = train(bundle, cfg, state, on_epoch=on_epoch)
    save_checkpoint(model, ckpt_path)
    history.write_csv(log_path)
    print(f"trained to epoch {model.epoch}; checkpoint {ckpt_path}, log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from sdgzsl.trainer import load_checkpoint

    bundle = load_bundle(args.data)
    model = load_checkpoint(args.ckpt)
    doc = resolve(args)
    ecfg = _eval_config(doc, args.seed)
    ratios = _parse_floats(args.ratios)
    out = Path(args.out)
    dump_config({"eval": ecfg.to_dict(), "train": model.cfg.to_dict(), "data": str(args.data),
                 "ckpt": str(args.ckpt), "rep": args.rep, "ratios": list(ratios), "out": str(out)}, out)
    report = evaluate_gzsl(model, bundle, ecfg, args.rep, ratios)
    report.write_json(out / "report.json")
    report.write_confusion_csv(out / "confusion_counts.csv", out / "confusion_percent.csv")
    print(f"rep={report.representation} U={report.U:.2f} S={report.S:.2f} H={report.H:.2f} T1={report.T1:.2f}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    from sdgzsl.trainer import load_checkpoint

    bundle = load_bundle(args.data)
    model = load_checkpoint(args.ckpt)
    doc = resolve(args)
    ecfg = _eval_config(doc, args.seed)
    ratios = _parse_floats(args.ratios)
    n_syn = ecfg.n_syn or model.cfg.n_syn
    out = Path(args.out) if args.out else None
    dump_config({"eval": ecfg.to_dict(), "data": str(args.data), "ckpt": str(args.ckpt), "rep": args.rep,
                 "ratios": list(ratios), "n_syn": n_syn, "out": args.out}, out)
    with precision(model.cfg.precision):
        maps = retrieval_map(model, bundle, ratios, n_syn, Rng(ecfg.seed, "retrieval"), args.rep)
    rows = [(f"{r:g}", f"{100.0 * m:.2f}") for r, m in maps.items()]
    _print_table(("ratio", "mAP"), rows)
    if out is not None:
        _write_csv(out / "retrieval.csv", ("ratio", "mAP"), rows)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from sdgzsl.gradsuite import run_gradient_suite

    out = Path(args.out) if args.out else None
    seeds = list(range(args.seed, args.seed + args.seeds))
    dump_config({"gradcheck": {"seeds": seeds, "batch": args.batch, "eps": args.eps,
                               "tolerance": args.tolerance}, "out": args.out}, out)
    results = run_gradient_suite(seeds, args.batch, args.eps, args.tolerance)
    rows, ok = [], True
    for seed, reports in results.items():
        for term, rep in reports.items():
            ok &= rep.passed
            rows.append((str(seed), term, f"{rep.max_error:.3e}", "pass" if rep.passed else "FAIL"))
    _print_table(("seed", "loss", "max_rel_error", "status"), rows)
    if out is not None:
        _write_csv(out / "gradcheck.csv", ("seed", "loss", "max_rel_error", "status"), rows)
    print(f"gradcheck {'passed' if ok else 'FAILED'} at tolerance {args.tolerance:g}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def tc_bench_passed(rho: float, analytic: float, estimate: float) -> bool:
    if rho == 0:
        return abs(estimate) < TC_ZERO_TOLERANCE
    return abs(estimate - analytic) <= TC_REL_TOLERANCE * analytic


def cmd_tc_bench(args) -> int:
    from sdgzsl.tcbench import run_tc_bench

    rhos = _parse_floats(args.rho)
    dims = tuple(int(v) for v in args.dims.split(","))
    if len(dims) != 2 or min(dims) < 1:
        raise UsageError("--dims must look like L,M with positive sizes")
    out = Path(args.out) if args.out else None
    dump_config({"tc_bench": {"rho": list(rhos), "dims": list(dims), "seed": args.seed, "steps": args.steps,
                              "n_train": args.n_train, "n_eval": args.n_eval}, "out": args.out}, out)
    rows, ok = [], True
    for rho in rhos:
        res = run_tc_bench(rho, dims, args.n_train, args.n_eval, args.steps, seed=args.seed)
        passed = tc_bench_passed(rho, res.analytic, res.estimate)
        ok &= passed
        rows.append((f"{rho:g}", f"{res.analytic:.4f}", f"{res.estimate:.4f}",
                     "-" if rho == 0 else f"{100 * res.rel_error:.1f}%", "pass" if passed else "FAIL"))
    header = ("rho", "analytic_tc", "estimate", "rel_error", "status")
    _print_table(header, rows)
    if out is not None:
        _write_csv(out / "tc_bench.csv", header, rows)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ------------------------------------------------------------------ helpers


def _parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _print_table(header, rows) -> None:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    print("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdgzsl", description="Semantic disentangling for generalized zero-shot learning.")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="run-config JSON with train / synthetic / eval sections")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                            help="override one config value (JSON-parsed), repeatable")
        sp.add_argument("--seed", type=int, help="overrides the config seed")

    sp = sub.add_parser("synth-data", help="write a synthetic benchmark bundle")
    common(sp)
    sp.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train", help="train a model on a manifest")
    common(sp)
    sp.add_argument("--data", required=True, help="manifest.json")
    sp.add_argument("--out", required=True)
    sp.add_argument("--preset", choices=("default", "synthetic"), default="default",
                    help="starting train config before --config / --set")
    sp.add_argument("--ablation", choices=tuple(ABLATIONS))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--checkpoint-every", type=int, default=1, help="epochs between checkpoints (0 = end only)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="GZSL report for a checkpoint")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--rep", choices=REPRESENTATIONS, default="hs")
    sp.add_argument("--ratios", default=",".join(f"{r:g}" for r in DEFAULT_RATIOS))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("retrieve", help="zero-shot retrieval mAP table")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--rep", choices=REPRESENTATIONS, default="hs")
    sp.add_argument("--ratios", default=",".join(f"{r:g}" for r in DEFAULT_RATIOS))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_retrieve)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss term (64-bit)")
    sp.add_argument("--seed", type=int, default=0, help="first seed")
    sp.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--tolerance", type=float, default=1e-6)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("tc-bench", help="density-ratio TC estimate vs. the Gaussian closed form")
    sp.add_argument("--rho", default="0.5", help="one or more comma-separated correlations")
    sp.add_argument("--dims", default="4,4", help="L,M sizes of the two halves")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=1500)
    sp.add_argument("--n-train", type=int, default=20000)
    sp.add_argument("--n-eval", type=int, default=20000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_tc_bench)
    return p


def _limit_threads():
    raw = os.environ.get("SDGZSL_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SDGZSL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"SDGZSL_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except (SDGZSLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
