"""Command line entry point.

Subcommands: search, retrain, eval, analyze, sweep, selfcheck.  Every
output directory gets a verbatim copy of the config and a run stamp so a
result can be traced back to its exact inputs.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from .attention import AttentionConfig, count_skip_connections
from .backbone import Backbone
from .config import RunConfig, default_config_text, load_run_config
from .data import load_dataset
from .errors import RFSearchError
from .genotype import Genotype, chain_genotype
from .ops import OpKind
from .reporting import fmt, metrics_csv, run_stamp, sweep_csv, telemetry_csv
from .rf import compute_erf_averaged, dag_forward_fn, theoretical_rf, verify_rf
from .search import noise_sweep, run_search
from .train import evaluate, train_model


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _prepare_out(out: str, cfg: RunConfig, subcommand: str) -> None:
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "config.cfg"), cfg.raw_text)
    _write(os.path.join(out, "run.txt"), run_stamp(subcommand, cfg.seed))


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        # a --seed override re-derives every seeded component
        from dataclasses import replace

        cfg.seed = args.seed
        cfg.dataset = replace(cfg.dataset, seed=args.seed)
        cfg.test_dataset = replace(cfg.test_dataset, seed=args.seed + 999_983)
        cfg.search = replace(cfg.search, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
    return cfg


def _load_genotype(path: str) -> Genotype:
    with open(path, "r", encoding="utf-8") as fh:
        return Genotype.from_text(fh.read())


def _say(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg)


def cmd_search(args) -> int:
    cfg = _load_config(args)
    _prepare_out(args.out, cfg, "search")
    dataset = load_dataset(cfg.dataset)
    genotype, report = run_search(cfg.backbone, cfg.attention, dataset, cfg.search)
    _write(os.path.join(args.out, "genotype.txt"), genotype.to_text())
    _write(os.path.join(args.out, "telemetry.csv"), telemetry_csv(report))
    if report.aborted:
        _say(args.quiet, f"search aborted: {report.abort_reason}")
        _write(os.path.join(args.out, "ABORTED.txt"), report.abort_reason + "\n")
        return 2
    _say(args.quiet, f"search done: {len(report.skip_history)} epochs, "
                     f"final skip count {report.skip_history[-1] if report.skip_history else 0}")
    _say(args.quiet, f"genotype written to {os.path.join(args.out, 'genotype.txt')}")
    return 0


def _build_model(cfg: RunConfig, genotype: Optional[Genotype]) -> Backbone:
    return Backbone(
        cfg.backbone,
        cfg.attention if genotype is not None else None,
        seed=cfg.seed,
        with_attention=genotype is not None,
    )


def cmd_retrain(args) -> int:
    cfg = _load_config(args)
    _prepare_out(args.out, cfg, "retrain")
    genotype = None if args.baseline else _load_genotype(args.genotype)
    train_ds = load_dataset(cfg.dataset)
    eval_ds = load_dataset(cfg.test_dataset)
    model = _build_model(cfg, genotype)
    report = train_model(model, train_ds, eval_ds, cfg.train, genotype=genotype)
    acc, loss = evaluate(model, eval_ds, genotype=genotype)
    _write(os.path.join(args.out, "metrics.csv"), metrics_csv(report.metrics))
    _write(
        os.path.join(args.out, "result.txt"),
        f"accuracy = {fmt(acc)}\nloss = {fmt(loss)}\n"
        f"best_epoch = {report.best_epoch}\nparams = {model.param_count()}\n",
    )
    np.savez(os.path.join(args.out, "weights.npz"), **model.store.state_dict())
    if genotype is not None:
        _write(os.path.join(args.out, "genotype.txt"), genotype.to_text())
    _say(args.quiet, f"retrain done: accuracy {acc:.4f} (best epoch {report.best_epoch})")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    _prepare_out(args.out, cfg, "eval")
    genotype = _load_genotype(args.genotype) if args.genotype else None
    model = _build_model(cfg, genotype)
    with np.load(args.weights) as npz:
        model.store.load_state_dict({k: npz[k] for k in npz.files})
    eval_ds = load_dataset(cfg.test_dataset)
    acc, loss = evaluate(model, eval_ds, genotype=genotype)
    _write(os.path.join(args.out, "result.txt"), f"accuracy = {fmt(acc)}\nloss = {fmt(loss)}\n")
    _say(args.quiet, f"eval: accuracy {acc:.4f}, loss {loss:.4f}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    _prepare_out(args.out, cfg, "analyze")
    genotype = _load_genotype(args.genotype)
    H, W = cfg.dataset.image_hw
    profile = theoretical_rf(genotype, (H, W))
    _write(os.path.join(args.out, "rf_profile.txt"), profile.describe())
    if cfg.analyze_position == "center":
        pos = (0, H // 2, W // 2)
    else:
        r, c = (int(p) for p in cfg.analyze_position.split(","))
        pos = (0, r, c)
    erf = compute_erf_averaged(
        dag_forward_fn(genotype),
        (1, 1, H, W),
        out_pos=pos,
        n_average=cfg.analyze_n_average,
        seed=cfg.seed,
    )
    _write(os.path.join(args.out, "erf.pgm"), erf.to_pgm())
    _write(os.path.join(args.out, "erf.csv"), erf.to_csv())
    report = verify_rf(genotype, (H, W), trials=4, seed=cfg.seed)
    status = "pass" if report.passed else "FAIL"
    body = [f"status = {status}", f"output_support = {profile.output.describe()}"]
    body.extend(report.details)
    _write(os.path.join(args.out, "rf_check.txt"), "\n".join(body) + "\n")
    _say(args.quiet, f"analyze: output support {profile.output.describe()}, check {status}")
    return 0 if report.passed else 2


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    _prepare_out(args.out, cfg, "sweep")
    dataset = load_dataset(cfg.dataset)
    cells = noise_sweep(
        cfg.backbone,
        cfg.attention,
        dataset,
        cfg.search,
        cfg.train,
        mus=cfg.sweep_mus,
        sigmas=cfg.sweep_sigmas,
        seeds=cfg.sweep_seeds,
        n_workers=cfg.sweep_workers,
    )
    _write(os.path.join(args.out, "sweep.csv"), sweep_csv(cells))
    _say(args.quiet, f"sweep done: {len(cells)} cells")
    return 0


def cmd_selfcheck(args) -> int:
    from . import gradcheck as gc
    from . import primitives as P
    from .attention import MixedEdgeParams, spatial_forward_relaxed
    from .rng import stream
    from .tensor import Tensor

    rng = stream(0, "selfcheck")
    failures = 0
    tol = 1e-4

    def check(label, fn, x):
        nonlocal failures
        err = gc.check_gradient(fn, x)
        ok = err < tol
        failures += 0 if ok else 1
        _say(args.quiet, f"[{'ok' if ok else 'FAIL'}] {label}: max rel err {err:.3e}")

    x = rng.standard_normal((2, 3, 6, 6))
    check("relu", lambda t, a: P.sum_all(t, P.relu(t, a)), x)
    check("sigmoid", lambda t, a: P.sum_all(t, P.sigmoid(t, a)), x)
    check("max_pool3", lambda t, a: P.sum_all(t, P.max_pool_same(t, a, 3)), x)
    check("max_pool5", lambda t, a: P.sum_all(t, P.max_pool_same(t, a, 5)), x)
    check("avg_pool3", lambda t, a: P.sum_all(t, P.avg_pool_same(t, a, 3)), x)
    check("avg_pool7", lambda t, a: P.sum_all(t, P.avg_pool_same(t, a, 7)), x)
    check("global_avg_pool", lambda t, a: P.sum_all(t, P.global_avg_pool(t, a)), x)
    check("row_mean", lambda t, a: P.sum_all(t, P.row_mean(t, a)), x)
    check("col_mean", lambda t, a: P.sum_all(t, P.col_mean(t, a)), x)
    check("softmax_channels", lambda t, a: P.sum_all(t, P.softmax_channels(t, a)), x)

    w = rng.standard_normal((4, 3, 3, 3))
    xin = Tensor(rng.standard_normal((2, 3, 6, 6)).astype(np.float64))
    check("conv2d_w", lambda t, a: P.sum_all(t, P.conv2d(t, xin, a)), w)
    labels = np.array([0, 2], dtype=np.int64)
    logits = rng.standard_normal((2, 3, 1, 1))
    check("cross_entropy", lambda t, a: P.cross_entropy_logits(t, a, labels), logits)

    acfg = AttentionConfig(n_nodes=3)
    feat = Tensor(rng.standard_normal((1, 2, 6, 6)).astype(np.float64))

    a0 = rng.standard_normal((acfg.n_edges, acfg.n_candidates, 1, 1))

    def alpha_fn(t, a):
        params = MixedEdgeParams(acfg, dtype=np.float64)
        params.alpha = a
        return P.sum_all(t, spatial_forward_relaxed(t, feat, params, acfg))

    check("alpha_mixture", alpha_fn, a0)

    for label, geno in [
        ("rf max3 chain", chain_genotype(4, OpKind.MaxPool3)),
        ("rf avg5 chain", chain_genotype(3, OpKind.AvgPool5)),
        ("rf strip chain", chain_genotype(3, OpKind.StripPool)),
    ]:
        rep = verify_rf(geno, (16, 16), trials=3, seed=0)
        ok = rep.passed
        failures += 0 if ok else 1
        _say(args.quiet, f"[{'ok' if ok else 'FAIL'}] {label}: "
                         f"{rep.containment_violations} containment, "
                         f"{rep.equality_violations} equality violations")

    if failures:
        print(f"selfcheck: {failures} check(s) failed", file=sys.stderr)
        return 2
    _say(args.quiet, "selfcheck: all checks passed")
    return 0


def cmd_init_config(args) -> int:
    text = default_config_text()
    if args.out:
        _write(args.out, text)
        _say(args.quiet, f"wrote default config to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rfsearch", description="pooling-attention structure search")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, out=True):
        if config:
            p.add_argument("--config", required=True, help="key=value config file")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("search", help="run the bilevel structure search")
    common(p)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("retrain", help="train a discrete structure from scratch")
    common(p)
    p.add_argument("--genotype", help="genotype file from a search run")
    p.add_argument("--baseline", action="store_true", help="train without attention blocks")
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("eval", help="evaluate saved weights on the held-out set")
    common(p)
    p.add_argument("--genotype", default=None)
    p.add_argument("--weights", required=True, help="weights.npz from retrain")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="receptive-field profile and empirical maps")
    common(p)
    p.add_argument("--genotype", required=True)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("sweep", help="noise-injection grid of search+retrain runs")
    common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("selfcheck", help="gradient and receptive-field self tests")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_selfcheck)

    p = sub.add_parser("init-config", help="print or write the default config")
    p.add_argument("--out", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "retrain" and not args.baseline and not args.genotype:
        parser.error("retrain requires --genotype unless --baseline is given")
    try:
        return args.fn(args)
    except (RFSearchError, OSError, ValueError) as e:
        print(f"rfsearch: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
