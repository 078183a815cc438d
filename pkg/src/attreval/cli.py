"""Command-line entry point: ``attreval <subcommand> ...``.

Subcommands: train, explain, evaluate, theory-sweep, wpc-fuzz, report.
Every subcommand that writes a directory also writes ``manifest.json``;
``evaluate --manifest`` replays a recorded run.

Exit codes: 0 success, 1 unexpected error, 2 usage, 3 bad input file,
4 dataset/checkpoint hash mismatch, 5 a check reported failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import explainers as ex
from . import nn, schemes, theory
from .data import DatasetFormatError
from .harness import (
    CheckFailedError,
    DatasetRef,
    HarnessError,
    HashMismatchError,
    InputError,
    RunManifest,
    UsageError,
    build_model,
    dataset_hashes,
    parse_int_range,
    parse_range,
)
from .manipulate import Replacement

CHECKPOINT = "model.aevnet"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file {p} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError("config file must hold a JSON object")
    return cfg


def _merge(args, cfg: dict, keys) -> None:
    """Fill unset (None) flags from the config file; flags win."""
    for key in keys:
        if getattr(args, key, None) is None and key in cfg:
            setattr(args, key, cfg[key])


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_cfg(args) -> nn.TrainConfig:
    opt = nn.Adam(args.lr) if args.optimizer == "adam" else nn.SGD(args.lr, args.momentum)
    return nn.TrainConfig(epochs=args.epochs, optimizer=opt, batch_size=args.batch_size, seed=args.seed)


def _load_checkpoint(path, train, test) -> tuple[nn.Network, dict]:
    p = Path(path)
    ckpt = p / CHECKPOINT if p.is_dir() else p
    if not ckpt.exists():
        raise InputError(f"checkpoint {ckpt} not found")
    try:
        net = nn.read_network(ckpt)
    except nn.CheckpointError as exc:
        raise InputError(str(exc)) from exc
    manifest_path = ckpt.parent / "manifest.json"
    if manifest_path.exists():
        RunManifest.read(manifest_path).check_dataset(train, test)
    return net, {"checkpoint": str(ckpt), "fingerprint": net.fingerprint()}


def _prepare_data(ref: DatasetRef, net_shape=None):
    train, test = ref.load()
    if net_shape is not None and tuple(net_shape) != train.sample_shape:
        if int(np.prod(net_shape)) != int(np.prod(train.sample_shape)):
            raise InputError(f"checkpoint expects inputs of shape {net_shape}, dataset has {train.sample_shape}")
        train, test = train.reshaped(net_shape), test.reshaped(net_shape)
    return train, test


def _default_model(ref: DatasetRef, train, test, seed: int) -> tuple[nn.Network, dict]:
    """Deterministic stand-in model when ``evaluate`` gets no checkpoint."""
    cfg = schemes.base_train_config().with_(seed=seed)
    if ref.source == "synthetic":
        cfg = cfg.with_(optimizer=nn.SGD(0.05))
    hidden = (64,) if ref.source == "synthetic" else (256,)
    net = build_model("mlp", train.sample_shape, train.num_classes, hidden, seed=seed)
    net, _ = nn.train(net, train, cfg)
    return net, {
        "trained_inline": True,
        "arch": "mlp",
        "hidden": list(hidden),
        "train_cfg": schemes.train_config_to_dict(cfg),
        "fingerprint": net.fingerprint(),
    }


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    _merge(args, _load_config(args.config), ("dataset", "arch", "hidden", "epochs", "lr", "seed", "batch_size"))
    ref = DatasetRef.parse(args.dataset or "synthetic:planted")
    train, test = ref.load()
    hidden = tuple(int(h) for h in str(args.hidden or "256").split(",")) if args.hidden != "" else ()
    args.epochs = 30 if args.epochs is None else int(args.epochs)
    args.lr = 0.01 if args.lr is None else float(args.lr)
    args.seed = 0 if args.seed is None else int(args.seed)
    args.batch_size = 64 if args.batch_size is None else int(args.batch_size)
    arch = args.arch or "mlp"
    if arch == "cnn" and len(train.sample_shape) == 1:
        side = int(round(np.sqrt(train.sample_shape[0])))
        train, test = train.reshaped((1, side, side)), test.reshaped((1, side, side))
    cfg = _train_cfg(args)
    net = build_model(arch, train.sample_shape, train.num_classes, hidden, seed=args.seed)
    net, hist = nn.train(net, train, cfg)
    out = _out_dir(args.out)
    nn.save_network(net, out / CHECKPOINT)
    acc = nn.accuracy(net, test)
    (out / "history.json").write_text(json.dumps({"loss": hist.loss, "accuracy": hist.accuracy,
                                                  "test_accuracy": acc}, indent=1) + "\n")
    m = RunManifest(
        command="train",
        dataset=ref.to_dict(),
        dataset_hash=dataset_hashes(train, test),
        config={"arch": arch, "hidden": list(hidden), "train_cfg": schemes.train_config_to_dict(cfg),
                "input_shape": list(train.sample_shape)},
        seeds={"init": args.seed, "shuffle": args.seed},
        model={"fingerprint": net.fingerprint()},
    )
    for name in (CHECKPOINT, "history.json"):
        m.record_output(out, name)
    m.write(out)
    print(f"test accuracy {acc:.4f}; wrote {out / CHECKPOINT}")
    return 0


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------


def _explainer_list(text, overrides: dict | None = None) -> list[ex.ExplainerConfig]:
    names = [n.strip() for n in str(text).split(",") if n.strip()]
    if not names:
        raise UsageError("no explainers given")
    out = []
    for n in names:
        try:
            out.append(ex.default_config(n, **(overrides or {}).get(n.lower(), {})))
        except (ValueError, TypeError) as exc:
            raise UsageError(f"explainer {n!r}: {exc}") from exc
    return out


def cmd_explain(args) -> int:
    ref = DatasetRef.parse(args.dataset)
    train, test = ref.load()
    net, model = _load_checkpoint(args.checkpoint, train, test)
    train, test = _prepare_data(ref, net.input_shape)
    data = train if args.split == "train" else test
    n = len(data) if args.limit is None else min(args.limit, len(data))
    out = _out_dir(args.out)
    m = RunManifest("explain", ref.to_dict(), dataset_hashes(train, test), {"split": args.split, "limit": n,
                    "target": args.target, "explainers": {}}, model=model)
    targets = schemes.attribution_targets(net, data.subset(np.arange(n)), args.target)
    for cfg in _explainer_list(args.explainers):
        cfg = cfg.with_(seed=args.seed)
        ids = np.arange(n) + (schemes.TEST_ID_OFFSET if args.split == "test" else 0)
        vals = ex.explain_batch(net, data.inputs[:n], targets, cfg, sample_ids=ids, reference=train.inputs)
        blob = b"".join(
            ex.dump_attribution(ex.AttributionMap(v, int(y), cfg.name), int(i))
            for v, y, i in zip(vals, targets, ids)
        )
        name = f"{cfg.name}.aevatt"
        (out / name).write_bytes(blob)
        m.config["explainers"][cfg.name] = schemes.explainer_to_dict(cfg)
        m.record_output(out, name)
    m.seeds = {"explainer": args.seed}
    m.write(out)
    print(f"wrote {len(m.outputs)} attribution files for {n} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _scheme_from_args(args) -> schemes.SchemeConfig:
    extra = {}
    if args.ratios is not None:
        extra["ratios"] = tuple(parse_range(str(args.ratios)))
    if args.repetitions is not None:
        extra["repetitions"] = int(args.repetitions)
    extra["seed"] = 0 if args.seed is None else int(args.seed)
    if args.replacement is not None:
        kind, _, val = str(args.replacement).partition(":")
        extra["replacement"] = Replacement(kind, float(val) if val else 0.0)
    try:
        if args.preset:
            s = schemes.preset(args.preset, **extra)
        else:
            if not (args.order and args.update):
                raise UsageError("give --preset, or both --order and --update")
            base = schemes.base_train_config()
            ft = base if args.update == "retrain_full" else base.with_(warmup_epochs=1, schedule="cosine")
            s = schemes.SchemeConfig("custom", args.order, args.update, finetune_cfg=ft, **extra)
        over = {}
        if args.fraction is not None:
            over["train_fraction"] = float(args.fraction)
        if args.epochs is not None:
            ft = s.finetune_cfg.with_(epochs=int(args.epochs))
            if ft.warmup_epochs >= ft.epochs > 0:
                ft = ft.with_(warmup_epochs=0)
            over["finetune_cfg"] = ft
        return s.with_(**over) if over else s
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _write_eval_outputs(out: Path, result: schemes.EvalResult, m: RunManifest) -> None:
    (out / "results.csv").write_text(result.results_csv())
    (out / "curves.csv").write_text(result.curves_csv())
    (out / "result.json").write_text(result.to_json() + "\n")
    for name in ("results.csv", "curves.csv", "result.json"):
        m.record_output(out, name)
    m.write(out)


def _run_eval(ref, scheme, explainer_cfgs, checkpoint, model_seed, expect: RunManifest | None = None):
    train, test = ref.load()
    if checkpoint:
        net, model = _load_checkpoint(checkpoint, train, test)
        train, test = _prepare_data(ref, net.input_shape)
    if expect is not None:
        expect.check_dataset(train, test)
    if not checkpoint:
        net, model = _default_model(ref, train, test, model_seed)
    try:
        result = schemes.evaluate(net, train, test, explainer_cfgs, scheme)
    except schemes.UntrainedNetworkError as exc:
        raise InputError(str(exc)) from exc
    return train, test, model, result


def cmd_evaluate(args) -> int:
    if args.manifest:
        return _replay(args)
    cfg = _load_config(args.config)
    _merge(args, cfg, ("preset", "order", "update", "ratios", "repetitions", "fraction", "epochs", "explainers",
                       "dataset", "checkpoint", "seed", "replacement"))
    if not args.explainers:
        raise UsageError("--explainers is required")
    ref = DatasetRef.parse(args.dataset or "synthetic:planted")
    scheme = _scheme_from_args(args)
    cfgs = _explainer_list(args.explainers, cfg.get("explainer_overrides"))
    train, test, model, result = _run_eval(ref, scheme, cfgs, args.checkpoint, scheme.seed)
    out = _out_dir(args.out)
    m = RunManifest(
        command="evaluate",
        dataset=ref.to_dict(),
        dataset_hash=dataset_hashes(train, test),
        config={"scheme": schemes.scheme_to_dict(scheme),
                "explainers": [schemes.explainer_to_dict(c) for c in cfgs]},
        seeds={"scheme": scheme.seed, "repetitions": list(result.seeds)},
        model=model,
    )
    _write_eval_outputs(out, result, m)
    print(schemes.format_report(schemes.compare_report([result]), result.ratios), end="")
    return 0


def _replay(args) -> int:
    m = RunManifest.read(args.manifest)
    if m.command != "evaluate":
        raise UsageError(f"manifest records a {m.command!r} run, not evaluate")
    ref = DatasetRef.from_dict(m.dataset)
    scheme = schemes.scheme_from_dict(m.config["scheme"])
    cfgs = [schemes.explainer_from_dict(d) for d in m.config["explainers"]]
    checkpoint = m.model.get("checkpoint")
    train, test, model, result = _run_eval(ref, scheme, cfgs, checkpoint, scheme.seed, expect=m)
    if model["fingerprint"] != m.model["fingerprint"]:
        raise HashMismatchError("model fingerprint differs from the recorded run")
    out = _out_dir(args.out)
    replay = RunManifest(m.command, m.dataset, m.dataset_hash, m.config, m.seeds, m.model)
    _write_eval_outputs(out, result, replay)
    differing = [n for n in ("results.csv", "curves.csv") if m.outputs.get(n) != replay.outputs.get(n)]
    if differing:
        raise CheckFailedError(f"replay differs from the recorded run in {differing}")
    print(f"replayed {args.manifest}: results identical")
    return 0


# ---------------------------------------------------------------------------
# theory
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("gamma", "p", "alpha", "C", "I", "I_tilde", "gap_exact", "gap_taylor", "holds")


def cmd_theory_sweep(args) -> int:
    gammas = parse_range(args.gamma)
    alphas = parse_range(args.alpha)
    classes = parse_int_range(args.classes)
    ps = parse_range(args.p) if args.p else None
    try:
        rows = theory.theorem1_grid(gammas, args.p_above_gamma, alphas, classes, ps=ps)
    except theory.ParameterRangeError as exc:
        raise UsageError(str(exc)) from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in SWEEP_COLUMNS])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    failed = sum(not r["holds"] for r in rows)
    print(f"{len(rows)} grid points, {failed} counterexamples", file=sys.stderr)
    if failed:
        raise CheckFailedError(f"{failed} grid points violate the inequality")
    return 0


def cmd_wpc_fuzz(args) -> int:
    res = theory.wpc_fuzz(args.n, args.seed, parse_int_range(args.classes))
    text = json.dumps(res, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if res["violations"]:
        raise CheckFailedError(f"{res['violations']} sign violations")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _read_result(path) -> schemes.EvalResult:
    p = Path(path)
    p = p / "result.json" if p.is_dir() else p
    if not p.exists():
        raise InputError(f"no result file at {p}")
    try:
        return schemes.EvalResult.from_json(p.read_text())
    except (KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{p} is not a result file: {exc}") from exc


def cmd_report(args) -> int:
    if args.delta_acc:
        keep_dir, remove_dir = args.delta_acc
        keep = schemes.read_curves_csv(_read_file(Path(keep_dir) / "curves.csv"))
        remove = schemes.read_curves_csv(_read_file(Path(remove_dir) / "curves.csv"))
        k_by, r_by = {e: c for (_, e), c in keep.items()}, {e: c for (_, e), c in remove.items()}
        rows = []
        for e in sorted(set(k_by) & set(r_by)):
            try:
                rows.append((e, schemes.delta_acc(k_by[e], r_by[e])))
            except schemes.SchemeError as exc:
                raise InputError(str(exc)) from exc
        rows.sort(key=lambda r: (-r[1], r[0]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["explainer", "delta_acc"])
        for e, v in rows:
            w.writerow([e, repr(v)])
        sys.stdout.write(buf.getvalue())
        return 0
    if not args.runs:
        raise UsageError("give run directories or --delta-acc KEEP REMOVE")
    results = [_read_result(p) for p in args.runs]
    try:
        rows = schemes.compare_report(results)
    except schemes.SchemeError as exc:
        raise InputError(str(exc)) from exc
    sys.stdout.write(schemes.format_report(rows, results[0].ratios))
    return 0


def _read_file(p: Path) -> str:
    if not p.exists():
        raise InputError(f"{p} not found")
    return p.read_text()


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="attreval", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="train a classifier and write a checkpoint")
    t.add_argument("--dataset")
    t.add_argument("--arch", choices=("mlp", "cnn"))
    t.add_argument("--hidden", help="comma-separated hidden widths for the mlp")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    t.add_argument("--momentum", type=float, default=0.0)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--seed", type=int)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explain", help="write attribution dumps for a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--explainers", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--limit", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--target", choices=schemes.TARGETS, default="predicted")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_explain)

    v = sub.add_parser("evaluate", help="run an evaluation scheme")
    v.add_argument("--preset", choices=schemes.PRESETS)
    v.add_argument("--order")
    v.add_argument("--update", choices=schemes.UPDATES)
    v.add_argument("--ratios", help="start:stop:step or a comma list")
    v.add_argument("--repetitions", type=int)
    v.add_argument("--fraction", type=float)
    v.add_argument("--epochs", type=int)
    v.add_argument("--replacement", help="constant:VALUE, per_feature_mean or per_channel_mean")
    v.add_argument("--explainers")
    v.add_argument("--dataset")
    v.add_argument("--checkpoint")
    v.add_argument("--seed", type=int)
    v.add_argument("--config")
    v.add_argument("--manifest", help="replay the run recorded in this manifest")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("theory-sweep", help="check the mutual-information inequality on a grid")
    s.add_argument("--gamma", default="0.05:0.45:0.05")
    s.add_argument("--alpha", default="0.1:0.9:0.1")
    s.add_argument("--p", help="explicit p axis; default gamma+0.05 .. 0.9")
    s.add_argument("--p-above-gamma", action="store_true", dest="p_above_gamma")
    s.add_argument("--classes", default="2,5,10")
    s.add_argument("--out")
    s.set_defaults(func=cmd_theory_sweep)

    f = sub.add_parser("wpc-fuzz", help="fuzz the weak-positive-contributor sign result")
    f.add_argument("--n", type=int, default=100_000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--classes", default="2:10")
    f.add_argument("--out")
    f.set_defaults(func=cmd_wpc_fuzz)

    r = sub.add_parser("report", help="compare evaluation runs")
    r.add_argument("runs", nargs="*")
    r.add_argument("--delta-acc", nargs=2, metavar=("KEEP", "REMOVE"), dest="delta_acc")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except HarnessError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (DatasetFormatError, nn.CheckpointError, ex.AttributionFormatError) as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return InputError.exit_code
    except (nn.NonFiniteGradientError, nn.TrainingDivergedError) as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
