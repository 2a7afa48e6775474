"""Command-line pipeline: generate, train, attack, build subspaces, evaluate, validate.

Exit codes: 0 success, 1 input error (bad flag, missing or malformed file,
invalid parameter), 2 the run completed but its verdict failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io, theorems
from .data import DATASET_KINDS, DatasetConfig, gen_dataset
from .geometry import attack_dataset, cross_section_map, curvature_profile
from .spectral import Subspace, principal_angles
from .training import ModelSpec, TrainConfig, TrainingError, train
from .universal import (
    MODES, SOURCES, UniversalCandidate, UnreachableError, build_curvature_subspace,
    build_normal_subspace, fooling_rate, greedy_universal, random_noise_fooling_norm, sample_universal,
)

INPUT_FLAGS = ("model", "data", "records", "subspace", "vector", "s1", "s2")


class InputError(Exception):
    """Bad user input; reported with exit code 1."""


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: usage error: {message}\n")
        raise SystemExit(1)


class Formatter(argparse.HelpFormatter):
    """Appends the value type and the default to every option."""

    def _get_help_string(self, action):
        text = action.help or ""
        if not action.option_strings or isinstance(action, argparse._HelpAction):
            return text
        if isinstance(action, argparse._StoreTrueAction):
            kind = "flag"
        elif action.choices is not None:
            kind = "{" + ",".join(map(str, action.choices)) + "}"
        else:
            kind = getattr(action.type, "__name__", "str") if action.type else "str"
        default = "required" if action.required else "%(default)s"
        return f"{text} (type: {kind}; default: {default})".lstrip()


def _pair(cast):
    def parse(text):
        parts = text.split(",")
        if len(parts) == 1:
            parts = parts * 2
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected one value or two comma-separated values, got {text!r}")
        return tuple(cast(p) for p in parts)

    parse.__name__ = f"{cast.__name__}[,{cast.__name__}]"
    return parse


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


_int_list.__name__ = "int-list"


# -- helpers ---------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _emit(obj, out=None):
    if out is None:
        sys.stdout.write(io.dump_json(obj))
        return []
    io.dump_json(obj, out)
    return [out]


def _write_manifest(args, outputs, started):
    """Record this run in manifest.json next to its outputs.

    One manifest per directory; a run replaces earlier entries that wrote
    any of the same files.
    """
    by_dir = {}
    for out in outputs:
        by_dir.setdefault(Path(out).resolve().parent, []).append(Path(out))
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "threads")}
    flags = json.loads(json.dumps(flags, default=str))
    inputs = {}
    for name in INPUT_FLAGS:
        path = getattr(args, name, None)
        if path and path != "random" and Path(path).is_file():
            inputs[str(path)] = _sha256(path)
    for folder, files in by_dir.items():
        entry = {
            "command": " ".join(p for p in (args.command, getattr(args, "action", None)) if p),
            "flags": flags,
            "seeds": {k: v for k, v in flags.items() if k == "seed" or k.endswith("_seed")},
            "inputs": inputs,
            "outputs": {f.name: _sha256(f) for f in files},
            "wall_time_s": time.perf_counter() - started,
        }
        path = folder / "manifest.json"
        runs = io.load_json(path).get("runs", []) if path.exists() else []
        runs = [r for r in runs if not set(r["outputs"]) & set(entry["outputs"])]
        runs.append(entry)
        io.dump_json({"runs": runs}, path)


def _rows_x(ds, offset, count):
    stop = ds.n if count is None else min(ds.n, offset + count)
    if not 0 <= offset < ds.n:
        raise InputError(f"--offset {offset} is outside the dataset of {ds.n} points")
    return ds.points[offset:stop]


# -- subcommands -----------------------------------------------------------------

def cmd_gen_data(args):
    cfg = DatasetConfig(args.kind, args.seed, args.d, args.l, args.n, args.noise, args.separation)
    ds = gen_dataset(cfg)
    if str(args.out).endswith(".csv"):
        io.write_dataset_csv(ds, args.out)
    else:
        io.save_dataset(ds, args.out)
    _emit({"n": ds.n, "d": ds.d, "L": cfg.L, "out": str(args.out)})
    return 0, [args.out]


def cmd_train(args):
    ds = io.load_dataset(args.data)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.optimizer, args.momentum, args.weight_scale, args.seed)
    clf = train(ModelSpec.parse(args.model), ds, cfg)
    io.save_model(clf, args.out)
    curve = clf.meta["loss_curve"]
    _emit({"train_accuracy": clf.meta["train_accuracy"], "final_loss": curve[-1] if curve else None, "out": str(args.out)})
    return 0, [args.out]


def cmd_attack(args):
    clf = io.load_model(args.model)
    ds = io.load_dataset(args.data)
    X = _rows_x(ds, args.offset, args.count)
    records = attack_dataset(clf, X, threads=args.threads, max_iter=args.max_iter, overshoot=args.overshoot)
    for rec in records:
        rec.index += args.offset
    io.save_records(records, args.out)
    norms = [rec.norm for rec in records if rec.converged]
    _emit({
        "n": len(records),
        "converged": len(norms),
        "median_norm": float(np.median(norms)) if norms else None,
        "out": str(args.out),
    })
    return 0, [args.out]


def cmd_subspace(args):
    records = io.load_records(args.records)
    if args.action == "normals":
        S = build_normal_subspace(records, args.m)
        io.save_subspace(S, args.out)
        _emit({"dim": S.dim, "ambient_dim": S.ambient_dim, "out": str(args.out)})
        return 0, [args.out]
    clf = io.load_model(args.model)
    rng = np.random.default_rng(args.seed)
    cs = build_curvature_subspace(clf, records, args.m, tol=args.tol, max_iter=args.max_iter, rng=rng)
    io.save_subspace(cs.subspace, args.out)
    report = dict(cs.eigen.to_json(), n_used=cs.n_used, n_skipped=cs.n_skipped)
    outputs = [args.out]
    if args.report:
        outputs += _emit(report, args.report)
    else:
        _emit(report)
    return 0, outputs


def cmd_universal(args):
    if args.action == "sample":
        S = io.load_subspace(args.subspace)
        seeds = np.random.SeedSequence(args.seed).spawn(args.count)
        cands = [sample_universal(S, args.norm, np.random.default_rng(s), args.source) for s in seeds]
        for k, c in enumerate(cands):
            c.seed = f"{args.seed}/{k}"
    else:
        clf = io.load_model(args.model)
        ds = io.load_dataset(args.data)
        cands = [greedy_universal(clf, ds.points, args.xi, args.max_passes, args.seed, args.mode)]
    obj = {"candidates": [io.candidate_json(c, args.out) for c in cands]}
    return 0, _emit(obj, args.out)


def _load_candidates(path):
    data = io._read_bytes(path)
    if data[:4] == b"UAPS":
        return [UniversalCandidate.of(io.load_vector(path), "file")]
    obj = io.load_json(path)
    items = obj["candidates"] if isinstance(obj, dict) and "candidates" in obj else [obj]
    try:
        return [io.candidate_from_json(c, Path(path).parent) for c in items]
    except (KeyError, TypeError) as exc:
        raise io.FormatError(f"{path} does not hold universal candidates: {exc}") from None


def cmd_fool_rate(args):
    clf = io.load_model(args.model)
    ds = io.load_dataset(args.data)
    X = _rows_x(ds, args.offset, args.count)
    results = []
    for cand in _load_candidates(args.vector):
        if cand.v.shape != (clf.input_dim,):
            raise InputError(f"vector has dimension {cand.v.size}, model expects {clf.input_dim}")
        results.append(fooling_rate(clf, X, cand, args.mode).to_json(include_vector=False))
    rates = [r["rate"] for r in results]
    obj = {"mode": args.mode, "mean_rate": float(np.mean(rates)), "results": results}
    return 0, _emit(obj, args.out)


def cmd_cross_section(args):
    clf = io.load_model(args.model)
    records = io.load_records(args.records)
    match = [rec for rec in records if rec.index == args.index]
    if not match:
        raise InputError(f"no record with index {args.index}")
    rec = match[0]
    if args.v == "random":
        v = np.random.default_rng(args.seed).standard_normal(clf.input_dim)
    else:
        v = io.load_perturbation(args.v)
    cs = cross_section_map(clf, rec, v, args.extent, args.res)
    boundary = args.out_boundary or str(Path(args.out_csv).with_suffix("")) + "_boundary.csv"
    cs.write_csv(args.out_csv, boundary)
    _emit({"grid": str(args.out_csv), "boundary": boundary, "n_boundary_points": len(cs.boundary)})
    return 0, [args.out_csv, boundary]


def cmd_curvature_profile(args):
    clf = io.load_model(args.model)
    records = [rec for rec in io.load_records(args.records) if rec.converged]
    if not records:
        raise InputError("no converged records")
    S = io.load_subspace(args.subspace)
    ms = args.ms or [S.dim]
    if max(ms) > S.dim or min(ms) < 1:
        raise InputError(f"--ms values must lie in [1, {S.dim}]")
    rng = np.random.default_rng(args.seed)
    rows = []
    for m in ms:
        reps = curvature_profile(clf, records, S.truncate(m), args.k, rng)
        means = np.array([r.mean for r in reps])
        rows.append({
            "m": m,
            "mean_curvature": float(means.mean()),
            "std_curvature": float(means.std()),
            "positive_fraction": float(np.mean(np.concatenate([r.samples for r in reps]) > 0)),
            "per_point": [{"index": r.point_index, "mean": r.mean, "std": r.std} for r in reps],
        })
    return 0, _emit({"k": args.k, "profile": rows}, args.out)


def cmd_angles(args):
    S1, S2 = io.load_subspace(args.s1), io.load_subspace(args.s2)
    if S1.ambient_dim != S2.ambient_dim:
        raise InputError(f"subspaces live in different dimensions ({S1.ambient_dim} vs {S2.ambient_dim})")
    cos = principal_angles(S1, S2)
    obj = {"cosines": cos.tolist(), "angles_rad": np.arccos(cos).tolist()}
    return 0, _emit(obj, args.out)


def cmd_validate(args):
    common = dict(trials=args.trials, seed=args.seed)
    if args.action == "lemma1":
        rep = theorems.validate_lemma1(args.d, args.m, args.delta, **common)
    elif args.action == "thm1":
        rep = theorems.validate_theorem1(args.L, args.d, args.delta, args.xi, args.n_points, rho_scale=args.rho_scale, **common)
    else:
        rep = theorems.run_theorem2(args.kappa, args.m, args.d, args.delta, args.n_points, rho_scale=args.rho_scale, **common)
    outputs = _emit(rep.to_json(), args.out)
    print(rep.summary_row(), file=sys.stdout if args.out else sys.stderr)
    return (0 if rep.verdict else 2), outputs


def cmd_noise_norm(args):
    clf = io.load_model(args.model)
    ds = io.load_dataset(args.data)
    X = _rows_x(ds, args.offset, args.count)
    try:
        norm = random_noise_fooling_norm(clf, X, args.target_rate, args.seed, args.directions)
        obj, code = {"target_rate": args.target_rate, "norm": norm, "reached": True}, 0
    except UnreachableError as exc:
        obj = {"target_rate": args.target_rate, "norm": None, "reached": False, "achieved_rate": exc.achieved_rate}
        code = 2
    return code, _emit(obj, args.out)


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = dict(formatter_class=Formatter)
    p = Parser(prog="boundgeo", description="Decision-boundary geometry and universal perturbations.", **fmt)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker cap for read-only parallel phases")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help, description=help, **fmt)
        sp.set_defaults(func=func)
        return sp

    def window(sp):
        sp.add_argument("--offset", type=int, default=0, help="first dataset row to use")
        sp.add_argument("--count", type=int, default=None, help="number of rows (all remaining if omitted)")

    sp = add("gen-data", cmd_gen_data, "generate a synthetic dataset (.bgds, or CSV if --out ends in .csv)")
    sp.add_argument("--kind", choices=DATASET_KINDS, default="rings", help="dataset family")
    sp.add_argument("--d", type=int, default=100, help="input dimension")
    sp.add_argument("--l", type=int, default=2, help="number of classes")
    sp.add_argument("--n", type=int, default=2000, help="number of points")
    sp.add_argument("--noise", type=float, default=0.05, help="Gaussian noise scale")
    sp.add_argument("--separation", type=float, default=3.0, help="blob center distance from the origin")
    sp.add_argument("--seed", type=int, default=0, help="generator seed")
    sp.add_argument("--out", required=True, help="output dataset file")

    sp = add("train", cmd_train, "train a classifier on a dataset")
    sp.add_argument("--model", default="mlp:64x64:tanh", help="'linear' or 'mlp:<w1>x<w2>...[:tanh|softplus]'")
    sp.add_argument("--data", required=True, help="training dataset (.bgds)")
    sp.add_argument("--epochs", type=int, default=50, help="passes over the data")
    sp.add_argument("--lr", type=float, default=0.05, help="step size")
    sp.add_argument("--batch-size", type=int, default=64, help="mini-batch size")
    sp.add_argument("--optimizer", choices=("momentum", "plain-gradient"), default="momentum", help="update rule")
    sp.add_argument("--momentum", type=float, default=0.9, help="momentum coefficient")
    sp.add_argument("--weight-scale", type=float, default=1.0, help="initial weight scale")
    sp.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    sp.add_argument("--out", required=True, help="output model file (.bgmd)")

    sp = add("attack", cmd_attack, "minimal perturbations for dataset points")
    sp.add_argument("--model", required=True, help="model file")
    sp.add_argument("--data", required=True, help="dataset file")
    window(sp)
    sp.add_argument("--max-iter", type=int, default=50, help="linearization steps per point")
    sp.add_argument("--overshoot", type=float, default=0.02, help="relative overshoot used to confirm a flip")
    sp.add_argument("--out", required=True, help="output records JSON")

    sp = add("subspace", cmd_subspace, "build a curvature or normal subspace")
    ssub = sp.add_subparsers(dest="action", required=True, parser_class=Parser)
    c = ssub.add_parser("curvature", help="top most-positive eigenvectors of the averaged projected Hessian", **fmt)
    c.add_argument("--model", required=True, help="model file")
    c.add_argument("--records", required=True, help="records JSON from attack")
    c.add_argument("--m", type=int, required=True, help="subspace dimension")
    c.add_argument("--tol", type=float, default=1e-6, help="eigensolver relative tolerance")
    c.add_argument("--max-iter", type=int, default=500, help="eigensolver iteration cap")
    c.add_argument("--seed", type=int, default=0, help="eigensolver start seed")
    c.add_argument("--report", default=None, help="write the eigenvalue report here instead of stdout")
    c.add_argument("--out", required=True, help="output subspace file (.uaps)")
    nrm = ssub.add_parser("normals", help="top singular vectors of the normalized minimal perturbations", **fmt)
    nrm.add_argument("--records", required=True, help="records JSON from attack")
    nrm.add_argument("--m", type=int, required=True, help="subspace dimension")
    nrm.add_argument("--out", required=True, help="output subspace file (.uaps)")

    sp = add("universal", cmd_universal, "sample or construct universal perturbations")
    usub = sp.add_subparsers(dest="action", required=True, parser_class=Parser)
    s = usub.add_parser("sample", help="random vectors of a given norm inside a subspace", **fmt)
    s.add_argument("--subspace", required=True, help="subspace file")
    s.add_argument("--norm", type=float, required=True, help="perturbation norm")
    s.add_argument("--count", type=int, default=20, help="number of samples")
    s.add_argument("--source", choices=SOURCES, default="random_in_Sc", help="provenance label")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.add_argument("--out", default=None, help="output JSON (stdout if omitted)")
    g = usub.add_parser("greedy", help="greedy accumulation baseline", **fmt)
    g.add_argument("--model", required=True, help="model file")
    g.add_argument("--data", required=True, help="dataset file")
    g.add_argument("--xi", type=float, required=True, help="norm budget")
    g.add_argument("--max-passes", type=int, default=10, help="passes over the data")
    g.add_argument("--mode", choices=MODES, default="vector", help="fooling criterion")
    g.add_argument("--seed", type=int, default=0, help="shuffling seed")
    g.add_argument("--out", default=None, help="output JSON (stdout if omitted)")

    sp = add("fool-rate", cmd_fool_rate, "fooling rate of stored perturbations")
    sp.add_argument("--model", required=True, help="model file")
    sp.add_argument("--data", required=True, help="dataset file")
    window(sp)
    sp.add_argument("--vector", required=True, help="candidates JSON or raw vector file")
    sp.add_argument("--mode", choices=MODES, default="vector", help="x+v only, or x+v and x-v")
    sp.add_argument("--out", default=None, help="output JSON (stdout if omitted)")

    sp = add("cross-section", cmd_cross_section, "label map of the plane through a point, its normal and a direction")
    sp.add_argument("--model", required=True, help="model file")
    sp.add_argument("--records", required=True, help="records JSON from attack")
    sp.add_argument("--index", type=int, default=0, help="dataset index of the point")
    sp.add_argument("--v", default="random", help="direction file, or 'random'")
    sp.add_argument("--seed", type=int, default=0, help="seed for a random direction")
    sp.add_argument("--extent", type=_pair(float), default=(2.0, 2.0), help="half-widths along the normal and v")
    sp.add_argument("--res", type=_pair(int), default=(41, 41), help="grid points along the normal and v")
    sp.add_argument("--out-csv", required=True, help="grid CSV")
    sp.add_argument("--out-boundary", default=None, help="boundary CSV (derived from --out-csv if omitted)")

    sp = add("curvature-profile", cmd_curvature_profile, "subspace-averaged curvature against subspace dimension")
    sp.add_argument("--model", required=True, help="model file")
    sp.add_argument("--records", required=True, help="records JSON from attack")
    sp.add_argument("--subspace", required=True, help="subspace file; leading columns give the nested subspaces")
    sp.add_argument("--k", type=int, default=20, help="random directions per point")
    sp.add_argument("--ms", type=_int_list, default=None, help="subspace dimensions to sweep (full dimension if omitted)")
    sp.add_argument("--seed", type=int, default=0, help="direction sampling seed")
    sp.add_argument("--out", default=None, help="output JSON (stdout if omitted)")

    sp = add("angles", cmd_angles, "principal angles between two subspaces")
    sp.add_argument("--s1", required=True, help="first subspace file")
    sp.add_argument("--s2", required=True, help="second subspace file")
    sp.add_argument("--out", default=None, help="output JSON (stdout if omitted)")

    sp = add("validate", cmd_validate, "Monte Carlo check of a robustness bound")
    vsub = sp.add_subparsers(dest="action", required=True, parser_class=Parser)

    def vcommon(v):
        v.add_argument("--trials", type=int, default=50, help="Monte Carlo trials")
        v.add_argument("--seed", type=int, default=0, help="master seed")
        v.add_argument("--out", default=None, help="output JSON (stdout if omitted)")

    v = vsub.add_parser("lemma1", help="concentration of sphere projections", **fmt)
    v.add_argument("--d", type=int, default=1000, help="ambient dimension")
    v.add_argument("--m", type=int, default=10, help="projection dimension")
    v.add_argument("--delta", type=float, default=0.1, help="failure probability")
    vcommon(v)
    v.set_defaults(trials=10000)
    v = vsub.add_parser("thm1", help="flat boundary model with a linear classifier", **fmt)
    v.add_argument("--L", type=int, default=10, help="number of classes")
    v.add_argument("--d", type=int, default=200, help="ambient dimension")
    v.add_argument("--delta", type=float, default=0.2, help="failure probability")
    v.add_argument("--xi", type=float, default=0.0, help="alignment slack")
    v.add_argument("--n-points", type=int, default=500, help="datapoints")
    v.add_argument("--rho-scale", type=float, default=1.0, help="multiplier on the predicted norm")
    vcommon(v)
    v = vsub.add_parser("thm2", help="curved boundary model with per-point balls", **fmt)
    v.add_argument("--kappa", type=float, default=1.0, help="boundary curvature, in (0, 1]")
    v.add_argument("--m", type=int, default=10, help="subspace dimension")
    v.add_argument("--d", type=int, default=100, help="ambient dimension")
    v.add_argument("--delta", type=float, default=0.2, help="failure probability")
    v.add_argument("--n-points", type=int, default=500, help="datapoints")
    v.add_argument("--rho-scale", type=float, default=1.0, help="multiplier on the predicted norm")
    vcommon(v)

    sp = add("noise-norm", cmd_noise_norm, "smallest isotropic noise norm reaching a fooling rate")
    sp.add_argument("--model", required=True, help="model file")
    sp.add_argument("--data", required=True, help="dataset file")
    window(sp)
    sp.add_argument("--target-rate", type=float, default=0.9, help="fooling rate to reach")
    sp.add_argument("--directions", type=int, default=20, help="random directions (median rate is used)")
    sp.add_argument("--seed", type=int, default=0, help="direction seed")
    sp.add_argument("--out", default=None, help="output JSON (stdout if omitted)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("boundgeo: input error: --threads must be >= 1", file=sys.stderr)
        return 1
    started = time.perf_counter()
    try:
        code, outputs = args.func(args)
    except FileNotFoundError as exc:
        print(f"boundgeo: missing file: {exc}", file=sys.stderr)
        return 1
    except io.FormatError as exc:
        print(f"boundgeo: format error: {exc}", file=sys.stderr)
        return 1
    except (InputError, ValueError) as exc:
        print(f"boundgeo: input error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"boundgeo: training error: {exc}", file=sys.stderr)
        return 1
    if outputs:
        _write_manifest(args, outputs, started)
    return code


if __name__ == "__main__":
    sys.exit(main())
