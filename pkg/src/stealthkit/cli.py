"""Command-line interface.

Exit codes: 0 success, 1 usage or I/O error, 2 a bound hypothesis fails,
3 an algorithmic step fails (infeasible trigger, impossible surgery),
4 verification fails.

Every command writes a run manifest (JSON) recording its argv, resolved
parameters, RNG algorithm and seed, SHA-256 digests of inputs and outputs,
the toolkit version and timestamps.  ``stealthkit replay MANIFEST`` re-runs
the recorded argv and checks that every output digest is reproduced.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import math
import os
import sys
from contextlib import redirect_stdout
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .attack import AttackError, AttackNeuron, AttackParams
from .bounds import BoundQuery, HypothesisError, success_bound
from .geometry import RNG_ALGORITHM
from .model import (
    LatentSplit, ModelError, canonical_bytes, canonical_dumps, load_model, load_vectors,
    model_digest, network_to_dict,
)
from .planting import PlantingError, plant_scenario1, plant_scenario2, plant_scenario3, rank_neurons, victim_contribution
from .pipeline import run_attack
from .synth import DEFAULT_WIDTHS, make_inputs, make_network
from .trigger import TriggerResult, TriggerSearchConfig, TriggerSearchError
from .verify import LATENT_MODELS, mc_event_probability, verify_stealth

EXIT_OK, EXIT_USAGE, EXIT_HYPOTHESIS, EXIT_ALGORITHM, EXIT_VERIFY = 0, 1, 2, 3, 4
SEED_ENV = "STEALTHKIT_SEED"
MANIFEST_DIR_ENV = "STEALTHKIT_MANIFEST_DIR"
STDOUT_KEY = "<stdout>"


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def rational(text: str) -> float:
    """Parse '0.25', '1/3' or '1e-3' to the nearest double."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_bytes(ctx, path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    ctx["outputs"][str(path)] = hashlib.sha256(data).hexdigest()


def _write_json(ctx, path, obj) -> None:
    _write_bytes(ctx, path, canonical_bytes(obj))


def _read_input(ctx, path):
    ctx["inputs"][str(path)] = _sha256_file(path)
    return path


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _table(rows: list, columns: list) -> str:
    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _render(rows: list, columns: list, fmt: str) -> str:
    if fmt == "json":
        return canonical_dumps(rows if len(rows) != 1 else rows[0])
    if fmt == "csv":
        return _csv(rows, columns)
    return _table(rows, columns)


def _split(args) -> LatentSplit:
    return LatentSplit(cut=args.cut, head_output_index=args.head_index)


# ------------------------------------------------------------------ bounds

BOUND_PARAMS = ("M", "n", "n_p", "gamma", "delta", "alpha", "eps_collapse", "C")
BOUND_COLUMNS = [
    "M", "n", "n_p", "gamma", "delta", "alpha", "phi", "p1_integral", "p1_closed",
    "bound_integral", "bound_closed", "bound_alpha0", "bound_collapse", "quadrature_error_estimate",
]


def cmd_bounds(args, ctx) -> int:
    base = {k: getattr(args, k) for k in BOUND_PARAMS}
    axes = []
    for name, start, stop, count in args.sweep or []:
        key = name.replace("-", "_")
        if key not in BOUND_PARAMS:
            raise UsageError(f"cannot sweep {name!r}; choose from {', '.join(BOUND_PARAMS)}")
        num = int(count)
        if num < 1:
            raise UsageError("sweep count must be >= 1")
        values = np.linspace(rational(start), rational(stop), num)
        if key in ("M", "n", "n_p"):
            values = [int(round(v)) for v in values]
        axes.append([(key, float(v) if key not in ("M", "n", "n_p") else v) for v in values])
    rows = []
    for combo in itertools.product(*axes) if axes else [()]:
        p = dict(base)
        p.update(dict(combo))
        if p["M"] is None or p["n"] is None or p["gamma"] is None or p["delta"] is None:
            raise UsageError("--M, --n, --gamma and --delta are required (directly or via --sweep)")
        q = BoundQuery(**p)
        try:
            q.check()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        rep = success_bound(q)
        rows.append({**p, "n_p": q.dim, **rep.to_dict()})
    ctx["params"]["points"] = len(rows)
    text = _render(rows, BOUND_COLUMNS, args.format)
    if args.out:
        _write_bytes(ctx, args.out, (text + ("" if text.endswith("\n") else "\n")).encode())
    _emit(text)
    return EXIT_OK


# ------------------------------------------------------------------ attack


def _attack_params(args) -> AttackParams:
    return AttackParams(
        gamma=args.gamma, delta=args.delta, Delta=args.Delta, eps=args.eps,
        g_kind=args.g_kind, sign=args.sign, kappa_margin=args.kappa_margin, M=args.M,
    )


def _search_config(args, seed: int) -> TriggerSearchConfig:
    return TriggerSearchConfig(
        lambda1=args.lambda1, lambda2=args.lambda2, p1=args.p1, p2=args.p2,
        max_iters=args.max_iters, step0=args.step0, step_decay=args.step_decay,
        alpha_target=args.alpha_target, patience=args.patience,
        round_inputs=args.round_inputs, seed=seed,
    )


def cmd_attack(args, ctx) -> int:
    net = load_model(_read_input(ctx, args.model))
    split = _split(args)
    split.check(net)
    reference = load_vectors(_read_input(ctx, args.reference))
    u_star, extra = None, []
    if args.target_input:
        targets = load_vectors(_read_input(ctx, args.target_input))
        if not 0 <= args.target_row < targets.shape[0]:
            raise UsageError(f"--target-row {args.target_row} outside 0..{targets.shape[0] - 1}")
        u_star = targets[args.target_row]
        others = [t for i, t in enumerate(targets) if i != args.target_row]
        extra = others[: max(args.restarts - 1, 0)]
    params = _attack_params(args)
    cfg = _search_config(args, ctx["seed"])
    out = run_attack(net, split, params, reference, u_star=u_star, cfg=cfg, seed=ctx["seed"],
                     subspace=not args.full_space, safety_factor=args.safety_factor,
                     extra_targets=extra)
    ctx["params"]["attack"] = params.to_dict()
    ctx["params"]["search"] = cfg.to_dict()
    outdir = Path(args.out)
    trig = out.trigger.to_dict()
    if not args.keep_trace:
        trig["loss_trace"] = trig["loss_trace"][-1:]
        trig["best_alpha_trace"] = trig["best_alpha_trace"][-1:]
    _write_json(ctx, outdir / "trigger.json", trig)
    summary = out.summary()
    if out.bound is not None:
        summary["bound"] = out.bound.to_dict()
    _write_json(ctx, outdir / "summary.json", summary)
    bound_txt = "n/a" if out.bound is None else f"{out.bound.bound_integral:.6g}"
    _emit(f"alpha={out.trigger.alpha:.6g} feasible={out.trigger.feasible} R={out.R:.6g} "
          f"n_p={out.trigger.x.n_effective} success_bound={bound_txt}")
    if out.bound_error:
        _emit(f"bound unavailable: {out.bound_error}")
    if out.neuron is None:
        sys.stderr.write(
            f"trigger search infeasible: best alpha {out.trigger.alpha:.6g}, "
            f"gamma*||x'|| = {args.gamma * float(np.linalg.norm(out.trigger.x_prime)):.6g}\n"
        )
        return EXIT_ALGORITHM
    _write_json(ctx, outdir / "neuron.json", out.neuron.to_dict())
    return EXIT_OK


# ------------------------------------------------------------------- plant


def cmd_plant(args, ctx) -> int:
    net = load_model(_read_input(ctx, args.model))
    with open(_read_input(ctx, args.neuron), "r", encoding="utf-8") as fh:
        neuron = AttackNeuron.from_dict(json.load(fh))
    split = _split(args)
    record = {"scenario": args.scenario, "neuron": args.neuron, "seed": ctx["seed"],
              "source_model_sha256": model_digest(net)}
    if args.scenario == 1:
        planted = plant_scenario1(net, split, neuron)
    elif args.scenario == 2:
        planted = plant_scenario2(net, split, neuron)
    else:
        layer = split.cut + 1 if args.layer is None else args.layer
        if args.victim is None:
            ranking = rank_neurons(net, layer, args.tie_seed)
            victim = int(ranking.order[0])
        else:
            victim = args.victim
        planted = plant_scenario3(net, layer, victim, neuron, args.head_index)
        record.update({"layer": layer, "victim": victim, "tie_seed": args.tie_seed})
        if args.contribution_inputs and layer + 1 == net.n_layers - 1:
            inputs = load_vectors(_read_input(ctx, args.contribution_inputs))
            c = victim_contribution(net, layer, victim, args.head_index, inputs)
            record["victim_contribution_max_abs"] = float(np.max(np.abs(c))) if c.size else 0.0
    _write_json(ctx, args.out, network_to_dict(planted))
    record["planted_model_sha256"] = model_digest(planted)
    _write_json(ctx, str(args.out) + ".provenance.json", record)
    _emit(f"planted scenario {args.scenario} -> {args.out} ({record['planted_model_sha256']})")
    return EXIT_OK


# ------------------------------------------------------------------ verify


def _load_trigger(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    if isinstance(d, dict) and "u_prime" in d:
        return np.asarray(d["u_prime"], dtype=np.float64)
    return load_vectors(path)[0]


def cmd_verify(args, ctx) -> int:
    original = load_model(_read_input(ctx, args.original))
    planted = load_model(_read_input(ctx, args.planted))
    split = _split(args)
    validation = load_vectors(_read_input(ctx, args.validation))
    trigger = _load_trigger(_read_input(ctx, args.trigger))
    neuron = None
    if args.neuron:
        with open(_read_input(ctx, args.neuron), "r", encoding="utf-8") as fh:
            neuron = AttackNeuron.from_dict(json.load(fh))
    rep = verify_stealth(original, planted, split, validation, trigger, args.eps, args.Delta,
                         neuron=neuron, as_latents=args.latents, bins=args.bins)
    d = rep.to_dict()
    d["eps"], d["Delta"] = args.eps, args.Delta
    if args.out:
        _write_json(ctx, args.out, d)
    if args.histogram_csv and rep.histogram_counts is not None:
        rows = [
            {"lower": lo, "upper": hi, "count": c}
            for lo, hi, c in zip(rep.histogram_edges[:-1], rep.histogram_edges[1:], rep.histogram_counts)
        ]
        _write_bytes(ctx, args.histogram_csv, _csv(rows, ["lower", "upper", "count"]).encode())
    cols = ["n_validation", "max_validation_deviation", "trigger_deviation", "eps_ok", "delta_ok", "silent_count"]
    _emit(_render([d], cols, args.format))
    return EXIT_OK if rep.ok else EXIT_VERIFY


# -------------------------------------------------------------------- rank


def cmd_rank(args, ctx) -> int:
    net = load_model(_read_input(ctx, args.model))
    r = rank_neurons(net, args.layer, args.tie_seed)
    rows = [{"rank": i + 1, "neuron": int(n), "l1_norm": float(v)} for i, (n, v) in enumerate(zip(r.order, r.norms))]
    if args.top:
        rows = rows[: args.top]
    text = _render(rows, ["rank", "neuron", "l1_norm"], args.format)
    if args.out:
        _write_bytes(ctx, args.out, (text + "\n").encode())
    _emit(text)
    return EXIT_OK


# ---------------------------------------------------------------------- mc


def cmd_mc(args, ctx) -> int:
    fixed = load_vectors(_read_input(ctx, args.fixed_latents)) if args.fixed_latents else None
    rep = mc_event_probability(
        n=args.n, n_p=args.n_p, gamma=args.gamma, delta=args.delta, alpha=args.alpha,
        latent_model=args.latent_model, M=args.M, trials=args.trials, seed=ctx["seed"],
        fixed_latents=fixed, displacement=args.displacement, chunk_size=args.chunk_size,
        workers=args.workers,
    )
    d = rep.to_dict()
    if args.out:
        _write_json(ctx, args.out, d)
    cols = ["trials", "failures", "failure_frequency", "ci_low", "ci_high", "bound_failure", "success_frequency"]
    _emit(_render([d], cols, args.format))
    return EXIT_OK


# -------------------------------------------------------------------- hash


def cmd_hash(args, ctx) -> int:
    net = load_model(_read_input(ctx, args.model))
    _emit(model_digest(net))
    return EXIT_OK


# --------------------------------------------------------------------- gen


def cmd_gen(args, ctx) -> int:
    widths = tuple(int(w) for w in args.widths.split(",")) if args.widths else DEFAULT_WIDTHS
    net = make_network(args.input_dim, widths, seed=ctx["seed"])
    data = make_inputs(net, args.count + args.reference_count, seed=ctx["seed"] + 1,
                       n_prototypes=args.prototypes, noise=args.noise)
    outdir = Path(args.out)
    _write_json(ctx, outdir / "model.json", network_to_dict(net))
    ref, val = data[: args.reference_count], data[args.reference_count:]
    _write_json(ctx, outdir / "reference.json", {"dim": net.input_dim, "vectors": ref})
    _write_json(ctx, outdir / "validation.json", {"dim": net.input_dim, "vectors": val})
    _emit(f"wrote {outdir / 'model.json'} ({model_digest(net)}), "
          f"{len(ref)} reference and {len(val)} validation inputs")
    return EXIT_OK


# ------------------------------------------------------------------ replay


def cmd_replay(args, ctx) -> int:
    with open(_read_input(ctx, args.manifest), "r", encoding="utf-8") as fh:
        m = json.load(fh)
    argv = list(m["argv"])
    if "--manifest" not in argv:
        argv = ["--manifest", os.devnull] + argv
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    mismatched = []
    for path, digest in m.get("outputs", {}).items():
        if path == STDOUT_KEY:
            got = hashlib.sha256(buf.getvalue().encode()).hexdigest()
        else:
            got = _sha256_file(path) if Path(path).exists() else None
        if got != digest:
            mismatched.append(path)
    if code != m.get("exit_code", code):
        mismatched.append(f"exit code {code} != {m['exit_code']}")
    if mismatched:
        _emit("replay mismatch: " + ", ".join(mismatched))
        return EXIT_VERIFY
    _emit(f"replay reproduced {len(m.get('outputs', {}))} outputs")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_split(p):
    p.add_argument("--cut", type=int, required=True, help="index of the latent layer")
    p.add_argument("--head-index", type=int, default=0, help="tracked output coordinate")


def build_parser() -> argparse.ArgumentParser:
    default_seed = os.environ.get(SEED_ENV, "0")
    parser = _Parser(prog="stealthkit", description="Single-neuron stealth attack toolkit.")
    parser.add_argument("--version", action="version", version=f"stealthkit {__version__}")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (default: ${SEED_ENV} or 0, currently {default_seed})")
    parser.add_argument("--manifest", default=None, help="where to write the run manifest")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bounds", help="success-probability bounds")
    p.add_argument("--M", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-p", dest="n_p", type=int, default=None)
    p.add_argument("--gamma", type=rational)
    p.add_argument("--delta", type=rational)
    p.add_argument("--alpha", type=rational, default=0.0)
    p.add_argument("--C", type=rational, default=None)
    p.add_argument("--eps-collapse", dest="eps_collapse", type=rational, default=0.0)
    p.add_argument("--sweep", nargs=4, action="append", metavar=("PARAM", "START", "STOP", "COUNT"),
                   help="sweep PARAM over a linear grid (repeatable; grids are combined)")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("attack", help="search a trigger and plan the attack neuron")
    p.add_argument("--model", required=True)
    _add_split(p)
    p.add_argument("--reference", required=True, help="inputs used to estimate R")
    p.add_argument("--target-input", help="vectors file holding target inputs u*")
    p.add_argument("--target-row", type=int, default=0)
    p.add_argument("--restarts", type=int, default=1, help="try this many target rows, keep minimal alpha")
    p.add_argument("--gamma", type=rational, default=0.9)
    p.add_argument("--delta", type=rational, default=1.0 / 3.0)
    p.add_argument("--Delta", type=rational, default=50.0)
    p.add_argument("--eps", type=rational, default=0.0)
    p.add_argument("--g-kind", choices=("relu", "sigmoid"), default="relu")
    p.add_argument("--sign", type=int, choices=(1, -1), default=1)
    p.add_argument("--kappa-margin", type=rational, default=math.log(10.0))
    p.add_argument("--M", type=int, default=1, help="validation-set size used in the bound")
    p.add_argument("--safety-factor", type=rational, default=1.0)
    p.add_argument("--full-space", action="store_true", help="sample x on the full latent sphere")
    p.add_argument("--lambda1", type=rational, default=10.0)
    p.add_argument("--lambda2", type=rational, default=10.0)
    p.add_argument("--p1", type=rational, default=2.0)
    p.add_argument("--p2", type=rational, default=2.0)
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--step0", type=rational, default=None)
    p.add_argument("--step-decay", type=rational, default=1e-3)
    p.add_argument("--alpha-target", type=rational, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--round-inputs", action="store_true")
    p.add_argument("--keep-trace", action="store_true", help="store the full loss trace")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("plant", help="wire an attack neuron into a model")
    p.add_argument("--model", required=True)
    p.add_argument("--neuron", required=True)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    _add_split(p)
    p.add_argument("--layer", type=int, default=None, help="scenario 3 host layer (default cut+1)")
    p.add_argument("--victim", type=int, default=None, help="scenario 3 victim (default: rank 1)")
    p.add_argument("--tie-seed", type=int, default=0)
    p.add_argument("--contribution-inputs", help="inputs on which to measure the victim's former contribution")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plant)

    p = sub.add_parser("verify", help="check stealth constraints")
    p.add_argument("--original", required=True)
    p.add_argument("--planted", required=True)
    _add_split(p)
    p.add_argument("--validation", required=True)
    p.add_argument("--trigger", required=True, help="trigger.json or a vectors file")
    p.add_argument("--latents", action="store_true", help="validation/trigger are latent vectors")
    p.add_argument("--eps", type=rational, default=0.0)
    p.add_argument("--Delta", type=rational, default=50.0)
    p.add_argument("--neuron", help="attack neuron file for the silent-count histogram")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--histogram-csv")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rank", help="susceptibility ranking of a layer")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--tie-seed", type=int, default=0)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("mc", help="Monte Carlo estimate of the success event")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--n-p", dest="n_p", type=int, default=None)
    p.add_argument("--gamma", type=rational, required=True)
    p.add_argument("--delta", type=rational, required=True)
    p.add_argument("--alpha", type=rational, default=0.0)
    p.add_argument("--latent-model", choices=LATENT_MODELS, default="uniform-ball")
    p.add_argument("--M", type=int, default=1)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--fixed-latents")
    p.add_argument("--displacement", choices=("random", "worst"), default="random")
    p.add_argument("--chunk-size", type=int, default=20_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("hash", help="SHA-256 of a model's canonical serialization")
    p.add_argument("model")
    p.set_defaults(func=cmd_hash)

    p = sub.add_parser("gen", help="generate a synthetic model and input sets")
    p.add_argument("--input-dim", type=int, default=256)
    p.add_argument("--widths", default=None, help="comma-separated layer widths")
    p.add_argument("--count", type=int, default=2475, help="validation inputs")
    p.add_argument("--reference-count", type=int, default=25, help="attacker-visible inputs")
    p.add_argument("--prototypes", type=int, default=10)
    p.add_argument("--noise", type=rational, default=0.15)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def _manifest_path(args, argv) -> Optional[Path]:
    if args.manifest:
        return None if args.manifest == os.devnull else Path(args.manifest)
    out = getattr(args, "out", None)
    if out:
        p = Path(out)
        return p / "manifest.json" if args.command in ("attack", "gen") else Path(str(p) + ".manifest.json")
    tag = hashlib.sha256("\0".join(argv).encode()).hexdigest()[:12]
    return Path(os.environ.get(MANIFEST_DIR_ENV, "stealthkit-runs")) / f"{args.command}-{tag}.json"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, "0"))
    ctx = {"seed": seed, "inputs": {}, "outputs": {}, "params": {}}
    started = datetime.now(timezone.utc).isoformat()
    buf = io.StringIO()
    code = EXIT_OK
    try:
        with redirect_stdout(buf):
            code = args.func(args, ctx)
    except UsageError as exc:
        sys.stderr.write(f"stealthkit: error: {exc}\n")
        code = EXIT_USAGE
    except HypothesisError as exc:
        sys.stderr.write(f"stealthkit: hypothesis violated: {exc}\n")
        code = EXIT_HYPOTHESIS
    except (TriggerSearchError, PlantingError, AttackError, ArithmeticError) as exc:
        sys.stderr.write(f"stealthkit: {type(exc).__name__}: {exc}\n")
        code = EXIT_ALGORITHM
    except VerificationFailed as exc:
        sys.stderr.write(f"stealthkit: verification failed: {exc}\n")
        code = EXIT_VERIFY
    except (ModelError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"stealthkit: {type(exc).__name__}: {exc}\n")
        code = EXIT_USAGE
    finally:
        sys.stdout.write(buf.getvalue())
    if args.command != "replay":
        ctx["outputs"][STDOUT_KEY] = hashlib.sha256(buf.getvalue().encode()).hexdigest()
    path = _manifest_path(args, argv)
    if path is not None:
        manifest = {
            "command": args.command,
            "argv": argv,
            "params": {k: v for k, v in vars(args).items() if k != "func" and not callable(v)},
            "resolved": ctx["params"],
            "rng_algorithm": RNG_ALGORITHM,
            "seed": seed,
            "inputs": ctx["inputs"],
            "outputs": ctx["outputs"],
            "exit_code": code,
            "version": __version__,
            "started": started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        except OSError as exc:
            sys.stderr.write(f"stealthkit: could not write manifest {path}: {exc}\n")
            code = code or EXIT_USAGE
    return code


def run() -> None:
    sys.exit(main())
