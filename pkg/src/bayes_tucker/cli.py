"""Command-line entry point: ``synth``, ``decompose``, ``complete``, ``eval``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure. All
work happens before any file is written, so a failing run leaves no
partial outputs.

Report files are ``key value`` lines drawn from a fixed set of keys
(``REPORT_KEYS``); metrics that do not apply are left out.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import bst_io
from .btc import fit_btc
from .btd import fit_btd
from .config import FitConfig
from .evaluation import SynthSpec, block_complete, gen_synthetic, psnr, rrse
from .tensor_core import NumericalFailure, ObservationSet, reconstruct

REPORT_KEYS = (
    "inferred_rank",
    "rrse",
    "psnr",
    "snr_db",
    "iterations",
    "lower_bound_final",
    "runtime_seconds",
)
AUTO_RANK_CAP = 50


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(tok) for tok in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected sizes like 10x10x10, got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return dims


def _rank_arg(text: str):
    return "auto" if text == "auto" else _dims(text)


def _format_dims(dims) -> str:
    return "x".join(str(int(d)) for d in dims)


def _format_report(values: dict) -> str:
    lines = []
    for key in REPORT_KEYS:
        if key not in values:
            continue
        v = values[key]
        if isinstance(v, float):
            v = bst_io.format_value(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        lines.append(f"{key} {v}")
    return "\n".join(lines) + "\n"


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--prior", choices=("student-t", "laplace"), default="student-t")
    p.add_argument("--init-rank", type=_rank_arg, default="auto")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bayes-tucker", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic Tucker tensor")
    p.add_argument("--shape", type=_dims, required=True)
    p.add_argument("--rank", type=_dims, required=True)
    p.add_argument("--snr", type=float, default=math.inf)
    p.add_argument("--mr", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth")

    p = sub.add_parser("decompose", help="fit a fully observed tensor")
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="model file (core plus factors)")
    p.add_argument("--recon", help="optional reconstructed tensor")

    p = sub.add_parser("complete", help="fill missing entries")
    _add_fit_flags(p)
    p.add_argument("--block", type=_dims)
    p.add_argument("--out", required=True, help="predictive mean")
    p.add_argument("--var", help="predictive variance")

    p = sub.add_parser("eval", help="compare an estimate with ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--peak", type=float)
    p.add_argument("--report")
    return parser


def _fit_config(args, shape) -> FitConfig:
    if args.init_rank == "auto":
        rank = tuple(min(s, AUTO_RANK_CAP) for s in shape)
    else:
        rank = args.init_rank
        if len(rank) != len(shape) or any(r > s for r, s in zip(rank, shape)):
            raise UsageError(f"--init-rank {_format_dims(rank)} does not fit shape {_format_dims(shape)}")
    if args.max_iters < 1 or not args.tol >= 0:
        raise UsageError("--max-iters must be >= 1 and --tol >= 0")
    return FitConfig(
        prior=args.prior.replace("-", "_"),
        init_rank=rank,
        max_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
    )


def _read_input(path):
    try:
        return bst_io.read_tensor(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except bst_io.BstFormatError as exc:
        raise UsageError(str(exc)) from None


def _run_synth(args) -> list:
    if len(args.shape) != len(args.rank):
        raise UsageError("--shape and --rank need the same number of modes")
    try:
        spec = SynthSpec(args.shape, args.rank, args.snr, args.mr, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    y, x, obs, _ = gen_synthetic(spec)
    outputs = [(args.out, bst_io.dumps(y, obs))]
    if args.truth:
        outputs.append((args.truth, bst_io.dumps(x)))
    return outputs


def _run_decompose(args) -> list:
    y, obs = _read_input(args.input)
    if not obs.is_full:
        raise UsageError(f"{args.input} has missing entries; use 'complete'")
    config = _fit_config(args, y.shape)
    start = time.perf_counter()
    model, _, report = fit_btd(y, config)
    elapsed = time.perf_counter() - start
    outputs = [(args.out, bst_io.dumps_model(model))]
    if args.recon:
        outputs.append((args.recon, bst_io.dumps(reconstruct(model))))
    if args.report:
        outputs.append((args.report, _format_report({
            "inferred_rank": _format_dims(report.inferred_rank),
            "snr_db": report.estimated_snr_db,
            "iterations": report.iterations,
            "lower_bound_final": report.lower_bound_trace[-1],
            "runtime_seconds": elapsed,
        })))
    return outputs


def _run_complete(args) -> list:
    y, obs = _read_input(args.input)
    if obs.count == 0:
        raise UsageError(f"{args.input} has no observed entries")
    config = _fit_config(args, y.shape)
    start = time.perf_counter()
    values = {}
    if args.block:
        if len(args.block) != y.ndim:
            raise UsageError("--block needs one size per mode")
        pred = block_complete(y, obs, args.block, config)
    else:
        _, _, pred, report = fit_btc(y, obs, config)
        values = {
            "inferred_rank": _format_dims(report.inferred_rank),
            "snr_db": report.estimated_snr_db,
            "iterations": report.iterations,
            "lower_bound_final": report.lower_bound_trace[-1],
        }
    values["runtime_seconds"] = time.perf_counter() - start
    outputs = [(args.out, bst_io.dumps(pred.mean))]
    if args.var:
        outputs.append((args.var, bst_io.dumps(pred.variance)))
    if args.report:
        outputs.append((args.report, _format_report(values)))
    return outputs


def _read_estimate(path):
    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if bst_io.is_model_text(text):
            model = bst_io.loads_model(text, path)
            return reconstruct(model), model.rank
        return bst_io.loads(text, path)[0], None
    except bst_io.BstFormatError as exc:
        raise UsageError(str(exc)) from None


def _run_eval(args) -> list:
    est, rank = _read_estimate(args.est)
    truth, truth_obs = _read_input(args.truth)
    if est.shape != truth.shape:
        raise UsageError(f"estimate shape {est.shape} differs from truth {truth.shape}")
    if not truth_obs.is_full or np.isnan(est).any():
        raise UsageError("eval needs fully specified tensors")
    if args.peak is not None and not args.peak > 0:
        raise UsageError("--peak must be positive")
    if not np.any(truth):
        raise UsageError("truth tensor is identically zero")
    values = {"rrse": rrse(est, truth)}
    if rank is not None:
        values["inferred_rank"] = _format_dims(rank)
    if args.peak is not None:
        values["psnr"] = psnr(est, truth, args.peak)
    text = _format_report(values)
    return [(args.report, text)] if args.report else [(None, text)]


_COMMANDS = {
    "synth": _run_synth,
    "decompose": _run_decompose,
    "complete": _run_complete,
    "eval": _run_eval,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        outputs = _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bayes-tucker: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"bayes-tucker: numerical failure: {exc}", file=sys.stderr)
        return 2
    for path, text in outputs:
        if path is None:
            sys.stdout.write(text)
        else:
            bst_io.write_text(path, text)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
