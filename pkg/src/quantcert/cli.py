"""Command-line interface.

Subcommands::

    quantcert gen          random network -> model file
    quantcert quantize     model file -> quantized model file (+ size report)
    quantcert merge        model + quantized model -> merged difference network
    quantcert bound        certified error bound (+ optional band CSV)
    quantcert repro-paper  end-to-end 1x50x50x50x1 experiment
    quantcert report       summarize model / certificate files

Exit status is 0 when every produced certificate passes its self-check, 1
when a check fails, and 2 for usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import QuantcertError
from .interval import Box
from .kernels import BACKEND
from .merge import merge, merged_shape_report
from .network import Activation, Network, load_model, model_size_bytes, random_network, save_model
from .quantization import (
    QuantizedNetwork,
    load_quantized,
    parse_policy,
    quantization_stats,
    quantize_network,
    save_quantized,
)
from .solver import (
    METHODS,
    Budget,
    ErrorCertificate,
    bound_band,
    certificate_problems,
    exact_reach_1d,
    grid_lower_bound,
    moore_skelboe,
)

log = logging.getLogger("quantcert")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2
CROSS_METHOD_TOL = 1e-9


class CheckFailed(Exception):
    pass


def _provenance(args: argparse.Namespace) -> dict[str, Any]:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()}
    prov = {"tool": "quantcert", "version": __version__, "command": args.command, "flags": flags}
    if getattr(args, "seed", None) is not None:
        prov["seed"] = args.seed
    return prov


def _write(path: Path | None, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if path is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        log.info("wrote %s", path)


def _distinct(out: Path | None, *inputs: Path | None) -> None:
    if out is None:
        return
    for p in inputs:
        if p is not None and out.resolve() == p.resolve():
            raise QuantcertError(f"output path {out} would overwrite input {p}")


def _dims(text: str) -> list[int]:
    try:
        dims = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}; expected e.g. 1,50,50,50,1") from None
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise argparse.ArgumentTypeError(f"dims need at least two positive entries, got {text!r}")
    return dims


def _budget(args) -> Budget:
    seconds = args.max_seconds
    env = os.environ.get("QUANTCERT_BUDGET_MS")
    if env:
        seconds = float(env) / 1e3
    return Budget(max_boxes=args.max_boxes, max_seconds=seconds)


def _load_pair(args) -> tuple[Network, QuantizedNetwork]:
    phi = load_model(args.model.read_bytes())
    if getattr(args, "qmodel", None) is not None:
        q = load_quantized(args.qmodel.read_bytes(), origin=phi)
    elif getattr(args, "quant", None) is not None:
        q = quantize_network(phi, parse_policy(args.quant))
    else:
        raise QuantcertError("give either --qmodel or --quant")
    return phi, q


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    net = random_network(args.dims, args.act, args.seed)
    _write(args.out, save_model(net, _provenance(args)))
    log.info("generated %s with %d parameters", net, net.n_params)
    return EXIT_OK


def _size_lines(report) -> list[str]:
    saved = 1.0 - report.compressed_bytes / report.original_bytes
    return [
        f"original  (float32):        {report.original_bytes:>9d} bytes",
        f"quantized ({report.storage}): {report.compressed_bytes:>9d} bytes ({saved:.1%} smaller)",
        f"max parameter perturbation: {report.max_perturbation:.3e}",
    ]


def cmd_quantize(args) -> int:
    _distinct(args.out, args.model)
    phi = load_model(args.model.read_bytes())
    q = quantize_network(phi, parse_policy(args.quant))
    _write(args.out, save_quantized(q, _provenance(args)))
    report = quantization_stats(q)
    if args.report is not None:
        _write(args.report, json.dumps(report.to_dict(), indent=1) + "\n")
    for line in _size_lines(report):
        print(line, file=sys.stderr)
    return EXIT_OK


def cmd_merge(args) -> int:
    _distinct(args.out, args.model, args.qmodel)
    phi, q = _load_pair(args)
    m = merge(phi, q)
    prov = _provenance(args)
    prov["source_dims"] = list(m.source_dims)
    _write(args.out, save_model(m.net, prov))
    shape = merged_shape_report(m)
    print(f"merged widths {shape['widths']}, block structure ok: {shape['block_structure_ok']}", file=sys.stderr)
    return EXIT_OK


def _solve(method, m, box, args, budget) -> ErrorCertificate:
    if method == "moore-skelboe":
        return moore_skelboe(m, box, args.norm, args.eps, budget, workers=args.workers)
    if method == "exact-1d":
        return exact_reach_1d(m, box, args.norm)[1]
    return grid_lower_bound(m, box, args.norm, args.grid_points, budget)


def _print_cert(cert: ErrorCertificate, stream=sys.stderr) -> None:
    hi = f"{cert.hi:.10g}" if cert.certified else "uncertified"
    flag = " (budget exhausted)" if cert.stats.budget_exhausted else ""
    print(
        f"{cert.method:>13}: lo={cert.lo:.10g} hi={hi} boxes={cert.stats.boxes_processed} "
        f"time={cert.stats.wall_time:.2f}s{flag}",
        file=stream,
    )


def cmd_bound(args) -> int:
    _distinct(args.out, args.model, args.qmodel)
    _distinct(args.band, args.model, args.qmodel)
    phi, q = _load_pair(args)
    m = merge(phi, q)
    box = Box.parse(args.input_box, phi.input_dim)
    cert = _solve(args.method, m, box, args, _budget(args))
    _print_cert(cert)
    if not cert.certified:
        log.warning("grid method gives an uncertified lower bound only")
    if cert.stats.budget_exhausted:
        log.warning("budget exhausted: gap %.3g exceeds eps %.3g", cert.gap, cert.eps_target)
    _write(args.out, cert.to_json(_provenance(args)))
    problems = certificate_problems(cert, m, box)
    if args.band is not None:
        if not cert.certified:
            raise QuantcertError("a band needs a certified bound; use moore-skelboe or exact-1d")
        samples = _band_samples(box, args.band_points)
        band = bound_band(phi, cert, samples, q, box)
        _write(args.band, band.to_csv())
        if band.violations:
            problems.append(f"{band.violations} band violations")
    for p in problems:
        log.error("certificate check failed: %s", p)
    return EXIT_CHECK_FAILED if problems else EXIT_OK


def _band_samples(box: Box, n: int) -> np.ndarray:
    if len(box) == 1:
        return np.linspace(box.lo[0], box.hi[0], n)[:, None]
    return box.sample(np.random.default_rng(0), n)


def cmd_repro_paper(args) -> int:
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(args)
    w = args.width
    dims = [1, w, w, w, 1]
    phi = random_network(dims, Activation.RELU, args.seed)
    q = quantize_network(phi, parse_policy("truncate:4"))
    m = merge(phi, q)
    box = Box.unit(1)
    _write(out / "phi.json", save_model(phi, prov))
    _write(out / "phi_q.json", save_quantized(q, prov))
    _write(out / "merged.json", save_model(m.net, {**prov, "source_dims": dims}))

    path, exact = exact_reach_1d(m, box, args.norm)
    _print_cert(exact)
    ms = moore_skelboe(m, box, args.norm, args.eps, _budget(args), workers=args.workers)
    _print_cert(ms)
    _write(out / "cert_exact.json", exact.to_json(prov))
    _write(out / "cert_ms.json", ms.to_json(prov))

    band = bound_band(phi, ms, np.linspace(0.0, 1.0, args.band_points)[:, None], q, box)
    _write(out / "band.csv", band.to_csv())

    rho = exact.lo
    problems = certificate_problems(exact, m, box) + certificate_problems(ms, m, box)
    if not (ms.lo - CROSS_METHOD_TOL <= rho <= ms.hi + CROSS_METHOD_TOL):
        problems.append(f"exact rho {rho} outside moore-skelboe enclosure [{ms.lo}, {ms.hi}]")
    if band.violations:
        problems.append(f"{band.violations} band violations")

    stats = quantization_stats(q)
    summary = {
        "provenance": prov,
        "dims": dims,
        "quantization": "truncate:4",
        "backend": BACKEND,
        "rho_exact": rho,
        "moore_skelboe": {"lo": ms.lo, "hi": ms.hi, "gap": ms.gap, "boxes": ms.stats.boxes_processed,
                          "budget_exhausted": ms.stats.budget_exhausted},
        "breakpoints": len(path),
        "band_points": args.band_points,
        "band_violations": band.violations,
        "sizes_bytes": {
            "float64": model_size_bytes(phi, "float64"),
            "float32": model_size_bytes(phi, "float32"),
            "int8-affine": model_size_bytes(phi, "int8-affine"),
            f"quantized ({stats.storage})": stats.compressed_bytes,
        },
        "max_parameter_perturbation": stats.max_perturbation,
        "checks_passed": not problems,
        "problems": problems,
    }
    _write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"rho (exact-1d)       = {rho:.10g}", file=sys.stderr)
    print(f"rho (moore-skelboe) in [{ms.lo:.10g}, {ms.hi:.10g}]", file=sys.stderr)
    for p in problems:
        log.error("check failed: %s", p)
    return EXIT_CHECK_FAILED if problems else EXIT_OK


def cmd_report(args) -> int:
    problems = []
    if args.model is not None:
        phi = load_model(args.model.read_bytes())
        print(f"model: {phi}, {phi.n_params} parameters")
        for storage in ("float64", "float32", "int16-affine", "int8-affine"):
            print(f"  {storage:>13}: {model_size_bytes(phi, storage):>9d} bytes")
        if args.qmodel is not None:
            q = load_quantized(args.qmodel.read_bytes(), origin=phi)
            for line in _size_lines(quantization_stats(q)):
                print("  " + line)
            m = merge(phi, q)
            shape = merged_shape_report(m)
            print(f"  merged widths {shape['widths']}, block structure ok: {shape['block_structure_ok']}")
    for path in args.cert or []:
        cert = ErrorCertificate.from_dict(json.loads(path.read_text()))
        print(f"certificate {path}:")
        _print_cert(cert, sys.stdout)
        for p in certificate_problems(cert):
            problems.append(f"{path}: {p}")
    for p in problems:
        log.error("check failed: %s", p)
    return EXIT_CHECK_FAILED if problems else EXIT_OK


# -- argument parsing ------------------------------------------------------------

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--norm", choices=("linf", "l2"), default="linf")
    p.add_argument("--eps", type=float, default=1e-4, help="target gap hi - lo (default 1e-4)")
    p.add_argument("--max-boxes", type=int, default=10**6)
    p.add_argument("--max-seconds", type=float, default=60.0,
                   help="wall-time budget; QUANTCERT_BUDGET_MS overrides")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantcert", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"quantcert {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random network")
    p.add_argument("--dims", type=_dims, required=True, help="comma separated layer sizes")
    p.add_argument("--act", default="relu", choices=[a.value for a in Activation])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("quantize", help="quantize weights and biases")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--quant", required=True, help="truncate:<digits> or affine:<bits>")
    p.add_argument("--out", type=Path)
    p.add_argument("--report", type=Path, help="write a JSON size/perturbation report")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("merge", help="build the merged difference network")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--qmodel", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("bound", help="bound the worst-case quantization error")
    p.add_argument("--model", type=Path, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--qmodel", type=Path)
    g.add_argument("--quant")
    p.add_argument("--input-box", default="0:1", help="lo:hi (broadcast) or lo:hi,lo:hi,...")
    p.add_argument("--method", choices=METHODS, default="moore-skelboe")
    p.add_argument("--grid-points", type=int, default=1001, help="points per axis for --method grid")
    _add_solver_flags(p)
    p.add_argument("--out", type=Path)
    p.add_argument("--band", type=Path, help="write the bound band as CSV")
    p.add_argument("--band-points", type=int, default=500)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("repro-paper", help="run the 1x50x50x50x1 truncation experiment end to end")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", type=Path, default=Path("repro-out"))
    p.add_argument("--width", type=int, default=50)
    p.add_argument("--band-points", type=int, default=500)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_repro_paper, max_boxes=10**8, max_seconds=1800.0)

    p = sub.add_parser("report", help="summarize model and certificate files")
    p.add_argument("--model", type=Path)
    p.add_argument("--qmodel", type=Path)
    p.add_argument("--cert", type=Path, action="append")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    if getattr(args, "eps", 1.0) <= 0:
        parser.error("--eps must be positive")
    try:
        return args.func(args)
    except (QuantcertError, OSError, ValueError) as exc:
        print(f"quantcert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
