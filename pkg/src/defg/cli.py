"""``defg`` command line: validate, run, gen, experiment, plot.

Exit codes: 0 success, 1 validation failure, 2 SPA hard error,
3 I/O or parse error, 4 SPA ran but did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gen
from .bethe import solve
from .errors import BudgetExceededError, DefgError, GraphSchemaError
from .exact import exact_marginal, exact_partition_sum
from .graph import load_graph, validate_psd, validate_structure, write_graph
from .spa import SpaConfig, beliefs

log = logging.getLogger("defg")

EXIT_OK, EXIT_INVALID, EXIT_SPA, EXIT_IO, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4

FAMILIES = ("cycle-random", "cycle-chord-random", "permanent-random")
CSV_COLUMNS = (
    "seed", "z_exact_re", "z_exact_im", "z_bethe_re", "z_bethe_im",
    "ratio", "iterations", "converged", "wall_time_ms", "error",
)
RATIO_TOL = 1e-12
# flooding is periodic on the permanent graph, so that family defaults to damping
PERMANENT_DAMPING = 0.5


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def _c(z: complex) -> str:
    return f"{z.real:.12g}{z.imag:+.3g}j"


# -- experiments -----------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    family: str
    samples: int = 1000
    n: int = 4
    q: int = 2
    base_seed: int = 0
    spa: SpaConfig = field(default_factory=SpaConfig)
    chord: tuple[int, int] | None = (0, 2)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.family == "cycle-random" and (self.n < 2 or self.q < 2):
            raise ValueError("cycle-random needs n >= 2 and q >= 2")
        if self.family == "cycle-chord-random" and self.q < 2:
            raise ValueError("cycle-chord-random needs q >= 2")
        if self.family == "permanent-random" and not 1 <= self.n <= 7:
            raise ValueError("permanent-random needs 1 <= n <= 7")


def build_instance(spec: ExperimentSpec, seed: int):
    rng = gen.make_rng(seed)
    if spec.family == "cycle-random":
        return gen.cycle_denfg(gen.random_cycle_factor(rng, spec.q), spec.n)
    if spec.family == "cycle-chord-random":
        return gen.cycle_with_chord_denfg(rng, spec.q, spec.chord)
    return gen.random_permanent_denfg(rng, spec.n)


def run_sample(spec: ExperimentSpec, i: int, timing: bool = False) -> dict:
    """One experiment row; failures land in the ``error`` field instead of raising."""
    seed = spec.base_seed + i
    rec = {"seed": seed, "z_exact": None, "z_bethe": None, "ratio": None,
           "iterations": None, "converged": False, "wall_time_ms": None, "error": ""}
    t0 = time.perf_counter()
    try:
        g = build_instance(spec, seed)
        z = exact_partition_sum(g)
        rec["z_exact"] = z
        res = solve(g, spec.spa)
        rec["z_bethe"], rec["iterations"], rec["converged"] = res.z_bethe, res.iterations, res.converged
        zb = res.z_bethe
        if z.real > RATIO_TOL * abs(z) and zb.real > RATIO_TOL * abs(zb):
            rec["ratio"] = zb.real / z.real
    except (DefgError, ValueError, ArithmeticError) as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    if timing:
        rec["wall_time_ms"] = 1000.0 * (time.perf_counter() - t0)
    return rec


def _row(rec: dict) -> list[str]:
    ze, zb = rec["z_exact"], rec["z_bethe"]
    return [
        str(rec["seed"]),
        _fmt(None if ze is None else ze.real), _fmt(None if ze is None else ze.imag),
        _fmt(None if zb is None else zb.real), _fmt(None if zb is None else zb.imag),
        _fmt(rec["ratio"]),
        "" if rec["iterations"] is None else str(rec["iterations"]),
        "true" if rec["converged"] else "false",
        _fmt(rec["wall_time_ms"]),
        rec["error"],
    ]


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow(_row(rec))
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec, workers: int = 1, timing: bool = False) -> list[dict]:
    """All samples in seed order; with ``workers > 1`` they run on a process pool."""
    idx = range(spec.samples)
    if workers <= 1:
        return [run_sample(spec, i, timing) for i in idx]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_sample, [spec] * spec.samples, idx, [timing] * spec.samples,
                             chunksize=max(1, spec.samples // (8 * workers))))


def summarize(records) -> dict:
    ratios = np.array([r["ratio"] for r in records if r["converged"] and r["ratio"] is not None])
    out = {
        "samples": len(records),
        "converged": sum(1 for r in records if r["converged"]),
        "errors": sum(1 for r in records if r["error"]),
        "ratio_quantiles": None,
        "ratio_above_one": None,
    }
    if ratios.size:
        out["ratio_quantiles"] = dict(zip(("min", "q25", "median", "q75", "max"),
                                          np.quantile(ratios, [0, 0.25, 0.5, 0.75, 1]).tolist()))
        out["ratio_above_one"] = float(np.mean(ratios > 1.0))
    return out


def _print_summary(s: dict, out) -> None:
    n = s["samples"]
    print(f"samples: {n}", file=out)
    print(f"converged: {s['converged']} ({100.0 * s['converged'] / n:.1f}%)", file=out)
    print(f"errors: {s['errors']}", file=out)
    q = s["ratio_quantiles"]
    if q is None:
        print("ratio Z_Bethe/Z: no usable samples", file=out)
        return
    print("ratio Z_Bethe/Z: " + "  ".join(f"{k}={v:.6g}" for k, v in q.items()), file=out)
    print(f"fraction of ratios above 1: {s['ratio_above_one']:.3f}", file=out)


# -- SVG scatter -----------------------------------------------------------------


def scatter_points(csv_text: str) -> list[tuple[float, float]]:
    """(Z, Z_Bethe) real parts of usable rows: no error and both positive."""
    pts = []
    for row in csv.DictReader(io.StringIO(csv_text)):
        if row["error"] or not row["z_exact_re"] or not row["z_bethe_re"]:
            continue
        z, zb = float(row["z_exact_re"]), float(row["z_bethe_re"])
        if z > 0 and zb > 0:
            pts.append((z, zb))
    return pts


def scatter_svg(csv_text: str, title: str = "") -> str:
    """Log-log scatter of Z_Bethe against Z with the diagonal, drawn from CSV text alone."""
    pts = scatter_points(csv_text)
    size, pad = 480, 60
    if pts:
        logs = np.log10(np.array(pts))
        lo, hi = math.floor(logs.min()), math.ceil(logs.max())
    else:
        logs, lo, hi = np.zeros((0, 2)), 0, 1
    hi = max(hi, lo + 1)
    span = size - 2 * pad

    def sx(v):
        return pad + (v - lo) / (hi - lo) * span

    def sy(v):
        return size - pad - (v - lo) / (hi - lo) * span

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
    ]
    for d in range(lo, hi + 1):
        out.append(f'<line x1="{sx(d):.3f}" y1="{size - pad}" x2="{sx(d):.3f}" y2="{size - pad + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(d):.3f}" y="{size - pad + 18}" font-size="11" text-anchor="middle">1e{d}</text>')
        out.append(f'<line x1="{pad - 5}" y1="{sy(d):.3f}" x2="{pad}" y2="{sy(d):.3f}" stroke="black"/>')
        out.append(f'<text x="{pad - 8}" y="{sy(d) + 4:.3f}" font-size="11" text-anchor="end">1e{d}</text>')
    out.append(
        f'<line x1="{sx(lo):.3f}" y1="{sy(lo):.3f}" x2="{sx(hi):.3f}" y2="{sy(hi):.3f}" '
        'stroke="gray" stroke-dasharray="4 3"/>'
    )
    for a, b in logs:
        out.append(f'<circle cx="{sx(a):.3f}" cy="{sy(b):.3f}" r="1.5" fill="steelblue" fill-opacity="0.6"/>')
    out.append(f'<text x="{size / 2:.1f}" y="{size - 15}" font-size="13" text-anchor="middle">Z</text>')
    out.append(
        f'<text x="15" y="{size / 2:.1f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 15 {size / 2:.1f})">Z_Bethe</text>'
    )
    if title:
        out.append(f'<text x="{size / 2:.1f}" y="30" font-size="14" text-anchor="middle">{title}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- commands --------------------------------------------------------------------


def _read_graph(path):
    """(graph, exit code); the code is nonzero when the file cannot be used."""
    try:
        text = Path(path).read_text()
        json.loads(text)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return None, EXIT_IO
    try:
        return load_graph(text), EXIT_OK
    except GraphSchemaError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return None, EXIT_INVALID


def cmd_validate(args) -> int:
    g, code = _read_graph(args.file)
    if g is None:
        return code
    problems = validate_structure(g) + validate_psd(g, args.psd_tol)
    for p in problems:
        print(p)
    if problems:
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


def _spa_config(args, damping_default: float = 0.0) -> SpaConfig:
    damping = damping_default if args.damping is None else args.damping
    return SpaConfig(max_iters=args.max_iters, conv_tol=args.tol, damping=damping, verify=args.verify)


def cmd_run(args) -> int:
    g, code = _read_graph(args.file)
    if g is None:
        return code
    problems = validate_psd(g)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = _spa_config(args)
        res = solve(g, cfg, init=args.init, seed=args.seed)
    except (DefgError, ArithmeticError) as exc:
        print(f"spa error: {exc}", file=sys.stderr)
        return EXIT_SPA
    r = res.residuals
    print(f"iterations: {res.iterations}")
    print(f"converged: {'yes' if res.converged else 'no'}")
    print(f"residual: first {r[0]:.3e}  min {min(r):.3e}  last {r[-1]:.3e}")
    bd = res.breakdown
    for fid, v in bd.z_f.items():
        print(f"Z_f[{fid}] = {_c(v)}")
    for eid, v in bd.z_e.items():
        print(f"Z_e[{eid}] = {_c(v)}")
    print(f"Z_Bethe = {_c(res.z_bethe)}")
    if args.beliefs:
        with np.printoptions(precision=6, suppress=True):
            for eid, b in beliefs(g, res.state).items():
                print(f"belief[{eid}] =\n{b}")
    if args.exact:
        try:
            z = exact_partition_sum(g)
        except BudgetExceededError as exc:
            print(f"exact: {exc}", file=sys.stderr)
        else:
            print(f"Z = {_c(z)}")
            if abs(z) > 0:
                print(f"Z_Bethe / Z = {_c(res.z_bethe / z)}")
            if args.beliefs:
                with np.printoptions(precision=6, suppress=True):
                    for eid in g.edges:
                        print(f"marginal[{eid}] =\n{exact_marginal(g, eid)}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _parse_chord(text: str):
    if text.lower() == "none":
        return None
    a, b = (int(v) for v in text.split(","))
    return a, b


def cmd_gen(args) -> int:
    rng = gen.make_rng(args.seed)
    try:
        if args.family == "cycle":
            g = gen.cycle_denfg(gen.random_cycle_factor(rng, args.q), args.n)
        elif args.family == "cycle-chord":
            g = gen.cycle_with_chord_denfg(rng, args.q, _parse_chord(args.chord))
        elif args.family == "permanent":
            if args.case == "random":
                g = gen.random_permanent_denfg(rng, args.n)
            else:
                # non-negative theta keeps the diagonal construction PSD
                theta = rng.uniform(0.0, 1.0, (args.n, args.n))
                build = gen.theta_tilde_diagonal if args.case == "diagonal" else gen.theta_tilde_rank_one
                if args.case == "rank-one":
                    theta = theta * np.exp(2j * np.pi * rng.uniform(size=theta.shape))
                g = gen.permanent_denfg(build(theta))
        elif args.family == "quantum":
            if args.demo:
                qs = gen.demo_quantum_chain_spec()
            else:
                qs = gen.random_quantum_chain_spec(rng, args.dim, args.outcomes)
            g = gen.quantum_chain_denfg(qs)
        elif args.family == "tree":
            g = gen.random_tree_denfg(rng, args.factors)
        else:
            g = gen.random_denfg(rng, args.factors, extra_edges=args.extra)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        write_graph(g, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {args.out}: {len(g.factors)} factors, {len(g.edges)} edges")
    return EXIT_OK


def cmd_experiment(args) -> int:
    perm = args.family == "permanent-random"
    try:
        spec = ExperimentSpec(
            family=args.family,
            samples=args.samples if args.samples is not None else (200 if perm else 1000),
            n=args.n if args.n is not None else (5 if perm else 4),
            q=args.q,
            base_seed=args.seed,
            spa=_spa_config(args, PERMANENT_DAMPING if perm else 0.0),
            chord=_parse_chord(args.chord),
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    records = run_experiment(spec, workers=args.workers, timing=args.timing)
    text = records_to_csv(records)
    try:
        if args.csv:
            Path(args.csv).write_text(text)
        if args.svg:
            Path(args.svg).write_text(scatter_svg(text))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    _print_summary(summarize(records), sys.stdout)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        text = Path(args.csv).read_text()
        svg = scatter_svg(text, title=args.title)
        Path(args.svg).write_text(svg)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _add_spa_flags(p, damping_help="message damping in [0, 1)"):
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-10, help="convergence threshold on the max L1 message change")
    p.add_argument("--damping", type=float, default=None, help=damping_help)
    p.add_argument("--verify", action="store_true", help="check message invariants every iteration")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="defg", description="Sum-product and Bethe partition sums on double-edge factor graphs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a graph file for structural and PSD violations")
    p.add_argument("file")
    p.add_argument("--psd-tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the SPA on a graph file and report Z_Bethe")
    p.add_argument("file")
    p.add_argument("--exact", action="store_true", help="also compute the exact partition sum")
    p.add_argument("--beliefs", action="store_true")
    p.add_argument("--init", choices=("uniform", "delta", "seeded"), default="uniform")
    p.add_argument("--seed", type=int, default=None)
    _add_spa_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="write a generated graph as JSON")
    p.add_argument("family", choices=("cycle", "cycle-chord", "permanent", "quantum", "tree", "random"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--chord", default="0,2", help="chord endpoints as 'a,b', or 'none'")
    p.add_argument("--case", choices=("random", "diagonal", "rank-one"), default="random")
    p.add_argument("--demo", action="store_true", help="quantum: fixed Hadamard demo chain")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--outcomes", type=int, default=2)
    p.add_argument("--factors", type=int, default=5)
    p.add_argument("--extra", type=int, default=1, help="random: cycle-closing edges on top of a tree")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("experiment", help="Monte-Carlo comparison of Z_Bethe against the exact Z")
    p.add_argument("family", choices=FAMILIES)
    p.add_argument("--samples", type=int, default=None, help="default 1000, or 200 for permanent-random")
    p.add_argument("--n", type=int, default=None, help="default 4, or 5 for permanent-random")
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--seed", type=int, default=0, help="base seed; sample i uses seed + i")
    p.add_argument("--chord", default="0,2", help="cycle-chord-random: chord endpoints 'a,b' or 'none'")
    p.add_argument("--csv")
    p.add_argument("--svg")
    p.add_argument("--timing", action="store_true", help="fill wall_time_ms (makes the CSV run-dependent)")
    p.add_argument("--workers", type=int, default=1)
    _add_spa_flags(p, "message damping; default 0, or 0.5 for permanent-random")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="redraw the SVG scatter from an experiment CSV")
    p.add_argument("csv")
    p.add_argument("svg")
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
