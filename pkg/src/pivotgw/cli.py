"""Command-line interface.

Subcommands: fixed-points, classify, sweep, simulate, oracle. Configs are
JSON documents naming an automaton (inline or by path) and a child
distribution; commands add their own sections. Exit codes: 0 ok, 1
computation error, 2 config error, 3 partial results.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import automata, offspring, pivot, simulate
from .distmap import StateDistribution
from .errors import ConfigError, InvalidInputError, PivotgwError
from .fixedpoints import find_fixed_points_2state, find_fixed_points_kstate

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

CSV_FLOAT = "{:.12g}"


def _fmt(x) -> str:
    if isinstance(x, float):
        return CSV_FLOAT.format(x)
    return str(x)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return doc


def _load_automaton(doc: dict, config_dir: str):
    node = doc.get("automaton")
    if node is None:
        raise ConfigError("config needs an 'automaton' (inline object or path)")
    if isinstance(node, str):
        path = node if os.path.isabs(node) else os.path.join(config_dir, node)
        try:
            with open(path) as fh:
                node = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read automaton file {path}: {exc}") from exc
    try:
        return automata.spec_from_json(node)
    except InvalidInputError as exc:
        raise ConfigError(f"bad automaton spec: {exc}") from exc


def _load_distribution(doc: dict):
    node = doc.get("distribution")
    if node is None:
        raise ConfigError("config needs a 'distribution'")
    try:
        return offspring.from_config(node)
    except InvalidInputError as exc:
        raise ConfigError(f"bad distribution: {exc}") from exc


def _find_roots(spec, chi, args):
    if spec.k == 2:
        return find_fixed_points_2state(spec, chi, grid_size=args.grid,
                                        tol=args.tol, eps=args.eps)
    return list(find_fixed_points_kstate(spec, chi, tol=args.tol,
                                         eps=args.eps).records)


def _resolve_nu(doc: dict, spec, chi, args) -> StateDistribution:
    if "nu" in doc:
        weights = doc["nu"]
        if not isinstance(weights, list) or len(weights) != spec.k:
            raise ConfigError(f"'nu' must list {spec.k} probabilities")
        try:
            return StateDistribution(tuple(float(w) for w in weights))
        except InvalidInputError as exc:
            raise ConfigError(f"bad 'nu': {exc}") from exc
    if "root_index" in doc:
        idx = doc["root_index"]
        records = _find_roots(spec, chi, args)
        if not isinstance(idx, int) or not 0 <= idx < len(records):
            raise ConfigError(
                f"root_index {idx!r} out of range (found {len(records)} roots)")
        return records[idx].nu
    raise ConfigError("config needs 'nu' or 'root_index'")


# ---------------------------------------------------------------------------
# fixed-points

def cmd_fixed_points(args) -> int:
    doc = _load_config(args.config)
    spec = _load_automaton(doc, os.path.dirname(args.config))
    chi = _load_distribution(doc)
    records = _find_roots(spec, chi, args)
    header = ["root_index"] + [f"nu_{c}" for c in spec.colours] + [
        "residual", "multiplicity", "support_full"]
    rows = []
    for i, rec in enumerate(records):
        rows.append([i] + [_fmt(w) for w in rec.nu.weights]
                    + [_fmt(rec.residual), rec.multiplicity_hint,
                       str(rec.support_full).lower()])
    _print_table(header, rows)
    if spec.k != 2:
        print("# completeness not guaranteed for k >= 3")
    if args.out:
        _write_csv(args.out, header, rows)
    return EXIT_OK


def _print_table(header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# classify

def cmd_classify(args) -> int:
    doc = _load_config(args.config)
    spec = _load_automaton(doc, os.path.dirname(args.config))
    chi = _load_distribution(doc)
    nu = _resolve_nu(doc, spec, chi, args)
    analysis, vd = pivot.analyze(spec, chi, nu, eps=args.eps)
    print("fixed point:", " ".join(
        f"{c}={_fmt(w)}" for c, w in zip(spec.colours, nu.weights)))
    print("support colours:", ",".join(spec.colours[i] for i in analysis.support))
    print("pivotal types:", "; ".join(
        simulate.type_key(t.colour, t.b_set) for t in analysis.types) or "(none)")
    if analysis.mean_matrix.size:
        print("mean matrix:")
        for row in analysis.mean_matrix:
            print("   ", "  ".join(_fmt(v) for v in row))
    print(f"spectral radius: {_fmt(analysis.spectral_radius)}")
    print(f"criticality: {analysis.criticality} (band {_fmt(analysis.band)}, "
          f"deficit {_fmt(analysis.deficit)})")
    print(f"verdict: {vd.status} ({vd.criterion})")
    for note in vd.notes:
        print("note:", note)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

SWEEP_BASE_HEADER = ["lambda", "root_index"]
SWEEP_TAIL_HEADER = ["rho", "class", "verdict", "residual", "deficit", "errors"]


def _sweep_point(spec, chi_of, lam, args):
    rows = []
    try:
        records = _find_roots(spec, chi_of(lam), args)
    except PivotgwError as exc:
        return [[_fmt(lam), 0] + [""] * spec.k + ["", "", "", "", "", str(exc)]]
    for i, rec in enumerate(records):
        err = ""
        rho = crit = verdict_status = ""
        try:
            analysis, vd = pivot.analyze(spec, chi_of(lam), rec.nu, eps=args.eps)
            rho = _fmt(analysis.spectral_radius)
            crit = analysis.criticality
            verdict_status = vd.status
            deficit = _fmt(analysis.deficit)
        except PivotgwError as exc:
            err = str(exc)
            deficit = ""
        rows.append([_fmt(lam), i] + [_fmt(w) for w in rec.nu.weights]
                    + [rho, crit, verdict_status, _fmt(rec.residual), deficit, err])
    return rows


def cmd_sweep(args) -> int:
    doc = _load_config(args.config)
    spec = _load_automaton(doc, os.path.dirname(args.config))
    dist_node = doc.get("distribution")
    if not (isinstance(dist_node, dict) and dist_node.get("family") == "poisson"):
        raise ConfigError("sweep requires a poisson distribution template")
    sweep = doc.get("sweep")
    if not isinstance(sweep, dict):
        raise ConfigError("config needs a 'sweep' section {lo, hi, step}")
    try:
        lo, hi, step = float(sweep["lo"]), float(sweep["hi"]), float(sweep["step"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad sweep section: {exc}") from exc
    if not (lo < hi and step > 0):
        raise ConfigError("sweep needs lo < hi and step > 0")
    if not args.out:
        raise ConfigError("sweep needs --out (directory for csv and tables)")
    os.makedirs(args.out, exist_ok=True)

    lams = []
    lam = lo
    n = 0
    while lam <= hi + step * 1e-9:
        lams.append(round(lo + n * step, 12))
        n += 1
        lam = lo + n * step

    def chi_of(lam):
        return offspring.Poisson(lam)

    def work(lam):
        return _sweep_point(spec, chi_of, lam, args)

    if args.threads and args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            chunks = list(pool.map(work, lams))
    else:
        chunks = [work(lam) for lam in lams]

    header = SWEEP_BASE_HEADER + [f"nu_{c}" for c in spec.colours] + SWEEP_TAIL_HEADER
    rows = [row for chunk in chunks for row in chunk]
    csv_path = os.path.join(args.out, "sweep.csv")
    _write_csv(csv_path, header, rows)
    n_tables = _write_branch_tables(args.out, spec, rows)
    print(f"wrote {csv_path} ({len(rows)} rows) and {n_tables} branch tables")
    return EXIT_OK


def _write_branch_tables(outdir, spec, rows) -> int:
    """One `lambda p` table per (branch, verdict) segment, for plotting.

    Branches follow the root index at each rate; p is the weight of the last
    colour (two-state convention). Concatenating every table and re-sorting
    reproduces exactly the CSV's (lambda, p) pairs.
    """
    branches: dict = {}
    for row in rows:
        if row[-1]:
            continue  # errored points carry no plottable value
        lam = float(row[0])
        idx = int(row[1])
        p = float(row[2 + spec.k - 1])
        verdict_status = row[2 + spec.k + 2] or "unclassified"
        branches.setdefault(idx, []).append((lam, p, verdict_status))
    count = 0
    for idx, pts in sorted(branches.items()):
        pts.sort()
        seg = []
        seg_verdict = None
        seg_no = 0

        def flush():
            nonlocal seg, seg_no, count
            if not seg:
                return
            name = f"branch{idx}_{seg_verdict}_{seg_no:02d}.table"
            with open(os.path.join(outdir, name), "w") as fh:
                for lam, p in seg:
                    fh.write(f"{_fmt(lam)} {_fmt(p)}\n")
            seg = []
            seg_no += 1
            count += 1

        for lam, p, v in pts:
            if seg_verdict is None:
                seg_verdict = v
            if v != seg_verdict:
                flush()
                seg_verdict = v
            seg.append((lam, p))
        flush()
    return count


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    doc = _load_config(args.config)
    spec = _load_automaton(doc, os.path.dirname(args.config))
    chi = _load_distribution(doc)
    sim_doc = doc.get("simulate")
    if not isinstance(sim_doc, dict):
        raise ConfigError("config needs a 'simulate' section")
    merged = dict(doc)
    merged.update(sim_doc)
    nu = _resolve_nu(merged, spec, chi, args)
    try:
        depth = int(sim_doc["depth"])
        samples = int(sim_doc["samples"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"simulate section needs depth and samples: {exc}") from exc
    seed = args.seed if args.seed is not None else int(sim_doc.get("seed", 0))

    analysis, _ = pivot.analyze(spec, chi, nu, eps=args.eps)
    summary = simulate.estimate(spec, chi, nu, depth=depth, samples=samples,
                                seed=seed)

    exact = {}
    for c in range(spec.k):
        exact[f"root_colour_freq[{spec.colours[c]}]"] = nu.weights[c]
    key_of = {simulate.type_key(t.colour, t.b_set): i
              for i, t in enumerate(analysis.types)}
    for pk, i in key_of.items():
        for ck, j in key_of.items():
            exact[f"pivotal_children[{pk} -> {ck}]"] = analysis.mean_matrix[i, j]
    for d in range(depth + 1):
        exact[f"pivotal_level_mean[{d}]"] = pivot.generation_mean(analysis, d)

    header = ["statistic", "exact", "estimate", "se", "z", "n"]
    rows = []
    worst = 0.0
    for r in summary.rows:
        if r.name in exact:
            ex = exact[r.name]
            if r.se and np.isfinite(r.se) and r.se > 0:
                z = (r.mean - ex) / r.se
            else:
                z = 0.0 if r.mean == ex else float("inf")
            worst = max(worst, abs(z))
            rows.append([r.name, _fmt(float(ex)), _fmt(r.mean), _fmt(r.se),
                         _fmt(z), r.count])
        else:
            label = "(proxy, no exact value)" if "survival" in r.name else ""
            rows.append([r.name, label, _fmt(r.mean), _fmt(r.se), "", r.count])
    _print_table(header, rows)
    if args.out:
        _write_csv(args.out, header, rows)

    dump = sim_doc.get("dump")
    if dump:
        n_dump = int(sim_doc.get("dump_count", 10))
        with open(dump, "w") as fh:
            for i in range(n_dump):
                tree = simulate.sample_rst(spec, chi, nu, depth=depth,
                                           seed=seed, stream=i)
                fh.write(tree.to_newick() + "\n")

    if summary.partial:
        print(f"partial: completed {summary.completed} of {summary.samples} samples",
              file=sys.stderr)
        return EXIT_PARTIAL
    if worst > 4.0:
        print(f"estimate deviates from exact values: worst |z| = {worst:.2f}",
              file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle

def cmd_oracle(args) -> int:
    doc = _load_config(args.config)
    spec = _load_automaton(doc, os.path.dirname(args.config))
    tree = doc.get("tree")
    if tree is None:
        raise ConfigError("config needs a 'tree' (nested child lists)")
    try:
        shape = simulate.TreeShape.from_nested(tree)
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError(f"bad tree: {exc}") from exc
    if "nu" not in doc:
        raise ConfigError("oracle needs an explicit 'nu'")
    try:
        nu = StateDistribution(tuple(float(w) for w in doc["nu"]))
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad 'nu': {exc}") from exc
    result = simulate.oracle_exact(spec, shape, nu)
    print("root distribution:", " ".join(
        f"{c}={_fmt(float(w))}" for c, w in zip(spec.colours, result.root_distribution)))
    header = ["vertex", "depth", "pivot_probability"]
    depths = shape.depths()
    rows = [[v, int(depths[v]), _fmt(float(result.pivot_probability[v]))]
            for v in range(shape.n_vertices)]
    _print_table(header, rows)
    print("expected pivotal count per level:",
          " ".join(_fmt(float(x)) for x in result.level_means))
    if args.out:
        _write_csv(args.out, header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config path")
    common.add_argument("--out", default=None, help="output path (csv or directory)")
    common.add_argument("--seed", type=int, default=None, help="simulation seed")
    common.add_argument("--eps", type=float, default=1e-12,
                        help="truncation tolerance for the distribution map")
    common.add_argument("--tol", type=float, default=1e-10,
                        help="fixed-point residual tolerance")
    common.add_argument("--grid", type=int, default=10_000,
                        help="grid size for the two-state root scan")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for sweeps (never changes output)")

    parser = argparse.ArgumentParser(
        prog="pivotgw",
        description="Tree-automaton fixed points on branching trees: "
                    "solve, classify, sweep, and validate by simulation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fixed-points", parents=[common],
                   help="list fixed points of the distribution map")
    sub.add_parser("classify", parents=[common],
                   help="pivot-tree analysis and verdict for one fixed point")
    sub.add_parser("sweep", parents=[common],
                   help="rate sweep: csv plus per-branch plot tables")
    sub.add_parser("simulate", parents=[common],
                   help="Monte Carlo estimates vs exact values")
    sub.add_parser("oracle", parents=[common],
                   help="exhaustive enumeration on an explicit finite tree")
    return parser


_COMMANDS = {
    "fixed-points": cmd_fixed_points,
    "classify": cmd_classify,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PivotgwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
