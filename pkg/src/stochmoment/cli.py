"""Command line interface.

Subcommands ``indexset``, ``moment``, ``bench``, ``experiment`` and
``rates``. Every run writes ``manifest.json`` next to its outputs. Exit
status is 0 on success, 2 for invalid input and 3 when a linear solve
fails.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .bench import BenchRecord, bench_sweep, diffusion_xi
from .experiment import example_config, rate_row, run_experiment, validate_config
from .moment import DimensionError, assemble_moment_matrices, write_matrix_market
from .multiindex import (
    ATD, ATP, TS, ConfigurationError, IsoTD, IsoTP, build_index_set, index_set_from_text,
    parse_pairs, spec_from_dict, spec_to_dict,
)
from .orthopoly import as_family
from .sgfem import InsufficientDataError, ModelError, NumericalError

log = logging.getLogger("stochmoment")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


class InputError(ValueError):
    pass


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    seed: int
    outputs: list = field(default_factory=list)

    def add(self, path: Path, root: Path) -> None:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.outputs.append({"path": str(path.relative_to(root)), "sha256": digest})

    def write(self, root: Path) -> Path:
        out = root / "manifest.json"
        out.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return out


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


# ---------------------------------------------------------------------------
# index set specification from flags


def _add_set_args(p: argparse.ArgumentParser) -> None:
    kind = p.add_mutually_exclusive_group()
    for flag in ("ts", "isotd", "atd", "isotp", "atp"):
        kind.add_argument(f"--{flag}", dest="kind", action="store_const", const=flag)
    p.add_argument("--spec", help="JSON file with an index-set spec")
    p.add_argument("-N", type=int, help="number of dimensions")
    p.add_argument("-K", type=float, help="degree / level")
    p.add_argument("--g", help="comma-separated weights for --atd/--atp")
    p.add_argument("--mu", help="comma-separated threshold sequence for --ts")
    p.add_argument("--eps", type=float, help="threshold for --ts")


def spec_from_args(args):
    if args.spec:
        try:
            return spec_from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read spec file: {exc}") from None
    if args.kind is None:
        raise InputError("choose one of --ts/--isotd/--atd/--isotp/--atp or --spec")
    if args.kind == "ts":
        if args.mu is None or args.eps is None:
            raise InputError("--ts needs --mu and --eps")
        return TS(_floats(args.mu), args.eps)
    if args.N is None or args.K is None:
        raise InputError(f"--{args.kind} needs -N and -K")
    if args.kind in ("isotd", "isotp"):
        if args.K != int(args.K):
            raise InputError("-K must be an integer for isotropic sets")
        return (IsoTD if args.kind == "isotd" else IsoTP)(args.N, int(args.K))
    if args.g is None:
        raise InputError(f"--{args.kind} needs --g")
    return (ATD if args.kind == "atd" else ATP)(args.N, args.K, _floats(args.g))


# ---------------------------------------------------------------------------
# subcommands


def cmd_indexset(args, out: Path, manifest: RunManifest) -> dict:
    spec = spec_from_args(args)
    iset = build_index_set(spec)
    text_path = out / args.output
    text_path.write_text(iset.to_text())
    summary = {
        "spec": spec_to_dict(spec),
        "cardinality": len(iset),
        "max_degree": iset.max_degree,
        "max_exponent": iset.max_exponent,
        "max_length": iset.max_length,
    }
    sum_path = out / "indexset_summary.json"
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest.add(text_path, out)
    manifest.add(sum_path, out)
    print(f"{len(iset)} multi-indices written to {text_path}")
    return summary


def _label(alpha) -> str:
    return "_".join(f"{p}x{v}" for p, v in alpha) or "0"


def _parse_xi(args) -> list:
    if args.xi is not None and args.diffusion is not None:
        raise InputError("give either --xi or --diffusion")
    if args.diffusion is not None:
        M, p = _ints(args.diffusion)
        return diffusion_xi(M, p)
    if args.xi is None:
        raise InputError("moment needs --xi or --diffusion")
    xi = []
    for item in args.xi.split(";"):
        item = item.strip()
        mu = () if item in ("", "0") else parse_pairs(item)
        if any(v < 0 for _, v in mu):
            raise InputError(f"moment exponents must be nonnegative: {item!r}")
        xi.append(mu)
    return xi


def cmd_moment(args, out: Path, manifest: RunManifest) -> dict:
    spec = spec_from_args(args)
    if args.set_file:
        try:
            iset = index_set_from_text(spec, Path(args.set_file).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read index set file: {exc}") from None
        if iset.indices != build_index_set(spec).indices:
            raise InputError("index set file does not match the spec")
    else:
        iset = build_index_set(spec)
    try:
        family = as_family(args.family)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    xi = _parse_xi(args)
    asm = assemble_moment_matrices(
        iset, xi, family, threads=args.threads, dense_threshold=0, keep_intermediate=True
    )
    report = {"cardinality": len(iset), "family": family.value, "N": {}, "S": {}, "G": {}}
    for w, nm in asm.neighbours.items():
        path = out / f"N_{_label(w)}.mtx"
        write_matrix_market(path, nm.pattern, "pattern")
        manifest.add(path, out)
        report["N"][_label(w)] = int(nm.pattern.nnz)
    for mu in xi:
        mu = tuple(mu)
        spath = out / f"S_{_label(mu)}.mtx"
        gpath = out / f"G_{_label(mu)}.mtx"
        write_matrix_market(spath, asm.summed[mu].counts, "integer")
        write_matrix_market(gpath, asm.matrices[mu].values, "real")
        manifest.add(spath, out)
        manifest.add(gpath, out)
        report["S"][_label(mu)] = int(asm.summed[mu].counts.nnz)
        report["G"][_label(mu)] = int(asm.matrices[mu].values.nnz)
    rpath = out / "sparsity.json"
    rpath.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.add(rpath, out)
    print(f"{len(xi)} moment matrices over {len(iset)} multi-indices written to {out}")
    return report


def cmd_bench(args, out: Path, manifest: RunManifest) -> dict:
    records = []
    for M in _ints(args.M):
        for p in _ints(args.p):
            sweep = bench_sweep(M, p, args.K_max, K_min=args.K_min, repeats=args.repeats, threads=args.threads)
            records.extend(sweep)
            print(f"M={M} p={p}: sum|W| = {sweep[0].weight_count}, fitted eps = {sweep[0].fitted_epsilon:.3f}")
    path = out / "bench.csv"
    write_csv(path, BenchRecord.columns(), [list(asdict(r).values()) for r in records])
    manifest.add(path, out)
    return {"records": len(records)}


def _load_config(args) -> dict:
    if args.example:
        return example_config(args.example)
    if not args.config:
        raise InputError("experiment needs a config file or --example")
    try:
        return json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config: {exc}") from None


def cmd_experiment(args, out: Path, manifest: RunManifest, cfg: dict) -> dict:
    res = run_experiment(cfg, threads=args.threads, seed=args.seed, log=log.info)
    conv = out / "convergence.csv"
    write_csv(
        conv, ["set_family", "cardinality", "mean_err_pct", "var_err_pct"],
        [(r.set_family, r.cardinality, r.mean_err_pct, r.var_err_pct) for r in res.rows],
    )
    norms = out / "coeff_norms.csv"
    write_csv(norms, ["rank", "ordinal", "norm"], [(i + 1, o, v) for i, (_, v, o) in enumerate(res.norms)])
    wpath = out / "weights.json"
    weights = {
        "g": None if res.g is None else [float(x) for x in res.g],
        "rate": res.rate,
        "rate_fit": cfg.get("rate"),
        "reference": res.reference_label,
    }
    wpath.write_text(json.dumps(weights, indent=2, sort_keys=True) + "\n")
    for path in (conv, norms, wpath):
        manifest.add(path, out)
    print(f"{len(res.rows)} convergence rows; g = {weights['g']}; rate = {res.rate}")
    return weights


DEFAULT_RATE_ROWS = "4,2,1;4,4,2"


def cmd_rates(args, out: Path, manifest: RunManifest) -> dict:
    rows = []
    for item in args.rows.split(";"):
        vals = _floats(item)
        if len(vals) != 3:
            raise InputError(f"rate rows are 'M,s,p' triples, got {item!r}")
        M, s, p = int(vals[0]), vals[1], int(vals[2])
        row = rate_row(M, s, p, spatial=args.spatial, min_size=args.min_size,
                       first=args.first, last=args.last, threads=args.threads, seed=args.seed)
        rows.append(row)
        print(f"M={M} s={s:g} p={p}: isoTD K={row['K']} ({row['cardinality']}), rate {row['rate']:.3f}")
    path = out / "rates.csv"
    cols = ["M", "s", "p", "K", "cardinality", "rate"]
    write_csv(path, cols, [[r[c] for c in cols] for r in rows])
    manifest.add(path, out)
    return {"rows": len(rows)}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochmoment", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default=".")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("indexset", help="build an index set and write its text form")
    _add_set_args(p)
    p.add_argument("--output", default="indexset.txt")

    p = sub.add_parser("moment", help="neighbour, summed and moment matrices as Matrix Market files")
    _add_set_args(p)
    p.add_argument("--set-file", help="index set text file (checked against the spec)")
    p.add_argument("--xi", help="';'-separated exponents as pos:exp pairs, e.g. '1:2;1:1,2:1'")
    p.add_argument("--diffusion", help="'M,p': all monomials of (1 + sum c_m y_m)^p")
    p.add_argument("--family", default="legendre")

    p = sub.add_parser("bench", help="time neighbour construction over isoTD sweeps")
    p.add_argument("--M", default="6")
    p.add_argument("--p", default="2")
    p.add_argument("--K-max", type=int, default=12)
    p.add_argument("--K-min", type=int, default=1)
    p.add_argument("--repeats", type=int, default=5)

    p = sub.add_parser("experiment", help="staged convergence experiment")
    p.add_argument("config", nargs="?")
    p.add_argument("--example", help="built-in config: example1, example2 or example3")

    p = sub.add_parser("rates", help="coefficient decay rates on isoTD sets")
    p.add_argument("--rows", default=DEFAULT_RATE_ROWS, help="';'-separated 'M,s,p' triples")
    p.add_argument("--spatial", default="sinusoidal", choices=["constant", "sinusoidal"])
    p.add_argument("--min-size", type=int, default=3000)
    p.add_argument("--first", type=int, default=10)
    p.add_argument("--last", type=int, default=100)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out_dir)
    try:
        params = {k: v for k, v in vars(args).items() if k not in ("threads", "out_dir", "verbose")}
        cfg = None
        if args.command == "experiment":
            cfg = _load_config(args)
            params = {"command": "experiment", "config": cfg, "seed": args.seed}
        manifest = RunManifest(args.command, config_hash(params), __version__, args.seed)
        if cfg is not None:
            validate_config(cfg)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "experiment":
            cmd_experiment(args, out, manifest, cfg)
        else:
            {"indexset": cmd_indexset, "moment": cmd_moment, "bench": cmd_bench, "rates": cmd_rates}[
                args.command
            ](args, out, manifest)
        manifest.write(out)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, ConfigurationError, ModelError, DimensionError, InsufficientDataError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
