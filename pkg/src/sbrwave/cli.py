"""Command-line front end: filters, cascade, verify, table, critval, simulate.

Exit codes: 0 success, 1 crash, 2 verification failed, 64 usage error.
Every output carries a manifest (``# manifest: {...}`` for CSV/text, a
``manifest`` key for JSON).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from .asymptotics import BandConstants, CriticalQuery, DomainError, components
from .cascade import TorusWindow, cascade_f
from .filters import FilterError, format_filter, make_filter
from .mpinterval import Interval, PrecisionContext

EXIT_OK, EXIT_CRASH, EXIT_UNVERIFIED, EXIT_USAGE = 0, 1, 2, 64
CACHE_VERSION = 1

# Six-decimal reference values (sigma_bar_sq, upsilon) per family and N.
REFERENCE_CONSTANTS = {
    "daubechies": {
        6: (1.251716, 0.221993), 7: (1.276330, 0.197328), 8: (1.250928, 0.266316),
        9: (1.222637, 0.275519), 10: (1.199772, 0.391629), 11: (1.195384, 0.415019),
        12: (1.189984, 0.445388), 13: (1.182351, 0.460792), 14: (1.172690, 0.510179),
        15: (1.165335, 0.553767), 16: (1.159678, 0.594027), 17: (1.154955, 0.621941),
        18: (1.150103, 0.652913), 19: (1.145393, 0.686434), 20: (1.141050, 0.722113),
    },
    "symlet": {
        6: (1.361961, 0.106518), 7: (1.253835, 0.248681), 8: (1.286722, 0.173642),
        9: (1.232334, 0.302351), 10: (1.243114, 0.255337), 11: (1.209007, 0.324200),
        12: (1.215480, 0.335022), 13: (1.195567, 0.385147), 14: (1.195969, 0.405884),
        15: (1.184307, 0.446419), 16: (1.181901, 0.465670), 17: (1.174105, 0.496485),
        18: (1.170871, 0.520228), 19: (1.164974, 0.551765), 20: (1.161837, 0.571150),
    },
}
REFERENCE_TOL = 5e-7


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _version() -> str:
    try:
        return version("sbrwave")
    except PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunManifest:
    command: str
    flags: dict
    precision_bits: int
    seed: int | None = None
    wall_time: float | None = None
    version: str = field(default_factory=_version)

    def to_dict(self) -> dict:
        d = {"command": self.command, "flags": self.flags, "precision_bits": self.precision_bits,
             "seed": self.seed, "version": self.version}
        if self.wall_time is not None:
            d["wall_time"] = round(self.wall_time, 3)
        return d


# ---------------------------------------------------------------------------
# helpers


def _norm_family(fam: str) -> str:
    return {"db": "daubechies", "sym": "symlet"}.get(fam, fam)


def _parse_N(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out or min(out) < 1:
        raise UsageError(f"bad N list {text!r}")
    return out


def _parse_range(text: str) -> Interval | float:
    """``x`` or ``lo:hi``."""
    if ":" in text:
        lo, hi = (Fraction(s) for s in text.split(":"))
        if lo > hi:
            raise UsageError(f"empty range {text!r}")
        return Interval(lo, hi, 128)
    return float(text)


def _ctx(args) -> PrecisionContext:
    if args.precision is not None:
        return PrecisionContext(args.precision)
    return PrecisionContext.from_env()


def _flags(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _manifest(args, ctx, t0, seed=None) -> RunManifest:
    wall = None if args.no_wall_time else time.perf_counter() - t0
    return RunManifest(args.command, _flags(args), ctx.precision_bits, seed, wall)


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_json(args, payload: dict, manifest: RunManifest) -> None:
    payload = {"manifest": manifest.to_dict(), **payload}
    _emit(args, json.dumps(payload, indent=2, default=str) + "\n")


def _header(manifest: RunManifest) -> str:
    return "# manifest: " + json.dumps(manifest.to_dict(), sort_keys=True, default=str) + "\n"


def _cache_path(args) -> Path:
    if args.cache:
        return Path(args.cache)
    if os.environ.get("SBR_CACHE"):
        return Path(os.environ["SBR_CACHE"])
    return Path.home() / ".cache" / "sbrwave" / "constants.json"


def _cache_key(family: str, N: int, tol: float, prec: int) -> str:
    return f"{family}|{N}|{tol:g}|{prec}"


def load_cache(path: Path) -> dict:
    if not path.exists():
        return {}
    data = json.loads(path.read_text())
    if data.get("version") != CACHE_VERSION:
        return {}
    return data.get("entries", {})


def store_cache(path: Path, key: str, entry: dict) -> None:
    entries = load_cache(path)
    entries[key] = entry
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"version": CACHE_VERSION, "entries": entries}, indent=1, sort_keys=True))
    tmp.replace(path)


def _cache_lookup(args, family, N, ctx):
    """Cached constants for (family, N) at any tolerance <= args.tol."""
    entries = load_cache(_cache_path(args))
    best = None
    for e in entries.values():
        if (e["family"] == family and e["N"] == N and e["precision_bits"] == ctx.precision_bits
                and e["tol"] <= args.tol and e["verified"]
                and e.get("symlet_convention", "phase") == args.symlet_convention):
            if best is None or e["tol"] < best["tol"]:
                best = e
    return best


def _report_entry(rep, tol, convention, prec) -> dict:
    d = rep.to_dict()
    return {"family": rep.family, "N": rep.N, "tol": tol, "precision_bits": prec,
            "final_precision_bits": rep.precision_bits,
            "verified": rep.verified, "sigma_bar_sq": d["sigma_bar_sq"], "upsilon": d["upsilon"],
            "j_final": rep.j_final, "symlet_convention": convention}


def _entry_intervals(e) -> tuple[Interval, Interval]:
    def iv(d):
        return Interval(Fraction(d["lo"]), Fraction(d["hi"]), 128)
    return iv(e["sigma_bar_sq"]), iv(e["upsilon"])


def _obtain_constants(args, family, N, ctx):
    """Cache hit or fresh verification (stored on success)."""
    hit = _cache_lookup(args, family, N, ctx)
    if hit is not None:
        return _entry_intervals(hit), True
    from .verify import verify_assumption

    rep = verify_assumption(family, N, target_width=args.tol, ctx=ctx,
                            symlet_convention=args.symlet_convention)
    entry = _report_entry(rep, args.tol, args.symlet_convention, ctx.precision_bits)
    if rep.verified:
        store_cache(_cache_path(args), _cache_key(family, N, args.tol, ctx.precision_bits), entry)
    return (rep.sigma_bar_sq, rep.upsilon), rep.verified


def convention_flag(family: str, N: int, sigma_bar_sq: Interval, upsilon: Interval) -> str:
    """``match`` / ``differs`` against the reference constants, ``n/a`` if none."""
    ref = REFERENCE_CONSTANTS.get(family, {}).get(N)
    if ref is None:
        return "n/a"

    def near(iv, v):
        return float(iv.lo) - REFERENCE_TOL <= v <= float(iv.hi) + REFERENCE_TOL

    return "match" if near(sigma_bar_sq, ref[0]) and near(upsilon, ref[1]) else "differs"


# ---------------------------------------------------------------------------
# commands


def cmd_filters(args) -> int:
    t0 = time.perf_counter()
    ctx = _ctx(args)
    fam = _norm_family(args.family)
    chunks = []
    for N in ([None] if fam.startswith("custom:") else _parse_N(args.N)):
        bank = make_filter(fam, N, ctx, args.symlet_convention)
        text = format_filter(bank, args.digits)
        for note in bank.notes:
            text = f"# note: {note}\n" + text
        chunks.append(text.rstrip("\n") + "\n")
    _emit(args, _header(_manifest(args, ctx, t0)) + "".join(chunks))
    return EXIT_OK


def _window(args) -> TorusWindow:
    if not args.window:
        return TorusWindow.whole(args.j)
    a, b = (int(s) for s in args.window.split(":"))
    return TorusWindow(args.j, a, b)


def cmd_cascade(args) -> int:
    t0 = time.perf_counter()
    ctx = _ctx(args)
    if args.n not in (0, 1, 2):
        raise UsageError("--n must be 0, 1 or 2")
    if args.j < 0:
        raise UsageError("--j must be >= 0")
    fam = _norm_family(args.family)
    bank = make_filter(fam, args.N, ctx, args.symlet_convention)
    enc = cascade_f(bank, args.n, args.j, _window(args), strict=args.strict)
    buf = io.StringIO()
    buf.write(_header(_manifest(args, ctx, t0)))
    meta = {"family": bank.family, "N": bank.N, "n": args.n, "j": args.j,
            "alpha_lo": float(enc.alpha.lo), "C_hi": float(enc.c_const.hi), "eps_hi": float(enc.eps.hi)}
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "x_left", "f_lo", "f_hi"])
    for k, x, iv in enc.rows():
        lo, hi = iv.to_decimal(args.digits)
        w.writerow([k, str(x), lo, hi])
    _emit(args, buf.getvalue())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import verify_assumption

    t0 = time.perf_counter()
    ctx = _ctx(args)
    fam = _norm_family(args.family)
    rep = verify_assumption(fam, args.N, target_width=args.tol, ctx=ctx, max_level=args.max_level,
                            symlet_convention=args.symlet_convention)
    if rep.verified and not fam.startswith("custom:"):
        store_cache(_cache_path(args), _cache_key(fam, rep.N, args.tol, ctx.precision_bits),
                    _report_entry(rep, args.tol, args.symlet_convention, ctx.precision_bits))
    payload = rep.to_dict(with_history=args.history)
    if not args.no_wall_time:
        payload["seconds"] = round(rep.seconds, 3)
    _emit_json(args, payload, _manifest(args, ctx, t0))
    return EXIT_OK if rep.verified else EXIT_UNVERIFIED


def _table_row(job):
    fam, N, tol, prec, convention, max_level = job
    from .verify import verify_assumption

    rep = verify_assumption(fam, N, target_width=tol, ctx=PrecisionContext(prec), max_level=max_level,
                            symlet_convention=convention)
    return rep, _report_entry(rep, tol, convention, prec)


def cmd_table(args) -> int:
    t0 = time.perf_counter()
    ctx = _ctx(args)
    fams = [_norm_family(f) for f in args.families.split(",")]
    for f in fams:
        if f not in ("daubechies", "symlet"):
            raise UsageError(f"table supports daubechies and symlet, not {f!r}")
    jobs = [(f, N, args.tol, ctx.precision_bits, args.symlet_convention, args.max_level)
            for f in fams for N in _parse_N(args.N)]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as ex:
            results = list(ex.map(_table_row, jobs))
    else:
        results = [_table_row(j) for j in jobs]
    buf = io.StringIO()
    buf.write(_header(_manifest(args, ctx, t0)))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "N", "sigma2_lo", "sigma2_hi", "upsilon_lo", "upsilon_hi", "verified", "j_final",
                "seconds", "convention_flag"])
    for rep, entry in results:
        s_lo, s_hi = rep.sigma_bar_sq.to_decimal(10)
        u_lo, u_hi = rep.upsilon.to_decimal(10)
        flag = convention_flag(rep.family, rep.N, rep.sigma_bar_sq, rep.upsilon) if rep.verified else "n/a"
        secs = "" if args.no_wall_time else f"{rep.seconds:.2f}"
        w.writerow([rep.family, rep.N, s_lo, s_hi, u_lo, u_hi, str(rep.verified).lower(), rep.j_final, secs, flag])
        if rep.verified:
            store_cache(_cache_path(args), _cache_key(rep.family, rep.N, args.tol, ctx.precision_bits), entry)
    _emit(args, buf.getvalue())
    return EXIT_OK


def cmd_critval(args) -> int:
    t0 = time.perf_counter()
    ctx = _ctx(args)
    if (args.sigma is None) == (args.n is None):
        raise UsageError("give exactly one of --sigma and --n")
    manual = args.sigma2bar is not None or args.upsilon is not None
    if manual:
        if args.sigma2bar is None or args.upsilon is None:
            raise UsageError("--sigma2bar and --upsilon go together")
        sb, ups, verified = _parse_range(args.sigma2bar), _parse_range(args.upsilon), None
    else:
        if args.family is None or args.N is None:
            raise UsageError("give --family/--N or --sigma2bar/--upsilon")
        (sb, ups), verified = _obtain_constants(args, _norm_family(args.family), int(args.N), ctx)
    consts = (BandConstants.white_noise(sb, ups, args.n) if args.n is not None
              else BandConstants(sb, ups, args.sigma))
    out = components(CriticalQuery(args.j, args.gamma), consts)
    if verified is not None:
        out["constants_verified"] = verified
    _emit_json(args, out, _manifest(args, ctx, t0))
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulate import SimulationConfig, build_model, mc_exceedance, simulate_sups

    t0 = time.perf_counter()
    ctx = _ctx(args)
    fam = _norm_family(args.family)
    gammas = tuple(float(g) for g in args.gammas.split(","))
    cfg = SimulationConfig(family=fam, N=args.N, j=args.j, grid_depth=args.grid_depth, reps=args.reps,
                           seed=args.seed, gammas=gammas, symlet_convention=args.symlet_convention)
    constants = None
    bank = make_filter(fam, args.N, PrecisionContext(max(128, min(ctx.precision_bits, 256))),
                       args.symlet_convention)
    if bank.K > 1:
        (sb, ups), verified = _obtain_constants(args, fam, args.N, ctx)
        constants = (sb, ups)
    model = build_model(cfg, constants, bank)
    if constants is not None:
        model.verified = verified
    sups, zmax = simulate_sups(cfg, model)
    rep = mc_exceedance(cfg, model, sups, zmax)
    if args.sups_csv:
        with open(args.sups_csv, "w") as fh:
            fh.write(_header(_manifest(args, ctx, t0, args.seed)))
            fh.write("rep,sup\n")
            for i, s in enumerate(sups):
                fh.write(f"{i},{float(s)!r}\n")
    _emit_json(args, rep.to_dict(), _manifest(args, ctx, t0, args.seed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--precision", type=int, default=None, help="working precision in bits (default: $SBR_PRECISION_BITS or 256)")
    p.add_argument("--threads", type=int, default=1, help="cap on worker processes")
    p.add_argument("--out", "-o", default=None, help="output file (default stdout)")
    p.add_argument("--cache", default=None, help="constants cache file (default: $SBR_CACHE or ~/.cache/sbrwave/constants.json)")
    p.add_argument("--no-wall-time", action="store_true", help="omit timings for byte-stable output")
    p.add_argument("--symlet-convention", choices=("phase", "reference"), default="phase")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sbrwave", description="Certified wavelet cascade, variance-maximum verification and Gumbel critical values.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("filters", help="print certified filter coefficients")
    p.add_argument("--family", required=True)
    p.add_argument("--N", default="2")
    p.add_argument("--digits", type=int, default=40)
    p.set_defaults(func=cmd_filters)

    p = sub.add_parser("cascade", help="CSV of cascade cells with certified error")
    p.add_argument("--family", required=True)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--n", type=int, default=0, help="derivative order 0..2")
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--window", default=None, help="a:b cell range at level j (default: whole torus)")
    p.add_argument("--strict", action="store_true", help="fail when no contraction certificate exists")
    p.add_argument("--digits", type=int, default=20)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("verify", help="verify the unique variance maximum; exit 2 if it fails")
    p.add_argument("--family", required=True)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-level", type=int, default=160)
    p.add_argument("--history", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("table", help="constants table as CSV")
    p.add_argument("--families", default="daubechies,symlet")
    p.add_argument("--N", default="6..10")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-level", type=int, default=160)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("critval", help="Gumbel critical value of the sup-norm")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--j", type=float, default=10)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--n", type=float, default=None, help="white-noise sample size (sigma = n^-1/2)")
    p.add_argument("--family", default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--sigma2bar", default=None, help="value or lo:hi")
    p.add_argument("--upsilon", default=None, help="value or lo:hi")
    p.set_defaults(func=cmd_critval)

    p = sub.add_parser("simulate", help="Monte Carlo exceedance of the limiting process")
    p.add_argument("--family", default="daubechies")
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--j", type=int, default=10)
    p.add_argument("--grid-depth", type=int, default=5)
    p.add_argument("--reps", type=int, default=20000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--gammas", default="0.05,0.1,0.2")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--sups-csv", default=None, help="write per-rep sup values here")
    p.set_defaults(func=cmd_simulate)

    for sp in sub.choices.values():
        _common(sp)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.precision is not None and args.precision < 53:
        print("sbrwave: error: --precision must be >= 53", file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("sbrwave: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, DomainError, FilterError, ValueError) as exc:
        print(f"sbrwave: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"sbrwave: crash: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CRASH


if __name__ == "__main__":
    sys.exit(main())
