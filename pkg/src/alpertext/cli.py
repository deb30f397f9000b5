"""Command line entry point: build, verify, experiment, report."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import (AlpertError, ConfigurationError, FrameDegenerate, InvalidParameter,
                     ResolutionError)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RESOLUTION = 0, 1, 2, 3
log = logging.getLogger("alpertext")


class Run:
    """Output directory, timings and cache bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.cache = self.out / "cache"
        self.timings: dict = {}
        self.hits: list = []
        self.misses: list = []
        self.outputs: list = []

    def step(self, name: str, fn, cached: Path | None = None):
        if cached is not None:
            (self.hits if cached.exists() else self.misses).append(name)
        t0 = time.perf_counter()
        res = fn()
        self.timings[name] = round(time.perf_counter() - t0, 3)
        log.info("%s: %.2f s%s", name, self.timings[name],
                 " (cached)" if cached is not None and name in self.hits else "")
        return res

    def write(self, name: str, text: str | bytes):
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode() if isinstance(text, str) else text
        path.write_bytes(data)
        self.outputs.append(name)
        return path

    def manifest(self) -> Path:
        files = {n: hashlib.sha256((self.out / n).read_bytes()).hexdigest()
                 for n in sorted(set(self.outputs))}
        payload = {"command": self.command, "config_hash": self.cfg.hash(),
                   "code_version": __version__, "config": self.cfg.to_dict(),
                   "timings_s": self.timings, "cache_hits": self.hits,
                   "cache_misses": self.misses, "outputs": files}
        path = self.out / f"manifest_{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------- shared pieces


def _truncation(cfg: RunConfig):
    from .dyadic import default_root
    from .frame import TruncationSpec
    U = default_root()
    S = max(cfg.s_range) if cfg.s_range else U.scale - 1
    return TruncationSpec(U, S, cfg.kappa)


def _frame(run: Run):
    from .frame import frame_matrix
    from .mollifier import clipped_moments
    cfg = run.cfg
    clipped_moments(cfg.kappa, run.cache)
    return frame_matrix(_truncation(cfg), cfg.eta, cache_dir=run.cache)


def _require_build(run: Run):
    path = run.out / "manifest_build.json"
    if not path.exists():
        raise ConfigurationError(f"no build manifest in {run.out}; run 'alpertext build' first")
    built = json.loads(path.read_text())["config_hash"]
    if built != run.cfg.hash():
        raise ConfigurationError(f"mixed configuration hashes: build {built} vs current "
                                 f"{run.cfg.hash()}; rebuild or use a fresh --out")


def _csv_hashes(out: Path) -> set:
    import csv
    seen = set()
    for p in sorted(out.glob("*.csv")):
        with open(p, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows and "config_hash" in rows[0]:
            k = rows[0].index("config_hash")
            seen.update(r[k] for r in rows[1:] if len(r) > k and r[k])
    return seen


# ---------------------------------------------------------------- commands


def cmd_build(run: Run) -> int:
    from .alpert import basis_to_json
    from .frame import frame_cache_path
    from .mollifier import clipped_moments, table_path
    from .pigeonhole import build_bump, build_zeta
    cfg = run.cfg
    run.cache.mkdir(parents=True, exist_ok=True)

    basis = run.cache / f"alpert_k{cfg.kappa}.json"
    if not basis.exists():
        run.step("alpert_basis", lambda: basis.write_text(basis_to_json(cfg.kappa)), basis)
    else:
        run.hits.append("alpert_basis")
    run.step("mollifier_table", lambda: clipped_moments(cfg.kappa, run.cache),
             table_path(cfg.kappa, run.cache))

    fm = run.step("frame_matrix", lambda: _frame(run),
                  frame_cache_path(_truncation(cfg), cfg.eta, run.cache))

    kern = run.cache / "kernels_flat1_width1.npz"
    if not kern.exists():
        def kernels():
            b = build_bump()
            z = build_zeta(b)
            np.savez(kern, r=b.r, rho=b.profile, zeta=z.profile)
        run.step("kernels", kernels, kern)
    else:
        run.hits.append("kernels")
    run.manifest()
    print(f"build ok: kappa={cfg.kappa} eta={cfg.eta:g} frame size={fm.size} "
          f"cond={fm.cond:.4g}; cache hits {len(run.hits)}, computed {len(run.misses)}")
    return EXIT_OK


def cmd_verify(run: Run, inject_fault: bool = False) -> int:
    from .checks import results_csv, run_checks
    _require_build(run)
    mixed = _csv_hashes(run.out) - {run.cfg.hash()}
    if mixed:
        raise ConfigurationError(f"outputs in {run.out} carry other configuration hashes "
                                 f"{sorted(mixed)}; refusing to verify mixed inputs")
    fm = run.step("frame_matrix", lambda: _frame(run))

    def show(r):
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} value={r.value:.3e} "
              f"threshold={r.threshold:.3e} {r.note}".rstrip())
    results = run.step("checks", lambda: run_checks(run.cfg, fm, inject_fault, show))
    run.write("verify.csv", results_csv(results, run.cfg.hash()))
    run.manifest()
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verify: {len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"verify: all {len(results)} checks passed")
    return EXIT_OK


def experiment_report(cfg: RunConfig, fm=None):
    from .growth import growth_report
    from .norms import FamilySpec
    fam = FamilySpec(cfg.family_signs, cfg.family_phases, cfg.family_knapp, cfg.hill_climb,
                     cfg.seed)
    return growth_report(cfg.q, cfg.delta, cfg.kappa, cfg.eta, cfg.s_range, fam, nu=cfg.nu,
                         lam=cfg.lam, sep_const=cfg.sep_const, alpha=cfg.alpha, c=cfg.c,
                         mode=cfg.mode, h_xi=cfg.h_xi, xi_cap=cfg.xi_cap,
                         tail_factor=cfg.tail_factor, trilinear_family=cfg.trilinear_family,
                         max_square_triples=cfg.max_square_triples or None,
                         trilinear_max_s=cfg.trilinear_max_s or None,
                         census_max_s=cfg.census_max_s or None,
                         grid_translates=cfg.grid_translates, precision=cfg.precision,
                         jobs=cfg.jobs, fm=fm)


def cmd_experiment(run: Run) -> int:
    _require_build(run)
    cfg = run.cfg
    h = cfg.hash()
    fm = run.step("frame_matrix", lambda: _frame(run)) if cfg.s_range else None
    rep = run.step("growth_report", lambda: experiment_report(cfg, fm))
    run.write("growth.csv", rep.to_csv(h))
    run.write("exponents.csv", rep.exponents_csv(h))
    for s, cr in sorted(rep.censuses.items()):
        text = cr.to_csv()
        lines = text.splitlines()
        lines[0] += ",config_hash"
        run.write(f"census_s{s}.csv", "\n".join([lines[0]] + [ln + f",{h}" for ln in lines[1:]])
                  + "\n")
    wit = {f"s={s}:{e}": w for (s, e), w in sorted(rep.witnesses.items())}
    run.write("witnesses.json", json.dumps({"config_hash": h, "witnesses": wit}, indent=2,
                                           sort_keys=True, default=_jsonable) + "\n")
    run.write("runtime.json", json.dumps({"config_hash": h, "runtime_ms": rep.runtime_ms},
                                         indent=2, sort_keys=True) + "\n")
    run.manifest()
    for r in rep.rows:
        v = r.value if isinstance(r.value, str) else f"{r.value:.6g}"
        print(f"s={r.s} {r.estimator:15s} {v}")
    for k, (e, lo, hi) in sorted(rep.exponents.items()):
        print(f"growth exponent {k}: {e:.4f} (95% interval {lo:.4f}, {hi:.4f})")
    return EXIT_OK


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    return str(o)


def cmd_report(run: Run) -> int:
    from .report import render
    _require_build(run)
    made = run.step("render", lambda: render(run.out))
    run.outputs += [p.name for p in made]
    run.manifest()
    for p in made:
        print(f"wrote {run.out / p.name}")
    if not made:
        print(f"nothing to plot in {run.out}; run 'alpertext experiment' first")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alpertext",
                                description="Smooth Alpert frames, extension norms and "
                                            "pigeonhole diagnostics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="sectioned key=value config file")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log step timings")
    sub.add_parser("build", parents=[common], help="build and cache bases, tables, frame, kernels")
    v = sub.add_parser("verify", parents=[common], help="run the invariant checks")
    v.add_argument("--inject-fault", action="store_true",
                   help="perturb one frame matrix entry by 1e-2 before checking")
    sub.add_parser("experiment", parents=[common], help="growth report and case census")
    sub.add_parser("report", parents=[common], help="render PNG figures next to the CSV outputs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, jobs=args.jobs,
                                                      out=args.out).validate()
        run = Run(args.command, cfg)
        if args.command == "build":
            return cmd_build(run)
        if args.command == "verify":
            return cmd_verify(run, args.inject_fault)
        if args.command == "experiment":
            return cmd_experiment(run)
        return cmd_report(run)
    except ResolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except (ConfigurationError, InvalidParameter, FrameDegenerate) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AlpertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
