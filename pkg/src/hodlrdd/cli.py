"""Command-line driver: ``hodlrdd {rank-bench,matvec-bench,solve-ie,svm}``.

Settings come from built-in defaults, then an optional ``key = value``
config file (``--config``), then command-line flags.  CSV goes to ``--out``
(or standard output) and a short summary to standard output (or standard
error when the CSV is written there).

Exit codes: 0 success, 1 runtime error, 2 some cells skipped by a size
guard, 64 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
import time

import numpy as np

from .errors import GuardError, HodlrError
from .geometry import AdmissibilityPolicy, HyperCube
from .kernels import get_kernel

EXIT_OK, EXIT_ERROR, EXIT_GUARD, EXIT_USAGE = 0, 1, 2, 64
THREADS_ENV = "HODLRDD_THREADS"

DEFAULTS = {
    "common": {"seed": 0, "out": None, "threads": None, "omit_timings": False},
    "rank-bench": {"epsilon_rank": 1e-12, "grid": "interior", "method": "auto"},
    "matvec-bench": {"kernel": "log_r", "policy": ["weak_dd"], "n_max": 1000, "epsilon_aca": 1e-6,
                     "points": "grid", "trials": 20, "repeats": 3, "cached_panels": False,
                     "structure_csv": None},
    "solve-ie": {"d": 4, "accel": "hodlrdd", "tol": 1e-6, "epsilon_aca": 1e-6, "n_max": 1000,
                 "max_iter": 500, "restart": None},
    "svm": {"d": 4, "kernel": "exp_neg_r", "mode": "both", "lam": 10.0, "eta": 1e-3, "beta": 1.0,
            "iters": 1000, "epsilon_aca": 1e-10, "n_max": 500, "dataset_csv": None,
            "cap_eta": True},
}
REQUIRED = {
    "rank-bench": ("d", "interaction", "kernel", "N"),
    "matvec-bench": ("d", "N"),
    "solve-ie": ("n",),
    "svm": ("n",),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _int_list(s):
    return [int(float(v)) for v in str(s).split(",") if v.strip()]


def _str_list(s):
    return [v.strip() for v in str(s).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = _Parser(prog="hodlrdd", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", default=None, help="key = value file, overridden by flags")
        sp.add_argument("--seed", type=int, default=S)
        sp.add_argument("--out", default=S, help="CSV output path (default: stdout)")
        sp.add_argument("--threads", type=int, default=S, help=f"worker threads (env {THREADS_ENV})")
        sp.add_argument("--omit-timings", dest="omit_timings", action="store_true", default=S,
                        help="leave timing columns blank so CSVs are reproducible byte for byte")

    rb = sub.add_parser("rank-bench", help="numerical ranks of box-pair interactions")
    common(rb)
    rb.add_argument("--d", type=int, default=S)
    rb.add_argument("--interaction", default=S, help="far | vertex | surface:k")
    rb.add_argument("--kernel", type=_str_list, default=S, help="comma list of kernel ids or F1..F8")
    rb.add_argument("--N", type=_int_list, default=S, help="comma list of perfect d-th powers")
    rb.add_argument("--epsilon-rank", dest="epsilon_rank", type=float, default=S)
    rb.add_argument("--grid", choices=["interior", "center", "random"], default=S)
    rb.add_argument("--method", choices=["auto", "dense", "sketch"], default=S)

    mb = sub.add_parser("matvec-bench", help="build + matvec timing and accuracy")
    common(mb)
    mb.add_argument("--d", type=int, default=S)
    mb.add_argument("--N", type=_int_list, default=S)
    mb.add_argument("--kernel", default=S)
    mb.add_argument("--policy", type=_str_list, default=S, help="comma list: weak_dd,strong,weak_all")
    mb.add_argument("--n-max", dest="n_max", type=int, default=S)
    mb.add_argument("--epsilon-aca", dest="epsilon_aca", type=float, default=S)
    mb.add_argument("--points", choices=["grid", "random"], default=S)
    mb.add_argument("--trials", type=int, default=S)
    mb.add_argument("--repeats", type=int, default=S)
    mb.add_argument("--cached-panels", dest="cached_panels", action="store_true", default=S)
    mb.add_argument("--structure-csv", dest="structure_csv", default=S)

    ie = sub.add_parser("solve-ie", help="manufactured-solution integral-equation solve")
    common(ie)
    ie.add_argument("--d", type=int, default=S)
    ie.add_argument("--n", type=int, default=S, help="cells per axis")
    ie.add_argument("--accel", choices=["dense", "hodlrdd", "strong", "weak_all"], default=S)
    ie.add_argument("--tol", type=float, default=S)
    ie.add_argument("--epsilon-aca", dest="epsilon_aca", type=float, default=S)
    ie.add_argument("--n-max", dest="n_max", type=int, default=S)
    ie.add_argument("--max-iter", dest="max_iter", type=int, default=S)
    ie.add_argument("--restart", type=int, default=S)

    sv = sub.add_parser("svm", help="kernel SVM, dense vs hierarchical products")
    common(sv)
    sv.add_argument("--d", type=int, default=S)
    sv.add_argument("--n", type=int, default=S, help="coordinates per axis")
    sv.add_argument("--kernel", default=S)
    sv.add_argument("--mode", choices=["both", "fast", "dense"], default=S)
    sv.add_argument("--lam", type=float, default=S)
    sv.add_argument("--eta", type=float, default=S)
    sv.add_argument("--beta", type=float, default=S)
    sv.add_argument("--iters", type=int, default=S)
    sv.add_argument("--epsilon-aca", dest="epsilon_aca", type=float, default=S)
    sv.add_argument("--n-max", dest="n_max", type=int, default=S)
    sv.add_argument("--dataset-csv", dest="dataset_csv", default=S)
    sv.add_argument("--no-eta-cap", dest="cap_eta", action="store_false", default=S,
                    help="use --eta as given even above the stability bound")
    return p


_CONVERT = {
    "d": int, "n": int, "seed": int, "threads": int, "n_max": int, "trials": int, "repeats": int,
    "max_iter": int, "restart": int, "iters": int, "epsilon_rank": float, "epsilon_aca": float,
    "tol": float, "lam": float, "eta": float, "beta": float, "N": _int_list, "kernel": None,
    "policy": _str_list,
}
_BOOL = {"cached_panels", "omit_timings", "cap_eta"}


def read_config(path: str) -> dict:
    """Parse a ``key = value`` file (``#`` comments, optional ``[section]`` headers ignored)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    with open(path) as fh:
        cp.read_string("[__top__]\n" + fh.read())
    out = {}
    for section in cp.sections():
        for k, v in cp.items(section, raw=True):
            out[k.strip().replace("-", "_")] = v.strip().strip('"').strip("'")
    return out


def _coerce(key, value, command):
    if not isinstance(value, str):
        return value
    if key in _BOOL:
        return value.lower() in {"1", "true", "yes", "on"}
    if key == "kernel":
        return _str_list(value) if command == "rank-bench" else value
    conv = _CONVERT.get(key)
    return conv(value) if conv else value


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    cmd = args.command
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[cmd])
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            cfg[k] = _coerce(k, v, cmd)
    for k, v in vars(args).items():
        if k not in {"command", "config"}:
            cfg[k] = v
    if cfg.get("threads") is None:
        env = os.environ.get(THREADS_ENV)
        cfg["threads"] = int(env) if env else 1
    missing = [k for k in REQUIRED[cmd] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{cmd}: missing required setting(s): {', '.join('--' + m for m in missing)}")
    cfg["command"] = cmd
    return cfg


def _perfect_root(N: int, d: int) -> int:
    n = int(round(N ** (1.0 / d)))
    for c in (n - 1, n, n + 1):
        if c >= 1 and c ** d == N:
            return c
    raise UsageError(f"N={N} is not a perfect {d}-th power (grid mode)")


def grid_points(n: int, d: int) -> np.ndarray:
    """Cell-centred tensor grid with ``n`` points per axis in ``[-1, 1]^d``."""
    t = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
    return np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)


class _Output:
    def __init__(self, cfg):
        self.path = cfg.get("out")
        self.rows: list[dict] = []
        self.fields: list[str] = []
        self.lines: list[str] = []

    def summary(self, line: str):
        self.lines.append(line)

    def flush(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.fields, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        if self.path:
            with open(self.path, "w", newline="") as fh:
                fh.write(buf.getvalue())
            summary_stream = sys.stdout
        else:
            sys.stdout.write(buf.getvalue())
            summary_stream = sys.stderr
        for line in self.lines:
            print(line, file=summary_stream)


def _t(cfg, seconds):
    return "" if cfg.get("omit_timings") else f"{seconds:.4f}"


def run_rank_bench(cfg, out: _Output) -> int:
    from . import rankbench

    out.fields = list(rankbench.CSV_FIELDS)
    for N in cfg["N"]:
        _perfect_root(N, cfg["d"])
    records, skipped = rankbench.rank_table(cfg["kernel"], cfg["interaction"], cfg["d"], cfg["N"],
                                            cfg["epsilon_rank"], mode=cfg["grid"],
                                            method=cfg["method"], seed=cfg["seed"])
    for r in records:
        row = r.csv_row()
        if cfg.get("omit_timings"):
            row["seconds"] = ""
        out.rows.append(row)
        out.summary(f"{r.kernel} d={r.d} {r.interaction} N={r.N}: rank {r.rank} ({r.method})")
    for k, N, reason in skipped:
        out.summary(f"skipped {k} N={N}: {reason}")
    return EXIT_GUARD if skipped else EXIT_OK


def run_matvec_bench(cfg, out: _Output) -> int:
    from .hmatrix import initialize, relative_error

    d = cfg["d"]
    kernel = get_kernel(cfg["kernel"])
    out.fields = ["d", "N", "policy", "kernel", "n_max", "epsilon", "depth", "max_rank",
                  "memory_bytes", "num_low_rank_blocks", "num_dense_entries", "num_unconverged",
                  "init_seconds", "matvec_seconds", "rel_error"]
    rng = np.random.default_rng(cfg["seed"])
    status = EXIT_OK
    domain = HyperCube((-1.0,) * d, 2.0)
    if cfg["points"] == "grid":
        for N in cfg["N"]:
            _perfect_root(N, d)
    for N in cfg["N"]:
        if cfg["points"] == "grid":
            pts = grid_points(_perfect_root(N, d), d)
        else:
            pts = rng.uniform(-1.0, 1.0, size=(N, d))
        for pol in cfg["policy"]:
            policy = AdmissibilityPolicy.parse(pol)
            H, rep = initialize(pts, domain, kernel, policy, cfg["n_max"], cfg["epsilon_aca"],
                                cache_panels=cfg["cached_panels"], workers=cfg["threads"])
            q = np.random.default_rng(cfg["seed"]).standard_normal(N)
            times = []
            for _ in range(max(1, cfg["repeats"])):
                t0 = time.perf_counter()
                H.matvec(q)
                times.append(time.perf_counter() - t0)
            try:
                err = f"{relative_error(H, cfg['trials'], cfg['seed']):.3e}"
            except GuardError as exc:
                err = ""
                status = EXIT_GUARD
                out.summary(f"N={N}: error not measured ({exc})")
            if cfg.get("structure_csv"):
                base, ext = os.path.splitext(cfg["structure_csv"])
                H.write_structure_csv(f"{base}_{policy.value}_N{N}{ext or '.csv'}")
            out.rows.append(dict(d=d, N=N, policy=policy.value, kernel=kernel.name,
                                 n_max=cfg["n_max"], epsilon=f"{cfg['epsilon_aca']:g}",
                                 depth=H.tree.depth, max_rank=rep.max_block_rank,
                                 memory_bytes=rep.memory_bytes,
                                 num_low_rank_blocks=rep.num_low_rank_blocks,
                                 num_dense_entries=rep.num_dense_entries,
                                 num_unconverged=rep.num_unconverged,
                                 init_seconds=_t(cfg, rep.init_seconds),
                                 matvec_seconds=_t(cfg, min(times)), rel_error=err))
            out.summary(f"d={d} N={N} {policy.value}: max rank {rep.max_block_rank}, "
                        f"{rep.memory_bytes / 2**20:.1f} MiB, matvec {min(times):.3f}s, error {err or 'n/a'}")
    return status


def run_solve_ie(cfg, out: _Output) -> int:
    from .linsolve import GmresConfig, IeProblem, manufactured_check

    if not cfg["tol"] > 0:
        raise UsageError("--tol must be positive")
    prob = IeProblem(cfg["d"], cfg["n"])
    gcfg = GmresConfig(cfg["tol"], cfg["max_iter"], cfg["restart"])
    rep = manufactured_check(prob, cfg["accel"], gcfg, seed=cfg["seed"],
                             epsilon=cfg["epsilon_aca"], n_max=cfg["n_max"], workers=cfg["threads"])
    out.fields = ["d", "n", "N", "accel", "tol", "iterations", "residual", "error",
                  "build_seconds", "solve_seconds"]
    out.rows.append(dict(d=prob.d, n=prob.n_per_dim, N=prob.N, accel=rep.accel, tol=f"{cfg['tol']:g}",
                         iterations=rep.iterations, residual=f"{rep.residual:.3e}",
                         error=f"{rep.error:.3e}", build_seconds=_t(cfg, rep.build_seconds),
                         solve_seconds=_t(cfg, rep.solve_seconds)))
    out.summary(f"{rep.accel} N={rep.N}: {rep.iterations} iterations, solution error {rep.error:.3e}")
    return EXIT_OK


def run_svm(cfg, out: _Output) -> int:
    from . import svm

    ds = svm.generate_synthetic(cfg["n"], cfg["d"], cfg["seed"])
    if cfg.get("dataset_csv"):
        svm.save_dataset(ds, cfg["dataset_csv"])
    kernel = get_kernel(cfg["kernel"])
    modes = {"both": [False, True], "fast": [True], "dense": [False]}[cfg["mode"]]
    out.fields = ["mode", "kernel", "N_train", "N_test", "iters", "eta", "build_seconds",
                  "iter_seconds", "a1", "a2", "oa"]
    alphas = {}
    for fast in modes:
        model = svm.train(ds, kernel, cfg["lam"], cfg["eta"], cfg["beta"], cfg["iters"], fast,
                          cap_eta=cfg["cap_eta"], epsilon=cfg["epsilon_aca"], n_max=cfg["n_max"],
                          workers=cfg["threads"])
        sc = svm.evaluate(model, ds)
        name = "FSVM" if fast else "NSVM"
        alphas[name] = model.alpha
        fmt = lambda v: "" if v is None else f"{v:.2f}"
        out.rows.append(dict(mode=name, kernel=kernel.name, N_train=ds.train.size, N_test=ds.test.size,
                             iters=cfg["iters"], eta=f"{model.eta:.6g}",
                             build_seconds=_t(cfg, model.build_seconds),
                             iter_seconds=_t(cfg, model.iter_seconds), a1=fmt(sc.a1), a2=fmt(sc.a2),
                             oa=fmt(sc.oa)))
        out.summary(f"{name}: OA {sc.oa:.2f}% (A1 {fmt(sc.a1)}, A2 {fmt(sc.a2)}), "
                    f"{model.iter_seconds * 1e3:.2f} ms/iter")
    if len(alphas) == 2:
        ref = np.abs(alphas["NSVM"]).max()
        diff = np.abs(alphas["FSVM"] - alphas["NSVM"]).max() / (ref if ref > 0 else 1.0)
        out.summary(f"relative alpha difference FSVM vs NSVM: {diff:.3e}")
    return EXIT_OK


RUNNERS = {
    "rank-bench": run_rank_bench,
    "matvec-bench": run_matvec_bench,
    "solve-ie": run_solve_ie,
    "svm": run_svm,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args)
        out = _Output(cfg)
        code = RUNNERS[args.command](cfg, out)
        out.flush()
        return code
    except UsageError as exc:
        print(f"hodlrdd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HodlrError, ValueError, OSError) as exc:
        print(f"hodlrdd: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
