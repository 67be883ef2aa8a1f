"""Command-line frontend: ``ludyn solve | check | bench | export-matrix``.

Exit codes: 0 on success, 2 when the estimation problem is not well-posed,
1 on I/O or parse errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass

import numpy as np

from .assembly import MEASUREMENT_KINDS, MeasurementSpec, fd_spec, id_spec, measurement, two_feet_spec
from .classic import count_flops_classic
from .errors import IllPosedProblem, LudynError, ParseError, StructurallySingular
from .estimate import PROBLEMS, _matrix, assess, execute, plan, random_state
from .flops import FlopCount
from .model import load_model, serial_chain
from .sparse import dense_lu_flops, write_matrix_market

EXIT_OK, EXIT_IO, EXIT_ILL_POSED = 0, 1, 2

CSV_HEADER = ("n_links", "method", "mul", "add", "div", "total", "wall_ns")
BENCH_METHODS = ("rnea", "aba", "lu-id", "lu-fd", "lu-generic-loadcell", "dense-inversion")
#: seed of the state used for every sparse benchmark solve
BENCH_SEED = 7

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# input files

def parse_spec(text, tree):
    """``measure <kind> link=<name>`` lines into a :class:`MeasurementSpec`.

    Besides the sensor kinds, ``measure f link=<name>`` fixes the wrench a
    link receives from its parent (zero for a free-floating base link).
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "measure" or len(parts) != 3:
            raise ParseError(lineno, 1, "expected 'measure <kind> link=<name>'")
        kind = parts[1]
        if kind not in MEASUREMENT_KINDS:
            raise ParseError(lineno, raw.index(kind) + 1, f"unknown measurement kind {kind!r}")
        key, _, name = parts[2].partition("=")
        if key != "link" or not name:
            raise ParseError(lineno, raw.index(parts[2]) + 1, "expected link=<name>")
        try:
            link = tree.index(name)
        except KeyError:
            raise ParseError(lineno, raw.index(parts[2]) + 1, f"no link named {name!r}") from None
        entries.append(measurement(kind, link, name))
    if not entries:
        raise LudynError("spec file has no measure lines")
    return MeasurementSpec(tuple(entries))


@dataclass
class State:
    """Contents of a state file: per-link joint values and sensor channels."""

    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    fx: np.ndarray
    y: dict


_STATE_WIDTH = {"q": 1, "qd": 1, "qdd": 1, "tau": 1, "fx": 6}


def parse_state(text, tree):
    """State-file lines ``q|qd|qdd|tau <link> <value>``, ``fx <link> <6 values>``
    and ``y <channel> <values...>``.  Anything not given is zero."""
    n = tree.n_links
    st = State(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros((n, 6)), {})
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key not in _STATE_WIDTH and key != "y":
            raise ParseError(lineno, 1, f"unknown state key {key!r}")
        if len(parts) < 3:
            raise ParseError(lineno, 1, f"'{key}' needs a name and values")
        try:
            values = np.array([float(v) for v in parts[2:]])
        except ValueError as exc:
            raise ParseError(lineno, raw.index(parts[2]) + 1, str(exc)) from None
        if key == "y":
            st.y[parts[1]] = values
            continue
        if values.size != _STATE_WIDTH[key]:
            raise ParseError(lineno, 1, f"'{key}' takes {_STATE_WIDTH[key]} value(s), got {values.size}")
        try:
            i = tree.index(parts[1]) - 1
        except KeyError:
            raise ParseError(lineno, raw.index(parts[1]) + 1, f"no link named {parts[1]!r}") from None
        if key == "fx":
            st.fx[i] = values
        else:
            getattr(st, key)[i] = values[0]
    return st


def channels(spec, state, tree):
    """Sensor readings for ``spec``: explicit ``y`` lines win over the
    per-link ``qdd``/``tau``/``fx`` values of the state."""
    y = {}
    for e in spec.entries:
        if e.channel in state.y:
            value = state.y[e.channel]
        elif e.kind in ("qdd", "tau"):
            value = np.array([getattr(state, e.kind)[e.link - 1]])
        elif e.kind == "fx":
            value = state.fx[e.link - 1]
        else:
            value = np.zeros(e.height)
        if value.size != e.height:
            raise LudynError(f"channel {e.channel} needs {e.height} values, got {value.size}")
        y[e.channel] = np.asarray(value, dtype=float)
    return y


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load(args, need_state=True):
    tree = load_model(args.model)
    if args.problem is None:
        args.problem = "generic" if args.spec else "id"
    if args.problem == "generic":
        if not args.spec:
            raise LudynError("--problem generic needs --spec")
        spec = parse_spec(_read(args.spec), tree)
    else:
        spec = None
    state = parse_state(_read(args.state), tree) if need_state and args.state else None
    if need_state and state is None:
        state = parse_state("", tree)
    return tree, spec, state


def _spec_of(tree, problem, spec):
    if problem == "id":
        return id_spec(tree)
    if problem == "fd":
        return fd_spec(tree)
    return spec


def _num(x):
    return f"{x + 0.0:.12g}"


# ----------------------------------------------------------------------------
# commands

def cmd_solve(args, out=None):
    out = out or sys.stdout
    tree, spec, state = _load(args)
    p = plan(tree, args.problem, spec)
    sol = execute(p, state.q, state.qd, channels(_spec_of(tree, args.problem, spec), state, tree))
    rows = sol.by_link()
    for key in ("tau", "qdd"):
        for name, v in rows.items():
            print(f"{name} {key}={_num(v[key])}", file=out)
    for key in ("f", "fx"):
        for name, v in rows.items():
            print(f"{name} {key}={','.join(_num(x) for x in v[key])}", file=out)
    return EXIT_OK


def cmd_check(args, out=None):
    out = out or sys.stdout
    tree, spec, _ = _load(args, need_state=False)
    verdict = assess(tree, args.problem, spec)
    print(verdict.describe(), file=out)
    if verdict.ok:
        return EXIT_OK
    print(f"not well-posed: {verdict.verdict}", file=sys.stderr)
    return EXIT_ILL_POSED


def cmd_export_matrix(args, out=None):
    """Write the square system the solver factorizes: ``<out>.mtx`` holds
    ``D`` (permuted, after row selection) and ``<out>.rhs`` holds ``b``."""
    out = out or sys.stdout
    tree, spec, state = _load(args)
    p = plan(tree, args.problem, spec)
    A, rhs = _matrix(p, state.q, state.qd, channels(_spec_of(tree, args.problem, spec), state, tree))
    with open(args.out + ".mtx", "w", encoding="utf-8") as fh:
        write_matrix_market(fh, A, comment=f"ludyn {args.problem} system, {tree.n_links} links")
    np.savetxt(args.out + ".rhs", rhs, fmt="%.17g")
    print(f"wrote {args.out}.mtx and {args.out}.rhs ({A.nrows} x {A.ncols}, nnz {A.nnz})", file=out)
    return EXIT_OK


def _lu_record(tree, problem, spec):
    p = plan(tree, problem, spec)
    rng = np.random.default_rng(BENCH_SEED)
    q, qd = random_state(tree, rng)
    y = {e.channel: rng.normal(size=e.height) for e in p.spec.entries}
    t0 = time.perf_counter_ns()
    sol = execute(p, q, qd, y)
    return sol.flops, time.perf_counter_ns() - t0


def bench_records(n_max, methods=BENCH_METHODS, n_min=1):
    """``(n, method, FlopCount, wall_ns)`` for serial chains ``n_min..n_max``."""
    for n in range(n_min, n_max + 1):
        tree = serial_chain(n)
        for method in methods:
            if method in ("rnea", "aba"):
                t0 = time.perf_counter_ns()
                flops = count_flops_classic(method, tree)
                wall = time.perf_counter_ns() - t0
            elif method == "lu-id":
                flops, wall = _lu_record(tree, "id", None)
            elif method == "lu-fd":
                flops, wall = _lu_record(tree, "fd", None)
            elif method == "lu-generic-loadcell":
                if n < 2:
                    continue
                flops, wall = _lu_record(tree, "generic", two_feet_spec(tree, 1, n, "slippery"))
            elif method == "dense-inversion":
                flops, wall = dense_lu_flops(20 * n), 0
            else:
                raise ValueError(f"unknown bench method {method!r}")
            yield n, method, flops, wall


def cmd_bench(args, out=None):
    out = out or sys.stdout
    if args.n_max < 1:
        raise LudynError("--n-max must be at least 1")
    fh = open(args.csv, "w", newline="", encoding="utf-8") if args.csv else out
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for n, method, flops, wall in bench_records(args.n_max):
            writer.writerow((n, method, flops.mul, flops.add, flops.div, flops.total, wall))
    finally:
        if fh is not out:
            fh.close()
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ludyn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log planning decisions")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p, state=True):
        p.add_argument("--model", required=True, help="model file")
        p.add_argument("--problem", choices=PROBLEMS,
                       help="default: generic when --spec is given, id otherwise")
        p.add_argument("--spec", help="measurement spec file (generic problems)")
        if state:
            p.add_argument("--state", help="state file (default: all zero)")

    p = sub.add_parser("solve", help="solve one problem and print per-link values")
    model_args(p)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("check", help="report whether a problem is well-posed")
    model_args(p, state=False)
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("export-matrix", help="dump the permuted system in Matrix Market form")
    model_args(p)
    p.add_argument("--out", required=True, help="output prefix for .mtx and .rhs")
    p.set_defaults(func=cmd_export_matrix)
    p = sub.add_parser("bench", help="FLOP counts on serial chains, as CSV")
    p.add_argument("--n-max", type=int, default=50)
    p.add_argument("--csv", help="output file (default: standard output)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IllPosedProblem as exc:
        print(f"ludyn: not well-posed: {exc.wellposedness.describe()}", file=sys.stderr)
        return EXIT_ILL_POSED
    except StructurallySingular as exc:
        print(f"ludyn: not well-posed: {exc}", file=sys.stderr)
        return EXIT_ILL_POSED
    except (OSError, ParseError, LudynError) as exc:
        print(f"ludyn: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
