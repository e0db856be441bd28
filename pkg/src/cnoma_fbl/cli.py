"""Command-line experiment runner.

Four subcommands share one JSON config schema (see README). Flags override
file values; everything is validated before any solve starts. Output is CSV
with a leading ``#`` provenance row.
"""

import argparse
import copy
import csv
from dataclasses import fields
import hashlib
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .allocator import CNOMA_MRC, CNOMA_SC, NOMA, OMA, AllocationProblem, solve
from .link import ChannelTriple, SystemBudget
from .pairing import POLICIES, PairingConfig, run_policies
from .topology import CellConfig, draw_users, run_trials, trial_rng

SCHEME_NAMES = {"sc": CNOMA_SC, "mrc": CNOMA_MRC, "noma": NOMA, "oma": OMA}
COMBINING = ("sc", "mrc")
MODES = ("allocate", "sweep", "pair", "montecarlo")

DEFAULTS = {
    "budget": {},
    "channel": {"g1": 0.8, "g2": 0.1, "g12": 0.5},
    "schemes": None,
    "solver": None,
    "sweep": {"axis": "d_max", "start": 100, "stop": 500, "step": 100},
    "cell": {},
    "users": [4],
    "trials": 100,
    "seed": 0,
    "policies": list(POLICIES),
    "pairing": {},
    "positions": None,
    "workers": 1,
}

ALLOC_COLUMNS = [
    "scheme", "solver", "feasible", "fair_throughput", "t1", "t2", "eps1", "eps2",
    "mI", "mII", "p1I", "p2I", "p2II", "energy", "slack",
]


class ConfigError(ValueError):
    pass


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _check_keys(section, allowed, where):
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(sorted(extra))}")


def _build(cls, values, where):
    _check_keys(values, [f.name for f in fields(cls)], where)
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _schemes(names, allowed, where="schemes"):
    if names is None:
        names = ["mrc", "sc", "noma", "oma"] if allowed is SCHEME_NAMES else ["mrc"]
    if not names:
        raise ConfigError(f"{where}: at least one scheme required")
    for n in names:
        if n not in allowed:
            raise ConfigError(f"{where}: {n!r} not in {sorted(allowed)}")
    return list(names)


def _split(s):
    return [t.strip() for t in s.split(",") if t.strip()]


def resolve_config(args) -> dict:
    """Merge defaults, the config file and command-line flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"config: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config: top level must be an object")
        _check_keys(loaded, DEFAULTS, "config")
        for k, v in loaded.items():
            if isinstance(cfg[k], dict):
                if not isinstance(v, dict):
                    raise ConfigError(f"{k}: must be an object")
                cfg[k].update(v)
            else:
                cfg[k] = v
    b = cfg["budget"]
    for flag, key in (("dp", "dp"), ("m_stride", "m_stride"), ("d_max", "d_max"), ("p_ave", "p_ave")):
        if getattr(args, flag) is not None:
            b[key] = getattr(args, flag)
    for k in ("g1", "g2", "g12"):
        if getattr(args, k) is not None:
            cfg["channel"][k] = getattr(args, k)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.scheme:
        cfg["schemes"] = [s for chunk in args.scheme for s in _split(chunk)]
    if args.policy:
        cfg["policies"] = [p for chunk in args.policy for p in _split(chunk)]
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.users:
        try:
            cfg["users"] = [int(u) for u in _split(args.users)]
        except ValueError:
            raise ConfigError("users: expected comma-separated integers") from None
    if args.solver is not None:
        cfg["solver"] = args.solver
    if args.r0 is not None:
        cfg["pairing"]["r0"] = args.r0
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.axis is not None:
        cfg["sweep"]["axis"] = args.axis
    if args.range is not None:
        parts = args.range.split(":")
        try:
            start, stop, *step = [float(p) for p in parts]
        except ValueError:
            raise ConfigError("sweep: range must be START:STOP[:STEP]") from None
        cfg["sweep"].update(start=start, stop=stop, step=step[0] if step else 1.0)
    return cfg


def _seed(cfg):
    s = cfg["seed"]
    if not isinstance(s, int) or isinstance(s, bool) or not 0 <= s < 2**64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    return s


def _solvers(cfg, default="optimal"):
    s = cfg["solver"] or default
    if s not in ("optimal", "suboptimal", "both"):
        raise ConfigError("solver: must be optimal, suboptimal or both")
    return ["optimal", "suboptimal"] if s == "both" else [s]


def _sweep_values(cfg):
    sw = cfg["sweep"]
    _check_keys(sw, ["axis", "start", "stop", "step", "values"], "sweep")
    if sw.get("axis") not in ("d_max", "p_ave"):
        raise ConfigError("sweep: axis must be d_max or p_ave")
    if "values" in sw:
        vals = [float(v) for v in sw["values"]]
    else:
        start, stop, step = float(sw["start"]), float(sw["stop"]), float(sw["step"])
        if step <= 0:
            raise ConfigError("sweep: step must be positive")
        n = math.floor((stop - start) / step + 1e-9) + 1
        vals = [start + k * step for k in range(max(n, 0))]
    if not vals:
        raise ConfigError("sweep: empty range")
    if sw["axis"] == "d_max":
        if any(v != int(v) or v < 1 for v in vals):
            raise ConfigError("sweep: d_max values must be positive integers")
        vals = [int(v) for v in vals]
    return sw["axis"], vals


def _policies(cfg):
    ps = cfg["policies"]
    if not ps:
        raise ConfigError("policies: at least one policy required")
    for p in ps:
        if p not in POLICIES:
            raise ConfigError(f"policies: {p!r} not in {list(POLICIES)}")
    return list(ps)


def _pairing(cfg, combining):
    return _build(PairingConfig, {**cfg["pairing"], "combining": SCHEME_NAMES[combining]}, "pairing")


def _users(cfg):
    us = cfg["users"]
    us = [us] if isinstance(us, int) else us
    if not us or any(not isinstance(u, int) or u < 2 for u in us):
        raise ConfigError("users: each user count must be an integer >= 2")
    return us


def _cap_check(cfg, policies, counts):
    cap = cfg["pairing"].get("exhaustive_cap", PairingConfig.exhaustive_cap)
    if "exhaustive" in policies and max(counts) > cap:
        raise ConfigError(f"policies: exhaustive pairing refuses {max(counts)} users (cap {cap})")


def _alloc_row(scheme, solver, res):
    a = res.alloc
    if a is None:
        alloc = [0, 0, math.nan, math.nan, math.nan]
    elif res.scheme == OMA:
        alloc = [a.m1, a.m2, a.p1, a.p2, 0.0]
    else:
        alloc = [a.mI, a.mII, a.p1I, a.p2I, a.p2II]
    vals = [res.feasible, res.fair_throughput, res.t1, res.t2, res.eps1, res.eps2, *alloc, res.energy_used, res.slack]
    return [scheme, solver] + [_num(v) for v in vals]


def _solve_rows(channel, budget, schemes, solvers, prefix=()):
    rows, all_ok = [], True
    for s in schemes:
        for solver in solvers:
            cnoma = s in COMBINING
            if solver == "suboptimal" and not cnoma:
                continue
            res = solve(AllocationProblem(channel, budget, SCHEME_NAMES[s]), solver == "suboptimal")
            all_ok &= res.feasible
            rows.append([*prefix, *_alloc_row(s, solver, res)])
    return rows, all_ok


def run_allocate(cfg):
    budget = _build(SystemBudget, cfg["budget"], "budget")
    channel = _build(ChannelTriple, cfg["channel"], "channel")
    schemes = _schemes(cfg["schemes"], SCHEME_NAMES)
    solvers = _solvers(cfg)
    yield ALLOC_COLUMNS
    rows, ok = _solve_rows(channel, budget, schemes, solvers)
    yield from rows
    return 0 if ok else 1


def run_sweep(cfg):
    budget = _build(SystemBudget, cfg["budget"], "budget")
    channel = _build(ChannelTriple, cfg["channel"], "channel")
    schemes = _schemes(cfg["schemes"], SCHEME_NAMES)
    axis, vals = _sweep_values(cfg)
    solvers = _solvers(cfg, "both")
    budgets = [_build(SystemBudget, {**cfg["budget"], axis: v}, "budget") for v in vals]
    yield [axis] + ALLOC_COLUMNS
    for v, b in zip(vals, budgets):
        rows, _ = _solve_rows(channel, b, schemes, solvers, prefix=[_num(v)])
        yield from rows
    return 0


def _positions(cfg):
    try:
        pos = np.asarray(cfg["positions"], dtype=float)
    except (TypeError, ValueError):
        pos = np.empty(0)
    if pos.ndim != 2 or pos.shape[1] != 2 or len(pos) < 2:
        raise ConfigError("positions: expected a list of at least two [x, y] pairs")
    return pos


def run_pair(cfg):
    budget = _build(SystemBudget, cfg["budget"], "budget")
    combining = _schemes(cfg["schemes"], COMBINING)
    policies = _policies(cfg)
    seed = _seed(cfg)
    if cfg["positions"] is not None:
        pos = _positions(cfg)
        counts = [len(pos)]
    else:
        pos = None
        counts = _users(cfg)[:1]
    cell = _build(CellConfig, {**cfg["cell"], "user_count": counts[0], "seed": seed, "trials": 1}, "cell")
    _cap_check(cfg, policies, counts)
    pairings = {c: _pairing(cfg, c) for c in combining}
    users = draw_users(cell, trial_rng(seed, 0), pos)
    yield ["policy", "scheme", "pairs", "modes", "pair_throughputs", "min_throughput", "jain"]
    for c in combining:
        results = run_policies(users, budget, policies, pairings[c])
        for p in policies:
            r = results[p]
            yield [
                p, c,
                ";".join("-".join(str(u + 1) for u in pair) for pair in r.pairs),
                ";".join(r.modes),
                ";".join(_num(t) for t in r.throughputs),
                _num(r.min_throughput),
                _num(r.jain),
            ]
    return 0


def run_montecarlo(cfg):
    budget = _build(SystemBudget, cfg["budget"], "budget")
    combining = _schemes(cfg["schemes"], COMBINING)
    policies = _policies(cfg)
    seed = _seed(cfg)
    counts = _users(cfg)
    _cap_check(cfg, policies, counts)
    if not isinstance(cfg["trials"], int) or cfg["trials"] < 1:
        raise ConfigError("trials: must be a positive integer")
    cells = {n: _build(CellConfig, {**cfg["cell"], "user_count": n, "seed": seed, "trials": cfg["trials"]}, "cell") for n in counts}
    pairings = {c: _pairing(cfg, c) for c in combining}
    workers = cfg["workers"]
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers: must be a positive integer")
    yield [
        "users", "policy", "scheme", "mean_min_throughput", "se_min_throughput",
        "mean_jain", "se_jain", "infeasible_trials", "trials",
    ]
    for n in counts:
        for c in combining:
            _, agg = run_trials(cells[n], policies, budget, pairings[c], workers)
            for p in policies:
                s = agg[p]
                yield [
                    str(n), p, c, _num(s.mean_min_throughput), _num(s.se_min_throughput),
                    _num(s.mean_jain), _num(s.se_jain), str(s.infeasible_trials), str(s.trials),
                ]
    return 0


RUNNERS = {"allocate": run_allocate, "sweep": run_sweep, "pair": run_pair, "montecarlo": run_montecarlo}


def config_digest(cfg) -> str:
    """SHA-256 of the resolved config, ignoring settings that cannot change results."""
    relevant = {k: v for k, v in cfg.items() if k != "workers"}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()


def render(mode, cfg) -> tuple[str, int]:
    """Run ``mode`` and return (CSV text, exit status).

    The first row produced is the header, yielded only after validation, so
    a bad config raises before any solving happens.
    """
    gen = RUNNERS[mode](cfg)
    header = next(gen)
    buf = io.StringIO()
    buf.write(f"# cnoma-fbl {__version__} mode={mode} seed={cfg['seed']} config_sha256={config_digest(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    status = 0
    while True:
        try:
            w.writerow(next(gen))
        except StopIteration as stop:
            status = stop.value or 0
            break
    return buf.getvalue(), status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--scheme", action="append", help="sc, mrc, noma, oma (repeatable or comma list)")
    common.add_argument("--policy", action="append", help=f"pairing policies: {', '.join(POLICIES)}")
    common.add_argument("--out", help="output CSV path (default stdout)")
    common.add_argument("--dp", type=float, help="power grid step in watts")
    common.add_argument("--m-stride", dest="m_stride", type=int, help="blocklength grid stride")
    common.add_argument("--trials", type=int)
    common.add_argument("--users", help="user count(s), comma separated")
    common.add_argument("--d-max", dest="d_max", type=int)
    common.add_argument("--p-ave", dest="p_ave", type=float)
    common.add_argument("--g1", type=float)
    common.add_argument("--g2", type=float)
    common.add_argument("--g12", type=float)
    common.add_argument("--solver", choices=["optimal", "suboptimal", "both"])
    common.add_argument("--axis", choices=["d_max", "p_ave"])
    common.add_argument("--range", help="sweep range START:STOP[:STEP], inclusive")
    common.add_argument("--r0", type=float, help="D2D coverage radius in metres")
    common.add_argument("--workers", type=int, help="processes for Monte Carlo trials")
    p = argparse.ArgumentParser(prog="cnoma-fbl", description="Max-min fair C-NOMA allocation and pairing under finite blocklength.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="mode", required=True)
    for m in MODES:
        sub.add_parser(m, parents=[common])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        text, status = render(args.mode, cfg)
    except ConfigError as e:
        print(f"cnoma-fbl: error: {e}", file=sys.stderr)
        return 2
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
