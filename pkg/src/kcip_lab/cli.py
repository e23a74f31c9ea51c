"""Command-line experiment harness.

Each subcommand writes a CSV (or JSON) table and, when ``--out`` is given,
a run manifest ``<out>.manifest.json`` that validates against
``schema/manifest.schema.json``. Errors go to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from importlib import resources

import numpy as np

from . import __version__
from .chains import (bl_spec, kcip_spec, mh_wrap, perfect_spec, se_spec,
                     uniform_on)
from .configspace import (enumerate_kcip_space, enumerate_omega_k, enumerate_omega_upto,
                          enumerate_se_space, max_exact_states, stratum_sizes)
from .errors import (ConfigError, EmptyIntermediateSetError, InvalidRateError,
                     NoOpenSequenceError, NotReversibleError, ReducibleChainError,
                     StateCapError)
from .estimators import (TraceStream, coalescent_occupancy_profile, drift_estimate,
                         fit_drift, fit_occupancy_constant, geometric_grid, kcip_bits_stepper,
                         mixing_time, sample_independent_start, simulate_kcip,
                         tv_mixing_curve_exact, visit_frequencies)
from .flows import bl_flow_sample, bl_flows_for_comparison
from .lattice import build_torus
from .rng import replica_rng
from .spectral import (birth_death_hitting_time, build_kernel_matrix, comparison_constant,
                       hitting_times_solve, kernel_report, madras_randall_check,
                       projected_kernel, spectral_gap, stationary_distribution,
                       trace_kernel_exact)

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("simulate", "exact", "trace", "project", "decompose", "drift", "coalesce", "mix",
            "flows")
CHAINS = ("kcip", "se", "se_lazy", "bl", "perfect", "bl_mh", "se_mh")


@dataclass
class ExperimentConfig:
    command: str
    L: int = 3
    d: int = 2
    c: float | None = None
    p: float | None = None
    k: str | None = None
    q: float | None = None
    horizon: int | None = None
    replicas: int = 1
    seed: int = 0
    out: str | None = None
    format: str | None = None
    gamma: float = 1.5
    r: float = 2.0
    epsilon: float = 0.1
    chain: str = "kcip"
    max_exact_states: int | None = None

    @property
    def n(self) -> int:
        return self.L**self.d

    @property
    def density(self) -> float:
        return self.p if self.p is not None else self.c / self.n

    def density_exact(self) -> Fraction:
        if self.p is not None:
            return Fraction(str(self.p))
        return Fraction(str(self.c)) / self.n

    def k_list(self) -> list[int]:
        if self.k is None:
            return []
        try:
            return [int(s) for s in str(self.k).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"k must be an integer or comma list, got {self.k!r}") from None

    def k_single(self, default=None) -> int:
        ks = self.k_list()
        if not ks:
            if default is None:
                raise ConfigError(f"{self.command} needs --k")
            return default
        if len(ks) > 1:
            raise ConfigError(f"{self.command} takes a single --k")
        return ks[0]

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.L < 3 or self.d < 1:
            raise ConfigError("need L >= 3 and d >= 1")
        if self.c is not None and self.p is not None:
            raise ConfigError("give exactly one of --c and --p")
        needs_density = self.command in ("simulate", "exact", "trace", "project", "decompose",
                                          "drift", "mix") and self.chain == "kcip"
        if needs_density and self.c is None and self.p is None:
            raise ConfigError("give exactly one of --c and --p")
        if self.c is not None and self.c <= 0:
            raise ConfigError("c must be positive")
        if self.c is not None or self.p is not None:
            if not 0 < self.density < 1:
                raise ConfigError(f"density p={self.density} outside (0, 1)")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.format not in (None, "csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.gamma <= 1:
            raise ConfigError("gamma must exceed 1")
        if self.chain not in CHAINS:
            raise ConfigError(f"chain must be one of {', '.join(CHAINS)}")
        if self.max_exact_states is not None and self.max_exact_states < 1:
            raise ConfigError("max-exact-states must be positive")
        self.k_list()

    def cap(self) -> int:
        return self.max_exact_states if self.max_exact_states is not None else max_exact_states()


# ----------------------------------------------------------------------
# configuration loading

_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    t = str(_TYPES[key])
    if "int" in t and "str" not in t:
        return int(raw)
    if "float" in t:
        return float(raw)
    return raw


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _TYPES or key == "command":
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _coerce(key, val)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}") from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--L", type=int)
    common.add_argument("--d", type=int)
    dens = common.add_mutually_exclusive_group()
    dens.add_argument("--c", type=float)
    dens.add_argument("--p", type=float)
    common.add_argument("--k")
    common.add_argument("--q", type=float)
    common.add_argument("--horizon", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--gamma", type=float, help="checkpoint grid ratio")
    common.add_argument("--r", type=float, help="occupation radius")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--chain", choices=CHAINS)
    common.add_argument("--max-exact-states", dest="max_exact_states", type=int)
    parser = _Parser(prog="kcip-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def load_config(argv) -> ExperimentConfig:
    ns = build_parser().parse_args(argv)
    values = read_config_file(ns.config) if ns.config else {}
    flags = {k: v for k, v in vars(ns).items() if v is not None and k not in ("config",)}
    if "c" in flags or "p" in flags:
        values.pop("c", None)
        values.pop("p", None)
    values.update(flags)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


# ----------------------------------------------------------------------
# output


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, Fraction):
        return str(v)
    return v


@dataclass
class Result:
    columns: tuple
    rows: list
    summary: dict
    default_format: str = "csv"


def manifest_schema() -> dict:
    text = resources.files("kcip_lab").joinpath("schema/manifest.schema.json").read_text()
    return json.loads(text)


def _versions() -> dict:
    import numba
    import scipy
    return {"kcip_lab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_outputs(cfg: ExperimentConfig, res: Result, wall: float, stdout=None) -> list[str]:
    stdout = stdout or sys.stdout
    form = cfg.format or res.default_format
    if form == "csv":
        body = to_csv(res.columns, res.rows)
    else:
        body = json.dumps({"command": cfg.command, "summary": _jsonable(res.summary),
                           "columns": list(res.columns), "rows": _jsonable(res.rows)},
                          sort_keys=True) + "\n"
    outputs = []
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(body)
        outputs.append(cfg.out)
        manifest = {
            "command": cfg.command,
            "config": _jsonable({k: v for k, v in asdict(cfg).items() if k != "command"}),
            "seed": cfg.seed,
            "versions": _versions(),
            "wall_time_s": wall,
            "outputs": [cfg.out],
            "columns": list(res.columns),
            "summary": _jsonable(res.summary),
        }
        import jsonschema
        jsonschema.validate(manifest, manifest_schema())
        mpath = cfg.out + ".manifest.json"
        with open(mpath, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append(mpath)
    else:
        stdout.write(body)
    return outputs


# ----------------------------------------------------------------------
# subcommands


def _space_and_spec(cfg, lat, exact=False):
    chain = cfg.chain
    cap = cfg.cap()
    if chain == "kcip":
        if 2**lat.n - 1 > cap:
            raise StateCapError(f"{2**lat.n - 1} KCIP states exceeds the cap of {cap}")
        p = cfg.density_exact() if exact else cfg.density
        return enumerate_kcip_space(lat), kcip_spec(p)
    k = cfg.k_single()
    if chain in ("se", "se_lazy", "bl"):
        if math.comb(lat.n, k) > cap:
            raise StateCapError(f"C({lat.n},{k}) states exceeds the cap of {cap}")
        spec = {"se": se_spec(), "se_lazy": se_spec(lazy=True), "bl": bl_spec()}[chain]
        return enumerate_se_space(lat, k), spec
    om = enumerate_omega_k(lat, k)
    if len(om) > cap:
        raise StateCapError(f"{len(om)} states exceeds the cap of {cap}")
    if not len(om):
        raise ConfigError(f"Omega_{k} is empty on this lattice")
    if chain == "perfect":
        return om, perfect_spec()
    prop = bl_spec() if chain == "bl_mh" else se_spec(lazy=True)
    return om, mh_wrap(prop, uniform_on(om.states))


def cmd_exact(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    space, spec = _space_and_spec(cfg, lat)
    K = build_kernel_matrix(spec, space, cap=cfg.cap())
    pi_num = stationary_distribution(K, method="eig")
    params = {"L": cfg.L, "d": cfg.d, "chain": cfg.chain}
    if cfg.chain == "kcip":
        params["p"] = cfg.density
    summary = kernel_report(K.with_pi(pi_num), params)
    summary["stationary_max_error"] = float(np.max(np.abs(pi_num - K.pi)))
    rows = [(i, b, b.bit_count(), pi_num[i], K.pi[i]) for i, b in enumerate(space.states)]
    return Result(("index", "bits", "particles", "pi_numeric", "pi_closed_form"), rows, summary,
                  "json")


def _kcip_kernel(cfg, lat):
    if cfg.chain != "kcip":
        raise ConfigError(f"{cfg.command} works on the kcip chain only")
    space, spec = _space_and_spec(cfg, lat)
    return build_kernel_matrix(spec, space, cap=cfg.cap())


def cmd_trace(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    k = cfg.k_single(2)
    K = _kcip_kernel(cfg, lat)
    sub = enumerate_omega_upto(lat, k)
    idx = [K.space.index[b] for b in sub.states]
    T = trace_kernel_exact(K, idx)
    pi_t = stationary_distribution(T, method="eig")
    cond = K.pi[np.array(sorted(idx))]
    cond = cond / cond.sum()
    summary = {"k": k, "states": len(T), "gap": spectral_gap(T, pi_t),
               "stationary_max_error": float(np.max(np.abs(pi_t - cond)))}
    freq = se = None
    if cfg.horizon:
        S = set(sub.states)
        pos = {b: i for i, b in enumerate(T.space.states)}
        step = kcip_bits_stepper(lat, cfg.density, replica_rng(cfg.seed, 0, 1))
        stream = TraceStream(step, S.__contains__, T.space.states[0], cfg.horizon)
        visits = [pos[b] for b in stream]
        freq, se = visit_frequencies(visits, len(T))
        z = np.abs(freq - cond) / np.where(se > 0, se, np.inf)
        summary.update(kappa=stream.kappa, censored=stream.censored,
                       max_standard_errors=float(z.max()))
    rows = []
    for i, b in enumerate(T.space.states):
        row = [i, b, b.bit_count(), pi_t[i], cond[i]]
        if freq is not None:
            row += [freq[i], se[i]]
        rows.append(tuple(row))
    cols = ("index", "bits", "stratum", "pi_trace", "pi_conditioned")
    if freq is not None:
        cols += ("empirical", "std_error")
    return Result(cols, rows, summary)


def cmd_project(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    k = cfg.k_single(3)
    if k < 2:
        raise ConfigError("the projected chain needs k >= 2")
    counts = stratum_sizes(lat, k)
    if cfg.p is not None:
        c = Fraction(str(cfg.p)) * lat.n
    else:
        c = Fraction(str(cfg.c))
    Pt = projected_kernel(counts, c, lat.n)
    labels = list(range(1, k))
    rows = []
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            v = Pt.P[i, j]
            if v:
                rows.append((a, b, float(v), str(v)))
    Pf = Pt.as_float()
    m = len(labels)
    hit = {}
    if m >= 2:
        up, down = birth_death_hitting_time(Pf, 0, m - 1), birth_death_hitting_time(Pf, m - 1, 0)
        hit = {"up_formula": up, "up_solve": float(hitting_times_solve(Pf, m - 1)[0]),
               "down_formula": down, "down_solve": float(hitting_times_solve(Pf, 0)[m - 1])}
    summary = {"counts": counts, "row_sum_defect": float(max(abs(s - 1) for s in Pt.P.sum(axis=1))),
               "hitting_times": hit}
    return Result(("i", "j", "value", "exact"), rows, summary)


def cmd_decompose(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    k = cfg.k_single(3)
    K = _kcip_kernel(cfg, lat)
    sub = enumerate_omega_upto(lat, k)
    T = trace_kernel_exact(K, [K.space.index[b] for b in sub.states])
    rep = madras_randall_check(T, k)
    rows = [(i + 1, g) for i, g in enumerate(rep.restriction_gaps)]
    return Result(("i", "restriction_gap"), rows, rep.to_dict(), "json")


def cmd_simulate(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    k = cfg.k_single(1)
    horizon = cfg.horizon or lat.n**2
    grid = geometric_grid(horizon, cfg.gamma)
    rows = []
    min_v = None
    for rep in range(cfg.replicas):
        x = sample_independent_start(lat, k, replica_rng(cfg.seed, rep, 0))
        st = simulate_kcip(lat, cfg.density, x, horizon, replica_rng(cfg.seed, rep, 1), grid,
                           r=cfg.r)
        st.check()
        min_v = st.min_V if min_v is None else min(min_v, st.min_V)
        rows.extend((rep,) + r for r in st.rows())
    return Result(("replica",) + tuple(st.COLUMNS), rows,
                  {"horizon": horizon, "min_V": min_v, "p": cfg.density})


def cmd_drift(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    starts = cfg.k_list() or [1]
    if cfg.replicas < 2:
        raise ConfigError("drift needs at least 2 replicas")
    c = cfg.c if cfg.c is not None else cfg.p * lat.n
    ests = [drift_estimate(lat, c, cfg.epsilon, v1, cfg.replicas, cfg.seed) for v1 in starts]
    summary = {"epsilon": cfg.epsilon, "min_V": min(e.min_v for e in ests)}
    if len({e.v1 for e in ests}) >= 2:
        alpha, icpt = fit_drift(ests)
        summary.update(alpha=alpha, intercept=icpt)
    return Result(("V1", "horizon", "mean", "half_width"), [e.row() for e in ests], summary)


def cmd_coalesce(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    k = cfg.k_single(2)
    q = cfg.q if cfg.q is not None else 1 / k
    if not 0 <= q <= 1 / k:
        raise InvalidRateError(f"q={q} exceeds 1/k")
    horizon = cfg.horizon or 10 * lat.n
    grid = sorted(set(geometric_grid(horizon, cfg.gamma)) |
                  {t for t in (lat.n, 10 * lat.n) if t <= horizon})
    prof = coalescent_occupancy_profile(lat, k, q, horizon, cfg.replicas, cfg.seed, grid)
    summary = {"k": k, "q": q}
    if horizon >= 10 * lat.n:
        try:
            fit = fit_occupancy_constant(prof)
            summary.update(window_constants=list(fit.window_constants), ratio=fit.ratio)
        except ConfigError:
            pass
    return Result(("t", "mean_L"), prof.rows(), summary)


def cmd_mix(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    space, spec = _space_and_spec(cfg, lat)
    K = build_kernel_matrix(spec, space, cap=cfg.cap())
    start = len(space) - 1  # all-ones for kcip; last state in enumeration otherwise
    curve = tv_mixing_curve_exact(K, start, cfg.horizon or 100)
    return Result(("t", "tv"), curve, {"start_bits": space.states[start],
                                       "tau_quarter": mixing_time(curve, 0.25)})


def cmd_flows(cfg) -> Result:
    lat = build_torus(cfg.L, cfg.d)
    k = cfg.k_single(2)
    summary = {"k": k}
    om = enumerate_omega_k(lat, k) if math.comb(lat.n, k) <= cfg.cap() else None
    if om is not None and len(om) >= 2:
        Kp = build_kernel_matrix(perfect_spec(), om)
        Q = build_kernel_matrix(mh_wrap(bl_spec(), uniform_on(om.states)), om)
        flows, nfb = bl_flows_for_comparison(lat, om)
        summary.update(states=len(om), comparison_constant=comparison_constant(Kp, Q, flows),
                       fallback_pairs=nfb, pairs=len(flows), target=4 * k * k)
    rows = []
    tries_total = 0
    for rep in range(cfg.replicas):
        rng = replica_rng(cfg.seed, rep, 0)
        x = sample_independent_start(lat, k, rng)
        y = sample_independent_start(lat, k, rng)
        try:
            fp = bl_flow_sample(lat, x, y, rng)
        except EmptyIntermediateSetError:
            rows.append((rep, x.bits, y.bits, 0, 0))
            continue
        tries_total += fp.tries
        rows.append((rep, x.bits, y.bits, fp.tries, fp.length))
    accepted = sum(1 for r in rows if r[3])
    summary["rejection_rate"] = 1 - accepted / tries_total if tries_total else None
    return Result(("replica", "x_bits", "y_bits", "tries", "length"), rows, summary)


HANDLERS = {"simulate": cmd_simulate, "exact": cmd_exact, "trace": cmd_trace,
            "project": cmd_project, "decompose": cmd_decompose, "drift": cmd_drift,
            "coalesce": cmd_coalesce, "mix": cmd_mix, "flows": cmd_flows}


def _exit_code(exc) -> int:
    if isinstance(exc, StateCapError):
        return EXIT_CAP
    if isinstance(exc, (ConfigError, InvalidRateError)):
        return EXIT_CONFIG
    if isinstance(exc, (ReducibleChainError, NotReversibleError, NoOpenSequenceError,
                        EmptyIntermediateSetError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    return None


def run(cfg: ExperimentConfig, stdout=None) -> int:
    t0 = time.perf_counter()
    res = HANDLERS[cfg.command](cfg)
    write_outputs(cfg, res, time.perf_counter() - t0, stdout)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = load_config(argv)
        return run(cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = _exit_code(exc)
        if code is None:
            raise
        err = {"error": type(exc).__name__, "message": str(exc).replace("\n", " "),
               "exit_code": code}
        sys.stderr.write(json.dumps(err) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
