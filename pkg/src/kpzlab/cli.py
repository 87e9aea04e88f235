"""Command-line entry point: ``python -m kpzlab <subcommand> --config FILE``.

Every run writes ``manifest.json`` first, then ``report.json``, ``rows.csv``
and ``plot.csv`` into ``--out``. The exit status is 0 only when every
invariant checked by the subcommand holds; 1 when some check fails; 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .control import (
    ControlPolicy,
    boue_dupuis_check,
    conditioned_entropy,
    fit_entropy_constant,
    remainder_feedback,
    representation_value,
)
from .field import TorusField, TorusGrid, holder_quotient, second_difference_exponent
from .heatkernel import (
    SandwichError,
    estimate_density,
    fit_gaussian_sandwich,
    gradient_ratio,
    sandwich_stability,
    torus_heat_bounds_check,
)
from .noise import InstabilityError, build_trees, coarsen, mollify, sample_noise, save_snapshot
from .pde import solve_kpz_cole_hopf, solve_kpz_direct
from .rng import stream
from .zvonkin import ZvonkinError, build_zvonkin_map, law_equivalence_check, simulate_direct_paths

SUBCOMMANDS = ("noise", "trees", "kpz", "control", "zvonkin", "density",
               "lower-bound", "oscillation", "harnack", "hopf-lax")

PROFILES = {
    "smoke": {"n_points": 64, "seeds": (0, 1), "dt": 1e-3, "n_paths": 20_000,
              "hopf_lax_ics": 10, "magnitudes": (1.0, 1000.0)},
    "desk": {"n_points": 256, "seeds": tuple(range(10)), "dt": 1e-3, "n_paths": 10_000},
    "full": {"n_points": 512, "seeds": tuple(range(20)), "dt": 5e-4, "n_paths": 100_000},
}

# extra parameters that live outside ExperimentConfig, with defaults
EXTRA_DEFAULTS = {
    "x": 0.0,
    "t": 0.5,
    "ladder": (4e-4, 2e-4, 1e-4),
    "kpz_horizon": 0.25,
    "order_min": 0.8,
    "density_times": (0.1, 0.25, 0.5),
}

TUPLE_FIELDS = {"time_probes", "magnitudes", "families", "seeds", "ladder", "density_times"}


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    config_path: str
    profile: str
    out_dir: str
    threads: int
    config: dict
    config_hash: str
    schema_version: int = ex.SCHEMA_VERSION

    def experiment_config(self) -> ex.ExperimentConfig:
        names = {f.name for f in fields(ex.ExperimentConfig)}
        kw = {k: tuple(v) if isinstance(v, list) else v
              for k, v in self.config.items() if k in names}
        return ex.ExperimentConfig(**kw)

    def extra(self, key):
        v = self.config[key]
        return tuple(v) if isinstance(v, list) else v

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "subcommand": self.subcommand,
                "config_path": self.config_path, "profile": self.profile,
                "out_dir": self.out_dir, "threads": self.threads,
                "config_hash": self.config_hash, "config": self.config}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if key in TUPLE_FIELDS:
            items = [s.strip() for s in raw.replace(";", ",").split(",") if s.strip()]
            if key == "families":
                return tuple(items)
            if key == "seeds":
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(eval_fraction(raw))
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def eval_fraction(raw: str) -> float:
    """Parse ``0.0625`` or ``1/16``."""
    if "/" in raw:
        num, den = raw.split("/", 1)
        return float(num) / float(den)
    return float(raw)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,1,2"`` or ``"0-9"`` (inclusive range) or a mix."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError("seeds: empty list")
    return tuple(out)


def resolve_config(path: Path, profile: str, seeds: tuple | None) -> dict:
    """Defaults, then the profile, then the file's sections, then ``--seeds``."""
    base = ex.ExperimentConfig().to_dict()
    base = {k: tuple(v) if isinstance(v, list) else v for k, v in base.items()}
    base.update(EXTRA_DEFAULTS)
    base.update(PROFILES[profile])
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"config: {e}") from None
    for section in cp.sections():
        for key, raw in cp.items(section):
            if key not in base:
                raise ConfigError(f"{key}: unknown parameter in section [{section}]")
            base[key] = _coerce(key, raw, base[key])
    if seeds is not None:
        base["seeds"] = seeds
    return base


def config_hash(config: dict) -> str:
    blob = json.dumps({k: list(v) if isinstance(v, tuple) else v for k, v in config.items()},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kpzlab",
        description="Numerical checks for the KPZ control representation on the torus.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, type=Path,
                   help="INI file; sections are named after modules, keys are parameters")
    p.add_argument("--out", type=Path, default=Path("kpzlab-out"), help="output directory")
    p.add_argument("--seeds", type=str, default=None, help="e.g. '0,1,2' or '0-9'")
    p.add_argument("--profile", choices=tuple(PROFILES), default="desk",
                   help="smoke: n=64, 2 seeds; desk: n=256, 10 seeds; full: n=512, 20 seeds")
    p.add_argument("--threads", type=int, default=1, help="worker threads across seeds")
    return p


def parse_and_validate(argv) -> RunManifest:
    args = build_parser().parse_args(argv)
    if not args.config.is_file():
        raise ConfigError(f"config: file not found: {args.config}")
    if args.threads < 1:
        raise ConfigError("threads: must be at least 1")
    seeds = parse_seeds(args.seeds) if args.seeds else None
    cfg = resolve_config(args.config, args.profile, seeds)
    m = RunManifest(args.subcommand, str(args.config), args.profile, str(args.out),
                    args.threads, {k: list(v) if isinstance(v, tuple) else v
                                   for k, v in cfg.items()}, config_hash(cfg))
    ec = m.experiment_config()
    ec.validate(require_pin=args.subcommand == "lower-bound")
    return m


# -- subcommand bodies -------------------------------------------------------------------
# Each returns (report: BoundReport, plot_rows: list[dict]).


def _noise(m: RunManifest):
    ec = m.experiment_config()
    rep = ex.BoundReport("noise", m.config_hash)
    grid = ec.grid
    plot = []
    for seed in ec.seeds:
        raw = sample_noise(grid, ec.dt, ec.horizon, seed, 0.0)
        var = float(raw.cells.var())
        expect = 1.0 / (grid.spacing * ec.dt)
        mol = mollify(raw.cells, grid, ec.mollification_scale)
        spec = np.abs(np.fft.rfft(mol, axis=-1)).mean(axis=0)
        cut = int(np.floor(1.0 / ec.mollification_scale)) if ec.mollification_scale else grid.n_points
        leak = float(spec[cut + 1:].max()) if cut + 1 < len(spec) else 0.0
        again = sample_noise(grid, ec.dt, ec.horizon, seed, ec.mollification_scale)
        same = bool(np.array_equal(again.cells, mol))
        rep.rows.append({"seed": seed, "cell_variance": var, "expected": expect,
                         "relative_error": var / expect - 1.0, "spectrum_leak": leak,
                         "reproducible": same})
        if seed == ec.seeds[0]:
            plot = [{"mode": k, "mean_abs_coefficient": float(v)} for k, v in enumerate(spec)]
    n_cells = grid.n_points * int(round(ec.horizon / ec.dt))
    tol = max(0.02, 4.0 * np.sqrt(2.0 / n_cells))
    worst = max(abs(r["relative_error"]) for r in rep.rows)
    rep.add_check("cell_variance", worst <= tol, worst, tol)
    rep.add_check("cutoff", all(r["spectrum_leak"] < 1e-8 for r in rep.rows), True, True)
    rep.add_check("reproducible", all(r["reproducible"] for r in rep.rows), True, True)
    return rep, plot


def _trees(m: RunManifest):
    ec = m.experiment_config()
    rep = ex.BoundReport("trees", m.config_hash)
    grid = ec.grid
    out = Path(m.out_dir)
    plot = []
    centred = []
    for seed in ec.seeds:
        noise = sample_noise(grid, ec.dt, ec.horizon, seed, ec.mollification_scale)
        trees = build_trees(noise)
        save_snapshot(trees, out / f"trees_seed{seed}.bin")
        j = len(trees.y.times) - 1
        row = {"seed": seed, "c_ren": trees.c_ren,
               "sup_y": float(np.abs(trees.y.data).max()),
               "sup_y_vee": float(np.abs(trees.y_vee.data).max()),
               "sup_y_r": float(np.abs(trees.y_r.data).max()),
               "holder_y_0.4": holder_quotient(trees.y.data[j], grid, 0.4)}
        lags = [1, 2, 4]
        for name, fld in (("y", trees.y), ("y_vee", trees.y_vee), ("y_r", trees.y_r)):
            row[f"exponent_{name}"] = second_difference_exponent(fld.data[j], grid, lags)
        # time-averaged spatial mean of the centred Yv source
        from .field import derivative_values
        dy = derivative_values(trees.y.data[:-1], grid)
        src = (0.5 * dy * dy - trees.c_ren).mean(axis=1)
        burn = int(np.ceil(max(ec.mollification_scale, grid.spacing) ** 2 / ec.dt - 1e-9))
        centred.append(float(src[burn:].mean()))
        row["centred_source_mean"] = centred[-1]
        rep.rows.append(row)
        plot.append({"seed": seed, "t": trees.horizon, "c_ren": trees.c_ren})
    rep.add_check("finite", all(np.isfinite(r["sup_y_r"]) for r in rep.rows), True, True)
    worst = max(abs(c) for c in centred)
    rep.add_check("centring", worst < 1e-9, worst, 1e-9, "renormalised source has zero mean")
    return rep, plot


def _kpz(m: RunManifest):
    ec = m.experiment_config()
    rep = ex.BoundReport("kpz", m.config_hash)
    grid = ec.grid
    ladder = sorted(m.extra("ladder"), reverse=True)
    horizon = m.extra("kpz_horizon")
    fine = ladder[-1]
    orders = []
    plot = []
    for seed in ec.seeds:
        base = sample_noise(grid, fine, horizon, seed, ec.mollification_scale)
        from .noise import renormalization_constant
        c = renormalization_constant(base)
        errs = []
        for dt in ladder:
            nz = coarsen(base, int(round(dt / fine)))
            a = solve_kpz_cole_hopf(TorusField.constant(grid, 0.0), nz, c).h.data[-1]
            b = solve_kpz_direct(TorusField.constant(grid, 0.0), nz, c).h.data[-1]
            errs.append(float(np.abs(a - b).max()))
            rep.rows.append({"seed": seed, "dt": dt, "sup_distance": errs[-1]})
            plot.append({"seed": seed, "dt": dt, "sup_distance": errs[-1]})
        slope = float(np.polyfit(np.log(ladder), np.log(errs), 1)[0])
        orders.append(slope)
    rep.constants = {"orders": orders}
    lo = min(orders)
    rep.add_check("order", lo >= m.extra("order_min"), lo, m.extra("order_min"))
    return rep, plot


def _control(m: RunManifest):
    ec = m.experiment_config()
    rep = ex.BoundReport("control", m.config_hash)
    seed = ec.seeds[0]
    pols = [ControlPolicy.constant(c) for c in np.round(np.arange(0, 1.01, 0.25), 2)]
    bd = boue_dupuis_check(lambda b: b, pols, ec.n_paths, seed)
    se = float(np.hypot(bd.lhs.std_error, bd.rhs_best.std_error))
    rep.rows.append({"probe": "boue-dupuis", "lhs": bd.lhs.mean, "lhs_se": bd.lhs.std_error,
                     "rhs": bd.rhs_best.mean, "rhs_se": bd.rhs_best.std_error,
                     "policy": bd.best_policy})
    rep.add_check("lhs_matches_half", abs(bd.lhs.mean - 0.5) <= 3 * bd.lhs.std_error,
                  bd.lhs.mean, 0.5)
    rep.add_check("rhs_below_lhs", bd.consistent(), bd.rhs_best.mean, bd.lhs.mean + 3 * se)
    ent = conditioned_entropy(0.0, 1.0, (-1.0, 1.0))
    rep.rows.append({"probe": "conditioned-entropy", "lhs": ent, "lhs_se": 0.0,
                     "rhs": float(-np.log(2 * 0.8413447460685429 - 1)), "rhs_se": 0.0,
                     "policy": ""})
    fit = fit_entropy_constant()
    rep.constants = {"jensen_K": fit.K, "jensen_violations": fit.violations}
    rep.add_check("jensen_bound", fit.violations == 0, fit.violations, 0)
    # representation with zero noise and sine data
    grid = ec.grid
    t = m.extra("t")
    from .noise import NoiseRealization
    zero = NoiseRealization.zero(grid, ec.dt, t)
    trees = build_trees(zero)
    hbar = TorusField.from_function(grid, lambda x: np.sin(2 * np.pi * x))
    sol = solve_kpz_cole_hopf(hbar, zero)
    pol = ControlPolicy.feedback(remainder_feedback(sol.h, trees, t))
    plot = []
    worst = 0.0
    for i, x in enumerate(np.linspace(-0.5, 0.375, 8)):
        est = representation_value(hbar, trees, pol, t, float(x), ec.n_paths, ec.dt, seed + i)
        ref = float(sol.h.data[-1][int(round((x + 0.5) / grid.spacing)) % grid.n_points])
        gap = abs(est.mean - ref) - (3 * est.std_error + 2 * ec.dt)
        worst = max(worst, gap)
        rep.rows.append({"probe": f"representation x={x:g}", "lhs": est.mean,
                         "lhs_se": est.std_error, "rhs": ref, "rhs_se": 0.0, "policy": "feedback"})
        plot.append({"x": float(x), "estimate": est.mean, "pde": ref})
    rep.add_check("representation", worst <= 0.0, worst, 0.0, "|est - pde| - (3 se + 2 dt)")
    return rep, plot


def _zvonkin(m: RunManifest):
    ec = m.experiment_config()
    rep = ex.BoundReport("zvonkin", m.config_hash)
    t = m.extra("t")
    x = m.extra("x")
    grid = ec.grid
    plot = []
    for seed in ec.seeds:
        noise = sample_noise(grid, ec.dt, t, seed, ec.mollification_scale)
        trees = build_trees(noise)
        zmap = build_zvonkin_map(trees.b, t)
        lr = law_equivalence_check(trees.b, zmap, x, t, ec.n_paths, seed)
        for s, stat, p in zip(lr.times, lr.statistics, lr.p_values):
            rep.rows.append({"seed": seed, "s": s, "ks_statistic": stat, "p_value": p,
                             "lambda": zmap.lam, "grad_bound": zmap.grad_bound,
                             "qv_in_bounds": lr.qv_fraction_in_bounds})
        plot.extend({"seed": seed, "lambda": lam, "grad_bound": gb} for lam, gb in zmap.trace)
    pmin = min(r["p_value"] for r in rep.rows)
    rep.add_check("ks", pmin > 0.01, pmin, 0.01)
    rep.add_check("grad_bound", max(r["grad_bound"] for r in rep.rows) < 0.5,
                  max(r["grad_bound"] for r in rep.rows), 0.5)
    rep.add_check("quadratic_variation", min(r["qv_in_bounds"] for r in rep.rows) == 1.0,
                  min(r["qv_in_bounds"] for r in rep.rows), 1.0)
    return rep, plot


def _density(m: RunManifest):
    ec = m.experiment_config()
    rep = ex.BoundReport("density", m.config_hash)
    seed = ec.seeds[0]
    plot = []
    fits = []
    for t in m.extra("density_times"):
        z = np.sqrt(t) * stream(seed, "brownian-density", int(t * 1e6)).standard_normal(ec.n_paths)
        d = estimate_density(z)
        f = fit_gaussian_sandwich(d, t)
        fits.append(f)
        rep.rows.append({"case": "brownian", "t": t, **{k: f.as_dict()[k] for k in
                        ("C_upper", "c_upper", "C_lower", "c_lower")}})
        plot.extend({"t": t, "y": float(y), "density": float(v),
                     "upper": float(f.upper(y)), "lower": float(f.lower(y))}
                    for y, v in zip(d.points[::8], d.values[::8]))
    worst_c = max(max(abs(f.c_upper - 0.5), abs(f.c_lower - 0.5)) / 0.5 for f in fits)
    rep.add_check("brownian_exponents", worst_c <= 0.10, worst_c, 0.10)
    rep.constants = {"brownian_stability": sandwich_stability(fits)}
    times = m.extra("density_times")
    trees = build_trees(sample_noise(ec.grid, ec.dt, max(times), seed, ec.mollification_scale))
    drift_paths = simulate_direct_paths(trees.b, 0.0, max(times), ec.n_paths, ec.dt, seed, times)
    tree_fits = []
    for t in times:
        try:
            f = fit_gaussian_sandwich(estimate_density(drift_paths[t]), t)
        except SandwichError as e:
            rep.add_check(f"tree_sandwich_t={t:g}", False, str(e), "feasible")
            continue
        tree_fits.append(f)
        rep.rows.append({"case": "tree-drift", "t": t, **{k: f.as_dict()[k] for k in
                        ("C_upper", "c_upper", "C_lower", "c_lower")}})
    if tree_fits:
        st = sandwich_stability(tree_fits)
        rep.constants["tree_stability"] = st
        rep.add_check("tree_sandwich_stability", st <= 2.0, st, 2.0)
    S, Y = np.meshgrid(np.geomspace(1e-3, 10, 40), np.linspace(-np.pi, np.pi, 65))
    tb = torus_heat_bounds_check(S, Y, "2pi")
    rep.add_check("torus_bounds", tb.passed, tb.n_checked, tb.n_checked)
    ts = (0.05, 0.1, 0.2, 0.4)
    gr = [gradient_ratio(None, t, 2 * np.pi) * t for t in ts]
    rep.constants["gradient_ratio_times_t"] = gr
    sp = max(gr) / min(gr)
    rep.add_check("gradient_ratio", sp <= 1.25, sp, 1.25)
    return rep, plot


def _experiment(m: RunManifest):
    ec = m.experiment_config()
    if ec.noise:
        prefetch(ec, ec.seeds, m.threads)
    sub = m.subcommand
    if sub == "lower-bound":
        rep = ex.run_lower_bound(ec)
        if not ec.noise:
            oracle = ex.lower_bound_oracle_check(ec)
            rep.checks.update({f"oracle_{k}": v for k, v in oracle.checks.items()})
        plot = [{"seed": r["seed"], "ic": r["ic"], "t": r["t"], "h_min": r["h_min"],
                 "bound": float(np.log(ec.pin_width)
                                - rep.constants[str(r["seed"])]["c_star"] * (1 + 1 / r["t"]))}
                for r in rep.rows]
    elif sub == "oscillation":
        rep = ex.run_oscillation(ec)
        if not ec.noise:
            shape = ex.oscillation_shape_check(ec)
            rep.checks.update({f"shape_{k}": v for k, v in shape.checks.items()})
        plot = [{"seed": r["seed"], "ic": r["ic"], "t": r["t"], "constant": r["constant"]}
                for r in rep.rows]
    elif sub == "harnack":
        rep = ex.run_harnack(ec)
        if not ec.noise:
            orc = ex.harnack_oracle_check(ec)
            rep.checks.update({f"oracle_{k}": v for k, v in orc.checks.items()})
        plot = [{"seed": r["seed"], "ic": r["ic"], "log_ratio": r["log_ratio"]} for r in rep.rows]
    else:
        rep = ex.run_hopf_lax_suite(ec)
        plot = [{"ic": r["ic"], "t": r["t"], "max_second_difference": r["max_second_difference"],
                 "bound": r["bound"]} for r in rep.rows]
    rep.config_hash = m.config_hash
    return rep, plot


def prefetch(ec: ex.ExperimentConfig, seeds, threads: int):
    """Solve the seeds in parallel; results land in the solver cache."""
    if threads <= 1:
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda s: ex.solve_family(ec, s), seeds))


RUNNERS = {"noise": _noise, "trees": _trees, "kpz": _kpz, "control": _control,
           "zvonkin": _zvonkin, "density": _density}


def write_csv(path: Path, rows: list[dict]) -> None:
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in keys})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def run(m: RunManifest) -> int:
    out = Path(m.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(m.to_dict(), indent=2, sort_keys=True))
    runner = RUNNERS.get(m.subcommand, _experiment)
    try:
        rep, plot = runner(m)
    except (InstabilityError, ZvonkinError) as e:
        failure = {"failures": [type(e).__name__], "message": str(e),
                   "config_hash": m.config_hash, "schema_version": ex.SCHEMA_VERSION}
        (out / "report.json").write_text(json.dumps(failure, indent=2, sort_keys=True))
        print(json.dumps(failure), file=sys.stderr)
        return 1
    report = rep.to_dict()
    report["subcommand"] = m.subcommand
    report["failures"] = rep.failures()
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    write_csv(out / "rows.csv", rep.rows)
    write_csv(out / "plot.csv", plot)
    if not rep.passed:
        print(json.dumps({"failures": rep.failures()}), file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    try:
        m = parse_and_validate(sys.argv[1:] if argv is None else argv)
    except ConfigError as e:
        print(f"kpzlab: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"kpzlab: error: {e}", file=sys.stderr)
        return 2
    return run(m)


if __name__ == "__main__":
    sys.exit(main())
