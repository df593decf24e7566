"""Command-line experiment runner: ``isospec run <config>`` and ``isospec list``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, ModelConfig, load_config, parse_config
from .errors import (ConfigError, ConvergenceError, DomainError, EvaluationError,
                     PreconditionError, TrustRegionError)
from .geometry import classify_morse_bott, hopf_pullback
from .quantize import (SpectrumTable, diagonal_model_spectrum, oscillator_spectrum,
                       sqrt_oscillator_spectrum, table_from_values, weyl_matrix)
from .spectra import (TAIL_TOL, TWO_PI, WEYL_HEADER, WindowSpec, counting, gap_is_bounded,
                      gap_is_decaying, tauberian_gap, weyl_rows, weyl_two_term_check, write_csv)
from .symbols import Symbol, radial_power
from .trace import (TRACE_HEADER, ModelPhase, OracleAmplitude, mehler_abel_limit,
                    mehler_kernel, min_set_weight, singularity_exponent,
                    stationary_phase_oracle, trace_transform, wavepacket_shift)

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG, EXIT_TRUST = 0, 1, 2, 3


@dataclass
class RunResult:
    outputs: list = field(default_factory=list)
    criteria: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def criterion(self, name, value, expected, passed):
        self.criteria[name] = {"value": value, "expected": expected,
                               "status": "PASS" if passed else "FAIL"}


# ---------------------------------------------------------------------------
# models


def model_symbol(model: ModelConfig) -> Symbol:
    if model.kind == "oscillator":
        return Symbol.oscillator(model.d)
    if model.kind == "sqrt":
        return Symbol.oscillator(model.d, [radial_power(model.a, 1)])
    if model.kind == "hopf":
        return Symbol.oscillator(model.d, [hopf_pullback(model.c)])
    return model.parsed_symbol()


def degree_one_term(model: ModelConfig):
    terms = model_symbol(model).part(1)
    if len(terms) != 1:
        raise PreconditionError("the model needs exactly one degree-1 term")
    return terms[0]


def model_table(model: ModelConfig, lambda_max) -> SpectrumTable:
    """Spectrum trusted up to at least ``lambda_max``."""
    if model.kind == "oscillator":
        return oscillator_spectrum(model.d, lambda_max)
    if model.kind == "sqrt":
        return sqrt_oscillator_spectrum(model.d, lambda_max, model.a)
    if model.kind == "hopf":
        return diagonal_model_spectrum(model.c, lambda_max)
    s = model.parsed_symbol()
    wm = weyl_matrix(s, model.N_max)
    vals = np.linalg.eigvalsh(wm.matrix)
    # levels above N_max/2 feel the truncation; trust stops one unit below them
    trust = model.N_max // 2 + s.d / 2 - 1.0
    if trust < lambda_max:
        raise TrustRegionError(
            f"general model with N_max={model.N_max} is trusted only up to {trust:.6g}, "
            f"requested {lambda_max:.6g}"
        )
    return table_from_values(vals, trust, "general", {"N_max": model.N_max, "d": s.d})


def make_window(cfg: ExperimentConfig, center=None) -> WindowSpec:
    w = cfg.window
    c = w.center_t if center is None else center
    c = 0.0 if c is None else c
    if w.shape == "gaussian":
        return WindowSpec.gaussian(w.width, c)
    return WindowSpec.hann_bump(w.width, c)


# ---------------------------------------------------------------------------
# experiments


def run_spectrum(cfg, out: Path, workers, res: RunResult):
    lams = cfg.lambda_.grid()
    table = model_table(cfg.model, float(lams.max()))
    table.to_csv(out / "spectrum.csv")
    res.outputs += ["spectrum.csv", "spectrum.csv.meta.json"]
    N = counting(table, lams)
    write_csv(out / "counting.csv", ["lambda", "N"], np.column_stack([lams, N]))
    res.outputs.append("counting.csv")
    top = int(counting(table, cfg.lambda_.max))
    res.summary.update(counting_at_max=top, n_distinct=int(table.eigenvalues.size))
    if "counting_at_max" in cfg.expect:
        want = cfg.expect["counting_at_max"]
        res.criterion("counting_at_max", top, want, top == want)


def _mollifier_margin(rho: WindowSpec):
    return 10.0 * rho.lambda_width


def run_weyl(cfg, out: Path, workers, res: RunResult):
    s = model_symbol(cfg.model)
    rho = make_window(cfg)
    lo, hi = cfg.lambda_.min, cfg.lambda_.max
    table = model_table(cfg.model, hi + _mollifier_margin(rho))
    lams = cfg.lambda_.grid()
    write_csv(out / "weyl.csv", WEYL_HEADER, weyl_rows(table, s, rho, lams, workers=workers))
    report = weyl_two_term_check(table, s, lo, hi, rho=rho, workers=workers)
    gap = tauberian_gap(table, rho, lams, s.d, workers=workers)
    write_csv(out / "tauberian.csv", ["lambda", "gap"], np.column_stack([lams, gap]))
    bounded, decaying = gap_is_bounded(gap), gap_is_decaying(gap)
    doc = report.to_dict()
    doc["tauberian"] = {"bounded": bool(bounded), "decaying": bool(decaying)}
    _write_json(out / "fit.json", doc)
    res.outputs += ["weyl.csv", "tauberian.csv", "fit.json"]
    e = report.remainder_fit.exponent
    res.summary.update(remainder_exponent=e,
                       confidence_halfwidth=report.remainder_fit.confidence_halfwidth,
                       coefficient_fitted=report.coefficient_fitted,
                       coefficient_predicted=report.coefficient_predicted,
                       gap_bounded=bool(bounded), gap_decaying=bool(decaying))
    ex = cfg.expect
    if "exponent_max" in ex:
        res.criterion("remainder_exponent_max", e, ex["exponent_max"], e < ex["exponent_max"])
    if "exponent_band" in ex:
        a, b = ex["exponent_band"]
        res.criterion("remainder_exponent_band", e, [a, b], a <= e <= b)
    if "coefficient_rtol" in ex:
        r = report.coefficient_rel_error
        res.criterion("coefficient_rtol", r, ex["coefficient_rtol"], r <= ex["coefficient_rtol"])
    if "gap_bounded" in ex:
        res.criterion("gap_bounded", bool(bounded), ex["gap_bounded"],
                      bool(bounded) == ex["gap_bounded"])
    if "gap_decaying" in ex:
        res.criterion("gap_decaying", bool(decaying), ex["gap_decaying"],
                      bool(decaying) == ex["gap_decaying"])


MAX_TABLE_MARGIN = 1e5


def _trace_table(model, window: WindowSpec, lam_max):
    """Table wide enough for the truncation rule of ``trace_transform``."""
    margin = 10.0 * window.lambda_width
    for _ in range(8):
        table = model_table(model, lam_max + margin)
        need = max(window.tail_radius(TAIL_TOL / max(table.total, 1)),
                   10.0 * window.lambda_width)
        if need <= margin:
            return table
        if need > MAX_TABLE_MARGIN:
            raise PreconditionError(
                f"the {window.shape} window needs eigenvalues {need:.3g} beyond lambda_max; "
                "use a gaussian window"
            )
        margin = 1.1 * need
    raise PreconditionError("could not size the spectrum table for this window")


def run_trace(cfg, out: Path, workers, res: RunResult):
    lams = cfg.lambda_.grid()
    explicit = cfg.window.center_t is not None
    window = make_window(cfg, None if explicit else TWO_PI * cfg.n)
    t0 = window.check_isolating()
    table = _trace_table(cfg.model, window, float(lams.max()))
    tt = trace_transform(table, window, lams, workers=workers)
    write_csv(out / "trace.csv", TRACE_HEADER, tt.rows())
    res.outputs.append("trace.csv")
    doc = {"window": window.to_dict(), "singular_time": t0}
    if t0 is not None and t0 != 0.0:
        fit = singularity_exponent(tt)
        doc["fit"] = fit.to_dict()
        res.summary.update(exponent=fit.exponent, confidence_halfwidth=fit.confidence_halfwidth)
        if "exponent_band" in cfg.expect:
            a, b = cfg.expect["exponent_band"]
            res.criterion("exponent_band", fit.exponent, [a, b], a <= fit.exponent <= b)
    if t0 is None:
        ref = trace_transform(table, window.recentered(0.0), lams, workers=workers)
        write_csv(out / "reference_trace.csv", TRACE_HEADER, ref.rows())
        res.outputs.append("reference_trace.csv")
        ratio = float(np.max(tt.modulus / np.maximum(ref.modulus, 1e-300)))
        doc["poisson_ratio"] = ratio
        res.summary["poisson_ratio"] = ratio
        if "poisson_ratio_max" in cfg.expect:
            lim = cfg.expect["poisson_ratio_max"]
            res.criterion("poisson_ratio_max", ratio, lim, ratio <= lim)
    _write_json(out / "fit.json", doc)
    res.outputs.append("fit.json")


def run_morsebott(cfg, out: Path, workers, res: RunResult):
    term = degree_one_term(cfg.model)
    rep = classify_morse_bott(term, cfg.model.d, samples=cfg.samples or 64, seed=cfg.seed,
                              workers=workers)
    doc = {
        "k_min": rep.k_min,
        "is_morse_bott": rep.is_morse_bott,
        "flat_set_detected": rep.flat_set_detected,
        "flat_fraction": rep.flat_fraction,
        "n_starts": rep.n_starts,
        "n_converged": rep.n_converged,
        "diagnostic": rep.diagnostic,
        "manifolds": [{"value": m.value, "dimension": m.dimension,
                       "hessian_rank": m.hessian_rank,
                       "representative_points": np.asarray(m.representative_points).tolist()}
                      for m in rep.manifolds],
    }
    _write_json(out / "morsebott.json", doc)
    res.outputs.append("morsebott.json")
    res.summary.update(k_min=rep.k_min, is_morse_bott=rep.is_morse_bott,
                       flat_set_detected=rep.flat_set_detected)
    if "k" in cfg.expect:
        ok = rep.is_morse_bott and rep.k_min == cfg.expect["k"]
        res.criterion("k", rep.k_min, cfg.expect["k"], ok)
    if "flat" in cfg.expect:
        res.criterion("flat", rep.flat_set_detected, cfg.expect["flat"],
                      rep.flat_set_detected == cfg.expect["flat"])


def _mehler_samples(count, seed):
    """Random (t, x, y) with t kept 0.3 away from the caustic times pi Z."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        t = rng.uniform(-2 * math.pi, 2 * math.pi)
        if abs(t - math.pi * round(t / math.pi)) < 0.3:
            continue
        x, y = rng.uniform(-3.0, 3.0, size=2)
        out.append((t, float(x), float(y)))
    return out


def run_mehler(cfg, out: Path, workers, res: RunResult):
    rows, worst = [], 0.0
    for t, x, y in _mehler_samples(cfg.samples or 20, cfg.seed):
        k = complex(mehler_kernel(t, x, y))
        o = complex(mehler_abel_limit(t, x, y))
        err = abs(k - o)
        worst = max(worst, err)
        rows.append([t, x, y, k.real, k.imag, o.real, o.imag, err])
    write_csv(out / "mehler.csv",
              ["t", "x", "y", "re_kernel", "im_kernel", "re_oracle", "im_oracle", "abs_error"],
              rows)
    res.outputs.append("mehler.csv")
    res.summary["max_error"] = worst
    if "max_error" in cfg.expect:
        res.criterion("max_error", worst, cfg.expect["max_error"], worst <= cfg.expect["max_error"])


def run_statphase(cfg, out: Path, workers, res: RunResult):
    model = cfg.model
    if model.kind not in ("oscillator", "hopf"):
        raise PreconditionError("statphase needs the oscillator or hopf model")
    p1 = hopf_pullback(model.c) if model.kind == "hopf" else None
    angular = min_set_weight(p1, model.d) if p1 is not None else None
    mp = ModelPhase(model.d, n=cfg.n, p1=p1)
    result = stationary_phase_oracle(mp, cfg.lambda_.grid(), OracleAmplitude(angular=angular))
    v = result.values
    write_csv(out / "statphase.csv", TRACE_HEADER,
              np.column_stack([result.lambdas, v.real, v.imag, np.abs(v)]))
    expected = cfg.expect.get("exponent", result.expected_exponent)
    doc = {"fit": result.fit.to_dict(), "expected_exponent": expected,
           "refinement_change": result.refinement_change}
    _write_json(out / "fit.json", doc)
    res.outputs += ["statphase.csv", "fit.json"]
    e = result.fit.exponent
    res.summary.update(exponent=e, expected_exponent=expected,
                       refinement_change=result.refinement_change)
    if "exponent_tolerance" in cfg.expect:
        tol = cfg.expect["exponent_tolerance"]
        res.criterion("exponent", e, [expected - tol, expected + tol], abs(e - expected) <= tol)


def run_shift(cfg, out: Path, workers, res: RunResult):
    if cfg.n < 1:
        raise PreconditionError("shift needs n >= 1 (periods 1..n are evaluated)")
    d = cfg.model.d
    reports = [wavepacket_shift(cfg.model.c, k, cfg.packet.xi0, cfg.packet.width)
               for k in range(1, cfg.n + 1)]
    header = (["n"] + [f"measured_{j}" for j in range(d)]
              + [f"predicted_{j}" for j in range(d)] + ["relative_deviation", "lost_mass"])
    rows = [[r.n, *r.measured, *r.predicted, r.relative_deviation, r.lost_mass]
            for r in reports]
    write_csv(out / "shift.csv", header, rows)
    res.outputs.append("shift.csv")
    worst = max(r.relative_deviation for r in reports)
    base = np.asarray(reports[0].measured)
    lin = 0.0
    for r in reports[1:]:
        lin = max(lin, float(np.linalg.norm(np.asarray(r.measured) - r.n * base)
                             / np.linalg.norm(r.n * base)))
    res.summary.update(max_relative_deviation=worst, linearity_deviation=lin)
    if "rel_tol" in cfg.expect:
        res.criterion("rel_tol", worst, cfg.expect["rel_tol"], worst <= cfg.expect["rel_tol"])
    if "linearity_tol" in cfg.expect and len(reports) > 1:
        lim = cfg.expect["linearity_tol"]
        res.criterion("linearity_tol", lin, lim, lin <= lim)


RUNNERS = {
    "spectrum": run_spectrum,
    "weyl": run_weyl,
    "trace": run_trace,
    "morsebott": run_morsebott,
    "mehler": run_mehler,
    "statphase": run_statphase,
    "shift": run_shift,
}


# ---------------------------------------------------------------------------
# manifest and driver


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_json(path: Path, doc):
    """Atomic JSON write: temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def run_experiment(cfg: ExperimentConfig, output_dir=None, threads=1):
    """Run a validated config; returns ``(RunResult, manifest dict)``."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = RunResult()
    start = time.perf_counter()
    RUNNERS[cfg.experiment](cfg, out, max(1, int(threads)), res)
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "wall_time_s": time.perf_counter() - start,
        "outputs": sorted(res.outputs),
        "summary": res.summary,
        "criteria": res.criteria,
        "status": "PASS" if all(c["status"] == "PASS" for c in res.criteria.values()) else "FAIL",
    }
    _write_json(out / "manifest.json", manifest)
    return res, manifest


# ---------------------------------------------------------------------------
# shipped recipes


def recipe_names():
    root = resources.files("isospec") / "recipes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_recipe(name):
    text = (resources.files("isospec") / "recipes" / f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def list_experiments():
    """Catalog of shipped recipes with their expected PASS bands."""
    lines = []
    for name in recipe_names():
        doc = load_recipe(name)
        bands = ", ".join(f"{k}={json.dumps(v)}" for k, v in sorted(doc.get("expect", {}).items()))
        lines.append(f"{name:32s} {doc['experiment']:10s} {bands}")
        if doc.get("description"):
            lines.append(f"    {doc['description']}")
    return "\n".join(lines)


def _resolve_config(arg):
    path = Path(arg)
    if path.exists():
        return load_config(path)
    if arg in recipe_names():
        return parse_config(load_recipe(arg))
    return load_config(path)


def _parser():
    p = argparse.ArgumentParser(prog="isospec", description="Spectral experiments for "
                                "perturbed harmonic oscillators.")
    p.add_argument("--version", action="version", version=f"isospec {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a JSON experiment config (or a shipped recipe name)")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None)
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--seed", type=int, default=None)
    sub.add_parser("list", help="list shipped recipes")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "list":
        print(list_experiments())
        return EXIT_OK
    try:
        cfg = _resolve_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative", "seed")
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be positive", "threads")
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res, manifest = run_experiment(cfg, args.output_dir, args.threads)
    except (TrustRegionError, PreconditionError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_TRUST
    except (ConvergenceError, EvaluationError, DomainError, FloatingPointError,
            np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for name, c in manifest["criteria"].items():
        print(f"{c['status']} {name}: value={json.dumps(_jsonable(c['value']))} "
              f"expected={json.dumps(_jsonable(c['expected']))}")
    print(f"wrote {len(manifest['outputs'])} files and manifest.json "
          f"({manifest['wall_time_s']:.2f} s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
