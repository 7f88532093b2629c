"""Command-line entry point.

Subcommands: ``citest``, ``discover``, ``forecast``, ``evaluate``,
``augment``.  Settings come from built-in defaults, then an optional JSON
``--config`` file (top-level keys plus a section named after the
subcommand), then explicit flags.  Every output embeds the hash of the
resolved settings; re-running with the same settings, data and seed writes
identical bytes.

Exit codes: 0 success, 2 usage or data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__, augment, chronoslite, citest, discovery, evalstats
from .errors import AlignmentError, CausalcastError, ConfigurationError, NumericalError
from .panel import load_csv, longest_observed_span, standard_scale

DEFAULTS = {
    "common": {"data": None, "date_column": None, "frequency": "quarterly", "seed": 0,
               "out": "out"},
    "citest": {"test": "parcorr", "n_perm": citest.DEFAULT_N_PERM, "x": None, "y": None,
               "z": [], "standardize": True},
    "discover": {"vars": None, "tau_max": 4, "alpha_pc": 0.2, "alpha_mci": 0.05,
                 "test": "parcorr", "mode": "pcmci", "max_cond_dim": None,
                 "n_perm": citest.DEFAULT_N_PERM},
    "forecast": {"var": None, "context_len": 40, "horizon": 4, "step": 4, "bins": 64,
                 "lo": -15.0, "hi": 15.0, "order": 3, "gamma": 0.5, "n_samples": 200,
                 "pretrain": "kernelsynth", "pretrain_series": 100, "pretrain_mixup": 100,
                 "pretrain_length": 256, "include_samples": True},
    "evaluate": {"bundles": None, "var": None, "level": 0.90, "alpha": 0.05, "p": 0.10,
                 "counts": None, "trials": None},
    "augment": {"mode": "kernelsynth", "n": 10, "length": 256, "max_terms": 5,
                "K": 3, "dirichlet_alpha": 1.5, "min_length": 64, "max_length": 512},
}

# settings that never affect output bytes; input files are identified by
# their content digests in the manifest instead of their paths
_UNHASHED = {"threads", "out", "config", "data", "bundles"}


# --------------------------------------------------------------------------
# helpers


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(settings: dict) -> str:
    payload = {k: v for k, v in settings.items() if k not in _UNHASHED}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _with_hash_comment(text: str, chash: str, prefix: str = "#") -> str:
    return f"{prefix} config_hash={chash}\n{text}"


class _Run:
    """Collects outputs for one command and writes them plus a manifest."""

    def __init__(self, command: str, settings: dict):
        self.command = command
        self.settings = settings
        self.hash = config_hash(settings)
        self.out = Path(settings["out"])
        self.files = {}
        self.inputs = {}

    def add_input(self, path):
        if path:
            self.inputs[str(path)] = _sha256_file(path)

    def add(self, name: str, text: str):
        self.files[name] = text

    def write(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.out / name).write_text(text, encoding="utf-8")
        manifest = {
            "tool": "causalcast",
            "version": __version__,
            "command": self.command,
            "config_hash": self.hash,
            "config": {k: v for k, v in self.settings.items() if k not in _UNHASHED},
            "inputs": self.inputs,
            "outputs": sorted(self.files),
            "versions": {"python": ".".join(map(str, sys.version_info[:3])),
                         "numpy": np.__version__, "scipy": scipy.__version__},
        }
        (self.out / "manifest.json").write_text(_dump_json(manifest), encoding="utf-8")
        return self.out


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS["common"])
    settings.update(DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = json.loads(path.read_text(encoding="utf-8"))
        for key, val in cfg.items():
            if key in settings:
                settings[key] = val
        for key, val in cfg.get(command, {}).items():
            if key not in settings:
                raise ConfigurationError(f"unknown {command} setting {key!r} in {path}")
            settings[key] = val
    for key, val in vars(args).items():
        if key in ("command", "func", "config", "threads") or val is None:
            continue
        settings[key] = val
    settings["threads"] = args.threads or 1
    return settings


def _load_panel(settings: dict):
    if not settings.get("data"):
        raise ConfigurationError("--data is required")
    return load_csv(settings["data"], settings.get("date_column"), settings["frequency"])


def _parse_node(text: str):
    name, _, lag = text.partition(":")
    try:
        return name, int(lag) if lag else 0
    except ValueError:
        raise ConfigurationError(f"bad node spec {text!r}; expected NAME[:LAG]") from None


# --------------------------------------------------------------------------
# commands


def cmd_citest(settings: dict) -> _Run:
    run = _Run("citest", settings)
    panel = _load_panel(settings)
    run.add_input(settings["data"])
    if not settings["x"] or not settings["y"]:
        raise ConfigurationError("--x and --y are required")
    x = _parse_node(settings["x"])
    y = _parse_node(settings["y"])
    zs = [_parse_node(z) for item in settings["z"] for z in str(item).split(",") if z]
    start, stop = longest_observed_span(panel)
    panel = panel.slice(start, stop)
    if settings["standardize"]:
        panel, _ = standard_scale(panel)
    max_lag = max([x[1], y[1]] + [z[1] for z in zs])
    T = panel.T

    def col(node):
        name, lag = node
        return panel.column(name)[max_lag - lag:T - lag]

    Z = np.column_stack([col(z) for z in zs]) if zs else None
    res = citest.run_test(settings["test"], col(x), col(y), Z, n_perm=settings["n_perm"],
                          seed=settings["seed"])
    payload = {"config_hash": run.hash, "test": settings["test"], "x": settings["x"],
               "y": settings["y"], "z": [f"{n}:{lag}" for n, lag in zs], **res.to_dict()}
    run.add("citest.json", _dump_json(payload))
    return run


def cmd_discover(settings: dict) -> _Run:
    run = _Run("discover", settings)
    panel = _load_panel(settings)
    run.add_input(settings["data"])
    if settings["vars"]:
        names = settings["vars"]
        names = names.split(",") if isinstance(names, str) else list(names)
        panel = panel.select(names)
    start, stop = longest_observed_span(panel)
    panel = panel.slice(start, stop)
    scaled, _ = standard_scale(panel)
    cfg = discovery.DiscoveryConfig(
        tau_max=settings["tau_max"], alpha_pc=settings["alpha_pc"],
        alpha_mci=settings["alpha_mci"], ci_test=settings["test"],
        max_cond_dim=settings["max_cond_dim"], mode=settings["mode"], seed=settings["seed"],
        n_perm=settings["n_perm"])
    graph = discovery.discover(scaled, cfg, threads=settings["threads"])
    graph.metadata["config_hash"] = run.hash
    run.add("graph.json", graph.to_json())
    run.add("graph.dot", _with_hash_comment(graph.to_dot(), run.hash, "//"))
    return run


def _bands_csv(bundles, chash: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    levels = list(bundles[0].quantiles) if bundles else []
    w.writerow(["origin", "step", "horizon", *[f"q{lv}" for lv in levels]])
    for b in bundles:
        for h in range(b.horizon):
            w.writerow([b.origin, b.step_index[h], h + 1,
                        *[repr(float(b.quantiles[lv][h])) for lv in levels]])
    return _with_hash_comment(buf.getvalue(), chash)


def cmd_forecast(settings: dict) -> _Run:
    run = _Run("forecast", settings)
    panel = _load_panel(settings)
    run.add_input(settings["data"])
    var = settings["var"] or panel.names[0]
    start, stop = longest_observed_span(panel.select([var]))
    panel = panel.select([var]).slice(start, stop)
    q = chronoslite.build_quantizer(settings["bins"], settings["lo"], settings["hi"])
    C, H = settings["context_len"], settings["horizon"]
    pretrain = None
    if settings["pretrain"] == "kernelsynth":
        pretrain = augment.synthetic_corpus(
            q, C, H, n_series=settings["pretrain_series"], n_mixup=settings["pretrain_mixup"],
            length=settings["pretrain_length"], seed=settings["seed"])
    elif settings["pretrain"] != "none":
        raise ConfigurationError(f"unknown pretrain source {settings['pretrain']!r}")
    bundles = chronoslite.rolling_forecast(
        panel.values[:, 0], C, H, settings["step"], index=panel.index, quantizer=q,
        order=settings["order"], gamma=settings["gamma"], n_samples=settings["n_samples"],
        seed=settings["seed"], pretrain=pretrain)
    doc = {"config_hash": run.hash, "var": var, "quantizer": q.to_dict(),
           "context_len": C, "horizon": H,
           "bundles": [b.to_dict(settings["include_samples"]) for b in bundles]}
    run.add("bundles.json", _dump_json(doc))
    run.add("bands.csv", _bands_csv(bundles, run.hash))
    return run


def cmd_evaluate(settings: dict) -> _Run:
    run = _Run("evaluate", settings)
    level, p = settings["level"], settings["p"]
    report = {"config_hash": run.hash, "level": level}
    if settings["counts"] is not None:
        ks = settings["counts"]
        ks = [int(k) for k in ks.split(",")] if isinstance(ks, str) else [int(k) for k in ks]
        if settings["trials"] is None:
            raise ConfigurationError("--counts needs --trials")
        counts = evalstats.CoverageCounts([int(settings["trials"])] * len(ks), ks)
    else:
        if not settings["bundles"]:
            raise ConfigurationError("--bundles (or --counts/--trials) is required")
        bpath = Path(settings["bundles"])
        if not bpath.exists():
            raise FileNotFoundError(f"bundles file not found: {bpath}")
        run.add_input(bpath)
        doc = json.loads(bpath.read_text(encoding="utf-8"))
        bundles = [chronoslite.ForecastBundle.from_dict(b) for b in doc.get("bundles", [])]
        if not bundles:
            raise AlignmentError(f"{bpath}: no forecast bundles")
        panel = _load_panel(settings)
        run.add_input(settings["data"])
        var = settings["var"] or doc.get("var") or panel.names[0]
        actuals = evalstats.align_actuals(panel.index, panel.column(var), bundles)
        counts = evalstats.coverage_counts(actuals, bundles, level)
        errs = evalstats.error_distributions(actuals, bundles)
        widths = evalstats.interval_widths(bundles, level)
        origins = [b.origin for b in bundles]
        report["errors"] = errs["summary"]
        report["widths"] = widths["summary"]
        run.add("errors.csv", _with_hash_comment(
            evalstats.matrix_csv(errs["errors"], origins, "abs_error"), run.hash))
        run.add("widths.csv", _with_hash_comment(
            evalstats.matrix_csv(widths["widths"], origins, "width"), run.hash))
        if all(b.samples is not None for b in bundles):
            flags = evalstats.anomaly_flags(actuals, bundles, settings["alpha"])
            report["anomalies"] = [
                {"timestamp": f.timestamp, "horizon": f.horizon, "observed": f.observed,
                 "tail_probability": f.tail_probability}
                for f in flags if f.flagged]
            run.add("anomalies.csv", _with_hash_comment(evalstats.anomalies_csv(flags), run.hash))
        else:
            report["anomalies"] = None
    report["coverage"] = {"n": counts.n, "k": counts.k, "proportions": counts.proportions(),
                          "pooled": counts.pooled()}
    report["posteriors"] = [evalstats.beta_posterior(k, n, level).to_dict()
                            for k, n in zip(counts.k, counts.n)]
    violations = [n - k for k, n in zip(counts.k, counts.n)]
    report["binomial"] = {
        "per_horizon": [evalstats.binomial_calibration(v, n, p) for v, n in zip(violations, counts.n)],
        "mean_violations": float(np.mean(violations)),
        "at_mean": evalstats.binomial_calibration(int(round(np.mean(violations))), counts.n[0], p),
    }
    run.add("report.json", _dump_json(report))
    run.add("posteriors.csv", _with_hash_comment(evalstats.posteriors_csv(counts, level), run.hash))
    return run


def cmd_augment(settings: dict) -> _Run:
    run = _Run("augment", settings)
    n, seed = settings["n"], settings["seed"]
    series, meta = [], []
    if settings["mode"] == "kernelsynth":
        for k in range(n):
            expr = augment.sample_kernel(settings["max_terms"], seed * 1000003 + k)
            series.append(augment.kernelsynth(settings["length"], expr, seed * 1000003 + k))
            meta.append({"kernel": expr.describe()})
    elif settings["mode"] == "tsmixup":
        if settings.get("data"):
            panel = _load_panel(settings)
            run.add_input(settings["data"])
            pool = [panel.values[~panel.mask[:, j], j] for j in range(panel.N)]
        else:
            pool = augment.synthetic_pool(max(3, n), settings["length"], seed=seed)
        cfg = augment.TSMixupConfig(settings["K"], settings["dirichlet_alpha"],
                                    (settings["min_length"], settings["max_length"]))
        for k in range(n):
            mix = augment.tsmixup(pool, cfg, seed * 1000003 + k)
            series.append(mix.series)
            meta.append({"weights": [float(w) for w in mix.weights], "sources": mix.sources,
                         "offsets": mix.offsets})
    else:
        raise ConfigurationError(f"unknown augment mode {settings['mode']!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"series_{k}" for k in range(n)])
    for t in range(max((s.size for s in series), default=0)):
        w.writerow([repr(float(s[t])) if t < s.size else "" for s in series])
    run.add("series.csv", buf.getvalue())
    run.add("series.meta.json", _dump_json({"config_hash": run.hash, "mode": settings["mode"],
                                            "series": meta}))
    return run


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="JSON settings file (flags override it)")
    g.add_argument("--seed", type=int, help="global random seed (default 0)")
    g.add_argument("--out", help="output directory (default ./out)")
    g.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    g.add_argument("--data", help="input CSV with a header row")
    g.add_argument("--date-column", dest="date_column", help="date column (default: first)")
    g.add_argument("--frequency", choices=["quarterly", "monthly"])

    parser = argparse.ArgumentParser(
        prog="causalcast",
        description="Lagged causal discovery and token-based probabilistic forecasting.")
    parser.add_argument("--version", action="version", version=f"causalcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("citest", parents=[common], help="run one conditional independence test")
    p.add_argument("--test", choices=sorted(citest.TESTS))
    p.add_argument("--n-perm", dest="n_perm", type=int)
    p.add_argument("--x", help="NAME[:LAG]")
    p.add_argument("--y", help="NAME[:LAG]")
    p.add_argument("--z", action="append", help="NAME:LAG, repeatable or comma separated")
    p.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
    p.set_defaults(func=cmd_citest)

    p = sub.add_parser("discover", parents=[common], help="lagged causal graph discovery")
    p.add_argument("--vars", help="comma-separated subset of columns")
    p.add_argument("--tau-max", dest="tau_max", type=int)
    p.add_argument("--alpha-pc", dest="alpha_pc", type=float)
    p.add_argument("--alpha-mci", dest="alpha_mci", type=float)
    p.add_argument("--test", choices=sorted(citest.TESTS))
    p.add_argument("--mode", choices=["pcmci", "lpcmci"])
    p.add_argument("--max-cond-dim", dest="max_cond_dim", type=int)
    p.add_argument("--n-perm", dest="n_perm", type=int)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("forecast", parents=[common], help="rolling-origin token forecasts")
    p.add_argument("--var")
    p.add_argument("--context-len", dest="context_len", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--order", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--pretrain", choices=["kernelsynth", "none"])
    p.add_argument("--pretrain-series", dest="pretrain_series", type=int)
    p.add_argument("--pretrain-mixup", dest="pretrain_mixup", type=int)
    p.add_argument("--pretrain-length", dest="pretrain_length", type=int)
    p.add_argument("--no-samples", dest="include_samples", action="store_const", const=False)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", parents=[common], help="coverage, errors, widths, anomalies")
    p.add_argument("--bundles", help="bundles.json written by `forecast`")
    p.add_argument("--var")
    p.add_argument("--level", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--p", type=float, help="nominal violation probability (default 0.10)")
    p.add_argument("--counts", help="comma-separated per-horizon success counts")
    p.add_argument("--trials", type=int, help="trials per horizon for --counts")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("augment", parents=[common], help="synthetic series (KernelSynth / TSMixup)")
    p.add_argument("--mode", choices=["kernelsynth", "tsmixup"])
    p.add_argument("--n", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--max-terms", dest="max_terms", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--dirichlet-alpha", dest="dirichlet_alpha", type=float)
    p.add_argument("--min-length", dest="min_length", type=int)
    p.add_argument("--max-length", dest="max_length", type=int)
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args.command, args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", citest.HighDimensionalConditioningWarning)
            run = args.func(settings)
        out = run.write()
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"causalcast {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (CausalcastError, FileNotFoundError, KeyError, ValueError, json.JSONDecodeError) as exc:
        module = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"causalcast {args.command}: [{module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 2)
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
