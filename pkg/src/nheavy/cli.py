"""Command-line interface.

Subcommands: gen-network, simulate, estimate, forecast, backtest,
rmse-table.  Anything beyond a few options is read from a JSON config
(--config) validated against a strict schema (unknown keys rejected);
--seed/--out/--jobs flags override config values.  Every command writes a
sidecar manifest <out>.manifest.json recording the resolved config, its
sha256 hash, the seed, and the library version, and never embeds
timestamps, so identical inputs produce byte-identical outputs.

Exit codes: 0 success; 2 usage or invalid input; 3 data errors (unreadable
or malformed data files); 4 non-convergence under --strict; 1 internal
errors.  Floating-point values in output files are written with 17
significant digits.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from jsonschema import ValidationError
from jsonschema import validate as _schema_validate

from . import __version__
from .errors import ConvergenceError, DataError, InvalidInputError, NheavyError
from .estimation import FitResult, OptimizerConfig, fit_one_step, fit_two_step
from .evaluation import (
    ESTIMATOR_CHOICES,
    GENERATOR_CHOICES,
    MODEL_CHOICES,
    PROTOCOL_CHOICES,
    HarnessDesign,
    rmse_harness,
    rolling_backtest,
)
from .model import (
    InnovationSpec,
    NheavyParams,
    build_block_dynamics,
    check_stationarity,
    forecast_dyn,
    load_panel_csv,
    save_latents_csv,
    save_panel_csv,
    simulate_nheavy,
)
from .model import _block_dynamics_from_parts
from .network import (
    analytic_density,
    density,
    gen_dyad,
    gen_powerlaw,
    gen_sbm,
    load_edges_csv,
    normalize,
    save_edges_csv,
)
from .realized import (
    DiffusionSpec,
    add_noise,
    build_panel,
    save_intraday_csv,
    simulate_diffusion,
)

FMT = "%.17g"

_PHI_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {k: {"type": "number"} for k in ("omega", "alpha", "lambda", "beta")},
    "required": ["omega", "alpha", "lambda", "beta"],
}

_PARAMS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"phi": _PHI_SCHEMA, "phi_r": _PHI_SCHEMA},
    "required": ["phi", "phi_r"],
}

_NUM_ARRAY = {"type": "array", "items": {"type": "number"}}

SIMULATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["model", "diffusion"]},
        "out": {"type": "string"},
        "seed": {"type": "integer"},
        "network": {"type": "string"},
        "params": _PARAMS_SCHEMA,
        "t_len": {"type": "integer", "minimum": 1},
        "burn_in": {"type": "integer", "minimum": 0},
        "innovations": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["chisq-gamma", "degenerate"]},
                "gamma_shape": {"type": "number"},
                "cross_rho": {"type": "number"},
            },
        },
        "latents_out": {"type": "string"},
        "n": {"type": "integer", "minimum": 2},
        "l_days": {"type": "integer", "minimum": 1},
        "m_ticks": {"type": "integer", "minimum": 2},
        "tau_scale": {"type": "number"},
        "kappa": {"type": "number"},
        "noise_sd": {"type": "number"},
        "estimator": {"enum": ["multiscale", "naive"]},
        "k_scales": {"type": "integer", "minimum": 2},
        "intraday_out": {"type": "string"},
    },
    "required": ["mode", "out"],
}

ESTIMATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "panel": {"type": "string"},
        "network": {"type": "string"},
        "method": {"enum": ["one-step", "two-step"]},
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"phi": _NUM_ARRAY, "phi_r": _NUM_ARRAY},
            "required": ["phi", "phi_r"],
        },
        "gtol": {"type": "number"},
        "maxiter": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "seed": {"type": "integer"},
    },
    "required": ["panel", "network", "method", "out"],
}

FORECAST_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fit": {"type": "string"},
        "network": {"type": "string"},
        "state": {"type": "string"},
        "panel": {"type": "string"},
        "horizons": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "seed": {"type": "integer"},
    },
    "required": ["fit", "network", "horizons", "out"],
}

BACKTEST_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "panel": {"type": "string"},
        "network": {"type": "string"},
        "model": {"enum": list(MODEL_CHOICES)},
        "window_len": {"type": "integer", "minimum": 2},
        "horizon": {"type": "integer", "minimum": 1},
        "protocol": {"enum": list(PROTOCOL_CHOICES)},
        "floor": {"type": "number"},
        "out": {"type": "string"},
        "seed": {"type": "integer"},
    },
    "required": ["panel", "network", "model", "window_len", "out"],
}

RMSE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "generator": {"enum": list(GENERATOR_CHOICES)},
        "n": {"type": "integer", "minimum": 2},
        "t_len": {"type": "integer", "minimum": 2},
        "m_ticks": {"type": "integer", "minimum": 2},
        "theta0": _NUM_ARRAY,
        "q_reps": {"type": "integer", "minimum": 1},
        "estimator": {"enum": list(ESTIMATOR_CHOICES)},
        "gen_alpha": {"type": "number"},
        "gen_k": {"type": "integer", "minimum": 1},
        "kappa": {"type": "number"},
        "tau_scale": {"type": "number"},
        "noise_sd": {"type": "number"},
        "k_scales": {"type": "integer", "minimum": 2},
        "out": {"type": "string"},
        "json_out": {"type": "string"},
        "seed": {"type": "integer"},
    },
    "required": ["generator", "n", "t_len", "m_ticks", "theta0", "q_reps", "out"],
}


def _resolve_seed(cfg) -> int:
    if "seed" in cfg and cfg["seed"] is not None:
        return int(cfg["seed"])
    env = os.environ.get("NHEAVY_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InvalidInputError(f"NHEAVY_SEED must be an integer, got {env!r}") from exc
    return 0


def _load_config(args, schema) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise InvalidInputError(f"cannot read config file: {exc}") from exc
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise InvalidInputError("config must be a JSON object")
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    try:
        _schema_validate(cfg, schema)
    except ValidationError as exc:
        raise InvalidInputError(f"config rejected: {exc.message}") from exc
    return cfg


def _write_manifest(out_path, command, cfg, seed, extra=None):
    body = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "seed": seed,
        "version": __version__,
    }
    if extra:
        body.update(extra)
    Path(str(out_path) + ".manifest.json").write_text(
        json.dumps(body, indent=2, sort_keys=True) + "\n")


def _read_network(path):
    try:
        return load_edges_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read network file {path}: {exc}") from exc


def _read_panel(path):
    try:
        return load_panel_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read panel file {path}: {exc}") from exc


def cmd_gen_network(args) -> int:
    seed = _resolve_seed({"seed": args.seed})
    if args.kind == "dyad":
        adj = gen_dyad(args.n, seed)
    elif args.kind == "powerlaw":
        adj = gen_powerlaw(args.n, args.alpha, seed)
    else:
        adj = gen_sbm(args.n, args.k, seed)
    save_edges_csv(adj, args.out)
    emp = density(adj)
    kwargs = {}
    if args.kind == "powerlaw":
        kwargs["alpha"] = args.alpha
    if args.kind == "sbm":
        kwargs["k"] = args.k
    ana = analytic_density(args.kind, args.n, **kwargs)
    print(f"wrote {args.out}")
    print(("empirical density: " + FMT) % emp)
    print(("analytic density: " + FMT) % ana)
    cfg = {"kind": args.kind, "n": args.n}
    cfg.update({k: float(v) if isinstance(v, float) else v for k, v in kwargs.items()})
    _write_manifest(args.out, "gen-network", cfg, seed,
                    {"empirical_density": emp, "analytic_density": ana})
    return 0


def _simulate_model(cfg, seed):
    for key in ("network", "params", "t_len"):
        if key not in cfg:
            raise InvalidInputError(f"mode 'model' requires config key {key!r}")
    adj = _read_network(cfg["network"])
    net = normalize(adj)
    params = NheavyParams.from_dict(cfg["params"])
    innov_cfg = cfg.get("innovations", {})
    innov = InnovationSpec(
        family=innov_cfg.get("family", "chisq-gamma"),
        gamma_shape=innov_cfg.get("gamma_shape", 5.0),
        cross_rho=innov_cfg.get("cross_rho", 0.5),
    )
    panel, latents = simulate_nheavy(params, net, cfg["t_len"], innov=innov,
                                     burn_in=cfg.get("burn_in", 500), seed=seed)
    save_panel_csv(panel, cfg["out"])
    outputs = [cfg["out"]]
    if "latents_out" in cfg:
        save_latents_csv(latents, cfg["latents_out"])
        outputs.append(cfg["latents_out"])
    extra = {"theta0": params.to_dict(), "outputs": outputs}
    return extra


def _simulate_diffusion(cfg, seed):
    for key in ("n", "l_days", "m_ticks"):
        if key not in cfg:
            raise InvalidInputError(f"mode 'diffusion' requires config key {key!r}")
    from .rng import spawn_seeds

    s_tau, s_path, s_noise = spawn_seeds(seed, 3)
    noise_sd = cfg.get("noise_sd", 0.001)
    spec = DiffusionSpec.draw(cfg["n"], s_tau, tau_scale=cfg.get("tau_scale", 1.0),
                              kappa=cfg.get("kappa", 0.5), noise_sd=noise_sd)
    clean = simulate_diffusion(spec, cfg["l_days"], cfg["m_ticks"], cfg["n"], s_path)
    noisy = add_noise(clean, noise_sd, s_noise)
    panel = build_panel(noisy, cfg.get("estimator", "multiscale"),
                        k_scales=cfg.get("k_scales"), clean=clean)
    save_panel_csv(panel, cfg["out"])
    outputs = [cfg["out"]]
    if "intraday_out" in cfg:
        save_intraday_csv(noisy, cfg["intraday_out"])
        outputs.append(cfg["intraday_out"])
    extra = {"drawn_tau": list(spec.tau), "outputs": outputs}
    return extra


def cmd_simulate(args) -> int:
    cfg = _load_config(args, SIMULATE_SCHEMA)
    seed = _resolve_seed(cfg)
    if cfg["mode"] == "model":
        extra = _simulate_model(cfg, seed)
    else:
        extra = _simulate_diffusion(cfg, seed)
    _write_manifest(cfg["out"], "simulate", cfg, seed, extra)
    print(f"wrote {cfg['out']}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_config(args, ESTIMATE_SCHEMA)
    seed = _resolve_seed(cfg)
    panel = _read_panel(cfg["panel"])
    net = normalize(_read_network(cfg["network"]))
    config = OptimizerConfig(gtol=cfg.get("gtol", 1e-6),
                             maxiter=cfg.get("maxiter", 500))
    init = None
    if "init" in cfg:
        init = (np.array(cfg["init"]["phi"]), np.array(cfg["init"]["phi_r"]))
    if cfg["method"] == "one-step":
        fit = fit_one_step(panel, net, init_guess=init, config=config)
    else:
        fit = fit_two_step(panel, net, init_guess=init, config=config)
    Path(cfg["out"]).write_text(fit.to_json() + "\n")
    _write_manifest(cfg["out"], "estimate", cfg, seed,
                    {"converged": bool(fit.converged)})
    header = f"{'parameter':<12}{'estimate':>26}{'std_error':>26}"
    print(header)
    for name, est, se in zip(fit.param_names, fit.theta, fit.se):
        print(f"{name:<12}{FMT % est:>26}{FMT % se:>26}")
    print(f"converged: {fit.converged}")
    if args.strict and not fit.converged:
        raise ConvergenceError(
            f"fit did not converge (max gradient {fit.iterations['grad_max']:.2e})")
    return 0


def _dynamics_from_fit(fit: FitResult, net):
    if fit.method == "one-step":
        return build_block_dynamics(fit.params(), net)
    if fit.intercepts is None:
        raise InvalidInputError("two-step fit JSON lacks intercepts; cannot forecast")
    c_r = np.asarray(fit.intercepts["r"], dtype=float)
    c_m = np.asarray(fit.intercepts["rm"], dtype=float)
    a, l, b = fit.phi
    a_r, l_r, b_r = fit.phi_r
    return _block_dynamics_from_parts(c_r, a, l, b, c_m, a_r, l_r, b_r, net)


def _load_state(cfg, fit, net):
    if "state" in cfg:
        h, mu = _read_state_csv(cfg["state"], net.n)
        return h, mu
    if "panel" in cfg:
        from .estimation import filtered_at_fit

        panel = _read_panel(cfg["panel"])
        latents = filtered_at_fit(fit, panel, net)
        return latents.h[-1], latents.mu[-1]
    raise InvalidInputError("forecast needs a 'state' or 'panel' config key")


def _read_state_csv(path, n):
    """Last day of a day,asset,h,mu file becomes the forecast state."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read state file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["day", "asset", "h", "mu"]:
            raise DataError("expected header day,asset,h,mu")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields")
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), float(row[3])))
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise DataError("state file has no data rows")
    last = max(r[0] for r in rows)
    h = np.full(n, np.nan)
    mu = np.full(n, np.nan)
    for day, asset, hv, mv in rows:
        if day == last:
            if not 0 <= asset < n:
                raise DataError(f"asset {asset} out of range for n={n}")
            h[asset] = hv
            mu[asset] = mv
    if np.isnan(h).any() or np.isnan(mu).any():
        raise DataError("state file is missing assets on its last day")
    return h, mu


def cmd_forecast(args) -> int:
    cfg = _load_config(args, FORECAST_SCHEMA)
    seed = _resolve_seed(cfg)
    try:
        fit_text = Path(cfg["fit"]).read_text()
    except OSError as exc:
        raise DataError(f"cannot read fit file: {exc}") from exc
    fit = FitResult.from_json(fit_text)
    net = normalize(_read_network(cfg["network"]))
    dyn = _dynamics_from_fit(fit, net)
    h, mu = _load_state(cfg, fit, net)
    horizons = cfg["horizons"]
    with open(cfg["out"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "asset", "h_forecast", "mu_forecast"])
        for s in range(1, horizons + 1):
            fh_s, fmu_s = forecast_dyn(dyn, h, mu, s - 1)
            for asset in range(net.n):
                writer.writerow([s, asset, FMT % fh_s[asset], FMT % fmu_s[asset]])
    _write_manifest(cfg["out"], "forecast", cfg, seed)
    print(f"wrote {cfg['out']}")
    return 0


def cmd_backtest(args) -> int:
    cfg = _load_config(args, BACKTEST_SCHEMA)
    seed = _resolve_seed(cfg)
    panel = _read_panel(cfg["panel"])
    net = normalize(_read_network(cfg["network"]))
    report = rolling_backtest(
        panel, net, cfg["model"], cfg["window_len"],
        horizon=cfg.get("horizon", 1), protocol=cfg.get("protocol", "rolling"),
        floor=cfg.get("floor", 1e-12),
    )
    report.to_csv(cfg["out"])
    _write_manifest(cfg["out"], "backtest", cfg, seed,
                    {"qlike_overall": report.overall,
                     "n_origins": report.n_origins,
                     "floor_hits": report.floor_hits})
    print((f"model {report.model} protocol {report.protocol} horizon "
           f"{report.horizon}: mean QLIKE " + FMT) % report.overall)
    print(f"wrote {cfg['out']}")
    return 0


def cmd_rmse_table(args) -> int:
    cfg = _load_config(args, RMSE_SCHEMA)
    seed = _resolve_seed(cfg)
    design = HarnessDesign(
        generator=cfg["generator"], n=cfg["n"], t_len=cfg["t_len"],
        m_ticks=cfg["m_ticks"], theta0=tuple(cfg["theta0"]),
        q_reps=cfg["q_reps"], estimator=cfg.get("estimator", "one-step"),
        gen_alpha=cfg.get("gen_alpha", 2.5), gen_k=cfg.get("gen_k", 3),
        kappa=cfg.get("kappa", 0.5), tau_scale=cfg.get("tau_scale", 1.0),
        noise_sd=cfg.get("noise_sd", 0.001), k_scales=cfg.get("k_scales"),
    )
    table = rmse_harness(design, seed=seed, jobs=args.jobs)
    table.to_csv(cfg["out"])
    if "json_out" in cfg:
        Path(cfg["json_out"]).write_text(table.to_json() + "\n")
    _write_manifest(cfg["out"], "rmse-table", cfg, seed,
                    {"completed": table.n_completed, "failed": table.n_failed})
    for name, val in zip(table.param_names, table.rmse):
        print((f"rmse {name}: " + FMT) % val)
    print(("mean density pct: " + FMT) % (table.mean_density * 100.0))
    print(f"wrote {cfg['out']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nheavy",
        description="Network-driven volatility modeling: simulation, "
                    "estimation, forecasting and evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-network", help="draw a random directed network")
    p.add_argument("--kind", required=True, choices=list(GENERATOR_CHOICES))
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--alpha", type=float, default=2.5,
                   help="power-law exponent (kind=powerlaw)")
    p.add_argument("--k", type=int, default=3, help="communities (kind=sbm)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_network)

    for name, func, needs_jobs in (
        ("simulate", cmd_simulate, False),
        ("estimate", cmd_estimate, False),
        ("forecast", cmd_forecast, False),
        ("backtest", cmd_backtest, False),
        ("rmse-table", cmd_rmse_table, True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        p.add_argument("--out", default=None, help="overrides config out path")
        if needs_jobs:
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel workers (replication level)")
        if name == "estimate":
            p.add_argument("--strict", action="store_true",
                           help="exit nonzero when the fit does not converge")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return 4
    except NheavyError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - safety net
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
