"""Command line front end: ``mimic {simulate,project,mimic,compare,concat-demo,discrete-demo}``.

Runs are described by an INI file (see ``docs/configs``).  Every output
directory gets a ``manifest.json`` holding the hash of the effective
configuration, the seed and the tool version.  Thread count is not part of the
hash because results do not depend on it.

Exit codes: 0 success, 2 invalid configuration, 3 data mismatch, 4 internal error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .ito_models import (ConstantCoeff, Ensemble, Heston, ModelError, NonUniqueness, TwoPointDrift,
                         TwoPointVol, nonuniqueness_mixture, simulate_ensemble)
from .mimic_sde import SCHEMES, EmpiricalInitial, MimicConfig, MimicError, mimic_pipeline, simulate_mimic
from .paths import TimeGrid
from .projection import (CoefficientSurface, EstimatorConfig, SurfaceError, estimate_surface, make_feature,
                         sqrt_surface)
from .updating import KINDS, make
from .verify import Payoff, compare

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH, EXIT_INTERNAL = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


MODEL_KEYS = {
    "constant": {"b": 0.0, "sigma": 0.0, "x0": 0.0},
    "two_point_drift": {"mu": 1.0, "x0": 0.0},
    "two_point_vol": {"sigma1": 0.1, "sigma2": 0.3, "x0": 0.0},
    "heston": {"s0": 100.0, "v0": 0.04, "kappa": 1.5, "theta": 0.04, "xi": 0.5, "rho": -0.7, "r": 0.0,
               "log_price": True},
    "nonuniqueness": {"switch_time": 1.0},
    "nonuniqueness_mixture": {"switch_time": 1.0},
}


@dataclass
class RunConfig:
    model: str
    params: dict
    phi: str = "identity"
    feature: str = "state"
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    scheme: str = "gaussian"
    horizon: float = 1.0
    steps: int = 100
    n_paths: int = 10_000
    seed: int = 0
    checkpoints: tuple = ()
    payoffs: tuple = ()
    rate: float = 0.0
    out: str = "out"
    write_csv: bool = True
    surface_path: str | None = None
    compare_original: str | None = None
    compare_mimic: str | None = None
    price_transform: str = "none"
    canonical: str = ""

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.horizon, self.steps)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()

    def build_model(self):
        p = dict(self.params)
        kind = self.model
        try:
            if kind == "constant":
                return ConstantCoeff(p["b"], p["sigma"], p["x0"])
            if kind == "two_point_drift":
                return TwoPointDrift(p["mu"], p["x0"])
            if kind == "two_point_vol":
                return TwoPointVol(p["sigma1"], p["sigma2"], p["x0"])
            if kind == "heston":
                return Heston(**p)
            if kind == "nonuniqueness":
                return NonUniqueness(p["switch_time"])
        except ModelError:
            raise
        except (TypeError, ValueError) as err:
            raise ConfigError(f"model: {err}") from None
        raise ConfigError(f"model.kind: no simulator for {kind!r}")

    def simulate(self, workers: int) -> Ensemble:
        if self.model == "nonuniqueness_mixture":
            return nonuniqueness_mixture(self.grid, self.n_paths, self.seed, self.params["switch_time"], workers)
        return simulate_ensemble(self.build_model(), self.grid, self.n_paths, self.seed, workers)


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if conv is bool:
            return cp.getboolean(section, key)
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from None
    if seed is not None:
        cp.setdefault("run", {})
        cp["run"]["seed"] = str(seed)
    if out is not None:
        cp.setdefault("output", {})
        cp["output"]["dir"] = out

    kind = _get(cp, "model", "kind", str, "constant").strip()
    if kind not in MODEL_KEYS:
        raise ConfigError(f"model.kind: unknown model {kind!r}")
    params = {}
    for key, default in MODEL_KEYS[kind].items():
        conv = bool if isinstance(default, bool) else float
        params[key] = _get(cp, "model", key, conv, default)
    extra = set(cp["model"].keys()) - set(MODEL_KEYS[kind]) - {"kind"} if cp.has_section("model") else set()
    if extra:
        raise ConfigError(f"model.{sorted(extra)[0]}: not a parameter of {kind!r}")

    phi = _get(cp, "updating", "kind", str, "identity").strip()
    if phi not in KINDS:
        raise ConfigError(f"updating.kind: unknown updating function {phi!r}")
    est_kind = _get(cp, "estimator", "kind", str, "histogram").strip()
    bins = _get(cp, "estimator", "bins", int, 64)
    bw_raw = _get(cp, "estimator", "bandwidth", str, "auto").strip()
    bandwidth = bw_raw if bw_raw == "auto" else _floats(bw_raw)
    if bandwidth != "auto" and len(bandwidth) == 1:
        bandwidth = bandwidth[0]
    try:
        est = EstimatorConfig(est_kind, bins, bandwidth, _get(cp, "estimator", "edges", str, "uniform").strip())
    except ValueError as err:
        raise ConfigError(f"estimator: {err}") from None
    scheme = _get(cp, "mimic", "scheme", str, "gaussian").strip()
    if scheme not in SCHEMES:
        raise ConfigError(f"mimic.scheme: unknown scheme {scheme!r}")

    cfg = RunConfig(
        model=kind, params=params, phi=phi,
        feature=_get(cp, "updating", "feature", str, "state").strip(),
        estimator=est, scheme=scheme,
        horizon=_get(cp, "run", "horizon", float, 1.0),
        steps=_get(cp, "run", "steps", int, 100),
        n_paths=_get(cp, "run", "paths", int, 10_000),
        seed=_get(cp, "run", "seed", int, 0),
        checkpoints=_get(cp, "run", "checkpoints", _floats, ()),
        payoffs=tuple(s.strip() for s in _get(cp, "payoffs", "list", str, "").split(",") if s.strip()),
        rate=_get(cp, "payoffs", "rate", float, 0.0),
        out=_get(cp, "output", "dir", str, "out"),
        write_csv=_get(cp, "output", "write_csv", bool, True),
        surface_path=_get(cp, "mimic", "surface", str, None),
        compare_original=_get(cp, "compare", "original", str, None),
        compare_mimic=_get(cp, "compare", "mimic", str, None),
        price_transform=_get(cp, "payoffs", "transform", str, "none").strip(),
    )
    _validate(cfg)
    canon = {s: dict(sorted(cp[s].items())) for s in sorted(cp.sections())}
    canon.get("output", {}).pop("dir", None)
    canon.get("run", {}).pop("threads", None)
    canon = {s: v for s, v in canon.items() if v}
    cfg.canonical = json.dumps(canon, sort_keys=True)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.horizon <= 0:
        raise ConfigError("run.horizon: must be positive")
    if cfg.steps < 1:
        raise ConfigError("run.steps: must be >= 1")
    if cfg.n_paths < 1:
        raise ConfigError("run.paths: must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("run.seed: must be nonnegative")
    for p in cfg.payoffs:
        try:
            Payoff.parse(p)
        except ValueError as err:
            raise ConfigError(f"payoffs.list: {err}") from None
    if cfg.price_transform not in ("none", "exp"):
        raise ConfigError("payoffs.transform: must be 'none' or 'exp'")
    grid = cfg.grid
    for t in cfg.checkpoints:
        try:
            grid.index(t)
        except ValueError:
            raise ConfigError(f"run.checkpoints: {t} is not a grid time") from None
    if cfg.model in ("heston", "constant", "two_point_drift", "two_point_vol", "nonuniqueness"):
        cfg.build_model()
    if cfg.model.startswith("nonuniqueness"):
        try:
            grid.index(cfg.params["switch_time"])
        except ValueError:
            raise ConfigError("model.switch_time: must be a grid time") from None
    try:
        make_feature(make(cfg.phi), cfg.feature)
    except ValueError as err:
        raise ConfigError(f"updating.feature: {err}") from None


# -- outputs ------------------------------------------------------------------

def _manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> dict:
    doc = {"tool": "mimicking", "version": __version__, "command": command,
           "config_hash": cfg.config_hash, "seed": cfg.seed}
    doc.update(extra or {})
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _price_meta(cfg: RunConfig, ens: Ensemble):
    if cfg.model == "heston":
        ens.meta["price_transform"] = "exp" if cfg.params["log_price"] else "none"
    else:
        ens.meta.setdefault("price_transform", cfg.price_transform)


def cmd_simulate(cfg: RunConfig, threads: int) -> int:
    out = _outdir(cfg)
    ens = cfg.simulate(threads)
    ens.to_csv(out / "ensemble.csv")
    _write_json(out / "manifest.json", _manifest(cfg, "simulate", {"n_paths": cfg.n_paths, "steps": cfg.steps}))
    print(f"wrote {out / 'ensemble.csv'} ({cfg.n_paths * (cfg.steps + 1)} rows)")
    return EXIT_OK


def _surface(cfg: RunConfig, ens: Ensemble):
    phi = make(cfg.phi)
    feat = make_feature(phi, cfg.feature)
    return phi, feat, sqrt_surface(estimate_surface(ens, phi, feat, cfg.estimator))


def cmd_project(cfg: RunConfig, threads: int) -> int:
    out = _outdir(cfg)
    ens = cfg.simulate(threads)
    _, _, surf = _surface(cfg, ens)
    surf.to_json(out / "surface.json")
    surf.to_csv(out / "surface.csv")
    _write_json(out / "manifest.json", _manifest(cfg, "project", {
        "fallback_cells": int(sum(surf.meta["fallback_cells"])), "atoms": int(sum(surf.meta["atoms"]))}))
    print(f"wrote {out / 'surface.json'}")
    return EXIT_OK


def _report(cfg, orig, mim, phi, feat, out: Path):
    checkpoints = cfg.checkpoints or (cfg.horizon,)
    use_phi = None if cfg.phi == "identity" and cfg.feature == "state" else phi
    if use_phi is not None and cfg.phi != "path":
        # compare on the state itself, whatever coordinates the estimator used
        feat = make_feature(phi, "state")
    rep = compare(orig, mim, checkpoints, cfg.payoffs, cfg.rate, phi=use_phi,
                  feature=feat if use_phi is not None else None, seed=cfg.seed)
    (out / "report.json").write_text(rep.to_json() + "\n")
    table = rep.to_table()
    (out / "report.txt").write_text(table + "\n")
    print(table)
    return rep


def cmd_mimic(cfg: RunConfig, threads: int) -> int:
    out = _outdir(cfg)
    phi = make(cfg.phi)
    feat = make_feature(phi, cfg.feature)
    orig = cfg.simulate(threads)
    _price_meta(cfg, orig)
    if cfg.surface_path:
        surf = CoefficientSurface.from_json(cfg.surface_path)
        if surf.slices[0].sigma is None:
            surf = sqrt_surface(surf)
        mcfg = MimicConfig(surf, phi, feat, cfg.grid, cfg.n_paths, cfg.seed, EmpiricalInitial(orig.y[:, 0]),
                           threads, False, cfg.scheme, orig if cfg.scheme == "mixture" else None)
        mim = simulate_mimic(mcfg)
        manifest = {"fallback_queries": mim.meta["fallback_queries"],
                    "out_of_support_queries": mim.meta["out_of_support_queries"]}
    else:
        res = mimic_pipeline(None, phi, feat, cfg.estimator, cfg.grid, cfg.n_paths, cfg.seed, threads,
                             original=orig, scheme=cfg.scheme)
        surf, mim, manifest = res.surface, res.mimic, dict(res.manifest)
        surf.to_json(out / "surface.json")
    mim.meta["price_transform"] = orig.meta.get("price_transform", "none")
    if cfg.write_csv:
        mim.to_csv(out / "mimic.csv")
    rep = _report(cfg, orig, mim, phi, feat, out)
    manifest.update(passed=rep.passed, scheme=cfg.scheme)
    _write_json(out / "manifest.json", _manifest(cfg, "mimic", manifest))
    return EXIT_OK


def cmd_compare(cfg: RunConfig, threads: int) -> int:
    if not (cfg.compare_original and cfg.compare_mimic):
        raise ConfigError("compare.original and compare.mimic: both ensemble CSV paths are required")
    out = _outdir(cfg)
    try:
        orig = Ensemble.from_csv(cfg.compare_original)
        mim = Ensemble.from_csv(cfg.compare_mimic)
    except (OSError, ValueError) as err:
        raise ConfigError(f"compare: cannot read ensemble: {err}") from None
    for e in (orig, mim):
        e.meta["price_transform"] = cfg.price_transform
    phi = make(cfg.phi)
    rep = _report(cfg, orig, mim, phi, make_feature(phi, cfg.feature), out)
    _write_json(out / "manifest.json", _manifest(cfg, "compare", {"passed": rep.passed}))
    return EXIT_OK


# -- demos --------------------------------------------------------------------

def concat_demo(out: Path | None = None) -> str:
    from .concat_measure import simple_example

    p, pi, c = simple_example()
    names = {(0, 0, 0): "w0", (0, 1, 2): "w1", (0, 1, 1): "w2", (0, 0, 1): "w3"}
    lines = ["concatenation of (d(w0) + d(w1))/2 at t=1 with nothing retained", "",
             f"{'path':<6} {'values':<10} weight"]
    for path in sorted(c.weights, key=lambda q: names[q]):
        lines.append(f"{names[path]:<6} {str(list(path)):<10} {c.weights[path]}")
    text = "\n".join(lines)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "concat_demo.json", {names[k]: {"path": list(k), "weight": str(v)}
                                                for k, v in c.weights.items()})
    return text


def discrete_demo(out: Path | None = None) -> str:
    from .discrete_mimic import copy_first_law, estimate_kernels, format_table, marginals, mimic

    law = copy_first_law()
    lines = ["copy-first-increment process: X0 = 0, e1 and e2 fair signs, e3 = e1", ""]
    for kind in ("level", "level_and_max"):
        ker = estimate_kernels(law, kind)[2]
        lines.append(f"step-2 kernel given {kind}:")
        for s, row in sorted(ker.rows.items()):
            lines.append(f"  {s}: " + ", ".join(f"{e:+d} w.p. {p}" for e, p in sorted(row.items())))
        lines.append("")
    y = mimic(law, "level")
    z = mimic(law, "level_and_max")
    lines += ["level marginal at n=3, original vs level mimic:",
              format_table(marginals(law, 3), ("X3", "P")), format_table(marginals(y, 3), ("Y3", "P")), "",
              "joint (level, max) at n=3:",
              format_table(marginals(law, 3, "level_and_max"), ("(X3, max)", "P")),
              format_table(marginals(y, 3, "level_and_max"), ("(Y3, max) level mimic", "P")),
              format_table(marginals(z, 3, "level_and_max"), ("(Z3, max) level+max mimic", "P"))]
    text = "\n".join(lines)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "discrete_law.json").write_text(law.to_json() + "\n")
        (out / "level_mimic.json").write_text(y.to_json() + "\n")
        _write_json(out / "kernels.json", [k.to_dict() for k in estimate_kernels(law, "level")])
    return text


# -- entry point --------------------------------------------------------------

COMMANDS = {"simulate": cmd_simulate, "project": cmd_project, "mimic": cmd_mimic, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mimic", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
        p.add_argument("--seed", type=int, help="override [run] seed")
    for name in ("concat-demo", "discrete-demo"):
        p = sub.add_parser(name)
        p.add_argument("--out", help="also write JSON tables here")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "concat-demo":
            print(concat_demo(Path(args.out) if args.out else None))
            return EXIT_OK
        if args.command == "discrete-demo":
            print(discrete_demo(Path(args.out) if args.out else None))
            return EXIT_OK
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        cfg = load_config(args.config, args.seed, args.out)
        return COMMANDS[args.command](cfg, args.threads)
    except (ConfigError, ModelError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except MimicError as err:
        print(f"data mismatch: {err}", file=sys.stderr)
        return EXIT_MISMATCH
    except (SurfaceError, AssertionError, FloatingPointError) as err:
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as err:
        if "mismatch" in str(err):
            print(f"data mismatch: {err}", file=sys.stderr)
            return EXIT_MISMATCH
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
