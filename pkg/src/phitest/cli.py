"""Command-line entry point: ``phitest {table,benchmark,calibrate,ablate}``.

Settings resolve as command-line flags, then ``--config`` file, then defaults.
The config file is flat ``key = value`` text; keys are the long flag names
(dashes or underscores), ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import calibration
from .data import Dataset, load_csv, make_split, sub_seed, synth_gaussian
from .pipeline import STREAMS, PhiTestConfig, ablation_suite, benchmark, compute_shap, fit_backbone, phi_test
from .predictors import ExternalPredictor, predict_batch, write_predictions
from .report import (
    calibration_to_csv,
    metrics_to_csv,
    render_calibration,
    render_metrics,
    render_table,
    table_to_csv,
    write_json,
)
from .shapley import read_shap_csv, write_shap_csv

logger = logging.getLogger("phitest")

COMMANDS = ("table", "benchmark", "calibrate", "ablate")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "table"
    data: str | None = None
    recipe: str = "none"
    target: str | None = None
    backbone: str = "gbt"
    backbone2: str = "gbt-shallow"
    engine: str = "exact"
    selector: str = "lars"
    mode: str = "split"
    M: int | None = None
    K: int | None = None
    alpha: float = 0.05
    seed: int = 0
    replicates: int | None = None
    train_fraction: float = 0.8
    background_size: int = 100
    n_coalitions: str = "all"
    calib_mode: str = "null_p"
    shap_in: str | None = None
    out_json: str | None = None
    out_csv: str | None = None
    dump_shap: str | None = None
    dump_predictions: str | None = None

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command != "calibrate" and not self.data:
            raise ConfigError("--data is required")
        if self.engine not in ("exact", "kernel"):
            raise ConfigError("--engine must be exact or kernel")
        if self.mode not in ("full", "split"):
            raise ConfigError("--mode must be full or split")
        if not (self.selector in ("lars", "stepwise") or self.selector.startswith("lasso:")):
            raise ConfigError("--selector must be lars, stepwise or lasso:<lambda>")
        if self.selector.startswith("lasso:"):
            try:
                lam = float(self.selector.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad lasso penalty in {self.selector!r}") from None
            if not lam > 0:
                raise ConfigError("lasso penalty must be positive")
        if self.command == "table" and self.mode == "full" and self.selector == "lars":
            raise ConfigError("--mode full needs --selector stepwise or lasso:<lambda>; "
                              "LARS first-K has no selection polyhedron")
        if not 0 < self.alpha < 1:
            raise ConfigError("--alpha must lie in (0, 1)")
        if self.M is not None and self.M < 1:
            raise ConfigError("-M must be at least 1")
        if self.K is not None and self.K < 0:
            raise ConfigError("-K must be nonnegative")
        if self.command in ("benchmark", "ablate") and self.replicates is not None and self.replicates < 2:
            raise ConfigError("--replicates must be at least 2 for stability")
        if self.command == "calibrate" and self.calib_mode not in calibration.MODES:
            raise ConfigError(f"--calib-mode must be one of {sorted(calibration.MODES)}")
        if self.backbone.startswith("external:") and self.command == "table" and not self.shap_in:
            raise ConfigError("an external backbone needs --shap-in with precomputed SHAP values")
        if self.backbone.startswith("external:") and self.command in ("benchmark", "ablate"):
            raise ConfigError("benchmark and ablate refit the backbone per replicate; external predictions are "
                              "only supported by the table command")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("--train-fraction must lie in (0, 1)")

    def phi_config(self) -> PhiTestConfig:
        n_coal = self.n_coalitions if self.n_coalitions == "all" else int(self.n_coalitions)
        K = self.K if self.K is not None else (3 if self.command == "calibrate" else 5)
        return PhiTestConfig(M=self.M, K=K, selector=self.selector, engine=self.engine, alpha=self.alpha,
                             mode=self.mode, seed=self.seed, background_size=self.background_size,
                             n_coalitions=n_coal)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    t = str(_TYPES[key])
    if value.lower() in ("none", ""):
        return None
    if t.startswith("int"):
        return int(value)
    if t.startswith("float"):
        return float(value)
    return value


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in _TYPES or key == "command":
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phitest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"phitest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS
    for name in COMMANDS:
        p = sub.add_parser(name, argument_default=S)
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--data", help="CSV path, or synth:<n>:<p> for a planted linear problem")
        p.add_argument("--recipe", choices=["none", "airquality", "concrete"])
        p.add_argument("--target")
        p.add_argument("--backbone", help="linear | gbt | gbt-shallow | external:<predictions.csv>")
        p.add_argument("--backbone2", help="second backbone for robustness (default gbt-shallow)")
        p.add_argument("--engine", choices=["exact", "kernel"])
        p.add_argument("--n-coalitions", dest="n_coalitions", help="KernelSHAP budget, or 'all'")
        p.add_argument("--background-size", dest="background_size", type=int)
        p.add_argument("--selector", help="lars | stepwise | lasso:<lambda>")
        p.add_argument("--mode", choices=["full", "split"])
        p.add_argument("-M", type=int)
        p.add_argument("-K", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--replicates", type=int)
        p.add_argument("--train-fraction", dest="train_fraction", type=float)
        p.add_argument("--out-json", dest="out_json")
        p.add_argument("--out-csv", dest="out_csv")
        p.add_argument("--dump-shap", dest="dump_shap", help="write evaluation-row SHAP values as CSV")
        p.add_argument("--dump-predictions", dest="dump_predictions",
                       help="write backbone predictions for every dataset row as CSV")
        p.add_argument("--shap-in", dest="shap_in", help="precomputed SHAP CSV (needed for external backbones)")
        p.add_argument("--calib-mode", dest="calib_mode", choices=sorted(calibration.MODES))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(argv=None) -> tuple[RunConfig, bool]:
    ns = vars(build_parser().parse_args(argv))
    verbose = ns.pop("verbose", False)
    settings = {}
    if "config" in ns:
        settings.update(read_config_file(ns.pop("config")))
    settings.update(ns)
    cfg = RunConfig(**settings)
    cfg.validate()
    return cfg, verbose


def load_data(cfg: RunConfig) -> Dataset:
    if cfg.data.startswith("synth:"):
        try:
            n, p = (int(s) for s in cfg.data.split(":")[1:3])
        except ValueError:
            raise ConfigError("synthetic data is given as synth:<n>:<p>") from None
        beta = np.zeros(p)
        beta[: min(3, p)] = [2.0, -1.5, 1.0][: min(3, p)]
        return synth_gaussian(n, p, beta, 0.5, sub_seed(cfg.seed, 9))
    return load_csv(cfg.data, cfg.target, cfg.recipe)


def cmd_table(cfg: RunConfig) -> int:
    data = load_data(cfg)
    pcfg = cfg.phi_config()
    split = make_split(data.n, sub_seed(cfg.seed, STREAMS["split"]), cfg.train_fraction, cfg.mode == "split")
    tr = split.train_idx
    f = fit_backbone(cfg.backbone, data.X[tr], data.y[tr], sub_seed(cfg.seed, STREAMS["backbone"]), data.X)
    eval_rows = split.selection_idx if cfg.mode == "split" else tr
    if cfg.shap_in:
        shap = read_shap_csv(cfg.shap_in)
    elif isinstance(f, ExternalPredictor):
        raise ConfigError("an external backbone needs --shap-in")
    else:
        X_eval = data.X[eval_rows]
        shap = compute_shap(f, X_eval, X_eval, pcfg, data.feature_names)
    if cfg.dump_predictions:
        write_predictions(cfg.dump_predictions, predict_batch(f, data.X))
    table = phi_test(f, data, split, pcfg, shap)
    if cfg.dump_shap:
        write_shap_csv(shap if shap.n == len(eval_rows) else shap.rows(eval_rows), cfg.dump_shap, data.feature_names)
    table.provenance["backbone"] = cfg.backbone
    print(render_table(table))
    conf = asdict(cfg)
    if cfg.out_json:
        write_json(cfg.out_json, "feature_table", table.to_dict(), conf)
    if cfg.out_csv:
        table_to_csv(table, cfg.out_csv, conf)
    return 0


def _metrics_command(cfg: RunConfig, runner, kind: str) -> int:
    data = load_data(cfg)
    reports = runner(data, cfg.phi_config(), cfg.backbone, cfg.backbone2, cfg.replicates or 5,
                     train_fraction=cfg.train_fraction)
    print(render_metrics(reports))
    conf = asdict(cfg)
    if cfg.out_json:
        write_json(cfg.out_json, kind, [r.to_dict() for r in reports], conf)
    if cfg.out_csv:
        metrics_to_csv(reports, cfg.out_csv, conf)
    return 0


def cmd_benchmark(cfg: RunConfig) -> int:
    return _metrics_command(cfg, benchmark, "benchmark")


def cmd_ablate(cfg: RunConfig) -> int:
    return _metrics_command(cfg, ablation_suite, "ablation")


def cmd_calibrate(cfg: RunConfig) -> int:
    kw = {"replicates": cfg.replicates or 2000, "seed": cfg.seed}
    if cfg.K is not None:
        kw["K"] = cfg.K
    if cfg.calib_mode == "coverage":
        kw["alpha"] = cfg.alpha
    elif cfg.calib_mode == "naive_compare":
        kw["level"] = cfg.alpha
    res = calibration.run(cfg.calib_mode, **kw)
    print(render_calibration(res))
    conf = asdict(cfg)
    if cfg.out_json:
        write_json(cfg.out_json, "calibration", res.to_dict(), conf)
    if cfg.out_csv:
        calibration_to_csv(res, cfg.out_csv, conf)
    return 0 if res.passed else 1


HANDLERS = {"table": cmd_table, "benchmark": cmd_benchmark, "calibrate": cmd_calibrate, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        cfg, verbose = resolve_config(argv)
    except (ConfigError, OSError) as exc:
        print(f"phitest: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[cfg.command](cfg)
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"phitest: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
