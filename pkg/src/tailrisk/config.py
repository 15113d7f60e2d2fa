"""Run configuration: TOML file merged over defaults, validated before any compute."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .econ.rolling import ECON_MODELS
from .timeseries import RiskTargetSpec

NN_MODELS = ("mlp", "lstm")
ALL_MODELS = ECON_MODELS + NN_MODELS
OUTPUT_ENV = "TAILRISK_OUTPUT_DIR"

DEFAULTS = {
    "data": {"gaps": "error"},
    "split": {"train_fraction": 0.6},
    "targets": [{"alpha": 0.05, "window": 24}],
    "models": {"roster": list(ALL_MODELS)},
    "econ": {
        "fit_window": 2880, "refit_every": 1, "orders": [3, 1, 2, 1], "maxiter": 500,
        "tail_fraction": 0.05, "min_exceedances": 50,
        "lpa_step": 5, "lpa_min_window": 240, "lpa_every": 5, "lpa_bootstrap_B": 100,
        "lpa_min_segment": 30,
    },
    "nn": {
        "epochs": 100, "batch_size": 128, "learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999,
        "eps": 1e-8, "patience": 10, "val_fraction": 0.1, "dropout": 0.2, "retrain_every": 824,
    },
    "ensemble": {"lam": 1.0, "warmup": 200, "window": 0},
    "strategy": {
        "fee_rate": 0.001, "varspread_window": 240, "z_crit": 2.0, "switch_n": 2880,
        "periods_per_year": 8760,
    },
    "metrics": {"fold_len": 720},
    "run": {"seed": 0, "strict": True, "workers": 1},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{key} must be a table")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


# keys whose default is absent but may be supplied
_OPTIONAL = {"data": ("path", "synthetic"), "split": ("train_end",), "run": ("output_dir",)}


def load_config(path=None, overrides: dict | None = None) -> dict:
    raw = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base_dir = path.parent.resolve()
    if overrides:
        raw = {**raw, **{k: {**raw.get(k, {}), **v} if isinstance(v, dict) else v
                         for k, v in overrides.items()}}
    defaults = copy.deepcopy(DEFAULTS)
    for section, keys in _OPTIONAL.items():
        for key in keys:
            if key in raw.get(section, {}):
                defaults[section][key] = None
    cfg = _merge(defaults, raw)
    for section, keys in _OPTIONAL.items():
        for key in keys:
            if cfg[section].get(key, 0) is None:
                del cfg[section][key]
    if "path" in cfg["data"]:
        p = Path(cfg["data"]["path"])
        cfg["data"]["path"] = str(p if p.is_absolute() else (base_dir / p).resolve())
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    data = cfg["data"]
    if ("path" in data) == ("synthetic" in data):
        raise ConfigError("data needs exactly one of 'path' or 'synthetic'")
    if "synthetic" in data:
        syn = data["synthetic"]
        if not isinstance(syn, dict) or set(syn) - {"n", "seed", "df", "stay"}:
            raise ConfigError("data.synthetic accepts n, seed, df, stay")
    if data["gaps"] not in ("error", "ffill"):
        raise ConfigError("data.gaps must be 'error' or 'ffill'")
    roster = cfg["models"]["roster"]
    if not roster:
        raise ConfigError("models.roster is empty")
    unknown = [m for m in roster if m not in ALL_MODELS]
    if unknown:
        raise ConfigError(f"unknown model(s) {unknown}; choose from {list(ALL_MODELS)}")
    if len(set(roster)) != len(roster):
        raise ConfigError("duplicate models in roster")
    targets = cfg["targets"]
    if not targets:
        raise ConfigError("at least one (alpha, window) target is required")
    for t in targets:
        try:
            RiskTargetSpec(float(t["alpha"]), int(t["window"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad target {t}: {exc}") from None
    frac = cfg["split"].get("train_fraction")
    if "train_end" not in cfg["split"] and not (0 < frac < 1):
        raise ConfigError("split.train_fraction must lie in (0, 1)")
    e = cfg["econ"]
    if len(e["orders"]) != 4 or any(int(o) < 0 for o in e["orders"]):
        raise ConfigError("econ.orders must be four non-negative integers (P, Q, p, q)")
    for key in ("fit_window", "refit_every", "lpa_step", "lpa_every", "lpa_bootstrap_B"):
        if int(e[key]) < 1:
            raise ConfigError(f"econ.{key} must be >= 1")
    if e["fit_window"] < e["lpa_min_window"] and "lpa_garch" in roster:
        raise ConfigError("econ.fit_window must be >= econ.lpa_min_window")
    n = cfg["nn"]
    if int(n["batch_size"]) < 1 or not n["learning_rate"] > 0 or int(n["retrain_every"]) < 1:
        raise ConfigError("nn.batch_size, nn.learning_rate and nn.retrain_every must be positive")
    if cfg["ensemble"]["lam"] < 0 or cfg["ensemble"]["warmup"] < 1:
        raise ConfigError("ensemble.lam must be >= 0 and ensemble.warmup >= 1")
    s = cfg["strategy"]
    if not 0 <= s["fee_rate"] < 1:
        raise ConfigError("strategy.fee_rate must be in [0, 1)")
    if int(s["varspread_window"]) < 2 or int(s["switch_n"]) < 1:
        raise ConfigError("strategy.varspread_window must be >= 2 and switch_n >= 1")
    if int(cfg["run"]["workers"]) < 1:
        raise ConfigError("run.workers must be >= 1")


def output_dir(cfg: dict, cli_value=None) -> Path:
    chosen = cli_value or cfg["run"].get("output_dir") or os.environ.get(OUTPUT_ENV)
    if not chosen:
        raise ConfigError(f"no output directory: pass --out, set run.output_dir or ${OUTPUT_ENV}")
    return Path(chosen)


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (the output location does not)."""
    clean = copy.deepcopy(cfg)
    clean["run"].pop("output_dir", None)
    clean["data"].pop("path", None)
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
