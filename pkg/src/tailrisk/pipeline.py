"""Artifact-producing pipeline stages.

Every stage reads its inputs from the output directory and writes its own
files there, so running the stages one by one is the same computation as a
full run. Layout::

    data/prices.csv, data/returns.csv
    cells/<tag>/tvar_labels.csv
    cells/<tag>/params/*.json, cells/<tag>/models/*.bin
    cells/<tag>/probs/<model>.csv, cells/<tag>/forecasts/<model>.csv
    cells/<tag>/ensemble_coefficients.csv, cells/<tag>/thresholds.json
    cells/<tag>/backtests/<strategy>.csv, cells/<tag>/backtests/summary.json
    cells/<tag>/metrics.json, cells/<tag>/roc/<model>.csv
    report/*.csv, report/report.json
    manifest.json
"""
from __future__ import annotations

import hashlib
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import io
from .config import NN_MODELS, config_hash
from .econ.carlvol import carlvol_fit
from .econ.evt import gpd_fit
from .econ.garch import FitError, garch_filter, qmle_fit
from .econ.lpa import lpa_select_interval
from .econ.rolling import ECON_MODELS, RollingConfig, rolling_probabilities
from .ensemble import online_stack
from .metrics import auc, folded_metric, risk_adjusted_auc, roc_curve
from .nn.features import build_features
from .nn.model import NetWeights
from .nn.train import TrainConfig, predict_p2, train
from .strategy import (backtest, benchmark_buy_hold, benchmark_target_var, benchmark_varspread,
                       signals_from_threshold, strategy_exceedance, switch_strategy,
                       threshold_select)
from .synthetic import synthetic_prices
from .timeseries import (DataError, RiskTargetSpec, class_costs, log_returns, make_labels,
                         rolling_hist_var)

log = logging.getLogger(__name__)

STAGES = ("ingest", "label", "fit", "predict", "stack", "backtest", "report")
LSTM_HISTORY = 37


class MissingArtifact(DataError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class Workspace:
    """Output directory that remembers what the current stage has written."""

    def __init__(self, root):
        self.root = Path(root)
        self.written: list[Path] = []

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def need(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        if not p.exists():
            raise MissingArtifact(f"expected artifact {p} is missing (run the upstream stage)")
        return p

    def cell(self, spec: RiskTargetSpec, *parts) -> Path:
        return self.path("cells", spec.tag, *parts)

    def need_cell(self, spec: RiskTargetSpec, *parts) -> Path:
        return self.need("cells", spec.tag, *parts)


def _specs(cfg) -> list[RiskTargetSpec]:
    return [RiskTargetSpec(float(t["alpha"]), int(t["window"])) for t in cfg["targets"]]


def _returns(ws: Workspace) -> pd.Series:
    return io.read_frame(ws.need("data", "returns.csv"))["r"]


def _prices(ws: Workspace) -> pd.Series:
    return io.read_frame(ws.need("data", "prices.csv"))["close"]


def _tvar_labels(ws: Workspace, spec: RiskTargetSpec):
    df = io.read_frame(ws.need_cell(spec, "tvar_labels.csv"))
    tvar = df[["tvar_upper", "tvar_lower"]].rename(columns={"tvar_upper": "upper", "tvar_lower": "lower"})
    labels = df["label"].dropna().astype(int)
    return tvar, labels


def _econ_config(cfg) -> RollingConfig:
    e = cfg["econ"]
    return RollingConfig(
        fit_window=int(e["fit_window"]), refit_every=int(e["refit_every"]),
        orders=tuple(int(o) for o in e["orders"]), maxiter=int(e["maxiter"]),
        tail_fraction=float(e["tail_fraction"]), min_exceedances=int(e["min_exceedances"]),
        lpa_step=int(e["lpa_step"]), lpa_min_window=int(e["lpa_min_window"]),
        lpa_every=int(e["lpa_every"]), lpa_bootstrap_B=int(e["lpa_bootstrap_B"]),
        lpa_min_segment=int(e["lpa_min_segment"]), seed=int(cfg["run"]["seed"]))


def _train_config(cfg) -> TrainConfig:
    n = cfg["nn"]
    return TrainConfig(batch_size=int(n["batch_size"]), learning_rate=float(n["learning_rate"]),
                       beta1=float(n["beta1"]), beta2=float(n["beta2"]), eps=float(n["eps"]),
                       epochs=int(n["epochs"]), patience=int(n["patience"]),
                       val_fraction=float(n["val_fraction"]), dropout=float(n["dropout"]),
                       seed=int(cfg["run"]["seed"]))


def decision_layout(cfg, returns: pd.Series, spec: RiskTargetSpec):
    """Shared decision range and the train/test boundary.

    Decisions run from the first index with a full fitting window (and enough
    history for every model) to the second-to-last index, so each decision
    has a realised next period.
    """
    n = len(returns)
    first = max(int(cfg["econ"]["fit_window"]) - 1, spec.window - 1, LSTM_HISTORY - 1)
    last = n - 2
    if last - first < 10:
        raise DataError(f"series of {n} returns is too short for the configured windows")
    positions = np.arange(first, last + 1)
    stamps = returns.index[positions]
    split = cfg["split"]
    if "train_end" in split:
        end = pd.Timestamp(split["train_end"])
        end = end.tz_localize("UTC") if end.tzinfo is None else end.tz_convert("UTC")
        if not stamps[0] <= end < stamps[-1]:
            raise DataError(f"split.train_end {end} is outside the decision range "
                            f"{stamps[0]} .. {stamps[-1]}")
        n_train = int(np.searchsorted(stamps.asi8, end.value, side="right"))
    else:
        n_train = int(round(float(split["train_fraction"]) * len(positions)))
    if n_train < 1 or n_train >= len(positions):
        raise DataError("train/test split leaves an empty side")
    return positions, n_train


# ----------------------------------------------------------------- stages


def stage_ingest(cfg, ws: Workspace) -> None:
    data = cfg["data"]
    if "path" in data:
        prices = io.read_prices(data["path"], gaps=data["gaps"])
    else:
        syn = data["synthetic"]
        extra = {k: syn[k] for k in ("df", "stay") if k in syn}
        prices = synthetic_prices(int(syn.get("n", 2000)), int(syn.get("seed", 0)), **extra)
    returns = log_returns(prices)
    for spec in _specs(cfg):
        if spec.window >= len(returns):
            raise DataError(f"window {spec.window} is not shorter than the {len(returns)} returns")
    io.write_prices(prices, ws.path("data", "prices.csv"))
    io.write_frame(pd.DataFrame({"r": returns}), ws.path("data", "returns.csv"))


def stage_label(cfg, ws: Workspace) -> None:
    returns = _returns(ws)
    for spec in _specs(cfg):
        tvar = rolling_hist_var(returns, spec)
        labels = make_labels(returns, tvar)
        io.write_tvar_labels(tvar, labels, ws.cell(spec, "tvar_labels.csv"))


def _nn_blocks(cfg, positions, n_train):
    """Decision-position blocks, each served by one trained network."""
    every = int(cfg["nn"]["retrain_every"])
    starts = list(range(n_train, len(positions), every))
    return [(0, n_train)] + [(s, min(s + every, len(positions))) for s in starts]


def stage_fit(cfg, ws: Workspace) -> None:
    returns = _returns(ws)
    roster = cfg["models"]["roster"]
    econ = _econ_config(cfg)
    for spec in _specs(cfg):
        tvar, labels = _tvar_labels(ws, spec)
        positions, n_train = decision_layout(cfg, returns, spec)
        t_end = positions[n_train - 1]
        loss = -returns.to_numpy()
        window = loss[t_end - econ.fit_window + 1:t_end + 1]
        upper = float(tvar["upper"].iloc[t_end])
        exported = {}
        if "garch_norm" in roster or "garch_evt" in roster:
            params = _fit_or_best(qmle_fit, window, econ.orders, maxiter=econ.maxiter)
            exported["arma_garch"] = params.to_dict()
            if "garch_evt" in roster:
                _, sigma, eps = garch_filter(params, window)
                exported["gpd"] = gpd_fit(eps / sigma, econ.tail_fraction, econ.min_exceedances).to_dict()
        if "carlvol" in roster:
            exported["carlvol"] = _fit_or_best(carlvol_fit, window, upper, maxiter=econ.maxiter).to_dict()
            exported["carlvol"]["Q"] = upper
        if "lpa_garch" in roster:
            hi = lpa_select_interval(window, len(window) - 1, step=econ.lpa_step,
                                     bootstrap_B=econ.lpa_bootstrap_B, seed=econ.seed,
                                     min_window=econ.lpa_min_window, max_window=econ.fit_window,
                                     min_segment=econ.lpa_min_segment, maxiter=econ.maxiter)
            exported["lpa_garch"] = {"length": hi.length, "params": hi.params.to_dict(),
                                     "critical_value": hi.critical_value}
        if exported:
            exported["fit_end"] = returns.index[t_end]
            io.write_json(exported, ws.cell(spec, "params", "econ_train_fit.json"))

        tcfg = _train_config(cfg)
        for arch in (m for m in roster if m in NN_MODELS):
            feats = build_features(returns, tvar, arch)
            history = []
            weights = None
            for k, (b0, _) in enumerate(_nn_blocks(cfg, positions, n_train)):
                if k == 0:
                    cutoff = positions[n_train - 1]
                else:
                    cutoff = positions[b0] - 1
                # rows whose next-period label is known at the cutoff
                rows = feats.index <= returns.index[cutoff]
                result = train(feats.take(np.flatnonzero(rows)), labels, tcfg, arch, init=weights)
                weights = result.weights
                weights.save(ws.cell(spec, "models", f"{arch}_block{k}.bin"))
                history.append({"block": k, "cutoff": returns.index[cutoff], "best_epoch": result.best_epoch,
                                "train_loss": result.train_loss, "val_loss": result.val_loss})
            io.write_json(history, ws.cell(spec, "models", f"{arch}_history.json"))


def _fit_or_best(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FitError as err:
        if err.best is None:
            raise
        log.warning("%s: using best non-converged parameters", fn.__name__)
        return err.best


def _econ_job(args):
    returns, tvar, model, alpha, positions, econ = args
    return rolling_probabilities(returns, tvar, model, alpha, positions, econ)


def stage_predict(cfg, ws: Workspace) -> None:
    returns = _returns(ws)
    roster = cfg["models"]["roster"]
    econ = _econ_config(cfg)
    workers = 1 if cfg["run"]["strict"] else int(cfg["run"]["workers"])
    for spec in _specs(cfg):
        tvar, _ = _tvar_labels(ws, spec)
        positions, n_train = decision_layout(cfg, returns, spec)
        econ_models = [m for m in roster if m in ECON_MODELS]
        jobs = [(returns, tvar, m, spec.alpha, positions, econ) for m in econ_models]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outputs = list(pool.map(_econ_job, jobs))
        else:
            outputs = [_econ_job(j) for j in jobs]
        for model, out in zip(econ_models, outputs):
            io.write_probabilities(out["p"], ws.cell(spec, "probs", f"{model}.csv"))
            extra = out.drop(columns="p")
            if len(extra.columns):
                io.write_frame(extra, ws.cell(spec, "forecasts", f"{model}.csv"))

        for arch in (m for m in roster if m in NN_MODELS):
            feats = build_features(returns, tvar, arch)
            parts = []
            for k, (b0, b1) in enumerate(_nn_blocks(cfg, positions, n_train)):
                weights = NetWeights.load(ws.need_cell(spec, "models", f"{arch}_block{k}.bin"))
                block = feats.loc(returns.index[positions[b0:b1]])
                parts.append(predict_p2(weights, block))
            io.write_probabilities(pd.concat(parts), ws.cell(spec, "probs", f"{arch}.csv"))


def _tail_target(returns: pd.Series, tvar: pd.DataFrame, index) -> pd.Series:
    """1 when the loss of the period after each decision reaches the target."""
    nxt = -returns.shift(-1).reindex(index)
    return (nxt >= tvar["upper"].reindex(index)).astype(float).where(nxt.notna())


def _load_probs(ws, spec, names) -> pd.DataFrame:
    return pd.DataFrame({m: io.read_probabilities(ws.need_cell(spec, "probs", f"{m}.csv")) for m in names})


def stage_stack(cfg, ws: Workspace) -> None:
    returns = _returns(ws)
    roster = cfg["models"]["roster"]
    e = cfg["ensemble"]
    for spec in _specs(cfg):
        tvar, labels = _tvar_labels(ws, spec)
        probs = _load_probs(ws, spec, roster)
        nxt_label = labels.shift(-1).reindex(probs.index)
        target = (nxt_label == 2).astype(float).where(nxt_label.notna())
        preds, betas = online_stack(probs, target, lam=float(e["lam"]), warmup=int(e["warmup"]),
                                    window=int(e["window"]) or None)
        betas.columns = [f"beta_{m}" for m in roster]
        io.write_probabilities(preds, ws.cell(spec, "probs", "ensemble.csv"))
        io.write_frame(betas, ws.cell(spec, "ensemble_coefficients.csv"))


def stage_backtest(cfg, ws: Workspace) -> None:
    returns = _returns(ws)
    prices = _prices(ws)
    roster = cfg["models"]["roster"]
    s = cfg["strategy"]
    fee, ppy = float(s["fee_rate"]), int(s["periods_per_year"])
    for spec in _specs(cfg):
        tvar, _ = _tvar_labels(ws, spec)
        positions, n_train = decision_layout(cfg, returns, spec)
        stamps = returns.index[positions]
        train_idx, test_idx = stamps[:n_train], stamps[n_train:]
        strategies, thresholds = {}, {}
        for name in list(roster) + ["ensemble"]:
            p = io.read_probabilities(ws.need_cell(spec, "probs", f"{name}.csv"))
            p_train = p.reindex(train_idx).dropna()
            if p_train.empty:
                raise DataError(f"{name}: no predictions on the training range "
                                "(ensemble warm-up longer than the training range?)")
            choice = threshold_select(p_train, returns, tvar, spec.alpha)
            thresholds[name] = choice.to_dict()
            strategies[name] = signals_from_threshold(p.reindex(test_idx), choice.u_star)
        strategies["buy_hold"] = benchmark_buy_hold(test_idx)
        var = {}
        for model in ("garch_norm", "garch_evt"):
            f = ws.root / "cells" / spec.tag / "forecasts" / f"{model}.csv"
            if f.exists():
                var[model] = io.read_frame(f)["var"].reindex(test_idx)
        if "garch_norm" in var:
            strategies["target_var_norm"] = benchmark_target_var(var["garch_norm"], tvar)
        if "garch_evt" in var:
            strategies["target_var_evt"] = benchmark_target_var(var["garch_evt"], tvar)
        if len(var) == 2:
            # the spread z-score needs history, so compute it over all decisions
            vn = io.read_frame(ws.need_cell(spec, "forecasts", "garch_norm.csv"))["var"]
            ve = io.read_frame(ws.need_cell(spec, "forecasts", "garch_evt.csv"))["var"]
            vs = benchmark_varspread(vn, ve, int(s["varspread_window"]), float(s["z_crit"]))
            strategies["varspread"] = vs.reindex(test_idx)
            strategies["switch"] = switch_strategy(prices, strategies["ensemble"],
                                                   strategies["varspread"], int(s["switch_n"]))
        if any(pos.isna().any() for pos in strategies.values()):
            bad = [k for k, v in strategies.items() if v.isna().any()]
            raise DataError(f"missing test-range positions for {bad}")
        summary = {}
        for name, pos in strategies.items():
            rep = backtest(pos, returns, fee, ppy)
            exc, ok = strategy_exceedance(rep.strategy_returns, tvar, spec.alpha)
            summary[name] = {**rep.summary(), "exceedance": exc, "respects_target": ok}
            io.write_frame(rep.ledger(), ws.cell(spec, "backtests", f"{name}.csv"))
        io.write_json(thresholds, ws.cell(spec, "thresholds.json"))
        io.write_json(summary, ws.cell(spec, "backtests", "summary.json"))


def stage_report(cfg, ws: Workspace) -> None:
    if not (ws.root / "cells").is_dir():
        raise MissingArtifact(f"no results under {ws.root}; nothing to report")
    returns = _returns(ws)
    roster = list(cfg["models"]["roster"]) + ["ensemble"]
    fold_len = int(cfg["metrics"]["fold_len"])
    auc_rows, aauc_rows, comparison, exc_rows, cells = [], [], [], [], {}
    for spec in _specs(cfg):
        tvar, labels = _tvar_labels(ws, spec)
        positions, n_train = decision_layout(cfg, returns, spec)
        stamps = returns.index[positions]
        train_labels = labels.reindex(stamps[:n_train]).dropna().astype(int)
        costs = class_costs(returns, train_labels)
        test_idx = stamps[n_train:]
        y = _tail_target(returns, tvar, test_idx)
        metrics = {"cF": costs.cF, "cT": costs.cT, "class_means": costs.class_means,
                   "class_weights": costs.class_weights, "models": {}}
        row_key = {"alpha": spec.alpha, "window": spec.window}
        auc_row, aauc_row = dict(row_key), dict(row_key)
        for name in roster:
            p = io.read_probabilities(ws.need_cell(spec, "probs", f"{name}.csv")).reindex(test_idx)
            ok = p.notna() & y.notna()
            scores, pos = p[ok].to_numpy(), y[ok].to_numpy().astype(int)
            if pos.all() or not pos.any():
                metrics["models"][name] = {"auc": None, "aauc": None, "note": "single-class test range"}
                continue
            rep = risk_adjusted_auc(scores, pos, costs)
            curve = roc_curve(scores, pos)
            io.write_frame(pd.DataFrame({"fpr": curve.fpr, "tpr": curve.tpr,
                                         "threshold": curve.thresholds}).set_index("threshold"),
                           ws.cell(spec, "roc", f"{name}.csv"), index_label="threshold")
            entry = {"auc": rep.auc, "aauc": rep.aauc}
            folds = [range(i, min(i + fold_len, len(scores))) for i in range(0, len(scores), fold_len)]
            try:
                mean, var, _, skipped = folded_metric(
                    scores, pos, folds, lambda s_, y_: risk_adjusted_auc(s_, y_, costs).aauc)
                entry.update(aauc_fold_mean=mean, aauc_fold_var=var, folds_skipped=skipped)
            except ValueError:
                entry.update(aauc_fold_mean=None, aauc_fold_var=None)
            metrics["models"][name] = entry
            auc_row[name], aauc_row[name] = rep.auc, rep.aauc
        auc_rows.append(auc_row)
        aauc_rows.append(aauc_row)
        io.write_json(metrics, ws.cell(spec, "metrics.json"))
        summary = io.read_json(ws.need_cell(spec, "backtests", "summary.json"))
        exc_row = dict(row_key)
        for name, st in summary.items():
            comparison.append({**row_key, "strategy": name, **{k: st[k] for k in (
                "exceedance", "respects_target", "average_return", "total_return",
                "annualized_return", "sharpe", "sortino", "mdd", "volatility", "trades", "fees")}})
            exc_row[name] = st["exceedance"]
        exc_rows.append(exc_row)
        cells[spec.tag] = {"metrics": metrics, "backtests": summary}
    pd.DataFrame(auc_rows).to_csv(ws.path("report", "metrics_auc.csv"), index=False, float_format="%.10g")
    pd.DataFrame(aauc_rows).to_csv(ws.path("report", "metrics_aauc.csv"), index=False, float_format="%.10g")
    pd.DataFrame(exc_rows).to_csv(ws.path("report", "exceedance.csv"), index=False, float_format="%.10g")
    pd.DataFrame(comparison).to_csv(ws.path("report", "comparison.csv"), index=False, float_format="%.10g")
    io.write_json(cells, ws.path("report", "report.json"))


STAGE_FUNCS = {
    "ingest": stage_ingest, "label": stage_label, "fit": stage_fit, "predict": stage_predict,
    "stack": stage_stack, "backtest": stage_backtest, "report": stage_report,
}


# ----------------------------------------------------------------- driver


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg, ws: Workspace, stages_done) -> dict:
    files = {}
    for p in sorted(ws.root.rglob("*")):
        rel = p.relative_to(ws.root).as_posix()
        if p.is_file() and rel not in ("manifest.json", "config.json") and not rel.endswith(".partial"):
            files[rel] = _sha256(p)
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg["run"]["seed"],
        "strict": cfg["run"]["strict"],
        "stages": list(stages_done),
        "files": files,
    }
    if "path" in cfg["data"]:
        manifest["data_sha256"] = _sha256(Path(cfg["data"]["path"]))
    io.write_json(manifest, ws.root / "manifest.json")
    return manifest


def _completed(ws: Workspace) -> list[str]:
    m = ws.root / "manifest.json"
    return io.read_json(m)["stages"] if m.exists() else []


def run_stage(cfg, out_dir, stage: str) -> None:
    if stage not in STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}")
    ws = Workspace(out_dir)
    ws.root.mkdir(parents=True, exist_ok=True)
    io.write_json(cfg, ws.root / "config.json")
    try:
        STAGE_FUNCS[stage](cfg, ws)
    except Exception as exc:
        for p in ws.written:
            if p.exists():
                p.replace(p.with_name(p.name + ".partial"))
        raise StageError(stage, exc) from exc
    for p in ws.written:
        stale = p.with_name(p.name + ".partial")
        if stale.exists():
            stale.unlink()
    done = [s for s in _completed(ws) if s != stage] + [stage]
    write_manifest(cfg, ws, sorted(done, key=STAGES.index))


def run_pipeline(cfg, out_dir, clean: bool = True) -> dict:
    out = Path(out_dir)
    if clean and (out / "cells").exists():
        shutil.rmtree(out / "cells")
    for stage in STAGES:
        log.info("stage %s", stage)
        run_stage(cfg, out, stage)
    return io.read_json(out / "manifest.json")
