"""Command-line pipeline: simulate -> train -> predict -> transition -> verify.

Subcommands
-----------
simulate    Generate a synthetic scenario into a data directory (CSV tables
            plus a small ESRI ASCII elevation grid).
train       Fit coefficients per (station, lead, strategy) for every issue
            date in the archive and write the coefficient store.
predict     Apply a coefficient store to the forecasts of each issue date.
transition  Assemble the seam product (combined stream up to the horizon,
            continuing single-model stream beyond it), optionally blending
            with the post-horizon scheme.
verify      Score predictions and raw ensembles against observations and
            write stratified report tables, PIT histograms, a pairwise
            significance matrix, weight time series and seam diagnostics.
tpi         Topographic position index of each station on an elevation grid.

Exit codes: 0 success, 1 input error, 2 at least one fit did not converge
(partial outputs are still written, with flags).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import io as eio
from .domain import EnsembleForecast
from .emos import FitOptions, model_weights
from .pipeline import (
    CoefficientKey,
    CoefficientStore,
    RollingWindowSpec,
    build_archive,
    fit_for_issue,
    mixed_strategy,
    parse_strategy,
    predict_for_issue,
)
from .scoring import (
    ScoreSeries,
    diebold_mariano,
    ensemble_crps,
    gaussian_crps,
    pit_histogram,
    pit_value,
    stratified_report,
)
from .synth import ModelErrorSpec, ScenarioSpec, TruthSpec, generate_scenario, interpolate_leads
from .terrain import ElevationGrid, lapse_correct, read_esri_ascii, tpi_at_station, write_esri_ascii
from .transition import TransitionSpec, seam_diagnostics, transition1_bounds, transition2_blend

__all__ = ["main", "randomized_ensemble_pit"]


def randomized_ensemble_pit(members, y: float, u: float) -> float:
    """Randomized-rank PIT of an observation within a raw ensemble.

    With r members strictly below y and t members equal to y, the PIT is
    (r + u * (t + 1)) / (m + 1) for u ~ U(0, 1); uniform when the members
    and the observation are exchangeable draws.
    """
    x = np.asarray(members, dtype=float)
    r = int(np.sum(x < y))
    t = int(np.sum(x == y))
    return (r + u * (t + 1)) / (x.size + 1)


class _Parser(argparse.ArgumentParser):
    # Spec'd exit code for usage errors is 1, not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _cfg_str(cfg, key, default=None):
    value = cfg.get(key, default)
    if value is None:
        raise ValueError(f"missing config key {key!r}")
    return value


def _cfg_float(cfg, key, default):
    raw = cfg.get(key)
    return default if raw is None or raw == "" else float(raw)


def _cfg_int(cfg, key, default):
    raw = cfg.get(key)
    return default if raw is None or raw == "" else int(raw)


def _cfg_opt_int(cfg, key, default):
    raw = cfg.get(key)
    if raw is None:
        return default
    if raw == "" or raw.lower() == "none":
        return None
    return int(raw)


def _parse_leads(raw: str) -> tuple[int, ...]:
    leads: set[int] = set()
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk:
            lo, _, hi = chunk.partition("-")
            leads.update(range(int(lo), int(hi) + 1))
        else:
            leads.add(int(chunk))
    if not leads:
        raise ValueError(f"no lead times in {raw!r}")
    return tuple(sorted(leads))


def _model_ids(cfg) -> list[str]:
    raw = cfg.get("models")
    if raw:
        return [m.strip() for m in raw.split(",") if m.strip()]
    found = sorted({key.split(".")[1] for key in cfg if key.startswith("model.")})
    if not found:
        raise ValueError("no models configured (set 'models' or model.<id>.* keys)")
    return found


def _model_spec(cfg, model_id: str) -> ModelErrorSpec:
    p = f"model.{model_id}."
    return ModelErrorSpec(
        member_count=_cfg_int(cfg, p + "members", 21),
        horizon=_cfg_int(cfg, p + "horizon", 120),
        bias_amplitude=_cfg_float(cfg, p + "bias_amplitude", 0.0),
        bias_peak_hour=_cfg_int(cfg, p + "bias_peak_hour", 12),
        bias_variability=_cfg_float(cfg, p + "bias_variability", 0.45),
        error_base_std=_cfg_float(cfg, p + "error_base_std", 0.5),
        error_growth_per_hour=_cfg_float(cfg, p + "error_growth", 0.004),
        error_lead_correlation=_cfg_float(cfg, p + "error_lead_correlation", 0.98),
        dispersion=_cfg_float(cfg, p + "dispersion", 1.0),
        coarse_after=_cfg_opt_int(cfg, p + "coarse_after", None),
        coarse_step=_cfg_int(cfg, p + "coarse_step", 3),
        elevation_offset_std=_cfg_float(cfg, p + "elevation_offset_std", 150.0),
    )


def _scenario_spec(cfg, seed_override=None) -> ScenarioSpec:
    seed = seed_override if seed_override is not None else _cfg_int(cfg, "seed", 0)
    start_raw = cfg.get("scenario.start", "2017-01-01")
    start = datetime.fromisoformat(start_raw).replace(tzinfo=timezone.utc)
    truth = TruthSpec(
        level=_cfg_float(cfg, "truth.level", 8.0),
        diurnal_amplitude=_cfg_float(cfg, "truth.diurnal_amplitude", 5.0),
        seasonal_amplitude=_cfg_float(cfg, "truth.seasonal_amplitude", 8.0),
        ar1_coefficient=_cfg_float(cfg, "truth.ar1", 0.85),
        innovation_std=_cfg_float(cfg, "truth.innovation_std", 0.9),
    )
    models = {m: _model_spec(cfg, m) for m in _model_ids(cfg)}
    return ScenarioSpec(
        seed=seed,
        n_stations=_cfg_int(cfg, "scenario.n_stations", 10),
        n_days=_cfg_int(cfg, "scenario.n_days", 100),
        lead_hours=_parse_leads(cfg.get("scenario.leads", "0-126")),
        start=start,
        truth=truth,
        models=models,
    )


def _window_spec(cfg) -> RollingWindowSpec:
    return RollingWindowSpec(
        window_days=_cfg_int(cfg, "window.days", 45),
        min_samples=_cfg_int(cfg, "window.min_samples", 30),
    )


def _fit_options(cfg) -> FitOptions:
    return FitOptions(
        max_iterations=_cfg_int(cfg, "fit.max_iterations", 1000),
        objective_tolerance=_cfg_float(cfg, "fit.tolerance", 1e-8),
        min_sigma=_cfg_float(cfg, "fit.min_sigma", 1e-3),
    )


def _transition_spec(cfg, scheme_override=None) -> TransitionSpec:
    scheme = scheme_override or cfg.get("transition.scheme", "none")
    weights_raw = cfg.get("transition.weights", "0.75,0.5,0.25")
    weights = tuple(float(w) for w in weights_raw.split(","))
    return TransitionSpec(
        horizon=_cfg_int(cfg, "transition.horizon", 120),
        scheme=scheme,
        weights=weights,
    )


def _strategies(cfg) -> list[str]:
    raw = cfg.get("strategies")
    if raw:
        strategies = [s.strip() for s in raw.split(",") if s.strip()]
    else:
        models = _model_ids(cfg)
        strategies = [f"raw:{m}" for m in models] + [f"single:{m}" for m in models]
        if len(models) >= 2:
            strategies.append(mixed_strategy(models[0], models[1]))
    for s in strategies:
        parse_strategy(s)
    if not strategies:
        raise ValueError("strategy list is empty")
    return strategies


def _continuing_strategy(cfg) -> str:
    explicit = cfg.get("transition.continuing")
    if explicit:
        return explicit
    models = _model_ids(cfg)
    longest = max(models, key=lambda m: _cfg_int(cfg, f"model.{m}.horizon", 120))
    return f"single:{longest}"


def _mixed_strategy_name(cfg) -> str:
    for s in _strategies(cfg):
        if parse_strategy(s)[0] == "mixed":
            return s
    raise ValueError("no mixed strategy configured")


# ---------------------------------------------------------------------------
# Shared data loading
# ---------------------------------------------------------------------------


def _load_data(cfg, data_dir: Path):
    """Read stations/observations/forecasts; lapse-correct members to station
    elevation and fill coarse lead grids by linear interpolation."""
    stations = eio.read_stations(data_dir / "stations.csv")
    by_station = {s.station_id: s for s in stations}
    observations = eio.read_observations(data_dir / "observations.csv")
    forecasts: dict[str, list[EnsembleForecast]] = {}
    for model_id in _model_ids(cfg):
        path = data_dir / f"forecasts_{model_id}.csv"
        raw = eio.read_forecasts(path, model_id)
        corrected = []
        for fc in raw:
            station = by_station.get(fc.station_id)
            if station is None:
                raise ValueError(f"{path}: unknown station {fc.station_id!r}")
            members = lapse_correct(fc.members, station.grid_elevation[model_id], station.elevation)
            corrected.append(replace(fc, members=members))
        step = _cfg_int(cfg, f"model.{model_id}.coarse_step", 3)
        forecasts[model_id] = interpolate_leads(corrected, source_step=step)
    return stations, observations, forecasts


def _coverage(forecasts: dict[str, list[EnsembleForecast]]) -> dict[str, set[int]]:
    return {m: {fc.lead_time for fc in fcs} for m, fcs in forecasts.items()}


def _keys_for_issue(cfg, issue: date, station_ids, leads, coverage, exclude=()):
    keys = []
    strategies = [s for s in _strategies(cfg) if parse_strategy(s)[0] != "raw"]
    for sid in sorted(station_ids):
        for lead in leads:
            for strat in strategies:
                if (strat, lead) in exclude:
                    continue
                _, models = parse_strategy(strat)
                if all(lead in coverage.get(m, ()) for m in models):
                    keys.append(CoefficientKey(sid, lead, strat, issue))
    return keys


def _issue_dates(forecasts, start=None, end=None) -> list[date]:
    dates = sorted({fc.init_time.date() for fcs in forecasts.values() for fc in fcs})
    if start is not None:
        dates = [d for d in dates if d >= start]
    if end is not None:
        dates = [d for d in dates if d <= end]
    return dates


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _demo_grid(stations) -> ElevationGrid:
    """Smooth synthetic terrain covering the station box with a margin, so
    every station sits on an interior cell."""
    lons = [s.longitude for s in stations]
    lats = [s.latitude for s in stations]
    cell = 0.05
    x0 = math.floor((min(lons) - 3 * cell) / cell) * cell
    y0 = math.floor((min(lats) - 3 * cell) / cell) * cell
    n_cols = int((max(lons) - x0) / cell) + 4
    n_rows = int((max(lats) - y0) / cell) + 4
    values = []
    for r in range(n_rows):
        y = y0 + (n_rows - 1 - r + 0.5) * cell
        for c in range(n_cols):
            x = x0 + (c + 0.5) * cell
            elev = (
                700.0
                + 1500.0 * math.sin(1.1 * (x - x0)) ** 2 * math.cos(1.7 * (y - y0)) ** 2
                + 300.0 * math.sin(6.0 * (x - x0)) * math.cos(5.0 * (y - y0))
            )
            values.append(round(elev, 2))
    return ElevationGrid(
        n_rows=n_rows, n_cols=n_cols, cell_size=cell, origin=(x0, y0), values=tuple(values), nodata=-9999.0
    )


def cmd_simulate(args) -> int:
    cfg = eio.parse_config(args.config)
    spec = _scenario_spec(cfg, seed_override=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    data = generate_scenario(spec)
    model_ids = sorted(spec.models)
    eio.write_stations(out_dir / "stations.csv", data.stations, model_ids)
    eio.write_observations(out_dir / "observations.csv", data.observations)
    for model_id in model_ids:
        eio.write_forecasts(out_dir / f"forecasts_{model_id}.csv", data.forecasts[model_id])
    write_esri_ascii(out_dir / "topo.asc", _demo_grid(data.stations))
    n_forecasts = sum(len(v) for v in data.forecasts.values())
    print(f"simulated {spec.n_stations} stations x {spec.n_days} days -> {n_forecasts} forecasts in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = eio.parse_config(args.config)
    data_dir = Path(args.data)
    stations, observations, forecasts = _load_data(cfg, data_dir)
    window = _window_spec(cfg)
    options = _fit_options(cfg)
    tspec = _transition_spec(cfg, scheme_override=args.scheme)
    leads = _parse_leads(cfg.get("scenario.leads", "0-126"))
    coverage = _coverage(forecasts)
    station_ids = sorted(observations)

    mixed_name = None
    taper_exclude = ()
    if tspec.scheme == "t1":
        mixed_name = _mixed_strategy_name(cfg)
        needed = (tspec.anchor_lead, *tspec.taper_leads)
        missing = [t for t in needed if t not in leads]
        if missing:
            print(f"error: transition t1 needs leads {missing} in the configured lead set", file=sys.stderr)
            return 1
        taper_exclude = tuple((mixed_name, t) for t in tspec.taper_leads)

    archive, dropped = build_archive(forecasts, observations, leads)
    if dropped:
        print(f"note: {dropped} incomplete init times dropped during alignment", file=sys.stderr)

    issues = _issue_dates(forecasts, args.issue_start, args.issue_end)
    store = CoefficientStore()
    any_nonconverged = False
    for issue in issues:
        keys = _keys_for_issue(cfg, issue, station_ids, leads, coverage, exclude=taper_exclude)
        updates = fit_for_issue(archive, issue, keys, window, options, store, n_jobs=args.jobs)
        store.update(updates)
        if tspec.scheme == "t1":
            for sid in station_ids:
                anchor = store.get(CoefficientKey(sid, tspec.anchor_lead, mixed_name, issue))
                if anchor is None:
                    print(f"error: no anchor coefficients at lead {tspec.anchor_lead} for {sid} {issue}", file=sys.stderr)
                    return 1
                bounds = transition1_bounds(anchor.coefficients, tspec)
                for lead in tspec.taper_leads:
                    if not all(lead in coverage.get(m, ()) for m in parse_strategy(mixed_name)[1]):
                        continue
                    key = CoefficientKey(sid, lead, mixed_name, issue)
                    bounded = replace(options, bounds=bounds[lead])
                    taper_updates = fit_for_issue(archive, issue, [key], window, bounded, store)
                    store.update(taper_updates)
                    updates.update(taper_updates)
        any_nonconverged = any_nonconverged or any(not r.converged for r in updates.values())

    eio.write_store(args.store, store)
    n_fallback = sum(1 for _, r in store.items() if r.fallback)
    print(f"trained {len(store)} records over {len(issues)} issue dates ({n_fallback} fallbacks) -> {args.store}")
    if any_nonconverged:
        print("warning: at least one fit did not converge (flagged in store)", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def cmd_predict(args) -> int:
    cfg = eio.parse_config(args.config)
    data_dir = Path(args.data)
    _, observations, forecasts = _load_data(cfg, data_dir)
    store = eio.read_store(args.store)
    options = _fit_options(cfg)
    leads = _parse_leads(cfg.get("scenario.leads", "0-126"))
    coverage = _coverage(forecasts)
    station_ids = sorted(observations)

    rows: list[eio.PredictionRow] = []
    n_errors = 0
    for issue in _issue_dates(forecasts, args.issue_start, args.issue_end):
        todays = [fc for fcs in forecasts.values() for fc in fcs if fc.init_time.date() == issue]
        init_times = sorted({fc.init_time for fc in todays})
        if not init_times:
            continue
        init_time = init_times[0]
        keys = _keys_for_issue(cfg, issue, station_ids, leads, coverage)
        outcome = predict_for_issue(store, todays, issue, keys, min_sigma=options.min_sigma)
        for (sid, lead, strategy), pred in outcome.predictions.items():
            rows.append(eio.PredictionRow(sid, init_time, lead, strategy, pred))
        for bad_key, message in sorted(outcome.errors.items()):
            print(f"error: {message}", file=sys.stderr)
            n_errors += 1

    eio.write_predictions(args.out, rows)
    print(f"wrote {len(rows)} predictions -> {args.out}")
    return 1 if n_errors else 0


# ---------------------------------------------------------------------------
# transition
# ---------------------------------------------------------------------------


def cmd_transition(args) -> int:
    cfg = eio.parse_config(args.config)
    tspec = _transition_spec(cfg, scheme_override=args.scheme)
    options = _fit_options(cfg)
    mixed_name = _mixed_strategy_name(cfg)
    continuing = _continuing_strategy(cfg)

    rows = eio.read_predictions(args.predictions)
    by_case: dict[tuple[str, datetime], dict[str, dict[int, eio.PredictionRow]]] = {}
    for r in rows:
        by_case.setdefault((r.station_id, r.init_time), {}).setdefault(r.strategy, {})[r.lead_time] = r

    label = f"seam_{tspec.scheme}"
    out_rows: list[eio.PredictionRow] = []
    for (sid, init_time), per_strategy in sorted(by_case.items()):
        mixed_rows = per_strategy.get(mixed_name, {})
        single_rows = per_strategy.get(continuing, {})
        if not single_rows:
            print(f"error: no {continuing!r} predictions for {sid} {init_time}", file=sys.stderr)
            return 1
        single_series = {lead: r.predictive for lead, r in single_rows.items()}
        beyond = {lead: pred for lead, pred in single_series.items() if lead > tspec.horizon}
        if tspec.scheme == "t2":
            mixed_at_h = mixed_rows.get(tspec.horizon)
            if mixed_at_h is None:
                print(f"error: no {mixed_name!r} prediction at the horizon for {sid} {init_time}", file=sys.stderr)
                return 1
            blended = transition2_blend(mixed_at_h.predictive, single_series, tspec, min_sigma=options.min_sigma)
            beyond = {lead: pred for lead, pred in blended.items() if lead > tspec.horizon}
        for lead, row in sorted(mixed_rows.items()):
            if lead <= tspec.horizon:
                out_rows.append(eio.PredictionRow(sid, init_time, lead, label, row.predictive))
        for lead, pred in sorted(beyond.items()):
            out_rows.append(eio.PredictionRow(sid, init_time, lead, label, pred))

    eio.write_predictions(args.out, out_rows)
    print(f"wrote {len(out_rows)} seam predictions ({label}) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _write_report_tables(out_dir: Path, report, label_columns):
    import csv

    with (out_dir / "crps_overall.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "n", "mean_crps", "crpss", "frac_stations_crpss_pos"])
        for strategy in sorted(report.overall):
            stat = report.overall[strategy]
            frac = report.station_skill_fraction.get(strategy)
            w.writerow(
                [
                    strategy,
                    stat.count,
                    eio.fmt_float(stat.mean_crps),
                    "" if stat.crpss is None else eio.fmt_float(stat.crpss),
                    "" if frac is None else eio.fmt_float(frac),
                ]
            )
    for strat_name, label_col in label_columns.items():
        table = report.by_stratum.get(strat_name)
        if table is None:
            continue
        with (out_dir / f"crps_by_{strat_name}.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", label_col, "n", "mean_crps", "crpss"])
            for strategy in sorted(table):
                for label in sorted(table[strategy], key=lambda s: (len(s), s) if strat_name == "lead" else s):
                    stat = table[strategy][label]
                    w.writerow(
                        [
                            strategy,
                            label,
                            stat.count,
                            eio.fmt_float(stat.mean_crps),
                            "" if stat.crpss is None else eio.fmt_float(stat.crpss),
                        ]
                    )


def cmd_verify(args) -> int:
    import csv

    cfg = eio.parse_config(args.config)
    data_dir = Path(args.data)
    stations, observations, forecasts = _load_data(cfg, data_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reference = args.reference or cfg.get("reference") or _strategies(cfg)[0]
    pit_bins = _cfg_int(cfg, "verify.pit_bins", 20)
    alpha = _cfg_float(cfg, "verify.alpha", 0.05)
    seed = _cfg_int(cfg, "seed", 0)

    prediction_rows: list[eio.PredictionRow] = []
    for path in args.predictions:
        prediction_rows.extend(eio.read_predictions(path))

    gaussian_strategies = sorted({r.strategy for r in prediction_rows})
    raw_strategies = [s for s in _strategies(cfg) if parse_strategy(s)[0] == "raw"]
    if args.strategies:
        wanted = set(args.strategies.split(","))
        gaussian_strategies = [s for s in gaussian_strategies if s in wanted]
        raw_strategies = [s for s in raw_strategies if s in wanted]
    strategies = gaussian_strategies + raw_strategies
    if reference not in strategies:
        print(f"error: reference strategy {reference!r} is not among scored strategies {strategies}", file=sys.stderr)
        return 1

    obs_maps = {sid: series.as_mapping() for sid, series in observations.items()}
    preds: dict[str, dict[tuple[str, datetime, int], eio.PredictionRow]] = {s: {} for s in gaussian_strategies}
    for r in prediction_rows:
        if r.strategy in preds:
            preds[r.strategy][(r.station_id, r.init_time, r.lead_time)] = r
    ensembles: dict[str, dict[tuple[str, datetime, int], EnsembleForecast]] = {}
    for raw in raw_strategies:
        model = parse_strategy(raw)[1][0]
        ensembles[raw] = {(fc.station_id, fc.init_time, fc.lead_time): fc for fc in forecasts.get(model, [])}

    # Common aligned case set: observation present plus every strategy covering the case.
    case_sets = [set(preds[s]) for s in gaussian_strategies] + [set(ensembles[s]) for s in raw_strategies]
    if not case_sets:
        print("error: nothing to verify", file=sys.stderr)
        return 1
    cases = set.intersection(*case_sets)
    cases = sorted(
        c
        for c in cases
        if (y := obs_maps.get(c[0], {}).get(c[1] + timedelta(hours=c[2]))) is not None and math.isfinite(y)
    )
    if not cases:
        print("error: no aligned cases with observations", file=sys.stderr)
        return 1

    valid_times = tuple(init + timedelta(hours=lead) for _, init, lead in cases)
    station_ids = tuple(c[0] for c in cases)
    lead_times = tuple(c[2] for c in cases)
    ys = [obs_maps[c[0]][c[1] + timedelta(hours=c[2])] for c in cases]

    scores: dict[str, ScoreSeries] = {}
    pits: dict[str, list[float]] = {}
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(99,)))
    for strategy in strategies:
        values = []
        pit_list = []
        if strategy in preds:
            table = preds[strategy]
            for c, y in zip(cases, ys):
                pred = table[c].predictive
                values.append(gaussian_crps(pred, y))
                pit_list.append(pit_value(pred, y))
        else:
            table = ensembles[strategy]
            us = rng.random(len(cases))
            for c, y, u in zip(cases, ys, us):
                fc = table[c]
                values.append(ensemble_crps(fc.members, y))
                pit_list.append(randomized_ensemble_pit(fc.members, y, u))
        scores[strategy] = ScoreSeries(
            valid_times=valid_times,
            crps_values=tuple(values),
            station_ids=station_ids,
            lead_times=lead_times,
        )
        pits[strategy] = pit_list

    report = stratified_report(scores, reference)
    _write_report_tables(
        out_dir,
        report,
        {"season": "season", "daynight": "stratum", "lead": "lead_h", "station": "station_id"},
    )

    with (out_dir / "pit_hist.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "strategy"])
        for strategy in strategies:
            hist = pit_histogram(pits[strategy], pit_bins)
            edges = hist.edges
            for i, count in enumerate(hist.counts):
                w.writerow([eio.fmt_float(edges[i]), eio.fmt_float(edges[i + 1]), count, strategy])

    with (out_dir / "dm_matrix.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy_a", "strategy_b", "n", "statistic", "p_value", "conclusion"])
        for i, sa in enumerate(strategies):
            for sb in strategies[i + 1 :]:
                result = diebold_mariano(scores[sa], scores[sb], alpha=alpha)
                w.writerow(
                    [
                        sa,
                        sb,
                        len(cases),
                        eio.fmt_float(result.statistic),
                        eio.fmt_float(result.p_value),
                        result.conclusion.value,
                    ]
                )

    if args.store:
        store = eio.read_store(args.store)
        with (out_dir / "weights.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["station_id", "init_time", "lead_h", "weight_mean", "weight_std"])
            for key, record in store.items():
                if parse_strategy(key.strategy)[0] != "mixed":
                    continue
                wt = model_weights(record.coefficients)
                init_time = datetime(key.issue_date.year, key.issue_date.month, key.issue_date.day, tzinfo=timezone.utc)
                w.writerow(
                    [
                        key.station_id,
                        eio.format_timestamp(init_time),
                        key.lead_time,
                        eio.fmt_float(wt.weight_mean),
                        eio.fmt_float(wt.weight_std),
                    ]
                )

    seam_raw = cfg.get("verify.seam_window", "")
    if seam_raw:
        lo, hi = (int(v) for v in seam_raw.replace("-", ",").split(",")[:2])
        window = list(range(lo, hi + 1))
        with (out_dir / "seam_diagnostics.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "lead_h", "mu_step", "sigma_step", "mean_crps"])
            for strategy in gaussian_strategies:
                series = {}
                obs_per_case = {}
                for (sid, init, lead), row in preds[strategy].items():
                    if lo <= lead <= hi:
                        series.setdefault((sid, init), {})[lead] = row.predictive
                complete = {}
                for case, table in sorted(series.items()):
                    obs_vals = {
                        lead: obs_maps.get(case[0], {}).get(case[1] + timedelta(hours=lead)) for lead in window
                    }
                    if all(lead in table for lead in window) and all(v is not None for v in obs_vals.values()):
                        complete[case] = table
                        obs_per_case[case] = obs_vals
                if not complete:
                    continue
                diag = seam_diagnostics(complete, obs_per_case, window)
                for lead in window:
                    w.writerow(
                        [
                            strategy,
                            lead,
                            "" if lead not in diag.mu_steps else eio.fmt_float(diag.mu_steps[lead]),
                            "" if lead not in diag.sigma_steps else eio.fmt_float(diag.sigma_steps[lead]),
                            eio.fmt_float(diag.mean_crps[lead]),
                        ]
                    )

    print(f"verified {len(cases)} cases x {len(strategies)} strategies -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# tpi
# ---------------------------------------------------------------------------


def cmd_tpi(args) -> int:
    import csv

    grid = read_esri_ascii(args.grid)
    stations = eio.read_stations(args.stations)
    failures = 0
    with Path(args.out).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "tpi_m"])
        for station in sorted(stations, key=lambda s: s.station_id):
            try:
                value = tpi_at_station(grid, station)
            except ValueError as err:
                print(f"error: {station.station_id}: {err}", file=sys.stderr)
                failures += 1
                continue
            w.writerow([station.station_id, eio.fmt_float(value)])
    print(f"wrote TPI for {len(stations) - failures}/{len(stations)} stations -> {args.out}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", required=True, help="flat key = value config file")


def _date_arg(raw):
    return date.fromisoformat(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emoskit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    _add_common(p)
    p.add_argument("--out", required=True, help="output data directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit coefficients over all issue dates")
    _add_common(p)
    p.add_argument("--data", required=True, help="data directory from simulate")
    p.add_argument("--store", required=True, help="coefficient store output path")
    p.add_argument("--scheme", choices=["none", "t1", "t2"], default=None, help="transition scheme")
    p.add_argument("--issue-start", type=_date_arg, default=None)
    p.add_argument("--issue-end", type=_date_arg, default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel fit slots")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="apply a coefficient store")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True, help="predictions.csv output path")
    p.add_argument("--issue-start", type=_date_arg, default=None)
    p.add_argument("--issue-end", type=_date_arg, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("transition", help="assemble the seam product across the horizon")
    _add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scheme", choices=["none", "t1", "t2"], default=None)
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("verify", help="score predictions and write report tables")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--predictions", nargs="+", required=True, help="one or more predictions.csv files")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--reference", default=None, help="reference strategy for CRPSS")
    p.add_argument("--strategies", default=None, help="comma-separated subset of strategies to score")
    p.add_argument("--store", default=None, help="coefficient store for the weight time series")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tpi", help="topographic position index per station")
    p.add_argument("--grid", required=True, help="ESRI ASCII elevation grid")
    p.add_argument("--stations", required=True, help="stations.csv")
    p.add_argument("--out", required=True, help="TPI csv output")
    p.set_defaults(func=cmd_tpi)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except (eio.SchemaError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
