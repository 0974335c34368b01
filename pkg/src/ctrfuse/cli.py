"""Command-line entry point: synth, train, evaluate and sweep.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

import argparse
import dataclasses
import glob as globmod
import sys
from pathlib import Path

import numpy as np

from .combined import CombinedModel
from .configfile import (
    ConfigError,
    get_float,
    get_float_list,
    get_int,
    get_int_list,
    get_list,
    get_str,
    read_config,
)
from .core import Hyperparameters, OptimizerSettings
from .ingest import (
    DatasetDay,
    RawEvent,
    Vocabularies,
    Vocabulary,
    build_vocabularies,
    downsample_day,
    encode,
    partition_days,
    read_log,
)
from .metrics import per_banner_daily, relative_report, write_metrics_csv, write_summary_csv
from .modelfile import ModelBundle, ModelFormatError, load_model, save_model
from .numerics import NumericalError
from .pipeline import SweepGrids, default_grids, score_day, staged_sweep, train_family, write_sweep_csv
from .synth import GeneratorConfig, generate, write_tsv


class UsageError(ValueError):
    pass


class DataError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want exit 1
        raise UsageError(message)


SYNTH_KEYS = {
    "banners", "domains", "k_true", "latent_scale", "bias_scale", "side_features",
    "side_density", "side_scale", "intercept", "days", "events_per_day",
    "features_per_event", "skew", "seed",
}
HYPER_KEYS = {
    "family", "k", "lambda_lr", "lambda_bias", "lambda_latent", "penalty",
    "alternations", "step_size", "epochs", "batch_size", "tol", "step_decay", "seed",
}
SCHEMA_KEYS = {"attributes", "cross", "indicators", "min_count", "top_k", "neg_downsample"}
SWEEP_KEYS = HYPER_KEYS | {
    "lambda_lr_grid", "lambda_bias_grid", "lambda_latent_grid", "k_grid",
    "window", "neg_downsample",
}


def _synth_config(path) -> GeneratorConfig:
    cfg = read_config(path, SYNTH_KEYS)
    return GeneratorConfig(
        n_banners=get_int(cfg, "banners", 50),
        n_domains=get_int(cfg, "domains", 30),
        true_order=get_int(cfg, "k_true", 3),
        latent_scale=get_float(cfg, "latent_scale", 1.0),
        bias_scale=get_float(cfg, "bias_scale", 0.3),
        side_features=get_int(cfg, "side_features", 100),
        side_density=get_float(cfg, "side_density", 0.5),
        side_scale=get_float(cfg, "side_scale", 0.5),
        intercept=get_float(cfg, "intercept", -3.0),
        days=get_int(cfg, "days", 8),
        events_per_day=get_int(cfg, "events_per_day", 10000),
        features_per_event=get_int(cfg, "features_per_event", 4),
        popularity_skew=get_float(cfg, "skew", 1.1),
        seed=get_int(cfg, "seed", 0),
    )


def _optimizer_from(cfg: dict, seed_override: int | None) -> OptimizerSettings:
    batch_raw = get_str(cfg, "batch_size", "256")
    batch = None if batch_raw in ("full", "none") else int(batch_raw)
    seed = seed_override if seed_override is not None else get_int(cfg, "seed", 0)
    return OptimizerSettings(
        step_size=get_float(cfg, "step_size", 0.5),
        epochs=get_int(cfg, "epochs", 200),
        batch_size=batch,
        tol=get_float(cfg, "tol", 1e-8),
        step_decay=get_float(cfg, "step_decay", 0.05),
        seed=seed,
    )


def _hyper_config(path, seed_override: int | None) -> tuple[Hyperparameters, str]:
    cfg = read_config(path, HYPER_KEYS) if path else {}
    order = get_int(cfg, "k", 0)
    family = get_str(cfg, "family", "lr" if "k" not in cfg else "lr+lfl")
    hyper = Hyperparameters(
        lambda_lr=get_float(cfg, "lambda_lr", 4.0),
        lambda_bias=get_float(cfg, "lambda_bias", 3.0),
        lambda_latent=get_float(cfg, "lambda_latent", 1.0),
        latent_penalty=get_str(cfg, "penalty", "l2"),
        order=order,
        alternations=get_int(cfg, "alternations", 7),
        optimizer=_optimizer_from(cfg, seed_override),
    )
    return hyper, family


def _schema_config(path):
    cfg = read_config(path, SCHEMA_KEYS) if path else {}
    indicators = tuple(get_list(cfg, "indicators"))
    bad = set(indicators) - {"banner", "domain"}
    if bad:
        raise ConfigError(f"indicators must name banner/domain, got {sorted(bad)}")
    return {
        "attributes": get_list(cfg, "attributes"),
        "cross": tuple(get_list(cfg, "cross")),
        "indicators": indicators,
        "min_count": get_int(cfg, "min_count", 1),
        "top_k": get_int(cfg, "top_k", 0) or None,
        "neg_downsample": get_float(cfg, "neg_downsample", 1.0),
    }


def _load_raw_events(pattern: str) -> list[RawEvent]:
    paths = sorted(globmod.glob(pattern))
    if not paths:
        raise DataError(f"no input files match {pattern!r}")
    events: list[RawEvent] = []
    malformed = 0
    for path in paths:
        parsed, bad = read_log(path)
        events.extend(parsed)
        malformed += bad
    if malformed:
        print(f"skipped {malformed} malformed lines", file=sys.stderr)
    if not events:
        raise DataError(f"no events found in files matching {pattern!r}")
    return events


def _filter_attributes(events: list[RawEvent], attributes: list[str]) -> list[RawEvent]:
    if not attributes or attributes == ["*"]:
        return events
    keep = set(attributes)
    return [
        dataclasses.replace(ev, attrs=tuple(a for a in ev.attrs if a[0] in keep))
        for ev in events
    ]


def _unfreeze(vocabs: Vocabularies) -> Vocabularies:
    return Vocabularies(
        Vocabulary(vocabs.banners.keys()),
        Vocabulary(vocabs.domains.keys()),
        Vocabulary(vocabs.features.keys()),
    )


def cmd_synth(args) -> int:
    config = _synth_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    days, truth = generate(config)
    for day in days:
        write_tsv(day, outdir / f"day_{day.day:02d}.tsv")
    vocabs = Vocabularies(
        Vocabulary(f"b{i}" for i in range(config.n_banners)),
        Vocabulary(f"d{j}" for j in range(config.n_domains)),
        Vocabulary(f"f{k}" for k in range(config.side_features)),
    ).freeze()
    hyper = Hyperparameters(order=config.true_order)
    save_model(outdir / "truth.model", ModelBundle(truth, hyper, vocabs, "lr+lfl"))
    print(f"wrote {len(days)} day files and truth.model to {outdir}")
    return 0


def cmd_train(args) -> int:
    hyper, family = _hyper_config(args.hyper, args.seed)
    schema = _schema_config(args.schema)
    raws = _filter_attributes(_load_raw_events(args.data), schema["attributes"])

    init_model: CombinedModel | None = None
    if args.warm_start:
        bundle = load_model(args.warm_start)
        if bundle.vocabs is None:
            raise DataError(f"{args.warm_start}: warm-start model carries no vocabularies")
        if bundle.model.order != hyper.order or bundle.family != family:
            raise DataError(
                f"{args.warm_start}: warm-start family/order "
                f"({bundle.family}, K={bundle.model.order}) does not match "
                f"the requested ({family}, K={hyper.order})"
            )
        vocabs = _unfreeze(bundle.vocabs)
        crosses = bundle.crosses
        indicators = bundle.indicators
        init_model = bundle.model
    else:
        crosses = schema["cross"]
        indicators = schema["indicators"]
        vocabs = build_vocabularies(
            raws, crosses, min_count=schema["min_count"], top_k=schema["top_k"],
            indicators=indicators,
        )
    records = encode(raws, vocabs, crosses, indicators)
    vocabs.freeze()

    day_index = max(ev.day for ev in records)
    data = DatasetDay.from_events(day_index, records)
    if schema["neg_downsample"] > 1:
        seed = hyper.optimizer.seed
        data = downsample_day(data, schema["neg_downsample"], seed)
    model = train_family(data, hyper, family, init=init_model)
    save_model(
        args.out,
        ModelBundle(model, hyper, vocabs, family, tuple(crosses), tuple(indicators)),
    )
    print(
        f"trained {family} (K={hyper.order}) on {len(records)} events; "
        f"alternations_run={model.info.alternations_run}; wrote {args.out}"
    )
    return 0


def _score_reports(bundle: ModelBundle, days, min_clicks_list):
    day_sets = {day.day: score_day(bundle.model, day) for day in days}
    return {mc: per_banner_daily(day_sets, mc) for mc in min_clicks_list}


def cmd_evaluate(args) -> int:
    bundle = load_model(args.model)
    if bundle.vocabs is None:
        raise DataError(f"{args.model}: model carries no vocabularies; cannot encode logs")
    raws = _load_raw_events(args.data)
    records = encode(raws, bundle.vocabs, bundle.crosses, bundle.indicators)
    days = partition_days(records)
    min_clicks_list = sorted({int(v) for v in args.min_clicks.split(",")})

    reports = _score_reports(bundle, days, min_clicks_list)
    if args.baseline:
        base_bundle = load_model(args.baseline)
        if base_bundle.vocabs is None:
            raise DataError(f"{args.baseline}: baseline model carries no vocabularies")
        base_records = encode(
            raws, base_bundle.vocabs, base_bundle.crosses, base_bundle.indicators
        )
        base_days = partition_days(base_records)
        base_reports = _score_reports(base_bundle, base_days, min_clicks_list)
        reports = {
            mc: relative_report(reports[mc], base_reports[mc]) for mc in min_clicks_list
        }

    out = Path(args.out)
    model_id = Path(args.model).stem
    banner_names = {i: name for i, name in enumerate(bundle.vocabs.banners.keys())}
    write_metrics_csv(out, reports[min_clicks_list[0]], model_id, banner_names)
    summary_path = out.with_name(out.stem + "_summary" + out.suffix)
    write_summary_csv(summary_path, reports, model_id, seed=args.seed or 0)
    print(f"wrote {out} and {summary_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = read_config(args.config, SWEEP_KEYS) if args.config else {}
    schema = _schema_config(args.schema)
    raws = _filter_attributes(_load_raw_events(args.data), schema["attributes"])
    vocabs = build_vocabularies(
        raws, schema["cross"], min_count=schema["min_count"], top_k=schema["top_k"],
        indicators=schema["indicators"],
    )
    records = encode(raws, vocabs, schema["cross"], schema["indicators"])
    vocabs.freeze()
    days = partition_days(records)

    defaults = default_grids()
    grids = SweepGrids(
        lambda_lr=tuple(get_float_list(cfg, "lambda_lr_grid") or defaults.lambda_lr),
        lambda_bias=tuple(get_float_list(cfg, "lambda_bias_grid") or defaults.lambda_bias),
        lambda_latent=tuple(get_float_list(cfg, "lambda_latent_grid") or defaults.lambda_latent),
        orders=tuple(get_int_list(cfg, "k_grid") or defaults.orders),
    )
    hyper = Hyperparameters(
        latent_penalty=get_str(cfg, "penalty", "l2"),
        alternations=get_int(cfg, "alternations", 7),
        optimizer=_optimizer_from(cfg, args.seed),
    )
    outcome = staged_sweep(
        days,
        grids,
        hyper=hyper,
        window=get_int(cfg, "window", 7),
        neg_downsample=get_float(cfg, "neg_downsample", 1.0),
        seed=args.seed or 0,
        n_jobs=args.threads,
    )
    write_sweep_csv(args.out, outcome)
    best = outcome.best
    print(
        f"sweep finished: best K={best.order} lambda_lr={best.lambda_lr} "
        f"lambda_bias={best.lambda_bias} lambda_latent={best.lambda_latent}; "
        f"wrote {args.out}"
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ctrfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic event logs")
    p_synth.add_argument("--config", required=True, help="generator config file")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a model on event logs")
    p_train.add_argument("--data", required=True, help="glob of TSV log files")
    p_train.add_argument("--schema", default=None, help="schema config file")
    p_train.add_argument("--hyper", default=None, help="hyperparameter config file")
    p_train.add_argument("--warm-start", default=None, help="model file to warm start from")
    p_train.add_argument("--out", required=True, help="output model path")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a model on held-out logs")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data", required=True, help="glob of test TSV files")
    p_eval.add_argument("--min-clicks", default="1,10", help="comma list of click filters")
    p_eval.add_argument("--baseline", default=None, help="baseline model for deltas")
    p_eval.add_argument("--out", required=True, help="metrics CSV path")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="staged hyperparameter sweep")
    p_sweep.add_argument("--data", required=True, help="glob of TSV log files")
    p_sweep.add_argument("--schema", default=None)
    p_sweep.add_argument("--config", default=None, help="grids config file")
    p_sweep.add_argument("--out", required=True, help="sweep results CSV path")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ModelFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
