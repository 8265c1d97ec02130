"""Command-line entry point.

Every subcommand reads a JSON config (``--config``) merged with flags (flags
win), writes its artifacts under ``--out`` together with a
``manifest-<command>.json`` and exits with 0 on success, 2 on invalid input,
3 on runtime failures such as divergence and 4 on I/O errors. Failures print
one JSON line to stderr.

Inputs default to the conventional file names inside ``--out``, so a chain
of commands sharing one output directory needs no path flags::

    forumcast synth --out run
    forumcast train-scorer --out run
    forumcast score --out run
    forumcast index --out run
    forumcast gct --out run
    forumcast train --out run
    forumcast evaluate --out run
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import matplotlib
import numpy as np

from . import __version__, reports, synth
from .corpus import TRUTH_PREFIX, load_labeled, load_market, load_posts, split_chronological
from .errors import DivergenceError, ForumcastError, SingularDesignError, ValidationError
from .evaluation import (
    ABLATION_ROWS,
    DEFAULT_SENTIMENT,
    RegressionReport,
    build_dataset,
    fit_model,
    predict_series,
    run_ablation,
)
from .index import FIELDS, VARIANTS, load_sentiment_table, write_sentiment_table
from .net import ForecastModel, TrainConfig
from .pipeline import index_series
from .scorer import (
    ClassifierModel,
    ScorerHyper,
    classification_report,
    confusion_matrix,
    join_external_scores,
    load_external_scores,
    predict_labels,
    score_posts,
    train_classifier,
    write_scores,
)
from .stats import adf_test, granger_table, roc

logger = logging.getLogger("forumcast")

COMMANDS = ("synth", "train-scorer", "score", "index", "gct", "train", "predict", "evaluate", "ablate")

# conventional file names inside the output directory
FILES = {
    "posts": synth.POSTS_FILE,
    "market": synth.MARKET_FILE,
    "labeled": synth.LABELED_FILE,
    "scorer_model": "scorer.json",
    "scores": "scores.csv",
    "sentiment": "sentiment.csv",
    "model": "model.json",
}

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


class UsageError(ValidationError):
    """Bad command line."""


@dataclass
class RunConfig:
    out: str = "."
    seed: int = 0
    posts: str | None = None
    market: str | None = None
    labeled: str | None = None
    scores: str | None = None
    scorer_model: str | None = None
    sentiment: str | None = None
    model: str | None = None
    stock: str | None = None
    window: int | None = None
    windows: list = field(default_factory=lambda: [7, 15, 30])
    seeds: list | None = None
    features: list | None = None
    index_variant: str | None = None
    index_field: str | None = None
    lags: list = field(default_factory=lambda: [1, 2, 3])
    split: float | None = None
    jobs: int = 1
    scorer: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"invalid config: unknown fields {unknown}")
        cfg = cls(**d)
        cfg.check()
        return cfg

    def check(self) -> None:
        bad = []
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            bad.append("seed")
        if self.window is not None and (not isinstance(self.window, int) or self.window < 1):
            bad.append("window")
        if not self.windows or any(not isinstance(w, int) or w < 1 for w in self.windows):
            bad.append("windows")
        if self.seeds is not None and (not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds)):
            bad.append("seeds")
        if self.index_variant is not None and self.index_variant not in VARIANTS:
            bad.append("index_variant")
        if self.index_field is not None and self.index_field not in FIELDS:
            bad.append("index_field")
        if not self.lags or any(not isinstance(k, int) or k < 1 for k in self.lags):
            bad.append("lags")
        if self.split is not None and (not isinstance(self.split, (int, float)) or not 0 < self.split < 1):
            bad.append("split")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            bad.append("jobs")
        for name in ("scorer", "train", "synth"):
            if not isinstance(getattr(self, name), dict):
                bad.append(name)
        if bad:
            raise ValidationError(f"invalid config fields: {bad}")

    def path(self, key: str) -> Path:
        value = getattr(self, key)
        return Path(value) if value else Path(self.out) / FILES[key]

    def sentiment_names(self, default=None) -> list[str]:
        """Sentiment series picked by --features, else by --index-variant/--field."""
        if self.features is not None:
            return [f for f in self.features if f != "none"]
        if self.index_variant is None and self.index_field is None and default is not None:
            return list(default)
        variants = [self.index_variant] if self.index_variant else list(VARIANTS)
        flds = [self.index_field] if self.index_field else list(FIELDS)
        return [f"{v}_{f}" for v in variants for f in flds]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="forumcast", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"forumcast {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (also the default input location)")
    common.add_argument("--verbose", "-v", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--posts")
    data.add_argument("--market")
    data.add_argument("--stock", help="stock id when the posts file holds several")

    select = _Parser(add_help=False)
    select.add_argument("--features", type=_name_list, help="sentiment series, e.g. pop_title,pop_body or none")
    select.add_argument("--index-variant", dest="index_variant", choices=VARIANTS)
    select.add_argument("--field", dest="index_field", choices=FIELDS)

    model = _Parser(add_help=False)
    model.add_argument("--sentiment", help="sentiment table written by the index command")
    model.add_argument("--window", type=int)
    model.add_argument("--split", type=float)
    model.add_argument("--hidden", type=int)
    model.add_argument("--layers", type=int)
    model.add_argument("--max-epochs", dest="max_epochs", type=int)
    model.add_argument("--patience", type=int)
    model.add_argument("--batch", type=int)
    model.add_argument("--lr", type=float)
    model.add_argument("--dropout", type=float)
    model.add_argument("--no-highway", dest="highway", action="store_false", default=None)

    p = sub.add_parser("synth", parents=[common], help="generate a sentiment-coupled forum and market")
    p.add_argument("--days", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--phi", type=float)

    p = sub.add_parser("train-scorer", parents=[common], help="fit the post sentiment classifier")
    p.add_argument("--labeled")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("score", parents=[common, data], help="score post titles and bodies")
    p.add_argument("--scorer-model", dest="scorer_model")
    p.add_argument("--scores", help="external post_id,title_score,body_score file instead of the classifier")

    p = sub.add_parser("index", parents=[common, data, select], help="daily sentiment indices")
    p.add_argument("--scores")

    p = sub.add_parser("gct", parents=[common, select], help="ADF and Granger causality tables")
    p.add_argument("--market")
    p.add_argument("--sentiment")
    p.add_argument("--stock")
    p.add_argument("--lags", type=_int_list)

    p = sub.add_parser("train", parents=[common, select, model], help="train the forecaster")
    p.add_argument("--market")
    p.add_argument("--stock")
    p.add_argument("--model", help="checkpoint path to write")

    for name, text in (("predict", "forecast the test period"), ("evaluate", "forecast, score and plot")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--market")
        p.add_argument("--stock")
        p.add_argument("--sentiment")
        p.add_argument("--model")
        p.add_argument("--window", type=int)
        p.add_argument("--split", type=float)

    p = sub.add_parser("ablate", parents=[common, select, model], help="four-way ablation table")
    p.add_argument("--market")
    p.add_argument("--stock")
    p.add_argument("--windows", type=_int_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--jobs", type=int)
    return parser


_TRAIN_FLAGS = ("hidden", "layers", "max_epochs", "patience", "batch", "lr", "dropout", "highway")
_SYNTH_FLAGS = ("days", "beta", "phi")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
    cfg = RunConfig.from_dict(doc)
    known = {f.name for f in fields(RunConfig)}
    for key, value in vars(args).items():
        if value is None or key in ("config", "command", "verbose"):
            continue
        if key in _TRAIN_FLAGS:
            cfg.train[key] = value
        elif key in _SYNTH_FLAGS:
            cfg.synth[key] = value
        elif key == "epochs":
            cfg.scorer["epochs"] = value
        elif key in known:
            setattr(cfg, key, value)
    cfg.check()
    return cfg


def _require(*paths: Path) -> None:
    for p in paths:
        if p.name.startswith(TRUTH_PREFIX):
            raise ValidationError(f"{p}: ground-truth files are not valid inputs")
        if not p.is_file():
            raise ValidationError(f"input file not found: {p}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects inputs and outputs of one command for its manifest."""

    def __init__(self, command: str, cfg: RunConfig, argv: list[str]):
        self.command = command
        self.cfg = cfg
        self.argv = argv
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.notes: dict = {}
        self.started = datetime.now(timezone.utc)

    def use(self, *paths: Path) -> None:
        _require(*paths)
        for p in paths:
            self.inputs[str(p)] = _sha256(p)

    def file(self, name: str) -> Path:
        path = self.out / name
        self.outputs.append(name)
        return path

    def figure(self, written) -> None:
        if written is not None:
            self.outputs.append(Path(written).name)

    def write_manifest(self) -> Path:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "config": asdict(self.cfg),
            "seed": self.cfg.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "notes": self.notes,
            "versions": {
                "forumcast": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "matplotlib": matplotlib.__version__,
            },
            "started_at": self.started.isoformat(timespec="seconds"),
            "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        path = self.out / f"manifest-{self.command}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# ---------------------------------------------------------------------------
# data helpers


def _posts_for_stock(run: Run):
    path = run.cfg.path("posts")
    run.use(path)
    posts = load_posts(path)
    run.notes["posts_skipped"] = posts.skipped
    stocks = sorted({p.stock_id for p in posts})
    stock = run.cfg.stock
    if stock is None:
        if len(stocks) > 1:
            raise ValidationError(f"posts cover several stocks {stocks}; pass --stock")
        stock = stocks[0] if stocks else None
    return [p for p in posts if p.stock_id == stock], stock


def _market(run: Run, stock: str | None = None):
    path = run.cfg.path("market")
    run.use(path)
    return load_market(path, stock_id=stock or run.cfg.stock)


def _dataset(run: Run, names: list[str]):
    market = _market(run)
    sentiment = {}
    if names:
        path = run.cfg.path("sentiment")
        run.use(path)
        table = load_sentiment_table(path)
        missing = [n for n in names if n not in table]
        if missing:
            raise ValidationError(f"{path}: no sentiment series {missing}; available {sorted(table)}")
        sentiment = {n: table[n] for n in names}
    return build_dataset(market, sentiment)


def _options(cls, values: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValidationError(f"invalid {what} config fields: {unknown}")
    return cls(**values)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return _options(TrainConfig, {**cfg.train, "seed": cfg.seed}, "train")


def _sentiment_of(feature_names) -> list[str]:
    return [n[len("sent:"):] for n in feature_names if n.startswith("sent:")]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(run: Run) -> None:
    params = _options(synth.SynthParams, {**run.cfg.synth, "seed": run.cfg.seed}, "synth")
    data = synth.generate(params)
    paths = synth.write(data, run.out)
    run.outputs.extend(Path(paths[k]).name for k in ("posts", "market", "labeled", "truth"))
    run.notes["synth"] = paths["params"]


def cmd_train_scorer(run: Run) -> None:
    path = run.cfg.path("labeled")
    run.use(path)
    corpus = load_labeled(path)
    fit_part, held_out = split_chronological(corpus, 0.8)
    hyper = _options(ScorerHyper, {**run.cfg.scorer, "seed": run.cfg.seed}, "scorer")
    model, losses = train_classifier(fit_part, hyper)
    model.save(run.file(FILES["scorer_model"]))
    reports.write_csv(run.file("scorer_loss.csv"), ["epoch", "loss"], enumerate(losses))
    actual = [item.label for item in held_out]
    predicted = predict_labels(model, [item.text for item in held_out])
    rep = classification_report(predicted, actual)
    reports.write_csv(
        run.file("scorer_report.csv"),
        ["metric", "value"],
        [("accuracy", rep.accuracy), ("precision", rep.precision), ("recall", rep.recall), ("f1", rep.f1),
         ("n_train", len(fit_part)), ("n_test", len(held_out))],
    )
    cm = confusion_matrix(predicted, actual)
    reports.write_csv(
        run.file("scorer_confusion.csv"),
        ["actual", "pred_-1", "pred_0", "pred_1"],
        [(c, *cm[i].tolist()) for i, c in enumerate((-1, 0, 1))],
    )


def cmd_score(run: Run) -> None:
    posts, _ = _posts_for_stock(run)
    if run.cfg.scores:
        path = Path(run.cfg.scores)
        run.use(path)
        scored = join_external_scores(posts, load_external_scores(path))
        run.notes["scorer"] = "external"
    else:
        path = run.cfg.path("scorer_model")
        run.use(path)
        scored = score_posts(ClassifierModel.load(path), posts)
        run.notes["scorer"] = "classifier"
    write_scores(scored, run.file(FILES["scores"]))


def cmd_index(run: Run) -> None:
    posts, stock = _posts_for_stock(run)
    market = _market(run, stock)
    path = run.cfg.path("scores")
    run.use(path)
    scored = join_external_scores(posts, load_external_scores(path))
    series = index_series(posts, scored, market)
    ordered = [series[f"{v}_{f}"] for v in VARIANTS for f in FIELDS]
    write_sentiment_table(ordered, run.file(FILES["sentiment"]))
    for s in ordered:
        s.write_csv(run.file(f"index_{s.name}.csv"))
    reports.write_csv(
        run.file("index_summary.csv"),
        ["series", "days", "floor_hits", "stats_scope"],
        [(s.name, len(s.dates), s.floor_hits, s.stats_scope) for s in ordered],
    )
    shown = run.cfg.sentiment_names(default=[s.name for s in ordered])
    unknown = [n for n in shown if n not in series]
    if unknown:
        raise ValidationError(f"unknown sentiment series {unknown}")
    run.figure(reports.plot_series(run.out / "index.svg", ordered[0].dates,
                                   {n: series[n].values for n in shown}, title=f"{market.stock_id} sentiment"))


def cmd_gct(run: Run) -> None:
    market = _market(run)
    path = run.cfg.path("sentiment")
    run.use(path)
    table = load_sentiment_table(path)
    names = run.cfg.sentiment_names(default=list(table))
    missing = [n for n in names if n not in table]
    if missing:
        raise ValidationError(f"{path}: no sentiment series {missing}")
    r = roc(market.close)
    roc_dates = market.dates[1:]
    adf_rows = []
    for name, values in [("ROC", r)] + [(n, table[n][1]) for n in names]:
        res = adf_test(values)
        adf_rows.append((name, res.t_statistic, res.lag_used, res.n_obs, res.stars))
    reports.write_csv(run.file("adf.csv"), ["variable", "t_statistic", "lag", "n_obs", "stars"], adf_rows)
    rows = granger_table(market.stock_id, roc_dates, r, {n: table[n] for n in names}, tuple(run.cfg.lags))
    reports.write_dict_rows(run.file("gct.csv"), rows, ["stock", "variable", "direction", "lag", "F", "p", "stars"])


def cmd_train(run: Run) -> None:
    names = run.cfg.sentiment_names(default=DEFAULT_SENTIMENT)
    ds = _dataset(run, names)
    window = run.cfg.window or 7
    model, hist, n_train = fit_model(ds, _train_config(run.cfg), window, names, run.cfg.split or 0.8)
    out = Path(run.cfg.model) if run.cfg.model else run.out / FILES["model"]
    model.save(out)
    run.outputs.append(str(out))
    reports.write_csv(
        run.file("train_history.csv"),
        ["epoch", "train_loss", "val_loss"],
        [(k + 1, t, v) for k, (t, v) in enumerate(zip(hist.train_loss, hist.val_loss))],
    )
    run.notes.update(best_epoch=hist.best_epoch, stopped_epoch=hist.stopped_epoch, n_train_rows=n_train)


def _forecast(run: Run):
    path = run.cfg.path("model")
    run.use(path)
    model = ForecastModel.load(path)
    ds = _dataset(run, _sentiment_of(model.feature_names))
    window = run.cfg.window or int(model.meta.get("window", 7))
    split = run.cfg.split or float(model.meta.get("split", 0.8))
    rows = np.arange(len(ds.dates))
    train_rows, _ = split_chronological(rows, split)
    targets = list(range(train_rows.size, len(ds.dates)))
    pred = predict_series(model, ds.select(model.feature_names), ds.dates, targets, window)
    dates = ds.dates[train_rows.size:]
    actual = ds.close[train_rows.size:]
    run.notes.update(window=window, split=split, n_test=len(targets))
    return ds, dates, actual, pred


def _write_predictions(run: Run, dates, actual, pred):
    rpe = 100.0 * (pred - actual) / actual if len(dates) else np.zeros(0)
    reports.write_predictions(run.file("predictions.csv"), dates, actual, pred, rpe)
    return rpe


def cmd_predict(run: Run) -> None:
    _, dates, actual, pred = _forecast(run)
    _write_predictions(run, dates, actual, pred)


def cmd_evaluate(run: Run) -> None:
    ds, dates, actual, pred = _forecast(run)
    rpe = _write_predictions(run, dates, actual, pred)
    if len(dates) < 2:
        logger.warning("fewer than two test predictions; metrics and figures skipped")
        return
    rep = RegressionReport.build(dates, actual, pred)
    reports.write_csv(
        run.file("metrics.csv"),
        ["metric", "value"],
        [("rmse", rep.rmse), ("mape", rep.mape), ("r2", rep.r2),
         ("aose_over", rep.aose_over), ("aose_under", rep.aose_under), ("n", len(dates))],
    )
    run.figure(reports.plot_predictions(run.out / "predictions.svg", dates, actual, pred, title=ds.stock_id))
    run.figure(reports.plot_rpe(run.out / "rpe.svg", dates, rpe, title=ds.stock_id))


def cmd_ablate(run: Run) -> None:
    names = run.cfg.sentiment_names(default=DEFAULT_SENTIMENT)
    if not names:
        raise ValidationError("ablation needs at least one sentiment series")
    ds = _dataset(run, names)
    seeds = run.cfg.seeds or [run.cfg.seed]
    table = run_ablation(ds, _train_config(run.cfg), tuple(run.cfg.windows), tuple(seeds), names,
                         ABLATION_ROWS, jobs=run.cfg.jobs)
    header = ["model"] + [f"{m}_ratio_w{w}" for w in table.windows for m in ("rmse", "mape", "r2")]
    reports.write_csv(
        run.file("ablation.csv"),
        header,
        [[row] + [table.ratio(row, w, m) for w in table.windows for m in ("rmse", "mape", "r2")]
         for row in table.metrics],
    )
    raw = table.rows()
    reports.write_dict_rows(run.file("ablation_metrics.csv"), raw)
    run.figure(reports.plot_ablation(run.out / "ablation.svg", table))
    for w in table.windows:
        errs = {row: table.abs_errors[row][w] for row in table.metrics}
        run.figure(reports.plot_abs_errors(run.out / f"abs_errors_w{w}.svg", errs, title=f"window {w}"))


HANDLERS = {
    "synth": cmd_synth,
    "train-scorer": cmd_train_scorer,
    "score": cmd_score,
    "index": cmd_index,
    "gct": cmd_gct,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ValidationError, SingularDesignError)):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_RUNTIME


def _fail(exc: BaseException) -> int:
    code = exit_code(exc)
    line = {"error": type(exc).__name__, "exit": code, "message": str(exc).replace("\n", " ")}
    if isinstance(exc, SingularDesignError) and exc.column is not None:
        line["column"] = exc.column
    if isinstance(exc, DivergenceError) and exc.epoch is not None:
        line["epoch"] = exc.epoch
    print(json.dumps(line, ensure_ascii=False), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        run = Run(args.command, cfg, argv)
        HANDLERS[args.command](run)
        run.write_manifest()
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    except (ForumcastError, OSError, ValueError, ArithmeticError) as exc:
        return _fail(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
