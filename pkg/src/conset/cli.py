"""Command line interface: ``conset <subcommand> ...``.

Subcommands: simulate, summarize, fit, cv, explain, cluster. Analysis
subcommands read a survey CSV (``--input``) plus an analysis config
(``--config``) holding ``options``, ``scheme`` and optionally ``min_count``,
``drop_policy`` and ``sets`` (an explicit list of non-singleton set literals
that replaces the frequency threshold); ``simulate`` writes such a config
next to its CSV.

Every output file ``X`` gets a sidecar ``X.meta.json`` with the package
version, seed and a hash of the resolved configuration.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from conset import __version__, iml, multinomial, synth, unsupervised
from conset.core import (
    OptionSpace,
    build_reduced_power_set,
    count_statistics,
    encode_set,
    parse_set_literal,
)
from conset.errors import ConvergenceWarning, DataError
from conset.ingest import BinarizationScheme, assemble_dataset, parse_survey_csv, write_survey_csv

log = logging.getLogger("conset")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


class Run:
    """Output bookkeeping for one subcommand invocation."""

    def __init__(self, args, resolved: dict):
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.seed = args.seed
        blob = json.dumps(resolved, sort_keys=True, default=str).encode()
        self.meta = {
            "version": __version__,
            "subcommand": args.command,
            "seed": args.seed,
            "config_hash": hashlib.sha256(blob).hexdigest(),
            "config": resolved,
        }
        if getattr(args, "input", None):
            self.meta["input_sha256"] = hashlib.sha256(Path(args.input).read_bytes()).hexdigest()

    def path(self, name) -> Path:
        return self.out_dir / name

    def _sidecar(self, path: Path):
        with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump({**self.meta, "file": path.name}, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")

    def write_csv(self, name_or_path, header, rows) -> Path:
        path = Path(name_or_path)
        if not path.is_absolute() and path.parent == Path("."):
            path = self.path(name_or_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self._sidecar(path)
        log.info("wrote %s", path)
        return path

    def write_json(self, name, obj) -> Path:
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        self._sidecar(path)
        log.info("wrote %s", path)
        return path

    def register(self, path: Path):
        self._sidecar(path)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


# --------------------------------------------------------------------------
# config resolution


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _analysis_config(args) -> dict:
    cfg = _load_json(args.config) if args.config else {}
    base = Path(args.config).parent if args.config else Path(".")
    if args.options:
        cfg["options"] = [s.strip() for s in args.options.split(",")]
    if args.scheme:
        cfg["scheme"] = args.scheme
        base = Path(".")
    if args.min_count is not None:
        cfg["min_count"] = args.min_count
    if args.drop_policy:
        cfg["drop_policy"] = args.drop_policy
    if "options" not in cfg:
        raise UsageError("option labels missing: pass --options or a config with 'options'")
    if "scheme" not in cfg:
        raise UsageError("binarization scheme missing: pass --scheme or a config with 'scheme'")
    if isinstance(cfg["scheme"], str):
        cfg["scheme"] = _load_json(base / cfg["scheme"])
    cfg.setdefault("min_count", 1)
    cfg.setdefault("drop_policy", "drop")
    return cfg


def _load_data(args):
    if not args.input:
        raise UsageError("--input is required")
    if not Path(args.input).is_file():
        raise UsageError(f"no such file: {args.input}")
    cfg = _analysis_config(args)
    try:
        options = OptionSpace(tuple(cfg["options"]))
        scheme = BinarizationScheme.from_dict(cfg["scheme"])
        rps = None
        if cfg.get("sets") is not None:
            # a supplied family: all singletons plus exactly these sets
            rps = build_reduced_power_set(
                options, [parse_set_literal(t, options) for t in cfg["sets"]], 1)
    except (ValueError, AttributeError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    table = parse_survey_csv(args.input, options)
    data, report = assemble_dataset(table, scheme, int(cfg["min_count"]), cfg["drop_policy"], rps)
    if report.drops:
        log.warning("dropped %d rows with sets outside the reduced power set", report.drops)
    return cfg, data, report


def _resolved(args, cfg=None, **extra) -> dict:
    out = {k: v for k, v in vars(args).items()
           if k not in ("func", "out_dir", "verbose", "threads", "config", "input", "out")}
    if cfg is not None:
        out["analysis"] = cfg
    out.update(extra)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    if args.config and (Path(args.config).is_file() or not synth.builtin_spec_path(args.config)):
        d = _load_json(args.config)
    else:
        with synth.builtin_spec_path(args.config or "eba_default").open(encoding="utf-8") as fh:
            d = json.load(fh)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.n is not None:
        d["n"] = args.n
    try:
        spec = synth.load_spec(d)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad generator spec: {exc}") from None
    args.seed = spec.seed
    run = Run(args, _resolved(args, spec=spec.to_dict()))
    survey = synth.simulate(spec)

    csv_path = run.path("survey.csv")
    write_survey_csv(csv_path, survey.table.options, survey.table.sets,
                     survey.table.covariates, survey.table.rows)
    run.register(csv_path)
    scheme = survey.scheme.to_dict()
    run.write_json("scheme.json", scheme)
    run.write_json("analysis.json", {
        "options": list(survey.table.options.labels),
        "scheme": "scheme.json",
        "min_count": args.min_count_hint,
        "drop_policy": "drop",
    })
    truth = {"undecided_share": synth.undecided_share(survey), "n": len(survey.table)}
    if isinstance(spec, synth.GenerativeSpec):
        truth["categories"] = spec.rps.literals()
        truth["covariates"] = ["(Intercept)"] + [c.design_name for c in spec.covariates]
        truth["true_beta"] = spec.true_beta
    run.write_json("truth.json", truth)
    print(f"simulated {len(survey.table)} respondents, "
          f"undecided share {truth['undecided_share']:.4f} -> {csv_path}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    cfg, data, report = _load_data(args)
    run = Run(args, _resolved(args, cfg))
    counts = count_statistics(data)
    pi = multinomial.mle_proportions(counts).pi if data.n else np.zeros(data.K)
    lits = data.rps.literals()
    run.write_csv("counts.csv", ["category", "count", "proportion"],
                  zip(lits, counts.counts, pi))
    share = data.undecided_share()
    run.write_json("summary.json", {
        "n": data.n, "K": data.K, "categories": lits, "dropped_rows": report.drops,
        "undecided_share": share,
    })
    print(f"n={data.n} K={data.K} dropped={report.drops} undecided share={share:.4f}")
    return EXIT_OK


def _cv(args, data):
    grid = multinomial.lambda_path(data, args.n_lambda, args.ratio)
    return multinomial.cross_validate(data, grid, args.folds, seed=args.seed,
                                      threads=args.threads, max_iter=args.max_iter, tol=args.tol)


def cmd_fit(args) -> int:
    cfg, data, _ = _load_data(args)
    run = Run(args, _resolved(args, cfg))
    info = {}
    if args.lam in ("1se", "min"):
        cv = _cv(args, data)
        lam = cv.lambda_1se if args.lam == "1se" else cv.lambda_min
        info.update(lambda_min=cv.lambda_min, lambda_1se=cv.lambda_1se)
    else:
        try:
            lam = float(args.lam)
        except ValueError:
            raise UsageError(f"--lambda must be a number, '1se' or 'min', got {args.lam!r}") from None
        if lam < 0:
            raise UsageError("--lambda must be non-negative")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = multinomial.fit_penalized(data, lam, max_iter=args.max_iter, tol=args.tol)
    lits = data.rps.literals()
    run.write_csv("coefficients.csv", ["covariate", *lits],
                  ([name, *model.beta[:, j]] for j, name in enumerate(data.covariate_names)))
    zeroed = [data.covariate_names[j] for j in range(1, data.p) if not np.any(model.beta[:, j])]
    info.update(
        lam=lam, lambda_max=multinomial.lambda_max(data), converged=model.converged,
        n_iter=model.n_iter, separation=model.separation, zeroed_covariates=zeroed,
        objective=model.objective_trace[-1], n=data.n, categories=lits,
    )
    run.write_json("fit.json", info)
    print(f"lambda={lam:.6g} converged={model.converged} zeroed={len(zeroed)}/{data.p - 1}")
    return EXIT_OK if model.converged else EXIT_CONVERGENCE


def cmd_cv(args) -> int:
    cfg, data, _ = _load_data(args)
    run = Run(args, _resolved(args, cfg))
    cv = _cv(args, data)
    run.write_csv("cv_path.csv", ["lambda", "mean_deviance", "se"],
                  zip(cv.lambda_grid, cv.mean_deviance, cv.se))
    run.write_csv("folds.csv", ["row", "fold"], enumerate(cv.fold_assignment))
    run.write_json("cv.json", {"lambda_min": cv.lambda_min, "lambda_1se": cv.lambda_1se,
                               "n_folds": args.folds, "n_lambda": len(cv.lambda_grid)})
    print(f"lambda_min={cv.lambda_min:.6g} lambda_1se={cv.lambda_1se:.6g}")
    return EXIT_OK


def _category(literal, data):
    try:
        s = parse_set_literal(literal, data.options)
    except ValueError as exc:
        raise UsageError(f"bad set literal {literal!r}: {exc}") from None
    q = encode_set(s, data.rps)
    if q is None:
        raise DataError(f"set {literal!r} is not a category of the reduced power set")
    return q


def cmd_explain(args) -> int:
    cfg, data, _ = _load_data(args)
    if not args.positive or not args.negative:
        raise UsageError("--positive and --negative are required")
    run = Run(args, _resolved(args, cfg))
    task = iml.make_binary_task(data, _category(args.positive, data), _category(args.negative, data))
    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(task.n)
    n_test = int(round(args.test_frac * task.n))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    train = task.subset(train_idx)
    model = iml.train_gbm(train, n_trees=args.trees, max_depth=args.depth,
                          learning_rate=args.learning_rate, min_leaf=args.min_leaf,
                          seed=args.seed, class_weight=args.class_weight)

    bg_spec = args.background
    if bg_spec == "train":
        background = train.X
    elif bg_spec.startswith("sample:"):
        try:
            m = int(bg_spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad --background {bg_spec!r}") from None
        m = min(max(m, 1), train.n)
        background = train.X[np.sort(rng.choice(train.n, size=m, replace=False))]
    else:
        raise UsageError("--background must be 'train' or 'sample:N'")

    header, table, base = iml.shap_summary(model, task.X, background)
    table = table.copy()
    table[:, 0] = task.rows
    shap_path = Path(args.out) if args.out else run.path("shap.csv")
    run.write_csv(shap_path, header, ([int(r[0]), *r[1:]] for r in table))
    model_path = run.path("gbm_model.json")
    model.dump(model_path)
    run.register(model_path)
    pfi = iml.permutation_importance(model, train, "log-loss", args.pfi_repeats, args.seed)
    rank = np.argsort(-pfi.mean, kind="stable")
    run.write_csv("importance.csv", ["feature", "mean", "sd"],
                  ([pfi.feature_names[i], pfi.mean[i], pfi.sd[i]] for i in rank))
    F_train = model.decision_function(train.X)
    info = {
        "positive": args.positive, "negative": args.negative,
        "balance": list(task.balance), "n_train": train.n, "n_test": n_test,
        "train_error": iml.error_rate(train.y, F_train),
        "base_value": base,
    }
    if n_test:
        test = task.subset(test_idx)
        info["test_error"] = iml.error_rate(test.y, model.decision_function(test.X))
    run.write_json("explain.json", info)
    print(f"train error {info['train_error']:.4f}"
          + (f", test error {info['test_error']:.4f}" if n_test else ""))
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg, data, report = _load_data(args)
    run = Run(args, _resolved(args, cfg))
    rows = data.X[:, 1:]
    prox = unsupervised.proximity_forest(rows, n_trees=args.trees, max_depth=args.max_depth,
                                         seed=args.seed, threads=args.threads)
    clustering = unsupervised.pam_cluster(prox.dissimilarity(), args.k, seed=args.seed)
    run.write_csv("assignment.csv", ["row", "cluster"],
                  zip(report.kept_rows, clustering.assignment))
    profile = unsupervised.position_profile(clustering, data)
    sizes = np.bincount(clustering.assignment, minlength=args.k)
    run.write_csv("profile.csv", ["cluster", "size", *data.rps.literals()],
                  ([c, sizes[c], *profile[c]] for c in range(args.k)))
    run.write_json("cluster.json", {
        "k": args.k, "trees": args.trees, "objective": clustering.objective,
        "medoid_rows": [report.kept_rows[m] for m in clustering.medoids],
        "sizes": sizes,
    })
    print(f"k={args.k} sizes={sizes.tolist()} objective={clustering.objective:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="survey CSV")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--config", help="JSON config (simulate also accepts a built-in name: "
                                         "eba_default, logit_recovery)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--options", help="comma-separated option labels (overrides config)")
    data.add_argument("--scheme", help="binarization scheme JSON (overrides config)")
    data.add_argument("--min-count", type=int, default=None)
    data.add_argument("--drop-policy", choices=["drop", "error"], default=None)

    logit = argparse.ArgumentParser(add_help=False)
    logit.add_argument("--folds", type=int, default=10)
    logit.add_argument("--n-lambda", type=int, default=50)
    logit.add_argument("--ratio", type=float, default=1e-3)
    logit.add_argument("--max-iter", type=int, default=10000)
    logit.add_argument("--tol", type=float, default=1e-7)

    p = _Parser(prog="conset", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"conset {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic survey")
    s.add_argument("--n", type=int, default=None, help="override the number of respondents")
    s.add_argument("--min-count-hint", type=int, default=50,
                   help="min_count written to the generated analysis config")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("summarize", parents=[common, data], help="category counts and proportions")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("fit", parents=[common, data, logit], help="group-lasso multinomial logit")
    s.add_argument("--lambda", dest="lam", default="1se",
                   help="penalty value, or '1se'/'min' to choose it by cross-validation")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("cv", parents=[common, data, logit], help="cross-validated penalty path")
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("explain", parents=[common, data], help="boosting + SHAP for two positions")
    s.add_argument("--positive", help="set literal of the positive class, e.g. Green")
    s.add_argument("--negative", help="set literal of the negative class, e.g. Green+SPD")
    s.add_argument("--background", default="sample:100", help="'train' or 'sample:N'")
    s.add_argument("--out", help="SHAP table path (default OUT_DIR/shap.csv)")
    s.add_argument("--trees", type=int, default=200)
    s.add_argument("--depth", type=int, default=3)
    s.add_argument("--learning-rate", type=float, default=0.1)
    s.add_argument("--min-leaf", type=int, default=5)
    s.add_argument("--class-weight", action="store_true")
    s.add_argument("--test-frac", type=float, default=0.2)
    s.add_argument("--pfi-repeats", type=int, default=5)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("cluster", parents=[common, data], help="forest dissimilarity + PAM")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--trees", type=int, default=500)
    s.add_argument("--max-depth", type=int, default=None)
    s.set_defaults(func=cmd_cluster)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version, or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "simulate" and args.seed is None:
        args.seed = 0
    if getattr(args, "threads", 1) < 1:
        args.threads = 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"conset {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"conset {args.command}: data error: {exc}", file=sys.stderr)
        if exc.rows:
            print(f"offending rows: {exc.rows[:50]}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
