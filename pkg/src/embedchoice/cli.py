"""Command-line interface.

Every command reads its inputs from the data directory (``--data``, default
the output directory) and writes into the output directory (``--out``), so
a pipeline such as ``simulate -> select -> validate`` can share one
workspace. Each command records the hashes of what it read and wrote in
``manifest.json``.

Exit codes: 0 success, 1 invalid input or missing artifact, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .counterfactual import (
    DiversionMatrix,
    empirical_diversions,
    merger_simulation,
    predicted_diversions,
    second_choice_rmse,
    validation_row,
    write_merger_report,
)
from .data import (
    Dataset,
    Source,
    attach_attributes_as_embedding,
    load_dataset,
    load_embeddings,
    load_products,
    write_dataset,
    write_embeddings,
)
from .design import SubsetConstraint, generate_synthetic, max_variance_subset, truth_from_json, write_truth
from .draws import DrawConfig
from .errors import MissingArtifactError, NumericalError, ValidationError
from .mixlogit import ChoiceData, Covariates, FitResult, ModelSpec, OptConfig, fit_mle, standard_errors
from .pca import PCStore, fit_pca, load_pcstore, standardize, write_pcstore
from .selection import (
    FitCache,
    SelectionTrace,
    SpecResult,
    akaike_weights,
    algorithm1,
    best_by_data_type,
    default_candidates,
    extend_candidate_set,
    select_across_specs,
)
from .text import featurize, load_stopwords

log = logging.getLogger("embedchoice")

DEFAULTS = {
    "seed": 0,
    "draws": 1000,
    "method": "halton",
    "burn": 100,
    "threads": 1,
    "out": ".",
    "data": None,
    "starts": 1,
    "max_iter": 500,
    "gtol": 1e-6,
    "ftol": 1e-9,
    "verbose": False,
}

ATTR_PREFIX = "APC"


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing upstream artifact: {path}")
    return path


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return path


class Run:
    """Resolved options plus bookkeeping of files read and written."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.data_dir = Path(args.data) if args.data else self.out
        self.inputs: list = []
        self.outputs: list = []

    def read(self, path: Path) -> Path:
        _require(path)
        self.inputs.append(path)
        return path

    def wrote(self, *paths) -> None:
        self.outputs.extend(Path(p) for p in paths)

    @property
    def draw_config(self) -> DrawConfig:
        a = self.args
        return DrawConfig(a.method, int(a.draws), int(a.seed), int(a.burn))

    @property
    def opt_config(self) -> OptConfig:
        a = self.args
        return OptConfig(gtol=float(a.gtol), ftol=float(a.ftol), max_iter=int(a.max_iter), starts=int(a.starts), seed=int(a.seed))

    def dataset(self) -> Dataset:
        d = self.data_dir
        for name in ("products.csv", "choices.csv"):
            self.read(d / name)
        if (d / "reviews.csv").exists():
            self.read(d / "reviews.csv")
        emb_dir = d / "embeddings"
        if emb_dir.is_dir():
            self.inputs.extend(sorted(emb_dir.glob("*.csv")))
        return load_dataset(d)

    def manifest(self, command: str, wall: float) -> None:
        path = self.out / "manifest.json"
        payload = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
        config = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "config")}
        payload[command] = {
            "inputs": {str(p): _sha256(p) for p in dict.fromkeys(self.inputs) if p.is_file()},
            "outputs": {str(p): _sha256(p) for p in dict.fromkeys(self.outputs) if p.is_file()},
            "config": config,
            "versions": {
                "embedchoice": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "backend": _kernels.backend(),
            },
            "wall_time_s": wall,
        }
        _write_json(path, payload)


def _pca_dirs(run: Run) -> dict:
    root = run.data_dir / "pca"
    if not root.is_dir():
        return {}
    return {p.name: p for p in sorted(root.iterdir()) if (p / "pca_meta.json").exists()}


def _load_store(run: Run, slug: str, path: Path) -> PCStore:
    run.read(path / "pca_meta.json")
    run.read(path / "pcs.csv")
    return load_pcstore(path)


def _stores(run: Run, dataset: Dataset, P: int | None) -> dict:
    """PC stores keyed by source slug.

    Read from ``pca/`` when present; otherwise computed with ``P`` components
    and written to ``pca/`` in the output directory for downstream commands.
    """
    stores = {slug: _load_store(run, slug, path) for slug, path in _pca_dirs(run).items()}
    if stores:
        return stores
    if P is None:
        raise MissingArtifactError(f"missing upstream artifact: {run.data_dir / 'pca'} (run `pca` first)")
    log.info("no pca/ directory; computing %d components per embedding", P)
    for emb in dataset.embeddings:
        if emb.source.data_type == "attributes":
            continue
        store = fit_pca(emb, min(P, len(emb.rows) - 1, emb.values.shape[1]))
        run.wrote(*write_pcstore(run.out / "pca" / emb.source.slug, store))
        stores[emb.source.slug] = store
    return stores


def _covariates(product_ids, store: PCStore | None, attr_store: PCStore | None, P: int | None = None) -> Covariates:
    cov = Covariates.empty(product_ids)
    if store is not None:
        vals = store.covariates("PC")
        if P is not None:
            vals = {k: v for k, v in vals.items() if int(k[2:]) <= P}
        cov = cov.merged(Covariates(store.rows, vals))
    if attr_store is not None:
        cov = cov.merged(Covariates(attr_store.rows, attr_store.covariates(ATTR_PREFIX)))
    return cov


def _candidates(P: int, attr_store: PCStore | None) -> tuple:
    extra = attr_store.covariates(ATTR_PREFIX).keys() if attr_store is not None else ()
    return extend_candidate_set(default_candidates(P), tuple(extra))


def _attr_store(stores: dict):
    for slug, store in stores.items():
        if store.source.data_type == "attributes":
            return slug, store
    return None, None


def _first_choice_data(dataset: Dataset) -> ChoiceData:
    first = dataset.first_choices()
    if not first:
        raise ValidationError("no first-choice observations")
    return ChoiceData(first, dataset.product_ids)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(run: Run) -> None:
    a = run.args
    payload = json.loads(run.read(Path(a.truth)).read_text(encoding="utf-8"))
    if a.n is not None:
        payload["N"] = int(a.n)
    if a.persist_eps:
        payload["persist_eps"] = True
    truth = truth_from_json(payload)
    dataset = generate_synthetic(truth, seed=int(a.seed))
    run.wrote(*write_dataset(run.out, dataset))
    path = run.out / "truth.json"
    write_truth(path, truth)
    run.wrote(path)
    print(f"simulated {truth.N} individuals over {len(truth.product_ids)} products -> {run.out}")


def cmd_featurize(run: Run) -> None:
    a = run.args
    products = run.read(run.data_dir / "products.csv")
    reviews = run.data_dir / "reviews.csv"
    if a.source == "reviews":
        run.read(reviews)
    catalog = load_products(products, reviews if reviews.exists() else None)
    stop = load_stopwords(run.read(Path(a.stopwords))) if a.stopwords else None
    emb, vocab = featurize(catalog, a.source, a.type, stop)
    path = run.out / "embeddings" / f"{emb.source.slug}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(path, emb)
    vpath = run.out / f"vocabulary_{emb.source.slug}.txt"
    vpath.write_text("".join(t + "\n" for t in vocab.tokens), encoding="utf-8")
    run.wrote(path, vpath)
    print(f"{emb.source.descriptor}: {emb.values.shape[0]} x {emb.values.shape[1]}")


def cmd_pca(run: Run) -> None:
    a = run.args
    products = run.read(run.data_dir / "products.csv")
    catalog = load_products(products, None)
    ids = [p.id for p in catalog]
    matrices = []
    emb_dir = run.data_dir / "embeddings"
    if a.embedding:
        names = [Source.parse(e).slug + ".csv" for e in a.embedding.split(",")]
    else:
        names = sorted(p.name for p in emb_dir.glob("*.csv")) if emb_dir.is_dir() else []
    for name in names:
        source = Source.parse(name[:-4])
        matrices.append(load_embeddings(run.read(emb_dir / name), source, catalog=ids))
    if any(p.attributes for p in catalog) and not any(m.source.data_type == "attributes" for m in matrices):
        matrices.append(attach_attributes_as_embedding(catalog))
    if not matrices:
        raise MissingArtifactError(f"missing upstream artifact: no embeddings under {emb_dir}")
    for emb in matrices:
        scale = a.standardize or emb.source.data_type == "attributes"
        P = min(int(a.components), len(emb.rows) - 1)
        if scale:
            P = min(P, standardize(emb).values.shape[1])
        else:
            P = min(P, emb.values.shape[1])
        store = fit_pca(emb, P, standardize_columns=scale)
        run.wrote(*write_pcstore(run.out / "pca" / emb.source.slug, store))
        cum = float(np.sum(store.explained_ratio))
        print(f"{emb.source.descriptor}: {store.P} components, cumulative explained ratio {cum:.4f}")


def _read_spec(path: Path) -> dict:
    payload = json.loads(path.read_text(encoding="utf-8"))
    return payload.get("spec", payload)


def _model_inputs(run: Run, dataset: Dataset, spec_d: dict):
    """Spec, covariates for a spec mapping; PCs come from ``pca/<source slug>``."""
    random_set = tuple(spec_d.get("random_set", ()))
    source = spec_d.get("source", "none")
    stores = {slug: path for slug, path in _pca_dirs(run).items()}
    store = attr = None
    if source != "none":
        slug = Source.parse(source).slug
        if slug not in stores:
            raise MissingArtifactError(f"missing upstream artifact: {run.data_dir / 'pca' / slug}")
        store = _load_store(run, slug, stores[slug])
    if any(v.startswith(ATTR_PREFIX) for v in random_set) or any(
        v.startswith(ATTR_PREFIX) for v in spec_d.get("candidates", ())
    ):
        aslug = next((s for s in stores if s.startswith("attributes__")), None)
        if aslug is None:
            raise MissingArtifactError(f"missing upstream artifact: {run.data_dir / 'pca' / 'attributes__raw'}")
        attr = _load_store(run, aslug, stores[aslug])
    P = int(spec_d.get("P", store.P if store is not None else 0))
    candidates = tuple(spec_d.get("candidates", ())) or _candidates(P, attr)
    spec = ModelSpec(source, random_set, bool(spec_d.get("includes_rank", True)), P, candidates)
    return spec, _covariates(dataset.product_ids, store, attr, P)


def _fail_if_not_converged(fit: FitResult, what: str) -> None:
    if not fit.converged:
        raise NumericalError(f"{what} did not converge: {fit.message}")


def cmd_fit(run: Run) -> None:
    a = run.args
    dataset = run.dataset()
    spec, cov = _model_inputs(run, dataset, _read_spec(run.read(Path(a.spec))))
    data = _first_choice_data(dataset)
    fit = fit_mle(spec, data, run.draw_config, run.opt_config, cov)
    if a.se and fit.converged:
        standard_errors(fit, data, cov)
    path = _write_json(run.out / "fit.json", fit.to_dict(timing=True))
    run.wrote(path)
    print(f"loglik {fit.loglik:.4f}  aic {fit.aic:.4f}  converged {fit.converged}")
    _fail_if_not_converged(fit, "maximum likelihood")


def cmd_select(run: Run) -> None:
    a = run.args
    dataset = run.dataset()
    data = _first_choice_data(dataset)
    stores = _stores(run, dataset, a.max_pc)
    aslug, attr = _attr_store(stores)
    if a.with_attributes and attr is None:
        raise MissingArtifactError(f"missing upstream artifact: {run.data_dir / 'pca' / 'attributes__raw'}")
    if not a.with_attributes:
        attr = None
    results, traces = [], []
    plain_fit = None
    fits_dir = run.out / "fits"
    for slug, store in stores.items():
        if slug == aslug:
            continue
        P = store.P if a.max_pc is None else min(int(a.max_pc), store.P)
        candidates = _candidates(P, attr)
        cov = _covariates(dataset.product_ids, store, attr, P)
        cache = FitCache(data, cov, candidates, run.draw_config, run.opt_config, store.source.descriptor, P)
        best, best_aic, trace = algorithm1(cache)
        traces.append(trace)
        results.append(SpecResult(store.source.descriptor, best, best_aic, trace.plain_aic))
        fit = cache.fits[cache.key(best)]
        run.wrote(_write_json(fits_dir / f"{slug}.json", fit.to_dict(timing=False)))
        if plain_fit is None:
            plain_fit = cache.fits[()]
        print(f"{store.source.descriptor}: best {list(best) or 'plain logit'} aic {best_aic:.4f} ({cache.n_fitted} fits)")
    if plain_fit is None:
        plain_fit = fit_mle(ModelSpec(), data, run.draw_config, run.opt_config)
        _fail_if_not_converged(plain_fit, "plain logit")
    run.wrote(_write_json(fits_dir / "plain_logit.json", plain_fit.to_dict(timing=False)))
    report = {"plain_logit": {"aic": plain_fit.aic, "loglik": plain_fit.loglik, "K": plain_fit.K}}
    if results:
        best, per_spec, tie = select_across_specs(results)
        report.update({"best_source": best.source, "best_subset": list(best.best_subset), "tie": tie, "specs": per_spec})
        report["best_by_data_type"] = best_by_data_type(results)
        trace = SelectionTrace(traces, best.source, tie)
    else:
        report.update({"best_source": "none", "best_subset": [], "tie": False, "specs": {}, "best_by_data_type": {}})
        trace = SelectionTrace([], "none", False)
    p1 = run.out / "selection_trace.json"
    p1.write_text(trace.to_json(), encoding="utf-8")
    p2 = _write_json(run.out / "selection_report.json", report)
    run.wrote(p1, p2)


def _read_aics(path: Path) -> dict:
    if path.suffix == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        return {k: float(v) for k, v in payload.get("best_by_data_type", payload).items()}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"data_type", "aic"} <= set(rows[0]):
        raise ValidationError(f"{path}: expected columns data_type,aic")
    return {r["data_type"]: float(r["aic"]) for r in rows}


def cmd_weights(run: Run) -> None:
    a = run.args
    path = Path(a.aics) if a.aics else run.data_dir / "selection_report.json"
    aics = _read_aics(run.read(path))
    w = akaike_weights(aics)
    out = run.out / "weights.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["data_type", "delta_aic", "weight"])
        for d, delta, weight in w.rows():
            wr.writerow([d, repr(delta), repr(weight)])
    run.wrote(out)
    for d, delta, weight in w.rows():
        print(f"{d}: delta {delta:.4f} weight {weight:.4f}")


def _load_fit(run: Run, path: Path) -> FitResult:
    return FitResult.from_dict(json.loads(run.read(path).read_text(encoding="utf-8")))


def _default_fit_path(run: Run) -> Path:
    if (run.data_dir / "fit.json").exists():
        return run.data_dir / "fit.json"
    report = run.data_dir / "selection_report.json"
    if report.exists():
        best = json.loads(report.read_text(encoding="utf-8")).get("best_source", "none")
        if best != "none":
            return run.data_dir / "fits" / f"{Source.parse(best).slug}.json"
    return run.data_dir / "fit.json"


def _fit_covariates(run: Run, dataset: Dataset, fit: FitResult) -> Covariates:
    _, cov = _model_inputs(run, dataset, fit.spec.to_dict())
    return cov


def cmd_diversions(run: Run) -> None:
    a = run.args
    dataset = run.dataset()
    fit = _load_fit(run, Path(a.fit) if a.fit else _default_fit_path(run))
    cov = _fit_covariates(run, dataset, fit)
    observations = dataset.first_choices()
    if a.common_price is not None:
        observations = [
            type(o)(o.individual_id, o.task, o.offered, tuple(float(a.common_price) for _ in o.offered), o.chosen, None)
            for o in observations
        ]
    pred = predicted_diversions(fit, observations, cov, dataset.product_ids)
    path = run.out / "diversions.csv"
    pred.write_csv(path)
    run.wrote(path)
    if any(o.task == 2 for o in dataset.observations):
        emp = empirical_diversions(dataset.observations, dataset.product_ids)
        epath = run.out / "diversions_empirical.csv"
        emp.write_csv(epath)
        run.wrote(epath)
    print(f"wrote {path} ({pred.skipped} skipped cells)")


def cmd_validate(run: Run) -> None:
    dataset = run.dataset()
    emp = empirical_diversions(dataset.observations, dataset.product_ids)
    models = {}
    plain_path = run.data_dir / "fits" / "plain_logit.json"
    if plain_path.exists():
        models["plain_logit"] = plain_path
    report = run.data_dir / "selection_report.json"
    if report.exists():
        run.read(report)
        for source in json.loads(report.read_text(encoding="utf-8")).get("specs", {}):
            models[source] = run.data_dir / "fits" / f"{Source.parse(source).slug}.json"
    if (run.data_dir / "fit.json").exists():
        models["fit"] = run.data_dir / "fit.json"
    if "plain_logit" not in models:
        data = _first_choice_data(dataset)
        plain = fit_mle(ModelSpec(), data, run.draw_config, run.opt_config)
        _fail_if_not_converged(plain, "plain logit")
        _write_json(plain_path, plain.to_dict(timing=False))
        run.wrote(plain_path)
        models = {"plain_logit": plain_path, **models}
    rmse, fits = {}, {}
    div_dir = run.out / "diversions"
    div_dir.mkdir(parents=True, exist_ok=True)
    for name, path in models.items():
        fit = _load_fit(run, path)
        cov = _fit_covariates(run, dataset, fit)
        pred = predicted_diversions(fit, dataset.observations, cov, dataset.product_ids)
        out = div_dir / f"{name.replace('/', '__')}.csv"
        pred.write_csv(out)
        run.wrote(out)
        rmse[name] = second_choice_rmse(pred, emp)
        fits[name] = fit
    rows = [validation_row(n, fits[n], rmse[n], rmse["plain_logit"]) for n in models]
    epath = div_dir / "empirical.csv"
    emp.write_csv(epath)
    vpath = _write_json(run.out / "validation_report.json", {"models": rows, "missing_rows": list(emp.missing)})
    run.wrote(epath, vpath)
    for r in rows:
        print(f"{r['model']}: aic {r['aic']:.3f} rmse {r['rmse']:.5f} ({r['delta_rmse_pct']:+.1f}%)")


def cmd_merger(run: Run) -> None:
    a = run.args
    dataset = run.dataset()
    fit = _load_fit(run, Path(a.fit) if a.fit else _default_fit_path(run))
    _fail_if_not_converged(fit, "the loaded fit")
    cov = _fit_covariates(run, dataset, fit)
    pair = [p for p in a.pair.split(",") if p]
    focal = pair[0]
    partners = pair[1:] or [p for p in dataset.product_ids if p != focal]
    outcomes = [
        merger_simulation(fit, (focal, b), dataset.product_ids, float(a.fixed_price), float(a.mc), cov, a.pricing_draws)
        for b in partners
    ]
    path = run.out / "merger_report.csv"
    write_merger_report(path, focal, outcomes)
    run.wrote(path)
    for o in outcomes:
        print(f"{o.pair[0]}+{o.pair[1]}: average price increase {o.avg_increase_pct:.3f}%")


def cmd_design_select(run: Run) -> None:
    a = run.args
    products = run.read(run.data_dir / "products.csv")
    ids = [p.id for p in load_products(products, None)]
    with open(run.read(Path(a.groups)), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"product_id", "group"} <= set(rows[0]):
        raise ValidationError(f"{a.groups}: expected columns product_id,group")
    groups = {r["product_id"]: r["group"] for r in rows}
    emb_dir = run.data_dir / "embeddings"
    if a.embedding:
        names = [Source.parse(e).slug + ".csv" for e in a.embedding.split(",")]
    else:
        names = sorted(p.name for p in emb_dir.glob("*.csv")) if emb_dir.is_dir() else []
    if not names:
        raise MissingArtifactError(f"missing upstream artifact: no embeddings under {emb_dir}")
    sources = [load_embeddings(run.read(emb_dir / n), Source.parse(n[:-4]), catalog=ids) for n in names]
    mode = "local_search" if a.mode == "local" else a.mode
    result = max_variance_subset(sources, SubsetConstraint(groups, int(a.n)), mode, a.normalize, a.restarts, int(a.seed))
    path = _write_json(
        run.out / "design_selection.json",
        {"ids": list(result.ids), "objective": result.objective, "mode": result.mode, "sources": [s.source.descriptor for s in sources]},
    )
    run.wrote(path)
    print(f"selected {', '.join(result.ids)} (objective {result.objective:.6g})")


# ---------------------------------------------------------------------------
# parser


def _common(parser: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=S, help="random seed for draws, starts and simulation")
    g.add_argument("--draws", type=int, default=S, metavar="R", help="simulation draws per individual")
    m = g.add_mutually_exclusive_group()
    m.add_argument("--halton", dest="method", action="store_const", const="halton", default=S)
    m.add_argument("--pseudo", dest="method", action="store_const", const="pseudo", default=S)
    g.add_argument("--burn", type=int, default=S, help="leading Halton points skipped")
    g.add_argument("--threads", type=int, default=S, metavar="T")
    g.add_argument("--out", default=S, help="output directory")
    g.add_argument("--data", default=S, help="input directory (defaults to --out)")
    g.add_argument("--config", default=S, help="flat JSON config; command-line flags win")
    g.add_argument("--starts", type=int, default=S, help="optimizer starts per fit")
    g.add_argument("--max-iter", dest="max_iter", type=int, default=S)
    g.add_argument("--gtol", type=float, default=S)
    g.add_argument("--ftol", type=float, default=S)
    g.add_argument("-v", "--verbose", action="store_true", default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embedchoice", description="Embedding-based mixed logit demand toolkit.")
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.set_defaults(func=func)
        return p

    p = add("featurize", cmd_featurize, "count-model text embeddings")
    p.add_argument("--type", choices=("bow", "tfidf"), required=True)
    p.add_argument("--source", choices=("title", "description", "reviews"), required=True)
    p.add_argument("--stopwords", default=None, help="stopword file, one token per line")

    p = add("pca", cmd_pca, "principal components of each embedding")
    p.add_argument("--components", type=int, required=True, metavar="P")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--embedding", default=None, help="comma-separated sources (default: all)")

    p = add("fit", cmd_fit, "fit one specification")
    p.add_argument("--spec", required=True, help="JSON with source, random_set, includes_rank")
    p.add_argument("--se", action="store_true", help="also compute standard errors")

    p = add("select", cmd_select, "forward AIC search for every embedding source")
    p.add_argument("--max-pc", dest="max_pc", type=int, default=None, metavar="P")
    p.add_argument("--with-attributes", dest="with_attributes", action="store_true")

    p = add("weights", cmd_weights, "Akaike weights across data types")
    p.add_argument("--aics", default=None, help="CSV data_type,aic or JSON map (default: selection_report.json)")

    p = add("diversions", cmd_diversions, "predicted diversion matrix")
    p.add_argument("--fit", default=None)
    p.add_argument("--common-price", dest="common_price", type=float, default=None)

    add("validate", cmd_validate, "second-choice validation of fitted models")

    p = add("merger", cmd_merger, "merger price effects")
    p.add_argument("--pair", required=True, help="a,b (or a alone for every partner)")
    p.add_argument("--fixed-price", dest="fixed_price", type=float, default=5.0)
    p.add_argument("--mc", type=float, default=0.0)
    p.add_argument("--fit", default=None)
    p.add_argument("--pricing-draws", dest="pricing_draws", type=int, default=None)

    p = add("design-select", cmd_design_select, "balanced max-variance product subset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--groups", required=True, help="CSV product_id,group")
    p.add_argument("--mode", choices=("exact", "local"), default="exact")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--embedding", default=None)

    p = add("simulate", cmd_simulate, "synthetic choice experiment from truth.json")
    p.add_argument("--truth", required=True)
    p.add_argument("--n", type=int, default=None, help="number of individuals")
    p.add_argument("--persist-eps", dest="persist_eps", action="store_true")
    return parser


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    config = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise MissingArtifactError(f"missing config file: {path}")
        config = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(config, dict):
            raise ValidationError("config must be a flat JSON object")
    for key, value in config.items():
        key = key.replace("-", "_")
        if isinstance(value, (dict, list)):
            raise ValidationError(f"config key {key!r} must be a scalar")
        if key in ("func", "command"):
            raise ValidationError(f"config key {key!r} is not an option")
        if not hasattr(args, key):
            setattr(args, key, value)
    for key, value in DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    if int(args.draws) < 1:
        raise ValidationError("--draws must be at least 1")
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _resolve(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        _kernels.set_threads(int(args.threads))
        run = Run(args)
        t0 = time.perf_counter()
        args.func(run)
        run.manifest(args.command, time.perf_counter() - t0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if "run" in locals():
            run.manifest(args.command, 0.0)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
