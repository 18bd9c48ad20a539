"""``afford <command> --config run.json [--set key=value ...]``

Each command reads its inputs from the config and the run directory, and
writes its artifacts atomically into the run directory.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from afford import corpus, nmf, ppmi_transform, ranking, regression, synthetic
from afford.config import ConfigError, RunConfig, load_config
from afford.io import atomic_write_json, atomic_write_text, dump_json, fmt_float

log = logging.getLogger("afford")

COUNTS = "counts.tsv"
PPMI = "ppmi.tsv"


def _vocabs(cfg: RunConfig) -> tuple[corpus.VocabIndex, corpus.VocabIndex]:
    if cfg.paths.nouns is None or cfg.paths.verbs is None:
        raise ConfigError("paths.nouns and paths.verbs are required")
    return corpus.load_vocab(cfg.paths.nouns), corpus.load_vocab(cfg.paths.verbs)


def _need(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing upstream artifact {path}")
    return path


def _load_counts(cfg):
    nouns, verbs = _vocabs(cfg)
    return corpus.read_triplets(_need(cfg.out / COUNTS), nouns, verbs, dtype=np.int64)


def _load_ppmi(cfg):
    nouns, verbs = _vocabs(cfg)
    return corpus.read_triplets(_need(cfg.out / PPMI), nouns, verbs)


def _load_factors(cfg):
    _need(cfg.out / "factors.json")
    return nmf.read_factors(cfg.out)


def cmd_extract(cfg: RunConfig, args) -> None:
    nouns, verbs = _vocabs(cfg)
    files = cfg.corpus_files()
    if not files:
        raise ConfigError("paths.corpus matches no files")
    n_sent = 0

    def sentences():
        nonlocal n_sent
        for s in corpus.read_conllu_files(files):
            n_sent += 1
            yield s

    M = corpus.extract_pairs(sentences(), nouns, verbs)
    corpus.write_triplets(cfg.out / COUNTS, M, comments=[f"config={cfg.hash}"])
    atomic_write_json(cfg.out / "extract.json", {
        "config_hash": cfg.hash,
        "corpus_files": [Path(f).name for f in files],
        "sentences": n_sent,
        "total_count": int(M.matrix.sum()),
        "nonzero_pairs": int(M.matrix.nnz),
        "noun_duplicates": nouns.duplicates,
        "verb_duplicates": verbs.duplicates,
    })


def cmd_ppmi(cfg: RunConfig, args) -> None:
    M = _load_counts(cfg)
    P = ppmi_transform.ppmi(M)
    corpus.write_triplets(cfg.out / PPMI, P, fmt=lambda v: format(float(v), ".12g"),
                          comments=[f"config={cfg.hash}"])
    diag = ppmi_transform.ppmi_diagnostics(M, P)
    diag["config_hash"] = cfg.hash
    atomic_write_json(cfg.out / "ppmi.json", diag)


def cmd_factorize(cfg: RunConfig, args) -> None:
    P = _load_ppmi(cfg)
    p = cfg.nmf
    fp = nmf.factorize(P, p.d, p.beta, p.restarts, p.seed, p.max_iter, p.tol, p.init)
    nmf.write_factors(cfg.out, fp, P.rows, P.cols, {"config_hash": cfg.hash})


def cmd_cv(cfg: RunConfig, args) -> None:
    P = _load_ppmi(cfg)
    p = cfg.nmf
    rep = nmf.cv_grid(P, p.d_list, p.beta_list, p.K, p.q, p.restarts, p.seed,
                      p.max_iter, p.tol, p.init, n_jobs=args.threads)
    out = rep.to_dict()
    out["config_hash"] = cfg.hash
    atomic_write_json(cfg.out / "cv.json", out)


def cmd_rank(cfg: RunConfig, args) -> None:
    fp, nouns, verbs = _load_factors(cfg)
    S = ranking.similarity_matrix(fp)
    wanted = cfg.rank.objects
    ids = range(len(nouns)) if wanted is None else [nouns.id_of[corpus.normalize_entry(o)] for o in wanted]
    top = min(cfg.rank.top_n, len(verbs))
    lines = [f"#config={cfg.hash}", "object\trank\tverb\tscore"]
    for i in ids:
        r = ranking.object_verb_ranking(fp, S, i)
        for pos, k in enumerate(r.top(top), start=1):
            lines.append(f"{nouns[i]}\t{pos}\t{verbs[k]}\t{fmt_float(r.scores[k])}")
    atomic_write_text(cfg.out / "rankings.tsv", "\n".join(lines) + "\n")
    dl = [f"#config={cfg.hash}", "dimension\ttop_verbs"]
    for row, h in enumerate(S.dims):
        order = ranking.rank_scores(S.S[row]).top(min(10, len(verbs)))
        dl.append(f"D{h + 1}\t" + ", ".join(verbs[k] for k in order))
    atomic_write_text(cfg.out / "dimensions.tsv", "\n".join(dl) + "\n")


def _scorers(cfg: RunConfig, nouns, verbs):
    fp, _, _ = _load_factors(cfg)
    out = {"model": ranking.model_scorer(fp)}
    out["ppmi"] = ranking.ppmi_scorer(_load_ppmi(cfg))
    out["frequency"] = ranking.frequency_scorer(_load_counts(cfg))
    keep = set(nouns.entries) | set(verbs.entries)
    for name, path in sorted(cfg.paths.vectors.items()):
        vecs, _ = ranking.load_word_vectors(path, keep)
        if vecs:
            out[name] = ranking.embedding_scorer(vecs, nouns, verbs)
    return out


def cmd_eval(cfg: RunConfig, args) -> None:
    if not cfg.paths.truth:
        raise ConfigError("paths.truth is empty")
    nouns, verbs = _vocabs(cfg)
    scorers = _scorers(cfg, nouns, verbs)
    summary = {"config_hash": cfg.hash, "datasets": {}}
    for dname, entry in sorted(cfg.paths.truth.items()):
        truth = ranking.load_truth_table(entry["path"], float(entry.get("cutoff", 5.0)))
        reports = {m: ranking.evaluate_dataset(fn, truth, nouns, verbs, m) for m, fn in scorers.items()}
        model = reports["model"]
        rows = [f"#config={cfg.hash}", "object\tK\t" + "\t".join(reports)]
        per = {m: r.by_object() for m, r in reports.items()}
        for obj, K in zip(model.objects, model.K):
            vals = [fmt_float(per[m][obj]) if obj in per[m] else "nan" for m in reports]
            rows.append(f"{obj}\t{K}\t" + "\t".join(vals))
        atomic_write_text(cfg.out / f"eval_{dname}.tsv", "\n".join(rows) + "\n")
        hist = [f"#config={cfg.hash}", "method\tbin_lo\tbin_hi\tcount"]
        for m, r in reports.items():
            edges, counts = r.histogram()
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                hist.append(f"{m}\t{lo:.2f}\t{hi:.2f}\t{c}")
        atomic_write_text(cfg.out / f"eval_{dname}_hist.tsv", "\n".join(hist) + "\n")
        summary["datasets"][dname] = {
            "methods": {m: r.summary() for m, r in reports.items()},
            "ttests_vs_model": [ranking.compare_reports(model, r) for m, r in reports.items() if m != "model"],
        }
    atomic_write_json(cfg.out / "eval.json", summary)
    atomic_write_text(cfg.out / "table_aauc.tsv", _aauc_table(summary))


def _aauc_table(summary: dict) -> str:
    """Datasets by methods, mean AAUC."""
    methods: list[str] = []
    for d in summary["datasets"].values():
        methods += [m for m in d["methods"] if m not in methods]
    lines = [f"#config={summary['config_hash']}", "dataset\t" + "\t".join(methods)]
    for name, d in summary["datasets"].items():
        vals = [f"{d['methods'][m]['mean_aauc']:.2f}" if m in d["methods"] else "" for m in methods]
        lines.append(name + "\t" + "\t".join(vals))
    return "\n".join(lines) + "\n"


def cmd_regress(cfg: RunConfig, args) -> None:
    if cfg.paths.targets is None:
        raise ConfigError("paths.targets is required")
    fp, nouns, verbs = _load_factors(cfg)
    P = _load_ppmi(cfg)
    targets = regression.align_targets(regression.load_targets(cfg.paths.targets), nouns, P)
    rp = cfg.regression
    grid = np.logspace(np.log10(rp.lambda_min), np.log10(rp.lambda_max), rp.grid_size)
    O = fp.O[targets.noun_ids]
    fit = regression.fit_all_dims(O, targets, grid=grid, folds=rp.folds, seed=rp.seed)
    best = regression.best_match_correlation(targets.Y, O)
    refit = np.stack([f.yhat_refit for f in fit.dims], axis=1)
    assigned = regression.spose_verb_assignment(np.nan_to_num(refit), fp, targets.noun_ids)
    top = min(rp.top_verbs, len(verbs))
    dims_out = []
    for j, f in enumerate(fit.dims):
        d = f.to_dict()
        contrib = regression.contribution_analysis(np.nan_to_num(f.w), O)
        d["contributions_percent"] = contrib.tolist()
        d["best_match"] = {"dimension": f"D{int(best.index[j]) + 1}", "r": float(best.r[j]),
                           "flagged": bool(best.flagged[j])}
        d["top_verbs"] = [] if assigned[j] is None else [verbs[k] for k in assigned[j].top(top)]
        dims_out.append(d)
    atomic_write_json(cfg.out / "regression.json", {
        "config_hash": cfg.hash,
        "alignment": targets.report,
        "lambda_grid": fit.grid.tolist(),
        "folds": fit.folds,
        "seed": fit.seed,
        "dimensions": dims_out,
    })
    atomic_write_text(cfg.out / "table_dimensions.tsv", _dimension_table(dims_out, cfg.hash))


def _dimension_table(dims: list[dict], chash: str) -> str:
    """Pearson r, p-value, label and top verbs, best-predicted dimension first."""
    lines = [f"#config={chash}", "pearson_r\tp_value\tlabel\tbest_match\tbest_match_r\ttop_verbs"]
    ordered = sorted(dims, key=lambda d: -np.nan_to_num(d["pearson_r"], nan=-2.0))
    for d in ordered:
        lines.append("\t".join([
            f"{d['pearson_r']:.2f}", f"{d['p_value']:.2e}", d["label"],
            d["best_match"]["dimension"], f"{d['best_match']['r']:.2f}", ", ".join(d["top_verbs"]),
        ]))
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, args) -> None:
    out = {"config_hash": cfg.hash, "config": cfg.to_dict()}
    out["config"]["paths"].pop("output_dir", None)
    for name in ("extract", "ppmi", "factors", "cv", "eval", "regression"):
        p = cfg.out / f"{name}.json"
        if p.exists():
            data = json.loads(p.read_text(encoding="utf-8"))
            if name == "factors":
                data.pop("objective_trace", None)
            if name == "regression":
                for d in data.get("dimensions", []):
                    d.pop("cv_curve", None)
            out[name] = data
    atomic_write_json(cfg.out / "report.json", out)
    tables = [t for t in ("table_aauc.tsv", "table_dimensions.tsv") if (cfg.out / t).exists()]
    text = "".join(f"## {t}\n" + (cfg.out / t).read_text(encoding="utf-8") + "\n" for t in tables)
    atomic_write_text(cfg.out / "report_tables.tsv", text)


def cmd_demo_data(args) -> None:
    """Write the synthetic fixture inputs and a matching config into ``--out``."""
    out = Path(args.out)
    paths = synthetic.write_fixture(out, seed=args.seed)
    config = {
        "paths": {
            "corpus": [Path(paths["corpus_a"]).name, Path(paths["corpus_b"]).name],
            "nouns": "nouns.txt",
            "verbs": "verbs.txt",
            "truth": {"fixture": {"path": "truth.tsv", "cutoff": 5.0}},
            "vectors": {"random16": "vectors.txt"},
            "targets": "targets.tsv",
            "output_dir": "run",
        },
        "nmf": {"seed": args.seed, "d": 4, "beta": 0.1, "d_list": [2, 3, 4, 5, 6],
                "beta_list": [0.1, 0.3], "K": 4, "q": 1, "restarts": 2, "max_iter": 500},
        "regression": {"seed": args.seed, "grid_size": 20},
        "rank": {"top_n": 10},
    }
    atomic_write_text(out / "config.json", dump_json(config))


COMMANDS = {
    "extract": cmd_extract,
    "ppmi": cmd_ppmi,
    "factorize": cmd_factorize,
    "cv": cmd_cv,
    "rank": cmd_rank,
    "eval": cmd_eval,
    "regress": cmd_regress,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="afford", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. nmf.d=40")
        p.add_argument("--threads", type=int, default=1, help="cap on parallel workers")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded BLAS for reproducible reductions")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("demo-data", help="write a synthetic fixture corpus and config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _error(command: str, exc: BaseException) -> str:
    msg = " ".join(str(exc).split())
    return json.dumps({"command": command, "error": msg, "type": type(exc).__name__})


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "demo-data":
        cmd_demo_data(args)
        return 0
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        print(_error(args.command, exc), file=sys.stderr)
        return 2
    limit = contextlib.nullcontext()
    if args.deterministic or args.threads:
        limit = threadpool_limits(1 if args.deterministic else max(args.threads, 1))
    try:
        with limit:
            cfg.out.mkdir(parents=True, exist_ok=True)
            COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(_error(args.command, exc), file=sys.stderr)
        return 2
    except (ValueError, OSError, ArithmeticError, KeyError) as exc:
        print(_error(args.command, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
