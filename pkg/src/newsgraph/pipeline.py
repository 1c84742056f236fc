"""Stage-by-stage pipeline with on-disk artifacts and a config-hash manifest.

Every stage reads its inputs from the artifact directories of the stages it
depends on and writes its own under ``output_dir/<stage>/``. A manifest at
``output_dir/manifest.json`` records the config digest and file hashes of
each completed stage; a stage whose directory was produced under a different
config is not overwritten unless ``force`` is set.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Callable

import numpy as np

from . import community as comm
from . import embedding as emb
from . import feature as feat
from . import graph as gr
from . import market as mkt
from . import model as mdl
from . import narrative as narr
from . import report as rep
from .config import EXPERIMENTS, PipelineConfig, derive_seed
from .ingest import article_sentiment, group_by_week, load_corpus, parse_article, write_corpus

logger = logging.getLogger(__name__)

STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "graph": ("ingest",),
    "centrality": ("graph",),
    "communities": ("graph", "ingest"),
    "narratives": ("communities",),
    "embed": ("graph",),
    "market": (),
    "features": ("ingest", "graph", "centrality", "communities", "embed", "market"),
    "regress": ("features",),
    "report": ("ingest", "graph", "centrality", "communities", "narratives", "embed", "market", "features", "regress"),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def stage_order(deps: dict[str, tuple[str, ...]] = STAGE_DEPS) -> list[str]:
    try:
        return list(TopologicalSorter(deps).static_order())
    except CycleError as exc:
        raise RuntimeError(f"stage graph has a cycle: {exc.args[1]}") from None


STAGES = tuple(stage_order())


# ---------------------------------------------------------------- io helpers


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_via(path: Path, writer: Callable[[Path], None]) -> None:
    """Run a path-based writer on a temp file, then move it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(Path(tmp))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_float(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


class Pipeline:
    def __init__(self, cfg: PipelineConfig, force: bool = False):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.force = force
        self.digest = cfg.digest()

    # ------------------------------------------------------------ manifest

    @property
    def manifest_path(self) -> Path:
        return self.out / "manifest.json"

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return _read_json(self.manifest_path)
        return {}

    def _record(self, stage: str) -> None:
        d = self.out / stage
        files = {str(p.relative_to(d)): _sha(p) for p in sorted(d.rglob("*")) if p.is_file()}
        m = self.manifest()
        m[stage] = {"config_digest": self.digest, "files": files}
        _atomic_write(self.manifest_path, _dump(m))

    def dir(self, stage: str) -> Path:
        return self.out / stage

    def _require(self, stage: str) -> None:
        m = self.manifest()
        for dep in STAGE_DEPS[stage]:
            if dep not in m:
                raise StageError(stage, f"missing upstream artifacts; run stage '{dep}' first")
            if m[dep]["config_digest"] != self.digest:
                raise StageError(stage, f"stage '{dep}' was produced under a different config; rerun it")

    def _prepare(self, stage: str) -> Path:
        m = self.manifest()
        d = self.dir(stage)
        if stage in m and m[stage]["config_digest"] != self.digest and not self.force:
            raise StageError(stage, "cached artifacts come from a different config; use --force to overwrite")
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        return d

    # ------------------------------------------------------------ running

    def run_stage(self, stage: str) -> Path:
        if stage not in STAGE_DEPS:
            raise StageError(stage, f"unknown stage; choose from {STAGES}")
        self._require(stage)
        d = self._prepare(stage)
        logger.info("running stage %s", stage)
        try:
            getattr(self, f"_stage_{stage}")(d)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        self._record(stage)
        return d

    def run_all(self) -> dict:
        for stage in STAGES:
            self.run_stage(stage)
        return _read_json(self.dir("report") / "summary.json")

    # ------------------------------------------------------------ loaders

    def _weeks(self):
        articles = []
        for line in (self.dir("ingest") / "corpus.jsonl").read_text(encoding="utf-8").splitlines():
            articles.append(parse_article(json.loads(line)))
        return group_by_week(articles)

    def _graphs(self) -> dict[dt.date, gr.WeeklyGraph]:
        data = _read_json(self.dir("graph") / "graphs.json")
        return {dt.date.fromisoformat(w["week_end"]): gr.graph_from_json(w["graph"]) for w in data["weeks"]}

    def _graph_stats(self) -> dict[dt.date, dict]:
        data = _read_json(self.dir("graph") / "graphs.json")
        return {dt.date.fromisoformat(w["week_end"]): w for w in data["weeks"]}

    def _communities(self) -> dict[dt.date, dict]:
        data = _read_json(self.dir("communities") / "communities.json")
        return {dt.date.fromisoformat(w["week_end"]): w for w in data["weeks"]}

    # ------------------------------------------------------------ stages

    def _stage_ingest(self, d: Path) -> None:
        weeks = load_corpus(self.cfg.corpus_path, self.cfg.excluded())
        _atomic_via(d / "corpus.jsonl", lambda p: write_corpus(weeks, p))
        summary = {
            w.week_end.isoformat(): {
                "articles": [a.article_id for a in w.articles],
                "article_sentiment": [article_sentiment(a) for a in w.articles],
            }
            for w in weeks
        }
        _atomic_write(d / "weeks.json", _dump(summary))

    def _stage_graph(self, d: Path) -> None:
        out, skipped = [], []
        for week in self._weeks():
            full = gr.threshold_graph(week, self.cfg.threshold())
            try:
                g = gr.giant_component(full)
            except gr.DegenerateWeekError as exc:
                logger.warning("%s", exc)
                skipped.append(week.week_end.isoformat())
                continue
            tag = week.week_end.isoformat()
            _atomic_via(d / f"{tag}.graphml", lambda p, g=g: gr.write_graphml(g, p))
            _atomic_via(d / f"{tag}.dot", lambda p, g=g: gr.write_dot(g, p))
            out.append(
                {
                    "week_end": tag,
                    "graph": gr.graph_to_json(g),
                    "giant_ratio": gr.giant_ratio(full),
                    "clustering": gr.avg_clustering_coefficient(g),
                    "n_initial": full.n_initial,
                    "n_giant": g.n,
                }
            )
        if not out:
            raise StageError("graph", "every week is degenerate")
        _atomic_write(d / "graphs.json", _dump({"weeks": out, "skipped": skipped}))

    def _stage_centrality(self, d: Path) -> None:
        reports = [gr.centrality_report(g) for _, g in sorted(self._graphs().items())]
        _atomic_via(d / "centrality.csv", lambda p: gr.write_centrality_csv(reports, p))
        top = {
            r.week_end.isoformat(): {"degree": r.top3_by_degree, "eigenvector": r.top3_by_eigenvector}
            for r in reports
        }
        _atomic_write(d / "top3.json", _dump(top))

    def _stage_communities(self, d: Path) -> None:
        weeks = {w.week_end: w for w in self._weeks()}
        cfg = self.cfg
        curves_rows, out = [], []
        for week, g in sorted(self._graphs().items()):
            tag = week.isoformat()
            louv = comm.louvain(g, seed=derive_seed(cfg.seed, "louvain", tag))
            if g.n < 3:
                logger.warning("week %s: %d nodes, too small for fuzzy communities", tag, g.n)
                continue
            seeds = [derive_seed(cfg.seed, "nmf", tag, i) for i in range(cfg.nmf_seeds)]
            scan = comm.knee_scan(g, cfg.k_range, cfg.beta, seeds)
            for seed_i, seed in enumerate(seeds):
                for k, q in zip(scan.ks, scan.curves[seed]):
                    curves_rows.append((tag, seed_i, k, q, scan.knees[seed]))
            fp = comm.fuzzy_partition(g, scan.k, cfg.beta, seed=seeds[0])
            reps = comm.stable_article_filter(g, fp, weeks[week], cfg.stability_threshold)
            unstable = comm.unstable_nodes(fp, cfg.stability_threshold)
            communities = []
            for c, members in fp.strict.communities().items():
                arts = reps.get(c, [])
                communities.append(
                    {
                        "id": c,
                        "members": sorted(members),
                        "stability": {v: _json_float(fp.stability[v]) for v in sorted(members)},
                        "unstable": sorted(members & unstable),
                        "representative_articles": [a.article_id for a in arts],
                        "term_frequencies": rep.term_frequencies(a.summary for a in arts),
                    }
                )
            out.append(
                {
                    "week_end": tag,
                    "k": scan.k,
                    "knees": [scan.knees[s] for s in seeds],
                    "beta": cfg.beta,
                    "fuzzy_labels": fp.strict.labels,
                    "fuzzy_modularity": fp.strict.modularity,
                    "reconstruction_error": fp.reconstruction_error,
                    "nmf_converged": fp.converged,
                    "louvain_labels": louv.labels,
                    "louvain_modularity": louv.modularity,
                    "louvain_k": louv.n_communities,
                    "ari": comm.adjusted_rand_index(louv, fp.strict),
                    "communities": communities,
                }
            )
            _atomic_write(d / f"{tag}.json", _dump(out[-1]))
        if not out:
            raise StageError("communities", "no week has a graph large enough")
        _atomic_write(d / "communities.json", _dump({"weeks": out}))
        _atomic_via(
            d / "qk_curves.csv",
            lambda p: rep.write_rows(p, ["week", "seed", "k", "modularity", "knee"], curves_rows),
        )

    def _stage_narratives(self, d: Path) -> None:
        data = self._communities()
        weeks = []
        for week, w in sorted(data.items()):
            groups: dict[int, set[str]] = {}
            for v, c in w["fuzzy_labels"].items():
                groups.setdefault(int(c), set()).add(v)
            weeks.append((week, {c: frozenset(s) for c, s in groups.items()}))
        for (w1, c1), (w2, c2) in zip(weeks, weeks[1:]):
            if w2 - w1 == narr.ONE_WEEK:
                jm = narr.jaccard_matrix(c1, c2, (w1, w2))
                _atomic_via(d / f"jaccard_{w1.isoformat()}_{w2.isoformat()}.csv", lambda p, jm=jm: narr.write_jaccard_csv(jm, p))
        matchings = narr.weekly_matchings(weeks)
        chains = narr.all_chains(weeks, matchings)
        _atomic_via(d / "chains.csv", lambda p: narr.write_chains_csv(chains, p))
        labels_by_week = [(week, {v: int(c) for v, c in data[week]["fuzzy_labels"].items()}) for week, _ in weeks]
        tracks = {
            kw: [
                {"week": w.isoformat(), "community": c, "members": sorted(m)}
                for w, c, m in narr.track_keyword(kw, labels_by_week)
            ]
            for kw in self.cfg.keywords
        }
        chain_json = [
            {
                "start_week": ch.start_week.isoformat(),
                "length": len(ch),
                "broken_at": ch.broken_at.isoformat() if ch.broken_at else None,
                "links": [[w.isoformat(), c, sorted(nodes)] for w, c, nodes in ch.links],
            }
            for ch in chains
        ]
        _atomic_write(d / "keywords.json", _dump(tracks))
        _atomic_write(d / "chains.json", _dump(chain_json))

    def _stage_embed(self, d: Path) -> None:
        embeddings, entropy = [], {}
        for week, g in sorted(self._graphs().items()):
            tag = week.isoformat()
            if g.n < 2:
                continue
            e = emb.node2vec(g, self.cfg.walk_config(derive_seed(self.cfg.seed, "embed", tag)))
            embeddings.append(e)
            entropy[tag] = emb.n2v_entropy(e)
        _atomic_via(d / "embeddings.csv", lambda p: emb.write_embedding_csv(embeddings, p))
        _atomic_write(d / "entropy.json", _dump(entropy))

    def _stage_market(self, d: Path) -> None:
        series = {n: mkt.read_index_csv(n, p) for n, p in self.cfg.index_csv_paths.items()}
        panel = mkt.zscore_panel(series, self.cfg.zscore_window)
        labels = mkt.label_dislocations(panel, self.cfg.dislocation_mean)
        _atomic_via(d / "zscores.csv", lambda p: mkt.write_panel_csv(panel, labels, p))

    def _stage_features(self, d: Path) -> None:
        sentiments = _read_json(self.dir("ingest") / "weeks.json")
        stats = self._graph_stats()
        comms = self._communities()
        entropy = _read_json(self.dir("embed") / "entropy.json")
        eig: dict[str, list[float]] = {}
        with open(self.dir("centrality") / "centrality.csv", newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                eig.setdefault(r["week"], []).append(float(r["eigenvector"]))
        week_stats = []
        for week, s in sorted(stats.items()):
            tag = week.isoformat()
            if week not in comms or tag not in entropy:
                logger.info("week %s dropped: upstream artifact missing", tag)
                continue
            week_stats.append(
                feat.WeekStats(
                    week_end=week,
                    article_sentiments=tuple(sentiments[tag]["article_sentiment"]),
                    giant_ratio=s["giant_ratio"],
                    clustering=s["clustering"],
                    eigenvector=tuple(eig.get(tag, ())),
                    comm=comms[week]["k"],
                    n2v_entropy=entropy[tag],
                )
            )
        panel, labels = mkt.read_panel_csv(self.dir("market") / "zscores.csv")
        z_means = {w: row.mean for w, row in panel.items()}
        lab = {x.week_end: x.label for x in labels if not x.flagged}
        m = feat.assemble_features(week_stats, z_means, lab, self.cfg.start())
        _atomic_via(d / "features.csv", lambda p: feat.write_features_csv(m, p))
        if len(m) >= 3:
            try:
                names, corr = feat.correlation_matrix(m)
                _atomic_via(d / "correlation.csv", lambda p: feat.write_correlation_csv(names, corr, p))
            except feat.FeatureError as exc:
                logger.warning("correlation matrix skipped: %s", exc)

    def _stage_regress(self, d: Path) -> None:
        m = feat.read_features_csv(self.dir("features") / "features.csv")
        reports = {}
        for name in self.cfg.experiments:
            reports[name] = run_experiment(m, name, self.cfg)
        _atomic_write(d / "models.json", _dump(reports))

    def _stage_report(self, d: Path) -> None:
        cfg = self.cfg
        stats = self._graph_stats()
        graphs = self._graphs()
        reports = [gr.centrality_report(g) for _, g in sorted(graphs.items())]
        sentiment = {w: g.sentiment for w, g in graphs.items()}
        for metric in ("degree", "eigenvector"):
            series = rep.top_entities_timeline(reports, metric, sentiment, cfg.min_appearances)
            _atomic_via(d / f"{metric}_timeline.csv", lambda p, s=series: rep.write_timeline_csv(s, p))
        rows = [(w, s["giant_ratio"], s["clustering"], s["n_initial"], s["n_giant"]) for w, s in stats.items()]
        _atomic_via(
            d / "graph_series.csv",
            lambda p: rep.write_rows(p, ["week", "giant_ratio", "clust_coeff", "n_initial", "n_giant"], rows),
        )
        shutil.copyfile(self.dir("communities") / "qk_curves.csv", d / "qk_curves.csv")
        shutil.copyfile(self.dir("market") / "zscores.csv", d / "zscore_series.csv")
        for p in sorted(self.dir("narratives").glob("jaccard_*.csv")):
            shutil.copyfile(p, d / p.name)
        # PCA of each week's node embedding
        vectors: dict[str, dict[str, np.ndarray]] = {}
        with open(self.dir("embed") / "embeddings.csv", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                vectors.setdefault(row[0], {})[row[1]] = np.array([float(x) for x in row[2:]])
        pca_var = {}
        for week, vecs in sorted(vectors.items()):
            if len(vecs) < 3:
                continue
            res = rep.pca_coordinates(vecs)
            _atomic_via(d / f"pca_{week}.csv", lambda p, r=res: rep.write_pca_csv(r, p))
            pca_var[week] = res.explained_variance_ratio.tolist()

        comms = self._communities()
        topics = {
            w.isoformat(): [
                {
                    "id": c["id"],
                    "members": c["members"],
                    "representative_articles": c["representative_articles"],
                    "term_frequencies": c["term_frequencies"],
                }
                for c in info["communities"]
            ]
            for w, info in sorted(comms.items())
        }
        features_csv = (self.dir("features") / "features.csv").read_text(encoding="utf-8").splitlines()
        summary = {
            "config_digest": self.digest,
            "weeks": sorted(w.isoformat() for w in graphs),
            "topics": topics,
            "narrative_chains": _read_json(self.dir("narratives") / "chains.json"),
            "keyword_tracks": _read_json(self.dir("narratives") / "keywords.json"),
            "feature_matrix": {"header": features_csv[0].split(","), "rows": [r.split(",") for r in features_csv[1:]]},
            "regressions": _read_json(self.dir("regress") / "models.json"),
            "pca_explained_variance": pca_var,
        }
        _atomic_write(d / "summary.json", _dump(summary))


# ---------------------------------------------------------------- regression


def experiment_features(name: str) -> tuple[str, ...]:
    if name == "contemporaneous":
        return feat.NEWS_FEATURES + feat.GRAPH_FEATURES
    if name == "predictive":
        return feat.FEATURE_NAMES
    raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")


def run_experiment(m: feat.FeatureMatrix, name: str, cfg: PipelineConfig) -> dict:
    """Standardize, SMOTE-balance, eliminate features and evaluate on the original rows.

    Data-driven failures (too few rows, one class, everything eliminated) are
    reported with ``status: failed`` rather than raised.
    """
    names = experiment_features(name)
    rows = m.predictive() if name == "predictive" else m
    target = "label_next" if name == "predictive" else "label"
    result: dict = {"experiment": name, "features": list(names), "n_rows": len(rows)}
    try:
        y = rows.labels(target)
        if len(rows) < 2 or y.min() == y.max():
            raise feat.FeatureError(f"need both classes, got {int(y.sum())} positives in {len(y)} rows")
        usable = [n for n in names if np.ptp(rows.array([n])) > 0]
        std = feat.standardize(rows, usable)
        x = std.array(usable)
        fit = mdl.rfe(
            x, y, usable, alpha=cfg.alpha, balance=True, k_neighbors=cfg.smote_neighbors,
            seed=derive_seed(cfg.seed, "smote", name),
        )
        ev = mdl.evaluate(fit.model, x[:, [usable.index(n) for n in fit.model.feature_names]], y)
        result.update(status="ok", model=fit.model.to_json(), elimination=fit.trace, evaluation=ev.to_json())
    except (feat.FeatureError, mdl.RFEError, mdl.SeparationError, mdl.SingularInformationError, ValueError) as exc:
        logger.warning("experiment %s failed: %s", name, exc)
        result.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        if isinstance(exc, mdl.RFEError):
            result["elimination"] = exc.trace
    return result
