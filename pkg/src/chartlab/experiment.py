"""Config-driven experiment pipeline: generate, train, eval, sweep.

One JSON config describes the whole run: scenario specs, method and task
selections, and the training protocol.  Every stage writes its artifacts
under ``output_dir`` and records them in ``manifest.json`` with a content
hash, the producing command, and a hash of the scientific config (output
directory and job count excluded), so two runs with the same seed produce
identical manifests wherever they live.  Stages skip work whose outputs are
already recorded for the current config hash.

Methods
-------
csi2vec            triplet embedding on clean features
csi2vec-aug        triplet embedding, re-augmented features each epoch
csi2vec-aug-semi   augmented embedding + supervised position term on S'
scs-ee             per-scenario end-to-end models on clean features
ae / ae-aug        raw-CSI autoencoder embeddings (clean / augmented)

Downstream heads and all metrics are computed on the held-out test
partition; methods trained with augmentation are also evaluated on a
frozen augmentation draw of the test data.
"""

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import downstream, metrics, nn, plots
from .nn import AdamConfig
from .preprocess import FROZEN_DRAW, AugmentConfig
from .scenario import (ScenarioSpec, default_specs, generate_scenario,
                       load_scenario, meander_trajectory, save_scenario)
from .training import (Corpus, TrainConfig, build_corpus, corpus_features,
                       corpus_raw, train_autoencoder, train_csi2vec)

CONFIG_VERSION = 1
TASKS = (downstream.TASK_POS, downstream.TASK_CC_SN, downstream.TASK_CC_PCA)


class ConfigError(Exception):
    """Malformed or inconsistent experiment configuration (exit code 2)."""


class DataError(Exception):
    """Missing or mismatched data artifacts (exit code 3)."""


class NumericError(Exception):
    """Non-finite values produced by training or evaluation (exit code 4)."""


@dataclass(frozen=True)
class MethodInfo:
    name: str
    trainer: str        # "embed" | "ae" | "ee"
    augmented: bool
    semi: bool = False


METHOD_INFO = {
    "csi2vec": MethodInfo("csi2vec", "embed", False),
    "csi2vec-aug": MethodInfo("csi2vec-aug", "embed", True),
    "csi2vec-aug-semi": MethodInfo("csi2vec-aug-semi", "embed", True, semi=True),
    "scs-ee": MethodInfo("scs-ee", "ee", False),
    "ae": MethodInfo("ae", "ae", False),
    "ae-aug": MethodInfo("ae-aug", "ae", True),
}


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: Path
    scenarios: list              # ScenarioSpec or Path entries
    methods: tuple
    tasks: tuple
    embed_dims: tuple
    train: TrainConfig
    jobs: int = 1

    def canonical_doc(self) -> dict:
        """Scientific content only; excludes output_dir and jobs."""
        train = dataclasses.asdict(self.train)
        train["t_close"] = {str(k): v for k, v in sorted(self.train.t_close.items())}
        scenarios = [s.to_dict() if isinstance(s, ScenarioSpec) else str(s)
                     for s in self.scenarios]
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "scenarios": scenarios,
            "methods": list(self.methods),
            "tasks": list(self.tasks),
            "embed_dims": list(self.embed_dims),
            "train": train,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_doc(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def default_config_doc(seed: int = 0, output_dir: str = "runs/default") -> dict:
    """Full default experiment: three scenarios, all methods, all tasks."""
    return {
        "version": CONFIG_VERSION,
        "seed": seed,
        "output_dir": output_dir,
        "scenarios": [s.to_dict() for s in default_specs(seed)],
        "methods": list(METHOD_INFO),
        "tasks": list(TASKS),
        "embed_dims": [2, 4, 8, 16],
        "train": {
            "embed_dim": 16,
            "margin": 10.0,
            "n_train_batches": 240,
            "n_test_batches": 120,
            "batch_size": 100,
            "epochs": 45,
            "head_epochs": 40,
            "hidden": 32,
            "c_trunc": 16,
            "out_dim": 2,
            "train_fraction": 0.8,
            "t_close": {"1": 2.0, "2": 10.0, "3": 2.0},
            "semi_scenarios": [2],
            # 3e-3 converges in desk-scale epoch budgets; the AdamConfig
            # default stays at the conventional 1e-3
            "adam": {"learning_rate": 3e-3, "beta1": 0.9, "beta2": 0.999,
                     "epsilon": 1e-8},
        },
        "augment": {"enable": True, "q": 0.2, "snr_db_range": [10.0, 21.0]},
    }


def _set_dotted(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def parse_config(doc: dict, *, overrides=(), seed=None, jobs=None) -> ExperimentConfig:
    """Validate a raw config document (plus CLI overrides) into a config."""
    doc = json.loads(json.dumps(doc))  # deep copy, JSON-normalized
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_dotted(doc, key.strip(), value)
    if seed is not None:
        doc["seed"] = seed
    try:
        if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {doc.get('version')}")
        top_seed = int(doc.get("seed", 0))
        scenarios = []
        for entry in doc.get("scenarios", []):
            if isinstance(entry, str):
                scenarios.append(Path(entry))
            else:
                spec = ScenarioSpec.from_dict(entry)
                spec.validate()
                scenarios.append(spec)
        if not scenarios:
            raise ConfigError("config needs at least one scenario")
        methods = tuple(doc.get("methods", list(METHOD_INFO)))
        tasks = tuple(doc.get("tasks", list(TASKS)))
        if not methods or not tasks:
            raise ConfigError("methods and tasks must be nonempty")
        for m in methods:
            if m not in METHOD_INFO:
                raise ConfigError(f"unknown method {m!r}")
        for t in tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}")
        embed_dims = tuple(int(d) for d in doc.get("embed_dims", [16]))
        if any(d < 1 for d in embed_dims):
            raise ConfigError("embed_dims must be positive")

        tdoc = dict(doc.get("train", {}))
        adoc = dict(doc.get("augment", {}))
        adoc.setdefault("seed", top_seed)
        augment = AugmentConfig(
            enable=bool(adoc.get("enable", True)),
            q=float(adoc.get("q", 0.2)),
            snr_db_range=tuple(adoc.get("snr_db_range", (10.0, 21.0))),
            seed=int(adoc["seed"]),
        )
        adam = AdamConfig(**tdoc.pop("adam", {}))
        t_close = {int(k): float(v) for k, v in tdoc.pop("t_close", {}).items()}
        semi = tuple(int(s) for s in tdoc.pop("semi_scenarios", ()))
        tdoc.setdefault("seed", top_seed)
        head_epochs = tdoc.pop("head_epochs", None)
        train = TrainConfig(adam=adam, augment=augment, t_close=t_close,
                            semi_scenarios=semi,
                            head_epochs=None if head_epochs is None else int(head_epochs),
                            **{k: type(getattr(TrainConfig(), k))(v)
                               for k, v in tdoc.items()})
        train.validate()
        config = ExperimentConfig(
            seed=top_seed,
            output_dir=Path(doc.get("output_dir", "runs/experiment")),
            scenarios=scenarios,
            methods=methods,
            tasks=tasks,
            embed_dims=embed_dims,
            train=train,
            jobs=int(jobs if jobs is not None else doc.get("jobs", 1)),
        )
    except ConfigError:
        raise
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    return config


def load_config(path, *, overrides=(), seed=None, jobs=None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, overrides=overrides, seed=seed, jobs=jobs)


class Manifest:
    """Content-hash registry of every artifact a run produces."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        self.entries = {}
        if self.path.exists():
            self.entries = json.loads(self.path.read_text()).get("entries", {})

    def record(self, path: Path, command: str, config_hash: str) -> None:
        rel = str(Path(path).relative_to(self.root))
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.entries[rel] = {"sha256": digest, "command": command,
                             "config_hash": config_hash}

    def is_current(self, path: Path, config_hash: str) -> bool:
        rel = str(Path(path).relative_to(self.root))
        entry = self.entries.get(rel)
        return bool(entry and entry["config_hash"] == config_hash
                    and Path(path).exists())

    def save(self) -> None:
        doc = {"version": 1, "entries": dict(sorted(self.entries.items()))}
        self.path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _pmap(fn, items, jobs: int):
    """Order-preserving map, threaded when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


class Experiment:
    """Binds a config to its artifact tree and runs the four stages."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.root = Path(config.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(self.root)
        self.hash = config.config_hash()
        self._datasets = None
        self._corpus = None
        self._inputs = {}      # (kind, augmented, part) -> {sid: matrix}
        self._embeddings = {}  # (method, part) -> {sid: matrix}

    # --- paths ---------------------------------------------------------

    def scenario_path(self, spec: ScenarioSpec) -> Path:
        return self.root / "scenarios" / f"scenario__{spec.scenario_id}.c2vd"

    def _ckpt(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.ckpt"

    def _head_ckpt(self, method: str, sid: int, task: str) -> Path:
        return self.root / "heads" / f"{method}__s{sid}__{task}.ckpt"

    def _log_path(self, name: str) -> Path:
        return self.root / "logs" / f"{name}.csv"

    # --- shared loading --------------------------------------------------

    def _scenario_files(self):
        out = []
        for entry in self.config.scenarios:
            out.append(Path(entry) if isinstance(entry, Path)
                       else self.scenario_path(entry))
        return out

    def datasets(self):
        if self._datasets is None:
            loaded = []
            for path in self._scenario_files():
                if not path.exists():
                    raise DataError(f"missing scenario file {path}; run generate first")
                try:
                    loaded.append(load_scenario(path))
                except ValueError as exc:
                    raise DataError(str(exc)) from exc
            self._datasets = loaded
        return self._datasets

    def corpus(self) -> Corpus:
        if self._corpus is None:
            self._corpus = build_corpus(self.datasets(),
                                        self.config.train.train_fraction)
        return self._corpus

    def _method_inputs(self, method: str, part: str) -> dict:
        """Feature (or raw-CSI) matrices per scenario for one partition."""
        info = METHOD_INFO[method]
        kind = "raw" if info.trainer == "ae" else "feat"
        key = (kind, info.augmented, part)
        if key not in self._inputs:
            fn = corpus_raw if kind == "raw" else corpus_features
            self._inputs[key] = fn(self.corpus(), self.config.train,
                                   info.augmented, FROZEN_DRAW, part)
        return self._inputs[key]

    def _method_embeddings(self, method: str, part: str) -> dict:
        """Frozen per-scenario embeddings (EE methods have none)."""
        info = METHOD_INFO[method]
        key = (method, part)
        if key not in self._embeddings:
            name = f"enc__{method}" if info.trainer == "ae" else f"embed__{method}"
            path = self._ckpt(name)
            if not path.exists():
                raise DataError(f"missing checkpoint {path}; run train first")
            model = nn.load_model(path)
            inputs = self._method_inputs(method, part)
            self._embeddings[key] = {sid: nn.forward(model, x)
                                     for sid, x in inputs.items()}
        return self._embeddings[key]

    def _test_meta(self, sid: int):
        corpus = self.corpus()
        data = corpus.datasets[sid]
        idx = corpus.test_idx[sid]
        return idx, data.timestamps[idx], data.positions[idx]

    def _write_log(self, name: str, columns, rows, command: str) -> None:
        path = self._log_path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(",".join(("epoch", "batch") + tuple(columns)) + "\n")
            for row in rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")
        self.manifest.record(path, command, self.hash)

    def _save_model(self, model, path: Path, command: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        nn.save_model(model, path)
        self.manifest.record(path, command, self.hash)

    # --- stages ----------------------------------------------------------

    def run_generate(self):
        """Write scenario containers for every inline spec."""
        inline = [s for s in self.config.scenarios if isinstance(s, ScenarioSpec)]
        try:
            for spec in inline:
                spec.validate()   # all specs checked before any file is written
                meander_trajectory(spec.area, spec.traj_spacing_m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        written = []
        for spec in inline:
            path = self.scenario_path(spec)
            if self.manifest.is_current(path, self.hash):
                continue
            path.parent.mkdir(parents=True, exist_ok=True)
            data = generate_scenario(spec)
            save_scenario(data, path)
            self.manifest.record(path, "generate", self.hash)
            sidecar = Path(str(path) + ".json")
            self.manifest.record(sidecar, "generate", self.hash)
            written.append(path)
        self.manifest.save()
        return written

    def _train_embedding(self, method: str):
        info = METHOD_INFO[method]
        cfg = self.config.train
        if info.trainer == "embed":
            out = self._ckpt(f"embed__{method}")
            if not self.manifest.is_current(out, self.hash):
                res = train_csi2vec(self.datasets(), cfg,
                                    augmented=info.augmented, semi=info.semi)
                self._save_model(res.model, out, "train")
                self._write_log(f"train__{method}", res.loss_columns, res.log, "train")
                self._embeddings.pop((method, "train"), None)
                self._embeddings.pop((method, "test"), None)
        elif info.trainer == "ae":
            enc, dec = self._ckpt(f"enc__{method}"), self._ckpt(f"dec__{method}")
            if not (self.manifest.is_current(enc, self.hash)
                    and self.manifest.is_current(dec, self.hash)):
                res = train_autoencoder(self.datasets(), cfg,
                                        augmented=info.augmented)
                self._save_model(res.model, enc, "train")
                self._save_model(res.decoder, dec, "train")
                self._write_log(f"train__{method}", res.loss_columns, res.log, "train")
                self._embeddings.pop((method, "train"), None)
                self._embeddings.pop((method, "test"), None)

    def _train_heads(self, method: str):
        info = METHOD_INFO[method]
        cfg = self.config.train
        corpus = self.corpus()
        jobs = []
        for sid in corpus.scenario_ids:
            for task in self.config.tasks:
                if task == downstream.TASK_CC_PCA:
                    continue  # computed at eval time, nothing to persist
                path = self._head_ckpt(method, sid, task)
                if not self.manifest.is_current(path, self.hash):
                    jobs.append((sid, task, path))
        if not jobs:
            return

        train_pos = {sid: corpus.datasets[sid].positions[corpus.train_idx[sid]]
                     for sid in corpus.scenario_ids}

        def _one(job):
            sid, task, path = job
            meta = self._test_meta(sid)
            stream = (0, sid, TASKS.index(task))
            if info.trainer == "ee":
                feats = self._method_inputs(method, "train")[sid]
                feats_te = self._method_inputs(method, "test")[sid]
                model, chart, log = downstream.train_scs_ee(
                    feats, train_pos[sid] if task == downstream.TASK_POS else None,
                    feats_te, task, cfg, stream, meta)
            else:
                emb = self._method_embeddings(method, "train")[sid]
                emb_te = self._method_embeddings(method, "test")[sid]
                if task == downstream.TASK_POS:
                    model, chart, log = downstream.train_pos_head(
                        emb, train_pos[sid], emb_te, cfg, stream, meta)
                else:
                    model, chart, log = downstream.train_cc_siamese(
                        emb, emb_te, cfg, stream, meta)
            return job, model, log

        # embeddings must be materialized before threads share the caches
        if info.trainer != "ee":
            self._method_embeddings(method, "train")
            self._method_embeddings(method, "test")
        else:
            self._method_inputs(method, "train")
            self._method_inputs(method, "test")
        for (sid, task, path), model, log in _pmap(_one, jobs, self.config.jobs):
            self._save_model(model, path, "train")
            self._write_log(f"head__{method}__s{sid}__{task}",
                            ("loss",), log, "train")

    def run_train(self):
        """Train every selected method plus its per-scenario heads."""
        try:
            for method in self.config.methods:
                self._train_embedding(method)
                self._train_heads(method)
        except FloatingPointError as exc:
            raise NumericError(str(exc)) from exc
        self.manifest.save()

    def _method_dim(self, method: str) -> int:
        if METHOD_INFO[method].trainer == "ee":
            return self.corpus().maxdims.feature_dim(self.config.train.c_trunc)
        return self.config.train.embed_dim

    def _eval_chart(self, method: str, sid: int, task: str) -> downstream.ChartPoints:
        info = METHOD_INFO[method]
        cfg = self.config.train
        meta = self._test_meta(sid)
        if info.trainer == "ee":
            inputs = self._method_inputs(method, "test")[sid]
        else:
            inputs = self._method_embeddings(method, "test")[sid]
        if task == downstream.TASK_CC_PCA:
            return downstream.chart_cc_pca(inputs, cfg, meta)
        path = self._head_ckpt(method, sid, task)
        if not path.exists():
            raise DataError(f"missing head checkpoint {path}; run train first")
        model = nn.load_model(path)
        pred = nn.forward(model, inputs)
        if task == downstream.TASK_CC_SN:
            return downstream.ChartPoints(metrics.normalize_chart(pred), "arbitrary",
                                          *meta[:2], meta[2])
        return downstream.ChartPoints(pred, "metric", *meta[:2], meta[2])

    def run_eval(self):
        """Metric tables plus chart scatter plots per scenario."""
        corpus = self.corpus()
        results = {}
        for sid in corpus.scenario_ids:
            data = corpus.datasets[sid]
            truth = self._test_meta(sid)[2]
            color = _color_values(truth)
            truth_plot = self.root / "plots" / f"truth__s{sid}.svg"
            truth_plot.parent.mkdir(parents=True, exist_ok=True)
            plots.scatter_svg(truth_plot, truth, color,
                              title=f"{data.spec.name}: ground truth",
                              markers=np.asarray(data.spec.ap_positions))
            self.manifest.record(truth_plot, "eval", self.hash)

            rows = []
            for method in self.config.methods:
                for task in self.config.tasks:
                    try:
                        chart = self._eval_chart(method, sid, task)
                        chart.validate()
                        report = metrics.evaluate_all(
                            chart.points, truth,
                            metric_coords=(task == downstream.TASK_POS),
                            seed=self.config.seed)
                    except FloatingPointError as exc:
                        raise NumericError(
                            f"{method}/{task}/scenario {sid}: {exc}") from exc
                    rows.append((method, task, self._method_dim(method), report))
                    results[(sid, method, task)] = report

                    chart_csv = self.root / "tables" / \
                        f"chart__s{sid}__{method}__{task}.csv"
                    chart_csv.parent.mkdir(parents=True, exist_ok=True)
                    downstream.write_chart_csv(chart, chart_csv)
                    self.manifest.record(chart_csv, "eval", self.hash)
                    if task in (downstream.TASK_POS, downstream.TASK_CC_SN):
                        svg = self.root / "plots" / \
                            f"chart__s{sid}__{method}__{task}.svg"
                        plots.scatter_svg(svg, chart.points, color,
                                          title=f"{data.spec.name} {method} {task}")
                        self.manifest.record(svg, "eval", self.hash)

            table = self.root / "tables" / f"metrics__s{sid}.csv"
            with open(table, "w") as fh:
                fh.write("method,task,dim,mde_m,p95_m,tw,ct,ks,rd\n")
                for method, task, dim, rep in rows:
                    mde = "" if rep.mde_m is None else repr(rep.mde_m)
                    p95 = "" if rep.p95_m is None else repr(rep.p95_m)
                    fh.write(f"{method},{task},{dim},{mde},{p95},"
                             f"{rep.tw!r},{rep.ct!r},{rep.ks!r},{rep.rd!r}\n")
            self.manifest.record(table, "eval", self.hash)
        self.manifest.save()
        return results

    def run_sweep(self):
        """Retrain embeddings over ``embed_dims`` and chart POS MDE vs dim."""
        swept = [m for m in self.config.methods
                 if METHOD_INFO[m].trainer != "ee"]
        if not swept or not self.config.embed_dims:
            return {}
        corpus = self.corpus()
        cfg = self.config.train
        results = {}  # (method, dim, sid) -> mde
        try:
            for dim in self.config.embed_dims:
                cfg_d = dataclasses.replace(cfg, embed_dim=dim)
                for method in swept:
                    info = METHOD_INFO[method]
                    if info.trainer == "ae":
                        res = train_autoencoder(self.datasets(), cfg_d, info.augmented)
                    else:
                        res = train_csi2vec(self.datasets(), cfg_d,
                                            augmented=info.augmented, semi=info.semi)
                    # frozen features do not depend on the embedding dim
                    feats = {part: self._method_inputs(method, part)
                             for part in ("train", "test")}

                    def _one(sid):
                        emb = nn.forward(res.model, feats["train"][sid])
                        emb_te = nn.forward(res.model, feats["test"][sid])
                        pos = corpus.datasets[sid].positions[corpus.train_idx[sid]]
                        meta = self._test_meta(sid)
                        _, chart, _ = downstream.train_pos_head(
                            emb, pos, emb_te, cfg_d, (1, sid, dim), meta)
                        return metrics.mde(chart.points, meta[2])
                    mdes = _pmap(_one, corpus.scenario_ids, self.config.jobs)
                    for sid, val in zip(corpus.scenario_ids, mdes):
                        results[(method, dim, sid)] = val
        except FloatingPointError as exc:
            raise NumericError(str(exc)) from exc

        sweep_dir = self.root / "sweep"
        sweep_dir.mkdir(parents=True, exist_ok=True)
        dims = list(self.config.embed_dims)
        for sid in corpus.scenario_ids:
            csv_path = sweep_dir / f"sweep__s{sid}.csv"
            with open(csv_path, "w") as fh:
                fh.write("method,embed_dim,mde_m\n")
                for method in swept:
                    for dim in dims:
                        fh.write(f"{method},{dim},{results[(method, dim, sid)]!r}\n")
            self.manifest.record(csv_path, "sweep", self.hash)
            svg_path = sweep_dir / f"sweep__s{sid}.svg"
            series = [(m, [results[(m, d, sid)] for d in dims]) for m in swept]
            plots.line_svg(svg_path, dims, series,
                           title=f"scenario {sid}: POS error vs embedding dim",
                           xlabel="embedding dimension", ylabel="MDE [m]")
            self.manifest.record(svg_path, "sweep", self.hash)
        self.manifest.save()
        return results

    def run_all(self):
        self.run_generate()
        self.run_train()
        results = self.run_eval()
        self.run_sweep()
        return results


def _color_values(truth: np.ndarray) -> np.ndarray:
    """First ground-truth coordinate mapped to [0, 1] for the color ramp."""
    x = truth[:, 0]
    span = x.max() - x.min()
    return (x - x.min()) / span if span > 0 else np.zeros_like(x)
