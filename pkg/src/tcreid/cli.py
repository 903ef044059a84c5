"""Command-line entry point: ``tcreid {synth,hist,cluster,train,eval,rank}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgio
from .clustering import dbscan, labels_from_clusters, load_assignment, num_clusters, purity, save_assignment, save_multilabels
from .data import Dataset, load_dataset, save_dataset, split_query_gallery
from .evaluation import evaluate, rank_query
from .memory import MemoryBank
from .objective import Embedder
from .similarity import dump_matrix, pairwise_joint, pairwise_visual
from .synth import CameraStyles, GroundTruth, WorldConfig, generate
from .temporal import TemporalModel, estimate_histograms, smooth
from .trainer import TrainConfig, train

logger = logging.getLogger("tcreid")

META, FEATS, GT = "meta.csv", "features.bin", "ground_truth.txt"
TEST_META, TEST_FEATS = "test_meta.csv", "test_features.bin"


class CliError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg, seed: int, artifacts: list[str]) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfgio.config_hash(cfg) if cfg is not None else None,
        "seed": seed,
        "artifacts": {name: _sha256(out / name) for name in sorted(artifacts)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_train_config(path, seed) -> TrainConfig:
    cfg = cfgio.load(TrainConfig, path) if path else TrainConfig()
    if seed is not None:
        cfg = cfgio.from_mapping(TrainConfig, {**cfgio.parse_kv(cfgio.dump(cfg)), "seed": str(seed)})
    return cfg


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing file {path}")
    return path


def _load_data(data_dir: Path, split: str | None = None) -> Dataset:
    if split is None:
        split = "test" if (data_dir / TEST_META).exists() else "train"
    meta, feats = (TEST_META, TEST_FEATS) if split == "test" else (META, FEATS)
    return load_dataset(_require(data_dir / meta), _require(data_dir / feats))


def _features(d: Dataset, run: Path | None) -> np.ndarray:
    if run is None:
        raw = d.features.raw.astype(np.float64)
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return Embedder.load(_require(run / "embedder.bin")).forward(d.features.raw)


def cmd_synth(args) -> None:
    cfg = cfgio.load(WorldConfig, args.config) if args.config else WorldConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d, gt = generate(cfg)
    artifacts = [META, FEATS, GT]
    if args.holdout > 0:
        n_test = int(round(args.holdout * cfg.num_persons))
        if not 0 < n_test < cfg.num_persons:
            raise CliError(f"holdout fraction {args.holdout} leaves no train or no test persons")
        test = d.person_ids >= cfg.num_persons - n_test
        save_dataset(d.subset(np.flatnonzero(test)), out / TEST_META, out / TEST_FEATS)
        d = d.subset(np.flatnonzero(~test))
        artifacts += [TEST_META, TEST_FEATS]
    save_dataset(d, out / META, out / FEATS)
    gt.save(out / GT)
    _write_manifest(out, "synth", cfg, cfg.seed, artifacts)
    print(f"wrote {len(d)} samples to {out}")


def cmd_hist(args) -> None:
    cfg = _load_train_config(args.config, args.seed)
    d = _load_data(Path(args.data), "train")
    labels = d.person_ids if args.labels == "truth" else load_assignment(_require(Path(args.labels)))
    raw = estimate_histograms(d, labels, cfg.binning, intra_camera=cfg.intra_camera)
    raw.max_normalize = cfg.max_normalize
    tm = smooth(raw, cfg.sigma if args.sigma is None else args.sigma)
    tm.save(args.out)
    print(f"wrote temporal model ({len(tm.empty_pairs)} empty camera pairs) to {args.out}")


def cmd_cluster(args) -> None:
    cfg = _load_train_config(args.config, args.seed)
    d = _load_data(Path(args.data), "train")
    bank = MemoryBank.init(_features(d, Path(args.run) if args.run else None))
    if args.mode == "joint":
        if not args.hist:
            raise CliError("--mode joint needs --hist")
        tm = TemporalModel.load(_require(Path(args.hist)))
        sim, eps = pairwise_joint(bank, d.metas, tm, cfg.fusion, workers=cfg.workers), cfg.eps_joint
    else:
        sim, eps = pairwise_visual(bank, workers=cfg.workers), cfg.eps
    assign = dbscan(sim, eps, cfg.min_pts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_assignment(out / "clusters.csv", assign)
    save_multilabels(out / "multilabels.txt", labels_from_clusters(assign))
    artifacts = ["clusters.csv", "multilabels.txt"]
    if args.dump_matrix:
        dump_matrix(out / "similarity.bin", sim)
        artifacts.append("similarity.bin")
    _write_manifest(out, "cluster", cfg, cfg.seed, artifacts)
    msg = f"{num_clusters(assign)} clusters, {int(np.sum(assign < 0))} noise points"
    if not d.has_unknown_ids:
        msg += f", purity {purity(assign, d.person_ids):.4f}"
    print(msg)


def cmd_train(args) -> None:
    cfg = _load_train_config(args.config, args.seed)
    data = Path(args.data)
    target = _load_data(data, "train")
    source = None
    if args.source:
        source = load_dataset(_require(Path(args.source) / META), _require(Path(args.source) / FEATS), domain_tag="source")
    styles = None
    if args.styles == "truth":
        styles = GroundTruth.load(_require(data / GT)).styles
    result = train(target, cfg, source=source, styles=styles)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.embedder.save(out / "embedder.bin")
    result.bank.save(out / "bank.bin")
    (out / "log.csv").write_text(result.log_csv())
    (out / "train.cfg").write_text(cfgio.dump(cfg))
    artifacts = ["embedder.bin", "bank.bin", "log.csv", "train.cfg"]
    if result.temporal_model is not None:
        result.temporal_model.save(out / "temporal.txt")
        artifacts.append("temporal.txt")
    if result.assignment is not None:
        save_assignment(out / "clusters.csv", result.assignment)
        artifacts.append("clusters.csv")
    _write_manifest(out, "train", cfg, cfg.seed, artifacts)
    print(f"trained {cfg.total_epochs} epochs, artifacts in {out}")


def _run_temporal(run: Path, mode: str) -> TemporalModel | None:
    if mode != "joint":
        return None
    path = run / "temporal.txt"
    if not path.exists():
        raise CliError(f"--mode joint needs {path}; train with temporal clustering enabled")
    return TemporalModel.load(path)


def _run_config(run: Path) -> TrainConfig:
    path = run / "train.cfg"
    return cfgio.load(TrainConfig, path) if path.exists() else TrainConfig()


def cmd_eval(args) -> None:
    run = Path(args.run)
    d = _load_data(Path(args.data), args.split)
    seed = 0 if args.seed is None else args.seed
    query, gallery = split_query_gallery(d, args.query_fraction, seed)
    tm = _run_temporal(run, args.mode)
    rep = evaluate(query, gallery, _features(d, run), d, tm, args.mode, _run_config(run).fusion)
    out = Path(args.out) if args.out else run / f"eval_{args.mode}.csv"
    out.write_text(rep.to_csv())
    print(rep.to_csv(), end="")


def cmd_rank(args) -> None:
    run = Path(args.run)
    d = _load_data(Path(args.data), args.split)
    if not 0 <= args.query < len(d):
        raise CliError(f"query {args.query} outside [0, {len(d)})")
    gallery = [i for i in range(len(d)) if i != args.query]
    tm = _run_temporal(run, args.mode)
    ranked = rank_query(args.query, gallery, _features(d, run), d, args.mode, tm, args.topk, _run_config(run).fusion)
    print("rank,sample_id,person_id,camera_id,frame_id,score")
    for r, (sid, score) in enumerate(ranked, start=1):
        m = d.metas[sid]
        print(f"{r},{sid},{m.person_id},{m.camera_id},{m.frame_id},{score:.6f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcreid", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic camera network")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--holdout", type=float, default=0.0, help="fraction of persons written as a test split")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("hist", help="estimate and smooth camera-pair interval histograms")
    s.add_argument("--data", required=True)
    s.add_argument("--labels", default="truth", help="cluster CSV, or 'truth' for the person ids")
    s.add_argument("--config")
    s.add_argument("--sigma", type=float, help="smoothing sigma in frames")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_hist)

    s = sub.add_parser("cluster", help="cluster samples and write multi-labels")
    s.add_argument("--data", required=True)
    s.add_argument("--run", help="run directory whose embedder produces the features")
    s.add_argument("--hist")
    s.add_argument("--mode", choices=("visual", "joint"), default="visual")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--dump-matrix", action="store_true")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("train", help="train the embedder")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--source", help="labeled source dataset directory")
    s.add_argument("--styles", choices=("estimate", "truth"), default="estimate")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    for name, fn, helptext in (("eval", cmd_eval, "CMC / mAP evaluation"), ("rank", cmd_rank, "top-k list for one query")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data", required=True)
        s.add_argument("--run", required=True)
        s.add_argument("--mode", choices=("visual", "joint"), default="visual")
        s.add_argument("--split", choices=("train", "test"))
        s.add_argument("--seed", type=int)
        if name == "eval":
            s.add_argument("--query-fraction", type=float, default=0.2)
            s.add_argument("--out")
        else:
            s.add_argument("--query", type=int, required=True)
            s.add_argument("--topk", type=int, default=5)
        s.set_defaults(func=fn)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one machine-readable line, no traceback
        print(f"tcreid: error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
