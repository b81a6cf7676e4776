"""Command-line entry point: train, eval, ablate, inspect-clusters.

Configuration is one JSON file::

    {"seed": 0, "out": "runs/demo", "world_path": null,
     "synth": {...}, "train": {...}, "eval": {...}}

Every section is optional and missing keys take their defaults
(``siamsearch --print-defaults`` shows them all). Unknown keys are rejected.
The single top-level ``seed`` drives world generation, initialisation,
shuffling, the query split and detection jitter.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, fields

from .clustering import cluster_epoch, nmi, purity
from .encoder import load_checkpoint, save_checkpoint
from .errors import ConfigError, InfeasibleConfig, SiamSearchError
from .evaluation import default_gallery_ladder, evaluate_search, max_gallery_size
from .synth import SynthConfig, generate_world, load_world, split_query_gallery
from .trainer import (
    TrainConfig,
    ablation_configs,
    extract_all_features,
    final_labeling,
    train_state,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

# seeds live at the top level only
_SEED_FIELDS = {"synth": "rng_seed", "train": "seed"}


@dataclass
class EvalConfig:
    query_fraction: float = 1.0
    # None means the doubling ladder up to the largest feasible gallery
    gallery_sizes: list = None
    detection_sigma: float = 0.0

    def validate(self):
        if not 0 < self.query_fraction <= 1:
            raise ConfigError("eval.query_fraction must be in (0, 1]")
        if self.detection_sigma < 0:
            raise ConfigError("eval.detection_sigma must be >= 0")
        if self.gallery_sizes is not None:
            if not isinstance(self.gallery_sizes, list) or not all(
                isinstance(s, int) and s >= 1 for s in self.gallery_sizes
            ):
                raise ConfigError("eval.gallery_sizes must be a list of positive integers")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    world_path: str = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        synth = self.synth.to_dict()
        synth.pop("rng_seed")
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "seed": self.seed,
            "out": self.out,
            "world_path": self.world_path,
            "synth": synth,
            "train": train,
            "eval": {f.name: getattr(self.eval, f.name) for f in fields(EvalConfig)},
        }


def _section(name, cls, raw, seed):
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a JSON object")
    allowed = {f.name for f in fields(cls)} - {_SEED_FIELDS.get(name)}
    for key in raw:
        if key not in allowed:
            hint = " (set the top-level 'seed' instead)" if key == _SEED_FIELDS.get(name) else ""
            raise ConfigError(f"unknown config key '{name}.{key}'{hint}")
    kwargs = dict(raw)
    if name in _SEED_FIELDS:
        kwargs[_SEED_FIELDS[name]] = seed
    try:
        obj = cls(**kwargs)
    except (TypeError, InfeasibleConfig) as exc:
        raise ConfigError(f"bad value in section '{name}': {exc}") from None
    if name == "eval":
        obj.validate()
    return obj


def parse_config(raw, seed_override=None, out_override=None):
    """Build a RunConfig from a parsed JSON object, failing on unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in top:
            raise ConfigError(f"unknown config key '{key}'")
    seed = raw.get("seed", 0) if seed_override is None else seed_override
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    return RunConfig(
        seed=seed,
        out=out_override or raw.get("out", RunConfig.out),
        world_path=raw.get("world_path"),
        synth=_section("synth", SynthConfig, raw.get("synth", {}), seed),
        train=_section("train", TrainConfig, raw.get("train", {}), seed),
        eval=_section("eval", EvalConfig, raw.get("eval", {}), seed),
    )


def load_config(path, seed_override=None, out_override=None):
    if path is None:
        return parse_config({}, seed_override, out_override)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(raw, seed_override, out_override)


def build_world(cfg):
    if cfg.world_path:
        if not os.path.exists(cfg.world_path):
            raise ConfigError(f"world file not found: {cfg.world_path}")
        return load_world(cfg.world_path)
    return generate_world(cfg.synth)


def _load_params(path, world):
    if not path or not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    params = load_checkpoint(path)
    d_in = world.view_a().shape[1]
    if params.d_in != d_in:
        raise ConfigError(f"checkpoint expects {params.d_in}-d inputs, world provides {d_in}")
    return params


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def train_and_evaluate(world, cfg, train_cfg=None, on_epoch=None):
    """Train, then score the final model; returns ``(state, summary)``."""
    train_cfg = train_cfg or cfg.train
    state = train_state(world, train_cfg, on_epoch)
    split = split_query_gallery(world.instances, cfg.eval.query_fraction, cfg.seed)
    res = evaluate_search(state.params, world, split, None, cfg.eval.detection_sigma, cfg.seed)
    labeling = final_labeling(state)
    truth = world.identity_ids()
    summary = res.summary()
    summary.update(
        num_queries=len(split.query_ids),
        num_clusters=int(labeling.num_clusters),
        purity=float(purity(labeling.labels, truth)),
        nmi=nmi(labeling.labels, truth),
    )
    return state, summary


def cmd_train(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    world = build_world(cfg)
    metrics_path = os.path.join(cfg.out, "metrics.jsonl")
    with open(metrics_path, "w") as fh:
        def log(m):
            fh.write(json.dumps(m.to_json()) + "\n")
        state, summary = train_and_evaluate(world, cfg, on_epoch=log)
    save_checkpoint(state.params, os.path.join(cfg.out, "checkpoint.json"),
                    extra={"config": cfg.to_dict()})
    _write_json(os.path.join(cfg.out, "eval.json"), summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(cfg, checkpoint):
    world = build_world(cfg)
    params = _load_params(checkpoint, world)
    split = split_query_gallery(world.instances, cfg.eval.query_fraction, cfg.seed)
    top = max_gallery_size(split, world)
    sizes = cfg.eval.gallery_sizes or default_gallery_ladder(top)
    bad = [s for s in sizes if s > top]
    if bad:
        raise ConfigError(f"gallery sizes {bad} exceed the largest feasible gallery ({top})")
    rows = [evaluate_search(params, world, split, s, cfg.eval.detection_sigma, cfg.seed).summary()
            for s in sizes]
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "eval.json"), rows)
    _write_csv(os.path.join(cfg.out, "eval.csv"), rows)
    for row in rows:
        print(json.dumps(row))
    return EXIT_OK


def run_ablation(world, cfg):
    rows = []
    for name, variant in ablation_configs(cfg.train):
        _, summary = train_and_evaluate(world, cfg, variant)
        rows.append({
            "variant": name,
            "mAP": summary["mAP"],
            "rank1": summary["rank1"],
            "nmi": summary["nmi"],
        })
    return rows


def cmd_ablate(cfg):
    world = build_world(cfg)
    rows = run_ablation(world, cfg)
    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(os.path.join(cfg.out, "ablation.csv"), rows)
    print(f"{'variant':<15}{'mAP':>8}{'rank1':>8}{'nmi':>8}")
    for r in rows:
        print(f"{r['variant']:<15}{r['mAP']:>8.3f}{r['rank1']:>8.3f}{r['nmi']:>8.3f}")
    return EXIT_OK


def cmd_inspect_clusters(cfg, checkpoint):
    """One JSON line per instance, one per edge, then a summary line."""
    world = build_world(cfg)
    params = _load_params(checkpoint, world)
    tc = cfg.train
    feats = extract_all_features(params, world.view_a(), world.view_b(), tc.contrastive_source)
    image_ids = world.image_ids()
    labeling, table, graph = cluster_epoch(feats, image_ids, tc.filter_enabled,
                                           tc.exclude_same_image_neighbors, return_graph=True)
    adjacency = graph.neighbors()
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "clusters.jsonl"), "w") as fh:
        for rec, k, lab, adj in zip(world.instances, table.kappa, labeling.labels, adjacency):
            fh.write(json.dumps({
                "type": "instance",
                "instance_id": rec.instance_id,
                "image_id": rec.image_id,
                "first_neighbor": int(k),
                "label": int(lab),
                "degree": len(adj),
                # ground truth, for inspection only
                "identity_id": rec.identity_id,
            }) + "\n")
        for i, j in sorted(graph.edges):
            fh.write(json.dumps({"type": "edge", "i": i, "j": j}) + "\n")
        truth = world.identity_ids()
        summary = {
            "type": "summary",
            "num_instances": world.num_instances,
            "num_edges": len(graph.edges),
            "same_image_edges": sum(1 for i, j in graph.edges if image_ids[i] == image_ids[j]),
            "num_clusters": int(labeling.num_clusters),
            "filter_enabled": tc.filter_enabled,
            "purity": float(purity(labeling.labels, truth)),
            "nmi": nmi(labeling.labels, truth),
        }
        fh.write(json.dumps(summary) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="siamsearch", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default configuration as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p, needs_checkpoint=False):
        p.add_argument("--config", help="JSON config file (defaults when omitted)")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="top-level seed (overrides config 'seed')")
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="encoder checkpoint JSON")

    common(sub.add_parser("train", help="train and write metrics, checkpoint and eval summary"))
    common(sub.add_parser("eval", help="gallery-size sweep for a checkpoint"), True)
    common(sub.add_parser("ablate", help="run the component ablation grid"))
    common(sub.add_parser("inspect-clusters", help="dump neighbours, edges and labels"), True)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are 1 here
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.print_defaults:
        print(json.dumps(RunConfig().to_dict(), indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        return cmd_inspect_clusters(cfg, args.checkpoint)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SiamSearchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
