"""Epoch loop: extract features, cluster, refresh the bank, then SGD over batches."""

import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .clustering import cluster_epoch, nmi, purity
from .encoder import add_grads, backward, forward, init_params, sgd_step
from .errors import ConfigError
from .losses import total_loss
from .memory import MemoryBank
from .synth import make_rng

CONTRASTIVE_CHOICES = ("cluster", "instance", None)
SOURCE_CHOICES = ("fused", "search", "instance")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    lr: float = 0.01
    lr_drop_epoch: int = 40
    sgd_momentum: float = 0.9
    weight_decay: float = 5e-4
    gamma: float = 16.0
    lam: float = 0.2
    temperature: float = 0.1
    use_ins: bool = True
    use_int: bool = True
    # "cluster" for pseudo-label contrast, "instance" for the IR baseline, None for off
    contrastive: str = "cluster"
    # which embedding feeds the bank, clustering and contrastive loss
    contrastive_source: str = "fused"
    filter_enabled: bool = True
    exclude_same_image_neighbors: bool = False
    w_ins: float = 1.0
    w_int: float = 1.0
    w_clu: float = 1.0
    int_reduction: str = "mean"
    d_hidden: int = 64
    d_emb: int = 16
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self, num_instances=None):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if num_instances is not None and self.batch_size > num_instances:
            raise ConfigError(f"batch_size {self.batch_size} exceeds {num_instances} instances")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if not 0 <= self.lam <= 1:
            raise ConfigError("lam must be in [0, 1]")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.contrastive not in CONTRASTIVE_CHOICES:
            raise ConfigError(f"contrastive must be one of {CONTRASTIVE_CHOICES}")
        if self.contrastive_source not in SOURCE_CHOICES:
            raise ConfigError(f"contrastive_source must be one of {SOURCE_CHOICES}")
        if self.int_reduction not in ("sum", "mean"):
            raise ConfigError("int_reduction must be 'sum' or 'mean'")

    def lr_at(self, epoch):
        return self.lr * (0.1 if epoch >= self.lr_drop_epoch else 1.0)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochMetrics:
    epoch: int
    loss_ins: float
    loss_int: float
    loss_clu: float
    loss_total: float
    num_clusters: int
    purity: float = None
    nmi: float = None
    wall_clock_seconds: float = 0.0

    WALL_CLOCK_KEYS = ("wall_clock_seconds",)

    def to_json(self, include_wall_clock=True):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if not include_wall_clock:
            for k in self.WALL_CLOCK_KEYS:
                d.pop(k)
        return d


@dataclass
class TrainingData:
    """Everything the training path may see: two views and image ids, no identities."""

    view_a: np.ndarray
    view_b: np.ndarray
    image_ids: np.ndarray

    @classmethod
    def from_world(cls, world):
        return cls(world.view_a(), world.view_b(), world.image_ids())

    def __len__(self):
        return self.view_a.shape[0]


@dataclass
class TrainState:
    params: object
    bank: MemoryBank
    data: TrainingData
    cfg: TrainConfig
    rng: np.random.Generator
    epoch: int = 0
    labels: object = None
    # ground-truth identities, used for metrics only
    eval_identities: np.ndarray = None
    history: list = field(default_factory=list)


def extract_all_features(params, view_a, view_b, source="fused"):
    """Per-instance embedding: mean of both views' outputs by default."""
    if source == "search":
        return forward(params, view_a)[0]
    if source == "instance":
        return forward(params, view_b)[0]
    return 0.5 * (forward(params, view_a)[0] + forward(params, view_b)[0])


def init_state(data, cfg, eval_identities=None, params=None):
    cfg.validate(len(data))
    if params is None:
        params = init_params(data.view_a.shape[1], cfg.d_hidden, cfg.d_emb, cfg.seed)
    bank = MemoryBank(len(data), params.d_emb, cfg.lam)
    return TrainState(params, bank, data, cfg, make_rng(cfg.seed, "shuffle"),
                      eval_identities=eval_identities)


def _any_loss_enabled(cfg):
    return bool((cfg.use_ins and cfg.w_ins) or (cfg.use_int and cfg.w_int)
                or (cfg.contrastive and cfg.w_clu))


def run_epoch(state):
    cfg, data, params, bank = state.cfg, state.data, state.params, state.bank
    t0 = time.perf_counter()

    feats = extract_all_features(params, data.view_a, data.view_b, cfg.contrastive_source)
    labeling = cluster_epoch(feats, data.image_ids, cfg.filter_enabled,
                             cfg.exclude_same_image_neighbors)
    state.labels = labeling
    bank.refresh(feats)

    lr = cfg.lr_at(state.epoch)
    perm = state.rng.permutation(len(data))
    sums = {"ins": 0.0, "int": 0.0, "clu": 0.0, "total": 0.0}
    n_batches = 0
    train = _any_loss_enabled(cfg)
    for start in range(0, len(data), cfg.batch_size):
        ids = perm[start:start + cfg.batch_size]
        F_a, cache_a = forward(params, data.view_a[ids])
        F_b, cache_b = forward(params, data.view_b[ids])
        out = total_loss(
            F_a, F_b, bank, labeling, ids, cfg.gamma, cfg.temperature,
            w_ins=cfg.w_ins if cfg.use_ins else 0.0,
            # a single-instance batch has no similarity structure to compare
            w_int=cfg.w_int if cfg.use_int and len(ids) >= 2 else 0.0,
            w_clu=cfg.w_clu,
            contrastive=cfg.contrastive,
            contrastive_source=cfg.contrastive_source,
            int_reduction=cfg.int_reduction,
        )
        if train:
            grads_a, _ = backward(params, cache_a, out.grad_Fa)
            grads_b, _ = backward(params, cache_b, out.grad_Fb)
            sgd_step(params, add_grads(grads_a, grads_b), lr, cfg.sgd_momentum, cfg.weight_decay)
        if cfg.contrastive_source == "search":
            f = F_a
        elif cfg.contrastive_source == "instance":
            f = F_b
        else:
            f = 0.5 * (F_a + F_b)
        bank.update_batch(ids, f)
        for k in ("ins", "int", "clu"):
            sums[k] += out.parts[k]
        sums["total"] += out.value
        n_batches += 1

    metrics = EpochMetrics(
        epoch=state.epoch,
        loss_ins=sums["ins"] / n_batches,
        loss_int=sums["int"] / n_batches,
        loss_clu=sums["clu"] / n_batches,
        loss_total=sums["total"] / n_batches,
        num_clusters=int(labeling.num_clusters),
    )
    if state.eval_identities is not None:
        metrics.purity = float(purity(labeling.labels, state.eval_identities))
        metrics.nmi = nmi(labeling.labels, state.eval_identities)
    metrics.wall_clock_seconds = time.perf_counter() - t0
    state.history.append(metrics)
    state.epoch += 1
    return metrics


def final_labeling(state):
    """Cluster with the current parameters, as the next epoch would."""
    cfg = state.cfg
    feats = extract_all_features(state.params, state.data.view_a, state.data.view_b,
                                 cfg.contrastive_source)
    return cluster_epoch(feats, state.data.image_ids, cfg.filter_enabled,
                         cfg.exclude_same_image_neighbors)


def train(world, cfg, callback=None):
    """Run ``cfg.epochs`` epochs on ``world``; returns ``(params, history)``.

    Only the two views and image ids reach the training path. Identity labels
    are handed to the metric computation and nowhere else.
    """
    state = train_state(world, cfg, callback)
    return state.params, state.history


def train_state(world, cfg, callback=None):
    data = TrainingData.from_world(world)
    state = init_state(data, cfg, eval_identities=world.identity_ids())
    for _ in range(cfg.epochs):
        m = run_epoch(state)
        if callback is not None:
            callback(m)
    return state


# Component grid: search-path IR, then adding L_ins, L_int, the cluster loss,
# and finally the full method without the same-image filter.
ABLATION_VARIANTS = (
    ("search_ir", dict(use_ins=False, use_int=False, contrastive="instance",
                       contrastive_source="search")),
    ("ins_ir", dict(use_int=False, contrastive="instance")),
    ("ins_int_ir", dict(contrastive="instance")),
    ("full", {}),
    ("full_nofilter", dict(filter_enabled=False)),
)


def ablation_configs(base):
    """``[(name, TrainConfig)]`` for the component grid built on ``base``."""
    return [(name, replace(base, **overrides)) for name, overrides in ABLATION_VARIANTS]
