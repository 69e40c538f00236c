"""Desk-scale retrieval experiment: synthetic data, training, checkpoints, Recall@K."""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as model_lib
from .config import RunConfig, SCHEMA_VERSION, rng_stream, stream_seed
from .exceptions import InputError, NumericError
from .grad import sgd_step
from .metric import build_pairs, mine_semi_hard, triplet_loss


# -- synthetic data ------------------------------------------------------------------


@dataclass
class SyntheticDatasetSpec:
    """Generator settings for instance-labelled feature sets.

    Each instance owns one prototype direction per latent mode and a fixed
    template of ``locations`` local features. Location ``m`` of the template
    is ``mode_center[k] + cluster_spread * g_m * prototype[k]`` where ``k`` is
    the location's mode and ``g_m`` a scalar coefficient. A sample adds
    ``noise_scale`` times isotropic Gaussian noise to the template.

    ``direction_pool > 0`` draws prototypes from a small shared pool, so some
    instances use the same directions with the modes swapped. ``centered``
    makes the coefficients balanced signs within each mode, which removes
    the instance signal from the mean feature and from the covariance pooled
    over all locations; only mode-conditional statistics tell swapped
    instances apart.
    """

    n_instances: int = 16
    samples_per_instance: int = 8
    raw_dim: int = 64
    locations: int = 16
    cluster_spread: float = 1.0
    noise_scale: float = 0.2
    seed: int = 0
    n_modes: int = 2
    direction_pool: int = 0
    centered: bool = False

    def validate(self):
        if self.n_instances < 2 or self.samples_per_instance < 2:
            raise InputError("need n_instances >= 2 and samples_per_instance >= 2")
        if self.raw_dim < 1 or self.locations < 1 or self.n_modes < 1:
            raise InputError("raw_dim, locations and n_modes must be >= 1")
        if self.cluster_spread < 0 or self.noise_scale < 0:
            raise InputError("cluster_spread and noise_scale must be non-negative")
        if self.direction_pool:
            combos = math.perm(self.direction_pool, self.n_modes)
            if combos < self.n_instances:
                raise InputError(f"direction_pool={self.direction_pool} cannot give "
                                 f"{self.n_instances} distinct instances")
        return self

    @classmethod
    def from_config(cls, cfg):
        d = cfg.dataset
        return cls(n_instances=d.n_instances, samples_per_instance=d.samples_per_instance,
                   raw_dim=d.raw_dim, locations=d.locations, cluster_spread=d.cluster_spread,
                   noise_scale=d.noise_scale, seed=stream_seed(cfg.seed, "dataset"),
                   n_modes=d.n_modes, direction_pool=d.direction_pool, centered=d.centered)


@dataclass
class Dataset:
    features: np.ndarray  # n x d_in x M
    labels: np.ndarray  # n
    is_train: np.ndarray  # n, bool

    @property
    def train(self):
        return self.features[self.is_train], self.labels[self.is_train]

    @property
    def test(self):
        return self.features[~self.is_train], self.labels[~self.is_train]


def _unit_rows(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _prototype_indices(spec, rng):
    """Pool indices (one per mode) for every instance, all distinct tuples."""
    pool, k = spec.direction_pool, spec.n_modes
    if not pool:
        return np.arange(spec.n_instances * k).reshape(spec.n_instances, k)
    # ordered tuples of distinct pool entries, in a seed-dependent order
    tuples = [t for t in np.ndindex(*([pool] * k)) if len(set(t)) == k]
    order = rng.permutation(len(tuples))[:spec.n_instances]
    return np.array([tuples[i] for i in sorted(order)])


def generate_dataset(spec):
    """Deterministic synthetic dataset; half of each instance's samples go to training."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    m, k = spec.locations, spec.n_modes
    centers = _unit_rows(rng, k, spec.raw_dim)
    proto_idx = _prototype_indices(spec, rng)
    n_dirs = spec.direction_pool or spec.n_instances * k
    directions = _unit_rows(rng, n_dirs, spec.raw_dim)
    layout = np.arange(m) % k

    features, labels = [], []
    for c in range(spec.n_instances):
        if spec.centered:
            coef = np.empty(m)
            for mode in range(k):
                slots = np.flatnonzero(layout == mode)
                signs = np.where(np.arange(len(slots)) % 2 == 0, 1.0, -1.0)
                coef[slots] = rng.permutation(signs)
        else:
            coef = rng.standard_normal(m)
        protos = directions[proto_idx[c]]  # k x d_in
        template = centers[layout] + spec.cluster_spread * coef[:, None] * protos[layout]
        for _ in range(spec.samples_per_instance):
            noise = rng.standard_normal(template.shape)
            features.append((template + spec.noise_scale * noise).T)
            labels.append(c)
    labels = np.array(labels)
    is_train = np.zeros(len(labels), dtype=bool)
    for c in range(spec.n_instances):
        idx = np.flatnonzero(labels == c)
        is_train[idx[: (len(idx) + 1) // 2]] = True
    return Dataset(np.stack(features), labels, is_train)


# -- evaluation ----------------------------------------------------------------------


@dataclass
class EvalResult:
    recall_at: dict
    n_queries: int
    clamped: dict = field(default_factory=dict)

    def to_dict(self):
        return {"recall_at": {str(k): v for k, v in self.recall_at.items()},
                "n_queries": self.n_queries,
                "clamped": {str(k): v for k, v in self.clamped.items()}}


def recall_at_k(query, query_labels, gallery=None, gallery_labels=None, ks=(1,)):
    """Exact Recall@K by squared Euclidean distance.

    With no gallery the queries are searched against themselves and each
    query's own entry is excluded. Ties in distance go to the lower index.
    K beyond the gallery size is clamped (recorded in ``clamped``).
    """
    query = np.asarray(query, dtype=np.float64)
    query_labels = np.asarray(query_labels)
    self_search = gallery is None
    if self_search:
        gallery, gallery_labels = query, query_labels
    gallery = np.asarray(gallery, dtype=np.float64)
    gallery_labels = np.asarray(gallery_labels)
    if len(gallery) == 0:
        raise InputError("empty gallery")
    diff = query[:, None, :] - gallery[None, :, :]
    dist = np.sum(diff * diff, axis=2)
    if self_search:
        np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    if self_search:
        order = order[:, :-1]  # the excluded self entry sorts last
    hits = gallery_labels[order] == query_labels[:, None]
    available = order.shape[1]
    recall, clamped = {}, {}
    for k in ks:
        used = min(int(k), available)
        if used != k:
            clamped[int(k)] = used
        recall[int(k)] = float(np.mean(np.any(hits[:, :used], axis=1)))
    return EvalResult(recall, len(query), clamped)


# -- training ------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    spec: model_lib.ModelSpec
    log: list
    step: int
    epoch: int
    initial_params: dict = field(default=None, repr=False)


def _pair_batches(labels, batch_pairs, rng):
    """Endless stream of ``(indices, epoch)`` batches built from shuffled instance pairs."""
    eligible = [lab for lab in np.unique(labels) if np.sum(labels == lab) >= 2]
    keep = np.flatnonzero(np.isin(labels, eligible))
    epoch = 0
    while True:
        if len(keep) == 0:
            yield np.zeros(0, dtype=np.int64), epoch
            continue
        pairs = build_pairs(labels[keep], int(rng.integers(2**31 - 1)))
        for start in range(0, len(pairs), batch_pairs):
            chunk = pairs[start:start + batch_pairs]
            yield keep[np.array(chunk, dtype=np.int64).reshape(-1)], epoch
        epoch += 1


def train(config, dataset=None, log_path=None, keep_initial=False):
    """SGD on the triplet loss with semi-hard mining.

    Each step pools a batch of instance pairs, mines one negative per
    ordered same-instance pair, and applies one SGD update. Steps with no
    valid triplet leave the parameters untouched.
    """
    config.validate()
    if dataset is None:
        dataset = generate_dataset(SyntheticDatasetSpec.from_config(config))
    feats, labels = dataset.train
    spec = model_lib.ModelSpec.from_config(config, d_in=feats.shape[1])
    params = model_lib.init_params(spec, feats, rng_stream(config.seed, "init"),
                                   init_iters=config.codebook.init_iters)
    initial = {k: v.copy() for k, v in params.items()} if keep_initial else None
    o = config.optim
    frozen = tuple(o.freeze)
    unknown = set(frozen) - set(spec.tensor_names())
    if unknown:
        raise InputError(f"cannot freeze unknown tensors {sorted(unknown)}")
    batches = _pair_batches(labels, o.batch_size // 2, rng_stream(config.seed, "batches"))
    records = []
    epoch = 0
    log_fh = open(log_path, "w") if log_path else None
    try:
        for step in range(o.steps):
            idx, epoch = next(batches)
            loss, n_triplets = 0.0, 0
            if len(idx):
                raw, lab = feats[idx], labels[idx]
                emb = model_lib.embed(spec, params, raw)
                triplets = mine_semi_hard(emb, lab, o.margin)
                n_triplets = len(triplets)
                loss, d_emb = triplet_loss(emb, triplets, o.margin)
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss at step {step}; batch indices {idx.tolist()}",
                        tensor="loss")
                if n_triplets:
                    _, grads = model_lib.backward(spec, params, raw, d_emb)
                    params = sgd_step(params, grads, o.lr, frozen=frozen)
            record = {"step": step, "loss": loss, "lr": o.lr, "seed": config.seed,
                      "triplets": n_triplets}
            records.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(params, spec, records, o.steps, epoch, initial)


def evaluate(spec, params, dataset, ks):
    """Recall@K on the test split, each test sample querying all the others."""
    feats, labels = dataset.test
    emb = model_lib.embed(spec, params, feats)
    return recall_at_k(emb, labels, ks=ks)


# -- checkpoints ---------------------------------------------------------------------

MAGIC = b"JCFCKPT\0"


@dataclass
class Checkpoint:
    params: dict
    config: dict
    config_hash: str
    step: int
    epoch: int


def save_checkpoint(path, params, config, step=0, epoch=0):
    """Write named float64 tensors plus the run config in a versioned container.

    Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header,
    then each tensor's little-endian C-order bytes in header order.
    """
    cfg = config if isinstance(config, RunConfig) else RunConfig.from_flat(config)
    tensors, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        blob = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    flat = cfg.to_flat()
    flat.pop("output_dir")  # where a run was written does not change what it learned
    header = {"schema": "jcfpool.checkpoint", "version": SCHEMA_VERSION,
              "config": flat, "config_hash": cfg.hash(), "step": int(step),
              "epoch": int(epoch), "tensors": tensors}
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint {path} not found")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise InputError(f"{path} is not a checkpoint file")
    (head_len,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + head_len])
    if header.get("version") != SCHEMA_VERSION:
        raise InputError(f"unsupported checkpoint version {header.get('version')}")
    base = 12 + head_len
    params = {}
    for t in header["tensors"]:
        start = base + t["offset"]
        arr = np.frombuffer(data[start:start + t["nbytes"]], dtype="<f8").reshape(t["shape"])
        params[t["name"]] = arr.astype(np.float64)
    return Checkpoint(params, header["config"], header["config_hash"], header["step"],
                      header["epoch"])


def check_params_finite(params):
    for name in sorted(params):
        if not np.all(np.isfinite(params[name])):
            raise NumericError(f"non-finite values in tensor {name!r}", tensor=name)
