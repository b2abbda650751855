"""A self-contained graph classifier for link prediction, numpy only.

Forward path per subgraph: four graph convolutions
``Z^{l+1} = tanh(D^-1 (A+I) Z^l W^l)`` with 32/32/32/1 output channels,
horizontal concatenation of all layer outputs, sort pooling on the final
1-wide channel down to ``c`` rows, then a 1-D convolution with kernel and
stride equal to the concatenated width (16 filters), pair max-pooling, a
second 1-D convolution (32 filters, width 5), a 128-wide dense layer, and a
logistic output.  Backward passes are written out by hand and checked
against finite differences in the test suite.

Batches run on a block-diagonal sparse adjacency with per-graph pooling
boundaries; results are identical to per-sample evaluation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .graphprep import Dataset, EnclosingSubgraph


class GnnError(ValueError):
    pass


@dataclass
class GnnConfig:
    conv_channels: tuple[int, ...] = (32, 32, 32, 1)
    sortpool_percentile: float = 0.6
    sortpool_min_c: int = 10
    conv1d_channels: tuple[int, int] = (16, 32)
    conv1d_kernel: int = 5
    dense_width: int = 128
    epochs: int = 50
    h_train: int = 2
    learning_rate: float = 1e-4
    batch_size: int = 50
    seed: int = 0
    val_metric: str = "loss"  # loss | accuracy | auc

    def __post_init__(self):
        if self.conv_channels[-1] != 1:
            raise GnnError("last graph-conv channel must be 1 (sort-pool key)")
        if min(self.conv_channels) < 1 or self.dense_width < 1 or self.batch_size < 1:
            raise GnnError("all channel/width/batch counts must be positive")
        if self.val_metric not in ("loss", "accuracy", "auc"):
            raise GnnError(f"unknown validation metric '{self.val_metric}'")

    @property
    def total_channels(self) -> int:
        return sum(self.conv_channels)


@dataclass
class GnnModel:
    config: GnnConfig
    feature_width: int
    c: int
    conv_weights: list[np.ndarray] = field(default_factory=list)
    k1: np.ndarray = None
    b1: np.ndarray = None
    k2: np.ndarray = None
    b2: np.ndarray = None
    wd: np.ndarray = None
    bd: np.ndarray = None
    wo: np.ndarray = None
    bo: np.ndarray = None

    def params(self) -> dict[str, np.ndarray]:
        out = {f"conv_w{i}": w for i, w in enumerate(self.conv_weights)}
        out.update(
            k1=self.k1, b1=self.b1, k2=self.k2, b2=self.b2,
            wd=self.wd, bd=self.bd, wo=self.wo, bo=self.bo,
        )
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        if name.startswith("conv_w"):
            self.conv_weights[int(name[6:])] = value
        else:
            setattr(self, name, value)

    def copy(self) -> "GnnModel":
        m = GnnModel(self.config, self.feature_width, self.c)
        m.conv_weights = [w.copy() for w in self.conv_weights]
        for n in ("k1", "b1", "k2", "b2", "wd", "bd", "wo", "bo"):
            setattr(m, n, getattr(self, n).copy())
        return m


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_model(config: GnnConfig, feature_width: int, c: int) -> GnnModel:
    if c < config.sortpool_min_c:
        c = config.sortpool_min_c
    rng = np.random.default_rng(config.seed)
    model = GnnModel(config, feature_width, c)
    k_prev = feature_width
    for k_next in config.conv_channels:
        model.conv_weights.append(_glorot(rng, (k_prev, k_next)))
        k_prev = k_next
    width = config.total_channels
    ch1, ch2 = config.conv1d_channels
    model.k1 = _glorot(rng, (width, ch1))
    model.b1 = np.zeros(ch1)
    model.k2 = _glorot(rng, (config.conv1d_kernel, ch1, ch2))
    model.b2 = np.zeros(ch2)
    t2 = c // 2 - (config.conv1d_kernel - 1)
    if t2 < 1:
        raise GnnError(f"sort-pool size {c} too small for the 1-D head")
    model.wd = _glorot(rng, (t2 * ch2, config.dense_width))
    model.bd = np.zeros(config.dense_width)
    model.wo = _glorot(rng, (config.dense_width, 1))
    model.bo = np.zeros(1)
    return model


# -- kernels -------------------------------------------------------------------


def normalized_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    """Row-normalized adjacency with self loops: D^-1 (A + I)."""
    a = adj.astype(np.float64).tocsr() + sp.eye(adj.shape[0], format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    return (sp.diags(1.0 / deg) @ a).tocsr()


def graph_conv_forward(
    z: np.ndarray, adj: sp.spmatrix, w: np.ndarray, activate: bool = True
) -> np.ndarray:
    """One propagation step ``f(D^-1 (A+I) Z W)``; ``activate=False`` returns
    the pre-activation value."""
    if z.shape[1] != w.shape[0]:
        raise GnnError(f"shape mismatch: Z has {z.shape[1]} channels, W expects {w.shape[0]}")
    u = normalized_adjacency(adj) @ (z @ w)
    return np.tanh(u) if activate else u


def sort_pool(z_cat: np.ndarray, c: int) -> np.ndarray:
    """Rows sorted descending by the last channel (stable; ties keep original
    order), truncated or zero-padded to exactly ``c`` rows."""
    if c < 1:
        raise GnnError("sort-pool size must be at least 1")
    order = np.argsort(-z_cat[:, -1], kind="stable")
    picked = z_cat[order[:c]]
    if picked.shape[0] < c:
        pad = np.zeros((c - picked.shape[0], z_cat.shape[1]))
        picked = np.vstack([picked, pad])
    return picked


def _norm_cache(g: EnclosingSubgraph) -> sp.csr_matrix:
    m = getattr(g, "_norm_adj", None)
    if m is None:
        m = normalized_adjacency(g.adj)
        object.__setattr__(g, "_norm_adj", m)
    return m


def _forward_batch(model: GnnModel, samples: Sequence[EnclosingSubgraph]) -> dict:
    """Forward over a batch; returns every intermediate needed for backward."""
    cfg = model.config
    for g in samples:
        if g.features.shape[1] != model.feature_width:
            raise GnnError(
                f"feature width {g.features.shape[1]} does not match model "
                f"({model.feature_width})"
            )
    sizes = [g.n for g in samples]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    x = np.vstack([g.features for g in samples])
    m = sp.block_diag([_norm_cache(g) for g in samples], format="csr")

    zs = [x]
    pre_mz = []  # M @ Z^{l-1}, reused for weight gradients
    for w in model.conv_weights:
        mz = m @ zs[-1]
        pre_mz.append(mz)
        zs.append(np.tanh(mz @ w))
    z_cat = np.hstack(zs[1:])

    b = len(samples)
    c = model.c
    width = cfg.total_channels
    pooled = np.zeros((b, c, width))
    sel_rows: list[np.ndarray] = []
    for i in range(b):
        seg = z_cat[offsets[i] : offsets[i + 1]]
        order = np.argsort(-seg[:, -1], kind="stable")[:c]
        pooled[i, : len(order)] = seg[order]
        sel_rows.append(order + offsets[i])

    u1 = np.tensordot(pooled, model.k1, axes=([2], [0])) + model.b1  # (b, c, ch1)
    a1 = np.maximum(u1, 0.0)
    c2 = c // 2
    paired = a1[:, : 2 * c2].reshape(b, c2, 2, -1)
    pool_arg = paired.argmax(axis=2)
    p = paired.max(axis=2)  # (b, c2, ch1)
    kk = cfg.conv1d_kernel
    t2 = c2 - (kk - 1)
    u2 = np.zeros((b, t2, model.k2.shape[2]))
    for dt in range(kk):
        u2 += np.tensordot(p[:, dt : dt + t2], model.k2[dt], axes=([2], [0]))
    u2 += model.b2
    a2 = np.maximum(u2, 0.0)
    flat = a2.reshape(b, -1)
    ud = flat @ model.wd + model.bd
    ad = np.maximum(ud, 0.0)
    logits = (ad @ model.wo + model.bo).ravel()
    scores = 1.0 / (1.0 + np.exp(-logits))
    return {
        "samples": samples, "sizes": sizes, "offsets": offsets, "m": m,
        "zs": zs, "pre_mz": pre_mz, "z_cat": z_cat, "pooled": pooled,
        "sel_rows": sel_rows, "u1": u1, "a1": a1, "pool_arg": pool_arg,
        "p": p, "u2": u2, "a2": a2, "flat": flat, "ud": ud, "ad": ad,
        "logits": logits, "scores": scores,
    }


def _backward_batch(model: GnnModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    cfg = model.config
    b = len(cache["samples"])
    c = model.c
    c2 = c // 2
    kk = cfg.conv1d_kernel
    t2 = c2 - (kk - 1)

    grads: dict[str, np.ndarray] = {}
    dl = dlogits.reshape(-1, 1)
    grads["wo"] = cache["ad"].T @ dl
    grads["bo"] = dl.sum(axis=0)
    dad = dl @ model.wo.T
    dud = dad * (cache["ud"] > 0)
    grads["wd"] = cache["flat"].T @ dud
    grads["bd"] = dud.sum(axis=0)
    dflat = dud @ model.wd.T
    da2 = dflat.reshape(b, t2, -1)
    du2 = da2 * (cache["u2"] > 0)
    grads["b2"] = du2.sum(axis=(0, 1))
    grads["k2"] = np.zeros_like(model.k2)
    dp = np.zeros_like(cache["p"])
    p = cache["p"]
    for dt in range(kk):
        grads["k2"][dt] = np.tensordot(p[:, dt : dt + t2], du2, axes=([0, 1], [0, 1]))
        dp[:, dt : dt + t2] += np.tensordot(du2, model.k2[dt], axes=([2], [1]))
    # undo pair max-pooling
    da1 = np.zeros_like(cache["a1"])
    arg = cache["pool_arg"]  # (b, c2, ch1)
    bi, ti, fi = np.meshgrid(
        np.arange(b), np.arange(c2), np.arange(p.shape[2]), indexing="ij"
    )
    da1[bi, 2 * ti + arg, fi] = dp
    du1 = da1 * (cache["u1"] > 0)
    grads["b1"] = du1.sum(axis=(0, 1))
    grads["k1"] = np.tensordot(cache["pooled"], du1, axes=([0, 1], [0, 1]))
    dpooled = np.tensordot(du1, model.k1, axes=([2], [1]))
    # undo sort pooling: scatter selected rows back
    dz_cat = np.zeros_like(cache["z_cat"])
    for i, rows in enumerate(cache["sel_rows"]):
        dz_cat[rows] = dpooled[i, : len(rows)]
    # split the concatenation and walk the conv stack backwards
    m_t = cache["m"].T.tocsr()
    zs = cache["zs"]
    splits = np.cumsum(cfg.conv_channels)[:-1]
    chunks = np.split(dz_cat, splits, axis=1)
    dz_next: Optional[np.ndarray] = None
    for l in reversed(range(len(model.conv_weights))):
        dz = chunks[l] if dz_next is None else chunks[l] + dz_next
        du = dz * (1.0 - zs[l + 1] ** 2)
        grads[f"conv_w{l}"] = cache["pre_mz"][l].T @ du
        dz_next = m_t @ (du @ model.conv_weights[l].T)
    return grads


def bce_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    eps = 1e-12
    s = np.clip(scores, eps, 1.0 - eps)
    return float(-(labels * np.log(s) + (1 - labels) * np.log(1 - s)).mean())


def loss_and_gradients(
    model: GnnModel, samples: Sequence[EnclosingSubgraph], labels: Sequence[int]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy over the batch and its parameter gradients."""
    y = np.asarray(labels, dtype=np.float64)
    cache = _forward_batch(model, samples)
    loss = bce_loss(cache["scores"], y)
    dlogits = (cache["scores"] - y) / len(samples)
    return loss, _backward_batch(model, cache, dlogits)


def forward(model: GnnModel, g: EnclosingSubgraph) -> float:
    """Link-existence score in [0, 1] for one subgraph."""
    return float(_forward_batch(model, [g])["scores"][0])


def predict_batch(
    model: GnnModel, subgraphs: Sequence[EnclosingSubgraph], chunk: int = 128
) -> list[float]:
    scores: list[float] = []
    for i in range(0, len(subgraphs), chunk):
        scores += _forward_batch(model, subgraphs[i : i + chunk])["scores"].tolist()
    return scores


# -- training ------------------------------------------------------------------


def choose_sortpool_size(sizes: Sequence[int], percentile: float, floor: int) -> int:
    """The node count such that ``percentile`` of the subgraphs are smaller."""
    if not sizes:
        raise GnnError("cannot size the sort-pool layer from an empty dataset")
    ordered = sorted(sizes)
    idx = max(0, int(math.ceil(percentile * len(ordered))) - 1)
    return max(floor, ordered[idx])


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks over ties
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(model: GnnModel, samples, labels) -> dict[str, float]:
    y = np.asarray(labels, dtype=np.float64)
    scores = np.array(predict_batch(model, list(samples)))
    return {
        "loss": bce_loss(scores, y),
        "accuracy": float(((scores >= 0.5) == (y == 1)).mean()),
        "auc": roc_auc(scores, y),
    }


def train(config: GnnConfig, dataset: Dataset) -> tuple[GnnModel, list[dict]]:
    """Mini-batch Adam on binary cross-entropy; returns the checkpoint with
    the best validation performance and the per-epoch log."""
    train_samples = list(dataset.train)
    train_labels = [g.label for g in train_samples]
    if len(set(train_labels)) < 2:
        raise GnnError("training data has a single class")
    val_samples = list(dataset.val)
    val_labels = [g.label for g in val_samples]

    sizes = [g.n for g in train_samples + val_samples]
    c = choose_sortpool_size(sizes, config.sortpool_percentile, config.sortpool_min_c)
    feature_width = train_samples[0].features.shape[1]
    model = init_model(config, feature_width, c)

    rng = np.random.default_rng(config.seed + 1)
    adam_m = {k: np.zeros_like(v) for k, v in model.params().items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params().items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    best: tuple[float, GnnModel] | None = None
    log: list[dict] = []
    sign = 1.0 if config.val_metric == "loss" else -1.0

    labels_arr = np.asarray(train_labels)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [train_samples[i] for i in idx]
            loss, grads = loss_and_gradients(model, batch, labels_arr[idx])
            if math.isnan(loss):
                raise GnnError(f"loss diverged to NaN at epoch {epoch}")
            epoch_loss += loss
            n_batches += 1
            step += 1
            for name, p in model.params().items():
                g = grads[name].reshape(p.shape)
                adam_m[name] = beta1 * adam_m[name] + (1 - beta1) * g
                adam_v[name] = beta2 * adam_v[name] + (1 - beta2) * g * g
                mhat = adam_m[name] / (1 - beta1**step)
                vhat = adam_v[name] / (1 - beta2**step)
                model.set_param(
                    name, p - config.learning_rate * mhat / (np.sqrt(vhat) + eps)
                )
        val = (
            evaluate(model, val_samples, val_labels)
            if val_samples
            else {"loss": float("nan"), "accuracy": float("nan"), "auc": float("nan")}
        )
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(1, n_batches),
            "val_loss": val["loss"],
            "val_accuracy": val["accuracy"],
            "val_auc": val["auc"],
        }
        log.append(entry)
        key = val[config.val_metric] if val_samples else entry["train_loss"]
        if not math.isnan(key) and (best is None or sign * key < sign * best[0]):
            best = (key, model.copy())
    return (best[1] if best else model), log


def format_training_log(log: list[dict]) -> str:
    lines = ["epoch\ttrain_loss\tval_loss\tval_accuracy\tval_auc"]
    for e in log:
        lines.append(
            f"{e['epoch']}\t{e['train_loss']:.6f}\t{e['val_loss']:.6f}"
            f"\t{e['val_accuracy']:.4f}\t{e['val_auc']:.4f}"
        )
    return "\n".join(lines) + "\n"


# -- persistence ---------------------------------------------------------------


def save_model(model: GnnModel) -> bytes:
    params = model.params()
    payload = b"".join(np.ascontiguousarray(params[k], dtype="<f8").tobytes() for k in params)
    header = {
        "format": "relink-gnn",
        "version": 1,
        "config": asdict(model.config),
        "feature_width": model.feature_width,
        "c": model.c,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    return json.dumps(header).encode() + b"\n" + payload


def load_model(data: bytes) -> GnnModel:
    nl = data.index(b"\n")
    header = json.loads(data[:nl].decode())
    if header.get("format") != "relink-gnn" or header.get("version") != 1:
        raise GnnError("not a model file")
    payload = data[nl + 1 :]
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise GnnError("model file checksum mismatch")
    cfg_dict = dict(header["config"])
    for key in ("conv_channels", "conv1d_channels"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = GnnConfig(**cfg_dict)
    model = GnnModel(config, header["feature_width"], header["c"])
    model.conv_weights = [None] * len(config.conv_channels)
    off = 0
    for name, shape in header["shapes"].items():
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
        model.set_param(name, arr)
    return model
