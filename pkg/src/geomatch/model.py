"""The grasp-matching network and its training objective.

Two GCN encoders (object, gripper) produce per-vertex embeddings that a
bias-free linear layer projects down; contact likelihood is the dot product
between object-vertex and gripper-keypoint embeddings. Keypoints 1..5 get
autoregressive MLP heads fed with distances to the previously chosen
contacts; keypoint 0's marginal is its score-map column.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import diffnet as dn
from .contact_maps import ContactMapSet
from .errors import EmptyDataset, IndexOutOfRange, SchemaError
from .geometry import GeometryGraph
from .kinematics import EndEffectorModel, N_KEYPOINTS, Pose
from .rng import Rng

DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 0.5
DEFAULT_LAMBDA_A = 500.0
DEFAULT_LAMBDA_B = 200.0
DEFAULT_LR = 1e-4
DEFAULT_EPOCHS = 200


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths; defaults are the full-size network."""

    gcn_hidden: tuple[int, ...] = (256, 256, 256)
    gcn_out: int = 512
    proj_dim: int = 64
    ar_hidden: tuple[int, ...] = (256, 256, 256)
    n_keypoints: int = N_KEYPOINTS

    @property
    def distance_slots(self) -> int:
        return self.n_keypoints - 1

    @property
    def ar_input_dim(self) -> int:
        return 2 * self.proj_dim + self.distance_slots

    def to_dict(self) -> dict:
        return {"gcn_hidden": list(self.gcn_hidden), "gcn_out": self.gcn_out,
                "proj_dim": self.proj_dim, "ar_hidden": list(self.ar_hidden),
                "n_keypoints": self.n_keypoints}

    @staticmethod
    def from_dict(doc: dict) -> "ModelConfig":
        return ModelConfig(gcn_hidden=tuple(doc["gcn_hidden"]),
                           gcn_out=int(doc["gcn_out"]),
                           proj_dim=int(doc["proj_dim"]),
                           ar_hidden=tuple(doc["ar_hidden"]),
                           n_keypoints=int(doc["n_keypoints"]))


@dataclass
class TrainingSample:
    """One grasp record with everything derived for supervision."""

    object_id: str
    ee_id: str
    object_graph: GeometryGraph
    ee: EndEffectorModel
    pose: Pose
    maps: ContactMapSet
    keypoint_world: np.ndarray          # (6, 3)
    gt_contacts: np.ndarray             # (6,) object vertex indices


class GeoMatchModel:
    """Encoders + projections + autoregressive heads, all in one store."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        self.store = dn.ParameterStore()
        rng = Rng(seed)
        enc_dims = [3, *config.gcn_hidden, config.gcn_out]
        for enc in ("obj", "grip"):
            for i in range(len(enc_dims) - 1):
                self.store.add(f"{enc}_enc.w{i}",
                               dn.glorot_init((enc_dims[i], enc_dims[i + 1]), rng))
                self.store.add(f"{enc}_enc.b{i}", dn.zeros_param(enc_dims[i + 1]))
            self.store.add(f"{enc}_proj.w",
                           dn.glorot_init((config.gcn_out, config.proj_dim), rng))
        ar_dims = [config.ar_input_dim, *config.ar_hidden, 1]
        for n in range(1, config.n_keypoints):
            for i in range(len(ar_dims) - 1):
                self.store.add(f"ar{n}.w{i}",
                               dn.glorot_init((ar_dims[i], ar_dims[i + 1]), rng))
                self.store.add(f"ar{n}.b{i}", dn.zeros_param(ar_dims[i + 1]))
        self._n_enc_layers = len(enc_dims) - 1
        self._n_ar_layers = len(ar_dims) - 1

    # -- forward pieces -----------------------------------------------------

    def _encode_one(self, prefix: str, graph: GeometryGraph) -> dn.Tensor:
        if graph.normalized_adjacency is None:
            raise SchemaError("graph must carry a normalized adjacency")
        pts = graph.cloud.points
        centered = pts - pts.mean(axis=0)
        scale = float(np.sqrt((centered ** 2).mean()))
        if scale <= 0:
            raise SchemaError("degenerate cloud: zero spatial extent")
        h = dn.Tensor(centered / scale)
        for i in range(self._n_enc_layers):
            h = dn.gcn_layer(graph.normalized_adjacency, h,
                             self.store[f"{prefix}_enc.w{i}"],
                             self.store[f"{prefix}_enc.b{i}"])
        return dn.matmul(h, self.store[f"{prefix}_proj.w"])

    def encode(self, object_graph: GeometryGraph,
               gripper_graph: GeometryGraph) -> tuple[dn.Tensor, dn.Tensor]:
        """Projected per-vertex embeddings (S_O x p, S_G x p)."""
        return (self._encode_one("obj", object_graph),
                self._encode_one("grip", gripper_graph))

    def score_map(self, v_obj: dn.Tensor, v_grip: dn.Tensor,
                  keypoint_vertices) -> dn.Tensor:
        """(S_O, 6) dot-product contact scores."""
        kp = np.asarray(keypoint_vertices, dtype=np.int64)
        if kp.size and kp.max() >= v_grip.data.shape[0]:
            raise IndexOutOfRange("keypoint vertex outside gripper graph")
        emb = dn.gather_rows(v_grip, kp)
        return dn.matmul(v_obj, dn.transpose(emb))

    def ar_logits(self, n: int, v_obj: dn.Tensor, v_grip: dn.Tensor,
                  keypoint_vertex: int, prev_contacts,
                  object_points: np.ndarray) -> dn.Tensor:
        """Per-object-vertex logit for keypoint n given contacts 0..n-1."""
        if not 1 <= n < self.config.n_keypoints:
            raise IndexOutOfRange(f"autoregressive head index {n}")
        prev = np.asarray(prev_contacts, dtype=np.int64).reshape(-1)
        if prev.size != n:
            raise SchemaError(f"head {n} needs exactly {n} previous contacts")
        s = object_points.shape[0]
        if prev.size and (prev.min() < 0 or prev.max() >= s):
            raise IndexOutOfRange("previous contact vertex out of range")
        centered = object_points - object_points.mean(axis=0)
        scale = float(np.sqrt((centered ** 2).mean()))
        dists = np.zeros((s, self.config.distance_slots))
        for j, c in enumerate(prev):
            dists[:, j] = np.linalg.norm(
                object_points - object_points[c], axis=1) / scale
        kp_rows = dn.gather_rows(v_grip, np.full(s, keypoint_vertex, dtype=np.int64))
        feats = dn.concat_cols([v_obj, kp_rows, dn.Tensor(dists)])
        layers = [(self.store[f"ar{n}.w{i}"], self.store[f"ar{n}.b{i}"])
                  for i in range(self._n_ar_layers)]
        return dn.column(dn.mlp(feats, layers), 0)

    # -- objective ----------------------------------------------------------

    def total_loss(self, sample: TrainingSample,
                   alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                   lambda_a: float = DEFAULT_LAMBDA_A,
                   lambda_b: float = DEFAULT_LAMBDA_B):
        """alpha * score-map loss + beta * teacher-forced head loss.

        Returns (total, loss_f, loss_m) tensors. Both parts are sums of
        per-keypoint mean BCE terms; the heads see the ground-truth previous
        contacts (teacher forcing), never their own predictions.
        """
        v_obj, v_grip = self.encode(sample.object_graph, sample.ee.rest_graph)
        kp_vertices = sample.ee.keypoint_vertices
        scores = self.score_map(v_obj, v_grip, kp_vertices)
        co = sample.maps.co

        loss_f = None
        for i in range(self.config.n_keypoints):
            term = dn.bce_with_pos_weight(dn.column(scores, i), co[:, i], lambda_a)
            loss_f = term if loss_f is None else loss_f + term

        pts = sample.object_graph.cloud.points
        loss_m = None
        for n in range(1, self.config.n_keypoints):
            logits = self.ar_logits(n, v_obj, v_grip, int(kp_vertices[n]),
                                    sample.gt_contacts[:n], pts)
            term = dn.bce_with_pos_weight(logits, co[:, n], lambda_b)
            loss_m = term if loss_m is None else loss_m + term

        total = alpha * loss_f + beta * loss_m
        return total, loss_f, loss_m


def train(model: GeoMatchModel, samples: list[TrainingSample],
          epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR,
          seed: int = 0, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
          lambda_a: float = DEFAULT_LAMBDA_A, lambda_b: float = DEFAULT_LAMBDA_B,
          loss_csv=None, log_every: int = 0) -> list[dict]:
    """Per-sample Adam steps over seeded shuffles; returns per-epoch means.

    The sample order is reshuffled every epoch from one deterministic
    stream, so a fixed seed reproduces the loss log exactly.
    """
    if not samples:
        raise EmptyDataset("no training samples")
    rng = Rng(seed)
    history = []
    order = list(range(len(samples)))
    for epoch in range(1, epochs + 1):
        rng.shuffle(order)
        sums = np.zeros(3)
        for idx in order:
            total, loss_f, loss_m = model.total_loss(
                samples[idx], alpha, beta, lambda_a, lambda_b)
            dn.backward(total)
            dn.adam_step(model.store, lr=lr)
            sums += (total.item(), loss_f.item(), loss_m.item())
        mean = sums / len(order)
        history.append({"epoch": epoch, "loss_total": float(mean[0]),
                        "loss_f": float(mean[1]), "loss_m": float(mean[2])})
        if log_every and (epoch % log_every == 0 or epoch == epochs):
            print(f"epoch {epoch:4d}  total {mean[0]:.6f}  "
                  f"f {mean[1]:.6f}  m {mean[2]:.6f}")
    if loss_csv is not None:
        write_loss_csv(history, loss_csv)
    return history


def write_loss_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss_total", "loss_f", "loss_m"])
        for row in history:
            w.writerow([row["epoch"], repr(row["loss_total"]),
                        repr(row["loss_f"]), repr(row["loss_m"])])


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{"epoch": int(r["epoch"]),
                 "loss_total": float(r["loss_total"]),
                 "loss_f": float(r["loss_f"]),
                 "loss_m": float(r["loss_m"])} for r in reader]


def save_model(model: GeoMatchModel, directory) -> None:
    dn.save_weights(model.store, directory)
    with open(os.path.join(directory, "model_config.json"), "w") as fh:
        json.dump(model.config.to_dict(), fh, indent=1)


def load_model(directory) -> GeoMatchModel:
    cfg_path = os.path.join(directory, "model_config.json")
    try:
        with open(cfg_path) as fh:
            config = ModelConfig.from_dict(json.load(fh))
    except FileNotFoundError:
        config = ModelConfig()
    model = GeoMatchModel(config, seed=0)
    dn.load_weights(model.store, directory)
    return model
