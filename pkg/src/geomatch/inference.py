"""Grasp proposal generation from a trained model.

Diversity comes from the choice of the first contact: the score-map column
for keypoint 0 is sorted and the vertices at the requested ranks (default
0, 20, 50, 100) each seed one deterministic argmax rollout of the
autoregressive heads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyScores, IndexOutOfRange
from .geometry import GeometryGraph
from .kinematics import EndEffectorModel
from .model import GeoMatchModel

log = logging.getLogger(__name__)

DEFAULT_RANKS = (0, 20, 50, 100)


@dataclass(frozen=True)
class GraspProposal:
    object_id: str
    ee_id: str
    keypoint0_rank: int
    contacts: np.ndarray        # (6,) object vertex indices
    contact_points: np.ndarray  # (6, 3) coordinates
    score: float                # sum of the selected logits (reporting only)


def sample_keypoint0(score_column: np.ndarray, ranks) -> list[int]:
    """Vertices at the requested ranks of the descending score order.

    Ties sort toward the lower vertex index; ranks beyond the vertex count
    are clamped to the last vertex with a warning.
    """
    scores = np.asarray(score_column, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise EmptyScores("empty score column")
    order = np.lexsort((np.arange(scores.size), -scores))
    picked = []
    for rank in ranks:
        if rank < 0:
            raise IndexOutOfRange(f"negative rank {rank}")
        if rank >= scores.size:
            log.warning("rank %d clamped to %d (only %d vertices)",
                        rank, scores.size - 1, scores.size)
            rank = scores.size - 1
        picked.append(int(order[rank]))
    return picked


def rollout(model: GeoMatchModel, object_graph: GeometryGraph,
            ee: EndEffectorModel, c0: int,
            keypoint0_rank: int = -1) -> GraspProposal:
    """Greedy head-by-head contact prediction starting from vertex c0."""
    pts = object_graph.cloud.points
    if not 0 <= c0 < pts.shape[0]:
        raise IndexOutOfRange(f"c0={c0} outside object graph")
    v_obj, v_grip = model.encode(object_graph, ee.rest_graph)
    kp_vertices = ee.keypoint_vertices
    scores = model.score_map(v_obj, v_grip, kp_vertices).data
    contacts = [int(c0)]
    total = float(scores[c0, 0])
    for n in range(1, model.config.n_keypoints):
        logits = model.ar_logits(n, v_obj, v_grip, int(kp_vertices[n]),
                                 contacts, pts).data
        c_n = int(np.argmax(logits))   # argmax takes the lowest index on ties
        contacts.append(c_n)
        total += float(logits[c_n])
    contacts = np.array(contacts, dtype=np.int64)
    return GraspProposal(object_id="", ee_id=ee.name,
                         keypoint0_rank=keypoint0_rank, contacts=contacts,
                         contact_points=pts[contacts].copy(), score=total)


def propose_grasps(model: GeoMatchModel, object_graph: GeometryGraph,
                   ee: EndEffectorModel, ranks=DEFAULT_RANKS,
                   object_id: str = "") -> list[GraspProposal]:
    """One proposal per requested keypoint-0 rank."""
    v_obj, v_grip = model.encode(object_graph, ee.rest_graph)
    scores = model.score_map(v_obj, v_grip, ee.keypoint_vertices).data
    seeds = sample_keypoint0(scores[:, 0], ranks)
    proposals = []
    for rank, c0 in zip(ranks, seeds):
        p = rollout(model, object_graph, ee, c0, keypoint0_rank=int(rank))
        proposals.append(GraspProposal(
            object_id=object_id, ee_id=p.ee_id, keypoint0_rank=p.keypoint0_rank,
            contacts=p.contacts, contact_points=p.contact_points, score=p.score))
    return proposals


# ---------------------------------------------------------------------------
# proposal files: one JSON object per line
# ---------------------------------------------------------------------------

def proposal_to_dict(p: GraspProposal) -> dict:
    return {"object": p.object_id, "ee": p.ee_id, "rank": p.keypoint0_rank,
            "contacts": [{"vertex": int(v), "xyz": [float(c) for c in xyz]}
                         for v, xyz in zip(p.contacts, p.contact_points)],
            "score": float(p.score)}


def proposal_from_dict(doc: dict) -> GraspProposal:
    contacts = np.array([c["vertex"] for c in doc["contacts"]], dtype=np.int64)
    points = np.array([c["xyz"] for c in doc["contacts"]], dtype=np.float64)
    return GraspProposal(object_id=doc["object"], ee_id=doc["ee"],
                         keypoint0_rank=int(doc["rank"]), contacts=contacts,
                         contact_points=points, score=float(doc["score"]))


def save_proposals(proposals, path) -> None:
    with open(path, "w") as fh:
        for p in proposals:
            fh.write(json.dumps(proposal_to_dict(p)) + "\n")


def load_proposals(path) -> list[GraspProposal]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(proposal_from_dict(json.loads(line)))
    return out
