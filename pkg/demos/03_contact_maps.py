"""Supervision targets: proximity map, gripper contact map, their product.

Run: python demos/03_contact_maps.py
"""

import tempfile

import numpy as np

from geomatch.contact_maps import build_contact_maps
from geomatch.dataset import generate_toy_dataset, load_ee_models, \
    load_object_clouds
from geomatch.kinematics import keypoint_positions

with tempfile.TemporaryDirectory() as d:
    manifest = generate_toy_dataset(seed=0, out_dir=d, s_o=128, s_g=128,
                                    object_ids=["sphere_small"])
    clouds = load_object_clouds(manifest)
    ees = load_ee_models(manifest)
    record = manifest.records[0]
    print(f"record: {record.object_id} grasped by {record.ee_id}")

    ee = ees[record.ee_id]
    kp_world = keypoint_positions(ee, record.pose)
    cloud = clouds[record.object_id]

    maps = build_contact_maps(cloud, kp_world, m=20, threshold=0.04)
    print(f"prox: {maps.prox.shape}, every column sums to {maps.prox.sum(0)}")
    print(f"cg (keypoints within 4 cm): {maps.cg.tolist()}")
    print(f"co = prox * cg: column sums {maps.co.sum(0).tolist()}")

    # the nearest object vertex to each posed keypoint is the ground-truth
    # contact used for teacher forcing
    d2 = np.linalg.norm(cloud.points[None] - kp_world[:, None], axis=2)
    gt = d2.argmin(axis=1)
    print(f"ground-truth contact vertices: {gt.tolist()}")
    print(f"keypoint-to-contact distances (mm): "
          f"{np.round(d2.min(axis=1) * 1000, 1).tolist()}")
