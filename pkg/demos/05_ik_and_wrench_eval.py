"""Bounded least-squares IK and the quasi-static grasp success test.

Run: python demos/05_ik_and_wrench_eval.py
"""

import tempfile

import numpy as np

from geomatch.dataset import (generate_toy_dataset, load_ee_models,
                              load_object_clouds, load_records)
from geomatch.evaluation import EvalConfig, evaluate_grasp, wrench_feasible
from geomatch.ik import solve_ik
from geomatch.kinematics import keypoint_positions

# the wrench test in isolation: an antipodal pinch on a sphere resists
# pushes from every axis direction; a single contact cannot resist a pull
cfg = EvalConfig()
points = np.array([[0.04, 0, 0], [-0.04, 0, 0.0]])
inward = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
resisted = all(
    wrench_feasible(points, inward,
                    np.concatenate([0.05 * direction, np.zeros(3)]), cfg,
                    origin=np.zeros(3))
    for direction in np.vstack([np.eye(3), -np.eye(3)]))
print(f"antipodal pinch resists all six axis pushes: {resisted}")
pull = np.array([-0.05, 0, 0, 0, 0, 0.0])
print("single contact resists an outward pull:",
      wrench_feasible(points[:1], inward[:1], pull, cfg, origin=np.zeros(3)))

# end to end on one record: solve IK to the ground-truth contacts, then
# score the solved pose
with tempfile.TemporaryDirectory() as d:
    manifest = generate_toy_dataset(seed=1, out_dir=d, s_o=128, s_g=128,
                                    object_ids=["sphere_small"])
    samples = load_records(manifest, split="all")
    clouds = load_object_clouds(manifest)
    ees = load_ee_models(manifest)
    s = samples[0]
    contacts = s.object_graph.cloud.points[s.gt_contacts]
    result = solve_ik(ees[s.ee_id], contacts, clouds[s.object_id])
    print(f"\nIK on {s.object_id}/{s.ee_id}: {result.status} after "
          f"{result.iterations} iterations, residual "
          f"{result.residual_norm * 1000:.1f} mm")
    print(f"per-keypoint miss (mm): "
          f"{np.round(result.per_keypoint * 1000, 1).tolist()}")

    outcome = evaluate_grasp(clouds[s.object_id], ees[s.ee_id], result.pose,
                             cfg)
    print(f"active contacts: {outcome.active_contacts}")
    print(f"resisted directions: "
          f"{[k for k, v in outcome.resisted.items() if v]}")
    print(f"grasp success: {outcome.success}")
