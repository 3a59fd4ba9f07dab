"""The toy grippers: chains, rest pose, 6D rotations, keypoints.

Run: python demos/02_grippers_and_kinematics.py
"""

import numpy as np

from geomatch.dataset import build_claw, build_pincer
from geomatch.kinematics import (Pose, keypoint_positions, matrix_to_rot6d,
                                 rest_pose, rot6d_to_matrix)

for ee in (build_pincer(s_g=128, seed=0), build_claw(s_g=128, seed=1)):
    chain = ee.chain
    lo, hi = chain.joint_limits()
    print(f"\n{ee.name}: {len(chain.links)} links, {chain.dof} joints, "
          f"limits [{lo[0]:+.2f}, {hi[0]:+.2f}] rad")
    pose = rest_pose(chain)
    kp = keypoint_positions(ee, pose)
    print(f"rest keypoints (tips first):\n{np.round(kp, 4)}")

    # keypoints ride rigidly with the root: rotate 90 degrees about z
    rot = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    turned = Pose(t=np.zeros(3), r6=matrix_to_rot6d(rot), theta=pose.theta)
    kp_turned = keypoint_positions(ee, turned)
    assert np.allclose(kp_turned, kp @ rot.T, atol=1e-12)
    print("rotation consistency: keypoints follow the root exactly")

# the 6D rotation codec is scale invariant and round-trips
r6 = matrix_to_rot6d(rot6d_to_matrix([2.0, 0, 0, 1.0, 3.0, 0]))
print(f"\n6D codec round-trip: {np.round(r6, 6)}")
