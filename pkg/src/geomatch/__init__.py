"""Geometry-conditioned grasp contact prediction for multiple grippers.

The pipeline: build k-NN geometry graphs for object and gripper clouds,
train dual GCN encoders with autoregressive contact heads, sample diverse
contact proposals, solve bounded least-squares IK to a pre-grasp pose, and
score the result with a quasi-static wrench-feasibility test.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1      # bumped when any on-disk schema changes
