"""Doppler-keyed scan matching for 4D (range + Doppler) point clouds."""

from .core import Point4D, RigidTransform, Scan, Trajectory, Twist, apply, compose, inverse, so3_exp
from .correspondence import (
    CorrespondenceSet,
    MatchParams,
    downsample,
    match_closest_point,
    match_doppler,
    reject_outliers,
    source_key,
    target_key,
)
from .registration import (
    Doppler4DIcpParams,
    IcpParams,
    RegistrationResult,
    doppler_4d_icp,
    estimate_rigid,
    huber_weight,
    icp_point_to_point,
    match_scan_noniterative,
    run_odometry,
)

__version__ = "0.1.0"

__all__ = [
    "Point4D",
    "RigidTransform",
    "Scan",
    "Trajectory",
    "Twist",
    "apply",
    "compose",
    "inverse",
    "so3_exp",
    "CorrespondenceSet",
    "MatchParams",
    "downsample",
    "match_closest_point",
    "match_doppler",
    "reject_outliers",
    "source_key",
    "target_key",
    "Doppler4DIcpParams",
    "IcpParams",
    "RegistrationResult",
    "doppler_4d_icp",
    "estimate_rigid",
    "huber_weight",
    "icp_point_to_point",
    "match_scan_noniterative",
    "run_odometry",
]
