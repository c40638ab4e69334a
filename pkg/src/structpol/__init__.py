""" structpol: structured-polarization 3D sensing, from simulated capture to relighting. """

from structpol.codec import decode, extract_aolp, make_patterns
from structpol.geocal import calibrate_projector
from structpol.recon import estimate_reflectance, init_brdf, joint_refine, relight, triangulate
from structpol.render import render, render_frames

__all__ = [
    "make_patterns",
    "decode",
    "extract_aolp",
    "calibrate_projector",
    "triangulate",
    "init_brdf",
    "joint_refine",
    "estimate_reflectance",
    "relight",
    "render",
    "render_frames",
]
