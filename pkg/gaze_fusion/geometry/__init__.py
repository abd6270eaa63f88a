"""
几何模块初始化
"""

from .gaze import (
    DEG_TO_RAD,
    RAD_TO_DEG,
    AnnotationPerturbation,
    GazeAngles,
    GazeVector,
    angles_to_vector,
    angles_to_vectors,
    angular_error_deg,
    angular_errors_deg,
    perturb_annotation,
    perturb_annotations,
    rotation_from_axis_angle,
    vector_to_angles,
    vectors_to_angles,
)

__all__ = [
    'DEG_TO_RAD',
    'RAD_TO_DEG',
    'AnnotationPerturbation',
    'GazeAngles',
    'GazeVector',
    'angles_to_vector',
    'angles_to_vectors',
    'angular_error_deg',
    'angular_errors_deg',
    'perturb_annotation',
    'perturb_annotations',
    'rotation_from_axis_angle',
    'vector_to_angles',
    'vectors_to_angles',
]
