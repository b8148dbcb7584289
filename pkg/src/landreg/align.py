"""Procrustes preprocessing: centring and orthogonal alignment of landmark sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import LandmarkConfig

__all__ = ["ProcrustesResult", "procrustes_align"]


@dataclass
class ProcrustesResult:
    aligned: list[LandmarkConfig]
    rotations: list[np.ndarray]  # per set, identity for the reference
    translations: list[np.ndarray]  # removed centroids


def procrustes_align(sets: list[LandmarkConfig]) -> ProcrustesResult:
    """Centre every set, then rotate sets 2..J onto the first.

    The rotation minimising the Frobenius distance comes from the SVD of the
    cross-covariance, with the determinant corrected so the transform is a
    proper rotation.  The first-listed set is always the alignment target.
    """
    if not sets:
        raise ValueError("need at least one landmark set")
    d = sets[0].d
    n = sets[0].n
    for s in sets:
        if s.d != d or s.n != n:
            raise ValueError("all sets must share (d, N)")
    centred = []
    translations = []
    for s in sets:
        pts = s.points
        mu = pts.mean(axis=0)
        c = pts - mu
        if np.allclose(c, 0.0):
            raise ValueError("degenerate landmark set: all points coincide")
        centred.append(c)
        translations.append(mu)
    ref = centred[0]
    aligned = [LandmarkConfig.from_points(ref)]
    rotations = [np.eye(d)]
    for c in centred[1:]:
        u, _, vt = np.linalg.svd(ref.T @ c)
        rot = u @ vt
        if np.linalg.det(rot) < 0:
            u = u.copy()
            u[:, -1] *= -1
            rot = u @ vt
        aligned.append(LandmarkConfig.from_points(c @ rot.T))
        rotations.append(rot)
    return ProcrustesResult(aligned=aligned, rotations=rotations, translations=translations)
