"""Prior image sets: mean / geometric-mean aggregates, pruning, and the
data-driven operator ``A = Y U^+``."""

from __future__ import annotations

import logging

import numpy as np

from .operators import MatrixOperator, check_image

logger = logging.getLogger(__name__)

__all__ = [
    "PriorSet",
    "HandcraftedOperator",
    "prior_mean",
    "prior_geometric_mean",
    "prune_priors",
    "build_handcrafted_operator",
    "pseudoinverse",
]


class PriorSet:
    """An ordered collection of prior images ``u^(i)`` with optional sinograms.

    The set carries an ``active`` mask used by adaptive pruning.  The
    arithmetic mean over active images is cached and refreshed whenever the
    mask changes; the geometric mean is computed once over all images, since
    it is only meaningful for the nonnegative ingested data.
    """

    def __init__(self, images, sinograms=None, labels=None):
        images = [check_image(u, name=f"prior[{i}]") for i, u in enumerate(images)]
        if not images:
            raise ValueError("prior set is empty")
        shape = images[0].shape
        for i, u in enumerate(images):
            if u.shape != shape:
                raise ValueError(f"prior[{i}] has shape {u.shape}, expected {shape}")
        self.images = np.stack(images)
        self.sinograms = None
        if sinograms is not None:
            sinograms = [np.asarray(y, dtype=np.float64) for y in sinograms]
            if len(sinograms) != len(images):
                raise ValueError(
                    f"{len(sinograms)} sinograms for {len(images)} images; they must pair index-wise"
                )
            sshape = sinograms[0].shape
            for i, y in enumerate(sinograms):
                if y.shape != sshape:
                    raise ValueError(f"sinogram[{i}] has shape {y.shape}, expected {sshape}")
            self.sinograms = np.stack(sinograms)
        self.labels = None if labels is None else list(labels)
        self.active = np.ones(len(images), dtype=bool)
        self.prune_events: list[dict] = []
        self._gm = None
        self._refresh()

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def mean(self) -> np.ndarray:
        return self._mean

    @property
    def geometric_mean(self) -> np.ndarray:
        if self._gm is None:
            self._gm = _geometric_mean(self.images)
        return self._gm

    def copy(self) -> "PriorSet":
        new = object.__new__(PriorSet)
        new.images = self.images
        new.sinograms = self.sinograms
        new.labels = self.labels
        new.active = self.active.copy()
        new.prune_events = list(self.prune_events)
        new._gm = self._gm
        new._mean = self._mean
        return new

    def subset(self, indices) -> "PriorSet":
        indices = list(indices)
        sinos = None if self.sinograms is None else self.sinograms[indices]
        labels = None if self.labels is None else [self.labels[i] for i in indices]
        return PriorSet(self.images[indices], sinos, labels)

    def set_active(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.active.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {self.active.shape}")
        if not mask.any():
            raise ValueError("prior set must keep at least one active image")
        self.active = mask.copy()
        self._refresh()

    def _refresh(self):
        if not self.active.any():
            raise ValueError("prior set has no active images")
        self._mean = self.images[self.active].mean(axis=0)


class HandcraftedOperator(MatrixOperator):
    """Dense operator ``A`` fitted so that ``A U ~= Y`` on training pairs."""

    def __init__(self, matrix, domain_shape, range_shape, n_train=0, svd_rank=0,
                 fit_residual=float("nan")):
        super().__init__(np.asarray(matrix, dtype=np.float64), domain_shape, range_shape)
        self.n_train = int(n_train)
        self.svd_rank = int(svd_rank)
        self.fit_residual = float(fit_residual)

    @property
    def provenance(self) -> dict:
        return {"n_train": self.n_train, "svd_rank": self.svd_rank,
                "fit_residual": self.fit_residual}


def prior_mean(priors: PriorSet) -> np.ndarray:
    """Pixelwise arithmetic mean over the active images."""
    if priors.n_active == 0:
        raise ValueError("prior set has no active images")
    return priors.images[priors.active].mean(axis=0)


def _geometric_mean(stack):
    if np.any(stack < 0):
        i, *pix = np.unravel_index(np.argmin(stack), stack.shape)
        raise ValueError(
            f"geometric mean undefined: prior[{i}] has negative value "
            f"{stack[(i, *pix)]!r} at pixel {tuple(int(p) for p in pix)}"
        )
    out = np.zeros(stack.shape[1:])
    positive = np.all(stack > 0, axis=0)
    # log-domain average avoids underflow of long products
    out[positive] = np.exp(np.log(stack[:, positive]).mean(axis=0))
    return out


def prior_geometric_mean(priors: PriorSet) -> np.ndarray:
    """Pixelwise ``(prod_i u^(i))^(1/n)`` over the active images.

    Any zero at a pixel forces a zero output there; negative pixels are
    rejected.
    """
    if priors.n_active == 0:
        raise ValueError("prior set has no active images")
    return _geometric_mean(priors.images[priors.active])


def prune_priors(priors: PriorSet, u_k, tol: float) -> PriorSet:
    """Deactivate active priors whose distance to ``u_k`` is ``>= tol``.

    Pruning never reactivates an image.  If every active image would be
    removed, only the single nearest one is kept and the event is recorded
    in ``priors.prune_events``.  The set is updated in place and returned.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    u_k = np.asarray(u_k, dtype=np.float64)
    if u_k.shape != priors.shape:
        raise ValueError(f"iterate shape {u_k.shape} does not match priors {priors.shape}")
    dist = np.sqrt(((priors.images - u_k) ** 2).reshape(len(priors), -1).sum(axis=1))
    keep = priors.active & (dist < tol)
    if not keep.any():
        candidates = np.flatnonzero(priors.active)
        nearest = candidates[np.argmin(dist[candidates])]
        keep[nearest] = True
        if candidates.size > 1:
            priors.prune_events.append({"event": "empty_guard", "kept": int(nearest)})
            logger.info("pruning would empty the prior set; keeping nearest prior %d", nearest)
    if not np.array_equal(keep, priors.active):
        priors.set_active(keep)
    return priors


def pseudoinverse(mat: np.ndarray, rtol: float = 1e-12):
    """Moore-Penrose pseudoinverse by thin SVD with relative truncation.

    Returns ``(pinv, rank)``.
    """
    uu, s, vt = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(mat.T.shape), 0
    keep = s > rtol * s[0]
    rank = int(keep.sum())
    pinv = (vt[keep].T / s[keep]) @ uu[:, keep].T
    return pinv, rank


def build_handcrafted_operator(priors: PriorSet, rtol: float = 1e-12) -> HandcraftedOperator:
    """Fit ``A = Y U^+`` from the prior images and their sinograms.

    ``U`` holds the flattened images column-wise, ``Y`` the flattened
    sinograms.  ``fit_residual = |AU - Y|_F / |Y|_F`` is recorded, not
    asserted.
    """
    if priors.sinograms is None:
        raise ValueError("prior set carries no sinograms; cannot fit A")
    n = len(priors)
    U = priors.images.reshape(n, -1).T
    Y = priors.sinograms.reshape(n, -1).T
    U_pinv, rank = pseudoinverse(U, rtol)
    if rank == 0:
        raise ValueError("image matrix U has rank 0")
    A = Y @ U_pinv
    ynorm = np.linalg.norm(Y)
    fit = float(np.linalg.norm(A @ U - Y) / ynorm) if ynorm > 0 else 0.0
    return HandcraftedOperator(
        A,
        tuple(priors.shape),
        tuple(priors.sinograms.shape[1:]),
        n_train=n,
        svd_rank=rank,
        fit_residual=fit,
    )
