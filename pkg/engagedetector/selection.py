"""
Engagement Detector - Feature Selection
Minimum-redundancy maximum-relevance ranking: three-state discretization,
discrete mutual information and greedy MID/MIQ forward selection.
"""

from __future__ import annotations

import os
import logging
from dataclasses import dataclass

import numpy as np

from . import config

logger = logging.getLogger(__name__)

SCHEMES = ("mid", "miq")


@dataclass(frozen=True)
class DiscretizedMatrix:
    values: np.ndarray
    edges: tuple
    labels: np.ndarray
    feature_ids: tuple


@dataclass(frozen=True)
class MrmrRanking:
    feature_ids: tuple
    scores: tuple
    scheme: str

    def __len__(self):
        return len(self.feature_ids)

    def top(self, k):
        return self.feature_ids[:k]

    def to_text(self, header=""):
        lines = [header] if header else []
        lines.append("rank\tfeature_id\tscore")
        for rank, (fid, score) in enumerate(zip(self.feature_ids, self.scores), start=1):
            lines.append(f"{rank}\t{fid}\t{score:.10g}")
        return "\n".join(lines) + "\n"

    def write(self, path, header=""):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.to_text(header))
        logger.info(f"MRMR ranking ({self.scheme}, {len(self)} features) written to {path}")

    @classmethod
    def read(cls, path, scheme=config.MRMR_SCHEME):
        if not os.path.isfile(path):
            raise FileNotFoundError(f"Ranking file not found: {path}")
        ids, scores = [], []
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.rstrip("\n")
                if not line or line.startswith("#") or line.startswith("rank\t"):
                    continue
                rank, fid, score = line.split("\t")
                if int(rank) != len(ids) + 1:
                    raise ValueError(f"{path}: rank {rank} out of order")
                ids.append(fid)
                scores.append(float(score))
        return cls(tuple(ids), tuple(scores), scheme)


def discretize(column):
    """Three states split at mean +/- one population standard deviation.

    Returns:
        tuple: (int array of states in {0, 1, 2}, (low edge, high edge))
    """
    x = np.asarray(column, dtype=float)
    if x.size < 2:
        raise ValueError("discretization needs at least 2 samples")
    mu = float(x.mean())
    sigma = float(x.std())
    states = np.ones(x.size, dtype=np.int64)
    if sigma <= 1e-12 * max(1.0, abs(mu)):
        return states, (mu, mu)
    lo, hi = mu - sigma, mu + sigma
    states[x < lo] = 0
    states[x > hi] = 2
    return states, (lo, hi)


def discretize_matrix(X, labels=None, feature_ids=None):
    X = np.asarray(X, dtype=float)
    columns, edges = [], []
    for j in range(X.shape[1]):
        states, e = discretize(X[:, j])
        columns.append(states)
        edges.append(e)
    values = np.column_stack(columns) if columns else np.zeros((X.shape[0], 0), dtype=np.int64)
    ids = tuple(feature_ids) if feature_ids is not None else tuple(f"f{j}" for j in range(X.shape[1]))
    y = np.asarray(labels, dtype=np.int64) if labels is not None else np.zeros(X.shape[0], dtype=np.int64)
    return DiscretizedMatrix(values=values, edges=tuple(edges), labels=y, feature_ids=ids)


def mutual_information(x, y):
    """I(X;Y) in bits over the empirical joint distribution."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError("mutual information needs at least one sample")
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    nx, ny = int(xi.max()) + 1, int(yi.max()) + 1
    joint = np.bincount(xi * ny + yi, minlength=nx * ny).reshape(nx, ny) / x.size
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log2(joint[nz] / np.outer(px, py)[nz])))
    return max(mi, 0.0)


def mrmr_rank(matrix, labels, k, scheme=config.MRMR_SCHEME, feature_ids=None):
    """Greedy MRMR forward selection over discretized columns.

    The first pick maximizes relevance I(f; label); later picks maximize
    relevance minus (MID) or over (MIQ) the mean redundancy with the
    already selected set. Ties go to the lower feature index.
    """
    scheme = scheme.lower()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown MRMR scheme: {scheme}")
    X = np.asarray(matrix)
    n_features = X.shape[1]
    if not 1 <= k <= n_features:
        raise ValueError(f"k={k} must lie in [1, {n_features}]")
    ids = tuple(feature_ids) if feature_ids is not None else tuple(f"f{j}" for j in range(n_features))

    relevance = np.array([mutual_information(X[:, j], labels) for j in range(n_features)])
    redundancy = np.zeros(n_features)
    selected = [int(np.argmax(relevance))]
    scores = [float(relevance[selected[0]])]
    warned = False

    while len(selected) < k:
        last = selected[-1]
        for j in range(n_features):
            if j not in selected:
                redundancy[j] += mutual_information(X[:, j], X[:, last])
        mean_red = redundancy / len(selected)
        if scheme == "mid":
            criterion = relevance - mean_red
        else:
            zero = mean_red <= 0.0
            candidates = np.ones(n_features, dtype=bool)
            candidates[selected] = False
            if (zero & candidates).any() and not warned:
                logger.warning(f"MIQ: zero mean redundancy, substituting {config.MIQ_EPSILON}")
                warned = True
            criterion = relevance / np.where(zero, config.MIQ_EPSILON, mean_red)
        criterion[selected] = -np.inf
        best = int(np.argmax(criterion))
        selected.append(best)
        scores.append(float(criterion[best]))
        logger.debug(f"MRMR step {len(selected)}: {ids[best]} ({scores[-1]:.6f})")

    return MrmrRanking(feature_ids=tuple(ids[j] for j in selected), scores=tuple(scores), scheme=scheme)


def rank_dataset(X, labels, k=None, scheme=config.MRMR_SCHEME, feature_ids=None):
    """Discretizes a raw feature matrix and ranks it against integer labels."""
    disc = discretize_matrix(X, labels, feature_ids)
    k = disc.values.shape[1] if k is None else k
    ranking = mrmr_rank(disc.values, disc.labels, k, scheme, disc.feature_ids)
    logger.info(f"MRMR ({scheme}) ranked {len(ranking)} of {disc.values.shape[1]} features; "
                f"first: {ranking.feature_ids[0]}")
    return ranking
