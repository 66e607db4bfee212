"""Smoke/background color classifier for point clouds (diagonal Gaussian naive Bayes)."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .reconstruction import PointCloud
from .sensing import segment_smoke

BACKGROUND, SMOKE = 0, 1
VAR_FLOOR = 1e-4
MIN_SAMPLES = 10


class InsufficientSamples(ValueError):
    pass


def _fsum_columns(x) -> np.ndarray:
    # exactly rounded sums do not depend on sample order
    return np.array([math.fsum(col) for col in x.T])


class GaussianNBClassifier(BaseEstimator, ClassifierMixin):
    """Two-class naive Bayes on rgb. Labels: 0 background, 1 smoke.

    Ties in posterior go to background.
    """

    def __init__(self, var_floor=VAR_FLOOR, min_samples=MIN_SAMPLES):
        self.var_floor = var_floor
        self.min_samples = min_samples

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y).astype(int).ravel()
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        if not set(np.unique(y)) <= {BACKGROUND, SMOKE}:
            raise ValueError("labels must be 0 (background) or 1 (smoke)")
        self.classes_ = np.array([BACKGROUND, SMOKE])
        means, variances, counts = [], [], []
        for c in self.classes_:
            xc = X[y == c]
            if len(xc) < self.min_samples:
                raise InsufficientSamples(f"class {c} has {len(xc)} samples < {self.min_samples}")
            mu = _fsum_columns(xc) / len(xc)
            var = _fsum_columns((xc - mu) ** 2) / len(xc)
            means.append(mu)
            variances.append(np.maximum(var, self.var_floor))
            counts.append(len(xc))
        self.theta_ = np.array(means)
        self.var_ = np.array(variances)
        self.class_count_ = np.array(counts, dtype=float)
        self.class_prior_ = self.class_count_ / self.class_count_.sum()
        self.n_features_in_ = X.shape[1]
        return self

    def joint_log_likelihood(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=float)
        out = np.empty((len(X), 2))
        for c in range(2):
            ll = -0.5 * (np.log(2 * np.pi * self.var_[c]) + (X - self.theta_[c]) ** 2 / self.var_[c])
            out[:, c] = np.log(self.class_prior_[c]) + ll.sum(axis=1)
        return out

    def predict_proba(self, X) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        jll -= jll.max(axis=1, keepdims=True)
        p = np.exp(jll)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        return np.where(jll[:, SMOKE] > jll[:, BACKGROUND], SMOKE, BACKGROUND)


def train_classifier(smoke_rgb, background_rgb, var_floor=VAR_FLOOR) -> GaussianNBClassifier:
    smoke = np.asarray(smoke_rgb, dtype=float).reshape(-1, 3)
    bg = np.asarray(background_rgb, dtype=float).reshape(-1, 3)
    for name, arr in (("smoke", smoke), ("background", bg)):
        if len(arr) < MIN_SAMPLES:
            raise InsufficientSamples(f"{len(arr)} {name} samples < {MIN_SAMPLES}")
    X = np.concatenate([smoke, bg])
    y = np.concatenate([np.full(len(smoke), SMOKE), np.full(len(bg), BACKGROUND)])
    return GaussianNBClassifier(var_floor=var_floor).fit(X, y)


def filter_cloud(cloud: PointCloud, model: GaussianNBClassifier) -> PointCloud:
    """Keep the points classified as smoke, in their original order."""
    if len(cloud) == 0:
        return cloud.subset(np.zeros(0, dtype=int))
    return cloud.subset(model.predict(cloud.colors) == SMOKE)


def sample_training_frames(frames, k: int = 3, seed: int = 0):
    """Pick ``k`` distinct frames with a seeded generator.

    ``frames`` is a sequence of Images or of zero-argument callables producing
    them (so a segment's images can stay unrendered until picked). Returns
    (indices, images, oracle masks).
    """
    n = len(frames)
    if n == 0:
        raise ValueError("segment has no frames")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    images = [frames[i]() if callable(frames[i]) else frames[i] for i in idx]
    return idx, images, [segment_smoke(img) for img in images]


def training_pixels(images, masks):
    """(smoke rgb, background rgb) pooled over frames."""
    smoke, bg = [], []
    for img, m in zip(images, masks):
        rgb = img.rgb.reshape(-1, 3)
        bits = np.asarray(m.bits).reshape(-1)
        smoke.append(rgb[bits])
        bg.append(rgb[~bits])
    return np.concatenate(smoke), np.concatenate(bg)


def save_model(path, model: GaussianNBClassifier) -> None:
    check_is_fitted(model, "theta_")
    lines = ["class\tprior\tmean_r\tmean_g\tmean_b\tvar_r\tvar_g\tvar_b"]
    for c, name in ((BACKGROUND, "background"), (SMOKE, "smoke")):
        vals = [model.class_prior_[c], *model.theta_[c], *model.var_[c]]
        lines.append(name + "\t" + "\t".join(repr(float(v)) for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> GaussianNBClassifier:
    rows = {}
    with open(path) as fh:
        fh.readline()
        for line in fh:
            name, *vals = line.rstrip("\n").split("\t")
            rows[name] = [float(v) for v in vals]
    model = GaussianNBClassifier()
    model.classes_ = np.array([BACKGROUND, SMOKE])
    order = ("background", "smoke")
    model.class_prior_ = np.array([rows[n][0] for n in order])
    model.theta_ = np.array([rows[n][1:4] for n in order])
    model.var_ = np.array([rows[n][4:7] for n in order])
    model.class_count_ = model.class_prior_.copy()
    model.n_features_in_ = 3
    return model
