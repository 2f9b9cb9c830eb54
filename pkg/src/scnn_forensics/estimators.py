"""scikit-learn style wrappers around the patch classifier and the localizer."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import localizer, model, postproc
from .dataset import WINDOW
from .errors import DataError, ParameterError, ShapeError


def check_patches(X):
    """Validate an (n, 32, 32, 3) float batch of RGB patches in [0, 1]."""
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_min_samples=1)
    if X.shape[1:] != (WINDOW, WINDOW, 3):
        raise ShapeError(f"expected patches of shape (n, {WINDOW}, {WINDOW}, 3), got {X.shape}")
    return X


def check_binary_labels(y):
    y = np.asarray(y).reshape(-1)
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0 (normal) or 1 (boundary)")
    return y.astype(np.int64)


class ScnnClassifier(ClassifierMixin, BaseEstimator):
    """Boundary-vs-normal patch classifier.

    ``fit`` holds out ``validation_fraction`` of the data (stratified by
    shuffling within each class) unless an explicit validation set is passed,
    and keeps the epoch with the best validation accuracy.
    """

    def __init__(self, learning_rate=1e-3, momentum=0.9, batch_size=64, max_epochs=20,
                 dropout_rate=0.5, laplacian_fraction=0.2, validation_fraction=0.2,
                 random_state=0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.dropout_rate = dropout_rate
        self.laplacian_fraction = laplacian_fraction
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ParameterError("learning_rate must be >= 0, batch_size and max_epochs >= 1")
        return model.TrainConfig(self.learning_rate, self.momentum, self.batch_size,
                                 self.max_epochs, self.dropout_rate, self.random_state,
                                 self.laplacian_fraction)

    def _split(self, X, y):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ParameterError("validation_fraction must lie in (0, 1)")
        rng = np.random.default_rng(self.random_state)
        val = np.zeros(len(y), dtype=bool)
        for label in (0, 1):
            idx = rng.permutation(np.flatnonzero(y == label))
            val[idx[:int(round(len(idx) * self.validation_fraction))]] = True
        return (X[~val], y[~val]), (X[val], y[val])

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32)
        X, y = check_patches(X), check_binary_labels(y)
        config = self._config()
        if X_val is None:
            train_set, val_set = self._split(X, y)
        else:
            train_set = (X, y)
            val_set = (check_patches(X_val), check_binary_labels(y_val))
        params = model.init_params(config)
        self.params_, self.history_ = model.train(params, train_set, val_set, config)
        self.classes_ = np.array([0, 1])
        return self

    @classmethod
    def from_params(cls, params, **kwargs):
        """Wrap already-trained parameters without fitting."""
        est = cls(**kwargs)
        est.params_, est.history_ = params, []
        est.classes_ = np.array([0, 1])
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        p = model.predict_proba(self.params_, check_patches(X)).astype(np.float64)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)


class ForgeryLocalizer(BaseEstimator):
    """Image -> probability map -> forgery boxes.

    ``classifier`` is a fitted :class:`ScnnClassifier`; ``fit`` only checks
    that. ``score`` is the fraction of images whose best box has IoU > 0.5
    with the tampered region.
    """

    def __init__(self, classifier=None, backend="fast", stride=2,
                 threshold=postproc.DEFAULT_THRESHOLD, median_k=postproc.DEFAULT_MEDIAN_K,
                 footprint=postproc.DEFAULT_FOOTPRINT):
        self.classifier = classifier
        self.backend = backend
        self.stride = stride
        self.threshold = threshold
        self.median_k = median_k
        self.footprint = footprint

    def fit(self, X=None, y=None):
        if self.classifier is None:
            raise NotFittedError("ForgeryLocalizer needs a fitted classifier")
        check_is_fitted(self.classifier, "params_")
        if self.backend not in localizer.BACKENDS:
            raise ParameterError(f"unknown backend {self.backend!r}")
        postproc.cell_extent(self.stride, WINDOW, self.footprint)
        self.params_ = self.classifier.params_
        return self

    def _image(self, image):
        return check_array(image, allow_nd=True, dtype=np.float32)

    def transform(self, images):
        """Probability maps, one per image."""
        check_is_fitted(self, "params_")
        return [localizer.probability_map(self.params_, self._image(im), self.backend,
                                          self.stride) for im in images]

    def predict(self, images):
        """Merged pixel boxes, one list per image."""
        out = []
        for pmap in self.transform(images):
            _, boxes = postproc.localize(pmap, self.threshold, self.median_k, self.footprint)
            out.append(boxes)
        return out

    def score(self, images, masks):
        verdicts = [postproc.evaluate(boxes, mask)
                    for boxes, mask in zip(self.predict(images), masks)]
        return postproc.corpus_accuracy(verdicts)
