"""scikit-learn compatible classifiers wrapping the layer-local and backprop
trainers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import InvalidInputError
from .network import build_cnn, build_mlp, load_checkpoint, save_checkpoint
from .numerics import softmax
from .trainers import SLLConfig, per_layer_probe, train_epochs


class _LocalNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    _method = "sll"

    def __init__(self, hidden_layer_sizes=(800, 800), conv_channels=(), image_shape=None,
                 optimizer="adamax", learning_rate=1e-3, epochs=100, batch_size=128,
                 keep_prob=0.9, dropout=0.0, batchnorm=False, bc_weight=1.0,
                 final_align=True, bc_layers=None, label_concat=False, head_dim=None,
                 augment=(), random_state=0, verbose=False):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.conv_channels = conv_channels
        self.image_shape = image_shape
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.keep_prob = keep_prob
        self.dropout = dropout
        self.batchnorm = batchnorm
        self.bc_weight = bc_weight
        self.final_align = final_align
        self.bc_layers = bc_layers
        self.label_concat = label_concat
        self.head_dim = head_dim
        self.augment = augment
        self.random_state = random_state
        self.verbose = verbose

    def _config(self) -> SLLConfig:
        return SLLConfig(lr=self.learning_rate, optimizer=self.optimizer, epochs=self.epochs,
                         batch_size=self.batch_size, bc_weight=self.bc_weight,
                         final_align=self.final_align,
                         bc_layers=None if self.bc_layers is None else tuple(self.bc_layers),
                         seed=self.random_state, augment=tuple(self.augment),
                         image_shape=None if self.image_shape is None else tuple(self.image_shape))

    def _build(self, n_features: int, n_classes: int):
        seed = self.random_state
        if self.conv_channels:
            if self.image_shape is None or int(np.prod(self.image_shape)) != n_features:
                raise InvalidInputError("conv_channels needs image_shape matching the features")
            return build_cnn(tuple(self.image_shape), list(self.conv_channels), n_classes,
                             seed=seed, keep_prob=self.keep_prob,
                             head_dim=self.head_dim or 1024,
                             hidden=list(self.hidden_layer_sizes), dropout=self.dropout,
                             label_concat=self.label_concat)
        return build_mlp(n_features, list(self.hidden_layer_sizes), n_classes, seed=seed,
                         keep_prob=self.keep_prob, dropout=self.dropout,
                         batchnorm=self.batchnorm, label_concat=self.label_concat,
                         head_dim=self.head_dim)

    def _encode(self, y):
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.all(self.classes_[idx] == y):
            raise InvalidInputError("y contains labels not seen in fit")
        return idx

    def fit(self, X, y, eval_set=None, run_id="run", callback=None):
        """Train from scratch for ``epochs`` epochs.

        ``eval_set=(X_val, y_val)`` adds a held-out accuracy to every epoch's
        history rows.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise InvalidInputError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        self.network_ = self._build(X.shape[1], len(self.classes_))
        self.history_ = []
        self.epochs_trained_ = 0
        return self._run(X, y, self.epochs, eval_set, run_id, callback)

    def partial_fit(self, X, y, classes=None, eval_set=None, run_id="run"):
        """One more epoch on ``(X, y)``; the first call builds the network."""
        X, y = check_X_y(X, y, dtype=np.float64)
        if not hasattr(self, "network_"):
            self.classes_ = np.unique(y if classes is None else classes)
            self.n_features_in_ = X.shape[1]
            self.network_ = self._build(X.shape[1], len(self.classes_))
            self.history_ = []
            self.epochs_trained_ = 0
        return self._run(X, y, 1, eval_set, run_id, None)

    def _run(self, X, y, epochs, eval_set, run_id, callback):
        cfg = self._config()
        X_te = y_te = None
        if eval_set is not None:
            X_te = check_array(eval_set[0], dtype=np.float64)
            y_te = self._encode(np.asarray(eval_set[1]))

        def log(summary):
            self.history_.extend(summary.rows)
            if self.verbose:
                last = summary.layers[-1]
                msg = f"epoch {summary.epoch}: loss {last.total:.4f} train acc {last.head_accuracy:.4f}"
                if summary.test is not None:
                    msg += f" test acc {summary.test['accuracy']:.4f}"
                print(msg, flush=True)
            if callback is not None:
                callback(summary)

        train_epochs(self.network_, X, self._encode(y), cfg, method=self._method,
                     X_test=X_te, y_test=y_te, epochs=epochs,
                     start_epoch=self.epochs_trained_, run_id=run_id, callback=log)
        self.epochs_trained_ += epochs
        return self

    def _inputs(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if len(self.network_.in_shape) == 3:
            X = X.reshape((X.shape[0],) + tuple(self.network_.in_shape))
        return X

    def decision_function(self, X):
        X = self._inputs(X)
        out = [self.network_.logits(X[i:i + 1000]) for i in range(0, X.shape[0], 1000)]
        return np.concatenate(out).reshape(X.shape[0], -1)

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def transform(self, X, layer: int = -2):
        """Activations of ``layer`` (0-based into the layer list; default is
        the last hidden layer), flattened per sample."""
        X = self._inputs(X)
        outs = self.network_.forward(X)
        h = outs[layer]
        return h.reshape(h.shape[0], -1)

    def probe(self, X, y):
        """Per-layer local losses and head accuracies on ``(X, y)``."""
        X = self._inputs(X)
        return per_layer_probe(self.network_, X, self._encode(np.asarray(y)))

    def save(self, path):
        check_is_fitted(self, "network_")
        net = self.network_
        net.meta = {"classes": self.classes_.tolist(), "method": self._method,
                    "params": {k: (list(v) if isinstance(v, tuple) else v)
                               for k, v in self.get_params().items()}}
        save_checkpoint(path, net)

    @classmethod
    def load(cls, path):
        net = load_checkpoint(path)
        params = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in net.meta.get("params", {}).items()}
        est = cls(**params) if params else cls()
        est.network_ = net
        est.classes_ = np.asarray(net.meta.get("classes", list(range(net.num_classes))))
        est.n_features_in_ = int(np.prod(net.in_shape))
        est.history_ = []
        est.epochs_trained_ = 0
        return est


class SLLClassifier(_LocalNetClassifier):
    """Network trained layer by layer with local prediction and Bhattacharyya
    alignment losses on fixed random-projection heads; no gradient crosses a
    layer boundary.

    The default architecture and optimizer match the MNIST setup: two relu
    layers of 800 units, Adamax with learning rate 1e-3, batch 128.
    """

    _method = "sll"


class BPClassifier(_LocalNetClassifier):
    """Same networks trained end to end with backpropagation (baseline)."""

    _method = "bp"
