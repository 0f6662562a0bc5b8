"""scikit-learn style wrappers around the potential.

``AcsfFeaturizer`` is a transformer from structures to per-atom
fingerprint matrices; ``NeuralPotential`` is a regressor mapping
structures to total energies, trainable on energies plus optional
forces and charges.  Both follow the estimator protocol (``get_params``
/ ``set_params`` / fitted attributes with trailing underscores), so
model selection utilities that accept list-like X work out of the box.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .descriptors import AcsfParams, compute_acsf, default_angular_set, default_radial_set
from .neighbors import build_neighbor_list
from .potential import PotentialModel, Prediction, predict
from .structure import Structure
from .training import Sample, TrainConfig, evaluate, train


def _acsf_from_params(cutoff, radial, angular, element_resolved) -> AcsfParams:
    return AcsfParams(
        cutoff=cutoff,
        radial=tuple(radial) if radial is not None else default_radial_set(),
        angular=tuple(angular) if angular is not None else default_angular_set(),
        element_resolved=element_resolved,
    )


class AcsfFeaturizer(TransformerMixin, BaseEstimator):
    """Structures -> per-atom fingerprint matrices.

    ``fit`` learns per-feature mean and scale over all atoms of the
    training structures; ``transform`` returns one standardized
    (n_atoms, n_features) array per structure.
    """

    def __init__(self, cutoff: float = 8.9, radial=None, angular=None,
                 element_resolved: bool = False, standardize: bool = True):
        self.cutoff = cutoff
        self.radial = radial
        self.angular = angular
        self.element_resolved = element_resolved
        self.standardize = standardize

    def _raw(self, structures):
        p = _acsf_from_params(self.cutoff, self.radial, self.angular,
                              self.element_resolved)
        out = []
        for s in structures:
            nl = build_neighbor_list(s, p.cutoff)
            out.append(compute_acsf(s, nl, p).values)
        return out

    def fit(self, X, y=None):
        g = np.vstack(self._raw(X))
        self.mean_ = g.mean(axis=0)
        scale = g.std(axis=0)
        self.scale_ = np.where(scale > 1e-8, scale, 1.0)
        self.n_features_out_ = g.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        raw = self._raw(X)
        if not self.standardize:
            return raw
        return [(g - self.mean_) / self.scale_ for g in raw]


class NeuralPotential(RegressorMixin, BaseEstimator):
    """Trainable interatomic potential with a fit/predict surface.

    ``X`` is a list of structures, ``y`` their total energies (eV).
    Reference forces and charges enter as fit keyword arguments.
    ``predict`` returns total energies; ``predict_full`` exposes the
    complete per-structure result (forces, charges, stress).
    """

    def __init__(self, cutoff: float = 8.9, radial=None, angular=None,
                 element_resolved: bool = False, hidden=(24, 24),
                 use_electrostatics: bool = False, use_charge_input=None,
                 elec_cutoff: float = 15.0,
                 w_e: float = 1.0, w_f: float = 0.0, w_q: float = 0.0,
                 lr: float = 0.02, epochs: int = 500, batch_size=None,
                 val_fraction: float = 0.0, optimizer: str = "adam",
                 tol_e=None, tol_f=None, seed: int = 0):
        self.cutoff = cutoff
        self.radial = radial
        self.angular = angular
        self.element_resolved = element_resolved
        self.hidden = hidden
        self.use_electrostatics = use_electrostatics
        self.use_charge_input = use_charge_input
        self.elec_cutoff = elec_cutoff
        self.w_e = w_e
        self.w_f = w_f
        self.w_q = w_q
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.optimizer = optimizer
        self.tol_e = tol_e
        self.tol_f = tol_f
        self.seed = seed

    def _samples(self, X, y, forces, charges) -> list[Sample]:
        if y is None and all(isinstance(x, Sample) for x in X):
            return list(X)
        y = np.asarray(y, dtype=float).reshape(len(X))
        return [
            Sample(s, float(e),
                   None if forces is None else forces[i],
                   None if charges is None else charges[i])
            for i, (s, e) in enumerate(zip(X, y))
        ]

    def fit(self, X, y=None, forces=None, charges=None):
        samples = self._samples(X, y, forces, charges)
        acsf = _acsf_from_params(self.cutoff, self.radial, self.angular,
                                 self.element_resolved)
        model = PotentialModel.create(
            acsf=acsf, hidden=tuple(self.hidden), seed=self.seed,
            use_electrostatics=self.use_electrostatics,
            use_charge_input=self.use_charge_input,
            elec_cutoff=self.elec_cutoff,
        )
        cfg = TrainConfig(
            w_e=self.w_e, w_f=self.w_f, w_q=self.w_q, lr=self.lr,
            epochs=self.epochs, batch_size=self.batch_size,
            val_fraction=self.val_fraction, optimizer=self.optimizer,
            tol_e=self.tol_e, tol_f=self.tol_f, seed=self.seed,
        )
        self.model_, self.history_ = train(model, samples, cfg)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return np.array([predict(s, self.model_).e_total for s in X])

    def predict_full(self, structure: Structure) -> Prediction:
        check_is_fitted(self, "model_")
        return predict(structure, self.model_)

    def evaluate(self, X, y=None, forces=None, charges=None):
        check_is_fitted(self, "model_")
        return evaluate(self.model_, self._samples(X, y, forces, charges))
