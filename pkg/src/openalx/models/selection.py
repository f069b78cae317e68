import numpy as np

from .._util import make_rng
from ..data import preprocess
from . import fit
from ..metrics import accuracy


def stratified_kfold(y_codes, k, seed):
    """Fold id per row: each class is shuffled then dealt round-robin."""
    rng = make_rng(seed, "kfold", k)
    fold_of = np.empty(len(y_codes), dtype=np.int64)
    for c in np.unique(y_codes):
        members = rng.permutation(np.flatnonzero(y_codes == c))
        fold_of[members] = np.arange(len(members)) % k
    return fold_of


def cross_val_accuracy(spec, ds, k=5, seed=0):
    fold_of = stratified_kfold(ds.y_codes, k, seed)
    scores = []
    for f in range(k):
        train = np.flatnonzero(fold_of != f)
        test = np.flatnonzero(fold_of == f)
        fm = preprocess(ds, train)
        model = fit(spec, fm.X[train], ds.y_codes[train])
        scores.append(accuracy(model.predict(fm.X[test]), ds.y_codes[test]))
    return float(np.mean(scores))


def select_model(specs, ds, k=5, seed=0, return_scores=False):
    """Spec with the best k-fold accuracy over the whole dataset (first wins ties)."""
    if not specs:
        raise ValueError("select_model needs at least one spec")
    scores = [cross_val_accuracy(spec, ds, k, seed) for spec in specs]
    best = int(np.argmax(scores))
    if return_scores:
        return specs[best], scores
    return specs[best]
