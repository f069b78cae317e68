"""Multinomial logistic regression trained by full-batch gradient descent."""
import numpy as np

from .base import LOGISTIC, FittedModel


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(W, b, X, Y, l2):
    """Mean cross-entropy plus 0.5*l2*||W||^2 (bias unpenalized) and its gradient.

    ``Y`` is the one-hot target matrix.
    """
    n = X.shape[0]
    P = softmax(X @ W + b)
    loss = -np.sum(Y * np.log(np.clip(P, 1e-300, None))) / n + 0.5 * l2 * np.sum(W * W)
    R = (P - Y) / n
    return loss, X.T @ R + l2 * W, R.sum(axis=0)


class LogisticModel(FittedModel):
    kind = LOGISTIC

    def __init__(self, W, b, classes, train_fingerprint, epochs=0, converged=False):
        super().__init__(classes, W.shape[0], train_fingerprint)
        self.W = W
        self.b = b
        self.epochs = epochs
        self.converged = converged

    def predict_proba(self, X):
        X = self._check(X)
        return softmax(X @ self.W + self.b)


def fit_logistic(X, y_codes, classes, l2, max_epochs, learning_rate, tol, fp):
    n, d = X.shape
    C = len(classes)
    Y = np.zeros((n, C))
    Y[np.arange(n), y_codes] = 1.0
    if learning_rate is None:
        # 1/L for the softmax cross-entropy: its Hessian is bounded by 0.5*||[X 1]||^2/n
        Xb = np.hstack([X, np.ones((n, 1))])
        lipschitz = 0.5 * np.linalg.norm(Xb, 2) ** 2 / n + l2
        learning_rate = 1.0 / lipschitz
    W = np.zeros((d, C))
    b = np.zeros(C)
    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        _, gW, gb = loss_and_grad(W, b, X, Y, l2)
        if np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)) < tol:
            converged = True
            break
        W -= learning_rate * gW
        b -= learning_rate * gb
    return LogisticModel(W, b, classes, fp, epochs=epoch, converged=converged)
