"""Linear classifiers on standardized features: multinomial logistic regression and ridge."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp


def standardization(X):
    """Per-column mean and std from the training matrix; constant columns get std 1."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def one_hot(y, n_classes):
    Y = np.zeros((len(y), n_classes))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def lr_objective(W, b, X, Y, C):
    """Mean softmax cross-entropy plus an L2 penalty of strength 1/C (sum-scaled) on W."""
    n = len(X)
    Z = X @ W + b
    ce = np.sum(logsumexp(Z, axis=1) - np.sum(Y * Z, axis=1)) / n
    return ce + np.sum(W * W) / (2.0 * C * n)


def lr_gradient(W, b, X, Y, C):
    n = len(X)
    Z = X @ W + b
    P = np.exp(Z - logsumexp(Z, axis=1, keepdims=True))
    R = (P - Y) / n
    return X.T @ R + W / (C * n), R.sum(axis=0)


def fit_logistic(X, y, n_classes, C, tol=1e-6, max_epochs=1000):
    """Full-batch gradient descent with Armijo backtracking.

    The trial step of each epoch is the Barzilai-Borwein estimate from the
    previous move; backtracking halves it until sufficient decrease holds.
    Returns (W, b, epochs_run, final_gradient_norm).
    """
    p = X.shape[1]
    Y = one_hot(y, n_classes)
    W = np.zeros((p, n_classes))
    b = np.zeros(n_classes)
    f = lr_objective(W, b, X, Y, C)
    gW, gb = lr_gradient(W, b, X, Y, C)
    step = 1.0
    gnorm = np.sqrt(np.sum(gW * gW) + np.sum(gb * gb))
    epoch = 0
    while epoch < max_epochs and gnorm >= tol:
        epoch += 1
        g2 = gnorm * gnorm
        t = step
        while True:
            W_new = W - t * gW
            b_new = b - t * gb
            f_new = lr_objective(W_new, b_new, X, Y, C)
            if f_new <= f - 1e-4 * t * g2 or t < 1e-12:
                break
            t *= 0.5
        gW_new, gb_new = lr_gradient(W_new, b_new, X, Y, C)
        sW, sb = W_new - W, b_new - b
        dW, db = gW_new - gW, gb_new - gb
        sy = np.sum(sW * dW) + np.sum(sb * db)
        step = (np.sum(sW * sW) + np.sum(sb * sb)) / sy if sy > 0 else 2.0 * t
        step = float(np.clip(step, 1e-8, 1e8))
        if f_new > f:
            break
        W, b, f, gW, gb = W_new, b_new, f_new, gW_new, gb_new
        gnorm = np.sqrt(np.sum(gW * gW) + np.sum(gb * gb))
    return W, b, epoch, gnorm


def fit_ridge(X, y, n_classes, alpha, fit_intercept):
    """One-vs-rest least squares on +/-1 targets, closed form."""
    T = 2.0 * one_hot(y, n_classes) - 1.0
    if fit_intercept:
        xm = X.mean(axis=0)
        tm = T.mean(axis=0)
        Xc, Tc = X - xm, T - tm
    else:
        xm = np.zeros(X.shape[1])
        tm = np.zeros(n_classes)
        Xc, Tc = X, T
    A = Xc.T @ Xc
    B = Xc.T @ Tc
    if alpha > 0:
        A = A + alpha * np.eye(A.shape[0])
        W = np.linalg.solve(A, B)
    else:
        W = np.linalg.lstsq(Xc, Tc, rcond=None)[0]
    b = tm - xm @ W
    return W, b
