"""Surrogate selection: LARS-lasso entry order, fixed-lambda lasso, forward
stepwise, the OLS refit, and the polyhedral selection events ``{y : A y <= b}``.

All selectors work on centered columns scaled to unit population standard
deviation and on the centered response.  The event matrices are expressed in
the coordinates of the raw response (centering is folded into ``A``), so
``A @ y <= b`` can be checked directly on the surrogate response.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

METHODS = ("lars_k", "lasso_lambda", "stepwise_k")
_TIE_TOL = 1e-12


class SelectionError(ValueError):
    pass


class DegenerateSelectionError(SelectionError):
    pass


@dataclass(frozen=True, eq=False)
class OlsFit:
    intercept: float
    beta_hat: np.ndarray
    sigma2_hat: float
    contrasts: np.ndarray  # row k reproduces beta_hat[k] as contrasts[k] @ y
    df_resid: int
    xtx_inv: np.ndarray


@dataclass(frozen=True, eq=False)
class SelectionOutcome:
    method: str
    S: tuple[int, ...]
    signs: tuple[int, ...]
    intercept: float
    beta_hat: np.ndarray
    sigma2_hat: float
    contrasts: np.ndarray
    A: np.ndarray
    b: np.ndarray
    df_resid: int
    lam: float | None = None
    knots: tuple[float, ...] = ()
    flags: tuple[str, ...] = ()
    ties: tuple[int, ...] = field(default=())

    @property
    def has_polyhedron(self) -> bool:
        return self.method != "lars_k"

    def event_key(self) -> tuple:
        """What the polyhedron conditions on: set and signs (lasso), or
        ordered entries and signs (stepwise)."""
        if self.method == "lasso_lambda":
            order = np.argsort(self.S)
            return tuple(self.S[i] for i in order), tuple(self.signs[i] for i in order)
        return self.S, self.signs

    def slack(self, y) -> np.ndarray:
        return self.b - self.A @ np.asarray(y, dtype=float)


def _standardize(X):
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (X - mean) / scale, mean, scale


def _centering(n):
    return np.eye(n) - 1.0 / n


# ---------------------------------------------------------------------------
# OLS refit


def refit_ols(X_S, y) -> OlsFit:
    """OLS with an intercept on the columns of ``X_S``.

    ``sigma2_hat`` uses ``n - |S| - 1`` degrees of freedom.  Raises
    :class:`SelectionError` naming any column that is collinear with the
    intercept and the columns before it.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    X_S = np.asarray(X_S, dtype=float).reshape(n, -1)
    k = X_S.shape[1]
    Z = np.column_stack([np.ones(n), X_S])
    # greedy rank check, reporting offending columns by position
    basis = np.ones((n, 1)) / np.sqrt(n)
    collinear = []
    for j in range(k):
        col = X_S[:, j]
        res = col - basis @ (basis.T @ col)
        if np.linalg.norm(res) <= 1e-10 * max(1.0, np.linalg.norm(col)):
            collinear.append(j)
        else:
            basis = np.column_stack([basis, res / np.linalg.norm(res)])
    if collinear:
        raise SelectionError(f"design is rank deficient; collinear columns at positions {collinear}")
    df = n - k - 1
    if df < 1:
        raise SelectionError(f"need n >= |S| + 2 rows for the refit, got n={n}, |S|={k}")
    Q, R = np.linalg.qr(Z)
    pinv = solve_triangular(R, Q.T)  # (Z'Z)^{-1} Z'
    coef = pinv @ y
    resid = y - Z @ coef
    r_inv = solve_triangular(R, np.eye(k + 1))
    return OlsFit(
        intercept=float(coef[0]),
        beta_hat=coef[1:],
        sigma2_hat=float(resid @ resid / df),
        contrasts=pinv[1:],
        df_resid=df,
        xtx_inv=(r_inv @ r_inv.T)[1:, 1:],
    )


# ---------------------------------------------------------------------------
# LARS homotopy


@dataclass
class _Path:
    beta: np.ndarray
    lam: float
    order: list  # distinct variables in order of first entry
    knots: list  # lambda at each first entry
    dropped: bool = False
    exhausted: bool = False


def _lars(Xs, yc, lam_stop=0.0, max_distinct=None, max_iter=None) -> _Path:
    """Lasso-modified LARS on centered/standardized inputs.

    Follows the piecewise-linear lasso path of ``1/2 ||y - X b||^2 + lam ||b||_1``
    from ``lam = max |X'y|`` down to ``lam_stop``, or until ``max_distinct``
    distinct variables have entered.
    """
    n, p = Xs.shape
    beta = np.zeros(p)
    c = Xs.T @ yc
    lam = float(np.max(np.abs(c))) if p else 0.0
    path = _Path(beta, lam, [], [])
    if lam <= lam_stop or lam == 0.0 or max_distinct == 0:
        path.lam = max(lam, lam_stop)
        return path
    j = int(np.argmax(np.abs(c)))
    active, sign = [j], {j: float(np.sign(c[j]))}
    path.order.append(j)
    path.knots.append(lam)
    max_iter = max_iter or 8 * (p + 1)
    scale = max(1.0, lam)
    event = None
    for _ in range(max_iter):
        if max_distinct is not None and len(path.order) >= max_distinct:
            break
        XA = Xs[:, active]
        s = np.array([sign[k] for k in active])
        try:
            d = np.linalg.solve(XA.T @ XA, s)
        except np.linalg.LinAlgError:
            path.exhausted = True
            break
        c = Xs.T @ (yc - Xs @ beta)
        a = Xs.T @ (XA @ d)
        gamma, event, who = lam - lam_stop, "stop", -1
        inactive = np.setdiff1d(np.arange(p), active)
        if len(active) < min(p, n - 1):
            for jj in inactive:
                for num, den in ((lam - c[jj], 1.0 - a[jj]), (lam + c[jj], 1.0 + a[jj])):
                    if den > 1e-12:
                        g = num / den
                        if 1e-12 * scale < g < gamma - 1e-14 * scale:
                            gamma, event, who = g, "enter", int(jj)
        for pos, k in enumerate(active):
            if d[pos] != 0.0:
                g = -beta[k] / d[pos]
                if 1e-12 * scale < g < gamma - 1e-14 * scale:
                    gamma, event, who = g, "drop", k
        beta[active] += gamma * d
        lam -= gamma
        if event == "stop":
            break
        if event == "drop":
            active.remove(who)
            del sign[who]
            beta[who] = 0.0
            path.dropped = True
        else:
            cj = float(Xs[:, who] @ (yc - Xs @ beta))
            active.append(who)
            sign[who] = float(np.sign(cj))
            if who not in path.order:
                path.order.append(who)
                path.knots.append(float(lam))
        if lam <= lam_stop + 1e-15 * scale:
            break
    else:
        raise SelectionError("LARS did not terminate")
    if not path.order or (event == "stop" and lam_stop == 0.0):
        path.exhausted = True
    path.lam = lam
    return path


def _outcome(method, X, y, S, signs, A, b, **extra) -> SelectionOutcome:
    fit = refit_ols(X[:, list(S)], y)
    return SelectionOutcome(
        method=method,
        S=tuple(int(j) for j in S),
        signs=tuple(int(s) for s in signs),
        intercept=fit.intercept,
        beta_hat=fit.beta_hat,
        sigma2_hat=fit.sigma2_hat,
        contrasts=fit.contrasts,
        A=A,
        b=b,
        df_resid=fit.df_resid,
        **extra,
    )


def lars_first_k(X, y, K: int, standardize: bool = True) -> SelectionOutcome:
    """First ``K`` distinct variables to enter the LARS-lasso path.

    No selection polyhedron is attached; use split-sample inference.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if K < 0 or K > min(p, n - 2):
        raise SelectionError(f"K must lie in [0, min(p, n-2)] = [0, {min(p, n - 2)}], got {K}")
    Xs = _standardize(X)[0] if standardize else X - X.mean(axis=0)
    yc = y - y.mean()
    path = _lars(Xs, yc, max_distinct=K)
    S = path.order[:K]
    flags = []
    if len(S) < K:
        flags.append("path_ended_early")
        logger.warning("LARS path ended after %d of %d entries", len(S), K)
    if path.dropped:
        flags.append("variable_dropped")
    corr = Xs.T @ yc
    signs = [int(np.sign(corr[j])) or 1 for j in S]
    return _outcome(
        "lars_k", X, y, S, signs, np.zeros((0, n)), np.zeros(0),
        lam=path.knots[K - 1] if 0 < K <= len(path.knots) else None,
        knots=tuple(path.knots), flags=tuple(flags),
    )


def lars_knots(X, y, K: int, standardize: bool = True) -> list[float]:
    """Lambda values at which the first ``K`` distinct variables enter."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    Xs = _standardize(X)[0] if standardize else X - X.mean(axis=0)
    return _lars(Xs, y - y.mean(), max_distinct=K).knots


def lasso_solution(X, y, lam: float) -> np.ndarray:
    """Lasso coefficients on the standardized scale at penalty ``lam``."""
    Xs = _standardize(np.asarray(X, dtype=float))[0]
    y = np.asarray(y, dtype=float).ravel()
    return _lars(Xs, y - y.mean(), lam_stop=lam).beta


def lasso_fixed_lambda(X, y, lam: float, check_event: bool = True) -> SelectionOutcome:
    """Lasso at a fixed penalty with its sign-conditioned selection polyhedron.

    Solves ``min 1/2 ||y_c - X_s b||^2 + lam ||b||_1`` on standardized columns
    exactly along the homotopy path.
    """
    if not lam > 0:
        raise SelectionError("lambda must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    Xs = _standardize(X)[0]
    yc = y - y.mean()
    path = _lars(Xs, yc, lam_stop=lam)
    beta = path.beta
    kkt = Xs.T @ (yc - Xs @ beta)
    on = np.flatnonzero(beta != 0.0)
    viol = max(
        float(np.max(np.abs(kkt[on] - lam * np.sign(beta[on])))) if on.size else 0.0,
        float(np.max(np.abs(kkt)) - lam) if p else 0.0,
    )
    if viol > 1e-6 * max(1.0, lam):
        raise SelectionError(f"lasso KKT residual {viol:.3g} exceeds tolerance; solver did not converge")
    S = [int(j) for j in on]
    s = np.sign(beta[S])
    C = _centering(n)
    rows, rhs = [], []
    off = np.setdiff1d(np.arange(p), S)
    if S:
        XS = Xs[:, S]
        inv = np.linalg.inv(XS.T @ XS)
        rows.append(-np.diag(s) @ inv @ XS.T)
        rhs.append(-lam * np.diag(s) @ inv @ s)
        resid_op = C - XS @ inv @ XS.T
        shift = Xs[:, off].T @ XS @ inv @ s
    else:
        resid_op = C
        shift = np.zeros(off.size)
    if off.size:
        inact = Xs[:, off].T @ resid_op / lam
        rows += [inact, -inact]
        rhs += [1.0 - shift, 1.0 + shift]
    A = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    out = _outcome("lasso_lambda", X, y, S, s, A, b, lam=float(lam), knots=tuple(path.knots))
    if check_event and A.shape[0] and np.min(out.slack(y)) < -1e-8 * max(1.0, np.max(np.abs(b))):
        raise SelectionError("observed response violates its own lasso selection event")
    return out


def stepwise_first_k(X, y, K: int, check_event: bool = True) -> SelectionOutcome:
    """Forward stepwise: at each step pick the standardized column with the
    largest absolute inner product with the current OLS residual.

    The event records, for every step and competitor, that the winner beat
    the competitor in absolute value, plus the winner's sign.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if K < 0 or K > min(p, n - 2):
        raise SelectionError(f"K must lie in [0, min(p, n-2)] = [0, {min(p, n - 2)}], got {K}")
    Xs = _standardize(X)[0]
    C = _centering(n)
    chosen, signs, ties, rows = [], [], [], []
    Q = np.zeros((n, 0))
    for _ in range(K):
        resid_op = C - Q @ Q.T  # residual maker for [1, chosen]
        remaining = [j for j in range(p) if j not in chosen]
        R = Xs[:, remaining].T @ resid_op  # row j: x_j' (I - P)
        score = R @ y
        mags = np.abs(score)
        top = float(mags.max())
        if top <= 1e-12 * max(1.0, np.linalg.norm(y)):
            raise DegenerateSelectionError("response is orthogonal to every remaining column")
        near = np.flatnonzero(mags >= top - _TIE_TOL * max(1.0, top))
        pos = int(near[0])
        if near.size > 1:
            ties.append(len(chosen))
        winner = remaining[pos]
        s = 1 if score[pos] > 0 else -1
        win_row = s * R[pos]
        for q in range(len(remaining)):
            if q != pos:
                rows.append(R[q] - win_row)
                rows.append(-R[q] - win_row)
        rows.append(-win_row)
        chosen.append(winner)
        signs.append(s)
        col = resid_op @ Xs[:, winner]
        Q = np.column_stack([Q, col / np.linalg.norm(col)])
    A = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.zeros(A.shape[0])
    out = _outcome("stepwise_k", X, y, chosen, signs, A, b, ties=tuple(ties), flags=("tie",) if ties else ())
    if check_event and A.shape[0] and np.min(out.slack(y)) < -1e-8 * max(1.0, np.abs(A @ y).max()):
        raise SelectionError("observed response violates its own stepwise selection event")
    return out


def run_selector(selector: str, X, y, K: int) -> SelectionOutcome:
    """Dispatch on a selector name: ``lars``, ``stepwise`` or ``lasso:<lambda>``."""
    if selector == "lars":
        return lars_first_k(X, y, K)
    if selector == "stepwise":
        return stepwise_first_k(X, y, K)
    if selector.startswith("lasso:"):
        return lasso_fixed_lambda(X, y, float(selector.split(":", 1)[1]))
    raise SelectionError(f"unknown selector {selector!r}")
