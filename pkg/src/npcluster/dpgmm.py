"""Truncated Dirichlet process Gaussian mixture fit by variational inference.

Mixture weights follow a stick-breaking construction truncated at
``max_components``: stick fractions get independent Beta(1, alpha) priors,
component means and precisions a conjugate Normal-Wishart prior.  The
mean-field posterior factorizes into Beta, Normal-Wishart and Multinomial
blocks, so every coordinate-ascent update is available in closed form and
the evidence lower bound is non-decreasing across updates.  The effective
number of clusters is read off the hard assignments after convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import betaln, digamma, gammaln

from .data import EmbeddingMatrix, LabelVector
from .errors import NumericalError, PreconditionError
from .kmeans import kmeans_fit

LOG_2PI = math.log(2.0 * math.pi)
EMPTY_COMPONENT_MASS = 1e-10


@dataclass(frozen=True)
class DpgmmConfig:
    """Priors and fitting controls.

    ``wishart_dof=None`` resolves to the embedding dimension p (the least
    informative admissible choice).  ``scale_matrix_mode`` picks the Wishart
    scale so that the prior mean precision equals either the empirical
    precision of the data or the identity.  ``mean_prior_mode`` selects the
    component-mean prior location: the empirical data mean or the origin.

    The stopping rule compares the relative ELBO change against
    ``convergence_tol``; looser values cut coordinate ascent short while
    redundant components are still dissolving, inflating the inferred
    cluster count.
    """

    max_components: int = 50
    concentration: float = 1.0 / 50.0
    mean_prior_precision: float = 0.01
    wishart_dof: float | None = None
    scale_matrix_mode: str = "empirical_precision"
    mean_prior_mode: str = "empirical"
    max_iter: int = 200
    n_init: int = 5
    convergence_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.max_components < 1:
            raise PreconditionError("max_components must be >= 1")
        if self.concentration <= 0:
            raise PreconditionError("concentration must be positive")
        if self.mean_prior_precision <= 0:
            raise PreconditionError("mean_prior_precision must be positive")
        if self.scale_matrix_mode not in ("empirical_precision", "identity"):
            raise PreconditionError(f"unknown scale_matrix_mode {self.scale_matrix_mode!r}")
        if self.mean_prior_mode not in ("empirical", "zero"):
            raise PreconditionError(f"unknown mean_prior_mode {self.mean_prior_mode!r}")
        if self.max_iter < 1 or self.n_init < 1:
            raise PreconditionError("max_iter and n_init must be >= 1")
        if self.convergence_tol < 0:
            raise PreconditionError("convergence_tol must be non-negative")


@dataclass(frozen=True)
class DpgmmState:
    """Variational parameters plus the ELBO trace of the producing run.

    stick_a/stick_b: Beta posteriors over the stick fractions.
    m, beta, w, nu: Normal-Wishart posteriors over (mean, precision):
    mean | precision ~ Normal(m_k, (beta_k * precision)^-1),
    precision ~ Wishart(w_k, nu_k).
    resp: row-stochastic responsibilities, one row per sample.
    """

    stick_a: np.ndarray  # (K,)
    stick_b: np.ndarray  # (K,)
    m: np.ndarray  # (K, p)
    beta: np.ndarray  # (K,)
    w: np.ndarray  # (K, p, p)
    nu: np.ndarray  # (K,)
    resp: np.ndarray  # (n, K)
    elbo_trace: tuple = ()


@dataclass(frozen=True)
class ClusterResult:
    labels: LabelVector
    inferred_k: int
    mixture_weights: np.ndarray  # (K,) expected weights, sum <= 1
    component_means: np.ndarray  # (K, p)
    component_covariances: np.ndarray  # (K, p, p)


@dataclass(frozen=True)
class _Priors:
    m0: np.ndarray
    gamma: float
    nu0: float
    w0: np.ndarray
    w0_inv: np.ndarray


def _as_points(y) -> np.ndarray:
    if isinstance(y, EmbeddingMatrix):
        return y.values
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise PreconditionError("embedding must be a 2-d array")
    return y


def _chol_logdet(mat, what):
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive-definite") from None
    return chol, 2.0 * float(np.log(np.diag(chol)).sum())


def _invert_spd(mat, what):
    """Inverse of a symmetric positive-definite matrix with one ridge repair."""
    p = mat.shape[0]
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        ridge = 1e-8 * np.trace(mat) / p
        try:
            chol = np.linalg.cholesky(mat + ridge * np.eye(p))
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"{what} is not positive-definite even after ridge repair"
            ) from None
    inv_chol = np.linalg.inv(chol)
    inv = inv_chol.T @ inv_chol
    return 0.5 * (inv + inv.T)


def compute_priors(y, config: DpgmmConfig) -> _Priors:
    """Resolve data-dependent prior hyperparameters for an embedding."""
    y = _as_points(y)
    p = y.shape[1]
    nu0 = float(config.wishart_dof) if config.wishart_dof is not None else float(p)
    if nu0 < p:
        raise PreconditionError(f"wishart_dof must be >= p, got {nu0} < {p}")
    if config.mean_prior_mode == "empirical":
        m0 = y.mean(axis=0)
    else:
        m0 = np.zeros(p)
    if config.scale_matrix_mode == "empirical_precision":
        cov = np.cov(y, rowvar=False, bias=True).reshape(p, p)
        ridge = 1e-6 * np.trace(cov) / p
        d = _invert_spd(cov + ridge * np.eye(p), "empirical covariance")
    else:
        d = np.eye(p)
    # W0 = D / nu0 makes the prior mean precision E[precision] = nu0*W0 = D
    w0 = d / nu0
    return _Priors(m0=m0, gamma=config.mean_prior_precision, nu0=nu0,
                   w0=w0, w0_inv=_invert_spd(w0, "prior scale matrix"))


def stick_breaking_weights(phi) -> np.ndarray:
    """Weights pi_k = phi_k * prod_{j<k} (1 - phi_j); requires phi[-1] == 1."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 1 or phi.size < 1:
        raise PreconditionError("phi must be a non-empty vector")
    if not np.all((phi >= 0.0) & (phi <= 1.0)):  # also rejects NaN
        raise PreconditionError("stick fractions must lie in [0, 1]")
    if phi[-1] != 1.0:
        raise PreconditionError("last stick fraction must equal 1")
    remainder = np.concatenate(([1.0], np.cumprod(1.0 - phi[:-1])))
    return phi * remainder


def expected_log_stick(state: DpgmmState):
    """E[log phi_k], E[log(1-phi_k)], and E[log pi_k] under the Beta posteriors."""
    total = digamma(state.stick_a + state.stick_b)
    elog_phi = digamma(state.stick_a) - total
    elog_1mphi = digamma(state.stick_b) - total
    elog_pi = elog_phi + np.concatenate(([0.0], np.cumsum(elog_1mphi)[:-1]))
    return elog_phi, elog_1mphi, elog_pi


def _expected_logdet_and_chol(state: DpgmmState):
    """E[log|precision_k|] plus the Cholesky factor of each Wishart scale."""
    k_max, p = state.m.shape
    try:
        chols = np.linalg.cholesky(state.w)
    except np.linalg.LinAlgError:
        for k in range(k_max):  # identify the offender for the diagnostic
            _chol_logdet(state.w[k], f"scale matrix of component {k}")
        raise
    diag = np.einsum("kii->ki", chols)
    logdet_w = 2.0 * np.log(diag).sum(axis=1)
    i = np.arange(1, p + 1)
    elogdet = (
        digamma((state.nu[:, None] + 1.0 - i) / 2.0).sum(axis=1)
        + p * math.log(2.0)
        + logdet_w
    )
    return elogdet, chols


def _quad_matrix(state: DpgmmState, y, chols):
    """(n, K) matrix of E[(y_n - mu_k)^T Lambda_k (y_n - mu_k)], chunked over
    rows to bound the (K, rows, p) scratch allocation."""
    n, p = y.shape
    k_max = state.m.shape[0]
    out = np.empty((n, k_max))
    base = p / state.beta
    step = max(1, (1 << 20) // max(k_max * p, 1))
    for s in range(0, n, step):
        z = y[None, s : s + step, :] - state.m[:, None, :]  # (K, rows, p)
        t = z @ chols  # batched BLAS
        out[s : s + step] = base + state.nu * (t * t).sum(axis=2).T
    return out


def init_state(y, config: DpgmmConfig, init_seed: int,
               priors: _Priors | None = None) -> DpgmmState:
    """K-Means hard assignment turned into responsibilities, then one M-step."""
    y = _as_points(y)
    n = y.shape[0]
    if n < 2:
        raise PreconditionError("need at least 2 samples")
    if np.unique(y, axis=0).shape[0] < 2:
        raise PreconditionError("need at least 2 distinct points")
    k_max = config.max_components
    km = kmeans_fit(y, min(k_max, n), n_init=1, seed=init_seed)
    resp = np.zeros((n, k_max))
    resp[np.arange(n), km.labels.labels] = 1.0
    # tiny uniform floor keeps unused components addressable without
    # lifting them over the empty-component threshold
    tau = 1e-12 / k_max
    resp = (resp + tau) / (1.0 + k_max * tau)
    state = DpgmmState(
        stick_a=np.ones(k_max),
        stick_b=np.full(k_max, config.concentration),
        m=np.zeros((k_max, y.shape[1])),
        beta=np.full(k_max, config.mean_prior_precision),
        w=np.zeros((k_max, y.shape[1], y.shape[1])),
        nu=np.zeros(k_max),
        resp=resp,
    )
    return update_components(state, y, config, priors=priors)


def _log_scores(state: DpgmmState, y, elogdet, quad):
    p = y.shape[1]
    _, _, elog_pi = expected_log_stick(state)
    log_rho = elog_pi + 0.5 * elogdet - 0.5 * p * LOG_2PI - 0.5 * quad
    if not np.all(np.isfinite(log_rho)):
        k = int(np.argwhere(~np.isfinite(log_rho))[0, 1])
        raise NumericalError(f"non-finite assignment score for component {k}")
    return log_rho


def assignment_log_scores(state: DpgmmState, y) -> np.ndarray:
    """Unnormalized log responsibilities log rho_nk."""
    y = _as_points(y)
    elogdet, chols = _expected_logdet_and_chol(state)
    return _log_scores(state, y, elogdet, _quad_matrix(state, y, chols))


def _normalize_scores(log_rho):
    log_norm = _logsumexp_rows(log_rho)
    resp = np.exp(log_rho - log_norm[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def update_responsibilities(state: DpgmmState, y, config: DpgmmConfig) -> DpgmmState:
    """E-step: refresh the Multinomial posteriors over assignments."""
    return replace(state, resp=_normalize_scores(assignment_log_scores(state, y)))


def _logsumexp_rows(a):
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def update_components(state: DpgmmState, y, config: DpgmmConfig,
                      priors: _Priors | None = None) -> DpgmmState:
    """M-step: refresh the Beta and Normal-Wishart posteriors.

    Components with essentially no responsibility mass revert to their
    priors exactly; the stick tail count b_k always keeps the mass of the
    later components so the update stays an exact coordinate-ascent step.
    """
    y = _as_points(y)
    n, p = y.shape
    k_max = state.m.shape[0]
    if priors is None:
        priors = compute_priors(y, config)
    resp = state.resp
    nk = resp.sum(axis=0)
    csum = np.cumsum(nk)
    tail = csum[-1] - csum  # sum of N_j for j > k
    stick_a = 1.0 + nk
    stick_b = config.concentration + tail
    occupied = nk >= EMPTY_COMPONENT_MASS
    safe_nk = np.where(occupied, nk, 1.0)

    xbar = (resp.T @ y) / safe_nk[:, None]
    scatter = np.zeros((k_max, p, p))
    step = max(1, (1 << 20) // max(k_max * p, 1))
    for s in range(0, n, step):
        z = y[None, s : s + step, :] - xbar[:, None, :]  # (K, rows, p)
        weighted = resp[s : s + step].T[:, :, None] * z
        scatter += z.transpose(0, 2, 1) @ weighted  # batched BLAS
    sk = scatter / safe_nk[:, None, None]

    beta = priors.gamma + nk
    m = (priors.gamma * priors.m0 + nk[:, None] * xbar) / beta[:, None]
    nu = priors.nu0 + nk
    dm = xbar - priors.m0
    w_inv = (
        priors.w0_inv
        + nk[:, None, None] * sk
        + ((priors.gamma * nk / (priors.gamma + nk))[:, None, None]
           * dm[:, :, None] * dm[:, None, :])
    )
    try:
        np.linalg.cholesky(w_inv[occupied])
        w = np.linalg.inv(w_inv)
        w = 0.5 * (w + w.transpose(0, 2, 1))
    except np.linalg.LinAlgError:
        w = np.empty((k_max, p, p))
        for k in range(k_max):
            if occupied[k]:
                w[k] = _invert_spd(w_inv[k], f"posterior scale of component {k}")

    stick_a[~occupied] = 1.0
    beta[~occupied] = priors.gamma
    m[~occupied] = priors.m0
    nu[~occupied] = priors.nu0
    w[~occupied] = priors.w0
    return replace(state, stick_a=stick_a, stick_b=stick_b, m=m, beta=beta, w=w, nu=nu)


def _log_wishart_norm(logdet_w, nu, p):
    """log B(W, nu); vectorizes over stacked (logdet_w, nu)."""
    logdet_w = np.asarray(logdet_w, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    i = np.arange(1, p + 1)
    return (
        -0.5 * nu * logdet_w
        - 0.5 * nu * p * math.log(2.0)
        - 0.25 * p * (p - 1) * math.log(math.pi)
        - gammaln((nu[..., None] + 1 - i) / 2.0).sum(axis=-1)
    )


def elbo(state: DpgmmState, y, config: DpgmmConfig,
         priors: _Priors | None = None, _scores=None) -> float:
    """Evidence lower bound E_q[log p(y,z,phi,mu,Lambda)] - E_q[log q]."""
    y = _as_points(y)
    p = y.shape[1]
    if priors is None:
        priors = compute_priors(y, config)
    alpha = config.concentration
    resp = state.resp
    nk = resp.sum(axis=0)

    elog_phi, elog_1mphi, elog_pi = expected_log_stick(state)
    if _scores is None:
        elogdet, chols = _expected_logdet_and_chol(state)
        quad = _quad_matrix(state, y, chols)
    else:
        elogdet, chols, quad = _scores

    likelihood = float(
        np.sum(resp * (0.5 * (elogdet - p * LOG_2PI) - 0.5 * quad))
    )
    z_prior = float(nk @ elog_pi)
    z_entropy = float(-np.sum(resp[resp > 0] * np.log(resp[resp > 0])))

    phi_prior = float(np.sum(math.log(alpha) + (alpha - 1.0) * elog_1mphi))
    phi_entropy = float(
        np.sum(
            betaln(state.stick_a, state.stick_b)
            - (state.stick_a - 1.0) * digamma(state.stick_a)
            - (state.stick_b - 1.0) * digamma(state.stick_b)
            + (state.stick_a + state.stick_b - 2.0) * digamma(state.stick_a + state.stick_b)
        )
    )

    _, logdet_w0 = _chol_logdet(priors.w0, "prior scale matrix")
    log_b0 = float(_log_wishart_norm(logdet_w0, priors.nu0, p))
    with np.errstate(invalid="ignore", divide="ignore"):
        dm = state.m - priors.m0
        quad_m = p / state.beta + state.nu * np.einsum("kp,kpq,kq->k", dm, state.w, dm)
        trace_w0inv_w = np.einsum("pq,kqp->k", priors.w0_inv, state.w)
        nw_prior = float(
            np.sum(
                0.5 * (p * math.log(priors.gamma / (2.0 * math.pi)) + elogdet
                       - priors.gamma * quad_m)
                + log_b0
                + 0.5 * (priors.nu0 - p - 1.0) * elogdet
                - 0.5 * state.nu * trace_w0inv_w
            )
        )
        logdet_wk = 2.0 * np.log(np.einsum("kii->ki", chols)).sum(axis=1)
        log_bk = _log_wishart_norm(logdet_wk, state.nu, p)
        # entropies of q(mu_k | Lambda_k) and q(Lambda_k)
        nw_entropy = float(
            np.sum(
                -(0.5 * elogdet + 0.5 * p * np.log(state.beta / (2.0 * math.pi))
                  - 0.5 * p)
                - (log_bk + 0.5 * (state.nu - p - 1.0) * elogdet
                   - 0.5 * state.nu * p)
            )
        )

    terms = {
        "likelihood": likelihood,
        "assignment prior": z_prior,
        "assignment entropy": z_entropy,
        "stick prior": phi_prior,
        "stick entropy": phi_entropy,
        "normal-wishart prior": nw_prior,
        "normal-wishart entropy": nw_entropy,
    }
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericalError(f"non-finite ELBO term: {name}")
    return float(sum(terms.values()))


def fit(y, config: DpgmmConfig = DpgmmConfig()) -> tuple[DpgmmState, ClusterResult]:
    """Run coordinate ascent from ``n_init`` K-Means starts, keep the best ELBO.

    Iterations stop at ``max_iter`` or when the relative ELBO change drops
    below ``convergence_tol``.
    """
    y = _as_points(y)
    priors = compute_priors(y, config)
    best_state = None
    for i in range(config.n_init):
        state = init_state(y, config, config.seed + i, priors=priors)
        elogdet, chols = _expected_logdet_and_chol(state)
        quad = _quad_matrix(state, y, chols)
        trace = []
        for _ in range(config.max_iter):
            resp = _normalize_scores(_log_scores(state, y, elogdet, quad))
            state = replace(state, resp=resp)
            state = update_components(state, y, config, priors=priors)
            # the post-M-step scores serve both the ELBO and the next E-step
            elogdet, chols = _expected_logdet_and_chol(state)
            quad = _quad_matrix(state, y, chols)
            value = elbo(state, y, config, priors=priors,
                         _scores=(elogdet, chols, quad))
            trace.append(value)
            if len(trace) >= 2:
                prev = trace[-2]
                if abs(value - prev) / max(abs(value), 1e-300) < config.convergence_tol:
                    break
        state = replace(state, elbo_trace=tuple(trace))
        if best_state is None or trace[-1] > best_state.elbo_trace[-1]:
            best_state = state
    return best_state, extract_result(best_state, y)


def extract_result(state: DpgmmState, y) -> ClusterResult:
    """Hard labels, inferred cluster count, and moment summaries."""
    y = _as_points(y)
    labels = np.argmax(state.resp, axis=1)  # ties resolve to the lowest index
    inferred_k = int(np.unique(labels).size)
    mean_phi = state.stick_a / (state.stick_a + state.stick_b)
    remainder = np.concatenate(([1.0], np.cumprod(1.0 - mean_phi[:-1])))
    weights = mean_phi * remainder
    covariances = np.empty_like(state.w)
    for k in range(state.w.shape[0]):
        covariances[k] = _invert_spd(state.nu[k] * state.w[k],
                                     f"mean precision of component {k}")
    return ClusterResult(
        labels=LabelVector(labels),
        inferred_k=inferred_k,
        mixture_weights=weights,
        component_means=state.m.copy(),
        component_covariances=covariances,
    )


def model_summary(state: DpgmmState, result: ClusterResult, config: DpgmmConfig) -> dict:
    """JSON-ready dump: config echo, per-component moments, K-hat, ELBO."""
    return {
        "config": {
            "max_components": config.max_components,
            "concentration": config.concentration,
            "mean_prior_precision": config.mean_prior_precision,
            "wishart_dof": config.wishart_dof,
            "scale_matrix_mode": config.scale_matrix_mode,
            "mean_prior_mode": config.mean_prior_mode,
            "max_iter": config.max_iter,
            "n_init": config.n_init,
            "convergence_tol": config.convergence_tol,
            "seed": config.seed,
        },
        "inferred_k": result.inferred_k,
        "final_elbo": state.elbo_trace[-1] if state.elbo_trace else None,
        "n_iterations": len(state.elbo_trace),
        "components": [
            {
                "weight": float(result.mixture_weights[k]),
                "mean": result.component_means[k].tolist(),
                "covariance": result.component_covariances[k].tolist(),
            }
            for k in range(result.mixture_weights.shape[0])
        ],
    }
