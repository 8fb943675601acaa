"""Random streams and isotropic Gaussian mixtures with analytic density and score."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, InvalidMixtureError


def make_rng(seed):
    """Counter-based (Philox) generator. Same seed and call sequence gives the same stream.

    ``seed`` may be an int, a sequence of ints (hashed together) or a Generator (returned as is).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = [int(s) for s in seed] if isinstance(seed, (list, tuple)) else int(seed)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def split_rng(rng, n):
    """``n`` statistically independent child streams (for parallel workers)."""
    return [np.random.Generator(np.random.Philox(s)) for s in rng.bit_generator.seed_seq.spawn(n)]


def as_batch(x, d):
    """View ``x`` as ``(n, d)`` float64; returns ``(batch, was_single_point)``."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0 and d == 1:
        return a.reshape(1, 1), True
    if a.ndim == 1:
        if a.shape[0] != d:
            raise DimensionError(f"point has dimension {a.shape[0]}, expected {d}")
        return np.ascontiguousarray(a.reshape(1, d)), True
    if a.ndim != 2 or a.shape[1] != d:
        raise DimensionError(f"expected shape (n, {d}), got {a.shape}")
    return np.ascontiguousarray(a), False


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Mixture of isotropic Gaussians ``sum_i w_i N(mu_i, var_i I_d)``."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64).ravel()
        if mu.ndim == 1:
            mu = mu[:, None]
        if w.size == 0:
            raise InvalidMixtureError("mixture needs at least one component")
        if not (w.shape[0] == mu.shape[0] == var.shape[0]):
            raise InvalidMixtureError(
                f"component counts disagree: {w.shape[0]} weights, {mu.shape[0]} means, {var.shape[0]} variances")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidMixtureError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidMixtureError(f"weights sum to {w.sum()!r}, not 1")
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise InvalidMixtureError("variances must be strictly positive")
        if not np.all(np.isfinite(mu)):
            raise InvalidMixtureError("means must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", np.ascontiguousarray(mu))
        object.__setattr__(self, "variances", var)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_logw", np.log(w))

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.shape[0]

    @classmethod
    def from_spec(cls, spec):
        """Build from ``{weights[], means[][], variances[]}``."""
        try:
            return cls(spec["weights"], spec["means"], spec["variances"])
        except KeyError as exc:
            raise InvalidMixtureError(f"mixture definition missing key {exc}") from None

    def to_spec(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    def smoothed(self, sigma):
        """Mixture convolved with ``N(0, sigma^2 I)``."""
        return GaussianMixture(self.weights, self.means, self.variances + sigma ** 2)

    def scaled(self, a):
        """Law of ``a * X`` for ``X`` drawn from this mixture."""
        return GaussianMixture(self.weights, a * self.means, a * a * self.variances)

    def mean(self):
        return self.weights @ self.means

    def second_moment(self):
        """``E ||x||^2``."""
        return float(self.weights @ ((self.means ** 2).sum(1) + self.d * self.variances))

    def covariance(self):
        mu = self.mean()
        cov = np.einsum("k,ki,kj->ij", self.weights, self.means, self.means) - np.outer(mu, mu)
        return cov + np.eye(self.d) * (self.weights @ self.variances)

    # the operations below accept a point (d,) or a batch (n, d)

    def log_density(self, x):
        xb, single = as_batch(x, self.d)
        lp, _ = kernels.gmm_logpdf_score(xb, self._logw, self.means, self.variances)
        return lp[0] if single else lp

    def score(self, x):
        xb, single = as_batch(x, self.d)
        _, sc = kernels.gmm_logpdf_score(xb, self._logw, self.means, self.variances)
        return sc[0] if single else sc

    def log_density_and_score(self, xb):
        return kernels.gmm_logpdf_score(xb, self._logw, self.means, self.variances)

    def component_logits(self, x):
        """``log w_i + log N(x; mu_i, var_i I)``, shape ``(n, k)``."""
        xb, _ = as_batch(x, self.d)
        sq = ((xb[:, None, :] - self.means[None]) ** 2).sum(-1)
        return (self._logw[None] - 0.5 * self.d * np.log(2 * np.pi * self.variances)[None]
                - 0.5 * sq / self.variances[None])

    def posterior(self, x):
        xb, single = as_batch(x, self.d)
        logits = self.component_logits(xb)
        logits -= logits.max(1, keepdims=True)
        r = np.exp(logits)
        r /= r.sum(1, keepdims=True)
        return r[0] if single else r

    def sample(self, rng, n):
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = make_rng(rng)
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.d))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * eps

    def score_hvp(self, x, u):
        """Hessian of ``log pi`` at each row of ``x`` applied to ``u`` (the Hessian is symmetric)."""
        r = self.posterior(x)
        a = (self.means[None] - x[:, None, :]) / self.variances[None, :, None]  # (n, k, d)
        s = np.einsum("nk,nkd->nd", r, a)
        au = np.einsum("nkd,nd->nk", a, u)
        out = -u * (r / self.variances[None]).sum(1, keepdims=True)
        out += np.einsum("nk,nkd->nd", r * au, a)
        out -= s * (s * u).sum(1, keepdims=True)
        return out

    def score_divergence(self, x):
        """Laplacian of ``log pi`` (trace of the Hessian)."""
        xb, single = as_batch(x, self.d)
        r = self.posterior(xb)
        a = (self.means[None] - xb[:, None, :]) / self.variances[None, :, None]
        s = np.einsum("nk,nkd->nd", r, a)
        div = (r * (-self.d / self.variances[None] + (a * a).sum(-1))).sum(1) - (s * s).sum(1)
        return div[0] if single else div


# Module-level aliases mirroring the operation names.

def gmm_log_density(m, x):
    return m.log_density(x)


def gmm_score(m, x):
    return m.score(x)


def gmm_sample(m, rng, n):
    return m.sample(rng, n)


def gmm_posterior(m, x):
    return m.posterior(x)


def alpha_from_moments(m):
    """Oscillation frequency ``sqrt(d / E||x||^2)`` that keeps derivative scales constant in time."""
    return float(np.sqrt(m.d / m.second_moment()))


def bounding_box(m, n_std=3.0, inflate=0.05):
    """Per-dimension box covering every component's mean +- ``n_std`` std, widened by ``inflate`` of its width."""
    sd = np.sqrt(m.variances)[:, None]
    lo = (m.means - n_std * sd).min(0)
    hi = (m.means + n_std * sd).max(0)
    pad = 0.5 * inflate * (hi - lo)
    return lo - pad, hi + pad


def sample_in_box(m, rng, n, lo, hi):
    """Draw from the mixture restricted to ``[lo, hi]`` by rejection."""
    rng = make_rng(rng)
    out = np.empty((0, m.d))
    while out.shape[0] < n:
        need = n - out.shape[0]
        draw = m.sample(rng, int(need * 1.05) + 16)
        keep = np.all((draw >= lo) & (draw <= hi), axis=1)
        out = np.concatenate([out, draw[keep]])
    return out[:n]
