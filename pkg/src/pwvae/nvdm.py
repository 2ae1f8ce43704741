"""Neural variational document model with Gaussian and piecewise latents.

Three variants share one architecture: a two-layer bag-of-words encoder,
latent heads producing prior/posterior parameters, and a softmax word
decoder with logits -R z + b.  Variant "g" uses Gaussian latent
variables only, "p" piecewise constant only, and "h" both, sampled
independently and concatenated (Gaussian dimensions first).

Piecewise samples are shifted onto [-1, 1] before entering the decoder;
KL terms are computed on the unshifted parametrisation.  The variational
bound for one document is the count-weighted reconstruction
log-likelihood, averaged over posterior samples, minus the weighted sum
of the per-family KL terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gaussian, piecewise
from .corpus import Corpus, Document
from .gaussian import GaussianHead, GaussianParams
from .piecewise import PiecewiseHead
from .tensor import (
    ShapeError,
    Tensor,
    affine,
    concat,
    dot,
    log_softmax,
    matvec,
    prelu,
    softsign,
)

__all__ = [
    "VARIANTS",
    "ACTIVATIONS",
    "NvdmModel",
    "ElboReport",
    "init_model",
    "param_shapes",
    "encode",
    "decode_logprob",
    "combine_latents",
    "elbo",
    "posterior_bound",
]

VARIANTS = ("g", "p", "h")
ACTIVATIONS = ("prelu", "softsign")

PRELU_LEAK_INIT = 0.25


def param_shapes(variant: str, vocab_size: int, hidden: int, gauss_dims: int, piece_dims: int, n_pieces: int, activation: str) -> dict[str, tuple]:
    """Canonical parameter names and shapes, in checkpoint order."""
    shapes: dict[str, tuple] = {
        "enc_w0": (hidden, vocab_size),
        "enc_b0": (hidden,),
        "enc_w1": (hidden, hidden),
        "enc_b1": (hidden,),
    }
    if activation == "prelu":
        shapes["enc_leak0"] = (hidden,)
        shapes["enc_leak1"] = (hidden,)
    if gauss_dims > 0:
        shapes.update(
            {
                "g_prior_b_mu": (gauss_dims,),
                "g_prior_b_sigma": (gauss_dims,),
                "g_post_w_mu": (gauss_dims, hidden),
                "g_post_b_mu": (gauss_dims,),
                "g_post_w_sigma": (gauss_dims, hidden),
                "g_post_b_sigma": (gauss_dims,),
                "g_alpha_mu": (gauss_dims,),
                "g_alpha_sigma": (gauss_dims,),
            }
        )
    if piece_dims > 0:
        shapes.update(
            {
                "p_prior_b_a": (piece_dims * n_pieces,),
                "p_post_w_a": (piece_dims * n_pieces, hidden),
                "p_post_b_a": (piece_dims * n_pieces,),
            }
        )
    shapes["dec_r"] = (vocab_size, gauss_dims + piece_dims)
    shapes["dec_b"] = (vocab_size,)
    return shapes


@dataclass
class NvdmModel:
    variant: str
    vocab_size: int
    hidden: int
    gauss_dims: int
    piece_dims: int
    n_pieces: int
    activation: str
    params: dict[str, Tensor] = field(repr=False)

    @property
    def latent_dim(self) -> int:
        return self.gauss_dims + self.piece_dims

    def named_parameters(self):
        return self.params.items()

    def replaced(self, updates: dict[str, np.ndarray]) -> "NvdmModel":
        """Copy of the model with some parameters replaced."""
        params = dict(self.params)
        for name, values in updates.items():
            if name not in params:
                raise KeyError(f"unknown parameter {name!r}")
            t = values if isinstance(values, Tensor) else Tensor(values)
            if t.data.shape != params[name].data.shape:
                raise ShapeError(f"parameter {name}: shape {t.data.shape} != {params[name].data.shape}")
            params[name] = t
        return NvdmModel(
            variant=self.variant,
            vocab_size=self.vocab_size,
            hidden=self.hidden,
            gauss_dims=self.gauss_dims,
            piece_dims=self.piece_dims,
            n_pieces=self.n_pieces,
            activation=self.activation,
            params=params,
        )

    def gaussian_head(self) -> GaussianHead:
        p = self.params
        return GaussianHead(
            prior_w_mu=None,
            prior_b_mu=p["g_prior_b_mu"],
            prior_w_sigma=None,
            prior_b_sigma=p["g_prior_b_sigma"],
            post_w_mu=p["g_post_w_mu"],
            post_b_mu=p["g_post_b_mu"],
            post_w_sigma=p["g_post_w_sigma"],
            post_b_sigma=p["g_post_b_sigma"],
            alpha_mu=p["g_alpha_mu"],
            alpha_sigma=p["g_alpha_sigma"],
        )

    def piecewise_prior_head(self) -> PiecewiseHead:
        return PiecewiseHead(weight=None, bias=self.params["p_prior_b_a"], dims=self.piece_dims, pieces=self.n_pieces)

    def piecewise_post_head(self) -> PiecewiseHead:
        return PiecewiseHead(
            weight=self.params["p_post_w_a"],
            bias=self.params["p_post_b_a"],
            dims=self.piece_dims,
            pieces=self.n_pieces,
        )


@dataclass
class ElboReport:
    """One variational-bound evaluation of a document."""

    reconstruction: float
    kl_gaussian: float
    kl_piecewise: float
    bound: float
    samples_used: int
    bound_node: Tensor | None = field(default=None, compare=False, repr=False)


def _validate_config(variant, vocab_size, hidden, gauss_dims, piece_dims, n_pieces, activation):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    if vocab_size < 1 or hidden < 1:
        raise ValueError("vocab_size and hidden must be positive")
    if variant in ("g", "h") and gauss_dims < 1:
        raise ValueError(f"variant {variant!r} needs gauss_dims >= 1")
    if variant in ("p", "h") and piece_dims < 1:
        raise ValueError(f"variant {variant!r} needs piece_dims >= 1")
    if variant == "g" and piece_dims != 0:
        raise ValueError("variant 'g' must have piece_dims == 0")
    if variant == "p" and gauss_dims != 0:
        raise ValueError("variant 'p' must have gauss_dims == 0")
    if piece_dims > 0 and n_pieces < 2:
        raise ValueError("piecewise latents need at least 2 pieces")


def init_model(
    variant: str,
    vocab_size: int,
    *,
    hidden: int = 100,
    gauss_dims: int = 50,
    piece_dims: int = 50,
    n_pieces: int = 3,
    activation: str = "prelu",
    seed: int = 0,
) -> NvdmModel:
    """Freshly initialised model.

    Weight matrices get Glorot-uniform values from the seeded generator;
    every bias, gate, and the decoder start at zero, so the initial prior
    is centred and the initial decoder is uniform over words.
    """
    if variant == "g":
        piece_dims = 0
    if variant == "p":
        gauss_dims = 0
    _validate_config(variant, vocab_size, hidden, gauss_dims, piece_dims, n_pieces, activation)
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(variant, vocab_size, hidden, gauss_dims, piece_dims, n_pieces, activation).items():
        if name.startswith("enc_leak"):
            values = np.full(shape, PRELU_LEAK_INIT)
        elif name in ("dec_r", "dec_b") or "_b_" in name or name.startswith("g_alpha") or name.startswith("enc_b"):
            values = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            values = rng.uniform(-bound, bound, shape)
        params[name] = Tensor(values)
    return NvdmModel(
        variant=variant,
        vocab_size=vocab_size,
        hidden=hidden,
        gauss_dims=gauss_dims,
        piece_dims=piece_dims,
        n_pieces=n_pieces,
        activation=activation,
        params=params,
    )


def _activate(model: NvdmModel, t: Tensor, layer: int) -> Tensor:
    if model.activation == "prelu":
        return prelu(t, model.params[f"enc_leak{layer}"])
    return softsign(t)


def encode(model: NvdmModel, x: Tensor) -> Tensor:
    """Bag-of-words MLP encoding of a dense document vector."""
    if x.data.shape != (model.vocab_size,):
        raise ShapeError(f"encode: expected document vector of shape ({model.vocab_size},), got {x.data.shape}")
    h = _activate(model, affine(x, model.params["enc_w0"], model.params["enc_b0"]), 0)
    return _activate(model, affine(h, model.params["enc_w1"], model.params["enc_b1"]), 1)


def decode_logprob(model: NvdmModel, z: Tensor) -> Tensor:
    """Word log-probabilities for a latent vector: log_softmax(-R z + b)."""
    if z.data.shape != (model.latent_dim,):
        raise ShapeError(f"decode: expected latent vector of shape ({model.latent_dim},), got {z.data.shape}")
    logits = -matvec(model.params["dec_r"], z) + model.params["dec_b"]
    return log_softmax(logits)


def combine_latents(z_gauss: Tensor | None, z_piece: Tensor | None) -> Tensor:
    """Concatenate family samples, Gaussian dimensions first."""
    if z_gauss is None and z_piece is None:
        raise ValueError("combine_latents: nothing to combine")
    if z_gauss is None:
        return z_piece
    if z_piece is None:
        return z_gauss
    return concat(z_gauss, z_piece)


def _posterior_from_encoder(model: NvdmModel, enc: Tensor):
    gauss_prior = gauss_post = None
    a_prior = a_post = None
    if model.gauss_dims > 0:
        head = model.gaussian_head()
        gauss_prior = gaussian.prior_forward(head)
        gauss_post = gaussian.posterior_forward(head, gauss_prior, enc)
    if model.piece_dims > 0:
        a_prior = piecewise.head_forward(model.piecewise_prior_head())
        a_post = piecewise.head_forward(model.piecewise_post_head(), enc)
    return gauss_prior, gauss_post, a_prior, a_post


def _bound_given_posteriors(
    model: NvdmModel,
    counts_t: Tensor,
    gauss_prior: GaussianParams | None,
    gauss_post: GaussianParams | None,
    a_prior: Tensor | None,
    a_post: Tensor | None,
    kl_weight: float,
    noises,
):
    """Shared bound assembly; ``noises`` is a list of (eps_gauss, eps_piece)."""
    recon = None
    for eps_g, eps_p in noises:
        z_g = gaussian.sample_with_noise(gauss_post, eps_g) if gauss_post is not None else None
        z_p = None
        if a_post is not None:
            z01 = piecewise.sample_through(a_post, eps_p, model.piece_dims, model.n_pieces)
            z_p = 2.0 * z01 - 1.0
        z = combine_latents(z_g, z_p)
        term = dot(counts_t, decode_logprob(model, z))
        recon = term if recon is None else recon + term
    recon = recon * (1.0 / len(noises))

    kl_g_t = gaussian.kl(gauss_post, gauss_prior) if gauss_post is not None else None
    kl_p_t = piecewise.kl_between(a_post, a_prior, model.piece_dims, model.n_pieces) if a_post is not None else None
    kl_total = None
    for term in (kl_g_t, kl_p_t):
        if term is not None:
            kl_total = term if kl_total is None else kl_total + term
    bound = recon - kl_weight * kl_total

    report = ElboReport(
        reconstruction=float(recon),
        kl_gaussian=max(float(kl_g_t), 0.0) if kl_g_t is not None else 0.0,
        kl_piecewise=max(float(kl_p_t), 0.0) if kl_p_t is not None else 0.0,
        bound=float(bound),
        samples_used=len(noises),
        bound_node=bound,
    )
    return report


def draw_noises(model: NvdmModel, num_samples: int, rng: np.random.Generator):
    noises = []
    for _ in range(num_samples):
        eps_g = rng.standard_normal(model.gauss_dims) if model.gauss_dims > 0 else None
        eps_p = rng.random(model.piece_dims) if model.piece_dims > 0 else None
        noises.append((eps_g, eps_p))
    return noises


def _document_inputs(model: NvdmModel, corpus: Corpus, doc: Document):
    if doc.token_count < 1:
        raise ValueError(f"document {doc.doc_id!r} has no tokens")
    if corpus.vocab_size != model.vocab_size:
        raise ShapeError(f"corpus vocabulary size {corpus.vocab_size} != model vocabulary size {model.vocab_size}")
    return Tensor(corpus.dense(doc)), Tensor(corpus.dense_counts(doc))


def elbo(
    model: NvdmModel,
    corpus: Corpus,
    doc: Document,
    *,
    kl_weight: float = 1.0,
    num_samples: int = 1,
    rng: np.random.Generator,
) -> ElboReport:
    """Variational bound of one document under the amortised posterior."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    x, counts_t = _document_inputs(model, corpus, doc)
    enc = encode(model, x)
    gauss_prior, gauss_post, a_prior, a_post = _posterior_from_encoder(model, enc)
    noises = draw_noises(model, num_samples, rng)
    return _bound_given_posteriors(model, counts_t, gauss_prior, gauss_post, a_prior, a_post, kl_weight, noises)


def posterior_bound(
    model: NvdmModel,
    corpus: Corpus,
    doc: Document,
    *,
    gauss_mu: Tensor | None,
    gauss_raw_sigma: Tensor | None,
    piece_raw_a: Tensor | None,
    kl_weight: float,
    noises,
) -> ElboReport:
    """Bound with posterior parameters supplied directly (encoder bypassed).

    Used by iterative per-document inference: the Gaussian posterior is
    (mu, softplus(raw_sigma) + floor) and the piecewise posterior weights
    are exp(clamp(raw_a)); priors come from the (frozen) model.
    """
    from .tensor import exp_clamped, softplus

    _, counts_t = _document_inputs(model, corpus, doc)
    gauss_prior = gauss_post = None
    a_prior = a_post = None
    if model.gauss_dims > 0:
        gauss_prior = gaussian.prior_forward(model.gaussian_head())
        gauss_post = GaussianParams(mu=gauss_mu, var=softplus(gauss_raw_sigma) + gaussian.VAR_FLOOR)
    if model.piece_dims > 0:
        a_prior = piecewise.head_forward(model.piecewise_prior_head())
        a_post = exp_clamped(piece_raw_a, -piecewise.CLAMP, piecewise.CLAMP)
    return _bound_given_posteriors(model, counts_t, gauss_prior, gauss_post, a_prior, a_post, kl_weight, noises)
