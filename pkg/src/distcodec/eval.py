"""Rate accounting, amortization-gap reports and the synthetic latent corpus."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import ndtr

from .core import EPS_P, HistogramSpec, LatentTensor, PmfBank, floor_pmf, require_same_spec
from .dist_codecs.codec import codec_compress
from .histogram import latent_histograms


def _mass_and_spec(p):
    return (np.asarray(p.mass, dtype=np.float64), p.spec) if hasattr(p, "spec") else (np.asarray(p, dtype=np.float64), None)


def _pair(p, q):
    pm, ps = _mass_and_spec(p)
    qm, qs = _mass_and_spec(q)
    if ps is not None and qs is not None:
        require_same_spec(ps, qs)
    if pm.shape[-1] != qm.shape[-1]:
        from .errors import SpecMismatch

        raise SpecMismatch(f"pmfs have {pm.shape[-1]} and {qm.shape[-1]} bins")
    return pm, qm


def entropy_bits(p):
    """Shannon entropy along the last axis, in bits."""
    m, _ = _mass_and_spec(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(m > 0, -m * np.log2(m), 0.0)
    return terms.sum(axis=-1)


def cross_entropy_bits(p, p_hat, eps: float = EPS_P):
    """Expected code length of p's samples under p_hat floored at ``eps``."""
    pm, qm = _pair(p, p_hat)
    q = floor_pmf(qm, eps)
    return -(pm * np.log2(q)).sum(axis=-1)


def kl_bits(p, p_hat, eps: float = EPS_P):
    pm, qm = _pair(p, p_hat)
    q = floor_pmf(qm, eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pm > 0, pm * (np.log2(pm) - np.log2(q)), 0.0)
    return terms.sum(axis=-1)


def potential_savings_bpp(banks, default: PmfBank, downscale: int) -> float:
    """Mean over images of (1 / s^2) * sum_j KL(p_j || default_j): bits per pixel saved
    by coding each image with its own exact pmfs at zero side cost."""
    if isinstance(banks, PmfBank):
        banks = [banks]
    values = []
    for bank in banks:
        require_same_spec(bank.spec, default.spec)
        values.append(float(kl_bits(bank, default).sum()) / downscale**2)
    return float(np.mean(values))


# --- gap report ----------------------------------------------------------------

@dataclass
class GapRow:
    image: str
    original_bpp: float
    potential_gain_bpp: float
    potential_gain_pct: float
    achieved_bpp: float
    achieved_gain_bpp: float
    achieved_gain_pct: float
    side_info_bpp: float


COLUMNS = [f.name for f in fields(GapRow)]


@dataclass
class GapReport:
    """Per-image rows plus a uniform average (every image weighted equally)."""

    rows: list
    aggregate: GapRow

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in [*self.rows, self.aggregate]:
            writer.writerow([row.image] + [repr(float(getattr(row, c))) for c in COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> GapReport:
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != COLUMNS:
            raise ValueError(f"unexpected report columns {header}")
        rows = [GapRow(r[0], *map(float, r[1:])) for r in reader if r]
        return cls(rows[:-1], rows[-1])

    def to_table(self) -> str:
        head = ("image", "orig bpp", "pot gain bpp", "pot gain %", "ours bpp", "our gain bpp", "our gain %", "side bpp")
        lines = ["  ".join(f"{h:>12}" for h in head)]
        for row in [*self.rows, self.aggregate]:
            vals = [getattr(row, c) for c in COLUMNS[1:]]
            lines.append(f"{row.image:>12}  " + "  ".join(f"{v:12.5f}" for v in vals))
        return "\n".join(lines)

    @property
    def recovered_fraction(self) -> float:
        """Aggregate achieved gain over aggregate potential gain."""
        return self.aggregate.achieved_gain_pct / self.aggregate.potential_gain_pct


def stream_bpp(stream, latent: LatentTensor) -> tuple[float, float]:
    """(side + latent payload bpp, side-info bpp); the fixed container header is excluded."""
    return stream.payload_bits / latent.num_pixels, stream.side_bits / latent.num_pixels


def gap_report(latents, model, baseline, names=None) -> GapReport:
    """Potential (exact-pmf) and achieved (real bitstream) savings of ``model`` over ``baseline``."""
    rows = []
    names = names or [f"{i:04d}" for i in range(len(latents))]
    for name, latent in zip(names, latents):
        base_bpp, _ = stream_bpp(codec_compress(latent, baseline), latent)
        ours_bpp, side_bpp = stream_bpp(codec_compress(latent, model), latent)
        potential = -potential_savings_bpp(latent_histograms(latent), baseline.default_bank, latent.downscale)
        rows.append(GapRow(
            image=name,
            original_bpp=base_bpp,
            potential_gain_bpp=potential,
            potential_gain_pct=100.0 * potential / base_bpp,
            achieved_bpp=ours_bpp,
            achieved_gain_bpp=ours_bpp - base_bpp,
            achieved_gain_pct=100.0 * (ours_bpp - base_bpp) / base_bpp,
            side_info_bpp=side_bpp,
        ))
    agg = {c: float(np.mean([getattr(r, c) for r in rows])) for c in COLUMNS[1:]}
    return GapReport(rows, GapRow(image="*", **agg))


# --- synthetic corpus ------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Latent images whose channels follow per-image perturbations of a fixed mixture.

    Each channel owns a base mixture of 1-3 Gaussians and fixed loadings on
    ``factors`` image-level factors (drawn once from ``seed``). Every image
    draws its factors and shifts and rescales each channel's mixture through
    the loadings, plus an independent per-channel part of relative size
    ``jitter``; mixture weights are also jittered. Image ``i`` depends only
    on (seed, i), so held-out images are just a different index range.
    """

    channels: int = 32
    images: int = 256
    height: int = 32
    width: int = 32
    seed: int = 0
    y_min: int = -63
    y_max: int = 64
    downscale: int = 16
    first_image: int = 0
    shift: float = 4.0
    log_scale: float = 0.5
    factors: int = 3
    jitter: float = 0.25

    @property
    def spec(self) -> HistogramSpec:
        return HistogramSpec(self.y_min, self.y_max)

    def to_dict(self) -> dict:
        return asdict(self)


def _discretized_mixture(weights, means, sigmas, spec: HistogramSpec) -> np.ndarray:
    edges = np.arange(spec.y_min - 0.5, spec.y_max + 1.0, 1.0)
    mass = np.zeros(spec.num_bins)
    for w, mu, s in zip(weights, means, sigmas):
        cdf = ndtr((edges - mu) / s)
        cdf[0], cdf[-1] = 0.0, 1.0
        mass += w * np.diff(cdf)
    return mass / mass.sum()


def _channel_bases(cs: SyntheticCorpusSpec):
    rng = np.random.default_rng([cs.seed, 0])
    half = (cs.y_max - cs.y_min) / 2.0
    center = (cs.y_max + cs.y_min) / 2.0
    bases = []
    for _ in range(cs.channels):
        k = int(rng.integers(1, 4))
        means = center + rng.uniform(-0.2, 0.2, size=k) * half
        sigmas = np.exp(rng.uniform(math.log(0.8), math.log(5.0), size=k))
        weights = rng.dirichlet(np.full(k, 2.0))
        bases.append((weights, means, sigmas))
    loadings = np.random.default_rng([cs.seed, 3]).uniform(-1, 1, size=(cs.channels, 2, cs.factors))
    loadings /= np.maximum(np.linalg.norm(loadings, axis=2, keepdims=True), 1e-12)
    return [(*b, a) for b, a in zip(bases, loadings)]


def image_pmfs(cs: SyntheticCorpusSpec, index: int, bases=None) -> PmfBank:
    """Generating pmfs of image ``index``."""
    bases = bases or _channel_bases(cs)
    rng = np.random.default_rng([cs.seed, 1, index])
    spec = cs.spec
    global_scale = rng.uniform(-cs.log_scale, cs.log_scale)
    z = rng.uniform(-1, 1, size=cs.factors)
    mass = []
    for weights, means, sigmas, load in bases:
        k = len(weights)
        center = float(weights @ means)
        shared_shift, shared_scale = load @ z
        shift = cs.shift * (shared_shift + cs.jitter * rng.uniform(-1, 1))
        scale = math.exp(global_scale + cs.log_scale / 2 * (shared_scale + cs.jitter * rng.uniform(-1, 1)))
        w = rng.dirichlet(weights * 20.0 + 0.5) if k > 1 else weights
        mu = center + scale * (means - center) + shift
        mass.append(_discretized_mixture(w, mu, np.maximum(sigmas * scale, 0.3), spec))
    return PmfBank(np.array(mass), spec)


def generate_corpus(cs: SyntheticCorpusSpec):
    """(latents, generating pmf banks) for images first_image..first_image+images-1."""
    bases = _channel_bases(cs)
    spec = cs.spec
    n = cs.height * cs.width
    latents, truths = [], []
    for i in range(cs.first_image, cs.first_image + cs.images):
        bank = image_pmfs(cs, i, bases)
        rng = np.random.default_rng([cs.seed, 2, i])
        cdf = np.cumsum(bank.mass, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random((cs.channels, n))
        idx = np.stack([np.searchsorted(cdf[c], u[c], side="right") for c in range(cs.channels)])
        data = (idx + spec.y_min).reshape(cs.channels, cs.height, cs.width)
        latents.append(LatentTensor(data, spec, cs.downscale))
        truths.append(bank)
    return latents, truths
