"""Maximum-directivity-index beamformer.

Per frequency bin, the weights minimize the diffuse-noise output power
h^H R h subject to the distortionless constraint h^H d = g, where d is
the steering vector toward the target and g the desired response at the
reference microphone.  The closed form is

    h = g* R^{-1} d / (d^H R^{-1} d)

computed here with optional trace-normalized diagonal loading on R; the
constraint holds exactly for any loading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atf import AtfSet, IsotropicCovariance


class DegenerateTargetError(ValueError):
    """Constraint gain is (numerically) zero at one or more bins."""

    def __init__(self, bins):
        self.bins = list(bins)
        super().__init__(f"target gain magnitude < 1e-12 at bins {self.bins}")


class SingularCovarianceError(ValueError):
    """Loaded covariance could not be solved at one or more bins."""

    def __init__(self, bins):
        self.bins = list(bins)
        super().__init__(f"covariance solve failed at bins {self.bins}")


@dataclass(frozen=True)
class DistortionlessTarget:
    """Steering vectors d (n_bins, N) and per-bin constraint gain g (n_bins,)."""

    steering: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        d = np.array(self.steering, dtype=np.complex128)
        g = np.array(self.gain, dtype=np.complex128)
        if d.ndim != 2:
            raise ValueError(f"steering must be 2-D (n_bins, N), got shape {d.shape}")
        if g.shape != (d.shape[0],):
            raise ValueError(f"gain shape {g.shape} does not match n_bins {d.shape[0]}")
        norms = np.linalg.norm(d, axis=1)
        if np.any(norms <= 0.0):
            raise ValueError("steering vector has zero norm at some bin")
        if not np.all(np.isfinite(g.view(np.float64))) or np.any(np.abs(g) == 0.0):
            raise ValueError("gain must be finite and nonzero at every bin")
        d.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "steering", d)
        object.__setattr__(self, "gain", g)

    @property
    def n_bins(self) -> int:
        return self.steering.shape[0]

    @property
    def n_channels(self) -> int:
        return self.steering.shape[1]


@dataclass(frozen=True)
class BeamformerWeights:
    """Per-bin complex weight vectors, shape (n_bins, N)."""

    n_bins: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.complex128)
        if w.ndim != 2 or w.shape[0] != self.n_bins:
            raise ValueError(f"weights shape {w.shape} is not (n_bins={self.n_bins}, N)")
        if not np.all(np.isfinite(w.view(np.float64))):
            raise ValueError("weights contain non-finite values")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_channels(self) -> int:
        return self.weights.shape[1]


def make_target(
    atf_set: AtfSet,
    dir_index: int,
    ref_channel: int = 0,
    flat_gain: complex | None = None,
) -> DistortionlessTarget:
    """Build the distortionless target for one grid direction.

    The gain is the selected direction's transfer function at
    ``ref_channel`` (so the beamformer reproduces that microphone's image
    of the target), or a flat per-bin constant when ``flat_gain`` is given.
    """
    if not 0 <= dir_index < atf_set.n_directions:
        raise IndexError(
            f"dir_index {dir_index} out of range [0, {atf_set.n_directions})"
        )
    if not 0 <= ref_channel < atf_set.n_channels:
        raise IndexError(
            f"ref_channel {ref_channel} out of range [0, {atf_set.n_channels})"
        )
    steering = atf_set.responses[dir_index]
    if flat_gain is not None:
        gain = np.full(atf_set.n_bins, complex(flat_gain), dtype=np.complex128)
    else:
        gain = steering[:, ref_channel].copy()
    bad = np.nonzero(np.abs(gain) < 1e-12)[0]
    if bad.size:
        raise DegenerateTargetError(bad.tolist())
    return DistortionlessTarget(steering=steering, gain=gain)


def max_di_weights(
    cov: IsotropicCovariance,
    target: DistortionlessTarget,
    loading: float = 1e-3,
) -> BeamformerWeights:
    """Closed-form maximum-DI weights under the distortionless constraint.

    ``loading`` adds trace-normalized diagonal loading per bin,
    R_l = R + loading * (trace(R)/N) * I, before the Hermitian solve.
    The constraint h^H d = g is exact for any loading >= 0.
    """
    if loading < 0.0:
        raise ValueError("loading must be >= 0")
    n_bins, n_ch = target.steering.shape
    if cov.n_bins != n_bins or cov.n_channels != n_ch:
        raise ValueError(
            f"covariance ({cov.n_bins}, {cov.n_channels}) does not match "
            f"target ({n_bins}, {n_ch})"
        )
    r = cov.matrices
    if loading > 0.0:
        tr = np.einsum("bii->b", r).real / n_ch
        r = r + (loading * tr)[:, None, None] * np.eye(n_ch)
    d = target.steering
    try:
        x = np.linalg.solve(r, d[..., None])[..., 0]  # R_l x = d, per bin
    except np.linalg.LinAlgError:
        x = _solve_per_bin(r, d)
    denom = np.einsum("bi,bi->b", np.conj(d), x)
    bad = np.nonzero(~np.isfinite(x.view(np.float64)).all(axis=1) | (np.abs(denom) == 0.0))[0]
    if bad.size:
        raise SingularCovarianceError(bad.tolist())
    weights = (np.conj(target.gain) / denom)[:, None] * x
    return BeamformerWeights(n_bins=n_bins, weights=weights)


def _solve_per_bin(r: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Bin-by-bin fallback to name the offending bins on solver failure."""
    out = np.empty_like(d)
    bad = []
    for b in range(r.shape[0]):
        try:
            out[b] = np.linalg.solve(r[b], d[b])
        except np.linalg.LinAlgError:
            bad.append(b)
    if bad:
        raise SingularCovarianceError(bad)
    return out


def delay_and_sum_weights(target: DistortionlessTarget) -> BeamformerWeights:
    """Constraint-satisfying matched filter h = g* d / ||d||^2 (per bin).

    Coincides with the maximum-DI solution for spatially white noise; for
    free-field unit-magnitude steering vectors this is plain delay-and-sum.
    """
    d = target.steering
    scale = np.conj(target.gain) / np.einsum("bi,bi->b", np.conj(d), d).real
    return BeamformerWeights(n_bins=d.shape[0], weights=scale[:, None] * d)


def directivity_index_db(
    weights: BeamformerWeights,
    target: DistortionlessTarget,
    cov: IsotropicCovariance,
) -> np.ndarray:
    """Per-bin directivity index 10*log10(|h^H d|^2 / (h^H R h)) in dB."""
    h = weights.weights
    if h.shape != target.steering.shape:
        raise ValueError(
            f"weights shape {h.shape} does not match target {target.steering.shape}"
        )
    if cov.n_bins != weights.n_bins or cov.n_channels != weights.n_channels:
        raise ValueError("covariance dimensions do not match weights")
    num = np.abs(np.einsum("bi,bi->b", np.conj(h), target.steering)) ** 2
    den = np.einsum("bi,bij,bj->b", np.conj(h), cov.matrices, h).real
    if np.any(den <= 0.0):
        bad = np.nonzero(den <= 0.0)[0].tolist()
        raise ValueError(f"nonpositive diffuse output power at bins {bad}")
    return 10.0 * np.log10(num / den)


def apply_weights(weights: BeamformerWeights, frame: np.ndarray) -> np.ndarray:
    """Filter one spectral frame: out[b] = sum_ch conj(h[b, ch]) * x[b, ch]."""
    x = np.asarray(frame)
    if x.shape != weights.weights.shape:
        raise ValueError(
            f"frame shape {x.shape} does not match weights {weights.weights.shape}"
        )
    return np.einsum("bi,bi->b", np.conj(weights.weights), x)
