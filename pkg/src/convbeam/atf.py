"""Array transfer function (ATF) sets on discrete spherical grids.

An ATF set stores, for every grid direction, the complex frequency
response from a far-field source in that direction to each microphone
of the array.  The set doubles as the quadrature rule for the diffuse
(spherically isotropic) noise covariance: averaging the steering-vector
outer products over a near-uniform grid approximates the spherical
integral of the isotropic field.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND = 343.0  # m/s, default everywhere; overridable per call

_POLE_EPS = 1e-9  # sin(inclination) below this -> azimuth is meaningless


class AtfFormatError(ValueError):
    """Raised when an ATF file does not conform to the on-disk format."""


@dataclass(frozen=True)
class Direction:
    """A direction on the unit sphere in the device frame.

    Device frame convention: +x forward (boresight), +y left, +z up.
    ``azimuth_rad`` is measured counterclockwise from +x in [-pi, pi);
    ``inclination_rad`` is measured from +z (zenith) in [0, pi].
    """

    azimuth_rad: float
    inclination_rad: float

    def __post_init__(self):
        az = float(self.azimuth_rad)
        incl = float(self.inclination_rad)
        if not (math.isfinite(az) and math.isfinite(incl)):
            raise ValueError("direction angles must be finite")
        incl = min(max(incl, 0.0), math.pi)
        # wrap azimuth into [-pi, pi)
        az = math.remainder(az, 2.0 * math.pi)
        if az >= math.pi:
            az -= 2.0 * math.pi
        if az < -math.pi:
            az += 2.0 * math.pi
        if math.sin(incl) < _POLE_EPS:
            az = 0.0
        object.__setattr__(self, "azimuth_rad", az)
        object.__setattr__(self, "inclination_rad", incl)

    def unit_vector(self) -> np.ndarray:
        """Cartesian unit vector (x, y, z) for this direction."""
        s = math.sin(self.inclination_rad)
        return np.array(
            [
                s * math.cos(self.azimuth_rad),
                s * math.sin(self.azimuth_rad),
                math.cos(self.inclination_rad),
            ]
        )

    def angle_to(self, other: "Direction") -> float:
        """Great-circle angle to another direction, radians in [0, pi]."""
        c = float(np.dot(self.unit_vector(), other.unit_vector()))
        return math.acos(min(1.0, max(-1.0, c)))


def fibonacci_directions(n: int) -> list[Direction]:
    """Near-uniform spherical grid of `n` points (Fibonacci lattice)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    out = []
    for i in range(n):
        z = 1.0 - 2.0 * (i + 0.5) / n
        incl = math.acos(min(1.0, max(-1.0, z)))
        az = 2.0 * math.pi * i / golden
        out.append(Direction(az, incl))
    return out


def bin_frequencies(n_bins: int, sample_rate: float) -> np.ndarray:
    """One-sided bin center frequencies in Hz, DC through Nyquist."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if n_bins == 1:
        return np.zeros(1)
    return np.arange(n_bins) * (sample_rate / (2.0 * (n_bins - 1)))


@dataclass(frozen=True)
class AtfSet:
    """Array transfer functions sampled on a discrete direction grid.

    responses: complex array of shape (n_directions, n_bins, n_channels),
    in the order the directions were measured/generated.
    """

    n_channels: int
    sample_rate: float
    n_bins: int
    directions: tuple[Direction, ...]
    responses: np.ndarray
    _grid_vectors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if len(self.directions) < 1:
            raise ValueError("at least one direction is required")
        responses = np.array(self.responses, dtype=np.complex128)
        expected = (len(self.directions), self.n_bins, self.n_channels)
        if responses.shape != expected:
            raise ValueError(
                f"responses shape {responses.shape} does not match "
                f"(n_directions, n_bins, n_channels) = {expected}"
            )
        if not np.all(np.isfinite(responses.view(np.float64))):
            raise ValueError("responses contain non-finite values")
        responses.setflags(write=False)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "directions", tuple(self.directions))
        grid = np.stack([d.unit_vector() for d in self.directions])
        grid.setflags(write=False)
        object.__setattr__(self, "_grid_vectors", grid)

    @property
    def n_directions(self) -> int:
        return len(self.directions)

    def frequencies(self) -> np.ndarray:
        return bin_frequencies(self.n_bins, self.sample_rate)


def nearest_direction(atf_set: AtfSet, query: Direction) -> int:
    """Index of the grid direction closest (great-circle) to `query`.

    Ties break toward the lowest index.
    """
    dots = atf_set._grid_vectors @ query.unit_vector()
    return int(np.argmax(dots))


@dataclass(frozen=True)
class IsotropicCovariance:
    """Per-bin spatial covariance of a spherically isotropic noise field.

    matrices: complex array of shape (n_bins, n_channels, n_channels),
    Hermitian positive semi-definite at every bin.
    """

    n_bins: int
    matrices: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrices, dtype=np.complex128)
        if m.ndim != 3 or m.shape[0] != self.n_bins or m.shape[1] != m.shape[2]:
            raise ValueError(
                f"matrices shape {m.shape} is not (n_bins, N, N) with n_bins={self.n_bins}"
            )
        herm_err = np.abs(m - np.conj(np.swapaxes(m, 1, 2)))
        scale = np.maximum(np.abs(m).max(axis=(1, 2)), 1e-300)
        if np.any(herm_err.max(axis=(1, 2)) > 1e-12 * scale):
            raise ValueError("covariance matrices are not Hermitian within tolerance")
        eig = np.linalg.eigvalsh(m)
        if np.any(eig[:, 0] < -1e-9 * np.maximum(eig[:, -1], 0.0) - 1e-300):
            raise ValueError("covariance matrices are not positive semi-definite")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    @property
    def n_channels(self) -> int:
        return self.matrices.shape[1]


def isotropic_covariance(atf_set: AtfSet) -> IsotropicCovariance:
    """Diffuse-field covariance as the unweighted grid average of ATF outer products.

    Per bin: R = (1/n_directions) * sum_d d_atf(d) d_atf(d)^H.  The grid is
    expected to sample the sphere near-uniformly (e.g. a Fibonacci lattice);
    only then does the average approximate the true spherical integral.
    """
    r = atf_set.responses  # (D, B, N)
    cov = np.einsum("dbi,dbj->bij", r, np.conj(r)) / atf_set.n_directions
    cov = 0.5 * (cov + np.conj(np.swapaxes(cov, 1, 2)))  # kill rounding asymmetry
    return IsotropicCovariance(n_bins=atf_set.n_bins, matrices=cov)


# ---------------------------------------------------------------------------
# On-disk format: JSON header, a single NUL byte, then little-endian float32
# interleaved (re, im) pairs in [direction][bin][channel] order.
# ---------------------------------------------------------------------------

_HEADER_FIELDS = ("n_channels", "sample_rate", "n_bins", "n_directions", "directions")


def write_atf_set(path: str | os.PathLike, atf_set: AtfSet) -> None:
    """Write an ATF set; payload is float32, so responses should be float32-valued."""
    header = {
        "n_channels": atf_set.n_channels,
        "sample_rate": atf_set.sample_rate,
        "n_bins": atf_set.n_bins,
        "n_directions": atf_set.n_directions,
        "directions": [
            {"azimuth_rad": d.azimuth_rad, "inclination_rad": d.inclination_rad}
            for d in atf_set.directions
        ],
    }
    flat = np.empty(atf_set.responses.shape + (2,), dtype=np.float32)
    flat[..., 0] = atf_set.responses.real
    flat[..., 1] = atf_set.responses.imag
    tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(json.dumps(header).encode("utf-8"))
            f.write(b"\x00")
            f.write(flat.tobytes())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def load_atf_set(path: str | os.PathLike) -> AtfSet:
    """Load an ATF set, validating header, dimensions and payload."""
    with open(path, "rb") as f:
        blob = f.read()
    sep = blob.find(b"\x00")
    if sep < 0:
        raise AtfFormatError("missing NUL separator between header and payload")
    try:
        header = json.loads(blob[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AtfFormatError(f"malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise AtfFormatError("header is not a JSON object")
    for key in _HEADER_FIELDS:
        if key not in header:
            raise AtfFormatError(f"header missing field '{key}'")

    try:
        n_channels = int(header["n_channels"])
        sample_rate = float(header["sample_rate"])
        n_bins = int(header["n_bins"])
        n_directions = int(header["n_directions"])
    except (TypeError, ValueError) as exc:
        raise AtfFormatError(f"malformed header field: {exc}") from exc
    if n_channels < 1:
        raise AtfFormatError("header field 'n_channels' must be >= 1")
    if n_bins < 1:
        raise AtfFormatError("header field 'n_bins' must be >= 1")
    raw_dirs = header["directions"]
    if not isinstance(raw_dirs, list):
        raise AtfFormatError("header field 'directions' must be a list")
    if len(raw_dirs) != n_directions:
        raise AtfFormatError(
            f"header field 'n_directions' is {n_directions} but "
            f"{len(raw_dirs)} directions are listed"
        )
    directions = []
    for i, d in enumerate(raw_dirs):
        try:
            directions.append(Direction(float(d["azimuth_rad"]), float(d["inclination_rad"])))
        except (TypeError, KeyError, ValueError) as exc:
            raise AtfFormatError(f"malformed direction entry {i}: {exc}") from exc

    payload = blob[sep + 1 :]
    expected_floats = n_directions * n_bins * n_channels * 2
    if len(payload) != expected_floats * 4:
        raise AtfFormatError(
            f"payload holds {len(payload)} bytes, expected {expected_floats * 4} "
            f"for field 'responses'"
        )
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise AtfFormatError("field 'responses' contains non-finite values")
    flat = flat.reshape(n_directions, n_bins, n_channels, 2)
    responses = flat[..., 0] + 1j * flat[..., 1]
    try:
        return AtfSet(
            n_channels=n_channels,
            sample_rate=sample_rate,
            n_bins=n_bins,
            directions=tuple(directions),
            responses=responses,
        )
    except ValueError as exc:
        raise AtfFormatError(str(exc)) from exc
