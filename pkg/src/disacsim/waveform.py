"""Beamspace measurement synthesis for one transmitter-receiver pair.

The transmitter sounds every (tx beam, rx beam, subcarrier) combination
once. Stacking the beamformed outputs gives an order-5 tensor with axes

    [rx elevation beam, rx azimuth beam, tx elevation beam, tx azimuth beam,
     subcarrier]

Each propagation path contributes a rank-1 term: the Kronecker structure
of the planar-array response splits per axis, and the subcarrier profile
of a delay tau is the ramp s_k = exp(-2j*pi*k*spacing*tau). Receiver-side
noise is white at the elements and enters beamspace through the combiner
adjoints, so the beamspace noise covariance is exactly

    sigma^2 * I_K kron I_MTaz kron I_MTel kron (Waz^H Waz) kron (Wel^H Wel)

for the column-major vectorization of the tensor.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import AnglePair
from .scene import PathRecord, Scene, UpaGeometry, axis_responses, generate_ground_truth_paths

# ---------------------------------------------------------------------------
# OFDM configuration
# ---------------------------------------------------------------------------


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class OfdmConfig:
    """Pilot sounding grid. Powers are dBm, frequencies Hz."""

    carrier_freq: float = 15.0e9
    bandwidth: float = 100.0e6
    num_subcarriers: int = 64
    subcarrier_spacing: float | None = None  # defaults to bandwidth / num_subcarriers
    tx_power_dbm: float = 40.0
    noise_variance_dbm: float = -93.85

    def __post_init__(self):
        if self.carrier_freq <= 0 or self.bandwidth <= 0:
            raise ValueError("carrier frequency and bandwidth must be positive")
        if self.num_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if self.subcarrier_spacing is None:
            object.__setattr__(
                self, "subcarrier_spacing", self.bandwidth / self.num_subcarriers
            )
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.subcarrier_spacing * self.num_subcarriers > self.bandwidth * (1 + 1e-9):
            raise ValueError("sounded subcarriers exceed the bandwidth")

    @property
    def wavelength(self) -> float:
        from .scene import SPEED_OF_LIGHT

        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def delay_period(self) -> float:
        """Unambiguous delay range of the subcarrier ramp, 1 / spacing."""
        return 1.0 / self.subcarrier_spacing

    @property
    def tx_amplitude(self) -> float:
        return float(np.sqrt(dbm_to_watts(self.tx_power_dbm)))

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_variance_dbm)


# ---------------------------------------------------------------------------
# Codebooks
# ---------------------------------------------------------------------------

AXIS_LABELS = ("rx_el", "rx_az", "tx_el", "tx_az")


@dataclass
class BeamCodebook:
    """Analog beamforming codebook for one array axis.

    matrix has shape (elements, beams); columns are unnormalized DFT
    beams, hence mutually orthogonal with equal norms sqrt(elements).
    beam_indices records which DFT columns were taken.
    """

    matrix: np.ndarray
    axis: str
    beam_indices: tuple[int, ...]

    def __post_init__(self):
        if self.axis not in AXIS_LABELS:
            raise ValueError(f"axis must be one of {AXIS_LABELS}, got {self.axis!r}")
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.ndim != 2:
            raise ValueError("codebook matrix must be 2-D (elements x beams)")
        norms = np.linalg.norm(self.matrix, axis=0)
        if norms.size and not np.allclose(norms, norms[0], rtol=1e-9):
            raise ValueError("codebook columns must have equal norms")

    @property
    def num_elements(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_beams(self) -> int:
        return self.matrix.shape[1]

    def gram(self) -> np.ndarray:
        return self.matrix.conj().T @ self.matrix


def dft_codebook(axis_size: int, num_beams: int, axis: str, first_beam: int | None = None) -> BeamCodebook:
    """Take ``num_beams`` columns of the size-``axis_size`` DFT matrix.

    By default the selection is centered on broadside (indices
    -floor(M/2) .. ceil(M/2)-1 modulo N) so the beams tile a symmetric
    sector; pass ``first_beam`` to aim the sector elsewhere, e.g. a
    downtilted elevation fan.
    """
    if not 1 <= num_beams <= axis_size:
        raise ValueError("num_beams must lie in [1, axis_size]")
    if first_beam is None:
        first_beam = -(num_beams // 2)
    indices = tuple(int((first_beam + j) % axis_size) for j in range(num_beams))
    n = np.arange(axis_size)[:, None]
    cols = np.exp(-2j * np.pi * n * np.asarray(indices)[None, :] / axis_size)
    return BeamCodebook(matrix=cols, axis=axis, beam_indices=indices)


@dataclass
class CodebookSet:
    """The four per-axis codebooks plus the array geometries they address."""

    rx_el: BeamCodebook
    rx_az: BeamCodebook
    tx_el: BeamCodebook
    tx_az: BeamCodebook
    rx_geom: UpaGeometry
    tx_geom: UpaGeometry

    def __post_init__(self):
        checks = [
            (self.rx_el, "rx_el", self.rx_geom.n_y),
            (self.rx_az, "rx_az", self.rx_geom.n_x),
            (self.tx_el, "tx_el", self.tx_geom.n_y),
            (self.tx_az, "tx_az", self.tx_geom.n_x),
        ]
        for cb, label, n_expected in checks:
            if cb.axis != label:
                raise ValueError(f"codebook in slot {label} is labeled {cb.axis}")
            if cb.num_elements != n_expected:
                raise ValueError(
                    f"{label} codebook has {cb.num_elements} element rows, "
                    f"array axis has {n_expected}"
                )

    @property
    def beam_shape(self) -> tuple[int, int, int, int]:
        return (
            self.rx_el.num_beams,
            self.rx_az.num_beams,
            self.tx_el.num_beams,
            self.tx_az.num_beams,
        )


def beam_response(codebook: BeamCodebook, ramp: np.ndarray) -> np.ndarray:
    """Beamspace signature of a per-axis phase ramp.

    Receive axes apply the combiner adjoint W^H a. Transmit axes see the
    steering vector conjugated (the channel couples a_T^H into the
    precoder), giving conj(F^H a). ``ramp`` may be a single vector or a
    (grid, elements) stack.
    """
    resp = np.asarray(ramp) @ codebook.matrix.conj()
    if codebook.axis.startswith("tx"):
        return resp.conj()
    return resp


def phase_ramp(omega: float | np.ndarray, num_elements: int) -> np.ndarray:
    """Element-axis ramp exp(j * omega * n); omega may be a grid."""
    scalar = np.ndim(omega) == 0
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    ramp = np.exp(1j * om[:, None] * np.arange(num_elements)[None, :])
    return ramp[0] if scalar else ramp


# ---------------------------------------------------------------------------
# Channel and tensor synthesis
# ---------------------------------------------------------------------------


def channel_matrix(
    paths: list[PathRecord],
    tx_geom: UpaGeometry,
    rx_geom: UpaGeometry,
    subcarrier: int,
    spacing: float,
) -> np.ndarray:
    """Element-space frequency-domain channel at one subcarrier.

    H_k = sum_paths gain * exp(-2j*pi*k*spacing*delay) * a_R a_T^H with
    a_R, a_T the full Kronecker responses. Shape (rx elements, tx
    elements).
    """
    from .scene import steering_vector

    h = np.zeros((rx_geom.num_elements, tx_geom.num_elements), dtype=complex)
    for p in paths:
        a_r = steering_vector(p.aoa, rx_geom)
        a_t = steering_vector(p.aod, tx_geom)
        phase = np.exp(-2j * np.pi * subcarrier * spacing * p.delay)
        h += p.gain * phase * np.outer(a_r, a_t.conj())
    return h


def path_beam_factors(
    path: PathRecord, books: CodebookSet, ofdm: OfdmConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """The five per-axis signatures of one path (unit gain)."""
    rx_ax, rx_ay = axis_responses(path.aoa, books.rx_geom)
    tx_ax, tx_ay = axis_responses(path.aod, books.tx_geom)
    k = np.arange(ofdm.num_subcarriers)
    delay_ramp = np.exp(-2j * np.pi * ofdm.subcarrier_spacing * path.delay * k)
    return (
        beam_response(books.rx_el, rx_ay),
        beam_response(books.rx_az, rx_ax),
        beam_response(books.tx_el, tx_ay),
        beam_response(books.tx_az, tx_ax),
        delay_ramp,
    )


@dataclass
class MeasurementTensor:
    """Order-5 beamspace snapshot plus the metadata needed to invert it.

    data axes: [rx_el beams, rx_az beams, tx_el beams, tx_az beams,
    subcarriers]. noise_var is the element-level noise power (W) actually
    injected, which downstream model-order selection relies on.
    """

    data: np.ndarray
    codebooks: CodebookSet
    ofdm: OfdmConfig
    noise_var: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        expected = self.codebooks.beam_shape + (self.ofdm.num_subcarriers,)
        if self.data.shape != expected:
            raise ValueError(
                f"tensor shape {self.data.shape} does not match codebooks/subcarriers {expected}"
            )
        if self.noise_var < 0.0:
            raise ValueError("noise variance must be nonnegative")


def tensor_from_paths(
    paths: list[PathRecord],
    books: CodebookSet,
    ofdm: OfdmConfig,
    gains: np.ndarray | None = None,
) -> np.ndarray:
    """Noise-free beamspace tensor for a list of paths.

    gains defaults to tx_amplitude * path.gain; pass explicit values to
    plant arbitrary coefficients.
    """
    shape = books.beam_shape + (ofdm.num_subcarriers,)
    data = np.zeros(shape, dtype=complex)
    if not paths:
        return data
    if gains is None:
        gains = np.array([ofdm.tx_amplitude * p.gain for p in paths])
    factors = [path_beam_factors(p, books, ofdm) for p in paths]
    stacked = [np.stack([f[i] for f in factors]) for i in range(5)]
    data = np.einsum(
        "l,la,lb,lc,ld,le->abcde",
        np.asarray(gains),
        *stacked,
        optimize=True,
    )
    return data


def beamspace_noise(
    books: CodebookSet, ofdm: OfdmConfig, noise_var: float, rng: np.random.Generator
) -> np.ndarray:
    """Receiver noise in beamspace with exactly the advertised covariance.

    Element-space circular white noise of variance ``noise_var`` is drawn
    for every (tx beam pair, subcarrier) sounding and pushed through the
    per-axis combiner adjoints.
    """
    m_el, m_az, mt_el, mt_az = books.beam_shape
    n_y = books.rx_geom.n_y
    n_x = books.rx_geom.n_x
    k = ofdm.num_subcarriers
    scale = np.sqrt(noise_var / 2.0)
    z = scale * (
        rng.standard_normal((n_y, n_x, mt_el, mt_az, k))
        + 1j * rng.standard_normal((n_y, n_x, mt_el, mt_az, k))
    )
    # apply W_el^H on the y axis and W_az^H on the x axis
    return np.einsum(
        "ya,xb,yxcde->abcde",
        books.rx_el.matrix.conj(),
        books.rx_az.matrix.conj(),
        z,
        optimize=True,
    )


def expected_noise_energy(books: CodebookSet, ofdm: OfdmConfig, noise_var: float) -> float:
    """E ||N||_F^2 of the beamspace noise tensor."""
    tr_el = float(np.real(np.trace(books.rx_el.gram())))
    tr_az = float(np.real(np.trace(books.rx_az.gram())))
    mt_el, mt_az = books.tx_el.num_beams, books.tx_az.num_beams
    return noise_var * ofdm.num_subcarriers * mt_el * mt_az * tr_az * tr_el


def synthesize_tensor(
    scene: Scene,
    rx_id: int,
    books: CodebookSet,
    ofdm: OfdmConfig,
    noise_seed: int,
    effective_snr_db: float | None = None,
) -> MeasurementTensor:
    """Sound the channel of one receiver and return its beamspace tensor.

    The noise power is ofdm.noise_variance_dbm unless ``effective_snr_db``
    is given, in which case it is calibrated so that
    ||signal||^2 / E||noise||^2 hits the requested ratio (the usual knob
    for controlled accuracy sweeps).
    """
    rx = scene.receiver(rx_id)
    if rx.array != books.rx_geom:
        raise ValueError("receiver array differs from the codebook geometry")
    if scene.tx.array != books.tx_geom:
        raise ValueError("transmitter array differs from the codebook geometry")
    paths = generate_ground_truth_paths(scene, rx_id)
    signal = tensor_from_paths(paths, books, ofdm)
    if effective_snr_db is None:
        noise_var = ofdm.noise_power_w
    else:
        sig_energy = float(np.vdot(signal, signal).real)
        unit_noise = expected_noise_energy(books, ofdm, 1.0)
        noise_var = sig_energy / (unit_noise * 10.0 ** (effective_snr_db / 10.0))
    rng = np.random.Generator(np.random.Philox(key=[noise_seed, 1]))
    data = signal
    if noise_var > 0.0:
        data = data + beamspace_noise(books, ofdm, noise_var, rng)
    return MeasurementTensor(data=data, codebooks=books, ofdm=ofdm, noise_var=noise_var)


# ---------------------------------------------------------------------------
# Tensor file format
# ---------------------------------------------------------------------------
#
# <prefix>.bin: float64 pairs (re, im) in C order of the 5-D array.
# <prefix>.json: shape, axis order, codebook recipe, OFDM grid, noise power.


def export_tensor(tensor: MeasurementTensor, prefix: str) -> tuple[str, str]:
    """Write <prefix>.bin and <prefix>.json; returns both paths."""
    bin_path, json_path = prefix + ".bin", prefix + ".json"
    flat = np.empty(tensor.data.size * 2, dtype=np.float64)
    flat[0::2] = tensor.data.real.ravel(order="C")
    flat[1::2] = tensor.data.imag.ravel(order="C")
    flat.tofile(bin_path)
    books = tensor.codebooks
    header = {
        "format": "disacsim-tensor/1",
        "shape": list(tensor.data.shape),
        "axes": ["rx_el", "rx_az", "tx_el", "tx_az", "subcarrier"],
        "storage": "row-major float64 interleaved re/im",
        "noise_var": tensor.noise_var,
        "ofdm": {
            "carrier_freq": tensor.ofdm.carrier_freq,
            "bandwidth": tensor.ofdm.bandwidth,
            "num_subcarriers": tensor.ofdm.num_subcarriers,
            "subcarrier_spacing": tensor.ofdm.subcarrier_spacing,
            "tx_power_dbm": tensor.ofdm.tx_power_dbm,
            "noise_variance_dbm": tensor.ofdm.noise_variance_dbm,
        },
        "rx_geom": _geom_dict(books.rx_geom),
        "tx_geom": _geom_dict(books.tx_geom),
        "codebooks": {
            label: {
                "axis_size": cb.num_elements,
                "beam_indices": list(cb.beam_indices),
            }
            for label, cb in (
                ("rx_el", books.rx_el),
                ("rx_az", books.rx_az),
                ("tx_el", books.tx_el),
                ("tx_az", books.tx_az),
            )
        },
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return bin_path, json_path


def load_tensor(prefix: str) -> MeasurementTensor:
    """Read a tensor written by :func:`export_tensor` (pass the same prefix)."""
    if prefix.endswith(".json") or prefix.endswith(".bin"):
        prefix = prefix.rsplit(".", 1)[0]
    with open(prefix + ".json") as fh:
        header = json.load(fh)
    if header.get("format") != "disacsim-tensor/1":
        raise ValueError(f"unrecognized tensor format {header.get('format')!r}")
    shape = tuple(header["shape"])
    flat = np.fromfile(prefix + ".bin", dtype=np.float64)
    if flat.size != 2 * int(np.prod(shape)):
        raise ValueError("binary payload size does not match the header shape")
    data = (flat[0::2] + 1j * flat[1::2]).reshape(shape)
    o = header["ofdm"]
    ofdm = OfdmConfig(
        carrier_freq=o["carrier_freq"],
        bandwidth=o["bandwidth"],
        num_subcarriers=o["num_subcarriers"],
        subcarrier_spacing=o["subcarrier_spacing"],
        tx_power_dbm=o["tx_power_dbm"],
        noise_variance_dbm=o["noise_variance_dbm"],
    )
    rx_geom = _geom_from(header["rx_geom"])
    tx_geom = _geom_from(header["tx_geom"])
    cbs = {}
    for label in AXIS_LABELS:
        spec = header["codebooks"][label]
        size = spec["axis_size"]
        idx = spec["beam_indices"]
        n = np.arange(size)[:, None]
        cols = np.exp(-2j * np.pi * n * np.asarray(idx)[None, :] / size)
        cbs[label] = BeamCodebook(matrix=cols, axis=label, beam_indices=tuple(idx))
    books = CodebookSet(
        rx_el=cbs["rx_el"],
        rx_az=cbs["rx_az"],
        tx_el=cbs["tx_el"],
        tx_az=cbs["tx_az"],
        rx_geom=rx_geom,
        tx_geom=tx_geom,
    )
    return MeasurementTensor(
        data=data, codebooks=books, ofdm=ofdm, noise_var=header["noise_var"]
    )


def _geom_dict(g: UpaGeometry) -> dict:
    return {"n_x": g.n_x, "n_y": g.n_y, "spacing": g.spacing, "wavelength": g.wavelength}


def _geom_from(d: dict) -> UpaGeometry:
    return UpaGeometry(n_x=d["n_x"], n_y=d["n_y"], spacing=d["spacing"], wavelength=d["wavelength"])
