"""Multipath parameter estimation from one beamspace tensor.

The measurement tensor of a receiver is (noise aside) a sum of L rank-1
terms, one per propagation path. Estimation proceeds in three steps:

1. model order: count singular values of the mode unfoldings that clear
   a noise-floor threshold derived from the injected noise power;
2. canonical polyadic decomposition by alternating least squares with
   random restarts;
3. per-path parameter extraction from the factor columns: each spatial
   column is matched against the beamspace signature of a phase ramp
   (dense grid plus golden-section refinement), the two per-array ramps
   are jointly inverted into angles, and the subcarrier column yields the
   delay through its shift invariance. Gains are re-fit linearly against
   the reconstructed rank-1 signatures.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import AnglePair, angles_from_cosines
from .waveform import BeamCodebook, MeasurementTensor, beam_response, phase_ramp

logger = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

# correlation threshold below which an extracted parameter is distrusted
LOW_CONFIDENCE_CORR = 0.5


class RankDeficiencyError(RuntimeError):
    """A least-squares subproblem inside ALS lost rank."""


class AlsMonotonicityError(RuntimeError):
    """The ALS residual increased across a sweep (should never happen)."""


@dataclass
class AlsOptions:
    max_sweeps: int = 500
    rel_tol: float = 1.0e-8
    restarts: int = 5
    seed: int = 0
    cond_limit: float = 1.0e12


@dataclass
class CpFactors:
    """CPD result: unit-norm factor columns and complex gains.

    factors[i] has shape (dim_i, rank); every column has unit 2-norm and
    its largest-magnitude entry rotated to the positive real axis, so the
    decomposition is unique up to column permutation when the underlying
    model is. residual_history is the per-sweep absolute residual of the
    winning restart.
    """

    factors: list[np.ndarray]
    gains: np.ndarray
    residual: float
    residual_history: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return len(self.gains)

    def reconstruct(self) -> np.ndarray:
        order = len(self.factors)
        operands = [self.gains, [order]]
        for i, f in enumerate(self.factors):
            operands.append(f)
            operands.append([i, order])
        return np.einsum(*operands, list(range(order)), optimize=True)


def canonical_phase(column: np.ndarray) -> np.ndarray:
    """Rotate a column so its largest-magnitude entry is real positive."""
    idx = int(np.argmax(np.abs(column)))
    pivot = column[idx]
    if pivot == 0:
        return column.copy()
    return column * (np.conj(pivot) / abs(pivot))


def _tensor_data(tensor) -> np.ndarray:
    return tensor.data if isinstance(tensor, MeasurementTensor) else np.asarray(tensor)


def _unfold(data: np.ndarray, mode: int) -> np.ndarray:
    return np.moveaxis(data, mode, 0).reshape(data.shape[mode], -1)


def _khatri_rao(mats: list[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product, first matrix varying slowest."""
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, out.shape[1])
    return out


def cpd_als(tensor, rank: int, opts: AlsOptions | None = None) -> CpFactors:
    """Rank-``rank`` canonical polyadic decomposition of an order-5 tensor.

    Alternating least squares from random complex Gaussian starts. Each
    restart r uses an independent generator keyed (seed + r); the restart
    with the smallest final residual wins. The residual is checked to be
    non-increasing across sweeps, which exact per-mode least squares
    guarantees up to roundoff.

    Raises
    ------
    ValueError
        If rank < 1 or exceeds any unfolding's column budget.
    RankDeficiencyError
        If a mode's least-squares system becomes numerically singular.
    """
    if opts is None:
        opts = AlsOptions()
    data = _tensor_data(tensor)
    order = data.ndim
    if rank < 1:
        raise ValueError("rank must be at least 1")
    norm_t = float(np.linalg.norm(data))
    if norm_t == 0.0:
        # degenerate but well-defined: zero gains reproduce the tensor
        factors = []
        for n in data.shape:
            f = np.zeros((n, rank), dtype=complex)
            f[0, :] = 1.0
            factors.append(f)
        return CpFactors(
            factors=factors,
            gains=np.zeros(rank, dtype=complex),
            residual=0.0,
            residual_history=[0.0],
        )

    unfoldings = [_unfold(data, n) for n in range(order)]

    best: CpFactors | None = None
    for restart in range(max(1, opts.restarts)):
        rng = np.random.Generator(np.random.Philox(key=[opts.seed + restart, 2]))
        factors = [
            (rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank)))
            / np.sqrt(2.0)
            for n in data.shape
        ]
        grams = [f.conj().T @ f for f in factors]

        history: list[float] = []
        prev = np.inf
        for sweep in range(opts.max_sweeps):
            for mode in range(order):
                kr = _khatri_rao([factors[m] for m in range(order) if m != mode])
                v = unfoldings[mode] @ kr.conj()
                g = np.ones((rank, rank), dtype=complex)
                for m in range(order):
                    if m != mode:
                        g *= grams[m]
                g_cond = np.linalg.cond(g)
                if not np.isfinite(g_cond) or g_cond > opts.cond_limit:
                    raise RankDeficiencyError(
                        f"mode-{mode} least-squares system is rank deficient "
                        f"(condition {g_cond:.2e}); the tensor likely has rank < {rank}"
                    )
                # normal equations: new = V conj(G)^-1, and G is Hermitian
                new = np.linalg.solve(g, v.T).T
                if mode != order - 1:
                    norms = np.linalg.norm(new, axis=0)
                    norms[norms == 0.0] = 1.0
                    new = new / norms
                factors[mode] = new
                grams[mode] = new.conj().T @ new

            # direct residual: immune to the cancellation that plagues the
            # norm-identity shortcut near exact fits
            model = np.einsum(
                "al,bl,cl,dl,el->abcde", *factors, optimize=True
            )
            res = float(np.linalg.norm(data - model))
            history.append(res)
            if res > prev * (1.0 + 1.0e-9) + 1.0e-12 * norm_t:
                raise AlsMonotonicityError(
                    f"residual rose from {prev:.6e} to {res:.6e} at sweep {sweep}"
                )
            if prev - res <= opts.rel_tol * norm_t or res <= 1.0e-13 * norm_t:
                prev = res
                break
            prev = res

        candidate = _finalize(factors, prev, history)
        if best is None or candidate.residual < best.residual:
            best = candidate
    return best


def _finalize(factors: list[np.ndarray], residual: float, history: list[float]) -> CpFactors:
    rank = factors[0].shape[1]
    gains = np.ones(rank, dtype=complex)
    unit = []
    for f in factors:
        norms = np.linalg.norm(f, axis=0)
        safe = np.where(norms == 0.0, 1.0, norms)
        fn = f / safe
        gains = gains * norms
        cols = []
        for l in range(rank):
            col = fn[:, l]
            idx = int(np.argmax(np.abs(col)))
            pivot = col[idx]
            if pivot != 0:
                rot = np.conj(pivot) / abs(pivot)
                col = col * rot
                gains[l] = gains[l] / rot
            cols.append(col)
        unit.append(np.stack(cols, axis=1))
    return CpFactors(factors=unit, gains=gains, residual=residual, residual_history=history)


# ---------------------------------------------------------------------------
# Model-order selection
# ---------------------------------------------------------------------------


def select_model_order(
    tensor: MeasurementTensor,
    max_rank: int = 12,
    noise_margin: float = 1.4,
    rel_floor: float = 1.0e-8,
) -> int:
    """Number of rank-1 components distinguishable from the noise floor.

    For every mode unfolding (an m x n matrix) the noise singular values
    concentrate below sqrt(var_entry) * (sqrt(m) + sqrt(n)), where
    var_entry is the per-entry beamspace noise variance implied by the
    stored element noise power and the codebook column norms. Singular
    values above ``noise_margin`` times that edge (plus a relative floor
    for the noiseless case) count as signal; the answer is the largest
    count over modes, capped at max_rank.
    """
    data = tensor.data
    g_el = np.real(np.diag(tensor.codebooks.rx_el.gram()))
    g_az = np.real(np.diag(tensor.codebooks.rx_az.gram()))
    var_entry = tensor.noise_var * float(np.mean(g_az)) * float(np.mean(g_el))
    best = 0
    for mode in range(data.ndim):
        unf = _unfold(data, mode)
        m, n = unf.shape
        sv = np.linalg.svd(unf, compute_uv=False)
        edge = np.sqrt(var_entry) * (np.sqrt(m) + np.sqrt(n))
        thr = max(noise_margin * edge, rel_floor * (sv[0] if sv.size else 0.0))
        count = int(np.sum(sv > thr))
        best = max(best, count)
    return min(best, max_rank)


# ---------------------------------------------------------------------------
# Parameter extraction
# ---------------------------------------------------------------------------


def extract_angle(
    factor_column: np.ndarray, codebook: BeamCodebook, grid_points: int = 2048
) -> tuple[float, float]:
    """Spatial frequency (radians per element) best explaining a factor column.

    Scans a dense grid of ramps exp(j*omega*n), scores the normalized
    correlation |u^H s(omega)| / (||u|| ||s(omega)||) against the
    column, then refines the winner by golden-section search to 1e-6 rad.
    Returns (omega, correlation); the caller decides what correlation is
    trustworthy.
    """
    u = np.asarray(factor_column, dtype=complex)
    if codebook.num_beams < 2:
        raise ValueError("cannot identify a spatial frequency from a single beam")
    if u.shape != (codebook.num_beams,):
        raise ValueError("factor column length must equal the beam count")
    u_norm = np.linalg.norm(u)
    if u_norm == 0.0:
        raise ValueError("zero factor column")

    n_el = codebook.num_elements
    grid = np.linspace(-np.pi, np.pi, grid_points, endpoint=False)

    def corr(omegas):
        sig = beam_response(codebook, phase_ramp(omegas, n_el))
        sig = np.atleast_2d(sig)
        norms = np.linalg.norm(sig, axis=1)
        norms[norms == 0.0] = np.inf
        return np.abs(sig.conj() @ u) / (norms * u_norm)

    scores = corr(grid)
    peak = int(np.argmax(scores))
    step = grid[1] - grid[0]
    lo, hi = grid[peak] - step, grid[peak] + step

    # golden-section refinement (maximization) down to 1e-6 rad
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = corr(np.array([x1, x2]))
    while b - a > 1.0e-6:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = float(corr(np.array([x2]))[0])
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = float(corr(np.array([x1]))[0])
    omega = 0.5 * (a + b)
    return float(omega), float(corr(np.array([omega]))[0])


def extract_delay(factor_column: np.ndarray, subcarrier_spacing: float) -> float:
    """Delay from the shift invariance of the subcarrier ramp.

    tau = -angle(sum_k u_{k+1} conj(u_k)) / (2 pi spacing), reduced into
    [0, 1/spacing). Exact on noiseless ramps.
    """
    u = np.asarray(factor_column, dtype=complex)
    if u.size < 2:
        raise ValueError("need at least two subcarriers to estimate a delay")
    accum = np.sum(u[1:] * np.conj(u[:-1]))
    if abs(accum) < 1.0e-9 * float(np.vdot(u, u).real):
        raise ValueError("degenerate subcarrier column (no phase progression)")
    tau = -np.angle(accum) / (2.0 * np.pi * subcarrier_spacing)
    period = 1.0 / subcarrier_spacing
    return float(tau % period)


@dataclass(frozen=True)
class EstimatedPath:
    """One recovered path: complex gain, measured delay, local-frame angles.

    low_confidence marks paths whose spatial factors matched the ramp
    dictionary poorly or whose direction-cosine pair left the unit disk;
    they are kept so downstream stages can decide, but their parameters
    are suspect.
    """

    gain: complex
    delay: float
    aoa: AnglePair
    aod: AnglePair
    low_confidence: bool = False


def estimate_paths(
    tensor: MeasurementTensor,
    rank: int | str = "auto",
    opts: AlsOptions | None = None,
    max_rank: int = 12,
) -> list[EstimatedPath]:
    """Full per-receiver estimation chain: CPD then parameter extraction.

    rank="auto" selects the model order from the data; rank=0 or an empty
    selection returns []. The returned paths are sorted by descending
    |gain| (ties broken by delay).
    """
    if rank == "auto":
        order = select_model_order(tensor, max_rank=max_rank)
    else:
        order = int(rank)
    if order == 0:
        return []
    cp = cpd_als(tensor, order, opts)

    books = tensor.codebooks
    kd_rx = books.rx_geom.phase_scale
    kd_tx = books.tx_geom.phase_scale
    axes = [
        (books.rx_el, kd_rx),
        (books.rx_az, kd_rx),
        (books.tx_el, kd_tx),
        (books.tx_az, kd_tx),
    ]
    raw = []
    for l in range(cp.rank):
        omegas = []
        corrs = []
        for i, (cb, scale) in enumerate(axes):
            om, c = extract_angle(cp.factors[i][:, l], cb)
            omegas.append(om / scale)  # direction cosine
            corrs.append(c)
        aoa, aoa_ok = angles_from_cosines(omegas[1], omegas[0])
        aod, aod_ok = angles_from_cosines(omegas[3], omegas[2])
        tau = extract_delay(cp.factors[4][:, l], tensor.ofdm.subcarrier_spacing)
        low_conf = (
            min(corrs) < LOW_CONFIDENCE_CORR or not aoa_ok or not aod_ok
        )
        raw.append((aoa, aod, tau, low_conf))

    # re-fit gains against the signatures of the extracted parameters
    from .waveform import path_beam_factors
    from .scene import PathRecord, LABEL_LOS

    columns = []
    for aoa, aod, tau, _ in raw:
        probe = PathRecord(gain=1.0, delay=tau, aoa=aoa, aod=aod, label=LABEL_LOS)
        fac = path_beam_factors(probe, books, tensor.ofdm)
        rank1 = np.einsum("a,b,c,d,e->abcde", *fac, optimize=True)
        columns.append(rank1.ravel())
    design = np.stack(columns, axis=1)
    gains, *_ = np.linalg.lstsq(design, tensor.data.ravel(), rcond=None)

    paths = [
        EstimatedPath(
            gain=complex(gains[l]),
            delay=raw[l][2],
            aoa=raw[l][0],
            aod=raw[l][1],
            low_confidence=raw[l][3],
        )
        for l in range(cp.rank)
    ]
    paths.sort(key=lambda p: (-abs(p.gain), p.delay))
    logger.debug("estimated %d paths (model order %d)", len(paths), order)
    return paths
