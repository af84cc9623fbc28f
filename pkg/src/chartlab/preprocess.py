"""CSI preprocessing: padding to global dims, augmentation, features.

The fixed pipeline order is pad -> deactivate antennas -> remove a
subcarrier band -> add noise -> delay-truncate -> extract features.  The
augmentation stages imitate other radio setups (fewer antennas, OFDMA-style
subcarrier allocation, channel estimation errors) and never touch padding:
entries outside the validity masks stay exactly zero through every stage.

Randomness is explicit.  Every augmented sample draws from its own stream,
keyed by (seed, scenario, sample, epoch), so any parallel schedule
reproduces the sequential output; ``FROZEN_DRAW`` is the epoch tag reserved
for the one-shot augmentation of held-out data.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

FROZEN_DRAW = 0xFFFFFFFF


@dataclass(frozen=True)
class MaxDims:
    """Global per-axis maxima over all configured scenarios."""

    a_max: int
    b_max: int
    u_max: int
    w_max: int

    @classmethod
    def from_specs(cls, specs) -> "MaxDims":
        return cls(
            a_max=max(s.n_ap for s in specs),
            b_max=max(s.n_ap_ant for s in specs),
            u_max=max(s.n_ue_ant for s in specs),
            w_max=max(s.n_subc for s in specs),
        )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.a_max, self.b_max, self.u_max, self.w_max)

    def feature_dim(self, c_trunc: int) -> int:
        return self.a_max * self.b_max * self.u_max * c_trunc


@dataclass
class PaddedCsi:
    """CSI tensor at global max dims plus per-axis validity masks."""

    tensor: np.ndarray       # (a_max, b_max, u_max, w_max) complex128
    ap_mask: np.ndarray      # (a_max,) bool, True where a real AP lives
    ap_ant_mask: np.ndarray  # (b_max,) bool
    ue_ant_mask: np.ndarray  # (u_max,) bool
    subc_mask: np.ndarray    # (w_max,) bool

    def copy(self) -> "PaddedCsi":
        return PaddedCsi(self.tensor.copy(), self.ap_mask.copy(),
                         self.ap_ant_mask.copy(), self.ue_ant_mask.copy(),
                         self.subc_mask.copy())

    def valid_region(self) -> np.ndarray:
        """Boolean product mask of the four axis masks."""
        return (self.ap_mask[:, None, None, None]
                & self.ap_ant_mask[None, :, None, None]
                & self.ue_ant_mask[None, None, :, None]
                & self.subc_mask[None, None, None, :])


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for the three augmentation stages."""

    enable: bool = True
    q: float = 0.2
    snr_db_range: tuple[float, float] = (10.0, 21.0)
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"q must be in [0, 1), got {self.q}")
        lo, hi = self.snr_db_range
        if lo > hi:
            raise ValueError(f"bad SNR range {self.snr_db_range}")


def aug_rng(seed: int, scenario_id: int, sample_index: int, epoch: int):
    """Independent augmentation stream for one sample in one epoch."""
    return np.random.default_rng([seed, scenario_id, sample_index, epoch])


def zero_pad(t: np.ndarray, m: MaxDims) -> PaddedCsi:
    """Place a CSI tensor at the leading indices of the global-dim tensor."""
    t = np.asarray(t, dtype=np.complex128)
    if t.ndim != 4:
        raise ValueError(f"expected 4-axis tensor, got ndim={t.ndim}")
    a, b, u, w = t.shape
    if a > m.a_max or b > m.b_max or u > m.u_max or w > m.w_max:
        raise ValueError(f"tensor dims {t.shape} exceed max dims {m.shape}")
    tensor = np.zeros(m.shape, dtype=np.complex128)
    tensor[:a, :b, :u, :w] = t
    masks = []
    for size, limit in zip((a, b, u, w), m.shape):
        mask = np.zeros(limit, dtype=bool)
        mask[:size] = True
        masks.append(mask)
    return PaddedCsi(tensor, *masks)


def _deactivate_inplace(p: PaddedCsi, rng) -> None:
    b_s = int(p.ap_ant_mask.sum())
    u_s = int(p.ue_ant_mask.sum())
    for a in np.flatnonzero(p.ap_mask):
        k = int(rng.integers(b_s))
        if k:
            drop = rng.choice(b_s, size=k, replace=False)
            p.tensor[a, drop] = 0.0
    k_u = int(rng.integers(u_s))
    if k_u:
        drop = rng.choice(u_s, size=k_u, replace=False)
        p.tensor[:, :, drop, :] = 0.0


def deactivate_antennas(p: PaddedCsi, rng) -> PaddedCsi:
    """Randomly silence receive/UE antennas, never all of them.

    Each real AP independently loses k ~ U{0..B_s-1} of its antennas; the
    UE loses k_u ~ U{0..U_s-1} antennas across all APs.
    """
    out = p.copy()
    _deactivate_inplace(out, rng)
    return out


def _remove_band_inplace(p: PaddedCsi, q: float, rng) -> None:
    w_s = int(p.subc_mask.sum())
    n_remove = int(q * w_s)
    if n_remove == 0:
        return
    start = int(rng.integers(w_s))
    idx = (start + np.arange(n_remove)) % w_s
    p.tensor[..., idx] = 0.0


def remove_subcarrier_band(p: PaddedCsi, q: float, rng) -> PaddedCsi:
    """Zero a contiguous block of floor(q * W_s) real subcarriers.

    The block starts at a uniformly drawn real subcarrier index and wraps
    around the real range, so exactly floor(q * W_s) carriers are removed.
    """
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must be in [0, 1), got {q}")
    out = p.copy()
    _remove_band_inplace(out, q, rng)
    return out


def _add_noise_inplace(p: PaddedCsi, snr_db_range, rng) -> None:
    live = p.tensor != 0.0
    n_live = int(live.sum())
    if n_live == 0:
        raise ValueError("cannot add noise to an all-zero tensor")
    rho_db = rng.uniform(snr_db_range[0], snr_db_range[1])
    sq = np.abs(p.tensor) ** 2
    per_ap_power = sq.sum(axis=(1, 2, 3))
    per_ap_live = live.sum(axis=(1, 2, 3))
    with np.errstate(invalid="ignore"):
        power = np.where(per_ap_live > 0, per_ap_power / np.maximum(per_ap_live, 1), 0.0)
    n0 = power.max() / 10.0 ** (rho_db / 10.0)
    draws = rng.standard_normal((2, n_live)) * np.sqrt(n0 / 2.0)
    p.tensor[live] += draws[0] + 1j * draws[1]


def add_noise(p: PaddedCsi, snr_db_range, rng) -> PaddedCsi:
    """Add complex Gaussian noise to the nonzero (live) entries.

    The target SNR is drawn uniformly in dB; the noise variance is set so
    the strongest AP (mean |.|^2 over its live entries) sits at that SNR.
    Padded and deactivated entries stay exactly zero.
    """
    out = p.copy()
    _add_noise_inplace(out, snr_db_range, rng)
    return out


def augment(p: PaddedCsi, cfg: AugmentConfig, rng) -> PaddedCsi:
    """Deactivation, band removal, and noise, in the pipeline order."""
    cfg.validate()
    if not cfg.enable:
        return p.copy()
    out = p.copy()
    _deactivate_inplace(out, rng)
    _remove_band_inplace(out, cfg.q, rng)
    _add_noise_inplace(out, cfg.snr_db_range, rng)
    return out


def delay_truncate(p: PaddedCsi, c_trunc: int) -> np.ndarray:
    """IDFT over the padded subcarrier axis, keeping the first taps.

    Output dims are (a_max, b_max, u_max, c_trunc).
    """
    w_max = p.tensor.shape[-1]
    if not 1 <= c_trunc <= w_max:
        raise ValueError(f"c_trunc must be in [1, {w_max}], got {c_trunc}")
    return kernels.idft_taps(p.tensor, c_trunc)


def extract_features(p: PaddedCsi, c_trunc: int) -> np.ndarray:
    """Unit-norm magnitude feature vector of length D.

    Entry-wise absolute value of the vectorized delay-truncated tensor,
    normalized to unit Euclidean norm; invariant to per-AP phase rotations
    and to global scaling of the CSI.
    """
    v = kernels.vectorize(delay_truncate(p, c_trunc))
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        raise ValueError("feature extraction needs a nonzero tensor")
    return np.abs(v) / nrm


def extract_raw(p: PaddedCsi, c_trunc: int) -> np.ndarray:
    """Raw CSI vector of length 2D: real parts then imaginary parts."""
    v = kernels.vectorize(delay_truncate(p, c_trunc))
    return np.concatenate([v.real, v.imag])


# --- dataset-level helpers ---------------------------------------------------

def sample_padded(data, index: int, m: MaxDims, cfg: AugmentConfig | None,
                  epoch: int) -> PaddedCsi:
    """Padded (and, if configured, augmented) tensor for one sample."""
    p = zero_pad(data.csi[index], m)
    if cfg is not None and cfg.enable:
        rng = aug_rng(cfg.seed, data.spec.scenario_id, index, epoch)
        p = augment(p, cfg, rng)
    return p


def dataset_features(data, indices, m: MaxDims, c_trunc: int,
                     cfg: AugmentConfig | None, epoch: int) -> np.ndarray:
    """Feature matrix (len(indices), D) for selected samples of a scenario."""
    out = np.empty((len(indices), m.feature_dim(c_trunc)), dtype=np.float64)
    for row, idx in enumerate(indices):
        out[row] = extract_features(sample_padded(data, int(idx), m, cfg, epoch), c_trunc)
    return out


def dataset_raw(data, indices, m: MaxDims, c_trunc: int,
                cfg: AugmentConfig | None, epoch: int) -> np.ndarray:
    """Raw-vector matrix (len(indices), 2D) for selected samples."""
    out = np.empty((len(indices), 2 * m.feature_dim(c_trunc)), dtype=np.float64)
    for row, idx in enumerate(indices):
        out[row] = extract_raw(sample_padded(data, int(idx), m, cfg, epoch), c_trunc)
    return out
