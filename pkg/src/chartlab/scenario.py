"""Synthetic deployment scenarios: AP layouts, UE sweeps, multipath CSI.

A scenario bundles a radio/deployment configuration (antenna counts,
subcarriers, area geometry) with a serpentine UE trajectory and one CSI
tensor per trajectory point.  CSI comes from a geometric multipath model:
a line-of-sight path plus single-bounce reflections off per-scenario
scatterer positions.  Everything is a pure function of the spec (seed
included), so regenerating a scenario is byte-reproducible.

Container format (version 1)
----------------------------
Scenario files are little-endian binary with a JSON sidecar (same path +
``.json``) carrying the spec:

    magic      4 bytes  b"CLAB"
    version    u32      1
    payload    u32      0 = CSI scenario, 1 = feature matrix
    dims       4 x u32  (n_ap, n_ap_ant, n_ue_ant, n_subc); (1,1,1,D) for features
    n_samples  u64
    positions  n_samples x 2 f64
    timestamps n_samples f64
    payload    CSI: n_samples*prod(dims) complex as interleaved re/im f64
               features: n_samples*D f64
"""

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

_MAGIC = b"CLAB"
_VERSION = 1
PAYLOAD_CSI = 0
PAYLOAD_FEATURES = 1

# Sub-stream tags for deriving independent RNGs from a scenario seed.
_STREAM_SCATTER = 0
_STREAM_SAMPLE = 1


@dataclass(frozen=True)
class ScenarioSpec:
    """Static description of one deployment + radio setup."""

    scenario_id: int
    name: str
    n_ap: int
    n_ap_ant: int
    n_ue_ant: int
    n_subc: int
    carrier_freq_hz: float
    bandwidth_hz: float
    area: tuple[float, float]                    # (width_m, height_m)
    ap_positions: tuple[tuple[float, float], ...]
    ap_array: str = "linear"                     # "linear" | "rectangular"
    ap_array_shape: tuple[int, int] | None = None  # (rows, cols) if rectangular
    traj_spacing_m: float = 1.0
    n_scatterers: int = 8
    base_snr_db: float | None = None   # per-AP estimation noise; None = noise-free
    seed: int = 0

    def validate(self):
        for attr in ("n_ap", "n_ap_ant", "n_ue_ant", "n_subc"):
            if getattr(self, attr) < 1:
                raise ValueError(f"{attr} must be a positive count")
        if self.carrier_freq_hz <= self.bandwidth_hz:
            raise ValueError("carrier frequency must exceed bandwidth")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if len(self.ap_positions) != self.n_ap:
            raise ValueError(f"need {self.n_ap} AP positions, got {len(self.ap_positions)}")
        if self.area[0] <= 0 or self.area[1] <= 0:
            raise ValueError("area sides must be positive")
        if self.traj_spacing_m <= 0:
            raise ValueError("trajectory spacing must be positive")
        if self.ap_array == "rectangular":
            if self.ap_array_shape is None:
                raise ValueError("rectangular arrays need ap_array_shape")
            rows, cols = self.ap_array_shape
            if rows * cols != self.n_ap_ant:
                raise ValueError("ap_array_shape does not multiply to n_ap_ant")
        elif self.ap_array != "linear":
            raise ValueError(f"unknown array layout {self.ap_array!r}")
        if self.n_scatterers < 0:
            raise ValueError("n_scatterers must be >= 0")
        if self.base_snr_db is not None and self.base_snr_db <= 0:
            raise ValueError("base_snr_db must be positive (or None)")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.n_ap, self.n_ap_ant, self.n_ue_ant, self.n_subc)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        d["area"] = tuple(d["area"])
        d["ap_positions"] = tuple(tuple(p) for p in d["ap_positions"])
        if d.get("ap_array_shape") is not None:
            d["ap_array_shape"] = tuple(d["ap_array_shape"])
        return cls(**d)


@dataclass
class ScenarioData:
    """Ground-truth positions, timestamps, and CSI for one scenario."""

    spec: ScenarioSpec
    positions: np.ndarray   # (N, 2) float64, meters
    timestamps: np.ndarray  # (N,) float64, sample indices
    csi: np.ndarray         # (N, A, B, U, W) complex128

    @property
    def n_samples(self) -> int:
        return self.positions.shape[0]

    def validate(self):
        n = self.n_samples
        if not (len(self.timestamps) == n and self.csi.shape[0] == n):
            raise ValueError("positions, timestamps, and CSI must have equal length")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.csi.shape[1:] != self.spec.dims:
            raise ValueError(f"CSI dims {self.csi.shape[1:]} do not match spec {self.spec.dims}")
        if not np.isfinite(self.csi).all():
            raise ValueError("CSI contains non-finite entries")


def meander_trajectory(area, spacing_m):
    """Serpentine sweep over a rectangle.

    Grid pitch equals ``spacing_m`` in both directions, rows alternate
    direction, and timestamps are the sample indices 0, 1, 2, ...

    Returns ``(positions (N, 2), timestamps (N,))``.
    """
    width, height = float(area[0]), float(area[1])
    if width <= 0 or height <= 0:
        raise ValueError("area must be nondegenerate")
    if spacing_m <= 0:
        raise ValueError("spacing must be positive")
    if spacing_m > width or spacing_m > height:
        raise ValueError(f"spacing {spacing_m} exceeds an area side {area}")
    # +1e-9 absorbs float noise when a side is an exact multiple of spacing
    nx = int(width / spacing_m + 1e-9) + 1
    ny = int(height / spacing_m + 1e-9) + 1
    xs = np.arange(nx) * spacing_m
    rows = []
    for j in range(ny):
        row_x = xs if j % 2 == 0 else xs[::-1]
        rows.append(np.column_stack([row_x, np.full(nx, j * spacing_m)]))
    positions = np.concatenate(rows, axis=0)
    timestamps = np.arange(positions.shape[0], dtype=np.float64)
    return positions, timestamps


def _array_offsets(spec: ScenarioSpec, n_elems: int, for_ue: bool) -> np.ndarray:
    """2-D element offsets (meters) of a half-wavelength array, centered."""
    lam = SPEED_OF_LIGHT / spec.carrier_freq_hz
    pitch = lam / 2.0
    if not for_ue and spec.ap_array == "rectangular":
        rows, cols = spec.ap_array_shape
        r = (np.arange(rows) - (rows - 1) / 2.0) * pitch
        c = (np.arange(cols) - (cols - 1) / 2.0) * pitch
        rr, cc = np.meshgrid(r, c, indexing="ij")
        return np.column_stack([cc.ravel(), rr.ravel()])
    # linear array along the x axis (broadside = y direction)
    idx = (np.arange(n_elems) - (n_elems - 1) / 2.0) * pitch
    return np.column_stack([idx, np.zeros(n_elems)])


def scatterer_positions(spec: ScenarioSpec) -> np.ndarray:
    """Scatterer layout for a scenario; drawn once from the spec seed."""
    rng = np.random.default_rng([spec.seed, _STREAM_SCATTER])
    pts = rng.uniform(0.0, 1.0, size=(spec.n_scatterers, 2))
    return pts * np.asarray(spec.area)


def synth_csi(spec: ScenarioSpec, ue_position, rng) -> np.ndarray:
    """Geometric multipath CSI tensor (A, B, U, W) for one UE position.

    Per AP the channel is a sum over the LoS path and single-bounce paths
    via the scenario's scatterers.  The LoS gain is 1/distance with the
    deterministic propagation phase; scattered path ``p`` (1-based) gets an
    i.i.d. circularly-symmetric Gaussian gain of power
    ``0.3 * |los|^2 * 0.6**p`` drawn from ``rng``, so the deterministic
    geometry dominates the per-sample fading the way ray-traced channels do.
    Subcarrier w sits at ``fc - bw/2 + w*bw/W`` and the array response is
    the half-wavelength steering vector toward the path's arrival direction
    (narrowband, evaluated at the carrier).
    """
    ue = np.asarray(ue_position, dtype=np.float64)
    width, height = spec.area
    if not (0 <= ue[0] <= width and 0 <= ue[1] <= height):
        raise ValueError(f"UE position {ue} outside area {spec.area}")
    scat = scatterer_positions(spec)
    n_paths = 1 + spec.n_scatterers
    a_cnt, b_cnt, u_cnt, w_cnt = spec.dims
    lam = SPEED_OF_LIGHT / spec.carrier_freq_hz
    k0 = 2.0 * np.pi / lam
    freqs = spec.carrier_freq_hz - spec.bandwidth_hz / 2.0 \
        + np.arange(w_cnt) * (spec.bandwidth_hz / w_cnt)
    ue_offsets = _array_offsets(spec, u_cnt, for_ue=True)

    out = np.empty(spec.dims, dtype=np.complex128)
    ue_to_scat = scat - ue[None, :]
    d_ue_scat = np.linalg.norm(ue_to_scat, axis=1)
    for a, ap in enumerate(spec.ap_positions):
        ap = np.asarray(ap, dtype=np.float64)
        d_los = np.linalg.norm(ue - ap)
        if d_los < 1e-9:
            raise ValueError(f"UE coincides with AP {a}")
        scat_to_ap = ap[None, :] - scat
        d_scat_ap = np.linalg.norm(scat_to_ap, axis=1)
        path_len = np.concatenate([[d_los], d_ue_scat + d_scat_ap])
        tau = path_len / SPEED_OF_LIGHT

        los_amp = 1.0 / d_los
        gains = np.empty(n_paths, dtype=np.complex128)
        gains[0] = los_amp
        if spec.n_scatterers:
            power = 0.3 * los_amp ** 2 * 0.6 ** np.arange(1, n_paths)
            raw = rng.standard_normal((2, spec.n_scatterers))
            gains[1:] = (raw[0] + 1j * raw[1]) * np.sqrt(power / 2.0)

        # arrival directions at the AP and departure directions at the UE
        to_ue = np.vstack([(ue - ap) / d_los, -scat_to_ap / d_scat_ap[:, None]])
        from_ue = np.vstack([(ap - ue) / d_los, ue_to_scat / d_ue_scat[:, None]])
        ap_offsets = _array_offsets(spec, b_cnt, for_ue=False)
        steer_ap = np.exp(1j * k0 * (ap_offsets @ to_ue.T))      # (B, P)
        steer_ue = np.exp(1j * k0 * (ue_offsets @ from_ue.T))    # (U, P)
        phase = np.exp(-2j * np.pi * np.outer(tau, freqs))       # (P, W)
        out[a] = np.einsum("p,bp,up,pw->buw", gains, steer_ap, steer_ue, phase)
        if spec.base_snr_db is not None:
            # channel-estimation noise baked into the "measured" CSI
            n0 = np.mean(np.abs(out[a]) ** 2) / 10.0 ** (spec.base_snr_db / 10.0)
            raw = rng.standard_normal((2, b_cnt, u_cnt, w_cnt))
            out[a] += (raw[0] + 1j * raw[1]) * np.sqrt(n0 / 2.0)
    return out


def sample_rng(spec: ScenarioSpec, sample_index: int):
    """Small-scale fading stream for one trajectory sample."""
    return np.random.default_rng([spec.seed, _STREAM_SAMPLE, sample_index])


def generate_scenario(spec: ScenarioSpec) -> ScenarioData:
    """Full scenario: serpentine trajectory plus CSI at every point.

    Each sample uses its own RNG stream keyed by (seed, index), so parallel
    and sequential generation produce identical data.
    """
    spec.validate()
    positions, timestamps = meander_trajectory(spec.area, spec.traj_spacing_m)
    n = positions.shape[0]
    csi = np.empty((n,) + spec.dims, dtype=np.complex128)
    for i in range(n):
        csi[i] = synth_csi(spec, positions[i], sample_rng(spec, i))
    data = ScenarioData(spec, positions, timestamps, csi)
    data.validate()
    return data


# --- binary container ------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIIIQ")


def _write_container(path, payload_kind, dims, positions, timestamps, values):
    path = Path(path)
    n = positions.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, payload_kind, *dims, n))
        fh.write(np.ascontiguousarray(positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(timestamps, dtype="<f8").tobytes())
        fh.write(values.tobytes())


def _read_container(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated container")
    magic, version, payload, *dims, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    positions = np.frombuffer(raw, "<f8", count=2 * n, offset=off).reshape(n, 2).copy()
    off += 16 * n
    timestamps = np.frombuffer(raw, "<f8", count=n, offset=off).copy()
    off += 8 * n
    per_sample = dims[0] * dims[1] * dims[2] * dims[3]
    if payload == PAYLOAD_CSI:
        flat = np.frombuffer(raw, "<f8", count=2 * n * per_sample, offset=off)
        values = (flat[0::2] + 1j * flat[1::2]).reshape((n,) + tuple(dims))
    elif payload == PAYLOAD_FEATURES:
        values = np.frombuffer(raw, "<f8", count=n * per_sample, offset=off) \
            .reshape(n, per_sample).copy()
    else:
        raise ValueError(f"{path}: unknown payload kind {payload}")
    return payload, tuple(dims), positions, timestamps, values


def save_scenario(data: ScenarioData, path) -> None:
    """Write a scenario container plus its JSON spec sidecar."""
    data.validate()
    interleaved = np.empty(data.csi.size * 2, dtype="<f8")
    flat = data.csi.reshape(-1)
    interleaved[0::2] = flat.real
    interleaved[1::2] = flat.imag
    _write_container(path, PAYLOAD_CSI, data.spec.dims,
                     data.positions, data.timestamps, interleaved)
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(data.spec.to_dict(), indent=2, sort_keys=True) + "\n")


def load_scenario(path) -> ScenarioData:
    payload, dims, positions, timestamps, values = _read_container(path)
    if payload != PAYLOAD_CSI:
        raise ValueError(f"{path}: not a CSI scenario container")
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise ValueError(f"{path}: missing spec sidecar {sidecar}")
    spec = ScenarioSpec.from_dict(json.loads(sidecar.read_text()))
    if dims != spec.dims:
        raise ValueError(f"{path}: container dims {dims} disagree with sidecar {spec.dims}")
    data = ScenarioData(spec, positions, timestamps, values.astype(np.complex128))
    data.validate()
    return data


def save_features(path, positions, timestamps, features) -> None:
    """Dump a feature matrix (N, D) with its positions/timestamps."""
    features = np.ascontiguousarray(features, dtype="<f8")
    _write_container(path, PAYLOAD_FEATURES, (1, 1, 1, features.shape[1]),
                     positions, timestamps, features.reshape(-1))


def load_features(path):
    payload, dims, positions, timestamps, values = _read_container(path)
    if payload != PAYLOAD_FEATURES:
        raise ValueError(f"{path}: not a feature container")
    return positions, timestamps, values


# --- default desk-scale suite ----------------------------------------------

def default_specs(seed: int = 0) -> list[ScenarioSpec]:
    """The three reduced-scale scenario shapes used throughout the tests.

    Shapes mirror an urban outdoor deployment, a dense indoor office, and a
    factory hall with rectangular arrays; subcarrier counts and areas are
    reduced so a full pipeline run stays in desk-scale minutes.  All three
    carry 18 dB estimation noise, the way measured CSI does.
    """
    outdoor = ScenarioSpec(
        scenario_id=1, name="outdoor-like",
        n_ap=6, n_ap_ant=4, n_ue_ant=1, n_subc=300,
        carrier_freq_hz=1.9e9, bandwidth_hz=20e6,
        area=(40.0, 60.0),
        ap_positions=((-4.1, -3.3), (44.7, -2.2), (-3.6, 31.4),
                      (44.2, 29.8), (-2.9, 63.1), (43.8, 62.4)),
        ap_array="linear", traj_spacing_m=2.0, n_scatterers=8,
        base_snr_db=18.0, seed=seed * 1000 + 1,
    )
    indoor = ScenarioSpec(
        scenario_id=2, name="indoor-like",
        n_ap=8, n_ap_ant=4, n_ue_ant=1, n_subc=64,
        carrier_freq_hz=2.4e9, bandwidth_hz=20e6,
        area=(6.0, 8.0),
        ap_positions=((0.33, 0.47), (5.61, 0.52), (0.28, 7.55), (5.72, 7.48),
                      (3.04, 0.21), (3.11, 7.77), (0.22, 4.04), (5.78, 3.96)),
        ap_array="linear", traj_spacing_m=0.1, n_scatterers=8,
        base_snr_db=18.0, seed=seed * 1000 + 2,
    )
    factory = ScenarioSpec(
        scenario_id=3, name="factory-like",
        n_ap=4, n_ap_ant=8, n_ue_ant=1, n_subc=256,
        carrier_freq_hz=1.272e9, bandwidth_hz=50e6,
        area=(10.0, 16.0),
        ap_positions=((-1.2, -0.8), (11.3, -0.9), (-1.1, 16.8), (11.2, 16.9)),
        ap_array="rectangular", ap_array_shape=(2, 4),
        traj_spacing_m=0.4, n_scatterers=8,
        base_snr_db=18.0, seed=seed * 1000 + 3,
    )
    return [outdoor, indoor, factory]
