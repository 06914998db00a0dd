"""Diagonal linear (Koopman-style) surrogate and the block-rollout driver.

The model is

    x_0 = E s_0,   x_{k+1} = diag(lambda) x_k,   s_k = Re(P x_k),

with a linear encoder E, diagonal complex dynamics stored in clipped polar
form lambda_i = r_i exp(i theta_i), r_i in [0, 1], and a linear decoder P.
``fit_diag_lti`` obtains all three from snapshot pairs with exact DMD.
"""

from dataclasses import dataclass, field
import hashlib
import json
from pathlib import Path
import struct
from typing import Protocol
import warnings

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    FormatError,
    PairingError,
    PredictorError,
    ShapeError,
    TruncatedPayloadError,
)
from .fileformat import canonical_json, read_trajectory
from .plate import FieldSnapshot
from .solver import DEFAULT_OVERSAMPLE, Trajectory, frames_from_modal, integrate_modal, project_snapshot

MODEL_MAGIC = b"PLDIAG01"
MODEL_VERSION = 1


# --- scan kernel -------------------------------------------------------------


def linear_recurrence_scan(a, b):
    """Inclusive scan of h_k = a_k * h_{k-1} + b_k (h_{-1} = 0) along axis 0.

    Hillis-Steele doubling over the associative operator
    (a1, b1) . (a2, b2) = (a2 a1, a2 b1 + b2): log2(L) vectorised passes.
    """
    a = np.array(a, copy=True)
    b = np.array(np.broadcast_to(b, a.shape), copy=True)
    L = a.shape[0]
    offset = 1
    while offset < L:
        b_new = a[offset:] * b[:-offset] + b[offset:]
        a_new = a[offset:] * a[:-offset]
        b[offset:] = b_new
        a[offset:] = a_new
        offset *= 2
    return b


def clip_polar(radius, theta):
    """Radii projected onto [0, 1], angles wrapped to (-pi, pi]."""
    radius = np.clip(np.asarray(radius, dtype=np.float64), 0.0, 1.0)
    theta = np.pi - np.mod(np.pi - np.asarray(theta, dtype=np.float64), 2.0 * np.pi)
    return radius, theta


# --- model --------------------------------------------------------------------


@dataclass(eq=False)
class DiagLTIModel:
    encoder: np.ndarray  # (M_lat, N_flat) complex
    radius: np.ndarray
    theta: np.ndarray
    decoder: np.ndarray  # (N_flat, M_lat) complex, real part taken on output
    grid_shape: tuple
    sub_step: int = 1
    normalization: dict = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.encoder = np.ascontiguousarray(self.encoder, dtype=np.complex128)
        self.decoder = np.ascontiguousarray(self.decoder, dtype=np.complex128)
        self.radius, self.theta = clip_polar(self.radius, self.theta)
        self.grid_shape = tuple(self.grid_shape)
        M = self.radius.size
        N = self.grid_shape[0] * self.grid_shape[1] * 2
        if self.encoder.shape != (M, N) or self.decoder.shape != (N, M) or self.theta.size != M:
            raise ShapeError(
                f"inconsistent model shapes: encoder {self.encoder.shape}, decoder {self.decoder.shape}, "
                f"{M} eigenvalues, grid {self.grid_shape}"
            )
        self._decoder_real = np.ascontiguousarray(np.hstack([self.decoder.real, -self.decoder.imag]))

    @property
    def latent_dim(self):
        return self.radius.size

    @property
    def n_flat(self):
        return self.encoder.shape[1]

    @property
    def eigenvalues(self):
        return self.radius * np.exp(1j * self.theta)

    def set_eigenvalues(self, radius, theta):
        self.radius, self.theta = clip_polar(radius, theta)

    def _flatten(self, snapshot):
        a = snapshot.to_array() if isinstance(snapshot, FieldSnapshot) else np.asarray(snapshot, dtype=np.float64)
        if a.shape != (*self.grid_shape, 2):
            raise ShapeError(f"snapshot shape {a.shape} does not match model grid {(*self.grid_shape, 2)}")
        return a.reshape(-1)

    def encode(self, snapshot):
        return self.encoder @ self._flatten(snapshot)

    def decode(self, latents):
        """Real grid snapshots (..., Ny, Nx, 2) from latents (..., M_lat)."""
        z = np.asarray(latents)
        lead = z.shape[:-1]
        z = z.reshape(-1, self.latent_dim)
        stacked = np.concatenate([z.real, z.imag], axis=1)
        out = stacked @ self._decoder_real.T
        return out.reshape(*lead, *self.grid_shape, 2)

    def decode_complex(self, latents):
        z = np.asarray(latents).reshape(-1, self.latent_dim)
        return (z @ self.decoder.T).reshape(*np.shape(latents)[:-1], *self.grid_shape, 2)

    def predict(self, snapshot, L):
        return predict_block(self, snapshot, L)

    def eigen_digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.radius, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.theta, dtype="<f8").tobytes())
        return h.hexdigest()


def lti_rollout_scan(model, x0, L):
    """Latent states x_1..x_L (shape (L, M_lat)) via the parallel scan."""
    if L < 1:
        raise ValueError(f"L must be at least 1, got {L}")
    lam = model.eigenvalues if isinstance(model, DiagLTIModel) else np.asarray(model, dtype=np.complex128)
    x0 = np.asarray(x0, dtype=np.complex128)
    a = np.broadcast_to(lam, (L, lam.size))
    b = np.zeros((L, lam.size), dtype=np.complex128)
    b[0] = lam * x0
    return linear_recurrence_scan(a, b)


def lti_rollout_sequential(model, x0, L):
    """Reference loop for ``lti_rollout_scan``."""
    lam = model.eigenvalues if isinstance(model, DiagLTIModel) else np.asarray(model, dtype=np.complex128)
    x = np.asarray(x0, dtype=np.complex128)
    out = np.empty((L, lam.size), dtype=np.complex128)
    for k in range(L):
        x = lam * x
        out[k] = x
    return out


def predict_block(model, snapshot, L):
    """Encode one normalised snapshot, roll the latent L steps, decode each state."""
    x0 = model.encode(snapshot)
    return model.decode(lti_rollout_scan(model, x0, L))


def _as_array(traj):
    if isinstance(traj, Trajectory):
        return np.asarray(traj.data, dtype=np.float64)
    return np.asarray(traj, dtype=np.float64)


def fit_diag_lti(train_trajectories, rank, sub_step=1, pair_stride=1, normalization=None):
    """Exact DMD on (frame k, frame k + sub_step) pairs of normalised trajectories.

    X = U S V*, A~ = U* X' V S^-1 = W diag(lambda) W^-1, encoder W^-1 U*,
    decoder U W. ``pair_stride`` keeps every n-th pair to bound memory.
    """
    if sub_step < 1 or pair_stride < 1:
        raise ConfigurationError("sub_step and pair_stride must be positive")
    xs, ys = [], []
    grid = None
    for traj in train_trajectories:
        data = _as_array(traj)
        if grid is None:
            grid = data.shape[1:3]
        elif data.shape[1:3] != grid:
            raise ShapeError(f"trajectory grid {data.shape[1:3]} differs from {grid}")
        T = data.shape[0]
        idx = np.arange(0, T - sub_step, pair_stride)
        flat = data.reshape(T, -1)
        xs.append(flat[idx].T)
        ys.append(flat[idx + sub_step].T)
    if not xs:
        raise ConfigurationError("no training trajectories")
    X = np.hstack(xs)
    Y = np.hstack(ys)
    del xs, ys
    N, P = X.shape
    if rank < 1 or rank > min(N, P):
        raise ConfigurationError(f"rank {rank} exceeds the data rank bound min(N_flat={N}, pairs={P})")
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    keep = int(np.sum(s[:rank] > 1e-12 * s[0]))
    if keep < rank:
        warnings.warn(f"truncating rank {rank} to {keep}: singular values below 1e-12 * sigma_1", RuntimeWarning)
    Ur = U[:, :keep]
    Atilde = ((Ur.T @ Y) @ Vh[:keep].T) / s[:keep]
    lam, W = np.linalg.eig(Atilde)
    order = np.lexsort((lam.imag, -np.abs(lam)))
    lam = lam[order]
    W = W[:, order]
    encoder = np.linalg.solve(W, Ur.T.astype(np.complex128))
    decoder = Ur @ W
    model = DiagLTIModel(
        encoder=encoder,
        radius=np.abs(lam),
        theta=np.angle(lam),
        decoder=decoder,
        grid_shape=grid,
        sub_step=sub_step,
        normalization=normalization,
        meta={
            "fit": "exact-dmd",
            "rank": keep,
            "pairs": int(P),
            "pair_stride": int(pair_stride),
            "max_raw_radius": float(np.abs(lam).max()),
            "singular_values_head": s[: min(8, s.size)].tolist(),
        },
    )
    return model


# --- model files --------------------------------------------------------------


def save_model(model, path, extra=None):
    """Write a model file; returns the SHA-256 of its bytes."""
    header = {
        "version": MODEL_VERSION,
        "M_lat": model.latent_dim,
        "N_flat": model.n_flat,
        "grid": list(model.grid_shape),
        "sub_step": model.sub_step,
        "normalization": model.normalization,
        "eigen_sha256": model.eigen_digest(),
        "radius_max": float(model.radius.max()) if model.radius.size else 0.0,
        "meta": {**model.meta, **(extra or {})},
    }
    raw = canonical_json(header).encode("utf-8")
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        for chunk in (
            MODEL_MAGIC,
            struct.pack("<I", len(raw)),
            raw,
            np.ascontiguousarray(model.encoder, dtype="<c16").tobytes(),
            np.ascontiguousarray(model.radius, dtype="<f8").tobytes(),
            np.ascontiguousarray(model.theta, dtype="<f8").tobytes(),
            np.ascontiguousarray(model.decoder, dtype="<c16").tobytes(),
        ):
            fh.write(chunk)
            digest.update(chunk)
    return digest.hexdigest()


def load_model(path):
    blob = Path(path).read_bytes()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a diagonal-LTI model file")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    if header.get("version") != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {header.get('version')!r}")
    M, N = header["M_lat"], header["N_flat"]
    sizes = [M * N * 16, M * 8, M * 8, N * M * 16]
    off = 12 + hlen
    if len(blob) - off != sum(sizes):
        raise TruncatedPayloadError(f"{path}: payload has {len(blob) - off} bytes, header implies {sum(sizes)}")
    parts = []
    for size in sizes:
        parts.append(blob[off : off + size])
        off += size
    model = DiagLTIModel(
        encoder=np.frombuffer(parts[0], dtype="<c16").reshape(M, N),
        radius=np.frombuffer(parts[1], dtype="<f8"),
        theta=np.frombuffer(parts[2], dtype="<f8"),
        decoder=np.frombuffer(parts[3], dtype="<c16").reshape(N, M),
        grid_shape=tuple(header["grid"]),
        sub_step=header["sub_step"],
        normalization=header["normalization"],
        meta=header["meta"],
    )
    if model.eigen_digest() != header["eigen_sha256"]:
        raise FormatError(f"{path}: eigenvalue digest mismatch")
    return model


# --- predictors and rollout ---------------------------------------------------


class Predictor(Protocol):
    """Anything that maps one normalised (Ny, Nx, 2) snapshot to the next L snapshots."""

    def predict(self, snapshot: np.ndarray, L: int) -> np.ndarray: ...


class SolverPredictor:
    """The reference solver behind the Predictor interface.

    Works on normalised snapshots when ``stats`` is given. The modal state of
    the last emitted frame is cached, so feeding that frame back resumes the
    integration exactly instead of re-projecting it.
    """

    def __init__(self, params, basis, oversample=DEFAULT_OVERSAMPLE, stats=None):
        self.params = params
        self.basis = basis
        self.oversample = oversample
        self.scales = None if stats is None else stats.scales
        self._cache_key = None
        self._cache_state = None

    def predict(self, snapshot, L):
        a = snapshot.to_array() if isinstance(snapshot, FieldSnapshot) else np.asarray(snapshot, dtype=np.float64)
        key = a.tobytes()
        if key == self._cache_key:
            state = self._cache_state
        else:
            phys = a if self.scales is None else a * self.scales
            state = project_snapshot(phys, self.basis)
        U, V = integrate_modal(state, L + 1, self.basis, self.params, self.oversample)
        out = frames_from_modal(U[1:], V[1:], self.basis)
        if self.scales is not None:
            out = out / self.scales
        self._cache_key = out[-1].tobytes()
        self._cache_state = type(state)(U[-1], V[-1])
        return out


def _call_predictor(predictor, snapshot, L):
    fn = predictor.predict if hasattr(predictor, "predict") else predictor
    return np.asarray(fn(snapshot, L))


def autoregressive_rollout(predictor, initial, block_len, total_steps, fs=16000.0):
    """Feed each block's last frame back as the next input until ``total_steps`` frames exist.

    The returned trajectory holds the predicted frames only (times 1..T after
    ``initial``); block start offsets are recorded in ``meta['block_starts']``.
    """
    if not total_steps >= block_len >= 1:
        raise ValueError(f"need total_steps >= block_len >= 1, got T={total_steps}, L={block_len}")
    current = initial.to_array() if isinstance(initial, FieldSnapshot) else np.asarray(initial, dtype=np.float64)
    blocks, starts = [], []
    produced = 0
    while produced < total_steps:
        try:
            block = _call_predictor(predictor, current, block_len)
            if block.shape != (block_len, *current.shape):
                raise ShapeError(f"predictor returned {block.shape}, expected {(block_len, *current.shape)}")
        except Exception as exc:
            partial = None
            if blocks:
                partial = Trajectory(
                    data=np.concatenate(blocks)[:total_steps], fs=fs,
                    meta={"kind": "prediction", "partial": True, "block_len": block_len, "block_starts": starts},
                )
            raise PredictorError(f"predictor failed on call {len(blocks) + 1}: {exc}", partial=partial) from exc
        starts.append(produced)
        blocks.append(block)
        produced += block_len
        current = block[-1]
    data = np.concatenate(blocks)[:total_steps]
    meta = {
        "kind": "prediction",
        "partial": False,
        "block_len": int(block_len),
        "block_starts": starts,
        "calls": len(blocks),
    }
    return Trajectory(data=data, fs=fs, meta=meta)


@dataclass
class PredictionPair:
    prediction: Trajectory
    truth_path: Path
    trajectory_id: int
    start_index: int

    def truth(self, frames=None):
        """Ground-truth frames aligned with the prediction (start+1 .. start+T)."""
        T = len(self.prediction)
        sl = slice(self.start_index + 1, self.start_index + 1 + T)
        return read_trajectory(self.truth_path, frames=sl)


def load_external_predictions(path, manifest):
    """Read a PLT1 prediction file and pair it with its ground truth via ``trajectory_id``."""
    pred = read_trajectory(path)
    meta = pred.meta
    if meta.get("kind") != "prediction":
        raise PairingError(f"{path}: not tagged as a prediction (kind={meta.get('kind')!r})")
    tid = meta.get("trajectory_id")
    if tid is None:
        raise PairingError(f"{path}: prediction carries no trajectory_id")
    try:
        entry = manifest.entry_for(tid)
    except KeyError:
        raise PairingError(f"{path}: trajectory_id {tid} not in the dataset manifest") from None
    truth_path = manifest.root / entry["path"]
    header = read_trajectory(truth_path, frames=slice(0, 1))
    if header.grid_shape != pred.grid_shape:
        raise DimensionMismatchError(f"{path}: grid {pred.grid_shape} does not match truth grid {header.grid_shape}")
    start = int(meta.get("start_index", 0))
    if start + 1 + len(pred) > manifest.frames:
        raise DimensionMismatchError(
            f"{path}: {len(pred)} frames from start {start} run past the {manifest.frames}-frame truth"
        )
    pred.meta["kind"] = "prediction"
    return PredictionPair(pred, truth_path, int(tid), start)
