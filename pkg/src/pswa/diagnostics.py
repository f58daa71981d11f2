"""Measurement tools: attention distance, Fourier profiles, FLOPs.

These exist to answer the questions the package was built around: how
far does attention actually reach, how much high-frequency content do
feature maps carry, and what does each component cost?  Everything here
is numpy-only and forward-only; nothing records gradients.

Conventions, fixed once and used everywhere:

* Attention distance: for a map A over N = H*W row-major tokens on a
  grid of width W, token i sits at row i // W, column i - W*(i // W).
  The row distance is sum_ij A_ij * |row_j - row_i| / sum_ij A_ij, and
  likewise for columns.  Rows of a softmax map each sum to one, so this
  equals the per-query average; the form above also tolerates
  unnormalized maps.  Negative entries are rejected, zero total mass is
  degenerate.

* Radial spectrum: fft2 -> fftshift -> log1p(|.|), then the mean of
  that magnitude over 16 annular bins of normalized frequency radius.
  With fy = (i - H//2)/H and fx = (j - W//2)/W the radius sqrt(fy^2 +
  fx^2) spans [0, sqrt(0.5)]; bins are equal-width over that range,
  lower edge inclusive, and the Nyquist corner lands in the last bin.
  Empty bins report 0.

* FLOPs: one multiply-accumulate = 2 FLOPs; only matmuls and the two
  conv kernels count (softmax, norms, elementwise and gathers are
  free).  Reports cover one full forward pass at batch 1, including the
  patch embedding, timestep MLP, modulation projections, and output
  head, so the closed-form total must equal the instrumented counter
  exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .diffusion import NoiseSchedule, q_sample
from .errors import ConfigurationError, DegenerateMapError, DimensionError
from .model import ToyDiT, ToyDiTConfig
from .numerics import Rng, Tensor, no_grad
from .numerics.flops import count_flops

SPECTRUM_BINS = 16


# ---------------------------------------------------------------------------
# attention distance
# ---------------------------------------------------------------------------

def attention_distance(attn_map, grid_width: int) -> tuple:
    """Mass-weighted mean (row, col) distance of an [N, N] attention map.

    ``grid_width`` is the token-grid width the flat indices refer to.
    """
    a = attn_map.data if isinstance(attn_map, Tensor) else np.asarray(attn_map, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"attention map must be square [N, N], got {a.shape}")
    n = a.shape[0]
    if grid_width < 1 or n % grid_width:
        raise ConfigurationError(f"token count {n} not divisible by grid width {grid_width}")
    if (a < 0).any():
        raise DimensionError("attention map has negative entries")
    total = a.sum()
    if total <= 0.0:
        raise DegenerateMapError("attention map has zero total mass")
    rows = np.arange(n) // grid_width
    cols = np.arange(n) - grid_width * rows
    d_row = float((a * np.abs(rows[None, :] - rows[:, None])).sum() / total)
    d_col = float((a * np.abs(cols[None, :] - cols[:, None])).sum() / total)
    return d_row, d_col


@dataclass(frozen=True)
class SurveyRecord:
    layer: int
    head: int
    timestep: int
    d_row: float
    d_col: float


def distance_survey(model: ToyDiT, images: np.ndarray, schedule: NoiseSchedule, rng: Rng, num_samples: int = 64) -> list:
    """Sample attention distances uniformly over (layer, head, timestep).

    Protocol: draw ``num_samples`` triples uniformly with replacement
    from the product of layers that have a window branch, their heads,
    and schedule timesteps.  For each distinct timestep, corrupt the
    fixed ``images`` batch once (noise from a stream named after t) and
    run one forward pass; each record then averages the per-window
    attention distances of its (layer, head) over every window and
    batch element.  Everything is pinned by ``rng``, so a seed
    reproduces the survey exactly.
    """
    if num_samples < 1:
        raise ConfigurationError("num_samples must be >= 1")
    eligible = [
        (l, h)
        for l, cfg_l in enumerate(model.layer_configs)
        if cfg_l.window_channels
        for h in range(cfg_l.window_spec.num_heads)
    ]
    if not eligible:
        raise ConfigurationError("no layer has a window branch to survey")
    pick = rng.split("survey-picks")
    triples = [
        (*eligible[int(pick.integers(0, len(eligible)))], int(pick.integers(0, schedule.timesteps)))
        for _ in range(num_samples)
    ]

    maps_by_t: dict[int, list] = {}
    noise_rng = rng.split("survey-noise")
    for t in sorted({t for (_, _, t) in triples}):
        noise = noise_rng.split(t).normal(images.shape)
        x_t = q_sample(images, t, noise, schedule)
        collected: list = []
        with no_grad():
            model.forward(Tensor(x_t), np.full(images.shape[0], t, dtype=np.int64), collect_maps=collected)
        maps_by_t[t] = collected

    records = []
    for layer, head, t in triples:
        maps = maps_by_t[t][layer]  # [B*nW, heads, wn, wn]
        width = model.layer_configs[layer].window_spec.window_w
        per_window = [attention_distance(maps.data[g, head], width) for g in range(maps.shape[0])]
        d_row = float(np.mean([d[0] for d in per_window]))
        d_col = float(np.mean([d[1] for d in per_window]))
        records.append(SurveyRecord(layer, head, t, d_row, d_col))
    return records


def distance_histogram(values: Sequence[float], buckets: int = 16, lo: float = 0.0, hi: Optional[float] = None) -> list:
    """Equal-width histogram rows (bucket_lo, bucket_hi, count).

    The top edge is inclusive so the maximum lands in the last bucket.
    """
    vals = np.asarray(list(values), dtype=np.float64)
    if buckets < 1:
        raise ConfigurationError("buckets must be >= 1")
    if hi is None:
        hi = float(vals.max()) if vals.size else 1.0
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, buckets + 1)
    idx = np.clip(np.searchsorted(edges, vals, side="right") - 1, 0, buckets - 1)
    counts = np.bincount(idx, minlength=buckets)
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(buckets)]


def write_distance_csv(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket_lo", "bucket_hi", "count"])
        for lo, hi, count in rows:
            w.writerow([repr(lo), repr(hi), count])
    return path


# ---------------------------------------------------------------------------
# radial spectrum
# ---------------------------------------------------------------------------

def _radial_bins(height: int, width: int):
    fy = (np.arange(height) - height // 2) / height
    fx = (np.arange(width) - width // 2) / width
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    edges = np.linspace(0.0, np.sqrt(0.5), SPECTRUM_BINS + 1)
    idx = np.clip(np.searchsorted(edges, r.reshape(-1), side="right") - 1, 0, SPECTRUM_BINS - 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return idx, centers


def radial_spectrum(feature_map) -> tuple:
    """Radially binned log-magnitude spectrum of a single [H, W] map.

    Returns (radii [16], profile [16]): bin centers in normalized
    frequency and the mean log1p magnitude per annulus.
    """
    m = feature_map.data if isinstance(feature_map, Tensor) else np.asarray(feature_map, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"radial_spectrum expects [H, W], got {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError("empty feature map")
    mag = np.log1p(np.abs(np.fft.fftshift(np.fft.fft2(m))))
    idx, centers = _radial_bins(*m.shape)
    flat = mag.reshape(-1)
    sums = np.bincount(idx, weights=flat, minlength=SPECTRUM_BINS)
    counts = np.bincount(idx, minlength=SPECTRUM_BINS)
    profile = np.divide(sums, counts, out=np.zeros(SPECTRUM_BINS), where=counts > 0)
    return centers, profile


def feature_spectrum(features) -> tuple:
    """Average radial profile over batch/channel slices.

    Accepts [H, W], [H, W, C], or [B, H, W, C]; every 2-D slice is
    profiled independently and the profiles are averaged.
    """
    data = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if data.ndim == 2:
        data = data[None, :, :, None]
    elif data.ndim == 3:
        data = data[None]
    if data.ndim != 4:
        raise DimensionError(f"feature_spectrum expects rank 2..4, got {data.shape}")
    profiles = []
    centers = None
    for b in range(data.shape[0]):
        for c in range(data.shape[3]):
            centers, profile = radial_spectrum(data[b, :, :, c])
            profiles.append(profile)
    return centers, np.mean(profiles, axis=0)


def hf_band_fraction(profile, outer_bins: int = SPECTRUM_BINS // 2) -> float:
    """Share of profile mass in the outermost ``outer_bins`` annuli."""
    p = np.asarray(profile, dtype=np.float64)
    if p.ndim != 1 or p.size < outer_bins:
        raise DimensionError(f"profile of {p.shape} too short for {outer_bins} outer bins")
    total = p.sum()
    if total <= 0:
        raise DegenerateMapError("spectrum profile has no mass")
    return float(p[-outer_bins:].sum() / total)


def write_spectrum_csv(path, radii, profile) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["radius", "log_magnitude"])
        for r, v in zip(radii, profile):
            w.writerow([repr(float(r)), repr(float(v))])
    return path


# ---------------------------------------------------------------------------
# FLOPs accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlopsRow:
    component: str
    flops: int
    params: int


@dataclass
class FlopsReport:
    rows: list
    conventions: str

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    def by_component(self) -> dict:
        return {r.component: r for r in self.rows}


_CONVENTIONS = (
    "one forward pass, batch 1; 1 MAC = 2 FLOPs; "
    "matmul and conv kernels only (softmax, norms, elementwise, gathers are free)"
)


def flops_report(cfg: ToyDiTConfig) -> FlopsReport:
    """Closed-form cost model for one batch-1 forward pass.

    Component rows per block: the q/k/v/out projections, the attention
    pair terms (logits and value mixing, the only terms quadratic in
    window size), the bridge depthwise and pointwise convs, the MLP,
    and the per-sample modulation projection.  Patch embedding,
    timestep MLP, and the output head are listed separately.  The total
    equals what the instrumented counter reports for the same config.
    """
    n = cfg.tokens
    d = cfg.d_model
    hidden = int(round(d * cfg.mlp_ratio))
    wh, ww = cfg.window
    win_tokens = wh * ww
    k = 2 * cfg.order - 1
    schedule = cfg.build_schedule()

    rows = [
        FlopsRow("patch_embed", 2 * n * cfg.patch_dim * d, cfg.patch_dim * d + d),
        FlopsRow("t_embed", 2 * (2 * d * d), 2 * (d * d + d)),
    ]
    if cfg.class_count:
        rows.append(FlopsRow("class_embed", 0, cfg.class_count * d))
    for l in range(cfg.depth):
        h_l = schedule.window_channels[l]
        c_b = d - h_l
        heads_l = h_l // cfg.head_dim
        bias_params = heads_l * (2 * wh - 1) * (2 * ww - 1)
        rows.append(FlopsRow(f"block{l}.projection", 8 * n * h_l * h_l, 4 * h_l * h_l))
        rows.append(FlopsRow(f"block{l}.window_pairs", 4 * n * win_tokens * h_l, bias_params))
        rows.append(FlopsRow(f"block{l}.bridge_depthwise", 2 * n * k * k * c_b, c_b * k * k))
        rows.append(FlopsRow(f"block{l}.bridge_pointwise", 2 * n * c_b * c_b, c_b * c_b + c_b))
        rows.append(FlopsRow(f"block{l}.mlp", 4 * n * d * hidden, 2 * d * hidden + hidden + d))
        rows.append(FlopsRow(f"block{l}.modulation", 2 * d * 6 * d, 6 * d * d + 6 * d))
    rows.append(FlopsRow("head", 2 * n * d * cfg.patch_dim, d * cfg.patch_dim + cfg.patch_dim))
    return FlopsReport(rows=rows, conventions=_CONVENTIONS)


def attention_pair_flops(tokens: int, window_tokens: int, channels: int) -> int:
    """Closed-form pair-interaction cost: 4 * N * w * C FLOPs.

    ``window_tokens`` = N recovers dense attention, so the dense/window
    ratio is exactly N / w.
    """
    return 4 * tokens * window_tokens * channels


def measured_flops(model: ToyDiT, labels=None) -> int:
    """Run one batch-1 forward under the instrumented counter."""
    cfg = model.cfg
    x = np.zeros((1, cfg.image_channels, cfg.image_h, cfg.image_w))
    if cfg.class_count and labels is None:
        labels = np.zeros(1, dtype=np.int64)
    with no_grad(), count_flops() as counter:
        model.forward(Tensor(x), np.zeros(1, dtype=np.int64), labels)
    return counter.total


def write_flops_csv(path, report: FlopsReport) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {report.conventions}\n")
        w = csv.writer(fh)
        w.writerow(["component", "flops", "params"])
        for row in report.rows:
            w.writerow([row.component, row.flops, row.params])
        w.writerow(["total", report.total_flops, report.total_params])
    return path
