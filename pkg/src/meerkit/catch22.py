"""Native catch24 time-series features: the 22 canonical characteristics
plus mean and standard deviation.

Semantics follow the published catch22 reference implementation: the 22
characteristics are computed on the z-scored series (sample std, n-1), the
mean/std pair on the raw series. Features that come out NaN or infinite on
degenerate input (e.g. constant series) are mapped to 0 so downstream
consumers always see finite vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

FEATURE_NAMES = [
    "DN_HistogramMode_5",
    "DN_HistogramMode_10",
    "CO_f1ecac",
    "CO_FirstMin_ac",
    "CO_HistogramAMI_even_2_5",
    "CO_trev_1_num",
    "MD_hrv_classic_pnn40",
    "SB_BinaryStats_mean_longstretch1",
    "SB_TransitionMatrix_3ac_sumdiagcov",
    "PD_PeriodicityWang_th0_01",
    "CO_Embed2_Dist_tau_d_expfit_meandiff",
    "IN_AutoMutualInfoStats_40_gaussian_fmmi",
    "FC_LocalSimple_mean1_tauresrat",
    "DN_OutlierInclude_p_001_mdrmd",
    "DN_OutlierInclude_n_001_mdrmd",
    "SP_Summaries_welch_rect_area_5_1",
    "SB_BinaryStats_diff_longstretch0",
    "SB_MotifThree_quantile_hh",
    "SC_FluctAnal_2_rsrangefit_50_1_logi_prop_r1",
    "SC_FluctAnal_2_dfa_50_1_2_logi_prop_r1",
    "SP_Summaries_welch_rect_centroid",
    "FC_LocalSimple_mean3_stderr",
    "DN_Mean",
    "DN_Spread_Std",
]

MIN_SERIES_LENGTH = 40


@dataclass(frozen=True)
class Catch24Vector:
    values: np.ndarray
    names: tuple[str, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def feature_names() -> list[str]:
    """The 24 output column names, in canonical order."""
    return list(FEATURE_NAMES)


def compute_catch24(series) -> Catch24Vector:
    """Compute the 24-value feature vector for one series (length >= 40)."""
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if y.size < MIN_SERIES_LENGTH:
        raise ValueError(
            f"series too short for catch24: {y.size} < {MIN_SERIES_LENGTH} samples"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")

    raw_mean = float(np.mean(y))
    raw_std = float(np.std(y, ddof=1))

    with np.errstate(all="ignore"):
        z = (y - raw_mean) / raw_std
        values = np.array(_characteristics(z) + [raw_mean, raw_std])
    values[~np.isfinite(values)] = 0.0
    return Catch24Vector(values, tuple(FEATURE_NAMES))


def _characteristics(z: np.ndarray) -> list[float]:
    if not np.all(np.isfinite(z)):  # constant input z-scores to NaN
        return [np.nan] * 22
    ac = _autocorr_fft(z)
    acfz = _first_zero(ac, z.size)
    return [
        _histogram_mode(z, 5),
        _histogram_mode(z, 10),
        _f1ecac(ac),
        _first_min_ac(ac),
        _histogram_ami_even(z, tau=2, n_bins=5),
        _trev_1_num(z),
        _hrv_pnn(z, threshold=40),
        _longstretch_above_mean(z),
        _transition_matrix_sumdiagcov(z, acfz),
        _periodicity_wang(z),
        _embed2_dist_expfit_meandiff(z, acfz),
        _auto_mutual_info_first_min(z),
        _local_mean_tauresrat(z, acfz, train_length=1),
        _outlier_include_mdrmd(z, sign=1.0),
        _outlier_include_mdrmd(z, sign=-1.0),
        _welch_area_5_1(z),
        _longstretch_decreasing(z),
        _motif_three_entropy(z),
        _fluct_anal_prop_r1(z, lag=1, how="rsrangefit"),
        _fluct_anal_prop_r1(z, lag=2, how="dfa"),
        _welch_centroid(z),
        _local_mean_stderr(z, train_length=3),
    ]


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _autocorr_fft(y: np.ndarray) -> np.ndarray:
    """Full autocorrelation function, normalized at lag 0 (FFT method)."""
    n = y.size
    nfft = 1 << (int(n - 1).bit_length() + 1)
    f = np.fft.fft(y - np.mean(y), nfft)
    acov = np.fft.fft(f * np.conj(f))
    return np.real(acov[:n]) / np.real(acov[0])


def _first_zero(ac: np.ndarray, max_tau: int) -> int:
    """Index of the first non-positive autocorrelation value."""
    ind = 0
    while ind < max_tau and ind < ac.size and ac[ind] > 0:
        ind += 1
    return ind


def _hist_counts(y: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width histogram with clamped assignment at the extremes."""
    lo, hi = float(np.min(y)), float(np.max(y))
    step = (hi - lo) / n_bins
    with np.errstate(all="ignore"):
        idx = np.clip(((y - lo) / step).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    edges = np.arange(n_bins + 1) * step + lo
    return counts, edges


def _quantile(y: np.ndarray, q: float) -> float:
    return float(np.quantile(y, q, method="hazen"))


def _coarse_grain_quantile(y: np.ndarray, n_groups: int) -> np.ndarray:
    """Discretize into 1..n_groups by empirical quantile thresholds."""
    th = np.array([_quantile(y, k / n_groups) for k in range(1, n_groups)])
    return np.searchsorted(th, y, side="left") + 1


# ---------------------------------------------------------------------------
# distribution shape
# ---------------------------------------------------------------------------

def _histogram_mode(z: np.ndarray, n_bins: int) -> float:
    counts, edges = _hist_counts(z, n_bins)
    centers = (edges[:-1] + edges[1:]) * 0.5
    return float(np.mean(centers[counts == counts.max()]))


def _outlier_include_mdrmd(z: np.ndarray, sign: float) -> float:
    """Median-of-medians drift as progressively extreme values are kept."""
    y = sign * z
    if np.all(y == y[0]):
        return 0.0
    inc = 0.01
    n = y.size
    n_thresh = int(np.max(y) / inc) + 1

    mean_gap = np.empty(n_thresh)
    exceed_pct = np.empty(n_thresh)
    median_rel = np.empty(n_thresh)
    for j in range(n_thresh):
        r = np.flatnonzero(y >= j * inc) + 1  # 1-based positions
        m = r.size
        with np.errstate(all="ignore"):
            mean_gap[j] = (r[-1] - r[0]) / (m - 1) if m > 1 else np.nan
        exceed_pct[j] = (m - 1) * 100.0 / n
        median_rel[j] = _int_median(r) / (n / 2) - 1

    last_busy = 0
    for j in range(n_thresh):
        if exceed_pct[j] > 2:
            last_busy = j
    nan_gaps = np.flatnonzero(np.isnan(mean_gap))
    first_nan = int(nan_gaps[0]) if nan_gaps.size else n_thresh - 1
    trim = min(last_busy, first_nan)
    return _int_median(median_rel[: trim + 1])


def _int_median(values: np.ndarray) -> float:
    """Median as middle element (odd) or mean of the two middle (even)."""
    v = np.sort(values)
    m = v.size
    if m % 2 == 1:
        return float(v[m // 2])
    return float(v[m // 2] + v[m // 2 - 1]) / 2.0


# ---------------------------------------------------------------------------
# linear autocorrelation
# ---------------------------------------------------------------------------

def _f1ecac(ac: np.ndarray) -> float:
    """First 1/e crossing of the ACF, linearly interpolated."""
    thresh = 1.0 / math.e
    n = ac.size
    for i in range(n - 2):
        if ac[i + 1] < thresh:
            slope = ac[i + 1] - ac[i]
            return i + (thresh - ac[i]) / slope
    return float(n)


def _first_min_ac(ac: np.ndarray) -> float:
    n = ac.size
    for i in range(1, n - 1):
        if ac[i] < ac[i - 1] and ac[i] < ac[i + 1]:
            return float(i)
    return float(n)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - np.mean(a), b - np.mean(b)
    return float(np.sum(da * db) / np.sqrt(np.sum(da * da) * np.sum(db * db)))


def _auto_mutual_info_first_min(z: np.ndarray) -> float:
    """First minimum of the Gaussian automutual information over 40 lags."""
    n = z.size
    max_tau = min(40, int(np.ceil(n / 2)))
    ami = np.empty(max_tau)
    for lag in range(1, max_tau + 1):
        r = _pearson(z[: n - lag], z[lag:])
        with np.errstate(all="ignore"):
            ami[lag - 1] = -0.5 * np.log(1 - r * r)
    for i in range(1, max_tau - 1):
        if ami[i] < ami[i - 1] and ami[i] < ami[i + 1]:
            return float(i)
    return float(max_tau)


def _histogram_ami_even(z: np.ndarray, tau: int, n_bins: int) -> float:
    """Automutual information from an evenly binned joint histogram."""
    lo, hi = float(np.min(z)), float(np.max(z))
    step = (hi - lo + 0.2) / n_bins
    edges = lo + step * np.arange(n_bins + 1) - 0.1
    b1 = np.searchsorted(edges, z[: z.size - tau], side="right")
    b2 = np.searchsorted(edges, z[tau:], side="right")
    joint = np.zeros((n_bins, n_bins))
    np.add.at(joint, (b1 - 1, b2 - 1), 1.0)
    p = joint / joint.sum()
    p1 = p.sum(axis=1)
    p2 = p.sum(axis=0)
    mask = p > 0
    denom = np.outer(p1, p2)
    return float(np.sum(p[mask] * np.log(p[mask] / denom[mask])))


# ---------------------------------------------------------------------------
# incremental differences and symbolic stats
# ---------------------------------------------------------------------------

def _trev_1_num(z: np.ndarray) -> float:
    return float(np.mean(np.diff(z) ** 3))


def _hrv_pnn(z: np.ndarray, threshold: float) -> float:
    return float(np.mean(np.abs(np.diff(z)) * 1000 > threshold))


def _max_stretch(ybin: np.ndarray, trigger: int) -> float:
    """Longest gap between trigger symbols, with the boundary bookkeeping of
    the reference implementation (runs touching the ends count one short)."""
    n = ybin.size
    fire = np.flatnonzero(ybin == trigger)
    if fire.size == 0 or fire[-1] != n - 1:
        fire = np.append(fire, n - 1)
    gaps = np.diff(np.concatenate(([0], fire)))
    return float(gaps.max())


def _longstretch_above_mean(z: np.ndarray) -> float:
    ybin = (z[:-1] > np.mean(z)).astype(np.int64)
    return _max_stretch(ybin, trigger=0)


def _longstretch_decreasing(z: np.ndarray) -> float:
    ybin = (np.diff(z) >= 0).astype(np.int64)
    return _max_stretch(ybin, trigger=1)


def _motif_three_entropy(z: np.ndarray) -> float:
    """Entropy of adjacent symbol pairs after 3-letter quantile coding."""
    labels = _coarse_grain_quantile(z, 3)
    pairs = np.zeros((3, 3))
    np.add.at(pairs, (labels[:-1] - 1, labels[1:] - 1), 1.0)
    p = pairs / (z.size - 1)
    pos = p[p > 0]
    return float(-np.sum(pos * np.log(pos)))


def _transition_matrix_sumdiagcov(z: np.ndarray, acfz: int) -> float:
    """Trace of the covariance of transition-matrix columns at lag acfz."""
    down = z[::acfz] if acfz > 0 else z
    n_down = down.size
    labels = _coarse_grain_quantile(down, 3)
    t = np.zeros((3, 3))
    np.add.at(t, (labels[:-1] - 1, labels[1:] - 1), 1.0)
    with np.errstate(all="ignore"):
        t /= n_down - 1
        cov = np.cov(t, rowvar=False, ddof=1)
    return float(np.trace(cov))


# ---------------------------------------------------------------------------
# local forecasting
# ---------------------------------------------------------------------------

def _rolling_mean_residuals(z: np.ndarray, train_length: int) -> np.ndarray:
    window_sums = np.convolve(z, np.ones(train_length), mode="valid")[:-1]
    return z[train_length:] - window_sums / train_length


def _local_mean_tauresrat(z: np.ndarray, acfz: int, train_length: int) -> float:
    res = _rolling_mean_residuals(z, train_length)
    res_ac = _autocorr_fft(res)
    res_fz = _first_zero(res_ac, res.size)
    return res_fz / acfz if acfz else np.nan


def _local_mean_stderr(z: np.ndarray, train_length: int) -> float:
    res = _rolling_mean_residuals(z, train_length)
    return float(np.std(res, ddof=1))


# ---------------------------------------------------------------------------
# 2-D embedding distances
# ---------------------------------------------------------------------------

def _embed2_dist_expfit_meandiff(z: np.ndarray, acfz: int) -> float:
    """Mean |histogram - exponential fit| of successor distances in a
    2-D time-delay embedding."""
    n = z.size
    tau = acfz
    if tau > n / 10:
        tau = n // 10
    d = np.sqrt(np.diff(z[: n - tau]) ** 2 + np.diff(z[tau:]) ** 2)
    scale = float(np.mean(d))

    sd = float(np.std(d, ddof=1))
    if sd < 0.001:
        return 0.0
    n_bins = int(np.ceil((np.max(d) - np.min(d)) / (3.5 * sd / d.size ** (1 / 3))))
    if n_bins == 0:
        return 0.0
    counts, edges = _hist_counts(d, n_bins)
    prob = counts / d.size
    centers = (edges[:-1] + edges[1:]) * 0.5
    expfit = np.maximum(np.exp(-centers / scale) / scale, 0.0)
    return float(np.mean(np.abs(prob - expfit)))


# ---------------------------------------------------------------------------
# spectral summaries
# ---------------------------------------------------------------------------

def _welch_psd(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram PSD (single full-length rectangular segment),
    returned over angular frequency."""
    n = z.size
    nfft = max(256, 1 << int(np.ceil(np.log2(n))))
    spectrum = np.fft.fft(z, nfft)
    n_out = nfft // 2 + 1
    psd = np.abs(spectrum[:n_out]) ** 2 / n
    psd[1:n_out - 1] *= 2
    w = 2 * np.pi * np.arange(n_out) / nfft
    return w, psd / (2 * np.pi)


def _welch_area_5_1(z: np.ndarray) -> float:
    w, s = _welch_psd(z)
    dw = w[1] - w[0]
    return float(np.sum(s[: s.size // 5]) * dw)


def _welch_centroid(z: np.ndarray) -> float:
    w, s = _welch_psd(z)
    cs = np.cumsum(s)
    above = np.flatnonzero(cs > cs[-1] * 0.5)
    return float(w[above[0]]) if above.size else 0.0


# ---------------------------------------------------------------------------
# fluctuation analysis
# ---------------------------------------------------------------------------

def _fluct_anal_prop_r1(z: np.ndarray, lag: int, how: str) -> float:
    """Relative position of the breakpoint in a two-segment fit to the
    log-log fluctuation curve."""
    n = z.size
    lin_low, lin_high = np.log(5), np.log(n // 2)
    raw = np.floor(np.exp(lin_low + np.arange(50) * (lin_high - lin_low) / 49) + 0.5)
    taus = np.unique(raw.astype(np.int64))
    ntt = taus.size
    if ntt < 12:
        return 0.0

    cs = np.cumsum(z[::lag][: n // lag])
    fluct = np.empty(ntt)
    for i, tau in enumerate(taus):
        n_buf = cs.size // tau
        if n_buf == 0:
            fluct[i] = np.nan
            continue
        seg = cs[: n_buf * tau].reshape(n_buf, tau)
        detrended = seg - _rowwise_linear_fit(seg)
        if how == "rsrangefit":
            ranges = detrended.max(axis=1) - detrended.min(axis=1)
            fluct[i] = np.sqrt(np.sum(ranges ** 2) / n_buf)
        else:  # dfa
            fluct[i] = np.sqrt(np.sum(detrended ** 2) / (n_buf * tau))

    with np.errstate(all="ignore"):
        log_t = np.log(taus.astype(np.float64))
        log_f = np.log(fluct)

    min_points = 6
    n_splits = ntt - 2 * min_points + 1
    sserr = np.empty(n_splits)
    for i in range(min_points, ntt - min_points + 1):
        m1, b1 = _linreg(log_t[:i], log_f[:i])
        m2, b2 = _linreg(log_t[i - 1:], log_f[i - 1:])
        r1 = log_t[:i] * m1 + b1 - log_f[:i]
        r2 = log_t[i - 1:] * m2 + b2 - log_f[i - 1:]
        sserr[i - min_points] = np.sqrt(np.sum(r1 ** 2)) + np.sqrt(np.sum(r2 ** 2))

    if np.any(np.isnan(sserr)):
        return np.nan
    first_min = int(np.argmin(sserr)) + min_points - 1
    return (first_min + 1) / ntt


def _linreg(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    n = x.size
    sx, sy = np.sum(x), np.sum(y)
    sxx, sxy = np.sum(x * x), np.sum(x * y)
    denom = n * sxx - sx * sx
    slope = (n * sxy - sx * sy) / denom
    return slope, (sy * sxx - sx * sxy) / denom


def _rowwise_linear_fit(seg: np.ndarray) -> np.ndarray:
    """OLS line through each row of `seg` against support 1..width."""
    n_rows, width = seg.shape
    x = np.arange(1, width + 1, dtype=np.float64)
    sx, sxx = x.sum(), (x * x).sum()
    sy = seg.sum(axis=1)
    sxy = seg @ x
    denom = width * sxx - sx * sx
    slope = (width * sxy - sx * sy) / denom
    intercept = (sy * sxx - sx * sxy) / denom
    return slope[:, None] * x[None, :] + intercept[:, None]


# ---------------------------------------------------------------------------
# periodicity
# ---------------------------------------------------------------------------

def _periodicity_wang(z: np.ndarray) -> float:
    """First acceptable periodicity peak of the detrended autocovariance."""
    n = z.size
    y_sub = z - _spline_detrend(z)

    ac_max = int(np.ceil(n / 3))
    acf = np.empty(ac_max)
    for tau in range(1, ac_max + 1):
        acf[tau - 1] = np.sum(y_sub[: n - tau] * y_sub[tau:]) / (n - tau)

    slopes = np.diff(acf)
    troughs = [i for i in range(1, ac_max - 1) if slopes[i - 1] < 0 and slopes[i] > 0]
    peaks = [i for i in range(1, ac_max - 1) if slopes[i - 1] > 0 and slopes[i] < 0]

    for peak in peaks:
        preceding = [t for t in troughs if t < peak]
        if not preceding:
            continue
        trough = preceding[-1]
        if acf[peak] - acf[trough] < 0.01 or acf[peak] < 0:
            continue
        return float(peak)
    return 1.0


def _spline_detrend(y: np.ndarray) -> np.ndarray:
    """Least-squares cubic spline through three knots (ends and midpoint),
    on the periodically extended break spacing."""
    n = y.size
    b0, b1, b2 = 0.0, float(n // 2 - 1), float(n - 1)
    h0, h1 = b1 - b0, b2 - b1
    knots = np.array([
        b0 - h1 - h0 - h1, b0 - h1 - h0, b0 - h1,
        b0, b1, b2,
        b2 + h0, b2 + h0 + h1, b2 + h0 + h1 + h0,
    ])
    x = np.arange(n, dtype=np.float64)
    design = BSpline.design_matrix(x, knots, 3).toarray()
    coefs, *_ = np.linalg.lstsq(design, y, rcond=None)
    return design @ coefs
