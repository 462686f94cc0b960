"""Orthonormal filter banks and the separable 2D discrete wavelet transform.

All transforms use periodization, so every level halves each spatial
dimension exactly. The analysis step at a single level is an orthogonal
linear map; synthesis is its transpose.

Conventions
-----------
* Analysis is correlation followed by decimation::

      a[k] = sum_n dec_lo[n] * x[(2k + n) mod N]
      d[k] = sum_n dec_hi[n] * x[(2k + n) mod N]

* ``dec_hi[n] = (-1)**(n + 1) * dec_lo[L - 1 - n]`` (alternating flip). With
  this sign, Haar details are ``(x[2k+1] - x[2k]) / sqrt(2)``.
* ``rec_lo``/``rec_hi`` are the time-reversed analysis filters.
* 2D order: rows first (filter along each row, i.e. across columns), then
  columns. ``H`` is low-pass across columns and high-pass down the rows, so it
  responds to horizontal edges such as layer tops; ``V`` is high/low and ``D``
  is high/high.
"""
from __future__ import annotations

import csv
import functools
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import comb

__all__ = [
    "WaveletFilterBank",
    "Decomposition",
    "filter_bank",
    "available_banks",
    "analysis_matrices",
    "dwt2",
    "idwt2",
    "wavedec2",
    "waverec2",
    "dump_filters_csv",
]

DMEY_TAPS = 62


@dataclass(frozen=True)
class WaveletFilterBank:
    name: str
    dec_lo: np.ndarray
    dec_hi: np.ndarray
    rec_lo: np.ndarray
    rec_hi: np.ndarray

    @property
    def length(self) -> int:
        return len(self.dec_lo)


@dataclass
class Decomposition:
    """One level of a 2D DWT: approximation ``A`` and details ``H``, ``V``, ``D``."""

    A: np.ndarray
    H: np.ndarray
    V: np.ndarray
    D: np.ndarray
    level: int = 1

    def __post_init__(self):
        shapes = {g.shape for g in (self.A, self.H, self.V, self.D)}
        if len(shapes) != 1:
            raise ValueError(f"decomposition grids disagree in shape: {sorted(shapes)}")
        if self.level < 1:
            raise ValueError(f"level must be >= 1, got {self.level}")

    @property
    def details(self) -> np.ndarray:
        """Details stacked on a new axis just before the spatial axes: (..., 3, h, w)."""
        return np.stack([self.H, self.V, self.D], axis=-3)


def _from_lowpass(name: str, lo) -> WaveletFilterBank:
    lo = np.asarray(lo, dtype=np.float64)
    n = np.arange(len(lo))
    hi = (-1.0) ** (n + 1) * lo[::-1]
    for arr in (lo, hi):
        arr.setflags(write=False)
    rec_lo, rec_hi = lo[::-1].copy(), hi[::-1].copy()
    rec_lo.setflags(write=False)
    rec_hi.setflags(write=False)
    return WaveletFilterBank(name, lo, hi, rec_lo, rec_hi)


def _daubechies_lowpass(order: int) -> np.ndarray:
    """Minimum-phase Daubechies low-pass filter with ``order`` vanishing moments."""
    if order == 1:
        return np.array([1.0, 1.0]) / np.sqrt(2.0)
    # P(y) = sum_k C(order-1+k, k) y^k with y = sin^2(w/2); roots map to z via
    # z + 1/z = 2 - 4y, keeping the root inside the unit circle.
    poly = [comb(order - 1 + k, k, exact=True) for k in range(order)]
    y_roots = np.roots(poly[::-1])
    h = np.array([1.0])
    for _ in range(order):
        h = np.convolve(h, [1.0, 1.0])
    for y in y_roots:
        b = 2.0 - 4.0 * y
        z1 = (b + np.sqrt(b * b - 4.0 + 0j)) / 2.0
        z = z1 if abs(z1) < 1 else 1.0 / z1
        h = np.convolve(h, [1.0, -z])
    h = np.real(h)
    return h * np.sqrt(2.0) / h.sum()


def _meyer_nu(x: float) -> float:
    x = min(max(x, 0.0), 1.0)
    return x**4 * (35 - 84 * x + 70 * x * x - 20 * x**3)


def _meyer_response(w: float) -> float:
    w = abs(w)
    if w <= np.pi / 3:
        return np.sqrt(2.0)
    if w >= 2 * np.pi / 3:
        return 0.0
    return np.sqrt(2.0) * np.cos(np.pi / 2 * _meyer_nu(3 * w / np.pi - 1))


def _orthonormalize(h: np.ndarray, iters: int = 20) -> np.ndarray:
    """Minimum-norm Gauss-Newton correction onto orthonormal low-pass filters.

    Enforces sum_n h[n] h[n+2k] = delta_k for every shift and a zero at w = pi.
    """
    L = len(h)
    alt = (-1.0) ** np.arange(L)
    h = h.copy()
    for _ in range(iters):
        res, rows = [], []
        for k in range(L // 2):
            res.append(h[: L - 2 * k] @ h[2 * k :] - (1.0 if k == 0 else 0.0))
            jac = np.zeros(L)
            jac[: L - 2 * k] += h[2 * k :]
            jac[2 * k :] += h[: L - 2 * k]
            rows.append(jac)
        res.append(alt @ h)
        rows.append(alt)
        res = np.array(res)
        if np.max(np.abs(res)) < 1e-15:
            break
        h = h - np.linalg.lstsq(np.array(rows), res, rcond=None)[0]
    return h


def _dmey_lowpass(taps: int = DMEY_TAPS) -> np.ndarray:
    half = (taps - 2) // 2
    bands = [(0.0, np.pi / 3), (np.pi / 3, 2 * np.pi / 3)]
    coeffs = []
    for n in range(-half, half + 1):
        total = sum(quad(lambda w: _meyer_response(w) * np.cos(w * n), a, b, limit=200)[0] for a, b in bands)
        coeffs.append(total / np.pi)
    # odd-length symmetric FIR padded with a leading zero to an even length
    h = np.concatenate([[0.0], coeffs])
    return _orthonormalize(h)


@functools.lru_cache(maxsize=None)
def filter_bank(name: str) -> WaveletFilterBank:
    """Return the named filter bank: ``haar``, ``db1``..``db8`` (``db`` = ``db2``), ``dmey``."""
    key = name.lower()
    if key == "db":
        key = "db2"
    if key in ("haar", "db1"):
        return _from_lowpass(key, _daubechies_lowpass(1))
    if key.startswith("db") and key[2:].isdigit() and 1 <= int(key[2:]) <= 8:
        return _from_lowpass(key, _daubechies_lowpass(int(key[2:])))
    if key == "dmey":
        return _from_lowpass(key, _dmey_lowpass())
    raise ValueError(f"unknown wavelet {name!r}; expected one of {available_banks()}")


def available_banks() -> list[str]:
    return ["haar"] + [f"db{k}" for k in range(1, 9)] + ["dmey"]


def _bank(bank) -> WaveletFilterBank:
    return filter_bank(bank) if isinstance(bank, str) else bank


@functools.lru_cache(maxsize=256)
def _matrices(name: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    bank = filter_bank(name)
    lo = np.zeros((n // 2, n))
    hi = np.zeros((n // 2, n))
    for k in range(n // 2):
        for j, (a, b) in enumerate(zip(bank.dec_lo, bank.dec_hi)):
            lo[k, (2 * k + j) % n] += a
            hi[k, (2 * k + j) % n] += b
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


def analysis_matrices(bank, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Periodized (n/2, n) low- and high-pass analysis operators for a signal of length n."""
    if n < 2 or n % 2:
        raise ValueError(f"signal length must be even and >= 2, got {n}")
    bank = _bank(bank)
    if isinstance(bank, WaveletFilterBank) and bank.name in available_banks():
        return _matrices(bank.name, n)
    raise ValueError(f"unsupported filter bank {bank!r}")


def dwt2(x, bank="haar") -> Decomposition:
    """Single-level 2D DWT over the last two axes of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError(f"expected at least 2 dimensions, got shape {x.shape}")
    rows, cols = x.shape[-2:]
    if rows % 2 or cols % 2 or rows == 0 or cols == 0:
        raise ValueError(f"rows and cols must be even and positive, got {rows}x{cols}")
    bank = _bank(bank)
    low = _filter_down(x, bank.dec_lo, -1)
    high = _filter_down(x, bank.dec_hi, -1)
    return Decomposition(A=_filter_down(low, bank.dec_lo, -2), H=_filter_down(low, bank.dec_hi, -2),
                         V=_filter_down(high, bank.dec_lo, -2), D=_filter_down(high, bank.dec_hi, -2))


def _filter_down(x, taps, axis):
    """``out[k] = sum_n taps[n] * x[(2k + n) mod N]`` along ``axis``.

    Products are rounded before summation (no fused multiply-add), so Haar
    details of a constant cancel exactly.
    """
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(taps))[None, :]) % n
    out = np.sum(x[..., idx] * taps, axis=-1)
    return np.moveaxis(out, -1, axis)


def idwt2(dec: Decomposition, bank="haar") -> np.ndarray:
    """Inverse of :func:`dwt2`; output spatial dims are doubled."""
    shapes = {np.shape(g) for g in (dec.A, dec.H, dec.V, dec.D)}
    if len(shapes) != 1:
        raise ValueError(f"decomposition grids disagree in shape: {sorted(shapes)}")
    rows, cols = np.shape(dec.A)[-2:]
    bank = _bank(bank)
    lo_c, hi_c = analysis_matrices(bank, 2 * cols)
    lo_r, hi_r = analysis_matrices(bank, 2 * rows)
    low = lo_r.T @ dec.A + hi_r.T @ dec.H
    high = lo_r.T @ dec.V + hi_r.T @ dec.D
    return low @ lo_c + high @ hi_c


def wavedec2(x, bank="haar", levels: int = 1) -> list[Decomposition]:
    """Multi-level DWT; entry ``l - 1`` holds level ``l``, each computed from the previous approximation."""
    x = np.asarray(x, dtype=np.float64)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    rows, cols = x.shape[-2:]
    step = 2**levels
    if rows % step or cols % step or rows == 0 or cols == 0:
        raise ValueError(f"{rows}x{cols} input is not divisible by 2**{levels} = {step}")
    out = []
    current = x
    for level in range(1, levels + 1):
        dec = dwt2(current, bank)
        dec.level = level
        out.append(dec)
        current = dec.A
    return out


def waverec2(decs: list[Decomposition], bank="haar") -> np.ndarray:
    """Reconstruct from :func:`wavedec2` output, using the deepest approximation."""
    current = decs[-1].A
    for dec in reversed(decs):
        current = idwt2(Decomposition(current, dec.H, dec.V, dec.D, dec.level), bank)
    return current


def dump_filters_csv(names=None) -> str:
    """CSV with columns ``wavelet,filter,index,value`` for cross-checking against reference tables."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["wavelet", "filter", "index", "value"])
    for name in names or ["haar", "db2", "dmey"]:
        bank = filter_bank(name)
        for label in ("dec_lo", "dec_hi", "rec_lo", "rec_hi"):
            for i, v in enumerate(getattr(bank, label)):
                writer.writerow([bank.name, label, i, repr(float(v))])
    return buf.getvalue()
