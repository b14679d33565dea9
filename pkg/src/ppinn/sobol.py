"""Unscrambled Sobol points in up to three dimensions (Joe-Kuo direction numbers, Gray-code order)."""

from __future__ import annotations

import numpy as np

BITS = 32

# (s, a, m_1..m_s) for dimensions 2 and 3 of new-joe-kuo-6.21201; dimension 1 is van der Corput.
_JOE_KUO = {
    2: (1, 0, (1,)),
    3: (2, 1, (1, 3)),
}


def _direction_numbers(dim: int) -> np.ndarray:
    """Integer direction numbers v_k = m_k * 2^(BITS - k), k = 1..BITS, per dimension."""
    v = np.zeros((dim, BITS), dtype=np.uint64)
    v[0] = [1 << (BITS - k) for k in range(1, BITS + 1)]
    for d in range(2, dim + 1):
        s, a, m_init = _JOE_KUO[d]
        m = list(m_init)
        for k in range(s, BITS):
            new = m[k - s] ^ (m[k - s] << s)
            for j in range(1, s):
                if (a >> (s - 1 - j)) & 1:
                    new ^= m[k - j] << j
            m.append(new)
        v[d - 1] = [m[k] << (BITS - 1 - k) for k in range(BITS)]
    return v


def sobol_sequence(dim: int, n: int) -> np.ndarray:
    """First ``n`` Sobol points in [0, 1)^dim, skipping the all-zeros point."""
    if not 1 <= dim <= 3:
        raise ValueError(f"Sobol dimension must be in 1..3, got {dim}")
    if n < 0 or n >= 2**BITS - 1:
        raise ValueError("n out of range")
    v = _direction_numbers(dim)
    out = np.empty((n, dim))
    x = np.zeros(dim, dtype=np.uint64)
    for i in range(n):
        # point i+1 in Gray-code order: flip the direction of the lowest zero bit of i
        c = (~i & (i + 1)).bit_length() - 1
        x ^= v[:, c]
        out[i] = x.astype(np.float64) / 2.0**BITS
    return out
