"""Parameter initialization and the flat, namespaced weight store."""

from __future__ import annotations

import numpy as np
from scipy import stats as _stats

from .errors import ContractViolation
from .tensor import Tensor, tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to two standard deviations, seeded via rng."""
    u = rng.random(size=shape)
    lo = _stats.norm.cdf(-2.0)
    hi = _stats.norm.cdf(2.0)
    return _stats.norm.ppf(lo + u * (hi - lo)) * std


class ParamStore:
    """Ordered name -> Tensor map with dotted namespacing."""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        full = f"{self.prefix}{name}" if self.prefix else name
        if full in self._params:
            raise ContractViolation(f"duplicate parameter name {full!r}")
        t = tensor(values, requires_grad=True)
        self._params[full] = t
        return t

    def scope(self, name: str) -> "ParamStore":
        child = ParamStore(prefix=f"{self.prefix}{name}.")
        child._params = self._params
        return child

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def load_values(self, values: dict[str, np.ndarray]):
        """Overwrite parameter buffers from a name -> array map."""
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ContractViolation(
                f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in values.items():
            p = self._params[name]
            if arr.shape != p.shape:
                raise ContractViolation(
                    f"checkpoint shape mismatch for {name}: {arr.shape} != {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.data.dtype)
