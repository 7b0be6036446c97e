"""Flat registry of named trainable tensors.

Checkpointing and the optimizer both key on the parameter name, so names
must be unique; insertion order is the serialization order.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


class ParamStore:
    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite parameter data in place from a name -> array map."""
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ContractError(
                f"parameter set mismatch: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        for name, tensor in self._params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ContractError(
                    f"shape mismatch for {name!r}: stored {arr.shape}, "
                    f"model {tensor.data.shape}"
                )
            tensor.data = np.ascontiguousarray(arr)
