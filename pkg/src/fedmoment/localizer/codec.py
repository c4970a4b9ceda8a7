"""
Binary and text forms of a ParameterVector.

Binary layout: little-endian uint64 layout digest, then the parameters as
little-endian float64.
"""

from __future__ import annotations

import struct

import numpy as np

from fedmoment.localizer import LayoutError, ModelLayout, ParameterVector


_DIGEST = struct.Struct('<Q')


def parameters_to_bytes(params: ParameterVector) -> bytes:
    return _DIGEST.pack(params.layout_digest) + params.values.astype('<f8').tobytes()


def parameters_from_bytes(data: bytes, layout: ModelLayout) -> ParameterVector:
    if len(data) < _DIGEST.size:
        raise LayoutError('Parameter blob is too short to hold a layout digest')
    (digest,) = _DIGEST.unpack_from(data)
    if digest != layout.digest:
        raise LayoutError(f'Layout digest {digest:#x} does not match expected {layout.digest:#x}')
    values = np.frombuffer(data, dtype='<f8', offset=_DIGEST.size)
    return ParameterVector(values.astype(np.float64), layout)


def parameters_to_text(params: ParameterVector) -> str:
    lines = [f'# layout_digest={params.layout_digest:#018x} size={len(params)}']
    lines.extend(repr(float(v)) for v in params.values)
    return '\n'.join(lines) + '\n'
