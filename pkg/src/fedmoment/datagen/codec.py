"""
Line-oriented text form of a corpus or partition.

The header line records the feature dimensions, seed and planted-map
digest. Each following line is one sample:

    [client_id,]sample_id,temporal_class,scene,gt_start,gt_end,v_1..v_dv,q_1..q_dq

Reals are printed with 9 significant digits.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from fedmoment.datagen import ClientDataset, Corpus, DatagenError, MomentSample


def _real(value) -> str:
    return f'{float(value):.9g}'


def _header(d_v: int, d_q: int, seed: int, digest: str) -> str:
    return f'# d_v={d_v},d_q={d_q},seed={seed},digest={digest}'


def _sample_line(sample: MomentSample) -> str:
    fields = [
        str(sample.sample_id),
        str(sample.temporal_class),
        str(sample.scene),
        _real(sample.gt_start),
        _real(sample.gt_end),
    ]
    fields.extend(_real(v) for v in sample.video_features)
    fields.extend(_real(q) for q in sample.query_features)
    return ','.join(fields)


def corpus_to_text(corpus: Corpus) -> str:
    lines = [_header(corpus.d_v, corpus.d_q, corpus.seed, corpus.digest)]
    lines.extend(_sample_line(s) for s in corpus)
    return '\n'.join(lines) + '\n'


def partition_to_text(corpus: Corpus, clients: Sequence[ClientDataset]) -> str:
    lines = [_header(corpus.d_v, corpus.d_q, corpus.seed, corpus.digest)]
    for client in sorted(clients, key=lambda c: c.client_id):
        lines.extend(f'{client.client_id},{_sample_line(s)}' for s in client.samples)
    return '\n'.join(lines) + '\n'


def parse_header(line: str) -> dict:
    if not line.startswith('# '):
        raise DatagenError(f'Missing corpus header: {line!r}')
    try:
        fields = dict(item.split('=', 1) for item in line[2:].strip().split(','))
        return {
            'd_v': int(fields['d_v']),
            'd_q': int(fields['d_q']),
            'seed': int(fields['seed']),
            'digest': fields['digest'],
        }
    except (KeyError, ValueError) as err:
        raise DatagenError(f'Malformed corpus header: {line!r}') from err


def samples_from_text(text: str) -> tuple[dict, list[MomentSample]]:
    """
    Read back the samples of a corpus file.

    Returns the header fields and the samples; feature values carry the
    9-digit precision of the file.
    """
    lines = text.splitlines()
    if not lines:
        raise DatagenError('Empty corpus text')
    header = parse_header(lines[0])
    d_v, d_q = header['d_v'], header['d_q']
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split(',')
        if len(tokens) != 5 + d_v + d_q:
            raise DatagenError(f'line {lineno}: expected {5 + d_v + d_q} fields, got {len(tokens)}')
        try:
            values = np.array([float(t) for t in tokens[5:]])
            samples.append(MomentSample(
                sample_id=int(tokens[0]),
                temporal_class=int(tokens[1]),
                scene=int(tokens[2]),
                gt_start=float(tokens[3]),
                gt_end=float(tokens[4]),
                video_features=values[:d_v],
                query_features=values[d_v:],
            ))
        except ValueError as err:
            raise DatagenError(f'line {lineno}: {err}') from err
    return header, samples
