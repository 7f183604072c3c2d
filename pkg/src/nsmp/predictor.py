"""Frozen ComplEx link predictor: scoring, closed-form one-hop messages,
softmax conversion to fuzzy sets, binary embedding I/O, and a toy trainer.

Embeddings are complex-valued, stored as separate real/imaginary float32
arrays (matching the file format); all arithmetic upcasts to float64. The
one-hop message for an atom with one bound argument is an elementwise complex
product (head->tail: r*h, tail->head: conj(r)*t; negation flips the sign),
chosen so that ranking entities by the Hermitian similarity against the
message reproduces the trilinear score ranking exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from nsmp.kg import TripleStore

MAGIC = b"NSMPEMB1"
VERSION = 1


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files."""


@dataclass(eq=False)
class ComplexEmbeddingTable:
    """Complex entity/relation embeddings held as float32 real/imag arrays."""

    entity_real: np.ndarray
    entity_imag: np.ndarray
    relation_real: np.ndarray
    relation_imag: np.ndarray

    def __post_init__(self):
        for name in ("entity_real", "entity_imag", "relation_real", "relation_imag"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            setattr(self, name, arr)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be 2-d")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
        if self.entity_real.shape != self.entity_imag.shape:
            raise ValueError("entity array shape mismatch")
        if self.relation_real.shape != self.relation_imag.shape:
            raise ValueError("relation array shape mismatch")
        if self.entity_real.shape[1] != self.relation_real.shape[1]:
            raise ValueError("entity/relation rank mismatch")
        self._f64: dict[str, np.ndarray] = {}

    @property
    def n_entities(self) -> int:
        return self.entity_real.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_real.shape[0]

    @property
    def rank(self) -> int:
        return self.entity_real.shape[1]

    def _cached64(self, name: str) -> np.ndarray:
        arr = self._f64.get(name)
        if arr is None:
            arr = getattr(self, name).astype(np.float64)
            self._f64[name] = arr
        return arr

    def entity(self, e: int) -> np.ndarray:
        """Entity embedding as a complex128 vector."""
        return self._cached64("entity_real")[e] + 1j * self._cached64("entity_imag")[e]

    def relation(self, r: int) -> np.ndarray:
        return self._cached64("relation_real")[r] + 1j * self._cached64("relation_imag")[r]


def score(table: ComplexEmbeddingTable, h: np.ndarray, r: int, t: np.ndarray) -> float:
    """Trilinear form Re(sum_k h_k * r_k * conj(t_k)).

    The raw value is unbounded; only orderings (and softmax conversions)
    matter downstream.
    """
    rel = table.relation(r)
    return float(np.real(np.sum(np.asarray(h, dtype=np.complex128) * rel * np.conj(t))))


def relation_message(
    table: ComplexEmbeddingTable, state: np.ndarray, r: int, forward: bool, negated: bool = False
) -> np.ndarray:
    """Closed-form one-hop message in embedding space.

    `forward` means the known argument is the head and the message describes
    candidate tails (r * state); otherwise the known argument is the tail and
    the message describes candidate heads (conj(r) * state). Negation flips
    the sign, which exactly reverses the induced entity ordering.
    """
    state = np.asarray(state, dtype=np.complex128)
    rel = table.relation(r)
    out = rel * state if forward else np.conj(rel) * state
    return -out if negated else out


def all_similarities(table: ComplexEmbeddingTable, message: np.ndarray) -> np.ndarray:
    """Hermitian similarity Re(sum_k E_e,k * conj(message_k)) for every entity.

    For a positive forward message r*h this equals the trilinear score of
    (h, r, e) for every candidate e; for a backward message conj(r)*t it
    equals the score of (e, r, t).
    """
    message = np.asarray(message, dtype=np.complex128)
    er = table._cached64("entity_real")
    ei = table._cached64("entity_imag")
    return er @ np.real(message) + ei @ np.imag(message)


def softmax(values: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax (max subtracted before exponentiation)."""
    values = np.asarray(values, dtype=np.float64)
    shifted = values - values.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def fuzzy_from_embedding(table: ComplexEmbeddingTable, message: np.ndarray) -> np.ndarray:
    """Convert a message embedding into a dense probability vector over entities."""
    return softmax(all_similarities(table, message))


def save_embeddings(table: ComplexEmbeddingTable, path: str) -> None:
    """Write the little-endian binary format:
    magic `NSMPEMB1`, u32 version=1, u64 |V|, u64 |R|, u64 rank, then
    entity_real, entity_imag, relation_real, relation_imag as contiguous
    float32 row-major arrays."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIQQQ", MAGIC, VERSION, table.n_entities, table.n_relations, table.rank))
        for arr in (table.entity_real, table.entity_imag, table.relation_real, table.relation_imag):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_embeddings(path: str) -> ComplexEmbeddingTable:
    """Read the binary format written by save_embeddings; lossless round-trip."""
    header_size = struct.calcsize("<8sIQQQ")
    with open(path, "rb") as fh:
        header = fh.read(header_size)
        if len(header) != header_size:
            raise EmbeddingFormatError(f"{path}: truncated header")
        magic, version, n_entities, n_relations, rank = struct.unpack("<8sIQQQ", header)
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    expected = (2 * n_entities * rank + 2 * n_relations * rank) * 4
    if len(payload) != expected:
        raise EmbeddingFormatError(
            f"{path}: expected {expected} payload bytes for |V|={n_entities}, "
            f"|R|={n_relations}, rank={rank}; found {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    sizes = [n_entities * rank, n_entities * rank, n_relations * rank, n_relations * rank]
    offsets = np.cumsum([0] + sizes)
    arrays = [
        flat[offsets[i] : offsets[i + 1]].reshape(-1, rank).copy() for i in range(4)
    ]
    return ComplexEmbeddingTable(*arrays)


def _toy_loss_and_grads(
    er: np.ndarray,
    ei: np.ndarray,
    rr: np.ndarray,
    ri: np.ndarray,
    triples: np.ndarray,
    reg: float,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Full-batch loss and analytic gradients for the toy trainer.

    Loss = cross-entropy of the true tail under softmax over all tails
         + cross-entropy of the true head under softmax over all heads
         + reg * sum over triples of the cubed component moduli (N3).
    Exposed separately so tests can check the gradients against central
    finite differences.
    """
    h_ids, r_ids, t_ids = triples[:, 0], triples[:, 1], triples[:, 2]
    batch = len(triples)
    g_er = np.zeros_like(er)
    g_ei = np.zeros_like(ei)
    g_rr = np.zeros_like(rr)
    g_ri = np.zeros_like(ri)
    loss = 0.0

    hr, hi = er[h_ids], ei[h_ids]
    tr, ti = er[t_ids], ei[t_ids]
    vr, vi = rr[r_ids], ri[r_ids]

    # Tail prediction: scores[b, e] = Re((h_b * r_b) . conj(E_e)).
    wr = hr * vr - hi * vi
    wi = hr * vi + hi * vr
    scores = wr @ er.T + wi @ ei.T
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
    loss += float(np.sum(logz - scores[np.arange(batch), t_ids]))
    ds = np.exp(scores - logz[:, None])
    ds[np.arange(batch), t_ids] -= 1.0
    dwr = ds @ er
    dwi = ds @ ei
    g_er += ds.T @ wr
    g_ei += ds.T @ wi
    np.add.at(g_er, h_ids, vr * dwr + vi * dwi)
    np.add.at(g_ei, h_ids, vr * dwi - vi * dwr)
    np.add.at(g_rr, r_ids, hr * dwr + hi * dwi)
    np.add.at(g_ri, r_ids, hr * dwi - hi * dwr)

    # Head prediction: scores[b, e] = Re(E_e . conj(conj(r_b) * t_b)).
    mr = vr * tr + vi * ti
    mi = vr * ti - vi * tr
    scores = mr @ er.T + mi @ ei.T
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
    loss += float(np.sum(logz - scores[np.arange(batch), h_ids]))
    ds = np.exp(scores - logz[:, None])
    ds[np.arange(batch), h_ids] -= 1.0
    dmr = ds @ er
    dmi = ds @ ei
    g_er += ds.T @ mr
    g_ei += ds.T @ mi
    np.add.at(g_er, t_ids, vr * dmr - vi * dmi)
    np.add.at(g_ei, t_ids, vr * dmi + vi * dmr)
    np.add.at(g_rr, r_ids, tr * dmr + ti * dmi)
    np.add.at(g_ri, r_ids, ti * dmr - tr * dmi)

    if reg > 0:
        for rows, (gr, gi), (ar, ai) in (
            (h_ids, (g_er, g_ei), (er, ei)),
            (t_ids, (g_er, g_ei), (er, ei)),
            (r_ids, (g_rr, g_ri), (rr, ri)),
        ):
            xr, xi = ar[rows], ai[rows]
            norm = np.sqrt(xr * xr + xi * xi)
            loss += float(reg * np.sum(norm**3))
            np.add.at(gr, rows, 3.0 * reg * norm * xr)
            np.add.at(gi, rows, 3.0 * reg * norm * xi)

    return loss, (g_er, g_ei, g_rr, g_ri)


def train_toy(
    store: TripleStore,
    rank: int,
    epochs: int = 200,
    step: float = 0.5,
    reg: float = 1e-3,
    seed: int = 0,
    init_scale: float = 0.1,
) -> ComplexEmbeddingTable:
    """Fit ComplEx embeddings on the store by deterministic full-batch Adagrad.

    Full softmax cross-entropy over both tail and head prediction with N3
    regularization, optimized in float64 and cast to float32 at the end so a
    save/load round-trip is bit-identical. epochs=0 returns the seeded random
    initialization.
    """
    if not store.triples:
        raise ValueError("cannot train on an empty store")
    rng = np.random.default_rng(seed)
    shape_e = (store.n_entities, rank)
    shape_r = (store.n_relations, rank)
    params = [
        rng.standard_normal(shape_e) * init_scale,
        rng.standard_normal(shape_e) * init_scale,
        rng.standard_normal(shape_r) * init_scale,
        rng.standard_normal(shape_r) * init_scale,
    ]
    triples = store.triples_array()
    accum = [np.zeros_like(p) for p in params]
    for _ in range(epochs):
        _, grads = _toy_loss_and_grads(*params, triples, reg)
        for p, a, g in zip(params, accum, grads):
            a += g * g
            p -= step * g / (np.sqrt(a) + 1e-10)
    return ComplexEmbeddingTable(*(p.astype(np.float32) for p in params))
