"""Positive pointwise mutual information of a count matrix."""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from afford.corpus import LabeledMatrix

log = logging.getLogger(__name__)


def ppmi(counts: LabeledMatrix) -> LabeledMatrix:
    """Return ``max(log(p(i,k) / (p(i,*) p(*,k))), 0)`` with the natural log.

    Only observed cells are evaluated; cells with zero count stay exactly zero,
    as do cells whose PMI is not positive (they are dropped from storage).
    Nouns or verbs never observed are kept as empty rows/columns and logged.
    """
    M = counts.matrix.tocoo()
    total = float(M.data.sum()) if M.nnz else 0.0
    if total <= 0:
        raise ValueError("no observations")
    row_sum = np.asarray(counts.matrix.sum(axis=1), dtype=np.float64).ravel()
    col_sum = np.asarray(counts.matrix.sum(axis=0), dtype=np.float64).ravel()
    joint = M.data.astype(np.float64) / total
    pmi = np.log(joint / ((row_sum[M.row] / total) * (col_sum[M.col] / total)))
    keep = pmi > 0
    P = sp.csr_matrix((pmi[keep], (M.row[keep], M.col[keep])), shape=M.shape)
    out = LabeledMatrix(P, counts.rows, counts.cols)
    zr, zc = counts.zero_rows(), counts.zero_cols()
    if zr or zc:
        log.info("ppmi: %d nouns and %d verbs were never observed", len(zr), len(zc))
    return out


def ppmi_diagnostics(counts: LabeledMatrix, P: LabeledMatrix) -> dict:
    """Unobserved nouns/verbs and PPMI-empty rows, for the sidecar report."""
    return {
        "total_count": int(round(float(counts.matrix.sum()))),
        "nnz_counts": int(counts.matrix.nnz),
        "nnz_ppmi": int(P.matrix.nnz),
        "unobserved_nouns": [counts.rows[i] for i in counts.zero_rows()],
        "unobserved_verbs": [counts.cols[k] for k in counts.zero_cols()],
        "empty_ppmi_rows": [P.rows[i] for i in P.zero_rows()],
        "empty_ppmi_cols": [P.cols[k] for k in P.zero_cols()],
    }
