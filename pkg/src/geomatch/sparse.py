"""Minimal coordinate-list sparse matrix, enough for graph adjacency."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


class SparseCOO:
    """Sparse S x T matrix stored as row-sorted (row, col, value) triples."""

    def __init__(self, shape, rows, cols, vals):
        self.shape = (int(shape[0]), int(shape[1]))
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ShapeMismatch("rows, cols, vals must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= self.shape[0]):
            raise ShapeMismatch("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= self.shape[1]):
            raise ShapeMismatch("col index out of range")
        order = np.lexsort((cols, rows))
        self.rows = rows[order]
        self.cols = cols[order]
        self.vals = vals[order]
        for a in (self.rows, self.cols, self.vals):
            a.flags.writeable = False
        # segment boundaries for reduceat-based products (rows are sorted)
        self._row_ids, self._row_starts = self._segments(self.rows)
        t_order = np.lexsort((self.rows, self.cols))
        self._t_rows = self.cols[t_order]
        self._t_cols = self.rows[t_order]
        self._t_vals = self.vals[t_order]
        self._t_ids, self._t_starts = self._segments(self._t_rows)

    @staticmethod
    def _segments(sorted_ids: np.ndarray):
        if sorted_ids.size == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        starts = np.flatnonzero(np.diff(sorted_ids, prepend=sorted_ids[0] - 1))
        return sorted_ids[starts], starts

    @property
    def nnz(self) -> int:
        return self.vals.size

    @staticmethod
    def _scatter_product(out_rows, ids, starts, vals, cols, dense):
        out = np.zeros((out_rows,) + dense.shape[1:])
        if vals.size == 0:
            return out
        contrib = vals.reshape((-1,) + (1,) * (dense.ndim - 1)) * dense[cols]
        out[ids] = np.add.reduceat(contrib, starts, axis=0)
        return out

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        """self @ dense for a dense (T, F) array."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.shape[0] != self.shape[1]:
            raise ShapeMismatch(
                f"cannot multiply {self.shape} by {dense.shape}")
        return self._scatter_product(self.shape[0], self._row_ids,
                                     self._row_starts, self.vals, self.cols,
                                     dense)

    def rmatmul(self, dense: np.ndarray) -> np.ndarray:
        """self.T @ dense for a dense (S, F) array."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.shape[0] != self.shape[0]:
            raise ShapeMismatch(
                f"cannot multiply transpose of {self.shape} by {dense.shape}")
        return self._scatter_product(self.shape[1], self._t_ids,
                                     self._t_starts, self._t_vals,
                                     self._t_cols, dense)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.vals)
        return out

    def transpose(self) -> "SparseCOO":
        return SparseCOO((self.shape[1], self.shape[0]),
                         self.cols, self.rows, self.vals)
