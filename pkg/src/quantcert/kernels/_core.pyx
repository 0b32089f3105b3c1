# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward kernels over CSR-stored layers.

Same contract as ``_fallback``; zero weights are skipped, which halves the
work on block-diagonal merged networks. Must not be built with -ffast-math:
the outward widening assumes IEEE semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, fmax, tanh, exp
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double EPS = 2.220446049250313e-16
cdef double ULP_WIDEN = 4.0

cdef enum:
    LINEAR = 0
    RELU = 1
    TANH = 2
    SIGMOID = 3


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _act(int code, double x) nogil:
    if code == RELU:
        return x if x > 0 else 0.0
    if code == TANH:
        return tanh(x)
    if code == SIGMOID:
        return _sigmoid(x)
    return x


cdef class CompiledNetwork:
    """Flat CSR copy of a network's layers, owned by the extension."""

    cdef public int n_layers
    cdef public int input_dim
    cdef public int output_dim
    cdef public int max_width
    cdef double[::1] data
    cdef double[::1] bias
    cdef double[::1] abs_bias
    cdef int[::1] indices
    cdef int[::1] indptr      # concatenated per-layer row pointers
    cdef int[::1] negstart    # first negative entry of each row
    cdef int[::1] rows        # rows per layer
    cdef int[::1] acts
    cdef int[::1] row_off     # start of layer's rows in bias/indptr
    cdef int[::1] nz_off      # start of layer's entries in data

    def __init__(self, layers, int input_dim):
        cdef list datas = [], idxs = [], ptrs = [], biases = [], negs = []
        n = len(layers)
        self.n_layers = n
        self.input_dim = input_dim
        self.rows = np.zeros(n, dtype=np.intc)
        self.acts = np.zeros(n, dtype=np.intc)
        self.row_off = np.zeros(n + 1, dtype=np.intc)
        self.nz_off = np.zeros(n + 1, dtype=np.intc)
        width = input_dim
        for k, layer in enumerate(layers):
            w = np.ascontiguousarray(layer.w, dtype=np.float64)
            r, c = np.nonzero(w)
            # within each row: non-negative weights first, then negative ones
            order = np.lexsort((c, w[r, c] < 0, r))
            r, c = r[order], c[order]
            counts = np.bincount(r, minlength=w.shape[0])
            ptr = np.zeros(w.shape[0] + 1, dtype=np.intc)
            ptr[1:] = np.cumsum(counts)
            vals = w[r, c]
            datas.append(vals)
            negs.append(ptr[:-1] + np.bincount(r[vals >= 0], minlength=w.shape[0]))
            idxs.append(c.astype(np.intc))
            ptrs.append(ptr[:-1])
            biases.append(np.asarray(layer.b, dtype=np.float64))
            self.rows[k] = w.shape[0]
            self.acts[k] = layer.act
            self.row_off[k + 1] = self.row_off[k] + w.shape[0]
            self.nz_off[k + 1] = self.nz_off[k] + len(c)
            width = max(width, w.shape[0])
        # per-row start offsets into the global data array, plus a sentinel
        starts = []
        for k in range(n):
            starts.append(ptrs[k] + self.nz_off[k])
        starts.append(np.array([self.nz_off[n]], dtype=np.intc))
        self.indptr = np.concatenate(starts).astype(np.intc)
        self.negstart = np.concatenate(
            [negs[k] + self.nz_off[k] for k in range(n)] + [np.zeros(1, dtype=np.intc)]
        ).astype(np.intc)
        # trailing pad keeps &data[0] valid for all-zero networks
        self.data = np.concatenate(datas + [np.zeros(1)])
        self.indices = np.concatenate(idxs + [np.zeros(1, dtype=np.intc)]).astype(np.intc)
        self.bias = np.concatenate(biases)
        self.abs_bias = np.abs(np.asarray(self.bias))
        self.output_dim = self.rows[n - 1]
        self.max_width = width

    cdef void _point(self, const double* u, double* out, double* buf_a, double* buf_b) noexcept nogil:
        cdef int k, i, p, nrows, r0
        cdef double s, s1
        cdef int p_end
        cdef const double* x = u
        cdef double* y = buf_a
        cdef const double* data = &self.data[0]
        cdef const int* indices = &self.indices[0]
        cdef const int* indptr = &self.indptr[0]
        cdef const double* bias = &self.bias[0]
        for k in range(self.n_layers):
            nrows = self.rows[k]
            r0 = self.row_off[k]
            y = out if k == self.n_layers - 1 else (buf_a if x != buf_a else buf_b)
            for i in range(nrows):
                s = 0.0
                s1 = 0.0
                p = indptr[r0 + i]
                p_end = indptr[r0 + i + 1]
                while p + 1 < p_end:
                    s += data[p] * x[indices[p]]
                    s1 += data[p + 1] * x[indices[p + 1]]
                    p += 2
                if p < p_end:
                    s += data[p] * x[indices[p]]
                y[i] = _act(self.acts[k], (s + s1) + bias[r0 + i])
            x = y

    cdef void _interval(self, const double* lo_in, const double* hi_in, double tau,
                        double* lo_out, double* hi_out, double* work) noexcept nogil:
        # work holds 4 * max_width doubles: two ping-pong (lo, hi) pairs
        cdef int k, i, p, j, nrows, r0, ncols, code
        cdef double sl, sh, mag, w, r, m, flo, fhi
        cdef int W = self.max_width
        cdef const double* xl = lo_in
        cdef const double* xh = hi_in
        cdef double* yl
        cdef double* yh
        cdef double* am = work + 4 * W   # |x| bound per input column
        cdef const double* data = &self.data[0]
        cdef const int* indices = &self.indices[0]
        cdef const int* indptr = &self.indptr[0]
        cdef const double* bias = &self.bias[0]
        cdef const double* abs_bias = &self.abs_bias[0]
        cdef const int* negstart = &self.negstart[0]
        ncols = self.input_dim
        for k in range(self.n_layers):
            nrows = self.rows[k]
            r0 = self.row_off[k]
            code = self.acts[k]
            for j in range(ncols):
                am[j] = fmax(fabs(xl[j]), fabs(xh[j]))
            if k == self.n_layers - 1:
                yl = lo_out
                yh = hi_out
            elif k % 2 == 0:
                yl = work
                yh = work + W
            else:
                yl = work + 2 * W
                yh = work + 3 * W
            for i in range(nrows):
                sl = bias[r0 + i]
                sh = sl
                mag = abs_bias[r0 + i]
                for p in range(indptr[r0 + i], negstart[r0 + i]):
                    w = data[p]
                    j = indices[p]
                    sl += w * xl[j]
                    sh += w * xh[j]
                    mag += w * am[j]
                for p in range(negstart[r0 + i], indptr[r0 + i + 1]):
                    w = data[p]
                    j = indices[p]
                    sl += w * xh[j]
                    sh += w * xl[j]
                    mag -= w * am[j]
                r = tau * (1.0 + mag)
                sl -= r
                sh += r
                if code == RELU:
                    if sl < 0:
                        sl = 0.0
                    if sh < 0:
                        sh = 0.0
                elif code == TANH or code == SIGMOID:
                    flo = _act(code, sl)
                    fhi = _act(code, sh)
                    flo -= ULP_WIDEN * EPS * fabs(flo)
                    fhi += ULP_WIDEN * EPS * fabs(fhi)
                    m = -1.0 if code == TANH else 0.0
                    sl = flo if flo > m else m
                    sh = fhi if fhi < 1.0 else 1.0
                yl[i] = sl
                yh[i] = sh
            xl = yl
            xh = yh
            ncols = nrows

    def point_batch(self, const double[:, ::1] U):
        cdef Py_ssize_t k, n = U.shape[0]
        if U.shape[1] != self.input_dim:
            raise ValueError("input width mismatch")
        out = np.empty((n, self.output_dim))
        cdef double[:, ::1] Y = out
        cdef double* buf = <double*> malloc(2 * self.max_width * sizeof(double))
        if buf == NULL:
            raise MemoryError()
        try:
            with nogil:
                for k in range(n):
                    self._point(&U[k, 0], &Y[k, 0], buf, buf + self.max_width)
        finally:
            free(buf)
        return out

    def interval_batch(self, const double[:, ::1] LO, const double[:, ::1] HI, double tau):
        cdef Py_ssize_t k, n = LO.shape[0]
        if LO.shape[1] != self.input_dim or HI.shape[1] != self.input_dim or HI.shape[0] != n:
            raise ValueError("box shape mismatch")
        out_lo = np.empty((n, self.output_dim))
        out_hi = np.empty((n, self.output_dim))
        cdef double[:, ::1] OL = out_lo
        cdef double[:, ::1] OH = out_hi
        cdef double* work = <double*> malloc(5 * self.max_width * sizeof(double))
        if work == NULL:
            raise MemoryError()
        try:
            with nogil:
                for k in range(n):
                    self._interval(&LO[k, 0], &HI[k, 0], tau, &OL[k, 0], &OH[k, 0], work)
        finally:
            free(work)
        return out_lo, out_hi
