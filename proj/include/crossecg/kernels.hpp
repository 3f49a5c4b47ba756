#pragma once

#include <cstddef>

// Heavy data-parallel inner loops, OpenMP-parallel in production. Each output
// element is owned by exactly one thread, so results are bit-identical for any
// thread count. kernels::serial holds naive reference implementations that the
// tests and the benchmark compare against.

namespace crossecg::kernels {

// y[b,co,l] = bias[co] + sum_{ci,k} x[b,ci,l+k-pad] * w[co,ci,k], zero-padded,
// pad = (K-1)/2 (K odd).
void conv1d_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int Cin, int Cout, int L, int K);

// dx[b,ci,l] = sum_{co,k} dy[b,co,l-k+pad] * w[co,ci,k]
void conv1d_backward_input(const double* dy, const double* w, double* dx,
                           int B, int Cin, int Cout, int L, int K);

// dw[co,ci,k] = sum_{b,l} dy[b,co,l] * x[b,ci,l+k-pad];  db[co] = sum_{b,l} dy[b,co,l]
void conv1d_backward_weights(const double* dy, const double* x, double* dw,
                             double* db, int B, int Cin, int Cout, int L, int K);

// Batched matmul with optional transposes on the last two axes:
// C[b] = op(A[b]) * op(B[b]) where op(A[b]) is M x K. A/Bt buffers hold the
// untransposed layouts; ta/tb select the reading order.
void bmm(const double* A, bool ta, const double* Bt, bool tb, double* C,
         int batch, int M, int K, int P);

// y[b,g] = bias[g] + sum_f x[b,f] * w[f,g]
void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int F, int G);
void linear_backward_input(const double* dy, const double* w, double* dx,
                           int B, int F, int G);
void linear_backward_weights(const double* dy, const double* x, double* dw,
                             double* db, int B, int F, int G);

namespace serial {

void conv1d_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int Cin, int Cout, int L, int K);
void conv1d_backward_input(const double* dy, const double* w, double* dx,
                           int B, int Cin, int Cout, int L, int K);
void conv1d_backward_weights(const double* dy, const double* x, double* dw,
                             double* db, int B, int Cin, int Cout, int L, int K);
void bmm(const double* A, bool ta, const double* Bt, bool tb, double* C,
         int batch, int M, int K, int P);
void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int F, int G);

} // namespace serial

} // namespace crossecg::kernels
