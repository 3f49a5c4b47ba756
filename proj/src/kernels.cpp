#include "crossecg/kernels.hpp"

#include <algorithm>
#include <cstring>

namespace crossecg::kernels {

void conv1d_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int Cin, int Cout, int L, int K) {
    const int pad = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            double* yrow = y + (static_cast<size_t>(b) * Cout + co) * L;
            const double bval = bias ? bias[co] : 0.0;
            for (int l = 0; l < L; ++l) yrow[l] = bval;
            for (int ci = 0; ci < Cin; ++ci) {
                const double* xrow = x + (static_cast<size_t>(b) * Cin + ci) * L;
                const double* wrow = w + (static_cast<size_t>(co) * Cin + ci) * K;
                for (int k = 0; k < K; ++k) {
                    const double wk = wrow[k];
                    const int off = k - pad;
                    const int lo = std::max(0, -off);
                    const int hi = std::min(L, L - off);
#pragma omp simd
                    for (int l = lo; l < hi; ++l) yrow[l] += xrow[l + off] * wk;
                }
            }
        }
    }
}

void conv1d_backward_input(const double* dy, const double* w, double* dx,
                           int B, int Cin, int Cout, int L, int K) {
    const int pad = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Cin; ++ci) {
            double* dxrow = dx + (static_cast<size_t>(b) * Cin + ci) * L;
            std::memset(dxrow, 0, sizeof(double) * L);
            for (int co = 0; co < Cout; ++co) {
                const double* dyrow = dy + (static_cast<size_t>(b) * Cout + co) * L;
                const double* wrow = w + (static_cast<size_t>(co) * Cin + ci) * K;
                for (int k = 0; k < K; ++k) {
                    const double wk = wrow[k];
                    const int off = pad - k; // dy index offset
                    const int lo = std::max(0, -off);
                    const int hi = std::min(L, L - off);
#pragma omp simd
                    for (int l = lo; l < hi; ++l) dxrow[l] += dyrow[l + off] * wk;
                }
            }
        }
    }
}

void conv1d_backward_weights(const double* dy, const double* x, double* dw,
                             double* db, int B, int Cin, int Cout, int L, int K) {
    const int pad = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            double* dwrow = dw + (static_cast<size_t>(co) * Cin + ci) * K;
            for (int k = 0; k < K; ++k) {
                const int off = k - pad;
                const int lo = std::max(0, -off);
                const int hi = std::min(L, L - off);
                double acc = 0.0;
                for (int b = 0; b < B; ++b) {
                    const double* dyrow = dy + (static_cast<size_t>(b) * Cout + co) * L;
                    const double* xrow = x + (static_cast<size_t>(b) * Cin + ci) * L;
#pragma omp simd reduction(+ : acc)
                    for (int l = lo; l < hi; ++l) acc += dyrow[l] * xrow[l + off];
                }
                dwrow[k] = acc;
            }
        }
    }
    if (db) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < Cout; ++co) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* dyrow = dy + (static_cast<size_t>(b) * Cout + co) * L;
#pragma omp simd reduction(+ : acc)
                for (int l = 0; l < L; ++l) acc += dyrow[l];
            }
            db[co] = acc;
        }
    }
}

void bmm(const double* A, bool ta, const double* Bt, bool tb, double* C,
         int batch, int M, int K, int P) {
    const size_t asz = static_cast<size_t>(M) * K;
    const size_t bsz = static_cast<size_t>(K) * P;
    const size_t csz = static_cast<size_t>(M) * P;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int m = 0; m < M; ++m) {
            const double* Ab = A + b * asz;
            const double* Bb = Bt + b * bsz;
            double* Crow = C + b * csz + static_cast<size_t>(m) * P;
            std::memset(Crow, 0, sizeof(double) * P);
            if (!tb) {
                // C[m,:] += a_mk * B[k,:] keeps the inner loop contiguous.
                for (int k = 0; k < K; ++k) {
                    const double a = ta ? Ab[static_cast<size_t>(k) * M + m]
                                        : Ab[static_cast<size_t>(m) * K + k];
                    const double* Brow = Bb + static_cast<size_t>(k) * P;
#pragma omp simd
                    for (int p = 0; p < P; ++p) Crow[p] += a * Brow[p];
                }
            } else {
                for (int p = 0; p < P; ++p) {
                    const double* Bcol = Bb + static_cast<size_t>(p) * K;
                    double acc = 0.0;
                    if (!ta) {
                        const double* Arow = Ab + static_cast<size_t>(m) * K;
#pragma omp simd reduction(+ : acc)
                        for (int k = 0; k < K; ++k) acc += Arow[k] * Bcol[k];
                    } else {
                        for (int k = 0; k < K; ++k)
                            acc += Ab[static_cast<size_t>(k) * M + m] * Bcol[k];
                    }
                    Crow[p] = acc;
                }
            }
        }
    }
}

void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int F, int G) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const double* xrow = x + static_cast<size_t>(b) * F;
        double* yrow = y + static_cast<size_t>(b) * G;
        for (int g = 0; g < G; ++g) yrow[g] = bias ? bias[g] : 0.0;
        for (int f = 0; f < F; ++f) {
            const double xv = xrow[f];
            const double* wrow = w + static_cast<size_t>(f) * G;
#pragma omp simd
            for (int g = 0; g < G; ++g) yrow[g] += xv * wrow[g];
        }
    }
}

void linear_backward_input(const double* dy, const double* w, double* dx,
                           int B, int F, int G) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        const double* dyrow = dy + static_cast<size_t>(b) * G;
        double* dxrow = dx + static_cast<size_t>(b) * F;
        for (int f = 0; f < F; ++f) {
            const double* wrow = w + static_cast<size_t>(f) * G;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int g = 0; g < G; ++g) acc += dyrow[g] * wrow[g];
            dxrow[f] = acc;
        }
    }
}

void linear_backward_weights(const double* dy, const double* x, double* dw,
                             double* db, int B, int F, int G) {
#pragma omp parallel for schedule(static)
    for (int f = 0; f < F; ++f) {
        double* dwrow = dw + static_cast<size_t>(f) * G;
        std::memset(dwrow, 0, sizeof(double) * G);
        for (int b = 0; b < B; ++b) {
            const double xv = x[static_cast<size_t>(b) * F + f];
            const double* dyrow = dy + static_cast<size_t>(b) * G;
#pragma omp simd
            for (int g = 0; g < G; ++g) dwrow[g] += xv * dyrow[g];
        }
    }
    if (db) {
        for (int g = 0; g < G; ++g) db[g] = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* dyrow = dy + static_cast<size_t>(b) * G;
            for (int g = 0; g < G; ++g) db[g] += dyrow[g];
        }
    }
}

namespace serial {

void conv1d_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int Cin, int Cout, int L, int K) {
    const int pad = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int l = 0; l < L; ++l) {
                double acc = bias ? bias[co] : 0.0;
                for (int ci = 0; ci < Cin; ++ci)
                    for (int k = 0; k < K; ++k) {
                        const int src = l + k - pad;
                        if (src >= 0 && src < L)
                            acc += x[(static_cast<size_t>(b) * Cin + ci) * L + src] *
                                   w[(static_cast<size_t>(co) * Cin + ci) * K + k];
                    }
                y[(static_cast<size_t>(b) * Cout + co) * L + l] = acc;
            }
}

void conv1d_backward_input(const double* dy, const double* w, double* dx,
                           int B, int Cin, int Cout, int L, int K) {
    const int pad = (K - 1) / 2;
    std::memset(dx, 0, sizeof(double) * B * Cin * L);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int l = 0; l < L; ++l)
                for (int ci = 0; ci < Cin; ++ci)
                    for (int k = 0; k < K; ++k) {
                        const int src = l + k - pad;
                        if (src >= 0 && src < L)
                            dx[(static_cast<size_t>(b) * Cin + ci) * L + src] +=
                                dy[(static_cast<size_t>(b) * Cout + co) * L + l] *
                                w[(static_cast<size_t>(co) * Cin + ci) * K + k];
                    }
}

void conv1d_backward_weights(const double* dy, const double* x, double* dw,
                             double* db, int B, int Cin, int Cout, int L, int K) {
    const int pad = (K - 1) / 2;
    std::memset(dw, 0, sizeof(double) * Cout * Cin * K);
    if (db) std::memset(db, 0, sizeof(double) * Cout);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int l = 0; l < L; ++l) {
                const double g = dy[(static_cast<size_t>(b) * Cout + co) * L + l];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int k = 0; k < K; ++k) {
                        const int src = l + k - pad;
                        if (src >= 0 && src < L)
                            dw[(static_cast<size_t>(co) * Cin + ci) * K + k] +=
                                g * x[(static_cast<size_t>(b) * Cin + ci) * L + src];
                    }
                if (db) db[co] += g;
            }
}

void bmm(const double* A, bool ta, const double* Bt, bool tb, double* C,
         int batch, int M, int K, int P) {
    for (int b = 0; b < batch; ++b)
        for (int m = 0; m < M; ++m)
            for (int p = 0; p < P; ++p) {
                double acc = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double a = ta ? A[(static_cast<size_t>(b) * K + k) * M + m]
                                        : A[(static_cast<size_t>(b) * M + m) * K + k];
                    const double v = tb ? Bt[(static_cast<size_t>(b) * P + p) * K + k]
                                        : Bt[(static_cast<size_t>(b) * K + k) * P + p];
                    acc += a * v;
                }
                C[(static_cast<size_t>(b) * M + m) * P + p] = acc;
            }
}

void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int B, int F, int G) {
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < G; ++g) {
            double acc = bias ? bias[g] : 0.0;
            for (int f = 0; f < F; ++f)
                acc += x[static_cast<size_t>(b) * F + f] * w[static_cast<size_t>(f) * G + g];
            y[static_cast<size_t>(b) * G + g] = acc;
        }
}

} // namespace serial

} // namespace crossecg::kernels
