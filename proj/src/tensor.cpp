#include "crossecg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "crossecg/kernels.hpp"

namespace crossecg {

namespace {

std::int64_t product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void require(bool cond, const std::string& msg) {
    if (!cond) fail("ShapeMismatch", msg);
}

// dst += src
void axpy(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shp) : shape(std::move(shp)) {
    for (int d : shape)
        if (d <= 0) fail("ShapeMismatch", "non-positive dimension in " + shape_str(shape));
    data = std::make_shared<std::vector<double>>(product(shape), 0.0);
}

Tensor::Tensor(std::vector<int> shp, std::vector<double> values) : shape(std::move(shp)) {
    if (product(shape) != static_cast<std::int64_t>(values.size()))
        fail("ShapeMismatch", "value count does not match shape " + shape_str(shape));
    data = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(std::vector<int> shp, double v) {
    Tensor t(std::move(shp));
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
}

Tensor Tensor::randu(std::vector<int> shp, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shp));
    for (double& v : *t.data) v = uniform(rng, lo, hi);
    return t;
}

Tensor Tensor::randn(std::vector<int> shp, Rng& rng, double mean, double std) {
    Tensor t(std::move(shp));
    for (double& v : *t.data) v = gaussian(rng, mean, std);
    return t;
}

int Tensor::numel() const { return static_cast<int>(product(shape)); }

double Tensor::value() const {
    if (numel() != 1) fail("ShapeMismatch", "value() on non-scalar " + shape_str(shape));
    return (*data)[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
}

// ---- Tape -------------------------------------------------------------------

namespace {
std::atomic<std::uint64_t> g_tape_counter{1};
}

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

int Tape::leaf(Tensor& t) {
    Node n;
    n.numel = t.numel();
    nodes_.push_back(std::move(n));
    t.node = static_cast<int>(nodes_.size()) - 1;
    t.tape_id = id_;
    return t.node;
}

int Tape::add_node(int numel, BackwardFn bw) {
    Node n;
    n.numel = numel;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>* Tape::grad_buf(int node, int numel) {
    if (node < 0) return nullptr;
    if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty()) g.assign(static_cast<size_t>(numel), 0.0);
    return &g;
}

void Tape::backward(const Tensor& scalar_out) {
    if (ran_backward_) fail("TapeReused", "backward() already ran on this tape");
    if (scalar_out.tape_id != id_ || scalar_out.node < 0)
        fail("TapeMismatch", "output tensor is not tracked on this tape");
    if (scalar_out.numel() != 1)
        fail("ShapeMismatch", "backward() requires a scalar output");
    ran_backward_ = true;
    grads_.resize(nodes_.size());
    grads_[static_cast<size_t>(scalar_out.node)] = {1.0};
    for (int i = scalar_out.node; i >= 0; --i) {
        auto& g = grads_[static_cast<size_t>(i)];
        auto& node = nodes_[static_cast<size_t>(i)];
        if (!g.empty() && node.backward) {
            node.backward(*this, g);
            node.backward = nullptr; // release captured activations early
            g.clear();
            g.shrink_to_fit();
        }
    }
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
    if (t.tape_id != id_ || t.node < 0)
        fail("TapeMismatch", "tensor is not a leaf of this tape");
    return grads_[static_cast<size_t>(t.node)];
}

int node_on(const Tape* tp, const Tensor& t) {
    if (!tp) return -1;
    return (t.tape_id == tp->id()) ? t.node : -1;
}

namespace {

// Attaches out to the tape when any parent is tracked.
void track(Tape* tp, Tensor& out, std::initializer_list<int> parents, Tape::BackwardFn bw) {
    bool any = false;
    for (int p : parents)
        if (p >= 0) any = true;
    if (!tp || !any) return;
    out.node = tp->add_node(out.numel(), std::move(bw));
    out.tape_id = tp->id();
}

void add_into(Tape& tp, int node, int numel, const std::vector<double>& contrib) {
    auto* buf = tp.grad_buf(node, numel);
    if (buf) axpy(*buf, contrib);
}

} // namespace

// ---- Ops ---------------------------------------------------------------------

Tensor conv1d(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(x.ndim() == 3, "conv1d input must be [B,Cin,L], got " + shape_str(x.shape));
    require(w.ndim() == 3, "conv1d weight must be [Cout,Cin,K], got " + shape_str(w.shape));
    require(bias.ndim() == 1, "conv1d bias must be [Cout]");
    const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const int Cout = w.dim(0), K = w.dim(2);
    require(w.dim(1) == Cin, "conv1d channel mismatch: x " + shape_str(x.shape) + " vs w " + shape_str(w.shape));
    require(bias.dim(0) == Cout, "conv1d bias size mismatch");
    require(K % 2 == 1, "conv1d kernel size must be odd for symmetric same-padding");

    Tensor y({B, Cout, L});
    kernels::conv1d_forward(x.ptr(), w.ptr(), bias.ptr(), y.ptr(), B, Cin, Cout, L, K);

    const int px = node_on(tp, x), pw = node_on(tp, w), pb = node_on(tp, bias);
    auto xd = x.data, wd = w.data;
    track(tp, y, {px, pw, pb}, [=](Tape& t, const std::vector<double>& g) {
        if (px >= 0) {
            std::vector<double> dx(static_cast<size_t>(B) * Cin * L);
            kernels::conv1d_backward_input(g.data(), wd->data(), dx.data(), B, Cin, Cout, L, K);
            add_into(t, px, static_cast<int>(dx.size()), dx);
        }
        if (pw >= 0 || pb >= 0) {
            std::vector<double> dw(static_cast<size_t>(Cout) * Cin * K);
            std::vector<double> db(static_cast<size_t>(Cout));
            kernels::conv1d_backward_weights(g.data(), xd->data(), dw.data(), db.data(),
                                             B, Cin, Cout, L, K);
            if (pw >= 0) add_into(t, pw, static_cast<int>(dw.size()), dw);
            if (pb >= 0) add_into(t, pb, Cout, db);
        }
    });
    return y;
}

Tensor batchnorm1d(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool train,
                   double momentum, double eps) {
    require(x.ndim() == 3, "batchnorm1d input must be [B,C,L]");
    const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
    require(gamma.numel() == C && beta.numel() == C, "batchnorm1d affine size mismatch");
    require(running_mean.numel() == C && running_var.numel() == C,
            "batchnorm1d running stat size mismatch");
    const std::int64_t M = static_cast<std::int64_t>(B) * L;
    if (train && M < 2) fail("DegenerateBatch", "batchnorm1d train mode needs B*L >= 2");

    Tensor y({B, C, L});
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * C * L);
    std::vector<double> mean(C), var(C), inv_std(C);

    if (train) {
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* row = x.ptr() + (static_cast<size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) s += row[l];
            }
            const double mu = s / static_cast<double>(M);
            double v = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* row = x.ptr() + (static_cast<size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) {
                    const double d = row[l] - mu;
                    v += d * d;
                }
            }
            mean[c] = mu;
            var[c] = v / static_cast<double>(M);
        }
        for (int c = 0; c < C; ++c) {
            running_mean.vec()[c] = (1.0 - momentum) * running_mean.vec()[c] + momentum * mean[c];
            running_var.vec()[c] = (1.0 - momentum) * running_var.vec()[c] + momentum * var[c];
        }
    } else {
        mean = running_mean.vec();
        var = running_var.vec();
    }
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* row = x.ptr() + (static_cast<size_t>(b) * C + c) * L;
            double* hrow = xhat->data() + (static_cast<size_t>(b) * C + c) * L;
            double* yrow = y.ptr() + (static_cast<size_t>(b) * C + c) * L;
            const double mu = mean[c], is = inv_std[c];
            const double gc = gamma.vec()[c], bc = beta.vec()[c];
            for (int l = 0; l < L; ++l) {
                hrow[l] = (row[l] - mu) * is;
                yrow[l] = gc * hrow[l] + bc;
            }
        }
    }

    const int px = node_on(tp, x), pg = node_on(tp, gamma), pb = node_on(tp, beta);
    auto gam = gamma.data;
    auto istd = std::make_shared<std::vector<double>>(inv_std);
    track(tp, y, {px, pg, pb}, [=](Tape& t, const std::vector<double>& g) {
        std::vector<double> dgamma(C, 0.0), dbeta(C, 0.0), gsum(C, 0.0), ghsum(C, 0.0);
        for (int c = 0; c < C; ++c) {
            double sg = 0.0, sgh = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* grow = g.data() + (static_cast<size_t>(b) * C + c) * L;
                const double* hrow = xhat->data() + (static_cast<size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) {
                    sg += grow[l];
                    sgh += grow[l] * hrow[l];
                }
            }
            gsum[c] = sg;
            ghsum[c] = sgh;
            dbeta[c] = sg;
            dgamma[c] = sgh;
        }
        if (px >= 0) {
            std::vector<double> dx(static_cast<size_t>(B) * C * L);
            const double invM = 1.0 / static_cast<double>(M);
#pragma omp parallel for collapse(2) schedule(static)
            for (int b = 0; b < B; ++b) {
                for (int c = 0; c < C; ++c) {
                    const double* grow = g.data() + (static_cast<size_t>(b) * C + c) * L;
                    const double* hrow = xhat->data() + (static_cast<size_t>(b) * C + c) * L;
                    double* drow = dx.data() + (static_cast<size_t>(b) * C + c) * L;
                    const double scale = (*gam)[c] * (*istd)[c];
                    if (train) {
                        const double mg = gsum[c] * invM, mgh = ghsum[c] * invM;
                        for (int l = 0; l < L; ++l)
                            drow[l] = scale * (grow[l] - mg - hrow[l] * mgh);
                    } else {
                        for (int l = 0; l < L; ++l) drow[l] = scale * grow[l];
                    }
                }
            }
            add_into(t, px, static_cast<int>(dx.size()), dx);
        }
        if (pg >= 0) add_into(t, pg, C, dgamma);
        if (pb >= 0) add_into(t, pb, C, dbeta);
    });
    return y;
}

Tensor relu(Tape* tp, const Tensor& x) {
    Tensor y;
    y.shape = x.shape;
    y.data = std::make_shared<std::vector<double>>(x.vec());
    for (double& v : y.vec())
        if (v < 0.0) v = 0.0;
    const int px = node_on(tp, x);
    auto xd = x.data;
    track(tp, y, {px}, [=](Tape& t, const std::vector<double>& g) {
        auto* buf = t.grad_buf(px, static_cast<int>(g.size()));
        if (!buf) return;
        for (size_t i = 0; i < g.size(); ++i)
            if ((*xd)[i] > 0.0) (*buf)[i] += g[i];
    });
    return y;
}

Tensor linear(Tape* tp, const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(x.ndim() == 2, "linear input must be [B,F], got " + shape_str(x.shape));
    require(w.ndim() == 2, "linear weight must be [F,G]");
    const int B = x.dim(0), F = x.dim(1), G = w.dim(1);
    require(w.dim(0) == F, "linear weight mismatch: x " + shape_str(x.shape) + " vs w " + shape_str(w.shape));
    require(bias.numel() == G, "linear bias size mismatch");

    Tensor y({B, G});
    kernels::linear_forward(x.ptr(), w.ptr(), bias.ptr(), y.ptr(), B, F, G);

    const int px = node_on(tp, x), pw = node_on(tp, w), pb = node_on(tp, bias);
    auto xd = x.data, wd = w.data;
    track(tp, y, {px, pw, pb}, [=](Tape& t, const std::vector<double>& g) {
        if (px >= 0) {
            std::vector<double> dx(static_cast<size_t>(B) * F);
            kernels::linear_backward_input(g.data(), wd->data(), dx.data(), B, F, G);
            add_into(t, px, static_cast<int>(dx.size()), dx);
        }
        if (pw >= 0 || pb >= 0) {
            std::vector<double> dw(static_cast<size_t>(F) * G), db(static_cast<size_t>(G));
            kernels::linear_backward_weights(g.data(), xd->data(), dw.data(), db.data(), B, F, G);
            if (pw >= 0) add_into(t, pw, static_cast<int>(dw.size()), dw);
            if (pb >= 0) add_into(t, pb, G, db);
        }
    });
    return y;
}

Tensor matmul_batched(Tape* tp, const Tensor& a, const Tensor& b, bool ta, bool tb) {
    require(a.ndim() == 3 && b.ndim() == 3, "matmul_batched operands must be rank 3");
    const int batch = a.dim(0);
    require(b.dim(0) == batch, "matmul_batched batch mismatch");
    const int M = ta ? a.dim(2) : a.dim(1);
    const int Ka = ta ? a.dim(1) : a.dim(2);
    const int Kb = tb ? b.dim(2) : b.dim(1);
    const int P = tb ? b.dim(1) : b.dim(2);
    require(Ka == Kb, "matmul_batched inner dim mismatch: " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const int K = Ka;

    Tensor c({batch, M, P});
    kernels::bmm(a.ptr(), ta, b.ptr(), tb, c.ptr(), batch, M, K, P);

    const int pa = node_on(tp, a), pb = node_on(tp, b);
    auto ad = a.data, bd = b.data;
    track(tp, c, {pa, pb}, [=](Tape& t, const std::vector<double>& g) {
        if (pa >= 0) {
            std::vector<double> da(ad->size());
            if (!ta)
                kernels::bmm(g.data(), false, bd->data(), !tb, da.data(), batch, M, P, K);
            else
                kernels::bmm(bd->data(), tb, g.data(), true, da.data(), batch, K, P, M);
            add_into(t, pa, static_cast<int>(da.size()), da);
        }
        if (pb >= 0) {
            std::vector<double> db(bd->size());
            if (!tb)
                kernels::bmm(ad->data(), !ta, g.data(), false, db.data(), batch, K, M, P);
            else
                kernels::bmm(g.data(), true, ad->data(), ta, db.data(), batch, P, M, K);
            add_into(t, pb, static_cast<int>(db.size()), db);
        }
    });
    return c;
}

Tensor softmax_lastdim(Tape* tp, const Tensor& x) {
    require(x.ndim() >= 1, "softmax_lastdim needs at least one axis");
    const int n = x.dim(x.ndim() - 1);
    const int rows = x.numel() / n;

    Tensor y;
    y.shape = x.shape;
    y.data = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const double* xi = x.ptr() + static_cast<size_t>(r) * n;
        double* yi = y.ptr() + static_cast<size_t>(r) * n;
        double m = xi[0];
        for (int i = 1; i < n; ++i) m = std::max(m, xi[i]);
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            yi[i] = std::exp(xi[i] - m);
            s += yi[i];
        }
        const double inv = 1.0 / s;
        for (int i = 0; i < n; ++i) yi[i] *= inv;
    }

    const int px = node_on(tp, x);
    auto yd = y.data;
    track(tp, y, {px}, [=](Tape& t, const std::vector<double>& g) {
        auto* buf = t.grad_buf(px, static_cast<int>(g.size()));
        if (!buf) return;
        double* dst = buf->data();
#pragma omp parallel for schedule(static)
        for (int r = 0; r < rows; ++r) {
            const double* yi = yd->data() + static_cast<size_t>(r) * n;
            const double* gi = g.data() + static_cast<size_t>(r) * n;
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += gi[i] * yi[i];
            double* di = dst + static_cast<size_t>(r) * n;
            for (int i = 0; i < n; ++i) di[i] += yi[i] * (gi[i] - dot);
        }
    });
    return y;
}

Tensor global_avg_pool(Tape* tp, const Tensor& x) {
    require(x.ndim() == 3, "global_avg_pool input must be [B,C,L]");
    const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
    Tensor y({B, C});
    const double inv = 1.0 / L;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* row = x.ptr() + (static_cast<size_t>(b) * C + c) * L;
            double s = 0.0;
            for (int l = 0; l < L; ++l) s += row[l];
            y.vec()[static_cast<size_t>(b) * C + c] = s * inv;
        }

    const int px = node_on(tp, x);
    track(tp, y, {px}, [=](Tape& t, const std::vector<double>& g) {
        auto* buf = t.grad_buf(px, B * C * L);
        if (!buf) return;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const double gv = g[static_cast<size_t>(b) * C + c] * inv;
                double* row = buf->data() + (static_cast<size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) row[l] += gv;
            }
    });
    return y;
}

Tensor l2_normalize(Tape* tp, const Tensor& x, double eps) {
    require(x.ndim() == 2, "l2_normalize input must be [B,F]");
    const int B = x.dim(0), F = x.dim(1);
    Tensor y({B, F});
    auto norms = std::make_shared<std::vector<double>>(B);
    for (int b = 0; b < B; ++b) {
        const double* xi = x.ptr() + static_cast<size_t>(b) * F;
        double s = 0.0;
        for (int f = 0; f < F; ++f) s += xi[f] * xi[f];
        const double n = std::sqrt(s);
        (*norms)[b] = n;
        const double inv = 1.0 / std::max(n, eps);
        double* yi = y.ptr() + static_cast<size_t>(b) * F;
        for (int f = 0; f < F; ++f) yi[f] = xi[f] * inv;
    }

    const int px = node_on(tp, x);
    auto yd = y.data;
    track(tp, y, {px}, [=](Tape& t, const std::vector<double>& g) {
        auto* buf = t.grad_buf(px, B * F);
        if (!buf) return;
        for (int b = 0; b < B; ++b) {
            const double* yi = yd->data() + static_cast<size_t>(b) * F;
            const double* gi = g.data() + static_cast<size_t>(b) * F;
            double* di = buf->data() + static_cast<size_t>(b) * F;
            const double n = (*norms)[b];
            if (n > eps) {
                double dot = 0.0;
                for (int f = 0; f < F; ++f) dot += yi[f] * gi[f];
                const double inv = 1.0 / n;
                for (int f = 0; f < F; ++f) di[f] += (gi[f] - yi[f] * dot) * inv;
            } else {
                const double inv = 1.0 / eps;
                for (int f = 0; f < F; ++f) di[f] += gi[f] * inv;
            }
        }
    });
    return y;
}

Tensor add(Tape* tp, const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "add shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tensor y;
    y.shape = a.shape;
    y.data = std::make_shared<std::vector<double>>(a.vec());
    for (size_t i = 0; i < y.vec().size(); ++i) y.vec()[i] += b.vec()[i];

    const int pa = node_on(tp, a), pb = node_on(tp, b);
    track(tp, y, {pa, pb}, [=](Tape& t, const std::vector<double>& g) {
        add_into(t, pa, static_cast<int>(g.size()), g);
        add_into(t, pb, static_cast<int>(g.size()), g);
    });
    return y;
}

Tensor scale_const(Tape* tp, const Tensor& x, double c) {
    Tensor y;
    y.shape = x.shape;
    y.data = std::make_shared<std::vector<double>>(x.vec());
    for (double& v : y.vec()) v *= c;
    const int px = node_on(tp, x);
    track(tp, y, {px}, [=](Tape& t, const std::vector<double>& g) {
        auto* buf = t.grad_buf(px, static_cast<int>(g.size()));
        if (!buf) return;
        for (size_t i = 0; i < g.size(); ++i) (*buf)[i] += c * g[i];
    });
    return y;
}

Tensor scale_by(Tape* tp, const Tensor& x, const Tensor& s) {
    require(s.numel() == 1, "scale_by expects a [1] scalar tensor");
    const double sv = s.vec()[0];
    Tensor y;
    y.shape = x.shape;
    y.data = std::make_shared<std::vector<double>>(x.vec());
    for (double& v : y.vec()) v *= sv;

    const int px = node_on(tp, x), ps = node_on(tp, s);
    auto xd = x.data;
    track(tp, y, {px, ps}, [=](Tape& t, const std::vector<double>& g) {
        if (px >= 0) {
            auto* buf = t.grad_buf(px, static_cast<int>(g.size()));
            for (size_t i = 0; i < g.size(); ++i) (*buf)[i] += sv * g[i];
        }
        if (ps >= 0) {
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) acc += (*xd)[i] * g[i];
            auto* buf = t.grad_buf(ps, 1);
            (*buf)[0] += acc;
        }
    });
    return y;
}

Tensor concat_channels(Tape* tp, const std::vector<Tensor>& xs) {
    require(!xs.empty(), "concat_channels needs at least one input");
    const int B = xs[0].dim(0), L = xs[0].dim(2);
    int Ctot = 0;
    for (const auto& x : xs) {
        require(x.ndim() == 3 && x.dim(0) == B && x.dim(2) == L,
                "concat_channels operands must agree on batch and length");
        Ctot += x.dim(1);
    }
    Tensor y({B, Ctot, L});
    int coff = 0;
    for (const auto& x : xs) {
        const int C = x.dim(1);
        for (int b = 0; b < B; ++b)
            std::memcpy(y.ptr() + (static_cast<size_t>(b) * Ctot + coff) * L,
                        x.ptr() + static_cast<size_t>(b) * C * L,
                        sizeof(double) * static_cast<size_t>(C) * L);
        coff += C;
    }

    std::vector<int> parents;
    std::vector<int> chans;
    bool any = false;
    for (const auto& x : xs) {
        parents.push_back(node_on(tp, x));
        chans.push_back(x.dim(1));
        if (parents.back() >= 0) any = true;
    }
    if (tp && any) {
        y.node = tp->add_node(y.numel(), [=](Tape& t, const std::vector<double>& g) {
            int off = 0;
            for (size_t i = 0; i < parents.size(); ++i) {
                const int C = chans[i];
                if (parents[i] >= 0) {
                    auto* buf = t.grad_buf(parents[i], B * C * L);
                    for (int b = 0; b < B; ++b) {
                        const double* src = g.data() + (static_cast<size_t>(b) * Ctot + off) * L;
                        double* dst = buf->data() + static_cast<size_t>(b) * C * L;
                        for (int j = 0; j < C * L; ++j) dst[j] += src[j];
                    }
                }
                off += C;
            }
        });
        y.tape_id = tp->id();
    }
    return y;
}

Tensor concat_rows(Tape* tp, const std::vector<Tensor>& xs) {
    require(!xs.empty(), "concat_rows needs at least one input");
    const int F = xs[0].dim(1);
    int Btot = 0;
    for (const auto& x : xs) {
        require(x.ndim() == 2 && x.dim(1) == F, "concat_rows operands must agree on width");
        Btot += x.dim(0);
    }
    Tensor y({Btot, F});
    int roff = 0;
    for (const auto& x : xs) {
        std::memcpy(y.ptr() + static_cast<size_t>(roff) * F, x.ptr(),
                    sizeof(double) * static_cast<size_t>(x.numel()));
        roff += x.dim(0);
    }

    std::vector<int> parents, rows;
    bool any = false;
    for (const auto& x : xs) {
        parents.push_back(node_on(tp, x));
        rows.push_back(x.dim(0));
        if (parents.back() >= 0) any = true;
    }
    if (tp && any) {
        y.node = tp->add_node(y.numel(), [=](Tape& t, const std::vector<double>& g) {
            int off = 0;
            for (size_t i = 0; i < parents.size(); ++i) {
                const int Bi = rows[i];
                if (parents[i] >= 0) {
                    auto* buf = t.grad_buf(parents[i], Bi * F);
                    const double* src = g.data() + static_cast<size_t>(off) * F;
                    for (int j = 0; j < Bi * F; ++j) (*buf)[j] += src[j];
                }
                off += Bi;
            }
        });
        y.tape_id = tp->id();
    }
    return y;
}

// ---- grad_check ---------------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor(Tape*, std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double rel_tol, double h) {
    // analytic pass
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        for (auto& in : inputs) tape.leaf(in);
        Tensor out = f(&tape, inputs);
        tape.backward(out);
        for (auto& in : inputs) {
            const auto& g = tape.grad(in);
            analytic.push_back(g.empty() ? std::vector<double>(static_cast<size_t>(in.numel()), 0.0)
                                         : g);
        }
    }

    GradCheckResult res;
    res.max_rel_err = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto& vals = inputs[i].vec();
        for (size_t j = 0; j < vals.size(); ++j) {
            const double saved = vals[j];
            vals[j] = saved + h;
            const double fp = f(nullptr, inputs).value();
            vals[j] = saved - h;
            const double fm = f(nullptr, inputs).value();
            vals[j] = saved;
            const double gn = (fp - fm) / (2.0 * h);
            const double ga = analytic[i][j];
            const double rel = std::abs(ga - gn) / std::max({1.0, std::abs(ga), std::abs(gn)});
            res.max_rel_err = std::max(res.max_rel_err, rel);
        }
    }
    res.pass = res.max_rel_err < rel_tol;
    return res;
}

// ---- ParamStore -----------------------------------------------------------------

Tensor& ParamStore::add_param(const std::string& name, Tensor t) {
    if (params_.count(name) || buffers_.count(name))
        fail("DuplicateParam", "parameter name already registered: " + name);
    param_order_.push_back(name);
    grads_[name].assign(static_cast<size_t>(t.numel()), 0.0);
    return params_[name] = std::move(t);
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor t) {
    if (params_.count(name) || buffers_.count(name))
        fail("DuplicateParam", "buffer name already registered: " + name);
    buffer_order_.push_back(name);
    return buffers_[name] = std::move(t);
}

Tensor& ParamStore::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail("UnknownParam", "no parameter named " + name);
    return it->second;
}

const Tensor& ParamStore::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("UnknownParam", "no parameter named " + name);
    return it->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) fail("UnknownParam", "no buffer named " + name);
    return it->second;
}

std::vector<double>& ParamStore::grad(const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) fail("UnknownParam", "no gradient buffer named " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, g] : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void ParamStore::watch_all(Tape& tp) {
    for (const auto& name : param_order_) tp.leaf(params_[name]);
}

void ParamStore::collect_grads(const Tape& tp) {
    for (const auto& name : param_order_) {
        const Tensor& p = params_[name];
        const auto& g = tp.grad(p);
        auto& dst = grads_[name];
        if (g.empty())
            std::fill(dst.begin(), dst.end(), 0.0);
        else
            dst = g;
    }
}

std::int64_t ParamStore::total_params() const {
    std::int64_t n = 0;
    for (const auto& name : param_order_) n += params_.at(name).numel();
    return n;
}

} // namespace crossecg
