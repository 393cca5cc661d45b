#include "volcon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace volcon {

using detail::Node;
using detail::NodePtr;

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) {
        if (d == 0) throw ContractError("Tensor: zero dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

NodePtr new_node(Shape shape, std::vector<double> value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    auto n = new_node(std::move(shape), std::move(value), rg);
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return Tensor(std::move(n));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
}

// --- raw matmul kernels, accumulate into C ---

// C[m,n] += A[m,k] * B[k,n]
void mm_acc(const double* A, const double* B, double* C, std::size_t m,
            std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* Ci = C + i * n;
        const double* Ai = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = Ai[p];
            if (a == 0.0) continue;
            const double* Bp = B + p * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(const double* A, const double* B, double* C, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* Ai = A + i * k;
        double* Ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* Bj = B + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
            Ci[j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
void mm_tn_acc(const double* A, const double* B, double* C, std::size_t k,
               std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* Ap = A + p * m;
        const double* Bp = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double a = Ap[i];
            if (a == 0.0) continue;
            double* Ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<double>(n, v), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw ContractError("Tensor::from_data: " + std::to_string(data.size()) +
                            " elements do not fill shape " + shape_str(shape));
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

double Tensor::value() const {
    if (size() != 1)
        throw ContractError("Tensor::value: tensor of shape " + shape_str(shape()) +
                            " is not scalar");
    return n_->value[0];
}

// ---------------------------------------------------------------------------
// Elementwise and linear ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) pb->grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * s;
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), {pa}, [pa, s](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i) pa->grad[i] += s * self.grad[i];
    });
}

Tensor add_bias(const Tensor& m, const Tensor& bias) {
    if (m.shape().size() != 2 || bias.shape().size() != 1 ||
        m.shape()[1] != bias.shape()[0])
        throw ContractError("add_bias: shape mismatch " + shape_str(m.shape()) + " vs " +
                            shape_str(bias.shape()));
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    std::vector<double> v(m.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = m.data()[i * c + j] + bias.data()[j];
    auto pm = m.node(), pb = bias.node();
    return make_op(m.shape(), std::move(v), {pm, pb}, [pm, pb, r, c](Node& self) {
        if (pm->requires_grad) {
            pm->ensure_grad();
            for (std::size_t i = 0; i < r * c; ++i) pm->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pb->grad[j] += self.grad[i * c + j];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ContractError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> v(m * n, 0.0);
    mm_acc(a.data().data(), b.data().data(), v.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return make_op({m, n}, std::move(v), {pa, pb}, [pa, pb, m, k, n](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            mm_nt_acc(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            mm_tn_acc(pa->value.data(), self.grad.data(), pb->grad.data(), m, k, n);
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2)
        throw ContractError("transpose: expected 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = a.data()[i * c + j];
    auto pa = a.node();
    return make_op({c, r}, std::move(v), {pa}, [pa, r, c](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) pa->grad[i * c + j] += self.grad[j * r + i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), {pa}, [pa](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i)
            if (pa->value[i] > 0.0) pa->grad[i] += self.grad[i];
    });
}

Tensor tsum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto pa = a.node();
    return make_op({1}, {s}, {pa}, [pa](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < pa->value.size(); ++i) pa->grad[i] += self.grad[0];
    });
}

Tensor tmean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    auto pa = a.node();
    return make_op({1}, {s * inv}, {pa}, [pa, inv](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < pa->value.size(); ++i)
            pa->grad[i] += self.grad[0] * inv;
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw ContractError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                            shape_str(shape));
    auto pa = a.node();
    return make_op(std::move(shape), a.data(), {pa}, [pa](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i) pa->grad[i] += self.grad[i];
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
        throw ContractError("concat_rows: shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    const std::size_t ra = a.shape()[0], rb = b.shape()[0], c = a.shape()[1];
    std::vector<double> v;
    v.reserve((ra + rb) * c);
    v.insert(v.end(), a.data().begin(), a.data().end());
    v.insert(v.end(), b.data().begin(), b.data().end());
    auto pa = a.node(), pb = b.node();
    return make_op({ra + rb, c}, std::move(v), {pa, pb}, [pa, pb, ra, c](Node& self) {
        const std::size_t na = ra * c;
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < na; ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = na; i < self.size(); ++i) pb->grad[i - na] += self.grad[i];
        }
    });
}

Tensor sum_over_set(const Tensor& a, std::size_t group) {
    if (a.shape().size() != 2)
        throw ContractError("sum_over_set: expected 2-d tensor, got " + shape_str(a.shape()));
    if (group == 0 || a.shape()[0] % group != 0)
        throw ContractError("sum_over_set: row count " + std::to_string(a.shape()[0]) +
                            " not divisible by group " + std::to_string(group));
    const std::size_t g = a.shape()[0] / group, f = a.shape()[1];
    std::vector<double> v(g * f, 0.0);
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < group; ++j)
            for (std::size_t t = 0; t < f; ++t)
                v[i * f + t] += a.data()[(i * group + j) * f + t];
    auto pa = a.node();
    return make_op({g, f}, std::move(v), {pa}, [pa, g, group, f](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < g; ++i)
            for (std::size_t j = 0; j < group; ++j)
                for (std::size_t t = 0; t < f; ++t)
                    pa->grad[(i * group + j) * f + t] += self.grad[i * f + t];
    });
}

Tensor l2_normalize_rows(const Tensor& a) {
    if (a.shape().size() != 2)
        throw ContractError("l2_normalize_rows: expected 2-d tensor, got " +
                            shape_str(a.shape()));
    constexpr double kFloor = 1e-12;
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> v(a.size());
    std::vector<double> denoms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += a.data()[i * c + j] * a.data()[i * c + j];
        const double norm = std::sqrt(sq);
        denoms[i] = std::max(norm, kFloor);
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.data()[i * c + j] / denoms[i];
    }
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), {pa},
                   [pa, r, c, denoms = std::move(denoms)](Node& self) {
                       pa->ensure_grad();
                       for (std::size_t i = 0; i < r; ++i) {
                           const double* y = self.value.data() + i * c;
                           const double* dy = self.grad.data() + i * c;
                           const bool floored = denoms[i] <= kFloor;
                           double ydy = 0.0;
                           if (!floored)
                               for (std::size_t j = 0; j < c; ++j) ydy += y[j] * dy[j];
                           for (std::size_t j = 0; j < c; ++j)
                               pa->grad[i * c + j] +=
                                   (dy[j] - (floored ? 0.0 : y[j] * ydy)) / denoms[i];
                       }
                   });
}

// ---------------------------------------------------------------------------
// Convolution via im2col + matmul, pooling, cross-entropy
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    std::size_t n, cin, h, w, cout, kh, kw, stride, pad, hout, wout;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, std::size_t stride,
                   std::size_t pad) {
    if (x.shape().size() != 4 || w.shape().size() != 4 || x.shape()[1] != w.shape()[1])
        throw ContractError("conv2d: shape mismatch " + shape_str(x.shape()) + " vs " +
                            shape_str(w.shape()));
    if (stride == 0) throw ContractError("conv2d: stride must be >= 1");
    ConvDims d;
    d.n = x.shape()[0];
    d.cin = x.shape()[1];
    d.h = x.shape()[2];
    d.w = x.shape()[3];
    d.cout = w.shape()[0];
    d.kh = w.shape()[2];
    d.kw = w.shape()[3];
    d.stride = stride;
    d.pad = pad;
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
        throw ContractError("conv2d: kernel " + shape_str(w.shape()) +
                            " larger than padded input " + shape_str(x.shape()));
    d.hout = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wout = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// col: [cin*kh*kw, hout*wout] for one sample.
void im2col(const double* x, const ConvDims& d, double* col) {
    const std::size_t hw = d.hout * d.wout;
    for (std::size_t c = 0; c < d.cin; ++c)
        for (std::size_t ky = 0; ky < d.kh; ++ky)
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                double* row = col + ((c * d.kh + ky) * d.kw + kx) * hw;
                for (std::size_t oy = 0; oy < d.hout; ++oy) {
                    const long long iy = static_cast<long long>(oy * d.stride + ky) -
                                         static_cast<long long>(d.pad);
                    for (std::size_t ox = 0; ox < d.wout; ++ox) {
                        const long long ix = static_cast<long long>(ox * d.stride + kx) -
                                             static_cast<long long>(d.pad);
                        double v = 0.0;
                        if (iy >= 0 && iy < static_cast<long long>(d.h) && ix >= 0 &&
                            ix < static_cast<long long>(d.w))
                            v = x[(c * d.h + static_cast<std::size_t>(iy)) * d.w +
                                  static_cast<std::size_t>(ix)];
                        row[oy * d.wout + ox] = v;
                    }
                }
            }
}

void col2im_acc(const double* col, const ConvDims& d, double* dx) {
    const std::size_t hw = d.hout * d.wout;
    for (std::size_t c = 0; c < d.cin; ++c)
        for (std::size_t ky = 0; ky < d.kh; ++ky)
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const double* row = col + ((c * d.kh + ky) * d.kw + kx) * hw;
                for (std::size_t oy = 0; oy < d.hout; ++oy) {
                    const long long iy = static_cast<long long>(oy * d.stride + ky) -
                                         static_cast<long long>(d.pad);
                    if (iy < 0 || iy >= static_cast<long long>(d.h)) continue;
                    for (std::size_t ox = 0; ox < d.wout; ++ox) {
                        const long long ix = static_cast<long long>(ox * d.stride + kx) -
                                             static_cast<long long>(d.pad);
                        if (ix < 0 || ix >= static_cast<long long>(d.w)) continue;
                        dx[(c * d.h + static_cast<std::size_t>(iy)) * d.w +
                           static_cast<std::size_t>(ix)] += row[oy * d.wout + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride, std::size_t pad) {
    const ConvDims d = conv_dims(x, w, stride, pad);
    if (bias.shape().size() != 1 || bias.shape()[0] != d.cout)
        throw ContractError("conv2d: bias shape " + shape_str(bias.shape()) +
                            " does not match " + std::to_string(d.cout) + " filters");
    const std::size_t hw = d.hout * d.wout;
    const std::size_t ckk = d.cin * d.kh * d.kw;
    const std::size_t in_stride = d.cin * d.h * d.w;
    const std::size_t out_stride = d.cout * hw;

    std::vector<double> out(d.n * out_stride, 0.0);
    std::vector<double> col(ckk * hw);
    for (std::size_t i = 0; i < d.n; ++i) {
        im2col(x.data().data() + i * in_stride, d, col.data());
        double* out_i = out.data() + i * out_stride;
        mm_acc(w.data().data(), col.data(), out_i, d.cout, ckk, hw);
        for (std::size_t o = 0; o < d.cout; ++o) {
            const double b = bias.data()[o];
            for (std::size_t p = 0; p < hw; ++p) out_i[o * hw + p] += b;
        }
    }

    auto px = x.node(), pw = w.node(), pb = bias.node();
    return make_op({d.n, d.cout, d.hout, d.wout}, std::move(out), {px, pw, pb},
                   [px, pw, pb, d, hw, ckk, in_stride, out_stride](Node& self) {
                       std::vector<double> col(ckk * hw);
                       std::vector<double> dcol(ckk * hw);
                       for (std::size_t i = 0; i < d.n; ++i) {
                           const double* dout_i = self.grad.data() + i * out_stride;
                           if (pw->requires_grad || pb->requires_grad) {
                               if (pw->requires_grad) {
                                   im2col(px->value.data() + i * in_stride, d, col.data());
                                   pw->ensure_grad();
                                   mm_nt_acc(dout_i, col.data(), pw->grad.data(), d.cout,
                                             hw, ckk);
                               }
                               if (pb->requires_grad) {
                                   pb->ensure_grad();
                                   for (std::size_t o = 0; o < d.cout; ++o) {
                                       double s = 0.0;
                                       for (std::size_t p = 0; p < hw; ++p)
                                           s += dout_i[o * hw + p];
                                       pb->grad[o] += s;
                                   }
                               }
                           }
                           if (px->requires_grad) {
                               px->ensure_grad();
                               std::fill(dcol.begin(), dcol.end(), 0.0);
                               mm_tn_acc(pw->value.data(), dout_i, dcol.data(), d.cout,
                                         ckk, hw);
                               col2im_acc(dcol.data(), d, px->grad.data() + i * in_stride);
                           }
                       }
                   });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
    if (x.shape().size() != 4)
        throw ContractError("avg_pool2d: expected 4-d tensor, got " + shape_str(x.shape()));
    if (k == 0) throw ContractError("avg_pool2d: kernel must be >= 1");
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                      w = x.shape()[3];
    const std::size_t ho = h / k, wo = w / k;
    if (ho == 0 || wo == 0)
        throw ContractError("avg_pool2d: kernel " + std::to_string(k) +
                            " larger than input " + shape_str(x.shape()));
    const double inv = 1.0 / static_cast<double>(k * k);
    std::vector<double> out(n * c * ho * wo);
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = x.data().data() + i * h * w;
        double* dst = out.data() + i * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx)
                        acc += src[(oy * k + ky) * w + ox * k + kx];
                dst[oy * wo + ox] = acc * inv;
            }
    }
    auto px = x.node();
    return make_op({n, c, ho, wo}, std::move(out), {px},
                   [px, n, c, h, w, ho, wo, k, inv](Node& self) {
                       px->ensure_grad();
                       for (std::size_t i = 0; i < n * c; ++i) {
                           double* dst = px->grad.data() + i * h * w;
                           const double* g = self.grad.data() + i * ho * wo;
                           for (std::size_t oy = 0; oy < ho; ++oy)
                               for (std::size_t ox = 0; ox < wo; ++ox) {
                                   const double v = g[oy * wo + ox] * inv;
                                   for (std::size_t ky = 0; ky < k; ++ky)
                                       for (std::size_t kx = 0; kx < k; ++kx)
                                           dst[(oy * k + ky) * w + ox * k + kx] += v;
                               }
                       }
                   });
}

Tensor global_mean_pool(const Tensor& x) {
    if (x.shape().size() != 4)
        throw ContractError("global_mean_pool: expected 4-d tensor, got " +
                            shape_str(x.shape()));
    const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    const double inv = 1.0 / static_cast<double>(hw);
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        const double* src = x.data().data() + i * hw;
        for (std::size_t p = 0; p < hw; ++p) acc += src[p];
        out[i] = acc * inv;
    }
    auto px = x.node();
    return make_op({n, c}, std::move(out), {px}, [px, n, c, hw, inv](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < n * c; ++i) {
            const double v = self.grad[i] * inv;
            double* dst = px->grad.data() + i * hw;
            for (std::size_t p = 0; p < hw; ++p) dst[p] += v;
        }
    });
}

Tensor softmax_cross_entropy_rows(const Tensor& logits,
                                  const std::vector<std::size_t>& targets) {
    if (logits.shape().size() != 2)
        throw ContractError("softmax_cross_entropy_rows: expected 2-d logits, got " +
                            shape_str(logits.shape()));
    const std::size_t r = logits.shape()[0], c = logits.shape()[1];
    if (targets.size() != r)
        throw ContractError("softmax_cross_entropy_rows: " + std::to_string(targets.size()) +
                            " targets for " + std::to_string(r) + " rows");
    for (auto t : targets)
        if (t >= c) throw ContractError("softmax_cross_entropy_rows: target out of range");

    std::vector<double> probs(r * c);
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = logits.data().data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(row[j] - mx);
            sum += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
        loss += std::log(sum) - (row[targets[i]] - mx);
    }
    loss /= static_cast<double>(r);

    auto pl = logits.node();
    const double inv = 1.0 / static_cast<double>(r);
    return make_op({1}, {loss}, {pl},
                   [pl, r, c, inv, targets, probs = std::move(probs)](Node& self) {
                       pl->ensure_grad();
                       const double up = self.grad[0] * inv;
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               pl->grad[i * c + j] +=
                                   up * (probs[i * c + j] - (j == targets[i] ? 1.0 : 0.0));
                   });
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward: loss must be a scalar tensor");
    NodePtr root = loss.node();
    if (root->backward_done)
        throw ContractError("backward: already invoked on this graph; rebuild the "
                            "graph before calling again");
    if (!root->requires_grad) {
        root->backward_done = true;
        return;
    }

    // Iterative post-order DFS; reverse of the resulting order is a valid
    // topological order for the backward sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
    root->backward_done = true;
}

// ---------------------------------------------------------------------------
// ParamStore and VOLP persistence
// ---------------------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (find(name)) throw ContractError("ParamStore: duplicate name '" + name + "'");
    items.emplace_back(name, std::move(t));
    return items.back().second;
}

Tensor* ParamStore::find(const std::string& name) {
    for (auto& [n, t] : items)
        if (n == name) return &t;
    return nullptr;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return &t;
    return nullptr;
}

void ParamStore::zero_grad() {
    for (auto& [n, t] : items) {
        auto& g = t.grad();
        std::fill(g.begin(), g.end(), 0.0);
    }
}

void ParamStore::set_requires_grad(bool b) {
    for (auto& [n, t] : items) t.set_requires_grad(b);
}

std::size_t ParamStore::total_size() const {
    std::size_t s = 0;
    for (const auto& [n, t] : items) s += t.size();
    return s;
}

namespace {

constexpr char kVolpMagic[4] = {'V', 'O', 'L', 'P'};
constexpr std::uint32_t kVolpVersion = 1;

void write_u32le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& in, const char* field) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(std::string("VOLP: truncated while reading ") + field);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64le(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64le(std::istream& in, const char* field) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw FormatError(std::string("VOLP: truncated while reading ") + field);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_params(const ParamStore& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_params: cannot open '" + path + "' for writing");
    out.write(kVolpMagic, 4);
    write_u32le(out, kVolpVersion);
    write_u32le(out, static_cast<std::uint32_t>(params.items.size()));
    for (const auto& [name, t] : params.items) {
        write_u32le(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32le(out, static_cast<std::uint32_t>(t.shape().size()));
        for (auto d : t.shape()) write_u32le(out, static_cast<std::uint32_t>(d));
        for (double v : t.data()) write_f64le(out, v);
    }
    out.flush();
    if (!out) throw IoError("save_params: write failure on '" + path + "'");
}

ParamStore load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_params: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kVolpMagic, 4) != 0)
        throw FormatError("VOLP: bad magic in '" + path + "'");
    const std::uint32_t version = read_u32le(in, "version");
    if (version != kVolpVersion)
        throw FormatError("VOLP: unsupported version " + std::to_string(version));
    const std::uint32_t count = read_u32le(in, "record count");
    ParamStore store;
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint32_t name_len = read_u32le(in, "name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw FormatError("VOLP: truncated while reading record name");
        const std::uint32_t ndim = read_u32le(in, "rank");
        Shape shape(ndim);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = read_u32le(in, "dimension");
            if (d == 0) throw FormatError("VOLP: zero dimension in record '" + name + "'");
            numel *= d;
        }
        std::vector<double> data(numel);
        for (auto& v : data) v = read_f64le(in, "payload");
        store.add(name, Tensor::from_data(std::move(shape), std::move(data), true));
    }
    return store;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<Tensor(ParamStore&)>& fn,
                         ParamStore& params, double epsilon,
                         std::size_t max_coords_per_tensor,
                         std::uint64_t coord_seed) {
    params.zero_grad();
    Tensor loss = fn(params);
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.items.size());
    for (auto& [name, t] : params.items) analytic.push_back(t.grad());

    // Forward-only evaluations for the stencil.
    params.set_requires_grad(false);
    double max_rel = 0.0;
    Rng rng(coord_seed);
    for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
        auto& t = params.items[pi].second;
        std::vector<std::size_t> coords;
        if (max_coords_per_tensor == 0 || t.size() <= max_coords_per_tensor) {
            coords.resize(t.size());
            for (std::size_t i = 0; i < t.size(); ++i) coords[i] = i;
        } else {
            std::unordered_set<std::size_t> seen;
            while (seen.size() < max_coords_per_tensor)
                seen.insert(static_cast<std::size_t>(rng.below(t.size())));
            coords.assign(seen.begin(), seen.end());
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t i : coords) {
            const double original = t.data()[i];
            t.data()[i] = original + epsilon;
            const double f_plus = fn(params).value();
            t.data()[i] = original - epsilon;
            const double f_minus = fn(params).value();
            t.data()[i] = original;
            const double fd = (f_plus - f_minus) / (2.0 * epsilon);
            const double ad = analytic[pi][i];
            const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
            max_rel = std::max(max_rel, rel);
        }
    }
    params.set_requires_grad(true);
    return max_rel;
}

}  // namespace volcon
