#include "mplbench/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mplbench::numerics {

namespace {

using detail::Node;

constexpr double kInvSqrt2 = 0.70710678118654752440;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                                shape_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_string(t.shape()));
    }
}

// Gradient buffer of parent i, or nullptr if that parent takes no gradient.
double* parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? p.grad.data() : nullptr;
}

const double* parent_data(const Node& self, std::size_t i) { return self.parents[i]->data.data(); }

// c[n x m] += a[n x k] * b[k x m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c[n x k] += g[n x m] * b[k x m]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g + i * m;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                acc += grow[j] * brow[j];
            }
            crow[p] += acc;
        }
    }
}

// c[k x m] += a[n x k]^T * g[n x m]
void gemm_tn(const double* a, const double* g, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        const double* grow = g + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                crow[j] += av * grow[j];
            }
        }
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    if (a.dim(1) != b.dim(0)) {
        shape_error("matmul", a.shape(), b.shape());
    }
    const std::size_t n = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t m = b.dim(1);
    std::vector<double> out(n * m, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), n, k, m);
    return Tensor::make_result({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
        const double* g = self.grad.data();
        if (double* ga = parent_grad(self, 0)) {
            gemm_nt(g, parent_data(self, 1), ga, n, m, k);
        }
        if (double* gb = parent_grad(self, 1)) {
            gemm_tn(parent_data(self, 0), g, gb, n, k, m);
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    const std::size_t n = a.dim(0);
    const std::size_t m = a.dim(1);
    std::vector<double> out(n * m);
    const auto src = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out[j * n + i] = src[i * m + j];
        }
    }
    return Tensor::make_result({m, n}, std::move(out), {a}, [n, m](Node& self) {
        double* ga = parent_grad(self, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                ga[i * m + j] += self.grad[j * n + i];
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_error("add", a.shape(), b.shape());
    }
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (double* gp = parent_grad(self, p)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    gp[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_error("sub", a.shape(), b.shape());
    }
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (double* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga[i] += self.grad[i];
            }
        }
        if (double* gb = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gb[i] -= self.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_error("mul", a.shape(), b.shape());
    }
    std::vector<double> out(a.numel());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* x = parent_data(self, 0);
        const double* y = parent_data(self, 1);
        if (double* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga[i] += self.grad[i] * y[i];
            }
        }
        if (double* gb = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gb[i] += self.grad[i] * x[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) {
        v *= factor;
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
        double* ga = parent_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i] * factor;
        }
    });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) {
        shape_error("scale_by", a.shape(), s.shape());
    }
    const double factor = s.item();
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) {
        v *= factor;
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, s}, [](Node& self) {
        const double* x = parent_data(self, 0);
        const double factor = parent_data(self, 1)[0];
        if (double* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga[i] += self.grad[i] * factor;
            }
        }
        if (double* gs = parent_grad(self, 1)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                acc += self.grad[i] * x[i];
            }
            gs[0] += acc;
        }
    });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
    require_rank("add_rowwise", a, 2);
    if (row.rank() != 1 || row.dim(0) != a.dim(1)) {
        shape_error("add_rowwise", a.shape(), row.shape());
    }
    const std::size_t n = a.dim(0);
    const std::size_t m = a.dim(1);
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto r = row.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out[i * m + j] += r[j];
        }
    }
    return Tensor::make_result(a.shape(), std::move(out), {a, row}, [n, m](Node& self) {
        if (double* ga = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                ga[i] += self.grad[i];
            }
        }
        if (double* gr = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    gr[j] += self.grad[i * m + j];
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank("layer_norm", x, 2);
    const std::size_t n = x.dim(0);
    const std::size_t m = x.dim(1);
    if (gain.shape() != Shape{m}) {
        shape_error("layer_norm", x.shape(), gain.shape());
    }
    if (bias.shape() != Shape{m}) {
        shape_error("layer_norm", x.shape(), bias.shape());
    }
    const auto in = x.data();
    const auto g = gain.data();
    const auto b = bias.data();
    std::vector<double> out(n * m);
    // Normalized values and inverse std are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(n * m);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = in.data() + i * m;
        double mu = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double r = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = r;
        for (std::size_t j = 0; j < m; ++j) {
            const double h = (row[j] - mu) * r;
            (*xhat)[i * m + j] = h;
            out[i * m + j] = h * g[j] + b[j];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gain, bias}, [n, m, xhat, inv_std](Node& self) {
            const double* g = parent_data(self, 1);
            const double* dy = self.grad.data();
            if (double* gx = parent_grad(self, 0)) {
                for (std::size_t i = 0; i < n; ++i) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < m; ++j) {
                        const double dh = dy[i * m + j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * (*xhat)[i * m + j];
                    }
                    mean_dh /= static_cast<double>(m);
                    mean_dh_h /= static_cast<double>(m);
                    const double r = (*inv_std)[i];
                    for (std::size_t j = 0; j < m; ++j) {
                        const double dh = dy[i * m + j] * g[j];
                        gx[i * m + j] += r * (dh - mean_dh - (*xhat)[i * m + j] * mean_dh_h);
                    }
                }
            }
            if (double* gg = parent_grad(self, 1)) {
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) {
                        gg[j] += dy[i * m + j] * (*xhat)[i * m + j];
                    }
                }
            }
            if (double* gb = parent_grad(self, 2)) {
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) {
                        gb[j] += dy[i * m + j];
                    }
                }
            }
        });
}

Tensor softmax(const Tensor& x) {
    if (x.rank() != 1 && x.rank() != 2) {
        throw std::invalid_argument("softmax: expected rank 1 or 2, got shape " +
                                    shape_string(x.shape()));
    }
    const std::size_t m = x.shape().back();
    const std::size_t n = x.numel() / m;
    const auto in = x.data();
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = in.data() + i * m;
        const double mx = *std::max_element(row, row + m);
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            out[i * m + j] = std::exp(row[j] - mx);
            total += out[i * m + j];
        }
        for (std::size_t j = 0; j < m; ++j) {
            out[i * m + j] /= total;
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [n, m](Node& self) {
        double* gx = parent_grad(self, 0);
        const double* y = self.data.data();
        const double* dy = self.grad.data();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                dot += dy[i * m + j] * y[i * m + j];
            }
            for (std::size_t j = 0; j < m; ++j) {
                gx[i * m + j] += y[i * m + j] * (dy[i * m + j] - dot);
            }
        }
    });
}

Tensor gelu(const Tensor& x) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * kInvSqrt2));
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        double* gx = parent_grad(self, 0);
        const double* in = parent_data(self, 0);
        const double inv_sqrt_2pi = std::numbers::inv_sqrtpi * kInvSqrt2;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = in[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            gx[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
    require_rank("embedding", table, 2);
    if (ids.empty()) {
        throw std::invalid_argument("embedding: empty id list");
    }
    const std::size_t rows = table.dim(0);
    const std::size_t m = table.dim(1);
    std::vector<std::size_t> index(ids.begin(), ids.end());
    std::vector<double> out(index.size() * m);
    const auto src = table.data();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= rows) {
            throw std::out_of_range("embedding: id " + std::to_string(index[i]) +
                                    " out of range for table " + shape_string(table.shape()));
        }
        std::copy_n(src.data() + index[i] * m, m, out.data() + i * m);
    }
    const std::size_t n = index.size();
    return Tensor::make_result({n, m}, std::move(out), {table},
                               [index = std::move(index), m](Node& self) {
                                   double* gt = parent_grad(self, 0);
                                   for (std::size_t i = 0; i < index.size(); ++i) {
                                       for (std::size_t j = 0; j < m; ++j) {
                                           gt[index[i] * m + j] += self.grad[i * m + j];
                                       }
                                   }
                               });
}

Tensor mean(const Tensor& x, std::size_t axis) {
    require_rank("mean", x, 2);
    if (axis > 1) {
        throw std::invalid_argument("mean: axis must be 0 or 1, got " + std::to_string(axis));
    }
    const std::size_t n = x.dim(0);
    const std::size_t m = x.dim(1);
    const auto in = x.data();
    const std::size_t out_len = axis == 0 ? m : n;
    const double inv = 1.0 / static_cast<double>(axis == 0 ? n : m);
    std::vector<double> out(out_len, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out[axis == 0 ? j : i] += in[i * m + j];
        }
    }
    for (auto& v : out) {
        v *= inv;
    }
    return Tensor::make_result({out_len}, std::move(out), {x}, [n, m, axis, inv](Node& self) {
        double* gx = parent_grad(self, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                gx[i * m + j] += self.grad[axis == 0 ? j : i] * inv;
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (const double v : x.data()) {
        total += v;
    }
    return Tensor::make_result({}, {total}, {x}, [](Node& self) {
        double* gx = parent_grad(self, 0);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) {
            gx[i] += g;
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> targets) {
    require_rank("cross_entropy", logits, 2);
    const std::size_t n = logits.dim(0);
    const std::size_t k = logits.dim(1);
    if (targets.size() != n) {
        shape_error("cross_entropy", logits.shape(), Shape{targets.size()});
    }
    const auto in = logits.data();
    auto probs = std::make_shared<std::vector<double>>(n * k);
    std::vector<std::uint32_t> target_copy(targets.begin(), targets.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] >= k) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                                    " >= number of classes " + std::to_string(k));
        }
        const double* row = in.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            z += std::exp(row[j] - mx);
        }
        const double log_z = mx + std::log(z);
        total += log_z - row[targets[i]];
        for (std::size_t j = 0; j < k; ++j) {
            (*probs)[i * k + j] = std::exp(row[j] - log_z);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return Tensor::make_result(
        {}, {total * inv_n}, {logits},
        [n, k, inv_n, probs, target_copy = std::move(target_copy)](Node& self) {
            double* gl = parent_grad(self, 0);
            const double g = self.grad[0] * inv_n;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    gl[i * k + j] += g * (*probs)[i * k + j];
                }
                gl[i * k + target_copy[i]] -= g;
            }
        });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank("slice_cols", x, 2);
    const std::size_t n = x.dim(0);
    const std::size_t m = x.dim(1);
    if (count == 0 || begin + count > m) {
        throw std::invalid_argument("slice_cols: columns [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") out of range for " +
                                    shape_string(x.shape()));
    }
    std::vector<double> out(n * count);
    const auto in = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(in.data() + i * m + begin, count, out.data() + i * count);
    }
    return Tensor::make_result({n, count}, std::move(out), {x}, [n, m, begin, count](Node& self) {
        double* gx = parent_grad(self, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                gx[i * m + begin + j] += self.grad[i * count + j];
            }
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: no inputs");
    }
    require_rank("concat_cols", parts.front(), 2);
    const std::size_t n = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank("concat_cols", p, 2);
        if (p.dim(0) != n) {
            shape_error("concat_cols", parts.front().shape(), p.shape());
        }
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto in = parts[p].data();
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(in.data() + i * widths[p], widths[p], out.data() + i * total + offset);
        }
        offset += widths[p];
    }
    return Tensor::make_result({n, total}, std::move(out), parts,
                               [n, total, widths = std::move(widths)](Node& self) {
                                   std::size_t offset = 0;
                                   for (std::size_t p = 0; p < widths.size(); ++p) {
                                       if (double* gp = parent_grad(self, p)) {
                                           for (std::size_t i = 0; i < n; ++i) {
                                               for (std::size_t j = 0; j < widths[p]; ++j) {
                                                   gp[i * widths[p] + j] +=
                                                       self.grad[i * total + offset + j];
                                               }
                                           }
                                       }
                                       offset += widths[p];
                                   }
                               });
}

Tensor replace_rows(const Tensor& x, std::span<const std::size_t> indices, const Tensor& row) {
    require_rank("replace_rows", x, 2);
    const std::size_t n = x.dim(0);
    const std::size_t m = x.dim(1);
    if (row.shape() != Shape{m}) {
        shape_error("replace_rows", x.shape(), row.shape());
    }
    std::vector<char> replaced(n, 0);
    for (const auto idx : indices) {
        if (idx >= n) {
            throw std::out_of_range("replace_rows: row " + std::to_string(idx) +
                                    " out of range for " + shape_string(x.shape()));
        }
        replaced[idx] = 1;
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    const auto r = row.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (replaced[i]) {
            std::copy_n(r.data(), m, out.data() + i * m);
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, row},
                               [n, m, replaced = std::move(replaced)](Node& self) {
                                   double* gx = parent_grad(self, 0);
                                   double* gr = parent_grad(self, 1);
                                   for (std::size_t i = 0; i < n; ++i) {
                                       for (std::size_t j = 0; j < m; ++j) {
                                           const double g = self.grad[i * m + j];
                                           if (replaced[i]) {
                                               if (gr) {
                                                   gr[j] += g;
                                               }
                                           } else if (gx) {
                                               gx[i * m + j] += g;
                                           }
                                       }
                                   }
                               });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    require_rank("attention", q, 2);
    require_rank("attention", k, 2);
    require_rank("attention", v, 2);
    if (q.dim(1) != k.dim(1)) {
        shape_error("attention", q.shape(), k.shape());
    }
    if (k.dim(0) != v.dim(0)) {
        shape_error("attention", k.shape(), v.shape());
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    const Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
    return matmul(softmax(scores), v);
}

} // namespace mplbench::numerics
