#include "planlm/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "planlm/autodiff/kernels.hpp"
#include "planlm/errors.hpp"

namespace planlm::ad {
namespace {

using detail::make_result;

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ValidationError(std::string(op) + ": expected a rank-2 tensor, got " +
                          shape_str(t.shape()));
  }
}

bool suffix_of(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Gradient buffer of parent i, or nullptr when it does not require grad.
float* pgrad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->ensure_grad().data() : nullptr;
}

const float* pval(Node& self, std::size_t i) { return self.parents[i]->value.data(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_result({m, n}, {&a, &b});
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
  if (detail::records(out)) {
    out.node()->backward = [m, n, k](Node& self) {
      const float* g = self.grad.data();
      if (float* ga = pgrad(self, 0)) kernels::gemm_nt(m, k, n, g, pval(self, 1), ga);
      if (float* gb = pgrad(self, 1)) kernels::gemm_tn(k, n, m, pval(self, 0), g, gb);
    };
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  if (a.dim(1) != b.dim(1)) shape_error("matmul_nt", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = make_result({m, n}, {&a, &b});
  kernels::gemm_nt(m, n, k, a.data().data(), b.data().data(), out.data().data());
  if (detail::records(out)) {
    out.node()->backward = [m, n, k](Node& self) {
      const float* g = self.grad.data();
      if (float* ga = pgrad(self, 0)) kernels::gemm_nn(m, k, n, g, pval(self, 1), ga);
      if (float* gb = pgrad(self, 1)) kernels::gemm_tn(n, k, m, g, pval(self, 0), gb);
    };
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!suffix_of(b.shape(), a.shape())) shape_error("add", a, b);
  Tensor out = make_result(a.shape(), {&a, &b});
  const std::size_t n = a.size(), m = b.size();
  const float* av = a.data().data();
  const float* bv = b.data().data();
  float* ov = out.data().data();
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) ov[i + j] = av[i + j] + bv[j];
  }
  if (detail::records(out)) {
    out.node()->backward = [n, m](Node& self) {
      const float* g = self.grad.data();
      if (float* ga = pgrad(self, 0)) kernels::axpy(1.0f, g, ga, n);
      if (float* gb = pgrad(self, 1)) {
        for (std::size_t i = 0; i < n; i += m) kernels::axpy(1.0f, g + i, gb, m);
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  Tensor out = make_result(a.shape(), {&a, &b});
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::records(out)) {
    out.node()->backward = [n](Node& self) {
      const float* g = self.grad.data();
      const float* av = pval(self, 0);
      const float* bv = pval(self, 1);
      if (float* ga = pgrad(self, 0)) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
      }
      if (float* gb = pgrad(self, 1)) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out = make_result(a.shape(), {&a});
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (detail::records(out)) {
    out.node()->backward = [n, factor](Node& self) {
      if (float* ga = pgrad(self, 0)) kernels::axpy(factor, self.grad.data(), ga, n);
    };
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_result({1}, {&a});
  double s = 0.0;
  for (float v : a.data()) s += v;
  out.data()[0] = static_cast<float>(s);
  if (detail::records(out)) {
    const std::size_t n = a.size();
    out.node()->backward = [n](Node& self) {
      float* ga = pgrad(self, 0);
      const float g = self.grad[0];
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    };
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0f / static_cast<float>(a.size())); }

Tensor softmax_rows(const Tensor& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out = make_result(a.shape(), {&a});
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = a.data().data() + r * cols;
    float* y = out.data().data() + r * cols;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const float inv = static_cast<float>(1.0 / z);
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  if (detail::records(out)) {
    out.node()->backward = [rows, cols](Node& self) {
      float* ga = pgrad(self, 0);
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = self.value.data() + r * cols;
        const float* g = self.grad.data() + r * cols;
        const float d = kernels::dot(g, y, cols);
        for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += y[j] * (g[j] - d);
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.size() != cols) shape_error("layer_norm", x, gain);
  if (bias.size() != cols) shape_error("layer_norm", x, bias);
  Tensor out = make_result(x.shape(), {&x, &gain, &bias});
  std::vector<float> xhat(x.size());
  std::vector<float> rstd(rows);
  const float* g = gain.data().data();
  const float* b = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data().data() + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    float* yr = out.data().data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      const float h = static_cast<float>(xr[j] - mu) * rs;
      xhat[r * cols + j] = h;
      yr[j] = h * g[j] + b[j];
    }
  }
  if (detail::records(out)) {
    out.node()->backward = [rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
      const float* gy = self.grad.data();
      const float* gv = pval(self, 1);
      float* gx = pgrad(self, 0);
      float* gg = pgrad(self, 1);
      float* gb = pgrad(self, 2);
      std::vector<float> dh(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const float* gyr = gy + r * cols;
        const float* hr = xhat.data() + r * cols;
        if (gg) {
          for (std::size_t j = 0; j < cols; ++j) gg[j] += gyr[j] * hr[j];
        }
        if (gb) {
          for (std::size_t j = 0; j < cols; ++j) gb[j] += gyr[j];
        }
        if (!gx) continue;
        double mean_dh = 0.0, mean_dhh = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          dh[j] = gyr[j] * gv[j];
          mean_dh += dh[j];
          mean_dhh += static_cast<double>(dh[j]) * hr[j];
        }
        mean_dh /= static_cast<double>(cols);
        mean_dhh /= static_cast<double>(cols);
        float* gxr = gx + r * cols;
        for (std::size_t j = 0; j < cols; ++j) {
          gxr[j] += rstd[r] * static_cast<float>(dh[j] - mean_dh - hr[j] * mean_dhh);
        }
      }
    };
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kA = 0.044715f;
  Tensor out = make_result(x.shape(), {&x});
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x.data()[i];
    out.data()[i] = 0.5f * v * (1.0f + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (detail::records(out)) {
    out.node()->backward = [n](Node& self) {
      float* gx = pgrad(self, 0);
      const float* xv = pval(self, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const float v = xv[i];
        const float t = std::tanh(kC * (v + kA * v * v * v));
        const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * kC * (1.0f + 3.0f * kA * v * v);
        gx[i] += self.grad[i] * d;
      }
    };
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank2("embedding", table);
  const std::size_t rows = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw ValidationError("embedding: id " + std::to_string(id) + " out of range for table " +
                            shape_str(table.shape()));
    }
  }
  Tensor out = make_result({ids.size(), d}, {&table});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data().data() + i * d);
  }
  if (detail::records(out)) {
    out.node()->backward = [ids = std::vector<int>(ids.begin(), ids.end()), d](Node& self) {
      float* gt = pgrad(self, 0);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        kernels::axpy(1.0f, self.grad.data() + i * d, gt + static_cast<std::size_t>(ids[i]) * d, d);
      }
    };
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const int> rows) {
  const std::size_t d = x.cols();
  const std::size_t n = x.rows();
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= n) {
      throw ValidationError("gather_rows: row " + std::to_string(r) + " out of range for " +
                            shape_str(x.shape()));
    }
  }
  Tensor out = make_result({rows.size(), d}, {&x});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data().data() + static_cast<std::size_t>(rows[i]) * d, d, out.data().data() + i * d);
  }
  if (detail::records(out)) {
    out.node()->backward = [rows = std::vector<int>(rows.begin(), rows.end()), d](Node& self) {
      float* gx = pgrad(self, 0);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        kernels::axpy(1.0f, self.grad.data() + i * d, gx + static_cast<std::size_t>(rows[i]) * d, d);
      }
    };
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (start + width > cols) {
    throw ValidationError("slice_cols: [" + std::to_string(start) + ", " +
                          std::to_string(start + width) + ") out of range for " + shape_str(x.shape()));
  }
  Tensor out = make_result({rows, width}, {&x});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().data() + r * cols + start, width, out.data().data() + r * width);
  }
  if (detail::records(out)) {
    out.node()->backward = [rows, cols, start, width](Node& self) {
      float* gx = pgrad(self, 0);
      for (std::size_t r = 0; r < rows; ++r) {
        kernels::axpy(1.0f, self.grad.data() + r * width, gx + r * cols + start, width);
      }
    };
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0], p);
    cols += p.cols();
  }
  auto n = std::make_shared<Node>();
  n->shape = {rows, cols};
  n->value.assign(rows * cols, 0.0f);
  Tensor out(n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data().data() + r * w, w, out.data().data() + r * cols + off);
    }
    off += w;
  }
  if (grad_enabled() && std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); })) {
    n->requires_grad = true;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      n->parents.push_back(p.ptr());
      widths.push_back(p.cols());
    }
    n->backward = [rows, cols, widths = std::move(widths)](Node& self) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        if (float* gp = pgrad(self, i)) {
          for (std::size_t r = 0; r < rows; ++r) {
            kernels::axpy(1.0f, self.grad.data() + r * cols + off, gp + r * widths[i], widths[i]);
          }
        }
        off += widths[i];
      }
    };
  }
  return out;
}

Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segment_lengths) {
  const std::size_t d = x.cols();
  const std::size_t total = std::accumulate(segment_lengths.begin(), segment_lengths.end(), std::size_t{0});
  if (total != x.rows()) {
    throw ValidationError("segment_mean: segments cover " + std::to_string(total) + " rows but input is " +
                          shape_str(x.shape()));
  }
  Tensor out = make_result({segment_lengths.size(), d}, {&x});
  std::size_t off = 0;
  for (std::size_t s = 0; s < segment_lengths.size(); ++s) {
    const std::size_t len = segment_lengths[s];
    if (len == 0) throw ValidationError("segment_mean: empty segment");
    float* o = out.data().data() + s * d;
    for (std::size_t r = 0; r < len; ++r) kernels::axpy(1.0f, x.data().data() + (off + r) * d, o, d);
    const float inv = 1.0f / static_cast<float>(len);
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
    off += len;
  }
  if (detail::records(out)) {
    out.node()->backward = [segs = std::vector<std::size_t>(segment_lengths.begin(), segment_lengths.end()), d](Node& self) {
      float* gx = pgrad(self, 0);
      std::size_t off = 0;
      for (std::size_t s = 0; s < segs.size(); ++s) {
        const float inv = 1.0f / static_cast<float>(segs[s]);
        for (std::size_t r = 0; r < segs[s]; ++r) {
          kernels::axpy(inv, self.grad.data() + s * d, gx + (off + r) * d, d);
        }
        off += segs[s];
      }
    };
  }
  return out;
}

Tensor attention(const Tensor& qkv, std::span<const std::size_t> segment_lengths,
                 std::size_t n_heads, bool causal) {
  require_rank2("attention", qkv);
  const std::size_t n = qkv.dim(0);
  const std::size_t width = qkv.dim(1);
  if (n_heads == 0 || width % (3 * n_heads) != 0) {
    throw ValidationError("attention: qkv width " + std::to_string(width) +
                          " not divisible into 3 x " + std::to_string(n_heads) + " heads");
  }
  const std::size_t total = std::accumulate(segment_lengths.begin(), segment_lengths.end(), std::size_t{0});
  if (total != n) {
    throw ValidationError("attention: segments cover " + std::to_string(total) + " rows but qkv is " +
                          shape_str(qkv.shape()));
  }
  const std::size_t D = width / 3;
  const std::size_t dh = D / n_heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor out = make_result({n, D}, {&qkv});
  const float* x = qkv.data().data();
  float* y = out.data().data();

  // Probabilities per (segment, head): len x len, row-major, packed.
  std::vector<float> probs;
  std::size_t prob_size = 0;
  for (auto len : segment_lengths) prob_size += len * len * n_heads;
  probs.resize(prob_size);

  std::size_t off = 0, poff = 0;
  std::vector<float> row;
  for (auto len : segment_lengths) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      float* P = probs.data() + poff;
      for (std::size_t i = 0; i < len; ++i) {
        const float* q = x + (off + i) * width + h * dh;
        const std::size_t limit = causal ? i + 1 : len;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          const float* k = x + (off + j) * width + D + h * dh;
          const float s = kernels::dot(q, k, dh) * inv_sqrt;
          P[i * len + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          const float e = std::exp(P[i * len + j] - mx);
          P[i * len + j] = e;
          z += e;
        }
        const float inv = static_cast<float>(1.0 / z);
        float* o = y + (off + i) * D + h * dh;
        for (std::size_t j = 0; j < limit; ++j) {
          P[i * len + j] *= inv;
          kernels::axpy(P[i * len + j], x + (off + j) * width + 2 * D + h * dh, o, dh);
        }
        for (std::size_t j = limit; j < len; ++j) P[i * len + j] = 0.0f;
      }
      poff += len * len;
    }
    off += len;
  }

  if (detail::records(out)) {
    out.node()->backward = [segs = std::vector<std::size_t>(segment_lengths.begin(), segment_lengths.end()),
                            probs = std::move(probs), n_heads, width, D, dh, inv_sqrt, causal](Node& self) {
      float* gx = pgrad(self, 0);
      const float* x = pval(self, 0);
      const float* gy = self.grad.data();
      std::vector<float> dp;
      std::size_t off = 0, poff = 0;
      for (auto len : segs) {
        dp.assign(len, 0.0f);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const float* P = probs.data() + poff;
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t limit = causal ? i + 1 : len;
            const float* go = gy + (off + i) * D + h * dh;
            double weighted = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
              const float* v = x + (off + j) * width + 2 * D + h * dh;
              dp[j] = kernels::dot(go, v, dh);
              weighted += static_cast<double>(dp[j]) * P[i * len + j];
              // dV_j += P_ij * dO_i
              kernels::axpy(P[i * len + j], go, gx + (off + j) * width + 2 * D + h * dh, dh);
            }
            const float* q = x + (off + i) * width + h * dh;
            float* gq = gx + (off + i) * width + h * dh;
            for (std::size_t j = 0; j < limit; ++j) {
              const float ds = P[i * len + j] * (dp[j] - static_cast<float>(weighted)) * inv_sqrt;
              if (ds == 0.0f) continue;
              const float* k = x + (off + j) * width + D + h * dh;
              kernels::axpy(ds, k, gq, dh);
              kernels::axpy(ds, q, gx + (off + j) * width + D + h * dh, dh);
            }
          }
          poff += len * len;
        }
        off += len;
      }
    };
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows) {
    throw ValidationError("cross_entropy: " + std::to_string(targets.size()) +
                          " targets for logits " + shape_str(logits.shape()));
  }
  Tensor out = make_result({1}, {&logits});
  std::vector<float> probs(logits.size(), 0.0f);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= cols) {
      throw ValidationError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                            shape_str(logits.shape()));
    }
    const float* x = logits.data().data() + r * cols;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(static_cast<double>(x[j] - mx));
    const double lse = std::log(z) + mx;
    total += lse - x[t];
    for (std::size_t j = 0; j < cols; ++j) {
      probs[r * cols + j] = static_cast<float>(std::exp(static_cast<double>(x[j]) - lse));
    }
    ++count;
  }
  out.data()[0] = count ? static_cast<float>(total / static_cast<double>(count)) : 0.0f;
  if (detail::records(out)) {
    out.node()->backward = [probs = std::move(probs), t = std::vector<int>(targets.begin(), targets.end()),
                            rows, cols, count](Node& self) {
      if (count == 0) return;
      float* gl = pgrad(self, 0);
      const float g = self.grad[0] / static_cast<float>(count);
      for (std::size_t r = 0; r < rows; ++r) {
        if (t[r] < 0) continue;
        float* gr = gl + r * cols;
        const float* p = probs.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g * p[j];
        gr[t[r]] -= g;
      }
    };
  }
  return out;
}

std::vector<double> row_nll(const Tensor& logits, std::span<const int> targets) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows) {
    throw ValidationError("row_nll: " + std::to_string(targets.size()) + " targets for logits " +
                          shape_str(logits.shape()));
  }
  std::vector<double> out(rows, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    const float* x = logits.data().data() + r * cols;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(static_cast<double>(x[j] - mx));
    out[r] = std::log(z) + mx - x[t];
  }
  return out;
}

}  // namespace planlm::ad
