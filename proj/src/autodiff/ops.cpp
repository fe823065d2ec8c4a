#include "ppnet/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "ppnet/projection.hpp"

namespace ppnet::ad {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) fail(ErrorKind::Argument, std::string(op) + ": operands live on different tapes");
  if (a.shape() != b.shape())
    fail(ErrorKind::Argument, std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
void require_matrix(Var<T> a, const char* op) {
  if (a.shape().size() != 2) fail(ErrorKind::Argument, std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

template <typename T>
Shape matrix_shape(std::size_t r, std::size_t c) {
  return Shape{r, c};
}

template <typename T, typename Fwd, typename Bwd>
Var<T> unary(Var<T> x, Fwd fwd, Bwd bwd) {
  auto& tape = *x.tape;
  const auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xid = x.id;
  return tape.push(x.shape(), std::move(out), tape.requires_grad(x), [xid, bwd](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto xv = t.value(xid);
    const auto yv = t.value(self);
    auto gx = t.grad(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bwd(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  auto& tape = *a.tape;
  const auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.push(a.shape(), std::move(out), tape.requires_grad(a) || tape.requires_grad(b),
                   [aid, bid](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     for (std::size_t id : {aid, bid}) {
                       if (!t.requires_grad(id)) continue;
                       auto gi = t.grad(id);
                       for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                     }
                   });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  auto& tape = *a.tape;
  const auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.push(a.shape(), std::move(out), tape.requires_grad(a) || tape.requires_grad(b),
                   [aid, bid](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     if (t.requires_grad(aid)) {
                       auto ga = t.grad(aid);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     }
                     if (t.requires_grad(bid)) {
                       auto gb = t.grad(bid);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     }
                   });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  auto& tape = *a.tape;
  const auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.push(a.shape(), std::move(out), tape.requires_grad(a) || tape.requires_grad(b),
                   [aid, bid](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     const auto av = t.value(aid), bv = t.value(bid);
                     if (t.requires_grad(aid)) {
                       auto ga = t.grad(aid);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                     }
                     if (t.requires_grad(bid)) {
                       auto gb = t.grad(bid);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                     }
                   });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return unary(a, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  require_matrix(x, "softmax_rows");
  auto& tape = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  const auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xv.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) total += std::exp(static_cast<double>(row[k] - mx));
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = static_cast<T>(std::exp(static_cast<double>(row[k] - mx)) / total);
  }
  const std::size_t xid = x.id;
  return tape.push(x.shape(), std::move(out), tape.requires_grad(x), [xid, n, c](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto y = t.value(self);
    auto gx = t.grad(xid);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += static_cast<double>(g[i * c + k]) * y[i * c + k];
      for (std::size_t k = 0; k < c; ++k) gx[i * c + k] += y[i * c + k] * (g[i * c + k] - static_cast<T>(dot));
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  auto& tape = *x.tape;
  const std::size_t n = x.rows(), cin = x.cols(), cout = weight.rows();
  if (weight.cols() != cin)
    fail(ErrorKind::Argument, "linear: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  if (bias && numel(bias->shape()) != cout) fail(ErrorKind::Argument, "linear: bias length differs from output channels");

  const auto xv = x.value(), wv = weight.value();
  std::vector<T> out(n * cout, T(0));
  if (bias) {
    const auto bv = bias->value();
    for (std::size_t i = 0; i < n; ++i) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * cout));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = xv.data() + i * cin;
    T* orow = out.data() + i * cout;
    for (std::size_t o = 0; o < cout; ++o) {
      const T* wr = wv.data() + o * cin;
      T acc = T(0);
      for (std::size_t k = 0; k < cin; ++k) acc += wr[k] * xr[k];
      orow[o] += acc;
    }
  }

  const std::size_t xid = x.id, wid = weight.id;
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  const bool rg = tape.requires_grad(x) || tape.requires_grad(weight) || (bias && tape.requires_grad(*bias));
  return tape.push(Shape{n, cout}, std::move(out), rg, [=](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto xv = t.value(xid), wv = t.value(wid);
    if (t.requires_grad(xid)) {
      auto gx = t.grad(xid);
      for (std::size_t i = 0; i < n; ++i) {
        T* gxr = gx.data() + i * cin;
        for (std::size_t o = 0; o < cout; ++o) {
          const T go = g[i * cout + o];
          if (go == T(0)) continue;
          const T* wr = wv.data() + o * cin;
          for (std::size_t k = 0; k < cin; ++k) gxr[k] += go * wr[k];
        }
      }
    }
    if (t.requires_grad(wid)) {
      auto gw = t.grad(wid);
      for (std::size_t i = 0; i < n; ++i) {
        const T* xr = xv.data() + i * cin;
        for (std::size_t o = 0; o < cout; ++o) {
          const T go = g[i * cout + o];
          if (go == T(0)) continue;
          T* gwr = gw.data() + o * cin;
          for (std::size_t k = 0; k < cin; ++k) gwr[k] += go * xr[k];
        }
      }
    }
    if (bid && t.requires_grad(*bid)) {
      auto gb = t.grad(*bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < cout; ++o) gb[o] += g[i * cout + o];
    }
  });
}

template <typename T>
Var<T> conv2d_same(Var<T> x, std::size_t images, std::size_t height, std::size_t width, Var<T> kernels,
                   std::optional<Var<T>> bias) {
  require_matrix(x, "conv2d_same");
  auto& tape = *x.tape;
  const std::size_t pixels = height * width;
  if (height == 0 || width == 0 || x.rows() != images * pixels)
    fail(ErrorKind::Argument, "conv2d_same: input rows " + std::to_string(x.rows()) + " do not match " +
                                  std::to_string(images) + " images of " + std::to_string(height) + "x" + std::to_string(width));
  const std::size_t cin = x.cols();
  const Shape& ks = kernels.shape();
  if (ks.size() != 4 || ks[1] != 3 || ks[2] != 3 || ks[3] != cin)
    fail(ErrorKind::Argument, "conv2d_same: kernel shape " + to_string(ks) + " incompatible with " + std::to_string(cin) + " input channels");
  const std::size_t cout = ks[0];
  if (bias && numel(bias->shape()) != cout) fail(ErrorKind::Argument, "conv2d_same: bias length differs from output channels");

  const auto xv = x.value(), kv = kernels.value();
  // Zero input rows contribute nothing; sparse projected grids are mostly zero.
  std::vector<std::uint8_t> active(x.rows(), 0);
  for (std::size_t q = 0; q < x.rows(); ++q) {
    const T* r = xv.data() + q * cin;
    active[q] = std::any_of(r, r + cin, [](T v) { return v != T(0); }) ? 1 : 0;
  }

  std::vector<T> out(images * pixels * cout, T(0));
  if (bias) {
    const auto bv = bias->value();
    for (std::size_t p = 0; p < images * pixels; ++p)
      std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(p * cout));
  }
  const std::size_t kstride = 9 * cin;
  auto for_each_tap = [height, width, pixels](std::size_t img, auto&& body) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t xx = 0; xx < width; ++xx) {
        const std::size_t p = img * pixels + y * width + xx;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          if ((y == 0 && ky == 0) || (y + 1 == height && ky == 2)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            if ((xx == 0 && kx == 0) || (xx + 1 == width && kx == 2)) continue;
            const std::size_t q = img * pixels + (y + ky - 1) * width + (xx + kx - 1);
            body(p, q, ky * 3 + kx);
          }
        }
      }
    }
  };
  for (std::size_t img = 0; img < images; ++img) {
    for_each_tap(img, [&](std::size_t p, std::size_t q, std::size_t tap) {
      if (!active[q]) return;
      const T* xr = xv.data() + q * cin;
      T* orow = out.data() + p * cout;
      for (std::size_t o = 0; o < cout; ++o) {
        const T* kr = kv.data() + o * kstride + tap * cin;
        T acc = T(0);
        for (std::size_t c = 0; c < cin; ++c) acc += kr[c] * xr[c];
        orow[o] += acc;
      }
    });
  }

  const std::size_t xid = x.id, kid = kernels.id;
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  const bool rg = tape.requires_grad(x) || tape.requires_grad(kernels) || (bias && tape.requires_grad(*bias));
  return tape.push(Shape{images * pixels, cout}, std::move(out), rg,
                   [=, active = std::move(active)](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     const auto xv = t.value(xid), kv = t.value(kid);
                     const bool need_x = t.requires_grad(xid), need_k = t.requires_grad(kid);
                     std::span<T> gx, gk;
                     if (need_x) gx = t.grad(xid);
                     if (need_k) gk = t.grad(kid);
                     for (std::size_t img = 0; img < images; ++img) {
                       for_each_tap(img, [&](std::size_t p, std::size_t q, std::size_t tap) {
                         const T* gp = g.data() + p * cout;
                         const T* xr = xv.data() + q * cin;
                         for (std::size_t o = 0; o < cout; ++o) {
                           const T go = gp[o];
                           if (go == T(0)) continue;
                           if (need_x) {
                             const T* kr = kv.data() + o * kstride + tap * cin;
                             T* gxr = gx.data() + q * cin;
                             for (std::size_t c = 0; c < cin; ++c) gxr[c] += go * kr[c];
                           }
                           if (need_k && active[q]) {
                             T* gkr = gk.data() + o * kstride + tap * cin;
                             for (std::size_t c = 0; c < cin; ++c) gkr[c] += go * xr[c];
                           }
                         }
                       });
                     }
                     if (bid && t.requires_grad(*bid)) {
                       auto gb = t.grad(*bid);
                       for (std::size_t p = 0; p < images * pixels; ++p)
                         for (std::size_t o = 0; o < cout; ++o) gb[o] += g[p * cout + o];
                     }
                   });
}

template <typename T>
Var<T> depthwise(Var<T> x, Var<T> weight, Var<T> bias) {
  require_matrix(x, "depthwise");
  auto& tape = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  if (numel(weight.shape()) != c || numel(bias.shape()) != c)
    fail(ErrorKind::Argument, "depthwise: weight/bias length differs from channel count");
  const auto xv = x.value(), wv = weight.value(), bv = bias.value();
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = wv[k] * xv[i * c + k] + bv[k];
  const std::size_t xid = x.id, wid = weight.id, bid = bias.id;
  const bool rg = tape.requires_grad(x) || tape.requires_grad(weight) || tape.requires_grad(bias);
  return tape.push(x.shape(), std::move(out), rg, [=](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto xv = t.value(xid), wv = t.value(wid);
    if (t.requires_grad(xid)) {
      auto gx = t.grad(xid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) gx[i * c + k] += g[i * c + k] * wv[k];
    }
    if (t.requires_grad(wid)) {
      auto gw = t.grad(wid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) gw[k] += g[i * c + k] * xv[i * c + k];
    }
    if (t.requires_grad(bid)) {
      auto gb = t.grad(bid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) gb[k] += g[i * c + k];
    }
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, Mode mode) {
  require_matrix(x, "batch_norm");
  auto& tape = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  if (numel(gamma.shape()) != c || numel(beta.shape()) != c || stats.running_mean.size() != c ||
      stats.running_var.size() != c)
    fail(ErrorKind::Argument, "batch_norm: parameter length differs from channel count");
  if (mode == Mode::Train && n < 2) fail(ErrorKind::Argument, "batch_norm: train mode needs at least 2 rows");

  const auto xv = x.value(), gv = gamma.value(), bv = beta.value();
  std::vector<T> invstd(c);
  std::vector<T> xhat(n * c);
  if (mode == Mode::Train) {
    for (std::size_t k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += xv[i * c + k];
      const double mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = xv[i * c + k] - mu;
        ss += d * d;
      }
      const double var = ss / static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + stats.eps);
      invstd[k] = static_cast<T>(is);
      for (std::size_t i = 0; i < n; ++i) xhat[i * c + k] = static_cast<T>((xv[i * c + k] - mu) * is);
      const double m = stats.momentum;
      stats.running_mean[k] = static_cast<T>((1.0 - m) * stats.running_mean[k] + m * mu);
      stats.running_var[k] =
          static_cast<T>((1.0 - m) * stats.running_var[k] + m * var * static_cast<double>(n) / static_cast<double>(n - 1));
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      const double is = 1.0 / std::sqrt(static_cast<double>(stats.running_var[k]) + stats.eps);
      invstd[k] = static_cast<T>(is);
      for (std::size_t i = 0; i < n; ++i)
        xhat[i * c + k] = static_cast<T>((static_cast<double>(xv[i * c + k]) - stats.running_mean[k]) * is);
    }
  }
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = gv[k] * xhat[i * c + k] + bv[k];

  const std::size_t xid = x.id, gid = gamma.id, bid = beta.id;
  const bool train = mode == Mode::Train;
  const bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
  return tape.push(x.shape(), std::move(out), rg,
                   [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     const auto gv = t.value(gid);
                     std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                     for (std::size_t i = 0; i < n; ++i) {
                       for (std::size_t k = 0; k < c; ++k) {
                         sum_g[k] += g[i * c + k];
                         sum_gx[k] += static_cast<double>(g[i * c + k]) * xhat[i * c + k];
                       }
                     }
                     if (t.requires_grad(xid)) {
                       auto gx = t.grad(xid);
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t k = 0; k < c; ++k) {
                           const double scale_k = static_cast<double>(gv[k]) * invstd[k];
                           if (train) {
                             gx[i * c + k] += static_cast<T>(scale_k * (g[i * c + k] - inv_n * sum_g[k] -
                                                                        inv_n * xhat[i * c + k] * sum_gx[k]));
                           } else {
                             gx[i * c + k] += static_cast<T>(scale_k * g[i * c + k]);
                           }
                         }
                       }
                     }
                     if (t.requires_grad(gid)) {
                       auto gg = t.grad(gid);
                       for (std::size_t k = 0; k < c; ++k) gg[k] += static_cast<T>(sum_gx[k]);
                     }
                     if (t.requires_grad(bid)) {
                       auto gb = t.grad(bid);
                       for (std::size_t k = 0; k < c; ++k) gb[k] += static_cast<T>(sum_g[k]);
                     }
                   });
}

template <typename T>
Var<T> max_over_neighbors(Var<T> x, std::size_t k) {
  require_matrix(x, "max_over_neighbors");
  auto& tape = *x.tape;
  if (k == 0 || x.rows() % k != 0) fail(ErrorKind::Argument, "max_over_neighbors: rows not divisible by k");
  const std::size_t n = x.rows() / k, c = x.cols();
  const auto xv = x.value();
  std::vector<T> out(xv.begin(), xv.begin() + static_cast<std::ptrdiff_t>(n * c));
  std::vector<std::uint32_t> arg(n * c, 0);
  for (std::size_t j = 1; j < k; ++j) {
    const T* block = xv.data() + j * n * c;
    for (std::size_t e = 0; e < n * c; ++e) {
      if (block[e] > out[e]) {
        out[e] = block[e];
        arg[e] = static_cast<std::uint32_t>(j);
      }
    }
  }
  const std::size_t xid = x.id;
  return tape.push(Shape{n, c}, std::move(out), tape.requires_grad(x),
                   [xid, n, c, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     auto gx = t.grad(xid);
                     for (std::size_t e = 0; e < n * c; ++e) gx[arg[e] * n * c + e] += g[e];
                   });
}

template <typename T>
Var<T> gather(Var<T> x, std::span<const std::uint32_t> rows) {
  require_matrix(x, "gather");
  auto& tape = *x.tape;
  const std::size_t c = x.cols(), src_rows = x.rows();
  for (auto r : rows) {
    if (r >= src_rows) fail(ErrorKind::Argument, "gather: row index out of range");
  }
  std::vector<T> out(rows.size() * c);
  gather_rows<T>(x.value(), c, rows, out);
  const std::size_t xid = x.id;
  return tape.push(Shape{rows.size(), c}, std::move(out), tape.requires_grad(x),
                   [xid, c, idx = std::vector<std::uint32_t>(rows.begin(), rows.end())](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     auto gx = t.grad(xid);
                     for (std::size_t r = 0; r < idx.size(); ++r) {
                       T* dst = gx.data() + static_cast<std::size_t>(idx[r]) * c;
                       const T* src = g.data() + r * c;
                       for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
                     }
                   });
}

template <typename T>
Var<T> scatter_mean(Var<T> x, std::span<const std::uint32_t> cells, std::size_t num_cells) {
  require_matrix(x, "scatter_mean");
  auto& tape = *x.tape;
  if (cells.size() != x.rows()) fail(ErrorKind::Argument, "scatter_mean: cell list length differs from row count");
  const std::size_t c = x.cols();
  std::vector<T> out(num_cells * c);
  std::vector<std::uint32_t> occupancy(num_cells);
  ppnet::scatter_mean<T>(x.value(), c, cells, num_cells, out, occupancy);
  const std::size_t xid = x.id;
  return tape.push(Shape{num_cells, c}, std::move(out), tape.requires_grad(x),
                   [xid, c, idx = std::vector<std::uint32_t>(cells.begin(), cells.end()),
                    occupancy = std::move(occupancy)](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     auto gx = t.grad(xid);
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                       const T inv = T(1) / static_cast<T>(occupancy[idx[i]]);
                       const T* src = g.data() + static_cast<std::size_t>(idx[i]) * c;
                       T* dst = gx.data() + i * c;
                       for (std::size_t k = 0; k < c; ++k) dst[k] += src[k] * inv;
                     }
                   });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) fail(ErrorKind::Argument, "concat_cols: row count mismatch");
  auto& tape = *a.tape;
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  const auto av = a.value(), bv = b.value();
  std::vector<T> out(n * (ca + cb));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(bv.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  const std::size_t aid = a.id, bid = b.id;
  return tape.push(Shape{n, ca + cb}, std::move(out), tape.requires_grad(a) || tape.requires_grad(b),
                   [=](Tape<T>& t, std::size_t self) {
                     const auto g = t.grad(self);
                     if (t.requires_grad(aid)) {
                       auto ga = t.grad(aid);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t k = 0; k < ca; ++k) ga[i * ca + k] += g[i * (ca + cb) + k];
                     }
                     if (t.requires_grad(bid)) {
                       auto gb = t.grad(bid);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t k = 0; k < cb; ++k) gb[i * cb + k] += g[i * (ca + cb) + ca + k];
                     }
                   });
}

template <typename T>
Var<T> sum(Var<T> x) {
  auto& tape = *x.tape;
  double s = 0.0;
  for (T v : x.value()) s += v;
  const std::size_t xid = x.id;
  return tape.push(Shape{1}, {static_cast<T>(s)}, tape.requires_grad(x), [xid](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(xid)) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = numel(x.shape());
  if (n == 0) fail(ErrorKind::EmptyInput, "mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(n));
}

namespace {

std::vector<std::size_t> scored_points(std::span<const int> labels, std::size_t classes, std::optional<int> ignore,
                                       const char* op) {
  std::vector<std::size_t> scored;
  scored.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (ignore && labels[i] == *ignore) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      fail(ErrorKind::Argument, std::string(op) + ": label " + std::to_string(labels[i]) + " out of range");
    scored.push_back(i);
  }
  if (scored.empty()) fail(ErrorKind::EmptyInput, std::string(op) + ": every point is ignored");
  return scored;
}

}  // namespace

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels, std::optional<int> ignore_index) {
  require_matrix(logits, "cross_entropy");
  auto& tape = *logits.tape;
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) fail(ErrorKind::Argument, "cross_entropy: label count differs from row count");
  const auto scored = scored_points(labels, c, ignore_index, "cross_entropy");
  const auto xv = logits.value();
  std::vector<T> probs(scored.size() * c);
  double total = 0.0;
  for (std::size_t s = 0; s < scored.size(); ++s) {
    const std::size_t i = scored[s];
    const T* row = xv.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[i]];
    for (std::size_t k = 0; k < c; ++k) probs[s * c + k] = static_cast<T>(std::exp(row[k] - lse));
  }
  const double inv = 1.0 / static_cast<double>(scored.size());
  const std::size_t xid = logits.id;
  std::vector<int> targets(scored.size());
  for (std::size_t s = 0; s < scored.size(); ++s) targets[s] = labels[scored[s]];
  return tape.push(Shape{1}, {static_cast<T>(total * inv)}, tape.requires_grad(logits),
                   [=, probs = std::move(probs), scored = scored, targets = std::move(targets)](Tape<T>& t, std::size_t self) {
                     const T g = t.grad(self)[0] * static_cast<T>(inv);
                     auto gx = t.grad(xid);
                     for (std::size_t s = 0; s < scored.size(); ++s) {
                       T* row = gx.data() + scored[s] * c;
                       for (std::size_t k = 0; k < c; ++k) row[k] += g * probs[s * c + k];
                       row[targets[s]] -= g;
                     }
                   });
}

std::vector<double> lovasz_grad(std::span<const std::uint8_t> fg) {
  double gts = 0.0;
  for (auto f : fg) gts += f;
  std::vector<double> grad(fg.size());
  double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
  for (std::size_t r = 0; r < fg.size(); ++r) {
    cum_fg += fg[r];
    cum_bg += 1 - fg[r];
    const double jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
    grad[r] = r == 0 ? jac : jac - prev;
    prev = jac;
  }
  return grad;
}

template <typename T>
Var<T> lovasz_softmax(Var<T> probs, std::span<const int> labels, std::optional<int> ignore_index) {
  require_matrix(probs, "lovasz_softmax");
  auto& tape = *probs.tape;
  const std::size_t n = probs.rows(), c = probs.cols();
  if (labels.size() != n) fail(ErrorKind::Argument, "lovasz_softmax: label count differs from row count");
  const auto scored = scored_points(labels, c, ignore_index, "lovasz_softmax");
  const auto pv = probs.value();
  const double row_tol = sizeof(T) < sizeof(double) ? 1e-4 : 1e-6;
  for (std::size_t i : scored) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += pv[i * c + k];
    if (std::abs(s - 1.0) > row_tol) fail(ErrorKind::Argument, "lovasz_softmax: probability rows must sum to 1");
  }

  std::vector<std::uint8_t> present(c, 0);
  for (std::size_t i : scored) present[static_cast<std::size_t>(labels[i])] = 1;

  struct ClassTerm {
    std::size_t cls;
    std::vector<std::size_t> order;  // point indices, descending error
    std::vector<double> grad;
    std::vector<std::uint8_t> fg;
  };
  std::vector<ClassTerm> terms;
  double total = 0.0;
  std::vector<double> errors(n);
  for (std::size_t cls = 0; cls < c; ++cls) {
    if (!present[cls]) continue;
    ClassTerm term;
    term.cls = cls;
    for (std::size_t i : scored) {
      const double p = pv[i * c + cls];
      errors[i] = labels[i] == static_cast<int>(cls) ? 1.0 - p : p;
    }
    term.order = scored;
    std::stable_sort(term.order.begin(), term.order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    term.fg.resize(term.order.size());
    for (std::size_t r = 0; r < term.order.size(); ++r) term.fg[r] = labels[term.order[r]] == static_cast<int>(cls);
    term.grad = lovasz_grad(term.fg);
    double loss = 0.0;
    for (std::size_t r = 0; r < term.order.size(); ++r) loss += errors[term.order[r]] * term.grad[r];
    total += loss;
    terms.push_back(std::move(term));
  }
  const double inv = 1.0 / static_cast<double>(terms.size());
  const std::size_t pid = probs.id;
  return tape.push(Shape{1}, {static_cast<T>(total * inv)}, tape.requires_grad(probs),
                   [=, terms = std::move(terms)](Tape<T>& t, std::size_t self) {
                     const double g = static_cast<double>(t.grad(self)[0]) * inv;
                     auto gp = t.grad(pid);
                     for (const auto& term : terms) {
                       for (std::size_t r = 0; r < term.order.size(); ++r) {
                         const double sign = term.fg[r] ? -1.0 : 1.0;
                         gp[term.order[r] * c + term.cls] += static_cast<T>(g * term.grad[r] * sign);
                       }
                     }
                   });
}

#define PPNET_INSTANTIATE_OPS(T)                                                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                                             \
  template Var<T> sub(Var<T>, Var<T>);                                                                             \
  template Var<T> mul(Var<T>, Var<T>);                                                                             \
  template Var<T> scale(Var<T>, T);                                                                                \
  template Var<T> relu(Var<T>);                                                                                    \
  template Var<T> sigmoid(Var<T>);                                                                                 \
  template Var<T> square(Var<T>);                                                                                  \
  template Var<T> softmax_rows(Var<T>);                                                                            \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                                                   \
  template Var<T> conv2d_same(Var<T>, std::size_t, std::size_t, std::size_t, Var<T>, std::optional<Var<T>>);       \
  template Var<T> depthwise(Var<T>, Var<T>, Var<T>);                                                               \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, Mode);                                    \
  template Var<T> max_over_neighbors(Var<T>, std::size_t);                                                         \
  template Var<T> gather(Var<T>, std::span<const std::uint32_t>);                                                  \
  template Var<T> scatter_mean(Var<T>, std::span<const std::uint32_t>, std::size_t);                               \
  template Var<T> concat_cols(Var<T>, Var<T>);                                                                     \
  template Var<T> sum(Var<T>);                                                                                     \
  template Var<T> mean(Var<T>);                                                                                    \
  template Var<T> cross_entropy(Var<T>, std::span<const int>, std::optional<int>);                                 \
  template Var<T> lovasz_softmax(Var<T>, std::span<const int>, std::optional<int>);

PPNET_INSTANTIATE_OPS(float)
PPNET_INSTANTIATE_OPS(double)

}  // namespace ppnet::ad
