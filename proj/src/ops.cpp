#include "kdoct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace kdoct {

namespace {

template <typename T>
void check_rank(const TensorT<T>& t, int rank, const char* op, const char* what) {
  if (t.rank() != rank)
    fail(ErrorCategory::shape, std::string(op) + ": " + what + " must have rank " +
                                   std::to_string(rank) + ", got " + shape_str(t.shape()));
}

inline int64_t conv_out_size(int64_t in, int64_t k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

template <typename T>
void check_conv_geometry(const char* op, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
                         int padding) {
  if (stride < 1) fail(ErrorCategory::shape, std::string(op) + ": stride must be >= 1");
  if (padding < 0) fail(ErrorCategory::shape, std::string(op) + ": padding must be >= 0");
  if (kh > h + 2 * padding)
    fail(ErrorCategory::shape, std::string(op) + ": kernel height " + std::to_string(kh) +
                                   " exceeds padded input height " + std::to_string(h + 2 * padding) +
                                   " (axis 2)");
  if (kw > w + 2 * padding)
    fail(ErrorCategory::shape, std::string(op) + ": kernel width " + std::to_string(kw) +
                                   " exceeds padded input width " + std::to_string(w + 2 * padding) +
                                   " (axis 3)");
}

}  // namespace

template <typename T>
TensorT<T> conv2d(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& kernel,
                  const std::optional<std::type_identity_t<TensorT<T>>>& bias, int stride, int padding) {
  check_rank(input, 4, "conv2d", "input");
  check_rank(kernel, 4, "conv2d", "kernel");
  const int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = kernel.dim(0), kcin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (cin != kcin)
    fail(ErrorCategory::shape, "conv2d: input channels (axis 1) = " + std::to_string(cin) +
                                   " do not match kernel Cin = " + std::to_string(kcin));
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    fail(ErrorCategory::shape, "conv2d: bias must have shape [" + std::to_string(cout) + "]");
  check_conv_geometry<T>("conv2d", h, w, kh, kw, stride, padding);
  const int64_t oh = conv_out_size(h, kh, stride, padding);
  const int64_t ow = conv_out_size(w, kw, stride, padding);

  TensorT<T> out = TensorT<T>::zeros({n, cout, oh, ow});
  {
    const T* x = input.values().data();
    const T* k = kernel.values().data();
    const T* b = bias ? bias->values().data() : nullptr;
    T* y = out.values().data();
    for (int64_t in_ = 0; in_ < n; ++in_)
      for (int64_t co = 0; co < cout; ++co) {
        const T bv = b ? b[co] : T(0);
        for (int64_t i = 0; i < oh; ++i)
          for (int64_t j = 0; j < ow; ++j) {
            T acc = bv;
            const int64_t ih0 = i * stride - padding;
            const int64_t iw0 = j * stride - padding;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const T* xrow = x + ((in_ * cin + ci) * h) * w;
              const T* krow = k + ((co * cin + ci) * kh) * kw;
              for (int64_t u = 0; u < kh; ++u) {
                const int64_t ih = ih0 + u;
                if (ih < 0 || ih >= h) continue;
                for (int64_t v = 0; v < kw; ++v) {
                  const int64_t iw = iw0 + v;
                  if (iw < 0 || iw >= w) continue;
                  acc += xrow[ih * w + iw] * krow[u * kw + v];
                }
              }
            }
            y[((in_ * cout + co) * oh + i) * ow + j] = acc;
          }
      }
  }

  TensorT<T> x = input, k = kernel;
  std::optional<TensorT<T>> b = bias;
  TensorT<T> y = out;
  std::vector<TensorT<T>> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  g.record(out, inputs, [x, k, b, y, n, cin, cout, h, w, kh, kw, oh, ow, stride, padding]() mutable {
    auto go = y.grad();
    const T* xv = x.values().data();
    const T* kv = k.values().data();
    const bool need_dx = x.grad_path();
    const bool need_dk = k.grad_path();
    const bool need_db = b && b->grad_path();
    if (need_dx) x.ensure_grad();
    if (need_dk) k.ensure_grad();
    if (need_db) b->ensure_grad();
    T* dx = need_dx ? x.grad().data() : nullptr;
    T* dk = need_dk ? k.grad().data() : nullptr;
    T* db = need_db ? b->grad().data() : nullptr;
    for (int64_t in_ = 0; in_ < n; ++in_)
      for (int64_t co = 0; co < cout; ++co)
        for (int64_t i = 0; i < oh; ++i)
          for (int64_t j = 0; j < ow; ++j) {
            const T gv = go[((in_ * cout + co) * oh + i) * ow + j];
            if (db) db[co] += gv;
            if (!need_dx && !need_dk) continue;
            const int64_t ih0 = i * stride - padding;
            const int64_t iw0 = j * stride - padding;
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t u = 0; u < kh; ++u) {
                const int64_t ih = ih0 + u;
                if (ih < 0 || ih >= h) continue;
                for (int64_t v = 0; v < kw; ++v) {
                  const int64_t iw = iw0 + v;
                  if (iw < 0 || iw >= w) continue;
                  const int64_t xi = ((in_ * cin + ci) * h + ih) * w + iw;
                  const int64_t ki = ((co * cin + ci) * kh + u) * kw + v;
                  if (dx) dx[xi] += gv * kv[ki];
                  if (dk) dk[ki] += gv * xv[xi];
                }
              }
          }
  });
  return out;
}

template <typename T>
TensorT<T> depthwise_conv2d(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& kernel,
                            const std::optional<std::type_identity_t<TensorT<T>>>& bias, int stride, int padding) {
  check_rank(input, 4, "depthwise_conv2d", "input");
  check_rank(kernel, 4, "depthwise_conv2d", "kernel");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (kernel.dim(0) != c)
    fail(ErrorCategory::shape, "depthwise_conv2d: kernel channels (axis 0) = " +
                                   std::to_string(kernel.dim(0)) + " do not match input channels = " +
                                   std::to_string(c));
  if (kernel.dim(1) != 1)
    fail(ErrorCategory::shape, "depthwise_conv2d: kernel axis 1 must be 1, got " +
                                   std::to_string(kernel.dim(1)));
  const int64_t kh = kernel.dim(2), kw = kernel.dim(3);
  if (bias && (bias->rank() != 1 || bias->dim(0) != c))
    fail(ErrorCategory::shape, "depthwise_conv2d: bias must have shape [" + std::to_string(c) + "]");
  check_conv_geometry<T>("depthwise_conv2d", h, w, kh, kw, stride, padding);
  const int64_t oh = conv_out_size(h, kh, stride, padding);
  const int64_t ow = conv_out_size(w, kw, stride, padding);

  TensorT<T> out = TensorT<T>::zeros({n, c, oh, ow});
  {
    const T* x = input.values().data();
    const T* k = kernel.values().data();
    const T* b = bias ? bias->values().data() : nullptr;
    T* y = out.values().data();
    for (int64_t in_ = 0; in_ < n; ++in_)
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* xrow = x + ((in_ * c + ch) * h) * w;
        const T* krow = k + (ch * kh) * kw;
        const T bv = b ? b[ch] : T(0);
        for (int64_t i = 0; i < oh; ++i)
          for (int64_t j = 0; j < ow; ++j) {
            T acc = bv;
            const int64_t ih0 = i * stride - padding;
            const int64_t iw0 = j * stride - padding;
            for (int64_t u = 0; u < kh; ++u) {
              const int64_t ih = ih0 + u;
              if (ih < 0 || ih >= h) continue;
              for (int64_t v = 0; v < kw; ++v) {
                const int64_t iw = iw0 + v;
                if (iw < 0 || iw >= w) continue;
                acc += xrow[ih * w + iw] * krow[u * kw + v];
              }
            }
            y[((in_ * c + ch) * oh + i) * ow + j] = acc;
          }
      }
  }

  TensorT<T> x = input, k = kernel, y = out;
  std::optional<TensorT<T>> b = bias;
  std::vector<TensorT<T>> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  g.record(out, inputs, [x, k, b, y, n, c, h, w, kh, kw, oh, ow, stride, padding]() mutable {
    auto go = y.grad();
    const T* xv = x.values().data();
    const T* kv = k.values().data();
    const bool need_dx = x.grad_path();
    const bool need_dk = k.grad_path();
    const bool need_db = b && b->grad_path();
    if (need_dx) x.ensure_grad();
    if (need_dk) k.ensure_grad();
    if (need_db) b->ensure_grad();
    T* dx = need_dx ? x.grad().data() : nullptr;
    T* dk = need_dk ? k.grad().data() : nullptr;
    T* db = need_db ? b->grad().data() : nullptr;
    for (int64_t in_ = 0; in_ < n; ++in_)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < oh; ++i)
          for (int64_t j = 0; j < ow; ++j) {
            const T gv = go[((in_ * c + ch) * oh + i) * ow + j];
            if (db) db[ch] += gv;
            if (!need_dx && !need_dk) continue;
            const int64_t ih0 = i * stride - padding;
            const int64_t iw0 = j * stride - padding;
            for (int64_t u = 0; u < kh; ++u) {
              const int64_t ih = ih0 + u;
              if (ih < 0 || ih >= h) continue;
              for (int64_t v = 0; v < kw; ++v) {
                const int64_t iw = iw0 + v;
                if (iw < 0 || iw >= w) continue;
                const int64_t xi = ((in_ * c + ch) * h + ih) * w + iw;
                const int64_t ki = (ch * kh + u) * kw + v;
                if (dx) dx[xi] += gv * kv[ki];
                if (dk) dk[ki] += gv * xv[xi];
              }
            }
          }
  });
  return out;
}

template <typename T>
TensorT<T> linear(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& weight,
                  const std::optional<std::type_identity_t<TensorT<T>>>& bias) {
  check_rank(weight, 2, "linear", "weight");
  if (input.rank() < 1) fail(ErrorCategory::shape, "linear: input must have rank >= 1");
  const int64_t din = input.dim(input.rank() - 1);
  const int64_t dout = weight.dim(0);
  if (weight.dim(1) != din)
    fail(ErrorCategory::shape, "linear: trailing input dimension = " + std::to_string(din) +
                                   " does not match weight Din = " + std::to_string(weight.dim(1)));
  if (bias && (bias->rank() != 1 || bias->dim(0) != dout))
    fail(ErrorCategory::shape, "linear: bias must have shape [" + std::to_string(dout) + "]");
  const int64_t rows = input.numel() / din;

  Shape out_shape = input.shape();
  out_shape.back() = dout;
  TensorT<T> out = TensorT<T>::zeros(out_shape);
  {
    const T* x = input.values().data();
    const T* wv = weight.values().data();
    const T* b = bias ? bias->values().data() : nullptr;
    T* y = out.values().data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < dout; ++o) {
        T acc = b ? b[o] : T(0);
        const T* xr = x + r * din;
        const T* wr = wv + o * din;
        for (int64_t i = 0; i < din; ++i) acc += xr[i] * wr[i];
        y[r * dout + o] = acc;
      }
  }

  TensorT<T> x = input, wt = weight, y = out;
  std::optional<TensorT<T>> b = bias;
  std::vector<TensorT<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  g.record(out, inputs, [x, wt, b, y, rows, din, dout]() mutable {
    auto go = y.grad();
    const T* xv = x.values().data();
    const T* wv = wt.values().data();
    const bool need_dx = x.grad_path();
    const bool need_dw = wt.grad_path();
    const bool need_db = b && b->grad_path();
    if (need_dx) x.ensure_grad();
    if (need_dw) wt.ensure_grad();
    if (need_db) b->ensure_grad();
    T* dx = need_dx ? x.grad().data() : nullptr;
    T* dw = need_dw ? wt.grad().data() : nullptr;
    T* db = need_db ? b->grad().data() : nullptr;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < dout; ++o) {
        const T gv = go[r * dout + o];
        if (db) db[o] += gv;
        const T* xr = xv + r * din;
        const T* wr = wv + o * din;
        if (dx) {
          T* dxr = dx + r * din;
          for (int64_t i = 0; i < din; ++i) dxr[i] += gv * wr[i];
        }
        if (dw) {
          T* dwr = dw + o * din;
          for (int64_t i = 0; i < din; ++i) dwr[i] += gv * xr[i];
        }
      }
  });
  return out;
}

template <typename T>
TensorT<T> gelu(GraphT<T>& g, const TensorT<T>& input) {
  TensorT<T> out = TensorT<T>::zeros(input.shape());
  auto xs = input.values();
  auto ys = out.values();
  for (size_t i = 0; i < xs.size(); ++i) {
    const double x = static_cast<double>(xs[i]);
    ys[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2)));
  }
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y]() mutable {
    auto go = y.grad();
    auto xs2 = x.values();
    x.ensure_grad();
    auto dx = x.grad();
    for (size_t i = 0; i < xs2.size(); ++i) {
      const double xv = static_cast<double>(xs2[i]);
      const double cdf = 0.5 * (1.0 + std::erf(xv * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * xv * xv) / std::sqrt(2.0 * M_PI);
      dx[i] += go[i] * static_cast<T>(cdf + xv * pdf);
    }
  });
  return out;
}

template <typename T>
TensorT<T> relu(GraphT<T>& g, const TensorT<T>& input) {
  TensorT<T> out = TensorT<T>::zeros(input.shape());
  auto xs = input.values();
  auto ys = out.values();
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > T(0) ? xs[i] : T(0);
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y]() mutable {
    auto go = y.grad();
    auto xs2 = x.values();
    x.ensure_grad();
    auto dx = x.grad();
    for (size_t i = 0; i < xs2.size(); ++i)
      if (xs2[i] > T(0)) dx[i] += go[i];
  });
  return out;
}

template <typename T>
TensorT<T> sigmoid(GraphT<T>& g, const TensorT<T>& input) {
  TensorT<T> out = TensorT<T>::zeros(input.shape());
  auto xs = input.values();
  auto ys = out.values();
  for (size_t i = 0; i < xs.size(); ++i)
    ys[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xs[i]))));
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y]() mutable {
    auto go = y.grad();
    auto ys2 = y.values();
    x.ensure_grad();
    auto dx = x.grad();
    for (size_t i = 0; i < ys2.size(); ++i) dx[i] += go[i] * ys2[i] * (T(1) - ys2[i]);
  });
  return out;
}

template <typename T>
TensorT<T> layer_norm(GraphT<T>& g, const TensorT<T>& input, int normalized_dims,
                      const TensorT<T>& gamma, const TensorT<T>& beta, T eps) {
  if (normalized_dims < 1 || normalized_dims > input.rank())
    fail(ErrorCategory::shape, "layer_norm: normalized_dims must be in [1, rank], got " +
                                   std::to_string(normalized_dims));
  Shape group_shape(input.shape().end() - normalized_dims, input.shape().end());
  if (gamma.shape() != group_shape || beta.shape() != group_shape)
    fail(ErrorCategory::shape, "layer_norm: gamma/beta shape must be " + shape_str(group_shape));
  const int64_t m = shape_numel(group_shape);
  const int64_t lead = input.numel() / m;

  TensorT<T> out = TensorT<T>::zeros(input.shape());
  std::vector<T> means(static_cast<size_t>(lead));
  std::vector<T> istds(static_cast<size_t>(lead));
  {
    const T* x = input.values().data();
    const T* gv = gamma.values().data();
    const T* bv = beta.values().data();
    T* y = out.values().data();
    for (int64_t r = 0; r < lead; ++r) {
      const T* xr = x + r * m;
      T mean = T(0);
      for (int64_t j = 0; j < m; ++j) mean += xr[j];
      mean /= static_cast<T>(m);
      T var = T(0);
      for (int64_t j = 0; j < m; ++j) {
        const T d = xr[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(m);
      const T istd = T(1) / std::sqrt(var + eps);
      means[static_cast<size_t>(r)] = mean;
      istds[static_cast<size_t>(r)] = istd;
      T* yr = y + r * m;
      for (int64_t j = 0; j < m; ++j) yr[j] = gv[j] * (xr[j] - mean) * istd + bv[j];
    }
  }

  TensorT<T> x = input, ga = gamma, be = beta, y = out;
  g.record(out, {input, gamma, beta},
           [x, ga, be, y, means = std::move(means), istds = std::move(istds), lead, m]() mutable {
             auto go = y.grad();
             const T* xv = x.values().data();
             const T* gv = ga.values().data();
             const bool need_dx = x.grad_path();
             const bool need_dg = ga.grad_path();
             const bool need_db = be.grad_path();
             if (need_dx) x.ensure_grad();
             if (need_dg) ga.ensure_grad();
             if (need_db) be.ensure_grad();
             T* dx = need_dx ? x.grad().data() : nullptr;
             T* dg = need_dg ? ga.grad().data() : nullptr;
             T* db = need_db ? be.grad().data() : nullptr;
             std::vector<T> xhat(static_cast<size_t>(m));
             for (int64_t r = 0; r < lead; ++r) {
               const T* xr = xv + r * m;
               const T* gor = go.data() + r * m;
               const T mean = means[static_cast<size_t>(r)];
               const T istd = istds[static_cast<size_t>(r)];
               T s1 = T(0), s2 = T(0);
               for (int64_t j = 0; j < m; ++j) {
                 xhat[static_cast<size_t>(j)] = (xr[j] - mean) * istd;
                 const T dxh = gor[j] * gv[j];
                 s1 += dxh;
                 s2 += dxh * xhat[static_cast<size_t>(j)];
               }
               for (int64_t j = 0; j < m; ++j) {
                 const T xh = xhat[static_cast<size_t>(j)];
                 if (dx)
                   dx[r * m + j] += istd * (gor[j] * gv[j] - s1 / static_cast<T>(m) -
                                            xh * s2 / static_cast<T>(m));
                 if (dg) dg[j] += gor[j] * xh;
                 if (db) db[j] += gor[j];
               }
             }
           });
  return out;
}

template <typename T>
TensorT<T> global_response_norm(GraphT<T>& g, const TensorT<T>& input, const TensorT<T>& gamma,
                                const TensorT<T>& beta, T eps) {
  check_rank(input, 4, "global_response_norm", "input");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    fail(ErrorCategory::shape,
         "global_response_norm: gamma/beta must have shape [" + std::to_string(c) + "]");
  const int64_t hw = h * w;

  TensorT<T> out = TensorT<T>::zeros(input.shape());
  std::vector<T> l2(static_cast<size_t>(n * c));
  std::vector<T> denom(static_cast<size_t>(n));
  {
    const T* x = input.values().data();
    const T* gv = gamma.values().data();
    const T* bv = beta.values().data();
    T* y = out.values().data();
    for (int64_t in_ = 0; in_ < n; ++in_) {
      T total = T(0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* xr = x + (in_ * c + ch) * hw;
        T ss = T(0);
        for (int64_t j = 0; j < hw; ++j) ss += xr[j] * xr[j];
        const T norm = std::sqrt(ss);
        l2[static_cast<size_t>(in_ * c + ch)] = norm;
        total += norm;
      }
      denom[static_cast<size_t>(in_)] = total / static_cast<T>(c) + eps;
      for (int64_t ch = 0; ch < c; ++ch) {
        const T scale = l2[static_cast<size_t>(in_ * c + ch)] / denom[static_cast<size_t>(in_)];
        const T* xr = x + (in_ * c + ch) * hw;
        T* yr = y + (in_ * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) yr[j] = gv[ch] * xr[j] * scale + bv[ch] + xr[j];
      }
    }
  }

  TensorT<T> x = input, ga = gamma, be = beta, y = out;
  g.record(out, {input, gamma, beta},
           [x, ga, be, y, l2 = std::move(l2), denom = std::move(denom), n, c, hw]() mutable {
             auto go = y.grad();
             const T* xv = x.values().data();
             const T* gv = ga.values().data();
             const bool need_dx = x.grad_path();
             const bool need_dg = ga.grad_path();
             const bool need_db = be.grad_path();
             if (need_dx) x.ensure_grad();
             if (need_dg) ga.ensure_grad();
             if (need_db) be.ensure_grad();
             T* dx = need_dx ? x.grad().data() : nullptr;
             T* dg = need_dg ? ga.grad().data() : nullptr;
             T* db = need_db ? be.grad().data() : nullptr;
             std::vector<T> a(static_cast<size_t>(c));  // dL/dn_c per sample
             for (int64_t in_ = 0; in_ < n; ++in_) {
               const T d = denom[static_cast<size_t>(in_)];
               T adotg = T(0);
               for (int64_t ch = 0; ch < c; ++ch) {
                 const T* xr = xv + (in_ * c + ch) * hw;
                 const T* gor = go.data() + (in_ * c + ch) * hw;
                 T raw = T(0);
                 for (int64_t j = 0; j < hw; ++j) raw += gor[j] * xr[j];
                 a[static_cast<size_t>(ch)] = raw * gv[ch];
                 adotg += a[static_cast<size_t>(ch)] * l2[static_cast<size_t>(in_ * c + ch)];
                 if (dg) dg[ch] += raw * l2[static_cast<size_t>(in_ * c + ch)] / d;
                 if (db) {
                   T accb = T(0);
                   for (int64_t j = 0; j < hw; ++j) accb += gor[j];
                   db[ch] += accb;
                 }
               }
               if (!dx) continue;
               for (int64_t ch = 0; ch < c; ++ch) {
                 const T norm = l2[static_cast<size_t>(in_ * c + ch)];
                 const T scale = norm / d;
                 const T dgc = a[static_cast<size_t>(ch)] / d - adotg / (d * d * static_cast<T>(c));
                 const T xfac = norm > T(0) ? dgc / norm : T(0);
                 const T* xr = xv + (in_ * c + ch) * hw;
                 const T* gor = go.data() + (in_ * c + ch) * hw;
                 T* dxr = dx + (in_ * c + ch) * hw;
                 for (int64_t j = 0; j < hw; ++j)
                   dxr[j] += gor[j] * (gv[ch] * scale + T(1)) + xfac * xr[j];
               }
             }
           });
  return out;
}

template <typename T>
TensorT<T> softmax_with_temperature(GraphT<T>& g, const TensorT<T>& logits, T temperature) {
  check_rank(logits, 2, "softmax_with_temperature", "logits");
  if (!(temperature > T(0)))
    fail(ErrorCategory::shape, "softmax_with_temperature: temperature must be > 0");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  TensorT<T> out = TensorT<T>::zeros(logits.shape());
  {
    const T* x = logits.values().data();
    T* y = out.values().data();
    for (int64_t r = 0; r < n; ++r) {
      const T* xr = x + r * k;
      T mx = xr[0];
      for (int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
      T sum = T(0);
      T* yr = y + r * k;
      for (int64_t j = 0; j < k; ++j) {
        yr[j] = std::exp((xr[j] - mx) / temperature);
        sum += yr[j];
      }
      for (int64_t j = 0; j < k; ++j) yr[j] /= sum;
    }
  }
  TensorT<T> x = logits, y = out;
  g.record(out, {logits}, [x, y, n, k, temperature]() mutable {
    auto go = y.grad();
    const T* yv = y.values().data();
    x.ensure_grad();
    T* dx = x.grad().data();
    for (int64_t r = 0; r < n; ++r) {
      const T* yr = yv + r * k;
      const T* gor = go.data() + r * k;
      T s = T(0);
      for (int64_t j = 0; j < k; ++j) s += gor[j] * yr[j];
      for (int64_t j = 0; j < k; ++j) dx[r * k + j] += yr[j] * (gor[j] - s) / temperature;
    }
  });
  return out;
}

template <typename T>
TensorT<T> global_avg_pool(GraphT<T>& g, const TensorT<T>& input) {
  check_rank(input, 4, "global_avg_pool", "input");
  const int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  TensorT<T> out = TensorT<T>::zeros({n, c});
  {
    const T* x = input.values().data();
    T* y = out.values().data();
    for (int64_t i = 0; i < n * c; ++i) {
      T acc = T(0);
      const T* xr = x + i * hw;
      for (int64_t j = 0; j < hw; ++j) acc += xr[j];
      y[i] = acc / static_cast<T>(hw);
    }
  }
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y, n, c, hw]() mutable {
    auto go = y.grad();
    x.ensure_grad();
    T* dx = x.grad().data();
    for (int64_t i = 0; i < n * c; ++i) {
      const T gv = go[i] / static_cast<T>(hw);
      T* dxr = dx + i * hw;
      for (int64_t j = 0; j < hw; ++j) dxr[j] += gv;
    }
  });
  return out;
}

template <typename T>
TensorT<T> dropout(GraphT<T>& g, const TensorT<T>& input, double p, bool train, RngStream& rng) {
  if (p < 0.0 || p >= 1.0) fail(ErrorCategory::shape, "dropout: p must be in [0,1)");
  if (!train || p == 0.0) return input;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(static_cast<size_t>(input.numel()));
  for (T& v : mask) v = rng.bernoulli(p) ? T(0) : scale;
  TensorT<T> out = TensorT<T>::zeros(input.shape());
  {
    auto xs = input.values();
    auto ys = out.values();
    for (size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] * mask[i];
  }
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y, mask = std::move(mask)]() mutable {
    auto go = y.grad();
    x.ensure_grad();
    auto dx = x.grad();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += go[i] * mask[i];
  });
  return out;
}

template <typename T>
TensorT<T> drop_path(GraphT<T>& g, const TensorT<T>& input, double p, bool train, RngStream& rng) {
  if (p < 0.0 || p >= 1.0) fail(ErrorCategory::shape, "drop_path: p must be in [0,1)");
  if (!train || p == 0.0) return input;
  const int64_t n = input.dim(0);
  const int64_t rest = input.numel() / n;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> factor(static_cast<size_t>(n));
  for (T& v : factor) v = rng.bernoulli(p) ? T(0) : scale;
  TensorT<T> out = TensorT<T>::zeros(input.shape());
  {
    auto xs = input.values();
    auto ys = out.values();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < rest; ++j) ys[i * rest + j] = xs[i * rest + j] * factor[static_cast<size_t>(i)];
  }
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y, factor = std::move(factor), n, rest]() mutable {
    auto go = y.grad();
    x.ensure_grad();
    auto dx = x.grad();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < rest; ++j) dx[i * rest + j] += go[i * rest + j] * factor[static_cast<size_t>(i)];
  });
  return out;
}

template <typename T>
TensorT<T> reshape(GraphT<T>& g, const TensorT<T>& input, Shape shape) {
  if (shape_numel(shape) != input.numel())
    fail(ErrorCategory::shape, "reshape: element count mismatch, " + shape_str(input.shape()) +
                                   " -> " + shape_str(shape));
  TensorT<T> out = TensorT<T>::from(std::move(shape), {input.values().begin(), input.values().end()});
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y]() mutable { accumulate_grad<T>(x, y.grad()); });
  return out;
}

template <typename T>
TensorT<T> flatten(GraphT<T>& g, const TensorT<T>& input) {
  if (input.rank() < 1) fail(ErrorCategory::shape, "flatten: input must have rank >= 1");
  return reshape(g, input, {input.dim(0), input.numel() / input.dim(0)});
}

template <typename T>
TensorT<T> permute(GraphT<T>& g, const TensorT<T>& input, const std::vector<int>& axes) {
  const int rank = input.rank();
  if (static_cast<int>(axes.size()) != rank)
    fail(ErrorCategory::shape, "permute: axes size must equal rank");
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  for (int a : axes) {
    if (a < 0 || a >= rank || seen[static_cast<size_t>(a)])
      fail(ErrorCategory::shape, "permute: axes must be a permutation of 0..rank-1");
    seen[static_cast<size_t>(a)] = true;
  }
  Shape out_shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) out_shape[static_cast<size_t>(i)] = input.dim(axes[static_cast<size_t>(i)]);

  std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * input.dim(i + 1);
  std::vector<int64_t> gather_strides(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i)
    gather_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];

  const int64_t total = input.numel();
  TensorT<T> out = TensorT<T>::zeros(out_shape);
  std::vector<int64_t> src_index(static_cast<size_t>(total));
  {
    auto xs = input.values();
    auto ys = out.values();
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    for (int64_t o = 0; o < total; ++o) {
      int64_t src = 0;
      for (int i = 0; i < rank; ++i) src += idx[static_cast<size_t>(i)] * gather_strides[static_cast<size_t>(i)];
      src_index[static_cast<size_t>(o)] = src;
      ys[o] = xs[src];
      for (int i = rank - 1; i >= 0; --i) {
        if (++idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
        idx[static_cast<size_t>(i)] = 0;
      }
    }
  }
  TensorT<T> x = input, y = out;
  g.record(out, {input}, [x, y, src_index = std::move(src_index)]() mutable {
    auto go = y.grad();
    x.ensure_grad();
    auto dx = x.grad();
    for (size_t o = 0; o < src_index.size(); ++o) dx[static_cast<size_t>(src_index[o])] += go[o];
  });
  return out;
}

template <typename T>
TensorT<T> add(GraphT<T>& g, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    fail(ErrorCategory::shape,
         "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  {
    auto av = a.values();
    auto bv = b.values();
    auto ys = out.values();
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = av[i] + bv[i];
  }
  TensorT<T> ta = a, tb = b, y = out;
  g.record(out, {a, b}, [ta, tb, y]() mutable {
    if (ta.grad_path()) accumulate_grad<T>(ta, y.grad());
    if (tb.grad_path()) accumulate_grad<T>(tb, y.grad());
  });
  return out;
}

template <typename T>
TensorT<T> mul(GraphT<T>& g, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    fail(ErrorCategory::shape,
         "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  {
    auto av = a.values();
    auto bv = b.values();
    auto ys = out.values();
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = av[i] * bv[i];
  }
  TensorT<T> ta = a, tb = b, y = out;
  g.record(out, {a, b}, [ta, tb, y]() mutable {
    auto go = y.grad();
    if (ta.grad_path()) {
      ta.ensure_grad();
      auto da = ta.grad();
      auto bv = tb.values();
      for (size_t i = 0; i < da.size(); ++i) da[i] += go[i] * bv[i];
    }
    if (tb.grad_path()) {
      tb.ensure_grad();
      auto db = tb.grad();
      auto av = ta.values();
      for (size_t i = 0; i < db.size(); ++i) db[i] += go[i] * av[i];
    }
  });
  return out;
}

template <typename T>
TensorT<T> scale_channels(GraphT<T>& g, const TensorT<T>& x, const TensorT<T>& s) {
  check_rank(x, 4, "scale_channels", "input");
  check_rank(s, 2, "scale_channels", "scale");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (s.dim(0) != n || s.dim(1) != c)
    fail(ErrorCategory::shape, "scale_channels: scale must have shape [" + std::to_string(n) + "," +
                                   std::to_string(c) + "]");
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  {
    const T* xv = x.values().data();
    const T* sv = s.values().data();
    T* y = out.values().data();
    for (int64_t i = 0; i < n * c; ++i)
      for (int64_t j = 0; j < hw; ++j) y[i * hw + j] = xv[i * hw + j] * sv[i];
  }
  TensorT<T> tx = x, ts = s, y = out;
  g.record(out, {x, s}, [tx, ts, y, n, c, hw]() mutable {
    auto go = y.grad();
    if (tx.grad_path()) {
      tx.ensure_grad();
      T* dx = tx.grad().data();
      const T* sv = ts.values().data();
      for (int64_t i = 0; i < n * c; ++i)
        for (int64_t j = 0; j < hw; ++j) dx[i * hw + j] += go[i * hw + j] * sv[i];
    }
    if (ts.grad_path()) {
      ts.ensure_grad();
      T* ds = ts.grad().data();
      const T* xv = tx.values().data();
      for (int64_t i = 0; i < n * c; ++i) {
        T acc = T(0);
        for (int64_t j = 0; j < hw; ++j) acc += go[i * hw + j] * xv[i * hw + j];
        ds[i] += acc;
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> add_scalar(GraphT<T>& g, const TensorT<T>& x, T cst) {
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  auto xs = x.values();
  auto ys = out.values();
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] + cst;
  TensorT<T> tx = x, y = out;
  g.record(out, {x}, [tx, y]() mutable { accumulate_grad<T>(tx, y.grad()); });
  return out;
}

template <typename T>
TensorT<T> mul_scalar(GraphT<T>& g, const TensorT<T>& x, T cst) {
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  auto xs = x.values();
  auto ys = out.values();
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] * cst;
  TensorT<T> tx = x, y = out;
  g.record(out, {x}, [tx, y, cst]() mutable {
    auto go = y.grad();
    tx.ensure_grad();
    auto dx = tx.grad();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += go[i] * cst;
  });
  return out;
}

template <typename T>
TensorT<T> sum_all(GraphT<T>& g, const TensorT<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  TensorT<T> out = TensorT<T>::from({1}, {acc});
  TensorT<T> tx = x, y = out;
  g.record(out, {x}, [tx, y]() mutable {
    const T gv = y.grad()[0];
    tx.ensure_grad();
    auto dx = tx.grad();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
  });
  return out;
}

#define KDOCT_INSTANTIATE_OPS(T)                                                                  \
  template TensorT<T> conv2d<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&,                 \
                                const std::optional<TensorT<T>>&, int, int);                      \
  template TensorT<T> depthwise_conv2d<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&,       \
                                          const std::optional<TensorT<T>>&, int, int);            \
  template TensorT<T> linear<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&,                 \
                                const std::optional<TensorT<T>>&);                                \
  template TensorT<T> gelu<T>(GraphT<T>&, const TensorT<T>&);                                     \
  template TensorT<T> relu<T>(GraphT<T>&, const TensorT<T>&);                                     \
  template TensorT<T> sigmoid<T>(GraphT<T>&, const TensorT<T>&);                                  \
  template TensorT<T> layer_norm<T>(GraphT<T>&, const TensorT<T>&, int, const TensorT<T>&,        \
                                    const TensorT<T>&, T);                                        \
  template TensorT<T> global_response_norm<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&,   \
                                              const TensorT<T>&, T);                              \
  template TensorT<T> softmax_with_temperature<T>(GraphT<T>&, const TensorT<T>&, T);              \
  template TensorT<T> global_avg_pool<T>(GraphT<T>&, const TensorT<T>&);                          \
  template TensorT<T> dropout<T>(GraphT<T>&, const TensorT<T>&, double, bool, RngStream&);        \
  template TensorT<T> drop_path<T>(GraphT<T>&, const TensorT<T>&, double, bool, RngStream&);      \
  template TensorT<T> reshape<T>(GraphT<T>&, const TensorT<T>&, Shape);                           \
  template TensorT<T> flatten<T>(GraphT<T>&, const TensorT<T>&);                                  \
  template TensorT<T> permute<T>(GraphT<T>&, const TensorT<T>&, const std::vector<int>&);         \
  template TensorT<T> add<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&);                   \
  template TensorT<T> mul<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&);                   \
  template TensorT<T> scale_channels<T>(GraphT<T>&, const TensorT<T>&, const TensorT<T>&);        \
  template TensorT<T> add_scalar<T>(GraphT<T>&, const TensorT<T>&, T);                            \
  template TensorT<T> mul_scalar<T>(GraphT<T>&, const TensorT<T>&, T);                            \
  template TensorT<T> sum_all<T>(GraphT<T>&, const TensorT<T>&);

KDOCT_INSTANTIATE_OPS(float)
KDOCT_INSTANTIATE_OPS(double)

#undef KDOCT_INSTANTIATE_OPS

}  // namespace kdoct
