#ifndef DVOPT_ATTENTION_HPP
#define DVOPT_ATTENTION_HPP

// Feature refinement block: a channel attention stage (shared two-layer
// mapping over global max / average pooled descriptors) followed by a spatial
// attention stage (7x7 convolution over channel-pooled maps, reflective
// padding). Forward caches every intermediate needed for an exact
// reverse-mode backward, including max-pool argmax routing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvopt/rng.hpp"

namespace dvopt {

struct FeatureBlock {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;  // planar: data[(c * height + y) * width + x]

  FeatureBlock() = default;
  FeatureBlock(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w) {
    if (c <= 0 || h <= 0 || w <= 0) {
      throw std::invalid_argument("FeatureBlock dimensions must be positive");
    }
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
  }

  std::size_t idx(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  double& at(int c, int y, int x) { return data[idx(c, y, x)]; }
  double at(int c, int y, int x) const { return data[idx(c, y, x)]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const FeatureBlock& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

inline constexpr int kSpatialKernel = 7;
inline constexpr int kDefaultReduction = 4;

// Parameters of the block: shared two-layer channel mapping
// (c -> c/r -> c, ReLU hidden) applied to both pooled descriptors, plus a
// 7x7 convolution taking the 2-channel [max; avg] stack to one channel.
struct DeParams {
  int channels = 0;
  int reduction = kDefaultReduction;
  int hidden = 0;
  std::vector<double> w1;      // hidden x channels, row-major
  std::vector<double> b1;      // hidden
  std::vector<double> w2;      // channels x hidden, row-major
  std::vector<double> b2;      // channels
  std::vector<double> conv_w;  // 2 x 7 x 7, [ci][ky][kx]
  double conv_b = 0.0;

  DeParams() = default;
  DeParams(int c, int r = kDefaultReduction) : channels(c), reduction(r) {
    if (c <= 0 || r <= 0) {
      throw std::invalid_argument("DeParams: channels and reduction must be positive");
    }
    if (c % r != 0) {
      throw std::invalid_argument("DeParams: channels (" + std::to_string(c) +
                                  ") not divisible by reduction (" +
                                  std::to_string(r) + ")");
    }
    hidden = c / r;
    w1.assign(static_cast<std::size_t>(hidden) * c, 0.0);
    b1.assign(static_cast<std::size_t>(hidden), 0.0);
    w2.assign(static_cast<std::size_t>(c) * hidden, 0.0);
    b2.assign(static_cast<std::size_t>(c), 0.0);
    conv_w.assign(2 * kSpatialKernel * kSpatialKernel, 0.0);
    conv_b = 0.0;
  }

  std::size_t param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + conv_w.size() + 1;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    out.insert(out.end(), w1.begin(), w1.end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), w2.begin(), w2.end());
    out.insert(out.end(), b2.begin(), b2.end());
    out.insert(out.end(), conv_w.begin(), conv_w.end());
    out.push_back(conv_b);
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != param_count()) {
      throw std::invalid_argument("DeParams::unflatten: size mismatch");
    }
    std::size_t o = 0;
    auto take = [&](std::vector<double>& dst) {
      std::copy(flat.begin() + o, flat.begin() + o + dst.size(), dst.begin());
      o += dst.size();
    };
    take(w1);
    take(b1);
    take(w2);
    take(b2);
    take(conv_w);
    conv_b = flat[o];
  }

  void randomize(Rng& rng, double scale = 0.5) {
    for (auto& v : w1) v = scale * rng.normal();
    for (auto& v : b1) v = scale * rng.normal();
    for (auto& v : w2) v = scale * rng.normal();
    for (auto& v : b2) v = scale * rng.normal();
    for (auto& v : conv_w) v = scale * rng.normal();
    conv_b = scale * rng.normal();
  }
};

// Gradients for DeParams, same shapes.
struct DeParamGrads {
  std::vector<double> w1, b1, w2, b2, conv_w;
  double conv_b = 0.0;

  explicit DeParamGrads(const DeParams& p)
      : w1(p.w1.size(), 0.0),
        b1(p.b1.size(), 0.0),
        w2(p.w2.size(), 0.0),
        b2(p.b2.size(), 0.0),
        conv_w(p.conv_w.size(), 0.0) {}

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(w1.size() + b1.size() + w2.size() + b2.size() + conv_w.size() + 1);
    out.insert(out.end(), w1.begin(), w1.end());
    out.insert(out.end(), b1.begin(), b1.end());
    out.insert(out.end(), w2.begin(), w2.end());
    out.insert(out.end(), b2.begin(), b2.end());
    out.insert(out.end(), conv_w.begin(), conv_w.end());
    out.push_back(conv_b);
    return out;
  }
};

namespace detail {

// Mirror an out-of-range index back into [0, n): reflection without
// repeating the border sample. n == 1 collapses to index 0.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline double logistic_stable(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline std::uint64_t hash_doubles(const std::vector<double>& v,
                                  std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double d : v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &d, sizeof(bits));
    h = hash_u64(h ^ bits);
  }
  return h;
}

inline std::uint64_t params_fingerprint(const DeParams& p) {
  std::uint64_t h = hash_u64(static_cast<std::uint64_t>(p.channels) * 131 +
                             static_cast<std::uint64_t>(p.reduction));
  h = hash_doubles(p.w1, h);
  h = hash_doubles(p.b1, h);
  h = hash_doubles(p.w2, h);
  h = hash_doubles(p.b2, h);
  h = hash_doubles(p.conv_w, h);
  std::uint64_t bits = 0;
  std::memcpy(&bits, &p.conv_b, sizeof(bits));
  return hash_u64(h ^ bits);
}

}  // namespace detail

// Everything the backward pass needs, captured at forward time.
struct DeCache {
  int channels = 0, height = 0, width = 0;
  std::uint64_t params_fingerprint = 0;
  std::vector<double> input;        // copy of F
  std::vector<double> pool_max;     // per channel
  std::vector<int> pool_argmax;     // linear spatial index per channel
  std::vector<double> pool_avg;     // per channel
  std::vector<double> hid_max;      // hidden pre-activation, max branch
  std::vector<double> hid_avg;      // hidden pre-activation, avg branch
  std::vector<double> chan_pre;     // per channel, pre-logistic
  std::vector<double> chan_att;     // A_c
  std::vector<double> refined;      // F' = A_c * F
  std::vector<double> spatial_max;  // h*w
  std::vector<int> spatial_argmax;  // channel index per pixel
  std::vector<double> spatial_avg;  // h*w
  std::vector<double> conv_pre;     // h*w, pre-logistic
  std::vector<double> spatial_att;  // A_s
};

struct DeForwardResult {
  FeatureBlock output;
  DeCache cache;
};

inline DeForwardResult de_forward(const FeatureBlock& f, const DeParams& p) {
  const int c = f.channels, h = f.height, w = f.width;
  if (c <= 0 || h <= 0 || w <= 0 || f.data.size() != static_cast<std::size_t>(c) * h * w) {
    throw std::invalid_argument("de_forward: malformed feature block");
  }
  if (p.channels != c) {
    throw std::invalid_argument("de_forward: parameter channels (" +
                                std::to_string(p.channels) +
                                ") do not match feature channels (" +
                                std::to_string(c) + ")");
  }
  const int hid = p.hidden;
  const int hw = h * w;

  DeForwardResult r;
  DeCache& k = r.cache;
  k.channels = c;
  k.height = h;
  k.width = w;
  k.params_fingerprint = detail::params_fingerprint(p);
  k.input = f.data;

  // Global pooling per channel; max ties resolve to the lowest linear index.
  k.pool_max.assign(c, 0.0);
  k.pool_argmax.assign(c, 0);
  k.pool_avg.assign(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = f.data.data() + static_cast<std::size_t>(ch) * hw;
    double best = plane[0];
    int best_i = 0;
    double sum = 0.0;
    for (int i = 0; i < hw; ++i) {
      sum += plane[i];
      if (plane[i] > best) {
        best = plane[i];
        best_i = i;
      }
    }
    k.pool_max[ch] = best;
    k.pool_argmax[ch] = best_i;
    k.pool_avg[ch] = sum / hw;
  }

  // Shared two-layer mapping applied to each pooled descriptor, summed.
  auto mlp_hidden = [&](const std::vector<double>& x, std::vector<double>& pre) {
    pre.assign(hid, 0.0);
    for (int j = 0; j < hid; ++j) {
      double s = p.b1[static_cast<std::size_t>(j)];
      const double* row = p.w1.data() + static_cast<std::size_t>(j) * c;
      for (int i = 0; i < c; ++i) s += row[i] * x[static_cast<std::size_t>(i)];
      pre[static_cast<std::size_t>(j)] = s;
    }
  };
  mlp_hidden(k.pool_max, k.hid_max);
  mlp_hidden(k.pool_avg, k.hid_avg);

  k.chan_pre.assign(c, 0.0);
  for (int i = 0; i < c; ++i) {
    double s = 2.0 * p.b2[static_cast<std::size_t>(i)];
    const double* row = p.w2.data() + static_cast<std::size_t>(i) * hid;
    for (int j = 0; j < hid; ++j) {
      const double hm = k.hid_max[static_cast<std::size_t>(j)];
      const double ha = k.hid_avg[static_cast<std::size_t>(j)];
      s += row[j] * ((hm > 0.0 ? hm : 0.0) + (ha > 0.0 ? ha : 0.0));
    }
    k.chan_pre[static_cast<std::size_t>(i)] = s;
  }
  k.chan_att.assign(c, 0.0);
  for (int i = 0; i < c; ++i) {
    k.chan_att[static_cast<std::size_t>(i)] =
        detail::logistic_stable(k.chan_pre[static_cast<std::size_t>(i)]);
  }

  // F' = A_c broadcast over space.
  k.refined.assign(f.data.size(), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double a = k.chan_att[static_cast<std::size_t>(ch)];
    const double* src = f.data.data() + static_cast<std::size_t>(ch) * hw;
    double* dst = k.refined.data() + static_cast<std::size_t>(ch) * hw;
    for (int i = 0; i < hw; ++i) dst[i] = a * src[i];
  }

  // Channel-pooled maps of F'; max ties resolve to the lowest channel index.
  k.spatial_max.assign(hw, 0.0);
  k.spatial_argmax.assign(hw, 0);
  k.spatial_avg.assign(hw, 0.0);
  for (int i = 0; i < hw; ++i) {
    double best = k.refined[static_cast<std::size_t>(i)];
    int best_c = 0;
    double sum = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double v = k.refined[static_cast<std::size_t>(ch) * hw + i];
      sum += v;
      if (v > best) {
        best = v;
        best_c = ch;
      }
    }
    k.spatial_max[static_cast<std::size_t>(i)] = best;
    k.spatial_argmax[static_cast<std::size_t>(i)] = best_c;
    k.spatial_avg[static_cast<std::size_t>(i)] = sum / c;
  }

  // 7x7 convolution over the 2-channel stack with reflective padding.
  const int pad = kSpatialKernel / 2;
  k.conv_pre.assign(hw, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = p.conv_b;
      for (int ky = 0; ky < kSpatialKernel; ++ky) {
        const int sy = detail::reflect_index(y + ky - pad, h);
        for (int kx = 0; kx < kSpatialKernel; ++kx) {
          const int sx = detail::reflect_index(x + kx - pad, w);
          const int si = sy * w + sx;
          const double w0 =
              p.conv_w[static_cast<std::size_t>((0 * kSpatialKernel + ky)) * kSpatialKernel + kx];
          const double w1 =
              p.conv_w[static_cast<std::size_t>((1 * kSpatialKernel + ky)) * kSpatialKernel + kx];
          s += w0 * k.spatial_max[static_cast<std::size_t>(si)] +
               w1 * k.spatial_avg[static_cast<std::size_t>(si)];
        }
      }
      k.conv_pre[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  k.spatial_att.assign(hw, 0.0);
  for (int i = 0; i < hw; ++i) {
    k.spatial_att[static_cast<std::size_t>(i)] =
        detail::logistic_stable(k.conv_pre[static_cast<std::size_t>(i)]);
  }

  r.output = FeatureBlock(c, h, w);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = k.refined.data() + static_cast<std::size_t>(ch) * hw;
    double* dst = r.output.data.data() + static_cast<std::size_t>(ch) * hw;
    for (int i = 0; i < hw; ++i) dst[i] = k.spatial_att[static_cast<std::size_t>(i)] * src[i];
  }
  return r;
}

struct DeBackwardResult {
  FeatureBlock d_input;
  DeParamGrads d_params;

  explicit DeBackwardResult(const DeParams& p) : d_params(p) {}
};

inline DeBackwardResult de_backward(const DeCache& k, const DeParams& p,
                                    const FeatureBlock& upstream) {
  const int c = k.channels, h = k.height, w = k.width;
  if (upstream.channels != c || upstream.height != h || upstream.width != w) {
    throw std::invalid_argument("de_backward: upstream gradient shape mismatch");
  }
  if (p.channels != c) {
    throw std::invalid_argument("de_backward: parameter shape mismatch");
  }
  if (detail::params_fingerprint(p) != k.params_fingerprint) {
    throw std::invalid_argument(
        "de_backward: stale cache (parameters changed since forward)");
  }
  const int hid = p.hidden;
  const int hw = h * w;
  const int pad = kSpatialKernel / 2;

  DeBackwardResult r(p);
  r.d_input = FeatureBlock(c, h, w);

  // out = A_s(i) * F'(ch, i)
  std::vector<double> d_as(hw, 0.0);
  std::vector<double> d_refined(static_cast<std::size_t>(c) * hw, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double* up = upstream.data.data() + static_cast<std::size_t>(ch) * hw;
    const double* fp = k.refined.data() + static_cast<std::size_t>(ch) * hw;
    double* dr = d_refined.data() + static_cast<std::size_t>(ch) * hw;
    for (int i = 0; i < hw; ++i) {
      d_as[static_cast<std::size_t>(i)] += up[i] * fp[i];
      dr[i] += up[i] * k.spatial_att[static_cast<std::size_t>(i)];
    }
  }

  // A_s = logistic(conv_pre)
  std::vector<double> d_conv_pre(hw, 0.0);
  for (int i = 0; i < hw; ++i) {
    const double a = k.spatial_att[static_cast<std::size_t>(i)];
    d_conv_pre[static_cast<std::size_t>(i)] = d_as[static_cast<std::size_t>(i)] * a * (1.0 - a);
  }

  // conv_pre = conv([spatial_max; spatial_avg]) + conv_b
  std::vector<double> d_smax(hw, 0.0), d_savg(hw, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = d_conv_pre[static_cast<std::size_t>(y * w + x)];
      if (g == 0.0) continue;
      r.d_params.conv_b += g;
      for (int ky = 0; ky < kSpatialKernel; ++ky) {
        const int sy = detail::reflect_index(y + ky - pad, h);
        for (int kx = 0; kx < kSpatialKernel; ++kx) {
          const int sx = detail::reflect_index(x + kx - pad, w);
          const int si = sy * w + sx;
          const std::size_t w0i =
              static_cast<std::size_t>(0 * kSpatialKernel + ky) * kSpatialKernel + kx;
          const std::size_t w1i =
              static_cast<std::size_t>(1 * kSpatialKernel + ky) * kSpatialKernel + kx;
          r.d_params.conv_w[w0i] += g * k.spatial_max[static_cast<std::size_t>(si)];
          r.d_params.conv_w[w1i] += g * k.spatial_avg[static_cast<std::size_t>(si)];
          d_smax[static_cast<std::size_t>(si)] += g * p.conv_w[w0i];
          d_savg[static_cast<std::size_t>(si)] += g * p.conv_w[w1i];
        }
      }
    }
  }

  // spatial_max routes to the argmax channel; spatial_avg spreads evenly.
  for (int i = 0; i < hw; ++i) {
    const int bc = k.spatial_argmax[static_cast<std::size_t>(i)];
    d_refined[static_cast<std::size_t>(bc) * hw + i] += d_smax[static_cast<std::size_t>(i)];
    const double spread = d_savg[static_cast<std::size_t>(i)] / c;
    for (int ch = 0; ch < c; ++ch) {
      d_refined[static_cast<std::size_t>(ch) * hw + i] += spread;
    }
  }

  // F' = A_c(ch) * F
  std::vector<double> d_ac(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double a = k.chan_att[static_cast<std::size_t>(ch)];
    const double* fin = k.input.data() + static_cast<std::size_t>(ch) * hw;
    const double* dr = d_refined.data() + static_cast<std::size_t>(ch) * hw;
    double* di = r.d_input.data.data() + static_cast<std::size_t>(ch) * hw;
    double acc = 0.0;
    for (int i = 0; i < hw; ++i) {
      acc += dr[i] * fin[i];
      di[i] += dr[i] * a;
    }
    d_ac[static_cast<std::size_t>(ch)] = acc;
  }

  // A_c = logistic(chan_pre); chan_pre = W2 relu(hid_max) + W2 relu(hid_avg) + 2 b2
  std::vector<double> d_pre(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double a = k.chan_att[static_cast<std::size_t>(ch)];
    d_pre[static_cast<std::size_t>(ch)] = d_ac[static_cast<std::size_t>(ch)] * a * (1.0 - a);
  }
  std::vector<double> d_hid_max(hid, 0.0), d_hid_avg(hid, 0.0);
  for (int i = 0; i < c; ++i) {
    const double g = d_pre[static_cast<std::size_t>(i)];
    r.d_params.b2[static_cast<std::size_t>(i)] += 2.0 * g;
    const double* row = p.w2.data() + static_cast<std::size_t>(i) * hid;
    double* gw2 = r.d_params.w2.data() + static_cast<std::size_t>(i) * hid;
    for (int j = 0; j < hid; ++j) {
      const double hm = k.hid_max[static_cast<std::size_t>(j)];
      const double ha = k.hid_avg[static_cast<std::size_t>(j)];
      const double rm = hm > 0.0 ? hm : 0.0;
      const double ra = ha > 0.0 ? ha : 0.0;
      gw2[j] += g * (rm + ra);
      if (hm > 0.0) d_hid_max[static_cast<std::size_t>(j)] += g * row[j];
      if (ha > 0.0) d_hid_avg[static_cast<std::size_t>(j)] += g * row[j];
    }
  }

  // hid = W1 x + b1 for each pooled descriptor.
  std::vector<double> d_pool_max(c, 0.0), d_pool_avg(c, 0.0);
  for (int j = 0; j < hid; ++j) {
    const double gm = d_hid_max[static_cast<std::size_t>(j)];
    const double ga = d_hid_avg[static_cast<std::size_t>(j)];
    r.d_params.b1[static_cast<std::size_t>(j)] += gm + ga;
    const double* row = p.w1.data() + static_cast<std::size_t>(j) * c;
    double* gw1 = r.d_params.w1.data() + static_cast<std::size_t>(j) * c;
    for (int i = 0; i < c; ++i) {
      gw1[i] += gm * k.pool_max[static_cast<std::size_t>(i)] +
                ga * k.pool_avg[static_cast<std::size_t>(i)];
      d_pool_max[static_cast<std::size_t>(i)] += gm * row[i];
      d_pool_avg[static_cast<std::size_t>(i)] += ga * row[i];
    }
  }

  // pool_max routes to the argmax pixel; pool_avg spreads evenly.
  for (int ch = 0; ch < c; ++ch) {
    double* di = r.d_input.data.data() + static_cast<std::size_t>(ch) * hw;
    di[k.pool_argmax[static_cast<std::size_t>(ch)]] += d_pool_max[static_cast<std::size_t>(ch)];
    const double spread = d_pool_avg[static_cast<std::size_t>(ch)] / hw;
    for (int i = 0; i < hw; ++i) di[i] += spread;
  }

  return r;
}

}  // namespace dvopt

#endif  // DVOPT_ATTENTION_HPP
