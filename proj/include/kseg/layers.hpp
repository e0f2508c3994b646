#ifndef KSEG_LAYERS_HPP
#define KSEG_LAYERS_HPP

#include <string>

#include "kseg/rng.hpp"
#include "kseg/tensor.hpp"

namespace kseg {

template <class Scalar>
struct ParamRef {
  std::string name;
  Scalar* value;
  Scalar* grad;
  std::size_t count;
};

template <class Scalar>
struct Workspace {
  MatrixX<Scalar> col;
  MatrixX<Scalar> dcol;
  MatrixX<Scalar> scratch;
};

// Rows of an im2col chunk; bounds the buffer to ~32 MB of floats for the
// widest layers while keeping the GEMMs long.
inline Eigen::Index conv_chunk_rows(Eigen::Index k_cols) {
  const Eigen::Index budget = Eigen::Index(1) << 23;
  return std::max<Eigen::Index>(256, budget / std::max<Eigen::Index>(1, k_cols));
}

// 3x3x3 convolution, zero padding 1, stride 1 or 2. Weights are stored as a
// (cin*27 x cout) matrix whose row order matches the im2col column order
// k = ci*27 + ((dx+1)*3 + (dy+1))*3 + (dz+1).
template <class Scalar>
struct Conv3 {
  int cin = 0, cout = 0, stride = 1;
  MatrixX<Scalar> W, gW;
  VectorX<Scalar> b, gb;

  void init(int cin_, int cout_, int stride_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    stride = stride_;
    W.resize(Eigen::Index(cin) * 27, cout);
    gW = MatrixX<Scalar>::Zero(W.rows(), W.cols());
    b = VectorX<Scalar>::Zero(cout);
    gb = VectorX<Scalar>::Zero(cout);
    const double std = std::sqrt(2.0 / (double(cin) * 27.0));
    for (Eigen::Index i = 0; i < W.size(); ++i)
      W.data()[i] = Scalar(rng.normal(0.0, std));
  }

  static std::array<int, 3> out_shape(const std::array<int, 3>& in, int stride) {
    std::array<int, 3> o;
    for (int a = 0; a < 3; ++a) o[a] = (in[a] - 1) / stride + 1;
    return o;
  }
};

namespace detail {

// Fills (or scatters) one im2col chunk covering output voxels [v0, v1).
// Gather: col(v - v0, k) = in(ci, x*s+dx, y*s+dy, z*s+dz) with zero padding.
// Scatter: the reverse, accumulating into din.
template <class Scalar, bool kScatter>
void im2col_chunk(Scalar* chan_begin, int cin, const std::array<int, 3>& in_shape,
                  const std::array<int, 3>& out_shape, int stride,
                  MatrixX<Scalar>& col, std::size_t v0, std::size_t v1) {
  const int nx = in_shape[0], ny = in_shape[1], nz = in_shape[2];
  const int oy = out_shape[1], oz = out_shape[2];
  const std::size_t chan_voxels = std::size_t(nx) * ny * nz;
  const Eigen::Index len = Eigen::Index(v1 - v0);
  for (int ci = 0; ci < cin; ++ci) {
    Scalar* chan = chan_begin + std::size_t(ci) * chan_voxels;
    for (int kidx = 0; kidx < 27; ++kidx) {
      const int dx = kidx / 9 - 1, dy = (kidx / 3) % 3 - 1, dz = kidx % 3 - 1;
      Scalar* c = col.col(Eigen::Index(ci) * 27 + kidx).data();
      // Valid z range of the *output* index for this dz.
      const int zlo_all = dz < 0 ? 1 : 0;  // z*s + dz >= 0, s >= 1, dz >= -1
      const int zhi_all = (nz - 1 - dz) / stride;
      std::size_t v = v0;
      while (v < v1) {
        const std::size_t plane = std::size_t(oy) * oz;
        const int x = int(v / plane);
        const std::size_t rem = v % plane;
        const int y = int(rem / oz);
        const int z0 = int(rem % oz);
        const int run = int(std::min<std::size_t>(std::size_t(oz - z0), v1 - v));
        Scalar* dst = c + (v - v0);
        const int sx = x * stride + dx;
        const int sy = y * stride + dy;
        if (sx < 0 || sx >= nx || sy < 0 || sy >= ny) {
          if constexpr (!kScatter) std::fill(dst, dst + run, Scalar(0));
        } else {
          Scalar* src = chan + (std::size_t(sx) * ny + sy) * nz;
          const int zlo = std::max(z0, zlo_all);
          const int zhi = std::min(z0 + run - 1, zhi_all);
          if constexpr (!kScatter) {
            for (int z = z0; z < std::min(z0 + run, zlo); ++z) dst[z - z0] = Scalar(0);
            for (int z = std::max(z0, zhi + 1); z < z0 + run; ++z) dst[z - z0] = Scalar(0);
          }
          if (zlo <= zhi) {
            if constexpr (kScatter) {
              if (stride == 1) {
                for (int z = zlo; z <= zhi; ++z) src[z + dz] += dst[z - z0];
              } else {
                for (int z = zlo; z <= zhi; ++z) src[z * stride + dz] += dst[z - z0];
              }
            } else {
              if (stride == 1) {
                std::copy(src + zlo + dz, src + zhi + 1 + dz, dst + (zlo - z0));
              } else {
                for (int z = zlo; z <= zhi; ++z) dst[z - z0] = src[z * stride + dz];
              }
            }
          }
        }
        v += run;
      }
    }
  }
}

}  // namespace detail

template <class Scalar>
void conv3_forward(const Conv3<Scalar>& conv, const Tensor<Scalar>& in, Tensor<Scalar>& out,
                   Workspace<Scalar>& ws) {
  const auto os = Conv3<Scalar>::out_shape(in.spatial(), conv.stride);
  out = Tensor<Scalar>(in.n, conv.cout, os[0], os[1], os[2]);
  const Eigen::Index K = Eigen::Index(conv.cin) * 27;
  const std::size_t vtotal = out.voxels();
  const Eigen::Index chunk = conv_chunk_rows(K);
  if (ws.col.rows() < chunk || ws.col.cols() != K) ws.col.resize(chunk, K);
  for (int n = 0; n < in.n; ++n) {
    auto out_mat = out.sample_mat(n);
    // const_cast: the gather path never writes through chan_begin.
    Scalar* chan = const_cast<Scalar*>(in.sample(n));
    for (std::size_t v0 = 0; v0 < vtotal; v0 += std::size_t(chunk)) {
      const std::size_t v1 = std::min(vtotal, v0 + std::size_t(chunk));
      detail::im2col_chunk<Scalar, false>(chan, conv.cin, in.spatial(), os, conv.stride,
                                          ws.col, v0, v1);
      const Eigen::Index len = Eigen::Index(v1 - v0);
      out_mat.middleRows(Eigen::Index(v0), len).noalias() =
          ws.col.topRows(len) * conv.W;
      out_mat.middleRows(Eigen::Index(v0), len).rowwise() += conv.b.transpose();
    }
  }
}

// Accumulates gW/gb; writes input gradient into din when non-null.
template <class Scalar>
void conv3_backward(Conv3<Scalar>& conv, const Tensor<Scalar>& in,
                    const Tensor<Scalar>& dout, Tensor<Scalar>* din,
                    Workspace<Scalar>& ws) {
  const auto os = dout.spatial();
  const Eigen::Index K = Eigen::Index(conv.cin) * 27;
  const std::size_t vtotal = dout.voxels();
  const Eigen::Index chunk = conv_chunk_rows(K);
  if (ws.col.rows() < chunk || ws.col.cols() != K) ws.col.resize(chunk, K);
  if (din) {
    *din = Tensor<Scalar>(in.n, in.c, in.x, in.y, in.z);
    if (ws.dcol.rows() < chunk || ws.dcol.cols() != K) ws.dcol.resize(chunk, K);
  }
  for (int n = 0; n < in.n; ++n) {
    auto dout_mat = dout.sample_mat(n);
    Scalar* chan = const_cast<Scalar*>(in.sample(n));
    for (std::size_t v0 = 0; v0 < vtotal; v0 += std::size_t(chunk)) {
      const std::size_t v1 = std::min(vtotal, v0 + std::size_t(chunk));
      const Eigen::Index len = Eigen::Index(v1 - v0);
      detail::im2col_chunk<Scalar, false>(chan, conv.cin, in.spatial(), os, conv.stride,
                                          ws.col, v0, v1);
      conv.gW.noalias() +=
          ws.col.topRows(len).transpose() * dout_mat.middleRows(Eigen::Index(v0), len);
      conv.gb.noalias() +=
          dout_mat.middleRows(Eigen::Index(v0), len).colwise().sum().transpose();
      if (din) {
        ws.dcol.topRows(len).noalias() =
            dout_mat.middleRows(Eigen::Index(v0), len) * conv.W.transpose();
        detail::im2col_chunk<Scalar, true>(din->sample(n), conv.cin, in.spatial(), os,
                                           conv.stride, ws.dcol, v0, v1);
      }
    }
  }
}

// Transposed convolution, kernel 2, stride 2 (exact 2x upsampling). Weights:
// (8*cin x cout), parity block p = ((px*2)+py)*2+pz occupies rows [p*cin, ...).
template <class Scalar>
struct UpConv2 {
  int cin = 0, cout = 0;
  MatrixX<Scalar> W, gW;
  VectorX<Scalar> b, gb;

  void init(int cin_, int cout_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    W.resize(Eigen::Index(cin) * 8, cout);
    gW = MatrixX<Scalar>::Zero(W.rows(), W.cols());
    b = VectorX<Scalar>::Zero(cout);
    gb = VectorX<Scalar>::Zero(cout);
    const double std = std::sqrt(2.0 / double(cin));
    for (Eigen::Index i = 0; i < W.size(); ++i)
      W.data()[i] = Scalar(rng.normal(0.0, std));
  }
};

template <class Scalar>
void upconv2_forward(const UpConv2<Scalar>& up, const Tensor<Scalar>& in,
                     Tensor<Scalar>& out, Workspace<Scalar>& ws) {
  out = Tensor<Scalar>(in.n, up.cout, in.x * 2, in.y * 2, in.z * 2);
  const Eigen::Index vi = Eigen::Index(in.voxels());
  for (int n = 0; n < in.n; ++n) {
    auto in_mat = in.sample_mat(n);
    for (int p = 0; p < 8; ++p) {
      const int px = p >> 2, py = (p >> 1) & 1, pz = p & 1;
      ws.scratch.resize(vi, up.cout);
      ws.scratch.noalias() = in_mat * up.W.middleRows(Eigen::Index(p) * up.cin, up.cin);
      ws.scratch.rowwise() += up.b.transpose();
      for (int co = 0; co < up.cout; ++co) {
        const Scalar* src = ws.scratch.col(co).data();
        Scalar* dst = out.channel(n, co);
        for (int xx = 0; xx < in.x; ++xx)
          for (int yy = 0; yy < in.y; ++yy) {
            const Scalar* s = src + (std::size_t(xx) * in.y + yy) * in.z;
            Scalar* d = dst + (std::size_t(2 * xx + px) * out.y + (2 * yy + py)) * out.z + pz;
            for (int zz = 0; zz < in.z; ++zz) d[2 * zz] = s[zz];
          }
      }
    }
  }
}

template <class Scalar>
void upconv2_backward(UpConv2<Scalar>& up, const Tensor<Scalar>& in,
                      const Tensor<Scalar>& dout, Tensor<Scalar>* din,
                      Workspace<Scalar>& ws) {
  const Eigen::Index vi = Eigen::Index(in.voxels());
  if (din) *din = Tensor<Scalar>(in.n, in.c, in.x, in.y, in.z);
  for (int n = 0; n < in.n; ++n) {
    auto in_mat = in.sample_mat(n);
    up.gb.noalias() += dout.sample_mat(n).colwise().sum().transpose();
    for (int p = 0; p < 8; ++p) {
      const int px = p >> 2, py = (p >> 1) & 1, pz = p & 1;
      ws.scratch.resize(vi, up.cout);
      for (int co = 0; co < up.cout; ++co) {
        Scalar* dst = ws.scratch.col(co).data();
        const Scalar* src = dout.channel(n, co);
        for (int xx = 0; xx < in.x; ++xx)
          for (int yy = 0; yy < in.y; ++yy) {
            Scalar* d = dst + (std::size_t(xx) * in.y + yy) * in.z;
            const Scalar* s =
                src + (std::size_t(2 * xx + px) * dout.y + (2 * yy + py)) * dout.z + pz;
            for (int zz = 0; zz < in.z; ++zz) d[zz] = s[2 * zz];
          }
      }
      up.gW.middleRows(Eigen::Index(p) * up.cin, up.cin).noalias() +=
          in_mat.transpose() * ws.scratch;
      if (din)
        din->sample_mat(n).noalias() +=
            ws.scratch * up.W.middleRows(Eigen::Index(p) * up.cin, up.cin).transpose();
    }
  }
}

// 1x1x1 convolution; weights (cin x cout).
template <class Scalar>
struct Conv1 {
  int cin = 0, cout = 0;
  MatrixX<Scalar> W, gW;
  VectorX<Scalar> b, gb;

  void init(int cin_, int cout_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    W.resize(cin, cout);
    gW = MatrixX<Scalar>::Zero(cin, cout);
    b = VectorX<Scalar>::Zero(cout);
    gb = VectorX<Scalar>::Zero(cout);
    const double std = std::sqrt(2.0 / double(cin));
    for (Eigen::Index i = 0; i < W.size(); ++i)
      W.data()[i] = Scalar(rng.normal(0.0, std));
  }
};

template <class Scalar>
void conv1_forward(const Conv1<Scalar>& conv, const Tensor<Scalar>& in,
                   Tensor<Scalar>& out) {
  out = Tensor<Scalar>(in.n, conv.cout, in.x, in.y, in.z);
  for (int n = 0; n < in.n; ++n) {
    out.sample_mat(n).noalias() = in.sample_mat(n) * conv.W;
    out.sample_mat(n).rowwise() += conv.b.transpose();
  }
}

template <class Scalar>
void conv1_backward(Conv1<Scalar>& conv, const Tensor<Scalar>& in,
                    const Tensor<Scalar>& dout, Tensor<Scalar>* din) {
  if (din && !din->same_shape(in)) *din = Tensor<Scalar>(in.n, in.c, in.x, in.y, in.z);
  for (int n = 0; n < in.n; ++n) {
    conv.gW.noalias() += in.sample_mat(n).transpose() * dout.sample_mat(n);
    conv.gb.noalias() += dout.sample_mat(n).colwise().sum().transpose();
    if (din) din->sample_mat(n).noalias() += dout.sample_mat(n) * conv.W.transpose();
  }
}

// Instance normalization with per-channel affine; statistics per (sample,
// channel) over the spatial voxels.
template <class Scalar>
struct InstanceNorm {
  static constexpr double kEps = 1e-5;
  int channels = 0;
  VectorX<Scalar> gamma, beta, ggamma, gbeta;

  void init(int channels_) {
    channels = channels_;
    gamma = VectorX<Scalar>::Ones(channels);
    beta = VectorX<Scalar>::Zero(channels);
    ggamma = VectorX<Scalar>::Zero(channels);
    gbeta = VectorX<Scalar>::Zero(channels);
  }
};

template <class Scalar>
struct NormCache {
  Tensor<Scalar> xhat;        // normalized pre-affine values
  MatrixX<Scalar> inv_std;    // (n x c)
};

// In-place; when cache is non-null it receives what the backward pass needs.
template <class Scalar>
void instnorm_forward(const InstanceNorm<Scalar>& norm, Tensor<Scalar>& io,
                      NormCache<Scalar>* cache) {
  const Eigen::Index nv = Eigen::Index(io.voxels());
  if (cache) {
    cache->xhat = Tensor<Scalar>(io.n, io.c, io.x, io.y, io.z);
    cache->inv_std.resize(io.n, io.c);
  }
  for (int n = 0; n < io.n; ++n)
    for (int c = 0; c < io.c; ++c) {
      ArrMap<Scalar> a(io.channel(n, c), nv);
      const double mean = a.template cast<double>().mean();
      const double var = (a.template cast<double>() - mean).square().mean();
      const Scalar inv = Scalar(1.0 / std::sqrt(var + InstanceNorm<Scalar>::kEps));
      const Scalar mu = Scalar(mean);
      if (cache) {
        cache->inv_std(n, c) = inv;
        ArrMap<Scalar> xh(cache->xhat.channel(n, c), nv);
        xh = (a - mu) * inv;
        a = xh * norm.gamma[c] + norm.beta[c];
      } else {
        a = (a - mu) * (inv * norm.gamma[c]) + norm.beta[c];
      }
    }
}

// In-place on dio (receives d(output), leaves d(input)).
// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)),
// dxhat = dy * gamma.
template <class Scalar>
void instnorm_backward(InstanceNorm<Scalar>& norm, const NormCache<Scalar>& cache,
                       Tensor<Scalar>& dio) {
  const Eigen::Index nv = Eigen::Index(dio.voxels());
  const double inv_n = 1.0 / double(nv);
  for (int n = 0; n < dio.n; ++n)
    for (int c = 0; c < dio.c; ++c) {
      ArrMap<Scalar> dy(dio.channel(n, c), nv);
      ConstArrMap<Scalar> xh(cache.xhat.channel(n, c), nv);
      const double sum_dy = dy.template cast<double>().sum();
      const double sum_dyx = (dy.template cast<double>() * xh.template cast<double>()).sum();
      norm.gbeta[c] += Scalar(sum_dy);
      norm.ggamma[c] += Scalar(sum_dyx);
      const double g = double(norm.gamma[c]);
      const Scalar m1 = Scalar(g * sum_dy * inv_n);
      const Scalar m2 = Scalar(g * sum_dyx * inv_n);
      dy = (dy * Scalar(g) - m1 - xh * m2) * cache.inv_std(n, c);
    }
}

// LeakyReLU, in place. The backward variant keys on the sign of the *output*,
// which matches the input's sign for any positive slope.
template <class Scalar>
void leaky_relu_forward(Tensor<Scalar>& io, Scalar slope) {
  for (Scalar& v : io.v) v = v >= Scalar(0) ? v : v * slope;
}

template <class Scalar>
void leaky_relu_backward(const Tensor<Scalar>& out, Tensor<Scalar>& dio, Scalar slope) {
  for (std::size_t i = 0; i < dio.v.size(); ++i) {
    if (out.v[i] < Scalar(0)) dio.v[i] *= slope;
  }
}

}  // namespace kseg

#endif  // KSEG_LAYERS_HPP
