#ifndef KSEG_TENSOR_HPP
#define KSEG_TENSOR_HPP

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace kseg {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MatMap = Eigen::Map<MatrixX<Scalar>>;
template <class Scalar>
using ConstMatMap = Eigen::Map<const MatrixX<Scalar>>;
template <class Scalar>
using ArrMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <class Scalar>
using ConstArrMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

// Batched feature tensor (n, c, x, y, z), z fastest. For a fixed sample the
// channels form contiguous blocks, so the sample views as a column-major
// (voxels x channels) matrix and convolutions become plain GEMMs.
template <class Scalar>
struct Tensor {
  int n = 0, c = 0, x = 0, y = 0, z = 0;
  std::vector<Scalar> v;

  Tensor() = default;
  Tensor(int n_, int c_, int x_, int y_, int z_)
      : n(n_), c(c_), x(x_), y(y_), z(z_),
        v(std::size_t(n_) * c_ * x_ * y_ * z_, Scalar(0)) {}

  std::size_t voxels() const { return std::size_t(x) * y * z; }
  std::size_t size() const { return v.size(); }
  std::array<int, 3> spatial() const { return {x, y, z}; }

  Scalar* sample(int in) { return v.data() + std::size_t(in) * c * voxels(); }
  const Scalar* sample(int in) const { return v.data() + std::size_t(in) * c * voxels(); }
  Scalar* channel(int in, int ic) { return sample(in) + std::size_t(ic) * voxels(); }
  const Scalar* channel(int in, int ic) const {
    return sample(in) + std::size_t(ic) * voxels();
  }

  // (voxels x channels) view of one sample.
  MatMap<Scalar> sample_mat(int in) {
    return MatMap<Scalar>(sample(in), Eigen::Index(voxels()), c);
  }
  ConstMatMap<Scalar> sample_mat(int in) const {
    return ConstMatMap<Scalar>(sample(in), Eigen::Index(voxels()), c);
  }

  ArrMap<Scalar> array() { return ArrMap<Scalar>(v.data(), Eigen::Index(v.size())); }
  ConstArrMap<Scalar> array() const {
    return ConstArrMap<Scalar>(v.data(), Eigen::Index(v.size()));
  }

  void set_zero() { std::fill(v.begin(), v.end(), Scalar(0)); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && x == o.x && y == o.y && z == o.z;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(n, c, x, y, z);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<Other>(v[i]);
    return out;
  }
};

// Integer class labels for a batch of patches, (n, x, y, z).
struct LabelBatch {
  int n = 0, x = 0, y = 0, z = 0;
  std::vector<std::uint8_t> v;

  LabelBatch() = default;
  LabelBatch(int n_, int x_, int y_, int z_)
      : n(n_), x(x_), y(y_), z(z_), v(std::size_t(n_) * x_ * y_ * z_, 0) {}

  std::size_t voxels() const { return std::size_t(x) * y * z; }
  std::uint8_t* sample(int in) { return v.data() + std::size_t(in) * voxels(); }
  const std::uint8_t* sample(int in) const { return v.data() + std::size_t(in) * voxels(); }
};

// Flips one spatial axis of every (n, c) plane in place-compatible fashion.
template <class Scalar>
Tensor<Scalar> flip_axis(const Tensor<Scalar>& t, int axis) {
  Tensor<Scalar> out(t.n, t.c, t.x, t.y, t.z);
  const int nx = t.x, ny = t.y, nz = t.z;
  for (int in = 0; in < t.n; ++in)
    for (int ic = 0; ic < t.c; ++ic) {
      const Scalar* src = t.channel(in, ic);
      Scalar* dst = out.channel(in, ic);
      for (int xx = 0; xx < nx; ++xx)
        for (int yy = 0; yy < ny; ++yy) {
          const int sx = axis == 0 ? nx - 1 - xx : xx;
          const int sy = axis == 1 ? ny - 1 - yy : yy;
          const Scalar* s = src + (std::size_t(sx) * ny + sy) * nz;
          Scalar* d = dst + (std::size_t(xx) * ny + yy) * nz;
          if (axis == 2) {
            for (int zz = 0; zz < nz; ++zz) d[zz] = s[nz - 1 - zz];
          } else {
            std::copy(s, s + nz, d);
          }
        }
    }
  return out;
}

}  // namespace kseg

#endif  // KSEG_TENSOR_HPP
