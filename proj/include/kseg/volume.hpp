#ifndef KSEG_VOLUME_HPP
#define KSEG_VOLUME_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kseg {

// Physical voxel size in millimeters along (x, y, z). z is the through-plane
// axis everywhere in this codebase.
struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  bool valid() const {
    return std::isfinite(dx) && std::isfinite(dy) && std::isfinite(dz) && dx > 0.0 &&
           dy > 0.0 && dz > 0.0;
  }
  double operator[](int axis) const { return axis == 0 ? dx : (axis == 1 ? dy : dz); }
  bool operator==(const Spacing& o) const { return dx == o.dx && dy == o.dy && dz == o.dz; }
};

// Dense 3D grid. Memory order: index = (x*ny + y)*nz + z, z fastest.
template <class T>
struct VolumeT {
  std::array<int, 3> shape{0, 0, 0};  // nx, ny, nz
  Spacing spacing;
  std::vector<T> data;

  VolumeT() = default;
  VolumeT(std::array<int, 3> s, Spacing sp, T fill = T{})
      : shape(s), spacing(sp), data(static_cast<std::size_t>(s[0]) * s[1] * s[2], fill) {}

  std::size_t size() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * shape[1] + y) * shape[2] + z;
  }
  T& at(int x, int y, int z) { return data[index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data[index(x, y, z)]; }

  bool shape_matches(const VolumeT& o) const { return shape == o.shape; }
};

using Volume = VolumeT<float>;
using LabelVolume = VolumeT<std::uint8_t>;

inline constexpr int kNumClasses = 3;  // 0 background, 1 kidney, 2 tumor

// Per-class soft predictions, class-major: data[c*size + v].
struct ProbabilityVolume {
  std::array<int, 3> shape{0, 0, 0};
  Spacing spacing;
  std::vector<float> data;

  ProbabilityVolume() = default;
  ProbabilityVolume(std::array<int, 3> s, Spacing sp)
      : shape(s),
        spacing(sp),
        data(static_cast<std::size_t>(kNumClasses) * s[0] * s[1] * s[2], 0.0f) {}

  std::size_t size() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }
  float* plane(int c) { return data.data() + static_cast<std::size_t>(c) * size(); }
  const float* plane(int c) const {
    return data.data() + static_cast<std::size_t>(c) * size();
  }
};

// Throws if any voxel's class probabilities fail to sum to 1 within tol.
void check_normalized(const ProbabilityVolume& prob, double tol = 1e-5);

// Throws on NaN/Inf.
void check_finite(const Volume& vol, const std::string& what);

// Throws unless every voxel is in {0,1,2}.
void check_label_values(const LabelVolume& lbl, const std::string& what);

// Enough geometry to undo pad_to_multiple / pad_to_at_least exactly.
struct CropRecord {
  std::array<int, 3> original_shape{0, 0, 0};
  bool identity(const std::array<int, 3>& padded) const { return original_shape == padded; }
};

template <class T>
std::pair<VolumeT<T>, CropRecord> pad_to_shape(const VolumeT<T>& vol,
                                               std::array<int, 3> target, T fill) {
  for (int a = 0; a < 3; ++a) {
    if (target[a] < vol.shape[a])
      throw std::invalid_argument("pad_to_shape: target smaller than volume");
  }
  CropRecord rec{vol.shape};
  if (target == vol.shape) return {vol, rec};
  VolumeT<T> out(target, vol.spacing, fill);
  for (int x = 0; x < vol.shape[0]; ++x)
    for (int y = 0; y < vol.shape[1]; ++y) {
      const T* src = &vol.at(x, y, 0);
      T* dst = &out.at(x, y, 0);
      std::copy(src, src + vol.shape[2], dst);
    }
  return {std::move(out), rec};
}

// Pads each axis up to the smallest multiple >= the original extent.
template <class T>
std::pair<VolumeT<T>, CropRecord> pad_to_multiple(const VolumeT<T>& vol, int multiple,
                                                  T fill) {
  if (multiple < 1) throw std::invalid_argument("pad_to_multiple: multiple must be >= 1");
  std::array<int, 3> target;
  for (int a = 0; a < 3; ++a)
    target[a] = ((vol.shape[a] + multiple - 1) / multiple) * multiple;
  return pad_to_shape(vol, target, fill);
}

template <class T>
std::pair<VolumeT<T>, CropRecord> pad_to_at_least(const VolumeT<T>& vol,
                                                  std::array<int, 3> min_shape, T fill) {
  std::array<int, 3> target;
  for (int a = 0; a < 3; ++a) target[a] = std::max(vol.shape[a], min_shape[a]);
  return pad_to_shape(vol, target, fill);
}

// Exact inverse of the padding above (crops the leading region).
template <class T>
VolumeT<T> crop_to(const VolumeT<T>& vol, const CropRecord& rec) {
  const auto& s = rec.original_shape;
  for (int a = 0; a < 3; ++a) {
    if (s[a] > vol.shape[a]) throw std::invalid_argument("crop_to: record exceeds volume");
  }
  if (s == vol.shape) return vol;
  VolumeT<T> out(s, vol.spacing);
  for (int x = 0; x < s[0]; ++x)
    for (int y = 0; y < s[1]; ++y) {
      const T* src = &vol.at(x, y, 0);
      std::copy(src, src + s[2], &out.at(x, y, 0));
    }
  return out;
}

ProbabilityVolume crop_to(const ProbabilityVolume& prob, const CropRecord& rec);

// ---- raw + JSON sidecar format ----------------------------------------------
// <name>.raw holds the little-endian array in memory order (z fastest);
// <name>.json holds {"shape":[nx,ny,nz],"spacing":[dx,dy,dz],"dtype":"f32"|"u8"}.

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

void save_raw(const Volume& vol, const std::filesystem::path& raw_path);
void save_raw(const LabelVolume& lbl, const std::filesystem::path& raw_path);
Volume load_raw_image(const std::filesystem::path& raw_path);
LabelVolume load_raw_label(const std::filesystem::path& raw_path);

// Loads an image (and optionally an aligned label) from .raw or .nii/.nii.gz,
// validating finiteness, label values and shape agreement.
std::pair<Volume, std::optional<LabelVolume>> load_case(
    const std::filesystem::path& image_path,
    const std::optional<std::filesystem::path>& label_path = std::nullopt);

}  // namespace kseg

#endif  // KSEG_VOLUME_HPP
