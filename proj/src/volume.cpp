#include "kseg/volume.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "kseg/nifti.hpp"

namespace kseg {

using nlohmann::json;

void check_normalized(const ProbabilityVolume& prob, double tol) {
  const std::size_t n = prob.size();
  for (std::size_t v = 0; v < n; ++v) {
    double s = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      const float p = prob.plane(c)[v];
      if (!(p >= 0.0f)) throw std::runtime_error("ProbabilityVolume: negative probability");
      s += p;
    }
    if (std::abs(s - 1.0) > tol)
      throw std::runtime_error("ProbabilityVolume: voxel probabilities sum to " +
                               std::to_string(s));
  }
}

void check_finite(const Volume& vol, const std::string& what) {
  for (float v : vol.data) {
    if (!std::isfinite(v)) throw std::runtime_error(what + ": non-finite voxel value");
  }
}

void check_label_values(const LabelVolume& lbl, const std::string& what) {
  for (std::uint8_t v : lbl.data) {
    if (v > 2) throw std::runtime_error(what + ": label value " + std::to_string(int(v)) +
                                        " outside {0,1,2}");
  }
}

ProbabilityVolume crop_to(const ProbabilityVolume& prob, const CropRecord& rec) {
  const auto& s = rec.original_shape;
  for (int a = 0; a < 3; ++a) {
    if (s[a] > prob.shape[a]) throw std::invalid_argument("crop_to: record exceeds volume");
  }
  if (s == prob.shape) return prob;
  ProbabilityVolume out(s, prob.spacing);
  for (int c = 0; c < kNumClasses; ++c) {
    const float* src_plane = prob.plane(c);
    float* dst_plane = out.plane(c);
    for (int x = 0; x < s[0]; ++x)
      for (int y = 0; y < s[1]; ++y) {
        const float* src =
            src_plane + (static_cast<std::size_t>(x) * prob.shape[1] + y) * prob.shape[2];
        float* dst = dst_plane + (static_cast<std::size_t>(x) * s[1] + y) * s[2];
        std::copy(src, src + s[2], dst);
      }
  }
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path) {
  std::filesystem::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

namespace {

void write_sidecar(const std::filesystem::path& raw_path, const std::array<int, 3>& shape,
                   const Spacing& sp, const char* dtype) {
  json j;
  j["shape"] = {shape[0], shape[1], shape[2]};
  j["spacing"] = {sp.dx, sp.dy, sp.dz};
  j["dtype"] = dtype;
  std::ofstream f(sidecar_path(raw_path));
  if (!f) throw std::runtime_error("cannot write sidecar for " + raw_path.string());
  f << j.dump(2) << "\n";
}

struct Sidecar {
  std::array<int, 3> shape;
  Spacing spacing;
  std::string dtype;
};

Sidecar read_sidecar(const std::filesystem::path& raw_path) {
  const auto sp = sidecar_path(raw_path);
  std::ifstream f(sp);
  if (!f) throw std::runtime_error("missing sidecar " + sp.string());
  json j = json::parse(f);
  Sidecar s;
  const auto shape = j.at("shape");
  const auto spac = j.at("spacing");
  if (shape.size() != 3 || spac.size() != 3)
    throw std::runtime_error("sidecar " + sp.string() + ": shape/spacing must have 3 entries");
  for (int a = 0; a < 3; ++a) {
    s.shape[a] = shape[a].get<int>();
    if (s.shape[a] <= 0) throw std::runtime_error("sidecar " + sp.string() + ": bad shape");
  }
  s.spacing = {spac[0].get<double>(), spac[1].get<double>(), spac[2].get<double>()};
  if (!s.spacing.valid()) throw std::runtime_error("sidecar " + sp.string() + ": bad spacing");
  s.dtype = j.at("dtype").get<std::string>();
  return s;
}

template <class T>
void write_bytes(const std::filesystem::path& path, const std::vector<T>& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

template <class T>
void read_bytes(const std::filesystem::path& path, std::vector<T>& data) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("missing file " + path.string());
  const auto bytes = static_cast<std::size_t>(f.tellg());
  if (bytes != data.size() * sizeof(T))
    throw std::runtime_error(path.string() + ": size " + std::to_string(bytes) +
                             " does not match sidecar shape");
  f.seekg(0);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!f) throw std::runtime_error("short read from " + path.string());
}

}  // namespace

void save_raw(const Volume& vol, const std::filesystem::path& raw_path) {
  write_bytes(raw_path, vol.data);
  write_sidecar(raw_path, vol.shape, vol.spacing, "f32");
}

void save_raw(const LabelVolume& lbl, const std::filesystem::path& raw_path) {
  write_bytes(raw_path, lbl.data);
  write_sidecar(raw_path, lbl.shape, lbl.spacing, "u8");
}

Volume load_raw_image(const std::filesystem::path& raw_path) {
  const Sidecar s = read_sidecar(raw_path);
  if (s.dtype != "f32")
    throw std::runtime_error(raw_path.string() + ": expected dtype f32, got " + s.dtype);
  Volume vol(s.shape, s.spacing);
  read_bytes(raw_path, vol.data);
  return vol;
}

LabelVolume load_raw_label(const std::filesystem::path& raw_path) {
  const Sidecar s = read_sidecar(raw_path);
  if (s.dtype != "u8")
    throw std::runtime_error(raw_path.string() + ": expected dtype u8, got " + s.dtype);
  LabelVolume lbl(s.shape, s.spacing);
  read_bytes(raw_path, lbl.data);
  return lbl;
}

std::pair<Volume, std::optional<LabelVolume>> load_case(
    const std::filesystem::path& image_path,
    const std::optional<std::filesystem::path>& label_path) {
  if (!std::filesystem::exists(image_path))
    throw std::runtime_error("missing image file " + image_path.string());
  Volume img = is_nifti_path(image_path) ? load_nifti_image(image_path)
                                         : load_raw_image(image_path);
  check_finite(img, image_path.string());

  std::optional<LabelVolume> lbl;
  if (label_path) {
    if (!std::filesystem::exists(*label_path))
      throw std::runtime_error("missing label file " + label_path->string());
    lbl = is_nifti_path(*label_path) ? load_nifti_label(*label_path)
                                     : load_raw_label(*label_path);
    if (lbl->shape != img.shape)
      throw std::runtime_error("image/label shape mismatch for " + image_path.string());
    check_label_values(*lbl, label_path->string());
  }
  return {std::move(img), std::move(lbl)};
}

}  // namespace kseg
