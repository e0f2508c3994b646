#include "kseg/preprocess.hpp"

#include <fstream>

#include <json.hpp>

#include "kseg/stats.hpp"

namespace kseg {

using nlohmann::json;

std::string stats_to_json(const DatasetStats& stats) {
  json j;
  j["clip_lo"] = stats.clip_lo;
  j["clip_hi"] = stats.clip_hi;
  j["fg_mean"] = stats.fg_mean;
  j["fg_std"] = stats.fg_std;
  j["target_spacing"] = {stats.target_spacing.dx, stats.target_spacing.dy,
                         stats.target_spacing.dz};
  return j.dump(2);
}

DatasetStats stats_from_json(const std::string& text) {
  json j = json::parse(text);
  DatasetStats s;
  s.clip_lo = j.at("clip_lo").get<double>();
  s.clip_hi = j.at("clip_hi").get<double>();
  s.fg_mean = j.at("fg_mean").get<double>();
  s.fg_std = j.at("fg_std").get<double>();
  const auto& sp = j.at("target_spacing");
  s.target_spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
  if (!s.valid()) throw std::runtime_error("invalid DatasetStats");
  return s;
}

void save_stats(const DatasetStats& stats, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << stats_to_json(stats) << "\n";
}

DatasetStats load_stats(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("missing stats file " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return stats_from_json(text);
}

DatasetStats compute_dataset_stats(const std::vector<const Volume*>& images,
                                   const std::vector<const LabelVolume*>& labels) {
  if (images.empty() || images.size() != labels.size())
    throw std::invalid_argument("compute_dataset_stats: need matching image/label lists");

  std::vector<float> fg;
  std::vector<double> sx, sy, sz;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Volume& img = *images[i];
    const LabelVolume& lbl = *labels[i];
    if (img.shape != lbl.shape)
      throw std::invalid_argument("compute_dataset_stats: image/label shape mismatch");
    for (std::size_t v = 0; v < img.data.size(); ++v) {
      if (lbl.data[v] > 0) fg.push_back(img.data[v]);
    }
    sx.push_back(img.spacing.dx);
    sy.push_back(img.spacing.dy);
    sz.push_back(img.spacing.dz);
  }
  if (fg.empty())
    throw std::runtime_error("compute_dataset_stats: no foreground voxel in training set");

  std::sort(fg.begin(), fg.end());
  DatasetStats s;
  s.clip_lo = quantile_sorted(fg, 0.005);
  s.clip_hi = quantile_sorted(fg, 0.995);

  // Mean/std over the same pooled foreground intensities after clipping.
  double sum = 0.0;
  for (float v : fg) sum += std::clamp(double(v), s.clip_lo, s.clip_hi);
  s.fg_mean = sum / double(fg.size());
  double ss = 0.0;
  for (float v : fg) {
    const double d = std::clamp(double(v), s.clip_lo, s.clip_hi) - s.fg_mean;
    ss += d * d;
  }
  s.fg_std = std::sqrt(ss / double(fg.size()));

  s.target_spacing = {median(sx), median(sy), median(sz)};
  return s;
}

Volume clip_and_normalize(const Volume& vol, const DatasetStats& stats) {
  if (!stats.valid()) throw std::invalid_argument("clip_and_normalize: invalid stats");
  Volume out = vol;
  const float lo = static_cast<float>(stats.clip_lo);
  const float hi = static_cast<float>(stats.clip_hi);
  const float mean = static_cast<float>(stats.fg_mean);
  const float inv = static_cast<float>(1.0 / std::max(stats.fg_std, 1e-8));
  for (float& v : out.data) v = (std::clamp(v, lo, hi) - mean) * inv;
  return out;
}

namespace {

std::array<int, 3> resampled_shape(const std::array<int, 3>& shape, const Spacing& src,
                                   const Spacing& target) {
  std::array<int, 3> out;
  for (int a = 0; a < 3; ++a)
    out[a] = std::max(1, static_cast<int>(std::llround(shape[a] * src[a] / target[a])));
  return out;
}

// One scalar plane. Output voxel i samples src coordinate i*scale[a], clamped.
template <class T, bool kLinear>
void resample_plane(const T* src, const std::array<int, 3>& ss, T* dst,
                    const std::array<int, 3>& ds, const std::array<double, 3>& scale) {
  const int nx = ss[0], ny = ss[1], nz = ss[2];
  const auto clampf = [](double c, int n) { return std::clamp(c, 0.0, double(n - 1)); };
  for (int x = 0; x < ds[0]; ++x) {
    const double cx = clampf(x * scale[0], nx);
    for (int y = 0; y < ds[1]; ++y) {
      const double cy = clampf(y * scale[1], ny);
      T* out_run = dst + (std::size_t(x) * ds[1] + y) * ds[2];
      for (int z = 0; z < ds[2]; ++z) {
        const double cz = clampf(z * scale[2], nz);
        if constexpr (kLinear) {
          const int x0 = int(cx), y0 = int(cy), z0 = int(cz);
          const int x1 = std::min(x0 + 1, nx - 1);
          const int y1 = std::min(y0 + 1, ny - 1);
          const int z1 = std::min(z0 + 1, nz - 1);
          const double fx = cx - x0, fy = cy - y0, fz = cz - z0;
          const auto at = [&](int i, int j, int k) {
            return double(src[(std::size_t(i) * ny + j) * nz + k]);
          };
          const double c00 = at(x0, y0, z0) * (1 - fz) + at(x0, y0, z1) * fz;
          const double c01 = at(x0, y1, z0) * (1 - fz) + at(x0, y1, z1) * fz;
          const double c10 = at(x1, y0, z0) * (1 - fz) + at(x1, y0, z1) * fz;
          const double c11 = at(x1, y1, z0) * (1 - fz) + at(x1, y1, z1) * fz;
          const double c0 = c00 * (1 - fy) + c01 * fy;
          const double c1 = c10 * (1 - fy) + c11 * fy;
          out_run[z] = static_cast<T>(c0 * (1 - fx) + c1 * fx);
        } else {
          const int xi = std::min(int(std::llround(cx)), nx - 1);
          const int yi = std::min(int(std::llround(cy)), ny - 1);
          const int zi = std::min(int(std::llround(cz)), nz - 1);
          out_run[z] = src[(std::size_t(xi) * ny + yi) * nz + zi];
        }
      }
    }
  }
}

}  // namespace

Volume resample_to(const Volume& vol, const std::array<int, 3>& out_shape,
                   const Spacing& out_spacing, Interp mode) {
  if (!out_spacing.valid()) throw std::invalid_argument("resample: bad target spacing");
  if (out_shape == vol.shape && out_spacing == vol.spacing) return vol;
  Volume out(out_shape, out_spacing);
  const std::array<double, 3> scale = {out_spacing.dx / vol.spacing.dx,
                                       out_spacing.dy / vol.spacing.dy,
                                       out_spacing.dz / vol.spacing.dz};
  if (mode == Interp::kLinear)
    resample_plane<float, true>(vol.data.data(), vol.shape, out.data.data(), out.shape, scale);
  else
    resample_plane<float, false>(vol.data.data(), vol.shape, out.data.data(), out.shape,
                                 scale);
  return out;
}

Volume resample(const Volume& vol, const Spacing& target, Interp mode) {
  if (!target.valid()) throw std::invalid_argument("resample: bad target spacing");
  return resample_to(vol, resampled_shape(vol.shape, vol.spacing, target), target, mode);
}

LabelVolume resample(const LabelVolume& lbl, const Spacing& target) {
  if (!target.valid()) throw std::invalid_argument("resample: bad target spacing");
  const auto out_shape = resampled_shape(lbl.shape, lbl.spacing, target);
  if (out_shape == lbl.shape && target == lbl.spacing) return lbl;
  LabelVolume out(out_shape, target);
  const std::array<double, 3> scale = {target.dx / lbl.spacing.dx, target.dy / lbl.spacing.dy,
                                       target.dz / lbl.spacing.dz};
  resample_plane<std::uint8_t, false>(lbl.data.data(), lbl.shape, out.data.data(), out.shape,
                                      scale);
  return out;
}

ProbabilityVolume resample_to(const ProbabilityVolume& prob,
                              const std::array<int, 3>& out_shape,
                              const Spacing& out_spacing) {
  if (out_shape == prob.shape && out_spacing == prob.spacing) return prob;
  ProbabilityVolume out(out_shape, out_spacing);
  const std::array<double, 3> scale = {out_spacing.dx / prob.spacing.dx,
                                       out_spacing.dy / prob.spacing.dy,
                                       out_spacing.dz / prob.spacing.dz};
  for (int c = 0; c < kNumClasses; ++c)
    resample_plane<float, true>(prob.plane(c), prob.shape, out.plane(c), out_shape, scale);
  return out;
}

}  // namespace kseg
