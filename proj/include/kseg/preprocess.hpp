#ifndef KSEG_PREPROCESS_HPP
#define KSEG_PREPROCESS_HPP

#include <filesystem>
#include <vector>

#include "kseg/volume.hpp"

namespace kseg {

// Intensity and geometry statistics pooled over a training set. Percentiles,
// mean and std are taken over foreground voxels (label > 0) only; the target
// spacing is the per-axis median of the training spacings.
struct DatasetStats {
  double clip_lo = 0.0;
  double clip_hi = 0.0;
  double fg_mean = 0.0;
  double fg_std = 0.0;
  Spacing target_spacing;

  bool valid() const {
    return clip_lo <= clip_hi && fg_std >= 0.0 && std::isfinite(fg_mean) &&
           target_spacing.valid();
  }
};

void save_stats(const DatasetStats& stats, const std::filesystem::path& path);
DatasetStats load_stats(const std::filesystem::path& path);

std::string stats_to_json(const DatasetStats& stats);
DatasetStats stats_from_json(const std::string& text);

// Pools foreground intensities over (image, label) pairs. Throws if the
// training set contains no foreground voxel.
DatasetStats compute_dataset_stats(const std::vector<const Volume*>& images,
                                   const std::vector<const LabelVolume*>& labels);

// v -> (clamp(v, lo, hi) - fg_mean) / max(fg_std, 1e-8), monotone in v.
Volume clip_and_normalize(const Volume& vol, const DatasetStats& stats);

enum class Interp { kLinear, kNearest };

// Resamples to `target` spacing; output extent per axis is
// round(n * spacing / target), at least 1. Output voxel i samples the source
// at coordinate i * target / spacing (corner-aligned), clamped to the grid.
Volume resample(const Volume& vol, const Spacing& target, Interp mode);
LabelVolume resample(const LabelVolume& lbl, const Spacing& target);

// Resampling onto an explicit output grid; used to map predictions back to a
// case's native geometry. Samples source coordinate i * out_spacing / src_spacing.
Volume resample_to(const Volume& vol, const std::array<int, 3>& out_shape,
                   const Spacing& out_spacing, Interp mode);
ProbabilityVolume resample_to(const ProbabilityVolume& prob,
                              const std::array<int, 3>& out_shape,
                              const Spacing& out_spacing);

}  // namespace kseg

#endif  // KSEG_PREPROCESS_HPP
