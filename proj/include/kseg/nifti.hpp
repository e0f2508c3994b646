#ifndef KSEG_NIFTI_HPP
#define KSEG_NIFTI_HPP

#include <filesystem>

#include "kseg/volume.hpp"

namespace kseg {

// Minimal NIfTI-1 support: single-file .nii / .nii.gz, 3D volumes, scalar
// dtypes u8/i16/i32/f32/f64, spacing from pixdim, scl_slope/scl_inter applied.
// Orientation handling beyond spacing is out of scope.
bool is_nifti_path(const std::filesystem::path& p);

Volume load_nifti_image(const std::filesystem::path& p);
LabelVolume load_nifti_label(const std::filesystem::path& p);

void save_nifti(const Volume& vol, const std::filesystem::path& p);
void save_nifti(const LabelVolume& lbl, const std::filesystem::path& p);

}  // namespace kseg

#endif  // KSEG_NIFTI_HPP
