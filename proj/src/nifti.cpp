#include "kseg/nifti.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

namespace kseg {

namespace {

// NIfTI-1 header, 348 bytes, little-endian. Only the fields we touch are
// named; the rest ride along as padding.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

struct GzFile {
  gzFile f = nullptr;
  explicit GzFile(const std::filesystem::path& p, const char* mode) {
    f = gzopen(p.string().c_str(), mode);
    if (!f) throw std::runtime_error("cannot open " + p.string());
  }
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  void read(void* dst, std::size_t bytes, const std::filesystem::path& p) {
    std::size_t done = 0;
    auto* out = static_cast<char*>(dst);
    while (done < bytes) {
      const unsigned chunk =
          static_cast<unsigned>(std::min<std::size_t>(bytes - done, 1u << 30));
      const int got = gzread(f, out + done, chunk);
      if (got <= 0) throw std::runtime_error("truncated NIfTI file " + p.string());
      done += static_cast<std::size_t>(got);
    }
  }
  void write(const void* src, std::size_t bytes, const std::filesystem::path& p) {
    if (gzwrite(f, src, static_cast<unsigned>(bytes)) != static_cast<int>(bytes))
      throw std::runtime_error("short write to " + p.string());
  }
};

// Reads header + raw buffer, converting to float. gzopen reads plain files
// transparently, so one path covers .nii and .nii.gz.
void load_nifti_raw(const std::filesystem::path& p, std::array<int, 3>& shape,
                    Spacing& spacing, std::vector<float>& out) {
  GzFile file(p, "rb");
  Nifti1Header hdr{};
  file.read(&hdr, sizeof(hdr), p);
  if (hdr.sizeof_hdr != 348 ||
      (std::strncmp(hdr.magic, "n+1", 3) != 0 && std::strncmp(hdr.magic, "ni1", 3) != 0))
    throw std::runtime_error(p.string() + ": not a NIfTI-1 file");
  if (std::strncmp(hdr.magic, "ni1", 3) == 0)
    throw std::runtime_error(p.string() + ": two-file NIfTI (.hdr/.img) not supported");
  if (hdr.dim[0] < 3) throw std::runtime_error(p.string() + ": expected a 3D volume");
  for (int d = 4; d <= hdr.dim[0]; ++d) {
    if (hdr.dim[d] > 1)
      throw std::runtime_error(p.string() + ": higher-dimensional volumes not supported");
  }
  shape = {hdr.dim[1], hdr.dim[2], hdr.dim[3]};
  if (shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0)
    throw std::runtime_error(p.string() + ": bad dimensions");
  spacing = {std::abs(double(hdr.pixdim[1])), std::abs(double(hdr.pixdim[2])),
             std::abs(double(hdr.pixdim[3]))};
  if (!spacing.valid()) throw std::runtime_error(p.string() + ": bad pixdim");

  const std::size_t n = std::size_t(shape[0]) * shape[1] * shape[2];
  const std::size_t offset = static_cast<std::size_t>(hdr.vox_offset);
  if (offset < sizeof(hdr)) throw std::runtime_error(p.string() + ": bad vox_offset");
  std::vector<char> skip(offset - sizeof(hdr));
  if (!skip.empty()) file.read(skip.data(), skip.size(), p);

  std::vector<float> raw(n);
  switch (hdr.datatype) {
    case kDtUint8: {
      std::vector<std::uint8_t> buf(n);
      file.read(buf.data(), n, p);
      for (std::size_t i = 0; i < n; ++i) raw[i] = buf[i];
      break;
    }
    case kDtInt16: {
      std::vector<std::int16_t> buf(n);
      file.read(buf.data(), n * 2, p);
      for (std::size_t i = 0; i < n; ++i) raw[i] = buf[i];
      break;
    }
    case kDtInt32: {
      std::vector<std::int32_t> buf(n);
      file.read(buf.data(), n * 4, p);
      for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<float>(buf[i]);
      break;
    }
    case kDtFloat32: {
      file.read(raw.data(), n * 4, p);
      break;
    }
    case kDtFloat64: {
      std::vector<double> buf(n);
      file.read(buf.data(), n * 8, p);
      for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<float>(buf[i]);
      break;
    }
    default:
      throw std::runtime_error(p.string() + ": unsupported NIfTI datatype " +
                               std::to_string(hdr.datatype));
  }
  const bool scaled = hdr.scl_slope != 0.0f && !(hdr.scl_slope == 1.0f && hdr.scl_inter == 0.0f);
  if (scaled) {
    for (float& v : raw) v = v * hdr.scl_slope + hdr.scl_inter;
  }

  // NIfTI stores x fastest; internal order is z fastest.
  out.resize(n);
  const int nx = shape[0], ny = shape[1], nz = shape[2];
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y) {
      const std::size_t src_base = std::size_t(z) * ny * nx + std::size_t(y) * nx;
      for (int x = 0; x < nx; ++x)
        out[(std::size_t(x) * ny + y) * nz + z] = raw[src_base + x];
    }
}

Nifti1Header make_header(const std::array<int, 3>& shape, const Spacing& sp,
                         std::int16_t datatype, std::int16_t bitpix) {
  Nifti1Header hdr{};
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  hdr.dim[0] = 3;
  hdr.dim[1] = static_cast<std::int16_t>(shape[0]);
  hdr.dim[2] = static_cast<std::int16_t>(shape[1]);
  hdr.dim[3] = static_cast<std::int16_t>(shape[2]);
  for (int d = 4; d < 8; ++d) hdr.dim[d] = 1;
  hdr.datatype = datatype;
  hdr.bitpix = bitpix;
  hdr.pixdim[0] = 1.0f;
  hdr.pixdim[1] = static_cast<float>(sp.dx);
  hdr.pixdim[2] = static_cast<float>(sp.dy);
  hdr.pixdim[3] = static_cast<float>(sp.dz);
  hdr.vox_offset = 352.0f;
  hdr.scl_slope = 1.0f;
  hdr.xyzt_units = 2;  // millimeters
  hdr.qform_code = 0;
  hdr.sform_code = 1;
  hdr.srow_x[0] = static_cast<float>(sp.dx);
  hdr.srow_y[1] = static_cast<float>(sp.dy);
  hdr.srow_z[2] = static_cast<float>(sp.dz);
  std::memcpy(hdr.magic, "n+1", 4);
  return hdr;
}

template <class T>
void save_nifti_impl(const std::array<int, 3>& shape, const Spacing& sp,
                     const std::vector<T>& data, std::int16_t datatype,
                     const std::filesystem::path& p) {
  const Nifti1Header hdr = make_header(shape, sp, datatype, sizeof(T) * 8);
  const int nx = shape[0], ny = shape[1], nz = shape[2];
  std::vector<T> xfast(data.size());
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y) {
      const std::size_t dst_base = std::size_t(z) * ny * nx + std::size_t(y) * nx;
      for (int x = 0; x < nx; ++x)
        xfast[dst_base + x] = data[(std::size_t(x) * ny + y) * nz + z];
    }
  const char pad[4] = {0, 0, 0, 0};
  if (p.extension() == ".gz") {
    GzFile file(p, "wb");
    file.write(&hdr, sizeof(hdr), p);
    file.write(pad, 4, p);
    file.write(xfast.data(), xfast.size() * sizeof(T), p);
  } else {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    f.write(pad, 4);
    f.write(reinterpret_cast<const char*>(xfast.data()),
            static_cast<std::streamsize>(xfast.size() * sizeof(T)));
    if (!f) throw std::runtime_error("short write to " + p.string());
  }
}

}  // namespace

bool is_nifti_path(const std::filesystem::path& p) {
  const std::string s = p.filename().string();
  return s.ends_with(".nii") || s.ends_with(".nii.gz");
}

Volume load_nifti_image(const std::filesystem::path& p) {
  Volume vol;
  load_nifti_raw(p, vol.shape, vol.spacing, vol.data);
  return vol;
}

LabelVolume load_nifti_label(const std::filesystem::path& p) {
  Volume vol;
  load_nifti_raw(p, vol.shape, vol.spacing, vol.data);
  LabelVolume lbl(vol.shape, vol.spacing);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const float v = vol.data[i];
    const long r = std::lround(v);
    if (!std::isfinite(v) || std::abs(v - static_cast<float>(r)) > 1e-3f || r < 0 || r > 255)
      throw std::runtime_error(p.string() + ": non-integer label value");
    lbl.data[i] = static_cast<std::uint8_t>(r);
  }
  return lbl;
}

void save_nifti(const Volume& vol, const std::filesystem::path& p) {
  save_nifti_impl(vol.shape, vol.spacing, vol.data, kDtFloat32, p);
}

void save_nifti(const LabelVolume& lbl, const std::filesystem::path& p) {
  save_nifti_impl(lbl.shape, lbl.spacing, lbl.data, kDtUint8, p);
}

}  // namespace kseg
