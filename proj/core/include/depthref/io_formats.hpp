#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthref/geometry.hpp"
#include "depthref/imaging.hpp"

namespace depthref {

/// Malformed, truncated or unsupported file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// PFM. Only single-channel "Pf" maps are accepted as fields. Rows are stored
// bottom-to-top; a negative scale means little-endian. Non-finite samples read
// back as invalid pixels, and invalid pixels are written as NaN.

ScalarField read_pfm(const std::filesystem::path& path, FieldRole role = FieldRole::generic);
void write_pfm(const ScalarField& field, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6) with maxval 255. Values quantize as
// round-half-up(v * 255) and read back as byte / 255.

Image read_pnm(const std::filesystem::path& path);
/// PGM for single-channel images, PPM for three channels.
void write_pnm(const Image& image, const std::filesystem::path& path);

/// Boolean mask as PGM: 255 for true, 0 for false. Reading treats nonzero as true.
void write_mask_pgm(const std::vector<std::uint8_t>& mask, std::size_t width, std::size_t height,
                    const std::filesystem::path& path);
std::vector<std::uint8_t> read_mask_pgm(const std::filesystem::path& path, std::size_t& width,
                                        std::size_t& height);

std::uint8_t quantize_unit(double v);

/// Writes via a sibling temporary file and renames over path on success.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file_bytes(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset layout: one directory per sample with left.ppm, right.ppm,
// z_gt.pfm, d_gt.pfm, valid.pgm and optionally d_baseline.pfm, plus
// manifest.tsv at the root.
//
// manifest.tsv: first line "baseline_m=<b>\tfocal_x_px=<f>[\td_max=<n>]",
// then one line per sample with six tab-separated paths relative to the root:
// left, right, z_gt, d_gt, valid, d_baseline ("-" when absent).

struct DatasetEntry {
  std::string left;
  std::string right;
  std::string z_gt;
  std::string d_gt;
  std::string valid;
  std::optional<std::string> d_baseline;

  /// Sample directory name (parent of the left image path).
  std::string name() const;
};

struct Manifest {
  std::filesystem::path root;  // directory containing manifest.tsv
  CameraRig rig{};
  std::optional<int> d_max;    // recorded by the baseline step
  std::vector<DatasetEntry> entries;

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

inline constexpr const char* kManifestName = "manifest.tsv";

/// Accepts either the manifest file or the directory containing it.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest);
std::string format_manifest(const Manifest& manifest);

struct LoadedSample {
  std::string name;
  Image left;
  Image right;
  ScalarField z_gt;
  ScalarField d_gt;
  std::vector<std::uint8_t> valid;
  std::optional<ScalarField> d_baseline;
};

/// Loads every file of a sample and checks dimensions. z_gt and d_gt are
/// invalidated wherever valid.pgm is 0.
LoadedSample load_sample(const Manifest& manifest, std::size_t index);

/// Registers an externally produced disparity map as the baseline of sample
/// `index`: copies it to <sample>/d_baseline.pfm and rewrites the manifest.
/// Throws FormatError on dimension mismatch.
void ingest_external_disparity(Manifest& manifest, std::size_t index,
                               const std::filesystem::path& pfm_path);

/// Stores a computed baseline disparity for sample `index` (file + manifest entry
/// in memory; call write_manifest afterwards).
void store_baseline_disparity(Manifest& manifest, std::size_t index, const ScalarField& disparity);

}  // namespace depthref
