#pragma once

// File formats: NPY v1.0 arrays, the JSON attention manifest, PGM/CSV
// heatmaps and ground-truth masks.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnchain/chain.hpp"
#include "attnchain/ops.hpp"

namespace attnchain::io {

enum class Dtype { kF32, kF64 };

std::string_view to_string(Dtype d);  // "f32" / "f64"
Dtype parse_dtype(std::string_view text);

// Dense row-major array held in double precision.
struct NdArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  // Element type declared by the file the array was read from.
  Dtype source_dtype = Dtype::kF64;

  std::size_t elements() const;
};

// Parses NPY v1.0 bytes with descr "<f4" or "<f8" in C order. If `expected`
// is given the declared dtype must match it.
NdArray parse_npy(std::span<const std::uint8_t> bytes,
                  std::optional<Dtype> expected = std::nullopt);
std::vector<std::uint8_t> encode_npy(const NdArray& array, Dtype dtype);

NdArray load_array(const std::filesystem::path& path,
                   std::optional<Dtype> expected = std::nullopt);
void save_array(const std::filesystem::path& path, const NdArray& array, Dtype dtype);

struct ManifestEntry {
  std::size_t layer = 0;
  std::size_t heads = 0;
  Dtype dtype = Dtype::kF32;
  std::string path;  // relative to the manifest's directory
  std::array<std::size_t, 3> shape{};
};

struct Manifest {
  std::string version = "1";
  std::size_t seq_len = 0;
  std::optional<Grid> grid;
  std::vector<std::size_t> special_tokens;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // not serialized
};

Manifest parse_manifest(std::string_view json, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const Manifest& manifest);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Loads every entry (sorted by layer id) and builds row-stochastic heads
// with `policy`. Files are read on up to `threads` workers.
AttentionTensor load_tensor(const Manifest& manifest,
                            RepairPolicy policy = RepairPolicy::kClampAndRenormalize,
                            std::size_t threads = 1);

// Pre-repair health of one exported attention matrix.
struct MatrixReport {
  std::size_t layer = 0;
  std::size_t head = 0;
  double max_row_deviation = 0.0;  // max |row sum - 1| over finite rows
  double min_entry = 0.0;          // over finite entries
  std::size_t nonfinite = 0;
  std::optional<std::array<std::size_t, 2>> first_nonfinite;
  bool passes = false;
};

// `tolerance` bounds the row-sum deviation; negatives must stay within the
// clamp tolerance and every entry must be finite.
std::vector<MatrixReport> diagnose(const Manifest& manifest, double tolerance = 1e-3,
                                   std::size_t threads = 1);

enum class HeatmapFormat { kPgm, kCsv };

// Min-max normalized, quantized to 0..255; zero range maps to all zeros.
std::vector<std::uint8_t> quantize(std::span<const double> values);

// Writes the spatial part of `values` (special tokens removed, row-major on
// `grid`). Special-token scores go to a sidecar "<stem>.special.csv".
void export_heatmap(std::span<const double> values, Grid grid,
                    std::span<const std::size_t> special_tokens,
                    const std::filesystem::path& path, HeatmapFormat format);

struct BinaryMask {
  Grid size;
  std::vector<std::uint8_t> values;  // 0 / 1, row-major
};

struct GrayImage {
  Grid size;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::filesystem::path& path, Grid size,
               std::span<const std::uint8_t> pixels);
// Reads binary P5 with maxval <= 255.
GrayImage read_pgm(const std::filesystem::path& path);

// PGM (nonzero = foreground) or CSV of 0/1, chosen by extension.
BinaryMask read_mask(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);

// 17 significant digits ("%.17g"), the precision used in every CSV.
std::string format_real(double x);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace attnchain::io
