#include "attnchain/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "attnchain/error.hpp"
#include "attnchain/parallel.hpp"
#include "json.hpp"

namespace attnchain::io {
namespace {

using nlohmann::json;

[[noreturn]] void schema(const std::string& why) {
  fail(ErrorCode::kSchemaViolation, "manifest: " + why);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) schema(where + " lacks \"" + key + "\"");
  return *it;
}

std::size_t as_index(const json& v, const std::string& what) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) {
    return static_cast<std::size_t>(v.get<long long>());
  }
  schema(what + " must be a non-negative integer");
}

std::vector<std::size_t> as_index_list(const json& v, const std::string& what) {
  if (!v.is_array()) schema(what + " must be an array");
  std::vector<std::size_t> out;
  for (const auto& x : v) out.push_back(as_index(x, what));
  return out;
}

std::vector<double> spatial_values(std::span<const double> values, Grid grid,
                                   std::span<const std::size_t> special) {
  if (values.size() != grid.cells() + special.size()) {
    fail(ErrorCode::kGridMismatch,
         std::to_string(values.size()) + " values for a " + std::to_string(grid.height) +
             "x" + std::to_string(grid.width) + " grid and " +
             std::to_string(special.size()) + " special tokens");
  }
  std::vector<char> skip(values.size(), 0);
  for (std::size_t t : special) {
    if (t >= values.size()) fail(ErrorCode::kGridMismatch, "special token out of range");
    skip[t] = 1;
  }
  std::vector<double> out;
  out.reserve(grid.cells());
  for (std::size_t t = 0; t < values.size(); ++t) {
    if (!skip[t]) out.push_back(values[t]);
  }
  if (out.size() != grid.cells()) fail(ErrorCode::kGridMismatch, "duplicate special token");
  return out;
}

std::vector<ManifestEntry> sorted_entries(const Manifest& m) {
  auto entries = m.entries;
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.layer < b.layer; });
  return entries;
}

NdArray load_entry(const Manifest& manifest, const ManifestEntry& e) {
  NdArray a = load_array(manifest.base_dir / e.path, e.dtype);
  const std::vector<std::size_t> want(e.shape.begin(), e.shape.end());
  if (a.shape != want) {
    schema("layer " + std::to_string(e.layer) + " array shape differs from the entry");
  }
  return a;
}

}  // namespace

Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParseError, std::string("manifest JSON: ") + e.what());
  }
  if (!doc.is_object()) schema("top level must be an object");

  Manifest m;
  m.base_dir = base_dir;
  const json& version = require(doc, "version", "manifest");
  if (!version.is_string() || version.get<std::string>() != "1") {
    schema("unsupported version");
  }
  m.version = version.get<std::string>();
  m.seq_len = as_index(require(doc, "seq_len", "manifest"), "seq_len");
  if (m.seq_len == 0) schema("seq_len must be positive");

  const json& grid = require(doc, "grid", "manifest");
  if (!grid.is_null()) {
    const auto hw = as_index_list(grid, "grid");
    if (hw.size() != 2) schema("grid must be [height, width] or null");
    m.grid = Grid{hw[0], hw[1]};
  }
  m.special_tokens = as_index_list(require(doc, "special_tokens", "manifest"),
                                   "special_tokens");
  for (std::size_t t : m.special_tokens) {
    if (t >= m.seq_len) schema("special token " + std::to_string(t) + " >= seq_len");
  }
  {
    auto s = m.special_tokens;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) schema("duplicate special token");
  }
  if (m.grid && m.grid->cells() + m.special_tokens.size() != m.seq_len) {
    schema("grid cells plus special tokens must equal seq_len");
  }

  const json& entries = require(doc, "entries", "manifest");
  if (!entries.is_array() || entries.empty()) schema("entries must be a non-empty array");
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const json& e = entries[k];
    const std::string where = "entry " + std::to_string(k);
    if (!e.is_object()) schema(where + " must be an object");
    ManifestEntry out;
    out.layer = as_index(require(e, "layer", where), where + " layer");
    out.heads = as_index(require(e, "heads", where), where + " heads");
    if (out.heads == 0) schema(where + " has no heads");
    const json& dtype = require(e, "dtype", where);
    if (!dtype.is_string()) schema(where + " dtype must be a string");
    const auto d = dtype.get<std::string>();
    if (d != "f32" && d != "f64") schema(where + " dtype must be f32 or f64");
    out.dtype = parse_dtype(d);
    const json& path = require(e, "path", where);
    if (!path.is_string()) schema(where + " path must be a string");
    out.path = path.get<std::string>();
    const auto shape = as_index_list(require(e, "shape", where), where + " shape");
    if (shape.size() != 3) schema(where + " shape must have three dimensions");
    if (shape[1] != shape[2]) schema(where + " matrices are not square");
    if (shape[0] != out.heads) schema(where + " shape disagrees with heads");
    if (shape[1] != m.seq_len) schema(where + " shape disagrees with seq_len");
    out.shape = {shape[0], shape[1], shape[2]};
    for (const auto& prev : m.entries) {
      if (prev.layer == out.layer) schema("duplicate layer " + std::to_string(out.layer));
    }
    m.entries.push_back(std::move(out));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorCode::kMissingFile, path.string());
  return parse_manifest(read_text(path), path.parent_path());
}

std::string serialize_manifest(const Manifest& m) {
  nlohmann::ordered_json doc;
  doc["version"] = m.version;
  doc["seq_len"] = m.seq_len;
  if (m.grid) {
    doc["grid"] = {m.grid->height, m.grid->width};
  } else {
    doc["grid"] = nullptr;
  }
  doc["special_tokens"] = m.special_tokens;
  doc["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["layer"] = e.layer;
    j["heads"] = e.heads;
    j["dtype"] = std::string(to_string(e.dtype));
    j["path"] = e.path;
    j["shape"] = {e.shape[0], e.shape[1], e.shape[2]};
    doc["entries"].push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  write_text(path, serialize_manifest(manifest));
}

AttentionTensor load_tensor(const Manifest& manifest, RepairPolicy policy,
                            std::size_t threads) {
  const auto entries = sorted_entries(manifest);
  std::vector<std::vector<StochasticMatrix>> layers(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t k) {
    const ManifestEntry& e = entries[k];
    const NdArray a = load_entry(manifest, e);
    const std::size_t n = e.shape[1];
    for (std::size_t h = 0; h < e.heads; ++h) {
      const std::span<const double> slice(a.data.data() + h * n * n, n * n);
      try {
        layers[k].push_back(StochasticMatrix::from_raw(n, n, slice, policy));
      } catch (const Error& err) {
        throw Error(err.code(), "layer " + std::to_string(e.layer) + " head " +
                                    std::to_string(h) + ": " + err.what());
      }
    }
  });
  std::vector<std::size_t> ids;
  for (const auto& e : entries) ids.push_back(e.layer);
  return AttentionTensor(std::move(layers), manifest.special_tokens, manifest.grid,
                         std::move(ids));
}

std::vector<MatrixReport> diagnose(const Manifest& manifest, double tolerance,
                                   std::size_t threads) {
  const auto entries = sorted_entries(manifest);
  std::vector<std::vector<MatrixReport>> per_entry(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t k) {
    const ManifestEntry& e = entries[k];
    const NdArray a = load_entry(manifest, e);
    const std::size_t n = e.shape[1];
    for (std::size_t h = 0; h < e.heads; ++h) {
      MatrixReport r;
      r.layer = e.layer;
      r.head = h;
      r.min_entry = INFINITY;
      const double* base = a.data.data() + h * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        bool finite_row = true;
        for (std::size_t j = 0; j < n; ++j) {
          const double x = base[i * n + j];
          if (!std::isfinite(x)) {
            ++r.nonfinite;
            if (!r.first_nonfinite) r.first_nonfinite = std::array<std::size_t, 2>{i, j};
            finite_row = false;
            continue;
          }
          r.min_entry = std::min(r.min_entry, x);
          sum += x;
        }
        if (finite_row) r.max_row_deviation = std::max(r.max_row_deviation, std::abs(sum - 1.0));
      }
      r.passes = r.nonfinite == 0 && r.min_entry >= -kClampTolerance &&
                 r.max_row_deviation <= tolerance;
      per_entry[k].push_back(r);
    }
  });
  std::vector<MatrixReport> out;
  for (auto& v : per_entry) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<std::uint8_t> quantize(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double q = (values[i] - *lo) / range;
    out[i] = static_cast<std::uint8_t>(std::clamp(std::floor(q * 255.0 + 0.5), 0.0, 255.0));
  }
  return out;
}

void export_heatmap(std::span<const double> values, Grid grid,
                    std::span<const std::size_t> special_tokens,
                    const std::filesystem::path& path, HeatmapFormat format) {
  const std::vector<double> spatial = spatial_values(values, grid, special_tokens);
  if (format == HeatmapFormat::kPgm) {
    write_pgm(path, grid, quantize(spatial));
  } else {
    std::string text;
    for (std::size_t r = 0; r < grid.height; ++r) {
      for (std::size_t c = 0; c < grid.width; ++c) {
        if (c > 0) text += ',';
        text += format_real(spatial[r * grid.width + c]);
      }
      text += '\n';
    }
    write_text(path, text);
  }
  if (!special_tokens.empty()) {
    std::vector<std::size_t> sorted(special_tokens.begin(), special_tokens.end());
    std::sort(sorted.begin(), sorted.end());
    std::string text;
    for (std::size_t t : sorted) {
      text += std::to_string(t) + "," + format_real(values[t]) + "\n";
    }
    write_text(path.parent_path() / (path.stem().string() + ".special.csv"), text);
  }
}

void write_pgm(const std::filesystem::path& path, Grid size,
               std::span<const std::uint8_t> pixels) {
  if (pixels.size() != size.cells()) fail(ErrorCode::kGridMismatch, "pixel count");
  std::string text = "P5\n" + std::to_string(size.width) + " " +
                     std::to_string(size.height) + "\n255\n";
  text.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_text(path, text);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const std::string data = read_text(path);
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip();
    if (pos >= data.size() || !std::isdigit(static_cast<unsigned char>(data[pos]))) {
      fail(ErrorCode::kParseError, path.string() + ": malformed PGM header");
    }
    std::size_t v = 0;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
      v = v * 10 + static_cast<std::size_t>(data[pos++] - '0');
    }
    return v;
  };
  if (data.compare(0, 2, "P5") != 0) {
    fail(ErrorCode::kParseError, path.string() + ": not a binary PGM");
  }
  pos = 2;
  GrayImage img;
  img.size.width = number();
  img.size.height = number();
  const std::size_t maxval = number();
  if (maxval == 0 || maxval > 255) {
    fail(ErrorCode::kParseError, path.string() + ": only 8-bit PGM is supported");
  }
  ++pos;  // single whitespace before the raster
  if (data.size() < pos + img.size.cells()) {
    fail(ErrorCode::kTruncatedData, path.string() + ": PGM raster");
  }
  img.pixels.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                    data.begin() + static_cast<std::ptrdiff_t>(pos + img.size.cells()));
  return img;
}

BinaryMask read_mask(const std::filesystem::path& path) {
  BinaryMask mask;
  if (path.extension() == ".pgm") {
    GrayImage img = read_pgm(path);
    mask.size = img.size;
    mask.values.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      mask.values[i] = img.pixels[i] != 0 ? 1 : 0;
    }
    return mask;
  }
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t cols = 0;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        fail(ErrorCode::kParseError, path.string() + ": bad mask value '" + cell + "'");
      }
      mask.values.push_back(v != 0.0 ? 1 : 0);
      ++cols;
    }
    if (mask.size.height == 0) mask.size.width = cols;
    if (cols != mask.size.width) fail(ErrorCode::kParseError, path.string() + ": ragged rows");
    ++mask.size.height;
  }
  return mask;
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.values[i] ? 255 : 0;
  write_pgm(path, mask.size, px);
}

std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorCode::kIoError, "short write to " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace attnchain::io
