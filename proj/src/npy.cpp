// NPY v1.0 reader/writer restricted to little-endian f4/f8 in C order.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "attnchain/error.hpp"
#include "attnchain/tensor_io.hpp"

namespace attnchain::io {
namespace {

constexpr std::uint8_t kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kPreambleSize = 10;  // magic + version + header length
constexpr std::size_t kAlign = 64;

std::size_t item_size(Dtype d) { return d == Dtype::kF32 ? 4 : 8; }

template <typename T>
T read_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U u = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) u |= static_cast<U>(p[b]) << (8 * b);
  return std::bit_cast<T>(u);
}

template <typename T>
void write_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U u = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
  }
}

// Just enough of Python literal syntax for NPY header dictionaries.
class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : text_(text) {}

  struct Header {
    std::optional<std::string> descr;
    std::optional<bool> fortran_order;
    std::optional<std::vector<std::size_t>> shape;
  };

  Header parse() {
    Header h;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = parse_string();
      expect(':');
      skip_ws();
      if (key == "descr") {
        h.descr = parse_string();
      } else if (key == "fortran_order") {
        h.fortran_order = parse_bool();
      } else if (key == "shape") {
        h.shape = parse_tuple();
      } else {
        bad("unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    return h;
  }

 private:
  [[noreturn]] void bad(const std::string& why) const {
    fail(ErrorCode::kParseError, "NPY header: " + why);
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  void expect(char c) {
    skip_ws();
    if (peek() != c) bad(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string parse_string() {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') bad("expected string");
    const std::size_t end = text_.find(q, pos_ + 1);
    if (end == std::string_view::npos) bad("unterminated string");
    std::string s(text_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return s;
  }
  bool parse_bool() {
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    bad("expected True or False");
  }
  std::vector<std::size_t> parse_tuple() {
    expect('(');
    std::vector<std::size_t> dims;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return dims;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) bad("expected dimension");
      std::size_t v = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        v = v * 10 + static_cast<std::size_t>(text_[pos_++] - '0');
      }
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string shape_repr(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

}  // namespace

std::string_view to_string(Dtype d) { return d == Dtype::kF32 ? "f32" : "f64"; }

Dtype parse_dtype(std::string_view text) {
  if (text == "f32") return Dtype::kF32;
  if (text == "f64") return Dtype::kF64;
  fail(ErrorCode::kUnsupportedDtype, "dtype '" + std::string(text) + "'");
}

std::size_t NdArray::elements() const {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

NdArray parse_npy(std::span<const std::uint8_t> bytes, std::optional<Dtype> expected) {
  if (!bytes.empty() &&
      std::memcmp(bytes.data(), kMagic, std::min<std::size_t>(bytes.size(), 6)) != 0) {
    fail(ErrorCode::kBadMagic, "not an NPY file");
  }
  if (bytes.size() < kPreambleSize) fail(ErrorCode::kTruncatedData, "preamble");
  if (bytes[6] != 1 || bytes[7] != 0) {
    fail(ErrorCode::kUnsupportedVersion, "NPY version " + std::to_string(bytes[6]) +
                                             "." + std::to_string(bytes[7]));
  }
  const std::size_t header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  if (bytes.size() < kPreambleSize + header_len) {
    fail(ErrorCode::kTruncatedData, "header");
  }
  const std::string_view header(reinterpret_cast<const char*>(bytes.data()) + kPreambleSize,
                                header_len);
  const auto h = HeaderParser(header).parse();
  if (!h.descr || !h.fortran_order || !h.shape) {
    fail(ErrorCode::kParseError, "NPY header lacks descr, fortran_order or shape");
  }

  NdArray out;
  if (*h.descr == "<f4") {
    out.source_dtype = Dtype::kF32;
  } else if (*h.descr == "<f8") {
    out.source_dtype = Dtype::kF64;
  } else {
    fail(ErrorCode::kUnsupportedDtype, "descr '" + *h.descr + "'");
  }
  if (expected && *expected != out.source_dtype) {
    fail(ErrorCode::kUnsupportedDtype,
         "file holds " + std::string(to_string(out.source_dtype)) + ", expected " +
             std::string(to_string(*expected)));
  }
  if (*h.fortran_order) fail(ErrorCode::kFortranOrderUnsupported, "fortran_order=True");
  if (h.shape->empty()) fail(ErrorCode::kParseError, "rank-0 arrays are not supported");
  out.shape = *h.shape;

  const std::size_t count = out.elements();
  const std::size_t width = item_size(out.source_dtype);
  const std::size_t data_start = kPreambleSize + header_len;
  const std::size_t available = bytes.size() - data_start;
  if (available < count * width) {
    fail(ErrorCode::kTruncatedData, "expected " + std::to_string(count * width) +
                                        " data bytes, found " + std::to_string(available));
  }
  if (available > count * width) fail(ErrorCode::kParseError, "trailing bytes after data");

  out.data.resize(count);
  const std::uint8_t* p = bytes.data() + data_start;
  for (std::size_t i = 0; i < count; ++i, p += width) {
    out.data[i] = out.source_dtype == Dtype::kF32
                      ? static_cast<double>(read_le<float>(p))
                      : read_le<double>(p);
  }
  return out;
}

std::vector<std::uint8_t> encode_npy(const NdArray& array, Dtype dtype) {
  if (array.shape.empty()) fail(ErrorCode::kInvalidArgument, "array rank must be >= 1");
  if (array.elements() != array.data.size()) {
    fail(ErrorCode::kDimensionMismatch, "shape does not match element count");
  }
  std::string header = std::string("{'descr': '") + (dtype == Dtype::kF32 ? "<f4" : "<f8") +
                       "', 'fortran_order': False, 'shape': " + shape_repr(array.shape) +
                       ", }";
  const std::size_t unpadded = kPreambleSize + header.size() + 1;
  header.append((kAlign - unpadded % kAlign) % kAlign, ' ');
  header.push_back('\n');
  if (header.size() > 0xffff) fail(ErrorCode::kInvalidArgument, "header too long for v1.0");

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + array.data.size() * item_size(dtype));
  for (double x : array.data) {
    if (dtype == Dtype::kF32) {
      write_le(out, static_cast<float>(x));
    } else {
      write_le(out, x);
    }
  }
  return out;
}

NdArray load_array(const std::filesystem::path& path, std::optional<Dtype> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_npy(bytes, expected);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void save_array(const std::filesystem::path& path, const NdArray& array, Dtype dtype) {
  const auto bytes = encode_npy(array, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "short write to " + path.string());
}

}  // namespace attnchain::io
