#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "topiq/model.hpp"
#include "topiq/ops.hpp"

namespace topiq {

/// Unreadable or malformed input data (files, manifests, rows).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 3 x H x W, values in [0, 1].
using Image = Tensor<float>;

// ---------------------------------------------------------------- image I/O

namespace detail {

inline constexpr const char* kTensorMagic = "topiq-tensor";

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Raw fixture format: "topiq-tensor 1 C H W\n" followed by C*H*W
/// little-endian float32 values.
inline void write_tensor_file(const Image& img, const std::filesystem::path& path) {
  if (img.rank() != 3) throw ArgumentError("write_tensor_file: expected C x H x W");
  std::string out = std::string(detail::kTensorMagic) + " 1 " + std::to_string(img.dim(0)) + " " +
                    std::to_string(img.dim(1)) + " " + std::to_string(img.dim(2)) + "\n";
  for (float v : img.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DataError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  const std::size_t h = png.height, w = png.width;
  std::vector<float> values(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) values[(c * h + y) * w + x] = buffer[(y * w + x) * 3 + c] / 255.0f;
  return Image(Shape{3, h, w}, std::move(values));
}

/// Writes a 1 x H x W map with values in [0, 1] as 8-bit grayscale.
inline void write_gray_png(const Tensor<float>& map, const std::filesystem::path& path) {
  if (map.rank() != 3 || map.dim(0) != 1) throw ArgumentError("write_gray_png: expected 1 x H x W");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(map.dim(2));
  png.height = static_cast<png_uint_32>(map.dim(1));
  png.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(map.numel());
  for (std::size_t i = 0; i < buffer.size(); ++i)
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(map[i], 0.0f, 1.0f) * 255.0f));
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

/// Loads an 8-bit PNG (converted to RGB) or a raw tensor fixture, by content.
inline Image load_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw DataError("cannot open image " + path.string());
  char head[16] = {};
  probe.read(head, sizeof(head));
  probe.close();
  static constexpr unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (std::memcmp(head, png_sig, 8) == 0) return read_png(path);
  if (std::strncmp(head, detail::kTensorMagic, std::strlen(detail::kTensorMagic)) != 0) {
    throw DataError("unrecognized image format: " + path.string());
  }
  const std::string bytes = detail::read_file_bytes(path);
  const auto nl = bytes.find('\n');
  std::istringstream header(bytes.substr(0, nl));
  std::string magic;
  int version = 0;
  std::size_t c = 0, h = 0, w = 0;
  header >> magic >> version >> c >> h >> w;
  if (header.fail() || version != 1 || c == 0 || h == 0 || w == 0) {
    throw DataError("malformed tensor header in " + path.string());
  }
  const std::size_t count = c * h * w;
  if (nl == std::string::npos || bytes.size() - nl - 1 < 4 * count) throw DataError("truncated tensor file " + path.string());
  std::vector<float> values(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return Image(Shape{c, h, w}, std::move(values));
}

// ----------------------------------------------------------------- manifests

enum class ManifestKind { mos_fr, mos_nr, distribution, pairwise };

inline const char* kind_name(ManifestKind k) {
  switch (k) {
    case ManifestKind::mos_fr: return "MOS-FR";
    case ManifestKind::mos_nr: return "MOS-NR";
    case ManifestKind::distribution: return "DIST";
    case ManifestKind::pairwise: return "2AFC";
  }
  return "?";
}

struct MosRecord {
  std::string dist_path;
  std::string ref_path;  // empty for no-reference manifests
  double mos_raw = 0.0;
  double mos = 0.0;  // min-max normalized over the manifest
};

struct DistributionRecord {
  std::string dist_path;
  std::vector<double> p;
};

struct PairwiseRecord {
  std::string ref_path;
  std::string a_path;
  std::string b_path;
  double p_ab = 0.5;  // probability that A is preferred
};

/// Kind-homogeneous list of samples; paths are relative to `root`.
struct Manifest {
  ManifestKind kind = ManifestKind::mos_fr;
  std::filesystem::path root;
  std::vector<MosRecord> mos;
  std::vector<DistributionRecord> distribution;
  std::vector<PairwiseRecord> pairwise;
  std::optional<LabelRange> label_range;  // raw MOS min/max used for normalization
  std::size_t bins = 0;                   // distribution manifests

  std::size_t size() const {
    switch (kind) {
      case ManifestKind::mos_fr:
      case ManifestKind::mos_nr: return mos.size();
      case ManifestKind::distribution: return distribution.size();
      case ManifestKind::pairwise: return pairwise.size();
    }
    return 0;
  }

  std::filesystem::path resolve(const std::string& p) const { return root / p; }

  /// Recomputes the min-max normalization from this manifest's own labels.
  void normalize_mos() {
    if (mos.empty()) {
      label_range.reset();
      return;
    }
    LabelRange r{mos.front().mos_raw, mos.front().mos_raw};
    for (const auto& m : mos) {
      r.min = std::min(r.min, m.mos_raw);
      r.max = std::max(r.max, m.mos_raw);
    }
    for (auto& m : mos) m.mos = r.normalize(m.mos_raw);
    label_range = r;
  }
};

struct ManifestOptions {
  bool check_files = true;
  std::optional<std::pair<double, double>> mos_range;  // declared valid raw MOS range
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<std::string> read_csv_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw DataError("manifest " + path.string() + " is empty");
  return lines;
}

inline double parse_number(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = field.data() + field.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw DataError(where + ": '" + field + "' is not a finite number");
  }
  return v;
}

}  // namespace detail

inline std::vector<std::string> manifest_columns(ManifestKind kind, std::size_t bins = 0) {
  switch (kind) {
    case ManifestKind::mos_fr: return {"dist_path", "ref_path", "mos"};
    case ManifestKind::mos_nr: return {"dist_path", "mos"};
    case ManifestKind::pairwise: return {"ref_path", "a_path", "b_path", "p_ab"};
    case ManifestKind::distribution: {
      std::vector<std::string> cols{"dist_path"};
      for (std::size_t k = 1; k <= bins; ++k) cols.push_back("p" + std::to_string(k));
      return cols;
    }
  }
  return {};
}

/// Infers the manifest kind from its header row.
inline ManifestKind detect_manifest_kind(const std::filesystem::path& path) {
  const auto header = detail::split_csv(detail::read_csv_lines(path).front());
  for (auto kind : {ManifestKind::mos_fr, ManifestKind::mos_nr, ManifestKind::pairwise}) {
    if (header == manifest_columns(kind)) return kind;
  }
  if (header.size() >= 3 && header == manifest_columns(ManifestKind::distribution, header.size() - 1)) {
    return ManifestKind::distribution;
  }
  throw DataError(path.string() + ": unrecognized manifest header");
}

inline Manifest load_manifest(const std::filesystem::path& path, ManifestKind kind, const ManifestOptions& opts = {}) {
  const auto lines = detail::read_csv_lines(path);
  const auto header = detail::split_csv(lines.front());
  Manifest m;
  m.kind = kind;
  m.root = path.parent_path();
  if (kind == ManifestKind::distribution) {
    if (header.size() < 3) throw DataError(path.string() + ": distribution manifest needs at least 2 bins");
    m.bins = header.size() - 1;
  }
  const auto expected = manifest_columns(kind, m.bins);
  if (header != expected) {
    throw DataError(path.string() + ": header does not match the " + std::string(kind_name(kind)) + " schema");
  }

  auto check_file = [&](const std::string& rel, const std::string& where) {
    if (rel.empty()) throw DataError(where + ": empty path");
    if (opts.check_files && !std::filesystem::exists(m.resolve(rel))) {
      throw DataError(where + ": file not found: " + m.resolve(rel).string());
    }
  };

  for (std::size_t row = 1; row < lines.size(); ++row) {
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    const auto f = detail::split_csv(lines[row]);
    if (f.size() != expected.size()) {
      throw DataError(where + ": expected " + std::to_string(expected.size()) + " columns, got " +
                      std::to_string(f.size()));
    }
    switch (kind) {
      case ManifestKind::mos_fr:
      case ManifestKind::mos_nr: {
        MosRecord r;
        r.dist_path = f[0];
        check_file(r.dist_path, where);
        if (kind == ManifestKind::mos_fr) {
          r.ref_path = f[1];
          check_file(r.ref_path, where);
        }
        r.mos_raw = detail::parse_number(f.back(), where);
        if (opts.mos_range && (r.mos_raw < opts.mos_range->first || r.mos_raw > opts.mos_range->second)) {
          throw DataError(where + ": MOS " + f.back() + " outside declared range");
        }
        m.mos.push_back(std::move(r));
        break;
      }
      case ManifestKind::distribution: {
        DistributionRecord r;
        r.dist_path = f[0];
        check_file(r.dist_path, where);
        double total = 0.0;
        for (std::size_t k = 1; k < f.size(); ++k) {
          const double p = detail::parse_number(f[k], where);
          if (p < 0.0) throw DataError(where + ": negative probability");
          r.p.push_back(p);
          total += p;
        }
        if (std::abs(total - 1.0) > 1e-4) {
          throw DataError(where + ": distribution sums to " + detail::format_number(total) + ", not 1");
        }
        m.distribution.push_back(std::move(r));
        break;
      }
      case ManifestKind::pairwise: {
        PairwiseRecord r{f[0], f[1], f[2], detail::parse_number(f[3], where)};
        check_file(r.ref_path, where);
        check_file(r.a_path, where);
        check_file(r.b_path, where);
        if (r.p_ab < 0.0 || r.p_ab > 1.0) throw DataError(where + ": p_ab " + f[3] + " outside [0,1]");
        m.pairwise.push_back(std::move(r));
        break;
      }
    }
  }
  m.normalize_mos();
  return m;
}

/// Writes the manifest as CSV with paths relative to the output file's
/// directory. MOS is written raw.
inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path out_dir = fs::absolute(path).parent_path();
  auto rel = [&](const std::string& p) {
    return fs::absolute(m.resolve(p)).lexically_normal().lexically_relative(out_dir).generic_string();
  };
  std::ostringstream os;
  const auto cols = manifest_columns(m.kind, m.bins);
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  switch (m.kind) {
    case ManifestKind::mos_fr:
      for (const auto& r : m.mos)
        os << rel(r.dist_path) << ',' << rel(r.ref_path) << ',' << detail::format_number(r.mos_raw) << '\n';
      break;
    case ManifestKind::mos_nr:
      for (const auto& r : m.mos) os << rel(r.dist_path) << ',' << detail::format_number(r.mos_raw) << '\n';
      break;
    case ManifestKind::distribution:
      for (const auto& r : m.distribution) {
        os << rel(r.dist_path);
        for (double p : r.p) os << ',' << detail::format_number(p);
        os << '\n';
      }
      break;
    case ManifestKind::pairwise:
      for (const auto& r : m.pairwise)
        os << rel(r.ref_path) << ',' << rel(r.a_path) << ',' << rel(r.b_path) << ','
           << detail::format_number(r.p_ab) << '\n';
      break;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << os.str();
}

// -------------------------------------------------------------------- splits

/// Raised when a split strategy does not apply to the manifest kind.
class UnsupportedKindError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

using SplitRatios = std::array<double, 3>;

namespace detail {

// Floor count per ratio, leftovers handed out train -> val -> test.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ArgumentError("split: ratios must be nonnegative");
    total += r;
  }
  if (total <= 0.0) throw ArgumentError("split: ratios sum to zero");
  std::array<std::size_t, 3> counts{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    counts[k] = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[k] / total));
    assigned += counts[k];
  }
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3) {
    if (ratios[k] > 0.0) {
      ++counts[k];
      ++assigned;
    }
  }
  return counts;
}

inline Manifest empty_like(const Manifest& m) {
  Manifest out;
  out.kind = m.kind;
  out.root = m.root;
  out.bins = m.bins;
  return out;
}

inline void append_record(const Manifest& from, std::size_t i, Manifest& to) {
  switch (from.kind) {
    case ManifestKind::mos_fr:
    case ManifestKind::mos_nr: to.mos.push_back(from.mos[i]); break;
    case ManifestKind::distribution: to.distribution.push_back(from.distribution[i]); break;
    case ManifestKind::pairwise: to.pairwise.push_back(from.pairwise[i]); break;
  }
}

}  // namespace detail

/// Parses "6:2:2" style ratios.
inline SplitRatios parse_ratios(const std::string& text) {
  SplitRatios r{};
  std::istringstream in(text);
  std::string part;
  std::size_t k = 0;
  while (std::getline(in, part, ':')) {
    if (k == 3) throw ArgumentError("split ratios: expected three values, got '" + text + "'");
    try {
      std::size_t used = 0;
      r[k] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ArgumentError("split ratios: '" + part + "' is not a number");
    }
    ++k;
  }
  if (k != 3) throw ArgumentError("split ratios: expected three values, got '" + text + "'");
  return r;
}

/// Partitions references (not records) into train/val/test so that every
/// distorted image follows its reference. Reference order is shuffled by
/// `seed`; record order is preserved within each split.
inline std::array<Manifest, 3> split_by_reference(const Manifest& m, const SplitRatios& ratios, std::uint64_t seed) {
  if (m.kind != ManifestKind::mos_fr && m.kind != ManifestKind::pairwise) {
    throw UnsupportedKindError(std::string("split_by_reference: ") + kind_name(m.kind) +
                               " manifests have no reference column");
  }
  auto ref_of = [&](std::size_t i) -> const std::string& {
    return m.kind == ManifestKind::mos_fr ? m.mos[i].ref_path : m.pairwise[i].ref_path;
  };
  std::vector<std::string> refs;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (std::find(refs.begin(), refs.end(), ref_of(i)) == refs.end()) refs.push_back(ref_of(i));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(refs.begin(), refs.end(), rng);
  const auto counts = detail::split_counts(refs.size(), ratios);

  std::vector<std::pair<std::string, std::size_t>> owner;  // ref -> split
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < counts[s]; ++k) owner.emplace_back(refs[cursor++], s);
  std::sort(owner.begin(), owner.end());

  std::array<Manifest, 3> out{detail::empty_like(m), detail::empty_like(m), detail::empty_like(m)};
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto it = std::lower_bound(owner.begin(), owner.end(), std::make_pair(ref_of(i), std::size_t{0}));
    detail::append_record(m, i, out[it->second]);
  }
  for (auto& part : out) part.normalize_mos();
  return out;
}

/// Plain record-level split for manifests without references.
inline std::array<Manifest, 3> split_records(const Manifest& m, const SplitRatios& ratios, std::uint64_t seed) {
  std::vector<std::size_t> order(m.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto counts = detail::split_counts(order.size(), ratios);
  std::array<Manifest, 3> out{detail::empty_like(m), detail::empty_like(m), detail::empty_like(m)};
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<std::size_t> members(order.begin() + cursor, order.begin() + cursor + counts[s]);
    cursor += counts[s];
    std::sort(members.begin(), members.end());
    for (auto i : members) detail::append_record(m, i, out[s]);
  }
  for (auto& part : out) part.normalize_mos();
  return out;
}

// ------------------------------------------------------------- resize, augment

/// Scales so the shorter side equals `target`, keeping the aspect ratio
/// (longer side rounded to nearest).
inline Image resize_shorter_side(const Image& img, std::size_t target) {
  if (target == 0) throw ArgumentError("resize_shorter_side: target must be >= 1");
  const std::size_t h = img.dim(1), w = img.dim(2);
  const std::size_t shorter = std::min(h, w);
  const double factor = static_cast<double>(target) / static_cast<double>(shorter);
  const std::size_t nh = h <= w ? target : static_cast<std::size_t>(std::lround(h * factor));
  const std::size_t nw = h <= w ? static_cast<std::size_t>(std::lround(w * factor)) : target;
  NoGradGuard no_grad;
  return ops::bilinear_resize(img, std::max<std::size_t>(nh, 1), std::max<std::size_t>(nw, 1));
}

inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  const std::size_t c = img.dim(0), ih = img.dim(1), iw = img.dim(2);
  if (top + h > ih || left + w > iw) throw ArgumentError("crop: window exceeds image " + shape_str(img.shape()));
  std::vector<float> out(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(img.data().begin() + static_cast<std::ptrdiff_t>((ch * ih + top + y) * iw + left), w,
                  out.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w));
  return Image(Shape{c, h, w}, std::move(out));
}

inline Image flip_horizontal(const Image& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<float> out(img.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = img[(ch * h + y) * w + (w - 1 - x)];
  return Image(img.shape(), std::move(out));
}

inline Image flip_vertical(const Image& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<float> out(img.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = img[(ch * h + (h - 1 - y)) * w + x];
  return Image(img.shape(), std::move(out));
}

struct AugmentConfig {
  std::size_t crop_height = 0;  // 0 keeps the full extent
  std::size_t crop_width = 0;
  double hflip_probability = 0.0;
  double vflip_probability = 0.0;
  std::uint64_t seed = 0;
  // Random shorter-side resize before cropping, inclusive range; off when unset.
  std::optional<std::pair<std::size_t, std::size_t>> shorter_side_range;
};

/// One random draw, applied identically to every image of a sample.
struct AugmentDraw {
  std::size_t shorter_side = 0;  // 0: no resize
  std::size_t top = 0, left = 0, height = 0, width = 0;
  bool hflip = false, vflip = false;
};

/// Independent generator per (seed, stream) so results do not depend on the
/// order samples are processed in.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline AugmentDraw draw_augment(const AugmentConfig& cfg, std::size_t height, std::size_t width, std::uint64_t stream) {
  auto rng = substream(cfg.seed, stream);
  AugmentDraw d;
  if (cfg.shorter_side_range) {
    const auto [lo, hi] = *cfg.shorter_side_range;
    d.shorter_side = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    const double factor = static_cast<double>(d.shorter_side) / static_cast<double>(std::min(height, width));
    if (height <= width) {
      width = static_cast<std::size_t>(std::lround(width * factor));
      height = d.shorter_side;
    } else {
      height = static_cast<std::size_t>(std::lround(height * factor));
      width = d.shorter_side;
    }
  }
  d.height = cfg.crop_height ? cfg.crop_height : height;
  d.width = cfg.crop_width ? cfg.crop_width : width;
  if (d.height > height || d.width > width) {
    throw ArgumentError("augment: crop " + std::to_string(d.height) + "x" + std::to_string(d.width) +
                        " larger than image " + std::to_string(height) + "x" + std::to_string(width));
  }
  d.top = std::uniform_int_distribution<std::size_t>(0, height - d.height)(rng);
  d.left = std::uniform_int_distribution<std::size_t>(0, width - d.width)(rng);
  d.hflip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.hflip_probability;
  d.vflip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.vflip_probability;
  return d;
}

inline Image apply_augment(const Image& img, const AugmentDraw& d) {
  Image out = d.shorter_side ? resize_shorter_side(img, d.shorter_side) : img;
  if (d.height != out.dim(1) || d.width != out.dim(2)) out = crop(out, d.top, d.left, d.height, d.width);
  if (d.hflip) out = flip_horizontal(out);
  if (d.vflip) out = flip_vertical(out);
  return out;
}

/// Same crop offsets and flips for every image of one sample, so spatial
/// correspondence between distorted and reference images is kept.
inline std::vector<Image> augment(const std::vector<Image>& images, const AugmentConfig& cfg, std::uint64_t stream) {
  if (images.empty()) return {};
  for (const auto& img : images) {
    if (img.shape() != images.front().shape()) throw ArgumentError("augment: images of one sample differ in shape");
  }
  const auto draw = draw_augment(cfg, images.front().dim(1), images.front().dim(2), stream);
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(apply_augment(img, draw));
  return out;
}

// -------------------------------------------------------------------- dataset

/// Decoded sample. Image order: FR {dist, ref}; NR and DIST {dist};
/// 2AFC {ref, a, b}.
struct Sample {
  std::vector<Image> images;
  double target = 0.0;               // normalized MOS, or p_AB for 2AFC
  std::vector<double> distribution;  // DIST only
};

struct Dataset {
  ManifestKind kind = ManifestKind::mos_fr;
  std::vector<Sample> samples;
  std::optional<LabelRange> label_range;

  std::size_t size() const { return samples.size(); }
};

/// Decodes every image a manifest references. Pairs must share a shape.
inline Dataset load_dataset(const Manifest& m) {
  Dataset ds;
  ds.kind = m.kind;
  ds.label_range = m.label_range;
  auto load = [&](const std::string& p) { return load_image(m.resolve(p)); };
  for (std::size_t i = 0; i < m.size(); ++i) {
    Sample s;
    switch (m.kind) {
      case ManifestKind::mos_fr:
        s.images = {load(m.mos[i].dist_path), load(m.mos[i].ref_path)};
        s.target = m.mos[i].mos;
        break;
      case ManifestKind::mos_nr:
        s.images = {load(m.mos[i].dist_path)};
        s.target = m.mos[i].mos;
        break;
      case ManifestKind::distribution:
        s.images = {load(m.distribution[i].dist_path)};
        s.distribution = m.distribution[i].p;
        for (std::size_t k = 0; k < s.distribution.size(); ++k) s.target += (k + 1) * s.distribution[k];
        break;
      case ManifestKind::pairwise:
        s.images = {load(m.pairwise[i].ref_path), load(m.pairwise[i].a_path), load(m.pairwise[i].b_path)};
        s.target = m.pairwise[i].p_ab;
        break;
    }
    for (const auto& img : s.images) {
      if (img.shape() != s.images.front().shape()) {
        throw DataError("sample " + std::to_string(i + 1) + ": images differ in shape");
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace topiq
