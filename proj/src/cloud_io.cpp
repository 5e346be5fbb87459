#include "pcqa/cloud_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "pcqa/error.hpp"

namespace pcqa {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingProperty: return "MissingProperty";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::TruncatedBody: return "TruncatedBody";
    case ErrorKind::DegenerateCloud: return "DegenerateCloud";
    case ErrorKind::UnknownSplit: return "UnknownSplit";
    case ErrorKind::MosOutOfRange: return "MosOutOfRange";
    case ErrorKind::InvalidManifest: return "InvalidManifest";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::NTooLarge: return "NTooLarge";
    case ErrorKind::EmptyBall: return "EmptyBall";
    case ErrorKind::FilterLengthMismatch: return "FilterLengthMismatch";
    case ErrorKind::CloudTooSmall: return "CloudTooSmall";
    case ErrorKind::EmptyResult: return "EmptyResult";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::OddChannelCount: return "OddChannelCount";
    case ErrorKind::ConstantVector: return "ConstantVector";
    case ErrorKind::TooFewEntries: return "TooFewEntries";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::FitDiverged: return "FitDiverged";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

void PointCloud::validate() const {
  if (coords.empty()) throw Error(ErrorKind::InvalidArgument, "point cloud '" + name + "' is empty");
  if (coords.size() != colors.size()) {
    throw Error(ErrorKind::ShapeMismatch, "coords and colors row counts differ in '" + name + "'");
  }
  for (const auto& p : coords) {
    for (double v : p) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::InvalidArgument, "non-finite coordinate in '" + name + "'");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class ScalarType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::optional<ScalarType> parse_scalar_type(std::string_view t) {
  if (t == "char" || t == "int8") return ScalarType::i8;
  if (t == "uchar" || t == "uint8") return ScalarType::u8;
  if (t == "short" || t == "int16") return ScalarType::i16;
  if (t == "ushort" || t == "uint16") return ScalarType::u16;
  if (t == "int" || t == "int32") return ScalarType::i32;
  if (t == "uint" || t == "uint32") return ScalarType::u32;
  if (t == "float" || t == "float32") return ScalarType::f32;
  if (t == "double" || t == "float64") return ScalarType::f64;
  return std::nullopt;
}

// Parsed in the declared type so float values survive a text round trip exactly.
double parse_ascii_scalar(ScalarType type, const std::string& token, const std::string& where) {
  const char* first = token.data();
  const char* last = first + token.size();
  std::from_chars_result res{};
  double out = 0.0;
  if (type == ScalarType::f32) {
    float v = 0.0f;
    res = std::from_chars(first, last, v);
    out = v;
  } else {
    res = std::from_chars(first, last, out);
  }
  if (res.ec != std::errc() || res.ptr != last) {
    throw Error(ErrorKind::MalformedHeader, where + ": cannot parse value '" + token + "'");
  }
  return out;
}

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::i8:
    case ScalarType::u8: return 1;
    case ScalarType::i16:
    case ScalarType::u16: return 2;
    case ScalarType::i32:
    case ScalarType::u32:
    case ScalarType::f32: return 4;
    case ScalarType::f64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  ScalarType type = ScalarType::f32;
  bool is_list = false;
  ScalarType count_type = ScalarType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyHeader {
  bool binary = false;
  std::vector<PlyElement> elements;
};

template <typename T>
T read_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

double decode_binary(ScalarType t, const char* p) {
  switch (t) {
    case ScalarType::i8: return read_le<std::int8_t>(p);
    case ScalarType::u8: return read_le<std::uint8_t>(p);
    case ScalarType::i16: return read_le<std::int16_t>(p);
    case ScalarType::u16: return read_le<std::uint16_t>(p);
    case ScalarType::i32: return read_le<std::int32_t>(p);
    case ScalarType::u32: return read_le<std::uint32_t>(p);
    case ScalarType::f32: return read_le<float>(p);
    case ScalarType::f64: return read_le<double>(p);
  }
  return 0.0;
}

template <typename T>
void append_le(std::string& out, T value) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

PlyHeader parse_header(std::istream& in, const std::string& where) {
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") {
    throw Error(ErrorKind::MalformedHeader, where + ": missing 'ply' magic");
  }
  PlyHeader header;
  bool have_format = false;
  while (true) {
    if (!std::getline(in, line)) {
      throw Error(ErrorKind::MalformedHeader, where + ": header not terminated by end_header");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream tokens(line);
    std::string keyword;
    tokens >> keyword;
    if (keyword.empty() || keyword == "comment" || keyword == "obj_info") continue;
    if (keyword == "end_header") break;
    if (keyword == "format") {
      std::string fmt;
      tokens >> fmt;
      if (fmt == "ascii") {
        header.binary = false;
      } else if (fmt == "binary_little_endian") {
        header.binary = true;
      } else {
        throw Error(ErrorKind::MalformedHeader, where + ": unsupported format '" + fmt + "'");
      }
      have_format = true;
    } else if (keyword == "element") {
      PlyElement element;
      long long count = -1;
      tokens >> element.name >> count;
      if (element.name.empty() || count < 0) {
        throw Error(ErrorKind::MalformedHeader, where + ": bad element line '" + line + "'");
      }
      element.count = static_cast<std::size_t>(count);
      header.elements.push_back(std::move(element));
    } else if (keyword == "property") {
      if (header.elements.empty()) {
        throw Error(ErrorKind::MalformedHeader, where + ": property before any element");
      }
      PlyProperty prop;
      std::string type;
      tokens >> type;
      if (type == "list") {
        std::string count_type, item_type;
        tokens >> count_type >> item_type >> prop.name;
        auto ct = parse_scalar_type(count_type);
        auto it = parse_scalar_type(item_type);
        if (!ct || !it) throw Error(ErrorKind::MalformedHeader, where + ": bad list property");
        prop.is_list = true;
        prop.count_type = *ct;
        prop.type = *it;
      } else {
        auto t = parse_scalar_type(type);
        tokens >> prop.name;
        if (!t || prop.name.empty()) {
          throw Error(ErrorKind::MalformedHeader, where + ": bad property line '" + line + "'");
        }
        prop.type = *t;
      }
      header.elements.back().properties.push_back(std::move(prop));
    } else {
      throw Error(ErrorKind::MalformedHeader, where + ": unknown keyword '" + keyword + "'");
    }
  }
  if (!have_format) throw Error(ErrorKind::MalformedHeader, where + ": missing format line");
  return header;
}

int find_property(const PlyElement& element, std::string_view name) {
  for (std::size_t i = 0; i < element.properties.size(); ++i) {
    if (element.properties[i].name == name && !element.properties[i].is_list) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

std::uint8_t to_color(double v, const std::string& where) {
  if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
    throw Error(ErrorKind::InvalidArgument, where + ": color value out of [0,255]");
  }
  return static_cast<std::uint8_t>(v);
}

}  // namespace

PointCloud load_ply(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + where);

  const PlyHeader header = parse_header(in, where);
  auto vertex_it = std::find_if(header.elements.begin(), header.elements.end(),
                                [](const PlyElement& e) { return e.name == "vertex"; });
  if (vertex_it == header.elements.end()) {
    throw Error(ErrorKind::MalformedHeader, where + ": no vertex element");
  }
  const PlyElement& vertex = *vertex_it;
  std::array<int, 6> slots{};
  const std::array<std::string_view, 6> names{"x", "y", "z", "red", "green", "blue"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    slots[i] = find_property(vertex, names[i]);
    if (slots[i] < 0) {
      throw Error(ErrorKind::MissingProperty, where + ": vertex has no '" + std::string(names[i]) + "'");
    }
  }

  PointCloud cloud;
  cloud.name = path.stem().string();
  cloud.coords.resize(vertex.count);
  cloud.colors.resize(vertex.count);
  std::vector<double> row(vertex.properties.size());

  auto store_row = [&](std::size_t i) {
    for (int a = 0; a < 3; ++a) cloud.coords[i][a] = row[slots[a]];
    for (int c = 0; c < 3; ++c) cloud.colors[i][c] = to_color(row[slots[3 + c]], where);
  };

  if (!header.binary) {
    std::string line;
    for (const PlyElement& element : header.elements) {
      const bool is_vertex = &element == &vertex;
      for (std::size_t i = 0; i < element.count; ++i) {
        if (!std::getline(in, line)) {
          throw Error(ErrorKind::TruncatedBody, where + ": expected " + std::to_string(element.count) +
                                                    " '" + element.name + "' rows");
        }
        if (!is_vertex) continue;
        std::istringstream tokens(line);
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const PlyProperty& prop = element.properties[p];
          if (prop.is_list) {
            std::size_t n = 0;
            tokens >> n;
            double skip;
            for (std::size_t k = 0; k < n; ++k) tokens >> skip;
            row[p] = 0.0;
          } else {
            std::string token;
            tokens >> token;
            if (tokens) row[p] = parse_ascii_scalar(prop.type, token, where);
          }
          if (!tokens) throw Error(ErrorKind::TruncatedBody, where + ": short vertex row");
        }
        store_row(i);
      }
      if (is_vertex) break;
    }
  } else {
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t offset = 0;
    auto need = [&](std::size_t n) {
      if (offset + n > body.size()) {
        throw Error(ErrorKind::TruncatedBody, where + ": binary body ends early");
      }
    };
    for (const PlyElement& element : header.elements) {
      const bool is_vertex = &element == &vertex;
      for (std::size_t i = 0; i < element.count; ++i) {
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const PlyProperty& prop = element.properties[p];
          if (prop.is_list) {
            const std::size_t cs = scalar_size(prop.count_type);
            need(cs);
            const auto n = static_cast<std::size_t>(decode_binary(prop.count_type, body.data() + offset));
            offset += cs;
            need(n * scalar_size(prop.type));
            offset += n * scalar_size(prop.type);
            row[p] = 0.0;
          } else {
            const std::size_t s = scalar_size(prop.type);
            need(s);
            row[p] = decode_binary(prop.type, body.data() + offset);
            offset += s;
          }
        }
        if (is_vertex) store_row(i);
      }
      if (is_vertex) break;
    }
  }
  cloud.validate();
  return cloud;
}

void save_ply(const PointCloud& cloud, const std::filesystem::path& path, PlyEncoding encoding) {
  cloud.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "ply\n"
      << "format " << (encoding == PlyEncoding::ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  if (encoding == PlyEncoding::ascii) {
    char buf[64];
    std::string text;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int a = 0; a < 3; ++a) {
        // Shortest round-trip representation of the float value.
        auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(cloud.coords[i][a]));
        (void)ec;
        text.append(buf, end);
        text.push_back(' ');
      }
      for (int c = 0; c < 3; ++c) {
        text += std::to_string(cloud.colors[i][c]);
        text.push_back(c == 2 ? '\n' : ' ');
      }
    }
    out << text;
  } else {
    std::string body;
    body.reserve(cloud.size() * 15);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int a = 0; a < 3; ++a) append_le(body, static_cast<float>(cloud.coords[i][a]));
      for (int c = 0; c < 3; ++c) append_le(body, cloud.colors[i][c]);
    }
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Normalization

Vec3 centroid(const std::vector<Vec3>& coords) {
  Vec3 c{0.0, 0.0, 0.0};
  for (const auto& p : coords) {
    for (int a = 0; a < 3; ++a) c[a] += p[a];
  }
  const double n = static_cast<double>(coords.size());
  for (double& v : c) v /= n;
  return c;
}

std::pair<Vec3, Vec3> bounding_box(const std::vector<Vec3>& coords) {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-lo[0], -lo[1], -lo[2]};
  for (const auto& p : coords) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  return {lo, hi};
}

double bounding_box_diagonal(const std::vector<Vec3>& coords) {
  const auto [lo, hi] = bounding_box(coords);
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += (hi[a] - lo[a]) * (hi[a] - lo[a]);
  return std::sqrt(s);
}

PointCloud normalize_cloud(const PointCloud& cloud) {
  cloud.validate();
  const Vec3 c = centroid(cloud.coords);
  double max_norm = 0.0;
  for (const auto& p : cloud.coords) {
    const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
    max_norm = std::max(max_norm, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  if (!(max_norm > 0.0)) {
    throw Error(ErrorKind::DegenerateCloud, "all points of '" + cloud.name + "' coincide");
  }
  PointCloud out;
  out.name = cloud.name;
  out.colors = cloud.colors;
  out.coords.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) out.coords[i][a] = (cloud.coords[i][a] - c[a]) / max_norm;
  }
  // Compose with any earlier normalization so the record maps back to the source frame.
  Normalization record{c, max_norm};
  if (cloud.normalization) {
    const Normalization& prev = *cloud.normalization;
    for (int a = 0; a < 3; ++a) record.centroid[a] = prev.centroid[a] + prev.scale * c[a];
    record.scale = prev.scale * max_norm;
  }
  out.normalization = record;
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw Error(ErrorKind::UnknownSplit, "split '" + std::string(text) + "' is neither train nor test");
}

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& entry) const {
  std::filesystem::path p(entry.path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

void DatasetManifest::validate(bool check_paths) const {
  if (!(mos_lo < mos_hi)) throw Error(ErrorKind::InvalidManifest, "mos_scale requires lo < hi");
  std::set<std::string> train_paths, test_paths;
  for (const auto& e : entries) {
    if (!(e.mos >= mos_lo && e.mos <= mos_hi)) {
      std::ostringstream msg;
      msg << e.path << " has mos " << e.mos << " outside [" << mos_lo << ", " << mos_hi << "]";
      throw Error(ErrorKind::MosOutOfRange, msg.str());
    }
    (e.split == Split::train ? train_paths : test_paths).insert(e.path);
    if (check_paths) {
      std::ifstream probe(resolve(e), std::ios::binary);
      if (!probe) throw Error(ErrorKind::Io, "manifest entry not readable: " + resolve(e).string());
    }
  }
  for (const auto& p : train_paths) {
    if (test_paths.count(p)) throw Error(ErrorKind::InvalidManifest, p + " is in both train and test");
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& text, const std::string& what) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::InvalidManifest, "cannot parse " + what + " '" + text + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open manifest " + path.string());
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      body.erase(0, body.find_first_not_of(' '));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      std::string key = body.substr(0, eq), value = body.substr(eq + 1);
      if (key == "mos_scale") {
        const auto parts = split_csv(value);
        if (parts.size() != 2) throw Error(ErrorKind::InvalidManifest, "mos_scale needs lo,hi");
        manifest.mos_lo = parse_double(parts[0], "mos_scale lo");
        manifest.mos_hi = parse_double(parts[1], "mos_scale hi");
      } else {
        manifest.notes.emplace_back(key, value);
      }
      continue;
    }
    if (!have_header) {
      if (line != "path,mos,split,source") {
        throw Error(ErrorKind::InvalidManifest, "expected header 'path,mos,split,source'");
      }
      have_header = true;
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != 4) {
      throw Error(ErrorKind::InvalidManifest, "expected 4 fields in row '" + line + "'");
    }
    ManifestEntry entry;
    entry.path = fields[0];
    entry.mos = parse_double(fields[1], "mos");
    entry.split = parse_split(fields[2]);
    entry.source = fields[3];
    manifest.entries.push_back(std::move(entry));
  }
  if (!have_header) throw Error(ErrorKind::InvalidManifest, "manifest has no header row");
  manifest.validate(false);
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate(false);
  std::ostringstream out;
  out << "# mos_scale=" << format_double(manifest.mos_lo) << "," << format_double(manifest.mos_hi) << "\n";
  for (const auto& [key, value] : manifest.notes) out << "# " << key << "=" << value << "\n";
  out << "path,mos,split,source\n";
  for (const auto& e : manifest.entries) {
    if (e.path.find(',') != std::string::npos || e.source.find(',') != std::string::npos) {
      throw Error(ErrorKind::InvalidManifest, "commas are not allowed in manifest fields: " + e.path);
    }
    out << e.path << "," << format_double(e.mos) << "," << to_string(e.split) << "," << e.source << "\n";
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
  file << out.str();
}

}  // namespace pcqa
