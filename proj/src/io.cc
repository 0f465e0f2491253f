#include "tstereo/io.h"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tstereo/scenegen.h"

namespace tstereo {

namespace {

static_assert(std::endian::native == std::endian::little,
              "PFM writer assumes a little-endian host");

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  std::string token() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) ++pos_;
    if (pos_ == start) throw ParseError("unexpected end of header", pos_);
    return std::string(bytes_.substr(start, pos_ - start));
  }

  long integer(const char* what) {
    skip_space_and_comments();
    const std::size_t at = pos_;
    const std::string t = token();
    long v = 0;
    for (char c : t) {
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw ParseError(std::string("invalid ") + what, at);
      v = v * 10 + (c - '0');
      if (v > (1L << 30)) throw ParseError(std::string(what) + " too large", at);
    }
    return v;
  }

  double real(const char* what) {
    skip_space_and_comments();
    const std::size_t at = pos_;
    const std::string t = token();
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw ParseError(std::string("invalid ") + what, at);
      return v;
    } catch (const std::logic_error&) {
      throw ParseError(std::string("invalid ") + what, at);
    }
  }

  // Exactly one whitespace byte separates the header from the payload.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_]))
      throw ParseError("missing whitespace after header", pos_);
    ++pos_;
  }

 private:
  static bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
           c == '\f';
  }
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void require_payload(std::string_view bytes, std::size_t offset,
                     std::size_t needed) {
  if (bytes.size() - offset < needed)
    throw ParseError("truncated payload: need " + std::to_string(needed) +
                         " bytes, have " + std::to_string(bytes.size() - offset),
                     bytes.size());
}

}  // namespace

std::string encode_pgm(const PgmImage& img) {
  if (img.maxval <= 0 || img.maxval > 65535)
    throw std::invalid_argument("pgm maxval out of range");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw std::invalid_argument("pgm pixel count mismatch");
  std::ostringstream header;
  header << "P5\n" << img.width << " " << img.height << "\n" << img.maxval << "\n";
  std::string out = header.str();
  const bool wide = img.maxval > 255;
  out.reserve(out.size() + img.pixels.size() * (wide ? 2 : 1));
  for (std::uint16_t v : img.pixels) {
    if (v > img.maxval) throw std::invalid_argument("pgm sample above maxval");
    if (wide) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

PgmImage decode_pgm(std::string_view bytes) {
  if (bytes.empty()) throw ParseError("empty file", 0);
  HeaderReader r(bytes);
  if (r.token() != "P5") throw ParseError("not a binary PGM (P5)", 0);
  PgmImage img;
  img.width = static_cast<int>(r.integer("width"));
  img.height = static_cast<int>(r.integer("height"));
  const std::size_t maxval_at = r.pos();
  img.maxval = static_cast<int>(r.integer("maxval"));
  if (img.maxval <= 0 || img.maxval > 65535)
    throw ParseError("maxval out of range", maxval_at);
  r.end_of_header();
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  const bool wide = img.maxval > 255;
  const std::size_t offset = r.pos();
  require_payload(bytes, offset, n * (wide ? 2 : 1));
  img.pixels.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = wide ? static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1])
                         : p[i];
    if (img.pixels[i] > img.maxval)
      throw ParseError("sample above maxval", offset + i * (wide ? 2 : 1));
  }
  return img;
}

std::string encode_pfm(const Image& map) {
  std::ostringstream header;
  header << "Pf\n" << map.width() << " " << map.height() << "\n-1.0\n";
  std::string out = header.str();
  const std::size_t start = out.size();
  out.resize(start + map.size() * sizeof(float));
  char* dst = out.data() + start;
  for (int y = map.height() - 1; y >= 0; --y) {
    for (int x = 0; x < map.width(); ++x) {
      const float f = static_cast<float>(map.at(x, y));
      std::memcpy(dst, &f, sizeof f);
      dst += sizeof f;
    }
  }
  return out;
}

Image decode_pfm(std::string_view bytes) {
  if (bytes.empty()) throw ParseError("empty file", 0);
  HeaderReader r(bytes);
  const std::string magic = r.token();
  if (magic == "PF") throw ParseError("color PFM not supported", 0);
  if (magic != "Pf") throw ParseError("not a grayscale PFM (Pf)", 0);
  const int w = static_cast<int>(r.integer("width"));
  const int h = static_cast<int>(r.integer("height"));
  const std::size_t scale_at = r.pos();
  const double scale = r.real("scale");
  if (scale == 0.0 || !std::isfinite(scale))
    throw ParseError("invalid scale", scale_at);
  r.end_of_header();
  const bool little = scale < 0.0;
  const std::size_t offset = r.pos();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  require_payload(bytes, offset, n * sizeof(float));
  Image map(w, h);
  const char* src = bytes.data() + offset;
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      std::uint32_t raw = 0;
      std::memcpy(&raw, src, sizeof raw);
      if (!little) raw = __builtin_bswap32(raw);
      map.at(x, y) = static_cast<double>(std::bit_cast<float>(raw));
      src += sizeof raw;
    }
  }
  return map;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void save_image_pgm(const std::filesystem::path& path, const Image& image) {
  PgmImage pgm{image.width(), image.height(), 65535, {}};
  pgm.pixels.reserve(image.size());
  for (double v : image.values()) {
    const double c = std::clamp(v, 0.0, 1.0);
    pgm.pixels.push_back(static_cast<std::uint16_t>(std::lround(c * 65535.0)));
  }
  write_file(path, encode_pgm(pgm));
}

Image load_image_pgm(const std::filesystem::path& path) {
  const PgmImage pgm = decode_pgm(read_file(path));
  Image out(pgm.width, pgm.height);
  for (std::size_t i = 0; i < pgm.pixels.size(); ++i)
    out[i] = static_cast<double>(pgm.pixels[i]) / pgm.maxval;
  return out;
}

void save_material_pgm(const std::filesystem::path& path, const Mask& material) {
  PgmImage pgm{material.width(), material.height(), 255, {}};
  pgm.pixels.reserve(material.size());
  for (unsigned char m : material.values())
    pgm.pixels.push_back(material_code(static_cast<Material>(m)));
  write_file(path, encode_pgm(pgm));
}

Mask load_material_pgm(const std::filesystem::path& path) {
  const PgmImage pgm = decode_pgm(read_file(path));
  Mask out(pgm.width, pgm.height);
  for (std::size_t i = 0; i < pgm.pixels.size(); ++i)
    out[i] = static_cast<unsigned char>(
        material_from_code(static_cast<std::uint8_t>(pgm.pixels[i])));
  return out;
}

void save_labels_pgm(const std::filesystem::path& path, const Grid<int>& labels) {
  PgmImage pgm{labels.width(), labels.height(), 65535, {}};
  pgm.pixels.reserve(labels.size());
  for (int v : labels.values()) {
    if (v < 0 || v > 65535) throw std::invalid_argument("label out of 16-bit range");
    pgm.pixels.push_back(static_cast<std::uint16_t>(v));
  }
  write_file(path, encode_pgm(pgm));
}

Grid<int> load_labels_pgm(const std::filesystem::path& path) {
  const PgmImage pgm = decode_pgm(read_file(path));
  Grid<int> out(pgm.width, pgm.height);
  for (std::size_t i = 0; i < pgm.pixels.size(); ++i) out[i] = pgm.pixels[i];
  return out;
}

void save_pfm(const std::filesystem::path& path, const Image& map) {
  write_file(path, encode_pfm(map));
}

Image load_pfm(const std::filesystem::path& path) {
  return decode_pfm(read_file(path));
}

void save_volume_pfm(const std::filesystem::path& path, const Volume& volume) {
  Image stacked(volume.width(), volume.height() * volume.depth());
  for (int d = 0; d < volume.depth(); ++d)
    for (int y = 0; y < volume.height(); ++y)
      for (int x = 0; x < volume.width(); ++x)
        stacked.at(x, d * volume.height() + y) = volume.at(x, y, d);
  save_pfm(path, stacked);
}

}  // namespace tstereo
