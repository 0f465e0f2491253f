#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tstereo/image.h"

namespace tstereo {

// Malformed or truncated file. offset() is the byte position where parsing
// stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<std::uint16_t> pixels;  // row-major, top row first
};

// Binary P5. maxval > 255 uses two big-endian bytes per sample.
std::string encode_pgm(const PgmImage& img);
PgmImage decode_pgm(std::string_view bytes);

// Binary "Pf" (grayscale). Negative scale = little-endian samples; rows are
// stored bottom-to-top as the format requires.
std::string encode_pfm(const Image& map);
Image decode_pfm(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Images in [0, 1] are stored as 16-bit samples k / 65535.
void save_image_pgm(const std::filesystem::path& path, const Image& image);
Image load_image_pgm(const std::filesystem::path& path);

// Material masks as 8-bit PGM with codes {0, 64, 128, 255}.
void save_material_pgm(const std::filesystem::path& path, const Mask& material);
Mask load_material_pgm(const std::filesystem::path& path);

// Integer label maps (object ids) as 16-bit PGM.
void save_labels_pgm(const std::filesystem::path& path, const Grid<int>& labels);
Grid<int> load_labels_pgm(const std::filesystem::path& path);

void save_pfm(const std::filesystem::path& path, const Image& map);
Image load_pfm(const std::filesystem::path& path);

// D slices of an H x W x D volume stacked vertically into one (H*D) x W map,
// slice 0 on top.
void save_volume_pfm(const std::filesystem::path& path, const Volume& volume);

}  // namespace tstereo
