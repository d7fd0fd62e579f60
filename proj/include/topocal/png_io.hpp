#pragma once

// Semantic maps on disk: 8-bit indexed-palette PNG with a fixed palette, plus
// an optional JSON sidecar (same stem, ".json") carrying class names and the
// bird's-eye scale.

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topocal/error.hpp"
#include "topocal/raster.hpp"

namespace topocal::io {

struct Rgb {
  std::uint8_t r, g, b;
};

// background, road, terrain, bicycle path
inline constexpr std::array<Rgb, raster::kDefaultClassCount> kPalette = {
    Rgb{0, 0, 0}, Rgb{128, 128, 128}, Rgb{0, 128, 0}, Rgb{255, 0, 0}};

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"background", "road", "terrain", "bicycle_path"};
  return names;
}

struct MapMetadata {
  std::vector<std::string> class_names = default_class_names();
  double units_per_pixel = 1.0;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "' (mode " + mode + ")");
  return f;
}

inline void write_png_rows(const std::filesystem::path& path, int width, int height,
                           int color_type, const std::vector<png_color>& palette,
                           const std::vector<std::uint8_t>& pixels, int channels) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (!palette.empty())
    png_set_PLTE(png, info, const_cast<png_colorp>(palette.data()),
                 static_cast<int>(palette.size()));
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& png_path) {
  auto p = png_path;
  return p.replace_extension(".json");
}

inline void write_semantic_png(const std::filesystem::path& path, const SemanticMap& map) {
  if (map.class_count() > static_cast<int>(kPalette.size()))
    throw InvalidInput("fixed palette holds only " + std::to_string(kPalette.size()) + " classes");
  std::vector<png_color> palette;
  for (const auto& c : kPalette) palette.push_back({c.r, c.g, c.b});
  detail::write_png_rows(path, map.width(), map.height(), PNG_COLOR_TYPE_PALETTE, palette,
                         map.labels(), 1);
}

inline SemanticMap read_semantic_png(const std::filesystem::path& path,
                                     int class_count = raster::kDefaultClassCount) {
  detail::FilePtr file = detail::open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot create info struct");
  }
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng: failed reading '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);
  const bool indexed = color_type == PNG_COLOR_TYPE_PALETTE;
  const bool gray = color_type == PNG_COLOR_TYPE_GRAY;
  if (!(indexed || gray) || bit_depth > 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InvalidInput("'" + path.string() + "' is not an 8-bit indexed or gray PNG");
  }
  if (bit_depth < 8) png_set_packing(png);
  png_read_update_info(png, info);
  pixels.resize(static_cast<std::size_t>(width) * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  for (auto l : pixels)
    if (l >= class_count)
      throw InvalidInput("'" + path.string() + "' holds palette index " + std::to_string(l) +
                         " beyond " + std::to_string(class_count) + " classes");
  return SemanticMap(static_cast<int>(width), static_cast<int>(height), class_count,
                     std::move(pixels));
}

inline void to_json(nlohmann::json& j, const MapMetadata& m) {
  j = nlohmann::json{{"class_names", m.class_names}, {"units_per_pixel", m.units_per_pixel}};
}

inline void from_json(const nlohmann::json& j, MapMetadata& m) {
  m.class_names = j.value("class_names", default_class_names());
  m.units_per_pixel = j.value("units_per_pixel", 1.0);
  if (!(m.units_per_pixel > 0.0)) throw InvalidInput("units_per_pixel must be positive");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidSpec("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// Sidecar of a map, or defaults when none exists.
inline MapMetadata read_metadata(const std::filesystem::path& png_path) {
  const auto side = sidecar_path(png_path);
  if (!std::filesystem::exists(side)) return {};
  return read_json_file(side).get<MapMetadata>();
}

inline void write_metadata(const std::filesystem::path& png_path, const MapMetadata& meta) {
  write_json_file(sidecar_path(png_path), meta);
}

// 8-bit RGB image, row-major interleaved.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
};

inline void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  detail::write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_RGB, {}, img.pixels, 3);
}

}  // namespace topocal::io
