#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace planlm {

/// Dense row-major f32 matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

  std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  float& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  float at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// "PLMB" container: magic, u32 version (1), u32 rows, u32 dim, then
/// little-endian f32 rows.
void write_plmb(const std::filesystem::path& path, const Matrix& m);
Matrix read_plmb(const std::filesystem::path& path, const std::string& producer = "embed");

/// Row index sidecar: one `article_id<TAB>sentence_index` line per row.
using RowKey = std::pair<std::string, std::size_t>;
void write_row_index(const std::filesystem::path& path, std::span<const RowKey> keys);
std::vector<RowKey> read_row_index(const std::filesystem::path& path);

namespace le {
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(const unsigned char* p);
float get_f32(const unsigned char* p);
}  // namespace le

}  // namespace planlm
