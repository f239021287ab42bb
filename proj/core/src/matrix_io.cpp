#include "planlm/matrix_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "planlm/errors.hpp"

namespace planlm {
namespace le {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace le

namespace {
constexpr char kMagic[4] = {'P', 'L', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_plmb(const std::filesystem::path& path, const Matrix& m) {
  std::string buf;
  buf.reserve(16 + m.values.size() * 4);
  buf.append(kMagic, 4);
  le::put_u32(buf, kVersion);
  le::put_u32(buf, static_cast<std::uint32_t>(m.rows));
  le::put_u32(buf, static_cast<std::uint32_t>(m.cols));
  for (float v : m.values) le::put_f32(buf, v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Matrix read_plmb(const std::filesystem::path& path, const std::string& producer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string(), producer);
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a PLMB matrix");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (le::get_u32(p + 4) != kVersion) throw FormatError(path.string() + ": unsupported PLMB version");
  Matrix m(le::get_u32(p + 8), le::get_u32(p + 12));
  if (buf.size() != 16 + m.values.size() * 4) {
    throw FormatError(path.string() + ": truncated PLMB payload");
  }
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = le::get_f32(p + 16 + 4 * i);
  return m;
}

void write_row_index(const std::filesystem::path& path, std::span<const RowKey> keys) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [id, idx] : keys) out << id << '\t' << idx << '\n';
}

std::vector<RowKey> read_row_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string(), "embed");
  std::vector<RowKey> keys;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": malformed index line");
    keys.emplace_back(line.substr(0, tab), std::stoul(line.substr(tab + 1)));
  }
  return keys;
}

}  // namespace planlm
