#include "planlm/autodiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "planlm/errors.hpp"
#include "planlm/matrix_io.hpp"

namespace planlm::ad {
namespace {

constexpr char kMagic[4] = {'P', 'L', 'M', 'C'};

void put_section(std::string& out, const std::string& name, const Shape& shape,
                 const float* values, std::size_t count) {
  le::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  le::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) le::put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < count; ++i) le::put_f32(out, values[i]);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }
  std::uint32_t u32() { return le::get_u32(take(4)); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return true;
  }
  return false;
}

const Section& Checkpoint::get(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return s;
  }
  throw FormatError("checkpoint has no section '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  le::put_u32(out, Checkpoint::kVersion);
  le::put_u32(out, static_cast<std::uint32_t>(ckpt.sections.size() + 1));

  std::string meta = ckpt.meta_json;
  meta.resize((meta.size() + 3) / 4 * 4, '\0');
  std::vector<float> packed(meta.size() / 4);
  std::memcpy(packed.data(), meta.data(), meta.size());
  put_section(out, Checkpoint::kMetaSection, {packed.size()}, packed.data(), packed.size());

  for (const auto& s : ckpt.sections) {
    if (numel(s.shape) != s.values.size()) {
      throw ValidationError("section '" + s.name + "' shape " + shape_str(s.shape) +
                            " does not match its payload");
    }
    put_section(out, s.name, s.shape, s.values.data(), s.values.size());
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw FormatError("not a PLMC checkpoint");
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported PLMC version " + std::to_string(version));
  }
  const auto count = r.u32();
  Checkpoint ckpt;
  ckpt.meta_json.clear();
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s;
    const auto name_len = r.u32();
    const auto* name = r.take(name_len);
    s.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) s.shape.push_back(r.u32());
    const std::size_t n = numel(s.shape);
    const auto* payload = r.take(n * 4);
    if (i == 0 && s.name == Checkpoint::kMetaSection) {
      std::string meta(reinterpret_cast<const char*>(payload), n * 4);
      while (!meta.empty() && meta.back() == '\0') meta.pop_back();
      ckpt.meta_json = std::move(meta);
      continue;
    }
    s.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) s.values[k] = le::get_f32(payload + 4 * k);
    ckpt.sections.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("trailing bytes after PLMC sections");
  if (ckpt.meta_json.empty()) ckpt.meta_json = "{}";
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& producer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string(), producer);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace planlm::ad
