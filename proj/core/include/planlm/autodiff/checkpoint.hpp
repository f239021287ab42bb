#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "planlm/autodiff/tensor.hpp"

namespace planlm::ad {

struct Section {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// "PLMC" container. The JSON metadata travels as a leading rank-1 section
/// named `meta.json` whose payload holds the UTF-8 bytes zero-padded to a
/// multiple of four.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr const char* kMetaSection = "meta.json";

  std::string meta_json = "{}";
  std::vector<Section> sections;

  bool contains(const std::string& name) const;
  /// Throws FormatError when absent.
  const Section& get(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// `producer` names the subcommand that writes this file, for the
/// missing-artifact message.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& producer);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace planlm::ad
