#pragma once

#include <stdexcept>
#include <string>

namespace planlm {

/// Invalid input, configuration, or precondition violation.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required upstream artifact does not exist on disk.
class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(const std::string& path, const std::string& producer)
      : std::runtime_error("missing artifact '" + path + "'; run `planlm " +
                           producer + "` first"),
        path_(path),
        producer_(producer) {}

  const std::string& path() const { return path_; }
  const std::string& producer() const { return producer_; }

 private:
  std::string path_;
  std::string producer_;
};

/// Malformed binary or text file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace planlm
