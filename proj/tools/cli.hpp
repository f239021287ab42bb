#pragma once

#include <iosfwd>

namespace planlm::cli {

/// Runs the command line. Returns 0 on success, 1 on a validation error and
/// 2 when an upstream artifact is missing.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace planlm::cli
