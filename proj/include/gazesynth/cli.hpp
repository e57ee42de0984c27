#pragma once

#include <iosfwd>

namespace gazesynth {

/// Runs the gazesynth command line. Returns 0 on success, 1 on a domain
/// error and 2 on a usage error (synopsis printed to err).
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gazesynth
