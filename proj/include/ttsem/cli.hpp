#ifndef TTSEM_CLI_HPP
#define TTSEM_CLI_HPP

#include <iosfwd>

namespace ttsem {

/// Entry point of the `ttsem` tool. Returns 0 on success, 1 on usage or
/// configuration errors and 2 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ttsem

#endif  // TTSEM_CLI_HPP
