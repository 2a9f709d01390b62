#pragma once

#include <map>
#include <ostream>
#include <stdexcept>
#include <string>

namespace equicaps {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;   // a verification did not come out as expected
inline constexpr int kPrecondition = 2;  // bad arguments, unreadable or unwritable paths
inline constexpr int kNonFinite = 3;     // training produced NaN or infinity
}  // namespace exit_code

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// "key = value" lines; '#' starts a comment. Keys use the long flag names with
// '-' or '_'. Throws ConfigError on malformed lines or duplicate keys.
std::map<std::string, std::string> parse_config_text(const std::string& text);

// Subcommands verify, train, eval-pose and demo-route.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace equicaps
