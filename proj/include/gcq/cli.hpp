#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace gcq::cli {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { kOk = 0, kNumerical = 1, kUsage = 2 };

// Usage errors: unknown keys, malformed values, missing files.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A tolerance check that failed; the name is reported.
struct InvariantFailure : std::runtime_error {
  explicit InvariantFailure(const std::string& name) : std::runtime_error("invariant failed: " + name) {}
};

// 17 significant digits; integral values keep a trailing ".0".
std::string format_double(double v);
// JSON text with floats printed by format_double and sorted keys.
std::string dump_json(const json& j, int indent = 2);
std::string sha256_hex(const std::string& bytes);

enum class KeyType { Int, Double, String, IntList, DoubleList };

struct Key {
  std::string name;  // config spelling; the flag is --name with '_' as '-'
  KeyType type;
  json fallback;
  std::string help;
};

// Parse a flag value of the given type ("1,2" for lists).
json parse_value(const Key& key, const std::string& text);
// defaults < file < GCQ_SEED (for "seed") < flags; unknown file keys throw UsageError.
json merge_config(const std::vector<Key>& schema, const json& file, const std::vector<std::pair<std::string, std::string>>& flags,
                  const char* env_seed);

// Entry point of the gcq binary; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gcq::cli
