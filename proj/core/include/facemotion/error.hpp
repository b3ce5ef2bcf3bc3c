#pragma once

#include <stdexcept>
#include <string>

namespace facemotion {

// Error classes; the CLI maps them to exit codes (usage 2, data 3, divergence 4).
enum class Errc {
  usage,
  io,
  corrupt_manifest,
  truncated_payload,
  dim_mismatch,
  invalid_argument,
  unsupported_format,
  divergence,
};

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) fail(code, what);
}

} // namespace facemotion
