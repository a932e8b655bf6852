#pragma once

#include <stdexcept>
#include <string>

namespace motun {

enum class Errc {
  invalid_skeleton,
  decouple_degenerate,
  prefix_too_long,
  empty_condition,
  model_contract,
  injection_site,
  merge_mismatch,
  stream_starvation,
  divergence,
  velocity_degenerate,
  acceleration_degenerate,
  contrastive_degenerate,
  foot_config,
  feature_mismatch,
  metric_error,
  insufficient_pool,
  extractor_training,
  bad_config,
  io_error,
};

/// Library-wide exception carrying one of the error codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace motun
