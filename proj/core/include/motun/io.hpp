#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "motun/mat.hpp"
#include "motun/motion.hpp"

namespace motun::io {

/// Ordered collection of named float32 tensors; the order is part of the
/// checkpoint layout, so lookups preserve insertion order.
struct NamedTensors {
  std::vector<std::pair<std::string, ParamTensor>> items;

  ParamTensor& add(const std::string& name, ParamTensor t);
  const ParamTensor* find(const std::string& name) const;
  ParamTensor* find(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  ParamTensor& at(const std::string& name);
  bool has(const std::string& name) const { return find(name) != nullptr; }
  size_t total_values() const;
};

/// 64-bit FNV-1a over the float payload, used by frozen-parameter assertions.
uint64_t content_hash(const NamedTensors& t);

// Motion file: u32 T, F, J, then T mask bytes, then T*F little-endian
// float32 values in row-major order.
void save_motion(const std::filesystem::path& path, const motion::MotionSequence& m);
motion::MotionSequence load_motion(const std::filesystem::path& path);

// Corpus manifest: one JSON record per line with fields
// {id, caption, level, split, motion_file}; motion files live next to it.
void save_corpus(const std::filesystem::path& manifest,
                 const std::vector<motion::CorpusEntry>& corpus);
std::vector<motion::CorpusEntry> load_corpus(const std::filesystem::path& manifest);

/// Checkpoint container: magic, u64 header length, JSON header with
/// {version, kind, sites[{name,rows,cols,dtype,offset}], extra}, then one
/// contiguous little-endian float32 payload. Round-trips bit-exactly.
struct Checkpoint {
  int version = 1;
  std::string kind;  // "model" or "task_vector"
  std::string extra;  // module-specific JSON payload (config, vocab, ...)
  NamedTensors tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Fails with a message naming the file when it is absent.
void require_file(const std::filesystem::path& path, const std::string& what);

}  // namespace motun::io
