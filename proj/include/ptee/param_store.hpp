#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ptee/rng.hpp"
#include "ptee/tensor.hpp"

namespace ptee {

// Named parameter registry. An entry is either a trainable parameter or a
// buffer (state such as batchnorm running statistics, which never receives
// gradients). Frozen entries keep their values but are excluded from
// gradient recording and optimizer updates.
class ParameterStore {
 public:
  struct Entry {
    nn::Tensor tensor;
    bool frozen = false;
    bool buffer = false;
  };

  nn::Tensor& create(const std::string& name, nn::Shape shape, bool buffer = false);
  nn::Tensor& at(const std::string& name);
  const nn::Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  bool is_frozen(const std::string& name) const;
  bool is_buffer(const std::string& name) const;

  // Marks every entry whose name starts with `prefix` as frozen and stops it
  // from requiring gradients. Idempotent.
  void freeze_prefix(const std::string& prefix);
  bool all_frozen(const std::string& prefix) const;

  void zero_grads();

  // Deterministic iteration (std::map keeps names sorted).
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  std::size_t size() const { return entries_.size(); }
  std::int64_t trainable_count() const;  // scalar count over non-frozen, non-buffer entries

  // Deep copy: fresh tensors with identical values and flags.
  ParameterStore clone() const;

  // FNV-1a over names, flags and raw value bytes; used to assert that frozen
  // subtrees never change.
  std::uint64_t content_hash(const std::string& prefix = "") const;

 private:
  std::map<std::string, Entry> entries_;
};

// He (fan-in) normal initialization for a weight tensor.
void he_init(nn::Tensor& w, std::int64_t fan_in, Rng& rng);

}  // namespace ptee
